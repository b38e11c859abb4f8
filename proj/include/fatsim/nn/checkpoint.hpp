#pragma once

// Checkpoint layout, all integers little-endian:
//   bytes 0..7    magic "FATCKPT1"
//   bytes 8..11   u32 architecture kind (0 conv-small, 1 mlp)
//   bytes 12..19  u64 parameter count
//   bytes 20..27  u64 round index
//   bytes 28..    f32 parameters, flat canonical order

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "fatsim/error.hpp"
#include "fatsim/nn/architecture.hpp"

namespace fatsim::nn {

inline constexpr std::array<char, 8> kCheckpointMagic{'F', 'A', 'T', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::size_t kCheckpointHeaderBytes = 28;

struct Checkpoint {
    ArchKind kind = ArchKind::conv_small;
    std::uint64_t round = 0;
    std::vector<float> params;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline std::uint64_t get_le(const unsigned char* p, int bytes) {
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ckpt) {
    std::string out(kCheckpointMagic.begin(), kCheckpointMagic.end());
    detail::put_u32(out, static_cast<std::uint32_t>(ckpt.kind));
    detail::put_u64(out, ckpt.params.size());
    detail::put_u64(out, ckpt.round);
    for (float f : ckpt.params) detail::put_u32(out, std::bit_cast<std::uint32_t>(f));
    return out;
}

inline Checkpoint decode_checkpoint(const std::string& bytes) {
    if (bytes.size() < kCheckpointHeaderBytes) throw Error("checkpoint: truncated header");
    if (std::memcmp(bytes.data(), kCheckpointMagic.data(), kCheckpointMagic.size()) != 0)
        throw Error("checkpoint: bad magic (expected FATCKPT1)");
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    Checkpoint ckpt;
    const auto kind = detail::get_le(p + 8, 4);
    if (kind > 1) throw Error("checkpoint: unknown architecture kind " + std::to_string(kind));
    ckpt.kind = static_cast<ArchKind>(kind);
    const auto count = detail::get_le(p + 12, 8);
    ckpt.round = detail::get_le(p + 20, 8);
    if (bytes.size() != kCheckpointHeaderBytes + 4 * count)
        throw Error("checkpoint: expected " + std::to_string(count) + " parameters, file size " +
                    std::to_string(bytes.size()) + " disagrees");
    ckpt.params.resize(count);
    for (std::size_t i = 0; i < count; ++i)
        ckpt.params[i] = std::bit_cast<float>(static_cast<std::uint32_t>(detail::get_le(p + kCheckpointHeaderBytes + 4 * i, 4)));
    return ckpt;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("checkpoint: cannot open " + path.string() + " for writing");
    const auto bytes = encode_checkpoint(ckpt);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw Error("checkpoint: write failed for " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("checkpoint: cannot open " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

/// Throws unless the checkpoint was written for an architecture of this kind and size.
inline void check_compatible(const Checkpoint& ckpt, const Architecture& arch) {
    if (ckpt.kind != arch.kind || ckpt.params.size() != arch.param_count())
        throw ConfigError("checkpoint: architecture mismatch (checkpoint " + to_string(ckpt.kind) + " with " +
                          std::to_string(ckpt.params.size()) + " parameters, config " + to_string(arch.kind) + " with " +
                          std::to_string(arch.param_count()) + ")");
}

}  // namespace fatsim::nn
