#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "fatsim/nn/checkpoint.hpp"
#include "fatsim/nn/model.hpp"

using namespace fatsim;
using namespace fatsim::nn;

TEST(Checkpoint, RoundTripBitExact) {
    const auto a = conv_small();
    Checkpoint c{ArchKind::conv_small, 17, build_model(a, 4).flatten()};
    const auto bytes = encode_checkpoint(c);
    EXPECT_EQ(bytes.size(), kCheckpointHeaderBytes + 4 * c.params.size());
    EXPECT_EQ(bytes.substr(0, 8), "FATCKPT1");
    const auto d = decode_checkpoint(bytes);
    EXPECT_EQ(d.kind, c.kind);
    EXPECT_EQ(d.round, 17u);
    EXPECT_EQ(d.params, c.params);
}

TEST(Checkpoint, LittleEndianLayout) {
    Checkpoint c{ArchKind::mlp, 2, {1.0f}};
    const auto b = encode_checkpoint(c);
    auto byte = [&](std::size_t i) { return static_cast<unsigned char>(b[i]); };
    EXPECT_EQ(byte(8), 1);   // kind
    EXPECT_EQ(byte(12), 1);  // count
    EXPECT_EQ(byte(20), 2);  // round
    // 1.0f = 0x3f800000
    EXPECT_EQ(byte(28), 0x00);
    EXPECT_EQ(byte(30), 0x80);
    EXPECT_EQ(byte(31), 0x3f);
}

TEST(Checkpoint, RejectsCorruptInput) {
    Checkpoint c{ArchKind::conv_small, 0, {1.0f, 2.0f}};
    auto bytes = encode_checkpoint(c);
    EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 1)), Error);
    EXPECT_THROW(decode_checkpoint(bytes.substr(0, 10)), Error);
    bytes[0] = 'X';
    EXPECT_THROW(decode_checkpoint(bytes), Error);
}

TEST(Checkpoint, FileRoundTripAndCompatibility) {
    const auto dir = std::filesystem::temp_directory_path() / "fatsim_ckpt_test";
    std::filesystem::create_directories(dir);
    const auto a = mlp({1, 4, 4}, {5}, 3);
    Checkpoint c{ArchKind::mlp, 3, build_model(a, 1).flatten()};
    save_checkpoint(dir / "x.ckpt", c);
    const auto d = load_checkpoint(dir / "x.ckpt");
    EXPECT_EQ(d.params, c.params);
    EXPECT_NO_THROW(check_compatible(d, a));
    EXPECT_THROW(check_compatible(d, conv_small()), ConfigError);
    EXPECT_THROW(check_compatible(d, mlp({1, 4, 4}, {6}, 3)), ConfigError);
    EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), Error);
    std::filesystem::remove_all(dir);
}
