#pragma once

#include <string>
#include <vector>

#include "fatsim/error.hpp"

namespace fatsim::fl {

/// Piecewise-constant K/N ratio over communication rounds.
struct MixSegment {
    int start_round = 0;
    double ratio = 0.5;
    friend bool operator==(const MixSegment&, const MixSegment&) = default;
};

struct MixSchedule {
    std::vector<MixSegment> segments{{0, 0.5}};

    void validate() const {
        if (segments.empty()) throw ConfigError("mix_schedule: needs at least one segment");
        if (segments.front().start_round != 0) throw ConfigError("mix_schedule: first segment must start at round 0");
        for (std::size_t i = 0; i < segments.size(); ++i) {
            const double r = segments[i].ratio;
            if (!(r >= 0.0 && r <= 1.0))
                throw ConfigError("mix_schedule: ratio " + std::to_string(r) + " outside [0,1]");
            if (i > 0 && segments[i].start_round <= segments[i - 1].start_round)
                throw ConfigError("mix_schedule: start rounds must be strictly increasing");
        }
    }
};

/// Ratio of the last segment starting at or before `round`.
inline double schedule_ratio(const MixSchedule& sched, int round) {
    if (round < 0) throw ConfigError("schedule_ratio: round must be >= 0");
    double ratio = sched.segments.front().ratio;
    for (const auto& s : sched.segments) {
        if (s.start_round > round) break;
        ratio = s.ratio;
    }
    return ratio;
}

}  // namespace fatsim::fl
