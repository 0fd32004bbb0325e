#include "highsync/stream_plan.hpp"

#include "highsync/errors.hpp"

#include <string>

namespace highsync::stream {

std::vector<GroupRange> plan_groups(int total_frames, ShortVideoPolicy policy) {
    if (total_frames < kGroupFrames) {
        if (policy == ShortVideoPolicy::pad && total_frames > 0) {
            return {{0, kGroupFrames}};
        }
        throw InvalidArgument("plan_groups: need at least 12 frames, got " + std::to_string(total_frames));
    }
    std::vector<GroupRange> groups{{0, kGroupFrames}};
    while (groups.back().end < total_frames) {
        int start = groups.back().start + (kGroupFrames - kOverlapFrames);
        if (start + kGroupFrames > total_frames) {
            start = total_frames - kGroupFrames;
        }
        groups.push_back({start, start + kGroupFrames});
    }
    return groups;
}

} // namespace highsync::stream
