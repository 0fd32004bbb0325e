#pragma once

#include <vector>

namespace highsync::stream {

inline constexpr int kGroupFrames = 12;
inline constexpr int kOverlapFrames = 2;

struct GroupRange {
    int start = 0;
    int end = 0;  // exclusive
    int size() const { return end - start; }
};

enum class ShortVideoPolicy { reject, pad };

// Groups of 12 with stride 10. When the stride would overrun, the final group is pulled back to
// end exactly at total_frames, overlapping its predecessor by more than two frames.
// Under ShortVideoPolicy::pad a video shorter than 12 frames yields a single [0, 12) group and
// the caller repeats the last frame to fill it.
std::vector<GroupRange> plan_groups(int total_frames, ShortVideoPolicy policy = ShortVideoPolicy::reject);

} // namespace highsync::stream
