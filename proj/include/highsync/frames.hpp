#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace highsync {

// Dense T x H x W x C float video, row-major, values nominally in [0, 1].
struct Frames {
    int count = 0;
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<float> data;

    Frames() = default;
    Frames(int t, int h, int w, int c)
        : count(t), height(h), width(w), channels(c),
          data(static_cast<std::size_t>(t) * h * w * c, 0.0f) {}

    std::size_t frame_size() const { return static_cast<std::size_t>(height) * width * channels; }

    std::size_t index(int t, int y, int x, int c) const {
        return ((static_cast<std::size_t>(t) * height + y) * width + x) * channels + c;
    }

    float& at(int t, int y, int x, int c) { return data[index(t, y, x, c)]; }
    float at(int t, int y, int x, int c) const { return data[index(t, y, x, c)]; }

    std::span<float> frame(int t) { return {data.data() + t * frame_size(), frame_size()}; }
    std::span<const float> frame(int t) const { return {data.data() + t * frame_size(), frame_size()}; }

    bool same_shape(const Frames& o) const {
        return count == o.count && height == o.height && width == o.width && channels == o.channels;
    }
};

// Single-channel H x W map (masks, coverage maps).
struct Plane {
    int height = 0;
    int width = 0;
    std::vector<float> data;

    Plane() = default;
    Plane(int h, int w, float fill = 0.0f)
        : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

    float& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
    float at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }

    bool operator==(const Plane&) const = default;
};

} // namespace highsync
