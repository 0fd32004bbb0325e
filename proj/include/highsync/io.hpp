#pragma once

#include "highsync/frames.hpp"
#include "highsync/preprocess.hpp"
#include "highsync/synthgen.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace highsync::io {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

// 16-bit PNG, 1 or 3 channels. Values are clamped to [0, 1].
void write_png(const fs::path& path, std::span<const float> pixels, int height, int width, int channels);
// Returns H x W x C floats; channels reported through the out-parameters.
std::vector<float> read_png(const fs::path& path, int& height, int& width, int& channels);

// Raw audio file: "HSAU", u32 version, f64 sample_rate, u64 length, float32 samples (little endian).
void write_audio(const fs::path& path, const synthgen::SyntheticAudio& audio);
synthgen::SyntheticAudio read_audio(const fs::path& path);

Json face_to_json(const synthgen::FaceParams& face);
synthgen::FaceParams face_from_json(const Json& j);

Json box_to_json(const preprocess::BoundingBox& box);
preprocess::BoundingBox box_from_json(const Json& j);

// Clip directory: meta.json, audio.f32, frames/NNNN.png.
void save_clip(const fs::path& dir, const synthgen::SyntheticClip& clip, const Json& extra = Json::object());
synthgen::SyntheticClip load_clip(const fs::path& dir);

// Preprocessed clip directory mirrors the clip layout and adds masks/NNNN.hsm. The audio,
// aperture and face parameters of the source clip are carried along for training/evaluation.
struct PreparedClip {
    preprocess::PreprocessedClip clip;
    synthgen::SyntheticAudio audio;
    std::vector<double> aperture;
    synthgen::FaceParams face;
    double fps = synthgen::kDefaultFps;
    std::string id;
};

void save_prepared(const fs::path& dir, const PreparedClip& prepared);
PreparedClip load_prepared(const fs::path& dir);

// Sorted clip directories under root/clips.
std::vector<fs::path> list_clips(const fs::path& root);

void write_json(const fs::path& path, const Json& j);
Json read_json(const fs::path& path);

// Writes to a sibling temporary file and renames it over the target.
void write_file_atomic(const fs::path& path, std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> read_file(const fs::path& path);

} // namespace highsync::io
