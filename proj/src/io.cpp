#include "highsync/io.hpp"

#include "highsync/errors.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <memory>
#include <sstream>

namespace highsync::io {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f != nullptr) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

std::string frame_name(int t, const char* ext) {
    std::ostringstream os;
    os << std::setw(4) << std::setfill('0') << t << ext;
    return os.str();
}

template <typename T>
void put(std::vector<std::uint8_t>& out, T value) {
    std::uint8_t bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    out.insert(out.end(), bytes, bytes + sizeof(T));
}

template <typename T>
T get(const std::vector<std::uint8_t>& in, std::size_t at) {
    if (at + sizeof(T) > in.size()) throw DecodeError("read_audio: truncated file");
    T value;
    std::memcpy(&value, in.data() + at, sizeof(T));
    return value;
}

Json rgb_json(const synthgen::Rgb& c) { return Json::array({c[0], c[1], c[2]}); }
synthgen::Rgb rgb_from(const Json& j) { return {j.at(0).get<float>(), j.at(1).get<float>(), j.at(2).get<float>()}; }

} // namespace

void write_png(const fs::path& path, std::span<const float> pixels, int height, int width, int channels) {
    FilePtr file(std::fopen(path.c_str(), "wb"));
    if (!file) throw std::runtime_error("write_png: cannot open " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("write_png: libpng error for " + path.string());
    }
    png_init_io(png, file.get());
    png_set_IHDR(png, info, width, height, 16, channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<std::uint8_t> row(static_cast<std::size_t>(width) * channels * 2);
    for (int y = 0; y < height; ++y) {
        for (int i = 0; i < width * channels; ++i) {
            const float v = std::clamp(pixels[static_cast<std::size_t>(y) * width * channels + i], 0.0f, 1.0f);
            const auto q = static_cast<std::uint16_t>(std::lround(v * 65535.0));
            row[2 * i] = static_cast<std::uint8_t>(q >> 8);  // PNG is big endian
            row[2 * i + 1] = static_cast<std::uint8_t>(q & 0xff);
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

std::vector<float> read_png(const fs::path& path, int& height, int& width, int& channels) {
    FilePtr file(std::fopen(path.c_str(), "rb"));
    if (!file) throw DecodeError("read_png: cannot open " + path.string());
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DecodeError("read_png: libpng error for " + path.string());
    }
    png_init_io(png, file.get());
    png_read_info(png, info);
    width = static_cast<int>(png_get_image_width(png, info));
    height = static_cast<int>(png_get_image_height(png, info));
    const int depth = png_get_bit_depth(png, info);
    const int type = png_get_color_type(png, info);
    if (depth != 16 || (type != PNG_COLOR_TYPE_RGB && type != PNG_COLOR_TYPE_GRAY)) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DecodeError("read_png: expected 16-bit RGB or gray: " + path.string());
    }
    channels = type == PNG_COLOR_TYPE_RGB ? 3 : 1;
    std::vector<float> pixels(static_cast<std::size_t>(height) * width * channels);
    std::vector<std::uint8_t> row(static_cast<std::size_t>(width) * channels * 2);
    for (int y = 0; y < height; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int i = 0; i < width * channels; ++i) {
            const auto q = static_cast<std::uint16_t>((row[2 * i] << 8) | row[2 * i + 1]);
            pixels[static_cast<std::size_t>(y) * width * channels + i] = static_cast<float>(q / 65535.0);
        }
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return pixels;
}

void write_audio(const fs::path& path, const synthgen::SyntheticAudio& audio) {
    std::vector<std::uint8_t> out{'H', 'S', 'A', 'U'};
    put<std::uint32_t>(out, 1);
    put<double>(out, audio.sample_rate);
    put<std::uint64_t>(out, audio.samples.size());
    for (float s : audio.samples) put<float>(out, s);
    write_file_atomic(path, out);
}

synthgen::SyntheticAudio read_audio(const fs::path& path) {
    const auto bytes = read_file(path);
    if (bytes.size() < 24 || std::memcmp(bytes.data(), "HSAU", 4) != 0) {
        throw DecodeError("read_audio: not an audio file: " + path.string());
    }
    if (get<std::uint32_t>(bytes, 4) != 1) throw DecodeError("read_audio: unsupported version");
    synthgen::SyntheticAudio audio;
    audio.sample_rate = get<double>(bytes, 8);
    const auto n = get<std::uint64_t>(bytes, 16);
    if (bytes.size() != 24 + n * sizeof(float)) throw DecodeError("read_audio: length mismatch");
    audio.samples.resize(n);
    std::memcpy(audio.samples.data(), bytes.data() + 24, n * sizeof(float));
    audio.duration = static_cast<double>(n) / audio.sample_rate;
    return audio;
}

Json face_to_json(const synthgen::FaceParams& f) {
    return Json{{"center_x", f.center_x},
                {"center_y", f.center_y},
                {"head_radius", f.head_radius},
                {"eye_offset", f.eye_offset},
                {"eye_radius", f.eye_radius},
                {"eye_spacing", f.eye_spacing},
                {"eyebrow_gap", f.eyebrow_gap},
                {"mouth_center_y", f.mouth_center_y},
                {"mouth_width", f.mouth_width},
                {"lip_thickness", f.lip_thickness},
                {"max_mouth_height", f.max_mouth_height},
                {"eyebrow_coupling", f.eyebrow_coupling},
                {"background", rgb_json(f.background)},
                {"skin", rgb_json(f.skin)},
                {"eye", rgb_json(f.eye)},
                {"eyebrow", rgb_json(f.eyebrow)},
                {"lip", rgb_json(f.lip)},
                {"mouth_interior", rgb_json(f.mouth_interior)}};
}

synthgen::FaceParams face_from_json(const Json& j) {
    synthgen::FaceParams f;
    f.center_x = j.at("center_x");
    f.center_y = j.at("center_y");
    f.head_radius = j.at("head_radius");
    f.eye_offset = j.at("eye_offset");
    f.eye_radius = j.at("eye_radius");
    f.eye_spacing = j.at("eye_spacing");
    f.eyebrow_gap = j.at("eyebrow_gap");
    f.mouth_center_y = j.at("mouth_center_y");
    f.mouth_width = j.at("mouth_width");
    f.lip_thickness = j.at("lip_thickness");
    f.max_mouth_height = j.at("max_mouth_height");
    f.eyebrow_coupling = j.at("eyebrow_coupling");
    f.background = rgb_from(j.at("background"));
    f.skin = rgb_from(j.at("skin"));
    f.eye = rgb_from(j.at("eye"));
    f.eyebrow = rgb_from(j.at("eyebrow"));
    f.lip = rgb_from(j.at("lip"));
    f.mouth_interior = rgb_from(j.at("mouth_interior"));
    return f;
}

Json box_to_json(const preprocess::BoundingBox& b) { return Json::array({b.top, b.bottom, b.left, b.right}); }

preprocess::BoundingBox box_from_json(const Json& j) {
    return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>(), j.at(3).get<double>()};
}

void save_clip(const fs::path& dir, const synthgen::SyntheticClip& clip, const Json& extra) {
    fs::create_directories(dir / "frames");
    for (int t = 0; t < clip.frames.count; ++t) {
        write_png(dir / "frames" / frame_name(t, ".png"), clip.frames.frame(t), clip.frames.height, clip.frames.width,
                  clip.frames.channels);
    }
    write_audio(dir / "audio.f32", clip.audio);
    Json meta{{"fps", clip.fps},
              {"frames", clip.frames.count},
              {"height", clip.frames.height},
              {"width", clip.frames.width},
              {"channels", clip.frames.channels},
              {"aperture", clip.aperture},
              {"jaw_bottom", clip.jaw_bottom},
              {"face", face_to_json(clip.face)},
              {"audio", "audio.f32"}};
    for (const auto& [k, v] : extra.items()) meta[k] = v;
    write_json(dir / "meta.json", meta);
}

synthgen::SyntheticClip load_clip(const fs::path& dir) {
    const Json meta = read_json(dir / "meta.json");
    synthgen::SyntheticClip clip;
    clip.fps = meta.at("fps");
    clip.aperture = meta.at("aperture").get<std::vector<double>>();
    clip.jaw_bottom = meta.at("jaw_bottom").get<std::vector<double>>();
    clip.face = face_from_json(meta.at("face"));
    clip.audio = read_audio(dir / meta.at("audio").get<std::string>());
    const int frames = meta.at("frames");
    clip.frames = Frames(frames, meta.at("height"), meta.at("width"), meta.at("channels"));
    for (int t = 0; t < frames; ++t) {
        int h = 0, w = 0, c = 0;
        auto px = read_png(dir / "frames" / frame_name(t, ".png"), h, w, c);
        if (h != clip.frames.height || w != clip.frames.width || c != clip.frames.channels) {
            throw DecodeError("load_clip: frame shape mismatch in " + dir.string());
        }
        std::copy(px.begin(), px.end(), clip.frames.frame(t).begin());
    }
    return clip;
}

void save_prepared(const fs::path& dir, const PreparedClip& p) {
    const auto& c = p.clip;
    fs::create_directories(dir / "frames");
    fs::create_directories(dir / "masks");
    for (int t = 0; t < c.frames.count; ++t) {
        write_png(dir / "frames" / frame_name(t, ".png"), c.frames.frame(t), c.frames.height, c.frames.width,
                  c.frames.channels);
    }
    // Masks are serialised from the ideal binary mask with the configured codec; the stored
    // bytes, not the in-memory copy, are what the loader decodes.
    const Plane ideal = preprocess::build_lip_mask(c.frames.height, c.mask_options.mask_fraction);
    const auto bytes = preprocess::serialize_mask(ideal, c.mask_options.codec, c.mask_options.lossy_quality);
    for (int t = 0; t < c.frames.count; ++t) {
        write_file_atomic(dir / "masks" / frame_name(t, ".hsm"), bytes);
    }
    write_audio(dir / "audio.f32", p.audio);
    Json boxes = Json::array();
    for (const auto& b : c.crop_boxes) boxes.push_back(box_to_json(b));
    write_json(dir / "meta.json", Json{{"id", p.id},
                                       {"fps", p.fps},
                                       {"frames", c.frames.count},
                                       {"out_size", c.frames.height},
                                       {"channels", c.frames.channels},
                                       {"policy", preprocess::to_string(c.policy)},
                                       {"mask_codec", preprocess::to_string(c.mask_options.codec)},
                                       {"mask_quality", c.mask_options.lossy_quality},
                                       {"mask_fraction", c.mask_options.mask_fraction},
                                       {"crop_boxes", boxes},
                                       {"eye_row", c.eye_row},
                                       {"aperture", p.aperture},
                                       {"face", face_to_json(p.face)},
                                       {"audio", "audio.f32"}});
}

PreparedClip load_prepared(const fs::path& dir) {
    const Json meta = read_json(dir / "meta.json");
    PreparedClip p;
    p.id = meta.at("id");
    p.fps = meta.at("fps");
    p.aperture = meta.at("aperture").get<std::vector<double>>();
    p.face = face_from_json(meta.at("face"));
    p.audio = read_audio(dir / meta.at("audio").get<std::string>());
    auto& c = p.clip;
    c.policy = preprocess::parse_crop_policy(meta.at("policy").get<std::string>());
    c.mask_options.codec = preprocess::parse_mask_codec(meta.at("mask_codec").get<std::string>());
    c.mask_options.lossy_quality = meta.at("mask_quality");
    c.mask_options.mask_fraction = meta.at("mask_fraction");
    c.eye_row = meta.at("eye_row").get<std::vector<double>>();
    for (const auto& b : meta.at("crop_boxes")) c.crop_boxes.push_back(box_from_json(b));
    const int frames = meta.at("frames");
    const int size = meta.at("out_size");
    const int channels = meta.at("channels");
    c.frames = Frames(frames, size, size, channels);
    c.masked_frames = Frames(frames, size, size, channels);
    c.masks.reserve(frames);
    for (int t = 0; t < frames; ++t) {
        int h = 0, w = 0, ch = 0;
        auto px = read_png(dir / "frames" / frame_name(t, ".png"), h, w, ch);
        if (h != size || w != size || ch != channels) throw DecodeError("load_prepared: frame shape mismatch");
        std::copy(px.begin(), px.end(), c.frames.frame(t).begin());
        const auto bytes = read_file(dir / "masks" / frame_name(t, ".hsm"));
        if (preprocess::peek_mask_codec(bytes) != c.mask_options.codec) {
            throw DecodeError("load_prepared: mask codec disagrees with metadata in " + dir.string());
        }
        c.masks.push_back(preprocess::deserialize_mask(bytes));
        preprocess::apply_mask(c.frames.frame(t), c.masks.back(), channels, c.masked_frames.frame(t));
    }
    return p;
}

std::vector<fs::path> list_clips(const fs::path& root) {
    std::vector<fs::path> out;
    const auto clips = root / "clips";
    if (!fs::exists(clips)) return out;
    for (const auto& entry : fs::directory_iterator(clips)) {
        if (entry.is_directory() && fs::exists(entry.path() / "meta.json")) out.push_back(entry.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

void write_json(const fs::path& path, const Json& j) {
    const std::string text = j.dump(2) + "\n";
    write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

Json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw PreconditionError("missing file: " + path.string());
    try {
        return Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw DecodeError("malformed JSON in " + path.string() + ": " + e.what());
    }
}

void write_file_atomic(const fs::path& path, std::span<const std::uint8_t> bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw std::runtime_error("short write to " + tmp.string());
    }
    fs::rename(tmp, path);
}

std::vector<std::uint8_t> read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw PreconditionError("missing file: " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace highsync::io
