#include <doctest.h>

#include "highsync/errors.hpp"
#include "highsync/hash.hpp"
#include "highsync/io.hpp"

#include <cmath>
#include <filesystem>

#include <unistd.h>

using namespace highsync;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("highsync_io_" + std::to_string(::getpid()) + "_" + std::to_string(counter()++));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    static int& counter() {
        static int c = 0;
        return c;
    }
};

synthgen::SyntheticClip small_clip() {
    auto face = synthgen::random_face(12);
    face.eyebrow_coupling = 0.7;
    const auto audio = synthgen::synth_audio(synthgen::AudioKind::envelope_random, 0.6, 16000, 12);
    return synthgen::render_clip(audio, face, 25.0, 64, 64);
}

} // namespace

TEST_CASE("sha256 known answers") {
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    Sha256 h;
    h.update(std::string_view("a"));
    h.update(std::string_view("bc"));
    CHECK(h.hex() == sha256_hex("abc"));
}

TEST_CASE("png round trip is within 16-bit quantisation") {
    TempDir dir;
    const auto clip = small_clip();
    io::write_png(dir.path / "f.png", clip.frames.frame(3), 64, 64, 3);
    int h = 0, w = 0, c = 0;
    const auto back = io::read_png(dir.path / "f.png", h, w, c);
    REQUIRE((h == 64 && w == 64 && c == 3));
    for (std::size_t i = 0; i < back.size(); ++i) {
        CHECK(std::abs(back[i] - clip.frames.frame(3)[i]) <= 0.5f / 65535.0f + 1e-7f);
    }
}

TEST_CASE("audio file round trip is exact") {
    TempDir dir;
    const auto audio = synthgen::synth_audio(synthgen::AudioKind::tone_sequence, 0.3, 16000, 1);
    io::write_audio(dir.path / "a.f32", audio);
    const auto back = io::read_audio(dir.path / "a.f32");
    CHECK(back.samples == audio.samples);
    CHECK(back.sample_rate == audio.sample_rate);
    CHECK(back.duration == doctest::Approx(audio.duration));
}

TEST_CASE("clip directories round trip metadata and frames") {
    TempDir dir;
    const auto clip = small_clip();
    io::save_clip(dir.path / "clip", clip, io::Json{{"id", "c0"}});
    const auto back = io::load_clip(dir.path / "clip");
    CHECK(back.aperture == clip.aperture);
    CHECK(back.jaw_bottom == clip.jaw_bottom);
    CHECK(back.face.eyebrow_coupling == clip.face.eyebrow_coupling);
    CHECK(back.face.head_radius == clip.face.head_radius);
    CHECK(back.face.skin == clip.face.skin);
    REQUIRE(back.frames.same_shape(clip.frames));
    double worst = 0.0;
    for (std::size_t i = 0; i < back.frames.data.size(); ++i) {
        worst = std::max(worst, double(std::abs(back.frames.data[i] - clip.frames.data[i])));
    }
    CHECK(worst < 1e-5);
    CHECK(io::read_json(dir.path / "clip" / "meta.json").at("id") == "c0");
}

TEST_CASE("prepared clips keep their codec and mask contents") {
    TempDir dir;
    const auto clip = small_clip();
    for (auto codec : {preprocess::MaskCodec::lossless, preprocess::MaskCodec::lossy_block}) {
        io::PreparedClip p;
        p.clip = preprocess::crop_and_resize(clip, preprocess::CropPolicy::max_height, 64, {0.5, codec, 6});
        p.audio = clip.audio;
        p.aperture = clip.aperture;
        p.face = clip.face;
        p.id = "x";
        const auto where = dir.path / preprocess::to_string(codec);
        io::save_prepared(where, p);
        const auto back = io::load_prepared(where);
        CHECK(back.clip.mask_options.codec == codec);
        CHECK(back.clip.masks.size() == p.clip.masks.size());
        CHECK(back.clip.masks[0] == p.clip.masks[0]);
        CHECK(back.clip.eye_row == p.clip.eye_row);
        CHECK(back.clip.policy == preprocess::CropPolicy::max_height);
    }
}

TEST_CASE("codec disagreement between metadata and mask bytes is a decode error") {
    TempDir dir;
    const auto clip = small_clip();
    io::PreparedClip p;
    p.clip = preprocess::crop_and_resize(clip, preprocess::CropPolicy::per_frame, 64);
    p.audio = clip.audio;
    p.aperture = clip.aperture;
    p.face = clip.face;
    io::save_prepared(dir.path, p);
    auto meta = io::read_json(dir.path / "meta.json");
    meta["mask_codec"] = "lossy_block";
    io::write_json(dir.path / "meta.json", meta);
    CHECK_THROWS_AS(io::load_prepared(dir.path), DecodeError);
}

TEST_CASE("missing files are precondition errors") {
    TempDir dir;
    CHECK_THROWS_AS(io::read_json(dir.path / "nope.json"), PreconditionError);
    CHECK_THROWS_AS(io::read_file(dir.path / "nope.bin"), PreconditionError);
}

TEST_CASE("tree hash ignores manifests and tracks content") {
    TempDir dir;
    io::write_json(dir.path / "a" / "x.json", io::Json{{"v", 1}});
    io::write_json(dir.path / "b.json", io::Json{{"v", 2}});
    const auto h0 = hash_tree(dir.path);
    io::write_json(dir.path / "manifest.json", io::Json{{"wall", 3}});
    CHECK(hash_tree(dir.path) == h0);
    io::write_json(dir.path / "b.json", io::Json{{"v", 3}});
    CHECK(hash_tree(dir.path) != h0);
}

TEST_CASE("atomic writes leave no temporary files behind") {
    TempDir dir;
    const std::vector<std::uint8_t> bytes{1, 2, 3};
    io::write_file_atomic(dir.path / "f.bin", bytes);
    CHECK(io::read_file(dir.path / "f.bin") == bytes);
    int entries = 0;
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir.path)) ++entries;
    CHECK(entries == 1);
}
