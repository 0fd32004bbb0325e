#include "highsync/hash.hpp"
#include "highsync/io.hpp"

#include <doctest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include <sys/wait.h>
#include <unistd.h>

namespace fs = std::filesystem;

namespace {

struct Result {
    int code = -1;
    std::string output;  // stdout and stderr
};

Result run(const std::string& args) {
    const std::string cmd = std::string(HIGHSYNC_CLI) + " " + args + " 2>&1";
    Result r;
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    std::array<char, 512> buf{};
    while (fgets(buf.data(), buf.size(), pipe) != nullptr) r.output += buf.data();
    const int status = pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

fs::path scratch(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("highsync_cli_" + std::to_string(getpid())) / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

} // namespace

TEST_CASE("usage errors exit with 2") {
    CHECK(run("").code == 2);
    CHECK(run("datagen --out /tmp/x --no-such-flag").code == 2);
    CHECK(run("train --stage 3 --data a --out b").code == 2);
    CHECK(run("--help").code == 0);
}

TEST_CASE("stage 2 without a stage-1 checkpoint exits with 3 and names it") {
    const auto dir = scratch("stage2");
    auto r = run("train --stage 2 --data " + dir.string() + " --out " + (dir / "out").string());
    CHECK(r.code == 3);
    CHECK(r.output.find("stage-1 checkpoint") != std::string::npos);

    const auto missing = dir / "missing.ckpt";
    r = run("train --stage 2 --data " + dir.string() + " --init " + missing.string() + " --out " +
            (dir / "out").string());
    CHECK(r.code == 3);
    CHECK(r.output.find(missing.string()) != std::string::npos);
}

TEST_CASE("datagen and preprocess write manifests and are reproducible") {
    const auto dir = scratch("data");
    const std::string gen = " --clips 2 --duration 1 --seed 4";
    REQUIRE(run("datagen --out " + (dir / "a").string() + gen).code == 0);
    REQUIRE(run("--jobs 2 datagen --out " + (dir / "b").string() + gen).code == 0);
    CHECK(highsync::hash_tree(dir / "a") == highsync::hash_tree(dir / "b"));

    const auto manifest = highsync::io::read_json(dir / "a" / "manifest.json");
    REQUIRE(manifest["runs"].size() == 1);
    CHECK(manifest["runs"][0]["command"] == "datagen");
    CHECK(manifest["runs"][0]["config"]["clips"] == 2);
    CHECK(manifest["runs"][0].contains("tool_version"));

    REQUIRE(run("preprocess --in " + (dir / "a").string() + " --out " + (dir / "p").string() +
                " --crop-policy max_height --mask-codec lossy_block")
                .code == 0);
    const auto pm = highsync::io::read_json(dir / "p" / "manifest.json");
    CHECK(pm["runs"][0]["config"]["preprocess"]["crop_policy"] == "max_height");
    CHECK(pm["runs"][0]["config"]["preprocess"]["mask_codec"] == "lossy_block");
    CHECK(highsync::io::list_clips(dir / "p").size() == 2);

    CHECK(run("preprocess --in " + (dir / "a").string() + " --out " + (dir / "q").string() +
              " --crop-policy sideways")
              .code == 4);
}

TEST_CASE("flags override the config file, which overrides defaults") {
    const auto dir = scratch("config");
    {
        std::ofstream toml(dir / "run.toml");
        toml << "[datagen]\nclips = 1\nduration = 1.0\nseed = 9\n";
    }
    REQUIRE(run("--config " + (dir / "run.toml").string() + " datagen --out " + (dir / "g").string() + " --clips 2")
                .code == 0);
    const auto cfg = highsync::io::read_json(dir / "g" / "manifest.json")["runs"][0]["config"];
    CHECK(cfg["clips"] == 2);   // flag
    CHECK(cfg["seed"] == 9);    // file
    CHECK(cfg["size"] == 64);   // default
}

TEST_CASE("evaluation needs enough clips and report needs an ablation") {
    const auto dir = scratch("eval");
    REQUIRE(run("datagen --out " + (dir / "d").string() + " --clips 1 --duration 1").code == 0);
    CHECK(run("report --work " + dir.string()).code == 3);
    CHECK(run("eval-silence --checkpoint " + (dir / "none.ckpt").string() + " --data " + (dir / "d").string() +
              " --out " + (dir / "e").string())
              .code == 3);
}
