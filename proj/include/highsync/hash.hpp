#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace highsync {

// Incremental SHA-256, hex digest.
class Sha256 {
public:
    Sha256();
    ~Sha256();
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;

    void update(std::span<const std::uint8_t> bytes);
    void update(std::string_view text);
    std::string hex();

private:
    void* ctx_;
};

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::string_view text);

// Hash of every regular file under `root` (relative path + contents), in sorted path order.
// Files named `skip_name` (run manifests) are left out so the hash tracks content only.
std::string hash_tree(const std::filesystem::path& root, std::string_view skip_name = "manifest.json");

} // namespace highsync
