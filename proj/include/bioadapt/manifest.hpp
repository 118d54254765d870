#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace bioadapt {

/// FNV-1a over the file contents, hex-encoded.
std::string hash_file(const std::string& path);
std::uint64_t fnv1a64(const void* data, std::size_t size);

/// Record of one CLI invocation: inputs, outputs and their content hashes.
/// Timestamps are metadata only; identical inputs reproduce identical
/// artifact hashes.
struct RunManifest {
    std::string command;
    std::string config_path;
    std::vector<std::uint64_t> seeds;
    std::vector<std::string> input_paths;
    std::vector<std::pair<std::string, std::string>> artifacts;  // path, hash

    void add_artifact(const std::string& path) { artifacts.emplace_back(path, hash_file(path)); }
    void write(const std::string& path) const;
};

}  // namespace bioadapt
