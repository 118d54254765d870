#include "bioadapt/manifest.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "bioadapt/errors.hpp"

namespace bioadapt {

std::uint64_t fnv1a64(const void* data, std::size_t size) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (std::size_t i = 0; i < size; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string hash_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot hash missing file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    const std::string bytes = buf.str();
    char out[20];
    std::snprintf(out, sizeof out, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(bytes.data(), bytes.size())));
    return out;
}

void RunManifest::write(const std::string& path) const {
    nlohmann::ordered_json j;
    j["command"] = command;
    j["config"] = config_path;
    j["seeds"] = seeds;
    j["inputs"] = input_paths;
    nlohmann::ordered_json arts = nlohmann::ordered_json::array();
    for (const auto& [p, h] : artifacts) arts.push_back({{"path", p}, {"hash", h}});
    j["artifacts"] = arts;
    const auto now = std::chrono::system_clock::now().time_since_epoch();
    j["timestamp_unix"] = std::chrono::duration_cast<std::chrono::seconds>(now).count();
    std::ofstream out(path);
    if (!out) throw InputError("cannot write manifest: " + path);
    out << j.dump(2) << "\n";
}

}  // namespace bioadapt
