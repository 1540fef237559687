#pragma once

#include <chrono>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fapo/sha256.hpp"

namespace fapo {

// Reproducibility record written next to each command's outputs: the resolved
// config, the seed, and a content hash per artifact.
struct RunManifest {
    std::string command;
    nlohmann::json resolved_config;
    std::uint64_t seed = 0;
    std::string started_at;
    std::string finished_at;
    std::vector<std::pair<std::string, std::string>> outputs;  // (path, sha256)
};

inline std::string iso8601_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm_utc{};
    gmtime_r(&t, &tm_utc);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

inline void manifest_add_output(RunManifest& manifest, const std::string& path) {
    manifest.outputs.emplace_back(path, sha256_file_hex(path));
}

inline nlohmann::json manifest_to_json(const RunManifest& m) {
    nlohmann::json outputs = nlohmann::json::array();
    for (const auto& [path, hash] : m.outputs)
        outputs.push_back({{"path", path}, {"sha256", hash}});
    return nlohmann::json{{"v", 1},
                          {"command", m.command},
                          {"config", m.resolved_config},
                          {"seed", m.seed},
                          {"started_at", m.started_at},
                          {"finished_at", m.finished_at},
                          {"outputs", outputs}};
}

inline void write_manifest(const RunManifest& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out.good()) throw std::runtime_error("cannot write " + path);
    out << manifest_to_json(m).dump(2) << '\n';
}

}  // namespace fapo
