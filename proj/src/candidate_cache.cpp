// Copyright 2026 The TTW Authors
// SPDX-License-Identifier: Apache-2.0

#include "ttw/candidate_cache.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "ttw/core.hpp"
#include "ttw/text.hpp"

namespace ttw {

using nlohmann::json;

std::string CacheKey::str() const {
    return fmt::format("{}\x1f{}\x1f{}\x1f{}\x1f{:a}", model_id, instance_id, prompt_id, seed, temperature);
}

std::string to_json_line(const CacheRecord& r) {
    json j = {{"model_id", r.key.model_id},
              {"instance_id", r.key.instance_id},
              {"prompt_id", r.key.prompt_id},
              {"seed", r.key.seed},
              {"temperature", r.key.temperature},
              {"caption", r.caption},
              {"empty", r.empty}};
    if (r.score) j["score"] = *r.score;
    return j.dump() + "\n";
}

std::optional<CacheRecord> parse_cache_line(std::string_view line) {
    if (trim(line).empty()) return std::nullopt;
    try {
        const json j = json::parse(line);
        CacheRecord r;
        r.key.model_id = j.at("model_id").get<std::string>();
        r.key.instance_id = j.at("instance_id").get<std::string>();
        r.key.prompt_id = j.at("prompt_id").get<std::string>();
        r.key.seed = j.at("seed").get<std::uint64_t>();
        r.key.temperature = j.at("temperature").get<double>();
        r.caption = j.at("caption").get<std::string>();
        r.empty = j.value("empty", false);
        if (j.contains("score") && !j["score"].is_null()) r.score = j["score"].get<double>();
        return r;
    } catch (const json::exception&) {
        return std::nullopt;
    }
}

std::vector<CacheRecord> CandidateCache::read_all(const std::filesystem::path& path, std::size_t* malformed) {
    std::vector<CacheRecord> out;
    std::size_t bad = 0;
    if (std::filesystem::exists(path)) {
        const std::string doc = read_file(path);
        for (std::string_view line : split_lines(doc)) {
            if (trim(line).empty()) continue;
            if (auto r = parse_cache_line(line)) out.push_back(std::move(*r));
            else ++bad;
        }
    }
    if (malformed) *malformed = bad;
    return out;
}

CandidateCache::CandidateCache(std::filesystem::path path) : path_(std::move(path)) {
    for (auto& r : read_all(path_, &malformed_)) {
        const std::string k = r.key.str();
        records_.insert_or_assign(k, std::move(r));
    }
}

std::optional<CacheRecord> CandidateCache::lookup(const CacheKey& key) const {
    std::lock_guard lock(mutex_);
    const auto it = records_.find(key.str());
    if (it == records_.end()) return std::nullopt;
    return it->second;
}

void CandidateCache::put(const CacheRecord& record) {
    const std::string line = to_json_line(record);
    std::lock_guard lock(mutex_);
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    const int fd = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (fd < 0) throw Error(fmt::format("cannot open cache '{}': {}", path_.string(), std::strerror(errno)));
    const ssize_t n = ::write(fd, line.data(), line.size());
    const int err = errno;
    ::close(fd);
    if (n != static_cast<ssize_t>(line.size()))
        throw Error(fmt::format("short write to cache '{}': {}", path_.string(), std::strerror(err)));
    records_.insert_or_assign(record.key.str(), record);
}

std::size_t CandidateCache::size() const {
    std::lock_guard lock(mutex_);
    return records_.size();
}

}  // namespace ttw
