// Copyright 2026 The TTW Authors
// SPDX-License-Identifier: Apache-2.0
//
// Append-only store of generated candidate captions, one JSON record per
// line. Generation is deterministic given the key, so concurrent writers
// appending the same key are harmless (last write wins on load).

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace ttw {

struct CacheKey {
    std::string model_id;
    std::string instance_id;
    std::string prompt_id;
    std::uint64_t seed = 0;
    double temperature = 0.0;

    std::string str() const;
};

struct CacheRecord {
    CacheKey key;
    std::string caption;
    bool empty = false;
    std::optional<double> score;
};

std::string to_json_line(const CacheRecord& record);
/// Returns nullopt for malformed lines (e.g. a torn final line).
std::optional<CacheRecord> parse_cache_line(std::string_view line);

class CandidateCache {
public:
    /// Loads existing records; a missing file starts an empty cache.
    explicit CandidateCache(std::filesystem::path path);

    std::optional<CacheRecord> lookup(const CacheKey& key) const;
    /// Appends one line with a single write(2) on an O_APPEND descriptor.
    void put(const CacheRecord& record);

    std::size_t size() const;
    std::size_t malformed_lines() const { return malformed_; }
    const std::filesystem::path& path() const { return path_; }

    /// Every well-formed record in file order (duplicates included).
    static std::vector<CacheRecord> read_all(const std::filesystem::path& path, std::size_t* malformed = nullptr);

private:
    std::filesystem::path path_;
    mutable std::mutex mutex_;
    std::map<std::string, CacheRecord> records_;
    std::size_t malformed_ = 0;
};

}  // namespace ttw
