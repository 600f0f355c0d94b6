// Copyright 2026 The TTW Authors
// SPDX-License-Identifier: Apache-2.0
//
// Line-delimited JSON formats:
//
//   instance file  {"instance_id", "image", "question", "answers", "choices"?, "dataset"}
//   results file   one EvalRecord per line (plus adaptation details)
//
// Relative image paths in an instance file resolve against the file's
// directory.

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ttw/core.hpp"
#include "ttw/eval.hpp"
#include "ttw/warmup.hpp"

namespace ttw::io {

nlohmann::json instance_to_json(const TestInstance& instance, const std::filesystem::path& relative_to = {});
TestInstance instance_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});

std::vector<TestInstance> read_instances(const std::filesystem::path& path);
void write_instances(const std::filesystem::path& path, const std::vector<TestInstance>& instances);

/// Deterministic sample of `n` instances (seeded partial Fisher-Yates),
/// written in sampled order. Throws when n == 0 or n exceeds the file size.
void sample_instances(const std::filesystem::path& input, std::size_t n, std::uint64_t seed,
                      const std::filesystem::path& output);

struct ResultLine {
    EvalRecord record;
    std::optional<AdaptationReport> adaptation;
};

std::string to_json_line(const ResultLine& line);
/// Returns nullopt for malformed lines.
std::optional<ResultLine> parse_result_line(std::string_view line);

/// Well-formed records in file order; counts malformed lines.
std::vector<ResultLine> read_results(const std::filesystem::path& path, std::size_t* malformed = nullptr);

nlohmann::json aggregate_to_json(const eval::AggregateResult& a);

}  // namespace ttw::io
