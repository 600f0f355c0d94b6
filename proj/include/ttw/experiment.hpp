// Copyright 2026 The TTW Authors
// SPDX-License-Identifier: Apache-2.0
//
// Runs one condition over an instance file and writes
//
//   <out>/results.jsonl   one record per instance, appended as it finishes
//   <out>/summary.json    accuracy per dataset, cache statistics
//
// Reruns skip instance ids already present in the results file, so a killed
// run resumes where it stopped. A torn trailing line is dropped first.

#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ttw/backend.hpp"
#include "ttw/core.hpp"
#include "ttw/eval.hpp"
#include "ttw/io.hpp"
#include "ttw/scorer.hpp"
#include "ttw/warmup.hpp"

namespace ttw {

struct ExperimentOptions {
    std::filesystem::path dataset;
    std::filesystem::path output_dir;
    Condition condition = Condition::TTW;
    WarmupConfig config;
    /// Candidate cache shared between runs; none when unset.
    std::optional<std::filesystem::path> cache_path;
    /// Stop after this many newly processed instances.
    std::optional<std::size_t> limit;
    std::size_t shard_index = 0;
    std::size_t shard_count = 1;
    /// Results file of the BASE run used for relative improvement.
    std::optional<std::filesystem::path> base_results;
    std::function<void(const EvalRecord&, std::size_t done, std::size_t total)> progress;
};

struct ExperimentSummary {
    std::filesystem::path results_path;
    std::filesystem::path summary_path;
    std::size_t processed = 0;  // this invocation
    std::size_t skipped = 0;    // already recorded
    std::size_t failed = 0;     // this invocation
    std::size_t dropped_lines = 0;
    GenerationStats generation;
    std::vector<eval::AggregateResult> aggregates;  // over the whole results file
    nlohmann::json document;
};

/// The configuration a condition actually runs with: the selection policy
/// follows the condition, and the unfiltered ablation draws one candidate.
WarmupConfig effective_config(Condition condition, WarmupConfig config);

std::string results_file_name(std::size_t shard_index, std::size_t shard_count);

/// Throws on systemic failure (unreadable dataset, invalid config, a restore
/// that is not bitwise exact). Per-instance failures are recorded instead.
ExperimentSummary run_experiment(Backend& backend, const ScorerRegistry& scorers, const AuxiliaryPromptBank& bank,
                                 const ExperimentOptions& options);

/// Per-(dataset, condition) aggregates over several results files. Records
/// are merged by (instance_id, condition), later files winning. Relative
/// improvement is computed against BASE records from `base` when given,
/// otherwise against BASE records among the inputs.
std::vector<eval::AggregateResult> build_report(const std::vector<std::filesystem::path>& results,
                                                const std::optional<std::filesystem::path>& base = {});

/// Plain-text table of aggregates.
std::string format_report(const std::vector<eval::AggregateResult>& rows);

}  // namespace ttw
