// Copyright 2026 The TTW Authors
// SPDX-License-Identifier: Apache-2.0
//
// Test-time warmup for one instance:
//
//   snapshot -> generate candidates -> filter -> adapt -> infer -> restore
//
// Restore runs on every exit path, so no instance can leak weights into the
// next one.

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ttw/backend.hpp"
#include "ttw/candidate_cache.hpp"
#include "ttw/core.hpp"
#include "ttw/scorer.hpp"

namespace ttw {

/// Master seed + instance id; independent of processing order.
std::uint64_t instance_seed(std::uint64_t master_seed, std::string_view instance_id);

/// Seed of candidate `index` for `prompt_id`.
std::uint64_t candidate_seed(std::uint64_t instance_seed, std::string_view prompt_id, int index);

struct GenerationStats {
    std::size_t generated = 0;
    std::size_t cache_hits = 0;
    std::size_t retries = 0;
    std::size_t empty = 0;

    GenerationStats& operator+=(const GenerationStats& o);
};

/// k sampled candidates per bank prompt, in bank order. Scores are left
/// unset. An empty generation is retried once with a derived seed and kept
/// (flagged empty) if it stays empty.
std::vector<ScoredCandidateSet> generate_candidates(Backend& backend, const TestInstance& instance,
                                                    const AuxiliaryPromptBank& bank, const WarmupConfig& config,
                                                    CandidateCache* cache = nullptr, GenerationStats* stats = nullptr);

/// Index chosen by `policy` among candidates with a score; ties go to the
/// lowest index. FIRST_ONLY picks 0. Returns -1 when nothing is eligible.
int select_index(std::span<const std::optional<double>> scores, SelectionPolicy policy);

/// Scores non-empty candidates (except under FIRST_ONLY), fills
/// selected_index and returns one (prompt, caption) item per usable prompt in
/// bank order. Prompts with no usable candidate are dropped with a warning.
WarmupDataset filter_candidates(const Scorer& scorer, const ImageRef& image, std::vector<ScoredCandidateSet>& sets,
                                SelectionPolicy policy);

struct AdaptationReport {
    std::vector<double> epoch_mean_loss;
    std::vector<double> step_losses;
    int steps = 0;
    std::optional<double> loss_before;  // dataset loss before the first step
    std::optional<double> loss_after;   // dataset loss after the last step
};

/// epochs x ceil(|dataset| / batch_size) AdamW steps with fresh optimizer
/// state; the final partial batch is kept. Examples are reshuffled at the
/// start of every epoch from the instance seed. Throws NonFiniteLossError.
AdaptationReport adapt(Backend& backend, const WarmupDataset& dataset, const ImageRef& image,
                       const WarmupConfig& config, std::uint64_t instance_seed);

using InferenceFn = std::function<std::string(Backend&, const TestInstance&)>;

struct RunOptions {
    CandidateCache* cache = nullptr;
    /// When set, the backend must be at these trainable weights on entry.
    std::optional<std::string> expected_fingerprint;
};

struct InstanceOutcome {
    EvalRecord record;
    AdaptationReport report;
    GenerationStats generation;
    WarmupDataset dataset;
    std::vector<std::string> trace;  // stage names in execution order
};

/// Generates and filters the warmup dataset without touching weights. Shared
/// by the warmup conditions and the in-context baseline.
WarmupDataset build_warmup_dataset(Backend& backend, const Scorer& scorer, const TestInstance& instance,
                                   const AuxiliaryPromptBank& bank, const WarmupConfig& config,
                                   CandidateCache* cache = nullptr, GenerationStats* stats = nullptr,
                                   std::vector<ScoredCandidateSet>* sets_out = nullptr);

/// Stage failures are recorded on the outcome (failed = true, score 0). A
/// non-finite loss restores the weights and answers with them instead. Only
/// a failed restore or a fingerprint mismatch throws.
InstanceOutcome run_instance(Backend& backend, const Scorer& scorer, const TestInstance& instance,
                             const AuxiliaryPromptBank& bank, const WarmupConfig& config, const InferenceFn& inference,
                             const RunOptions& options = {});

/// Default inference: evaluation prompt, dataset decoding parameters.
std::string default_inference(Backend& backend, const TestInstance& instance, std::uint64_t master_seed);

}  // namespace ttw
