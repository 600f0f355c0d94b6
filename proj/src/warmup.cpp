// Copyright 2026 The TTW Authors
// SPDX-License-Identifier: Apache-2.0

#include "ttw/warmup.hpp"

#include <numeric>

#include <fmt/format.h>

#include "ttw/eval.hpp"
#include "ttw/random.hpp"
#include "ttw/text.hpp"

namespace ttw {

std::uint64_t instance_seed(std::uint64_t master_seed, std::string_view instance_id) {
    return derive_seed(master_seed, fmt::format("instance:{}", instance_id));
}

std::uint64_t candidate_seed(std::uint64_t inst_seed, std::string_view prompt_id, int index) {
    return derive_seed(inst_seed, fmt::format("candidate:{}", prompt_id), static_cast<std::uint64_t>(index));
}

GenerationStats& GenerationStats::operator+=(const GenerationStats& o) {
    generated += o.generated;
    cache_hits += o.cache_hits;
    retries += o.retries;
    empty += o.empty;
    return *this;
}

std::vector<ScoredCandidateSet> generate_candidates(Backend& backend, const TestInstance& instance,
                                                    const AuxiliaryPromptBank& bank, const WarmupConfig& config,
                                                    CandidateCache* cache, GenerationStats* stats) {
    if (auto v = validate_config(config); !v.empty()) throw Error(fmt::format("invalid config: {}", v.front()));
    GenerationStats local;
    const std::uint64_t seed = instance_seed(config.rng_seed, instance.instance_id);
    const std::string model = cache ? backend.model_id() : std::string();

    std::vector<ScoredCandidateSet> sets;
    sets.reserve(bank.size());
    for (const auto& prompt : bank.prompts()) {
        ScoredCandidateSet set;
        set.prompt_id = prompt.prompt_id;
        set.prompt_text = prompt.text;
        for (int i = 0; i < config.candidates_per_prompt; ++i) {
            const std::uint64_t cseed = candidate_seed(seed, prompt.prompt_id, i);
            CacheKey key{model, instance.instance_id, prompt.prompt_id, cseed, config.generation_temperature};
            if (cache) {
                if (auto hit = cache->lookup(key)) {
                    ++local.cache_hits;
                    if (hit->empty) ++local.empty;
                    set.candidates.push_back({hit->caption, std::nullopt, hit->empty});
                    continue;
                }
            }
            // Hugging Face sampling defaults apart from the temperature.
            GenerationParams params =
                GenerationParams::sampled(config.generation_temperature, config.generation_max_new_tokens, cseed);
            params.top_k = 50;
            std::string caption = backend.generate(instance.image, prompt.text, params);
            ++local.generated;
            if (trim(caption).empty()) {
                ++local.retries;
                params.seed = derive_seed(cseed, "retry");
                caption = backend.generate(instance.image, prompt.text, params);
                ++local.generated;
            }
            const bool empty = trim(caption).empty();
            if (empty) ++local.empty;
            if (cache) cache->put({key, caption, empty, std::nullopt});
            set.candidates.push_back({std::move(caption), std::nullopt, empty});
        }
        sets.push_back(std::move(set));
    }
    if (stats) *stats += local;
    return sets;
}

int select_index(std::span<const std::optional<double>> scores, SelectionPolicy policy) {
    if (policy == SelectionPolicy::FIRST_ONLY) return scores.empty() ? -1 : 0;
    int best = -1;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!scores[i]) continue;
        if (best < 0) {
            best = static_cast<int>(i);
            continue;
        }
        const double b = *scores[static_cast<std::size_t>(best)];
        if (policy == SelectionPolicy::ARGMAX ? *scores[i] > b : *scores[i] < b) best = static_cast<int>(i);
    }
    return best;
}

WarmupDataset filter_candidates(const Scorer& scorer, const ImageRef& image, std::vector<ScoredCandidateSet>& sets,
                                SelectionPolicy policy) {
    WarmupDataset dataset;
    for (auto& set : sets) {
        if (set.candidates.empty()) throw Error(fmt::format("prompt '{}' has no candidates", set.prompt_id));
        set.selected_index = -1;
        if (policy == SelectionPolicy::FIRST_ONLY) {
            if (!set.candidates.front().empty) set.selected_index = 0;
        } else {
            std::vector<std::string> captions;
            std::vector<std::size_t> positions;
            for (std::size_t i = 0; i < set.candidates.size(); ++i) {
                set.candidates[i].score.reset();
                if (set.candidates[i].empty) continue;
                captions.push_back(set.candidates[i].caption);
                positions.push_back(i);
            }
            if (!captions.empty()) {
                const auto scores = scorer.score_batch(image, captions);
                for (std::size_t j = 0; j < positions.size(); ++j) set.candidates[positions[j]].score = scores[j].value;
                std::vector<std::optional<double>> column;
                column.reserve(set.candidates.size());
                for (const auto& c : set.candidates) column.push_back(c.score);
                set.selected_index = select_index(column, policy);
            }
        }
        if (set.selected_index < 0) {
            dataset.warnings.push_back(fmt::format("prompt '{}' dropped: every candidate is empty", set.prompt_id));
            continue;
        }
        dataset.items.push_back(
            {set.prompt_id, set.prompt_text, set.candidates[static_cast<std::size_t>(set.selected_index)].caption});
    }
    return dataset;
}

AdaptationReport adapt(Backend& backend, const WarmupDataset& dataset, const ImageRef& image,
                       const WarmupConfig& config, std::uint64_t inst_seed) {
    if (auto v = validate_config(config); !v.empty()) throw Error(fmt::format("invalid config: {}", v.front()));
    AdaptationReport report;
    if (dataset.items.empty()) return report;
    backend.set_supervise_prompt_tokens(config.supervise_prompt_tokens);

    std::vector<TrainExample> examples;
    examples.reserve(dataset.items.size());
    for (const auto& item : dataset.items) examples.push_back({image, item.prompt_text, item.target_caption});

    report.loss_before = backend.evaluate_loss(examples);
    OptimizerState state;
    state.params = config.adamw;
    std::vector<std::size_t> order(examples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffler(derive_seed(inst_seed, "shuffle"));
    const std::size_t batch_size = static_cast<std::size_t>(config.batch_size);

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        if (config.shuffle_each_epoch) shuffler.shuffle(std::span<std::size_t>(order));
        double sum = 0.0;
        int steps = 0;
        for (std::size_t start = 0; start < order.size(); start += batch_size) {
            std::vector<TrainExample> batch;
            for (std::size_t i = start; i < std::min(order.size(), start + batch_size); ++i)
                batch.push_back(examples[order[i]]);
            const double loss = backend.train_step(batch, config.learning_rate, state);
            report.step_losses.push_back(loss);
            sum += loss;
            ++steps;
        }
        report.steps += steps;
        report.epoch_mean_loss.push_back(sum / steps);
    }
    report.loss_after = backend.evaluate_loss(examples);
    return report;
}

WarmupDataset build_warmup_dataset(Backend& backend, const Scorer& scorer, const TestInstance& instance,
                                   const AuxiliaryPromptBank& bank, const WarmupConfig& config, CandidateCache* cache,
                                   GenerationStats* stats, std::vector<ScoredCandidateSet>* sets_out) {
    auto sets = generate_candidates(backend, instance, bank, config, cache, stats);
    WarmupDataset dataset = filter_candidates(scorer, instance.image, sets, config.selection_policy);
    if (sets_out) *sets_out = std::move(sets);
    return dataset;
}

std::string default_inference(Backend& backend, const TestInstance& instance, std::uint64_t master_seed) {
    const auto prompt =
        eval::build_inference_prompt(instance, derive_seed(instance_seed(master_seed, instance.instance_id), "inference"));
    return backend.generate(instance.image, prompt.text, prompt.params);
}

InstanceOutcome run_instance(Backend& backend, const Scorer& scorer, const TestInstance& instance,
                             const AuxiliaryPromptBank& bank, const WarmupConfig& config, const InferenceFn& inference,
                             const RunOptions& options) {
    InstanceOutcome out;
    out.record.instance_id = instance.instance_id;
    out.record.dataset = instance.dataset;
    out.record.condition = condition_for(config.selection_policy);

    const TrainableSnapshot snapshot = backend.snapshot();
    out.trace.emplace_back("snapshot");
    if (options.expected_fingerprint && snapshot.fingerprint() != *options.expected_fingerprint)
        throw SnapshotMismatchError(fmt::format("instance '{}': backend is not at pristine weights", instance.instance_id));

    auto answer = [&] {
        const std::string response = inference(backend, instance);
        out.trace.emplace_back("inference");
        const auto graded = eval::grade(instance, response);
        out.record.raw_response = response;
        out.record.parsed_answer = graded.parsed_answer;
        out.record.score = graded.score;
    };

    try {
        auto sets = generate_candidates(backend, instance, bank, config, options.cache, &out.generation);
        out.trace.emplace_back("generate");
        out.dataset = filter_candidates(scorer, instance.image, sets, config.selection_policy);
        out.trace.emplace_back("filter");
        for (const auto& w : out.dataset.warnings) out.record.diagnostics.push_back(w);
        try {
            out.report = adapt(backend, out.dataset, instance.image, config,
                               instance_seed(config.rng_seed, instance.instance_id));
            out.trace.emplace_back("adapt");
        } catch (const NonFiniteLossError& e) {
            backend.restore(snapshot);
            out.trace.emplace_back("restore");
            out.record.diagnostics.push_back(
                fmt::format("adaptation aborted ({}); answered with the original weights", e.what()));
        }
        answer();
    } catch (const std::exception& e) {
        out.record.failed = true;
        out.record.score = 0.0;
        out.record.diagnostics.push_back(fmt::format("instance failed: {}", e.what()));
    }

    backend.restore(snapshot);
    out.trace.emplace_back("restore");
    if (backend.trainable_fingerprint() != snapshot.fingerprint())
        throw SnapshotMismatchError(fmt::format("instance '{}': restore was not exact", instance.instance_id));
    return out;
}

}  // namespace ttw
