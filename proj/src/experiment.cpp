// Copyright 2026 The TTW Authors
// SPDX-License-Identifier: Apache-2.0

#include "ttw/experiment.hpp"

#include <fstream>
#include <map>
#include <memory>
#include <set>

#include <fmt/format.h>

#include "ttw/candidate_cache.hpp"
#include "ttw/random.hpp"
#include "ttw/text.hpp"

namespace ttw {

using nlohmann::json;

namespace {

bool is_warmup(Condition c) { return policy_for(c).has_value(); }

// Stands in for the scorer under the unfiltered ablation, which never scores.
class UnusedScorer final : public Scorer {
public:
    std::string name() const override { return "unused"; }
    AlignmentScore score(const ImageRef&, std::string_view) const override {
        throw Error("the unfiltered condition does not score captions");
    }
};

std::map<Dataset, std::vector<EvalRecord>> by_dataset(const std::vector<io::ResultLine>& lines) {
    std::map<Dataset, std::vector<EvalRecord>> out;
    for (const auto& l : lines) out[l.record.dataset].push_back(l.record);
    return out;
}

std::map<Dataset, eval::AggregateResult> base_aggregates(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw Error(fmt::format("base results '{}' not found", path.string()));
    std::map<Dataset, eval::AggregateResult> out;
    for (auto& [dataset, records] : by_dataset(io::read_results(path))) {
        std::vector<EvalRecord> base;
        for (auto& r : records)
            if (r.condition == Condition::BASE) base.push_back(r);
        if (!base.empty()) out[dataset] = eval::aggregate(base);
    }
    return out;
}

json stats_to_json(const GenerationStats& s) {
    const std::size_t lookups = s.cache_hits + (s.generated - s.retries);
    return {{"generated", s.generated},
            {"cache_hits", s.cache_hits},
            {"retries", s.retries},
            {"empty", s.empty},
            {"cache_hit_rate", lookups ? static_cast<double>(s.cache_hits) / static_cast<double>(lookups) : 0.0}};
}

}  // namespace

WarmupConfig effective_config(Condition condition, WarmupConfig config) {
    if (auto policy = policy_for(condition)) {
        config.selection_policy = *policy;
        if (*policy == SelectionPolicy::FIRST_ONLY) config.candidates_per_prompt = 1;
    } else if (condition == Condition::ICL) {
        config.selection_policy = SelectionPolicy::ARGMAX;
    }
    return config;
}

std::string results_file_name(std::size_t shard_index, std::size_t shard_count) {
    if (shard_count <= 1) return "results.jsonl";
    return fmt::format("results.shard-{}-of-{}.jsonl", shard_index, shard_count);
}

ExperimentSummary run_experiment(Backend& backend, const ScorerRegistry& scorers, const AuxiliaryPromptBank& bank,
                                 const ExperimentOptions& options) {
    if (options.shard_count == 0 || options.shard_index >= options.shard_count)
        throw Error(fmt::format("invalid shard {}/{}", options.shard_index, options.shard_count));
    const WarmupConfig config = effective_config(options.condition, options.config);
    if (auto v = validate_config(config); !v.empty()) throw Error(fmt::format("invalid config: {}", v.front()));

    const auto instances = io::read_instances(options.dataset);
    {
        std::set<std::string> ids;
        for (const auto& inst : instances)
            if (!ids.insert(inst.instance_id).second)
                throw Error(fmt::format("duplicate instance id '{}' in {}", inst.instance_id, options.dataset.string()));
    }

    std::filesystem::create_directories(options.output_dir);
    ExperimentSummary summary;
    summary.results_path = options.output_dir / results_file_name(options.shard_index, options.shard_count);
    summary.summary_path = options.output_dir /
                           (options.shard_count <= 1 ? std::string("summary.json")
                                                     : fmt::format("summary.shard-{}-of-{}.json", options.shard_index,
                                                                   options.shard_count));

    // Keep well-formed lines only; a kill mid-write leaves at most one torn line.
    auto existing = io::read_results(summary.results_path, &summary.dropped_lines);
    if (summary.dropped_lines > 0) {
        std::string doc;
        for (const auto& l : existing) doc += io::to_json_line(l);
        write_file_atomic(summary.results_path, doc);
    }
    std::set<std::string> done;
    for (const auto& l : existing) {
        if (l.record.condition != options.condition)
            throw Error(fmt::format("{} holds {} records, refusing to mix in {}", summary.results_path.string(),
                                    to_string(l.record.condition), to_string(options.condition)));
        done.insert(l.record.instance_id);
    }

    // A missing scorer would fail every instance of its dataset: refuse up front.
    const bool needs_scorer = options.condition == Condition::ICL || options.condition == Condition::TTW ||
                              options.condition == Condition::ABLATION_INVERSE;
    if (needs_scorer) {
        std::set<Dataset> datasets;
        for (const auto& inst : instances) datasets.insert(inst.dataset);
        for (Dataset d : datasets) scorers.for_dataset(d);
    }
    const UnusedScorer unused;
    auto scorer_for = [&](Dataset d) -> const Scorer& { return needs_scorer ? scorers.for_dataset(d) : unused; };

    std::unique_ptr<CandidateCache> cache;
    if (options.cache_path && options.condition != Condition::BASE)
        cache = std::make_unique<CandidateCache>(*options.cache_path);

    std::ofstream out(summary.results_path, std::ios::app | std::ios::binary);
    if (!out) throw Error(fmt::format("cannot open {}", summary.results_path.string()));

    const std::string pristine = backend.trainable_fingerprint();
    const std::string frozen = backend.frozen_fingerprint();
    const std::uint64_t master = config.rng_seed;
    InferenceFn inference = [master](Backend& b, const TestInstance& inst) { return default_inference(b, inst, master); };

    std::vector<const TestInstance*> mine;
    for (std::size_t i = 0; i < instances.size(); ++i)
        if (i % options.shard_count == options.shard_index) mine.push_back(&instances[i]);

    std::size_t position = 0;
    for (const TestInstance* inst : mine) {
        ++position;
        if (done.count(inst->instance_id)) {
            ++summary.skipped;
            continue;
        }
        if (options.limit && summary.processed >= *options.limit) break;

        io::ResultLine line;
        if (is_warmup(options.condition)) {
            const Scorer& scorer = scorer_for(inst->dataset);
            RunOptions run;
            run.cache = cache.get();
            run.expected_fingerprint = pristine;
            InstanceOutcome outcome = run_instance(backend, scorer, *inst, bank, config, inference, run);
            summary.generation += outcome.generation;
            line.record = std::move(outcome.record);
            line.adaptation = std::move(outcome.report);
        } else {
            EvalRecord& r = line.record;
            r.instance_id = inst->instance_id;
            r.dataset = inst->dataset;
            r.condition = options.condition;
            try {
                std::string response;
                if (options.condition == Condition::ICL) {
                    const Scorer& scorer = scorer_for(inst->dataset);
                    const WarmupDataset data =
                        build_warmup_dataset(backend, scorer, *inst, bank, config, cache.get(), &summary.generation);
                    for (const auto& w : data.warnings) r.diagnostics.push_back(w);
                    const std::string text = eval::build_icl_prompt(*inst, data, &r.diagnostics);
                    const auto params =
                        eval::build_inference_prompt(*inst, derive_seed(instance_seed(master, inst->instance_id), "inference"))
                            .params;
                    response = backend.generate(inst->image, text, params);
                } else {
                    response = inference(backend, *inst);
                }
                const auto graded = eval::grade(*inst, response);
                r.raw_response = response;
                r.parsed_answer = graded.parsed_answer;
                r.score = graded.score;
            } catch (const std::exception& e) {
                r.failed = true;
                r.score = 0.0;
                r.diagnostics.push_back(fmt::format("instance failed: {}", e.what()));
            }
            if (backend.trainable_fingerprint() != pristine)
                throw SnapshotMismatchError(fmt::format("instance '{}' modified the weights", inst->instance_id));
        }
        if (backend.frozen_fingerprint() != frozen)
            throw SnapshotMismatchError(fmt::format("instance '{}' modified frozen weights", inst->instance_id));

        out << io::to_json_line(line);
        out.flush();
        if (!out) throw Error(fmt::format("write to {} failed", summary.results_path.string()));
        ++summary.processed;
        if (line.record.failed) ++summary.failed;
        if (options.progress) options.progress(line.record, position, mine.size());
    }
    out.close();

    std::optional<std::map<Dataset, eval::AggregateResult>> base;
    if (options.base_results) base = base_aggregates(*options.base_results);

    json aggregates = json::array();
    for (auto& [dataset, records] : by_dataset(io::read_results(summary.results_path))) {
        std::optional<eval::AggregateResult> b;
        if (base) {
            if (auto it = base->find(dataset); it != base->end()) b = it->second;
        }
        summary.aggregates.push_back(eval::aggregate(records, b));
        aggregates.push_back(io::aggregate_to_json(summary.aggregates.back()));
    }

    json doc = {{"condition", std::string(to_string(options.condition))},
                {"dataset_file", options.dataset.generic_string()},
                {"results_file", summary.results_path.filename().generic_string()},
                {"model_id", backend.model_id()},
                {"config", serialize_config(config)},
                {"shard", {{"index", options.shard_index}, {"count", options.shard_count}}},
                {"instances_in_shard", mine.size()},
                {"processed", summary.processed},
                {"skipped", summary.skipped},
                {"failed", summary.failed},
                {"dropped_lines", summary.dropped_lines},
                {"generation", stats_to_json(summary.generation)},
                {"aggregates", aggregates}};
    doc["base_results"] = options.base_results ? json(options.base_results->generic_string()) : json(nullptr);
    summary.document = doc;
    write_file_atomic(summary.summary_path, doc.dump(2) + "\n");
    return summary;
}

std::vector<eval::AggregateResult> build_report(const std::vector<std::filesystem::path>& results,
                                                const std::optional<std::filesystem::path>& base) {
    std::map<std::pair<std::string, Condition>, EvalRecord> merged;
    for (const auto& path : results) {
        if (!std::filesystem::exists(path)) throw Error(fmt::format("results '{}' not found", path.string()));
        for (auto& l : io::read_results(path)) merged[{l.record.instance_id, l.record.condition}] = l.record;
    }
    if (merged.empty()) throw Error("no records to report");

    std::map<std::pair<Dataset, Condition>, std::vector<EvalRecord>> groups;
    for (auto& [key, r] : merged) groups[{r.dataset, r.condition}].push_back(r);

    std::map<Dataset, eval::AggregateResult> bases;
    if (base) {
        bases = base_aggregates(*base);
    } else {
        for (auto& [key, records] : groups)
            if (key.second == Condition::BASE) bases[key.first] = eval::aggregate(records);
    }

    std::vector<eval::AggregateResult> rows;
    for (auto& [key, records] : groups) {
        std::optional<eval::AggregateResult> b;
        if (auto it = bases.find(key.first); it != bases.end()) b = it->second;
        rows.push_back(eval::aggregate(records, b));
    }
    return rows;
}

std::string format_report(const std::vector<eval::AggregateResult>& rows) {
    std::string out = fmt::format("{:<10} {:<20} {:>6} {:>9} {:>10}\n", "dataset", "condition", "n", "accuracy", "rel. %");
    for (const auto& r : rows) {
        const std::string rel =
            r.relative_improvement_vs_base ? fmt::format("{:+.2f}", *r.relative_improvement_vs_base) : std::string("-");
        out += fmt::format("{:<10} {:<20} {:>6} {:>9.2f} {:>10}\n", to_string(r.dataset), to_string(r.condition), r.n,
                           r.accuracy, rel);
    }
    return out;
}

}  // namespace ttw
