// Copyright 2026 The TTW Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "stubs.hpp"
#include "support.hpp"
#include "ttw/candidate_cache.hpp"
#include "ttw/eval.hpp"
#include "ttw/random.hpp"
#include "ttw/warmup.hpp"

using namespace ttw;
using testing::ScriptedBackend;
using testing::TableScorer;

namespace {

TestInstance instance(std::string id = "inst-1", std::uint64_t scene = 1) {
    return {std::move(id), testing::toy_image(scene), "What color is the object?", {"red"}, std::nullopt, Dataset::GQA};
}

WarmupDataset dataset_of(int n) {
    WarmupDataset d;
    for (int i = 0; i < n; ++i) d.items.push_back({fmt::format("p{}", i), "prompt", fmt::format("target {}", i)});
    return d;
}

// Brute force: scan all indices, keep the first one holding the extreme.
int oracle(const std::vector<std::optional<double>>& s, SelectionPolicy policy) {
    std::optional<double> best;
    for (const auto& v : s) {
        if (!v) continue;
        if (!best || (policy == SelectionPolicy::ARGMAX ? *v > *best : *v < *best)) best = v;
    }
    if (!best) return -1;
    for (std::size_t i = 0; i < s.size(); ++i)
        if (s[i] && *s[i] == *best) return static_cast<int>(i);
    return -1;
}

// Forwards to a toy backend; the second training step reports a non-finite
// loss after the first one has already changed the weights.
class FaultyBackend final : public Backend {
public:
    explicit FaultyBackend(ToyBackend& inner) : inner_(inner) {}
    int steps = 0;
    std::string model_id() const override { return inner_.model_id(); }
    std::string generate(const ImageRef& i, std::string_view p, const GenerationParams& g) override {
        return inner_.generate(i, p, g);
    }
    double train_step(std::span<const TrainExample> b, double lr, OptimizerState& s) override {
        if (++steps == 2) throw NonFiniteLossError("loss is nan");
        return inner_.train_step(b, lr, s);
    }
    double evaluate_loss(std::span<const TrainExample> b) override { return inner_.evaluate_loss(b); }
    TrainableSnapshot snapshot() const override { return inner_.snapshot(); }
    void restore(const TrainableSnapshot& s) override { inner_.restore(s); }
    ParameterPartition partition() const override { return inner_.partition(); }
    std::string trainable_fingerprint() const override { return inner_.trainable_fingerprint(); }
    std::string frozen_fingerprint() const override { return inner_.frozen_fingerprint(); }
    void set_supervise_prompt_tokens(bool on) override { inner_.set_supervise_prompt_tokens(on); }

private:
    ToyBackend& inner_;
};

}  // namespace

TEST_CASE("k candidates for each of the N prompts") {
    ScriptedBackend backend;
    WarmupConfig config;
    config.candidates_per_prompt = 3;
    GenerationStats stats;
    const auto sets = generate_candidates(backend, instance(), default_prompt_bank(), config, nullptr, &stats);
    REQUIRE(sets.size() == 10);
    for (std::size_t i = 0; i < sets.size(); ++i) {
        CHECK(sets[i].prompt_id == default_prompt_bank()[i].prompt_id);
        CHECK(sets[i].candidates.size() == 3);
        for (const auto& c : sets[i].candidates) CHECK_FALSE(c.score.has_value());
    }
    CHECK(stats.generated == 30);
    CHECK(backend.generate_calls == 30);
}

TEST_CASE("candidates are sampled with the warmup temperature and distinct seeds") {
    ScriptedBackend backend;
    std::vector<GenerationParams> seen;
    backend.caption = [&](std::string_view, const GenerationParams& p) {
        seen.push_back(p);
        return std::string("c");
    };
    WarmupConfig config;
    config.candidates_per_prompt = 4;
    generate_candidates(backend, instance(), default_prompt_bank(), config);
    std::set<std::uint64_t> seeds;
    for (const auto& p : seen) {
        CHECK(p.mode == GenerationParams::Mode::SAMPLED);
        CHECK(p.temperature == 0.75);
        CHECK(p.max_new_tokens == 128);
        seeds.insert(p.seed);
    }
    CHECK(seeds.size() == seen.size());
}

TEST_CASE("candidate generation is reproducible and seed-sensitive") {
    ToyBackend backend;
    backend.load_parameters(testing::pretrained_toy_weights());
    auto config = testing::toy_config(5);
    config.candidates_per_prompt = 2;
    auto captions = [&](const WarmupConfig& c) {
        std::vector<std::string> out;
        for (const auto& s : generate_candidates(backend, instance(), default_prompt_bank(), c))
            for (const auto& cand : s.candidates) out.push_back(cand.caption);
        return out;
    };
    const auto a = captions(config);
    CHECK(captions(config) == a);
    auto other = config;
    other.rng_seed = 6;
    CHECK(captions(other) != a);
}

TEST_CASE("instance seeds do not depend on processing order") {
    CHECK(instance_seed(1, "a") == instance_seed(1, "a"));
    CHECK(instance_seed(1, "a") != instance_seed(1, "b"));
    CHECK(instance_seed(1, "a") != instance_seed(2, "a"));
    CHECK(candidate_seed(9, "p", 0) != candidate_seed(9, "p", 1));
    CHECK(candidate_seed(9, "p", 0) != candidate_seed(9, "q", 0));
}

TEST_CASE("empty generations are retried once, then flagged") {
    ScriptedBackend backend;
    backend.caption = [](std::string_view prompt, const GenerationParams& p) -> std::string {
        if (prompt.starts_with("What objects")) return "   ";
        // Other prompts come back empty for even seeds.
        return (p.seed % 2 == 0) ? "" : "text";
    };
    WarmupConfig config;
    config.candidates_per_prompt = 2;
    GenerationStats stats;
    auto sets = generate_candidates(backend, instance(), default_prompt_bank(), config, nullptr, &stats);
    CHECK(stats.retries >= 2);  // the always-empty prompt retries both candidates
    for (const auto& c : sets[1].candidates) CHECK(c.empty);

    TableScorer scorer;
    const auto data = filter_candidates(scorer, instance().image, sets, SelectionPolicy::ARGMAX);
    CHECK(data.items.size() <= 9);
    bool dropped_objects = true;
    for (const auto& item : data.items) dropped_objects &= item.prompt_id != "objects_people";
    CHECK(dropped_objects);
    bool warned = false;
    for (const auto& w : data.warnings) warned |= w.find("objects_people") != std::string::npos;
    CHECK(warned);
}

TEST_CASE("a prompt whose candidates are all empty leaves N - 1 items") {
    ScriptedBackend backend;
    backend.caption = [](std::string_view prompt, const GenerationParams& p) {
        return prompt.starts_with("Are there any signs") ? std::string() : fmt::format("c{}", p.seed % 97);
    };
    WarmupConfig config;
    config.candidates_per_prompt = 3;
    auto sets = generate_candidates(backend, instance(), default_prompt_bank(), config);
    TableScorer scorer;
    const auto data = filter_candidates(scorer, instance().image, sets, SelectionPolicy::ARGMAX);
    CHECK(data.items.size() == 9);
    CHECK(data.warnings.size() == 1);
    CHECK(sets[0].selected_index == -1);
}

TEST_CASE("selection examples") {
    using S = std::vector<std::optional<double>>;
    CHECK(select_index(S{0.2, 0.9, 0.5}, SelectionPolicy::ARGMAX) == 1);
    CHECK(select_index(S{0.2, 0.9, 0.5}, SelectionPolicy::ARGMIN) == 0);
    CHECK(select_index(S{0.7, 0.7, 0.1}, SelectionPolicy::ARGMAX) == 0);
    CHECK(select_index(S{0.3, 0.1, 0.1}, SelectionPolicy::ARGMIN) == 1);
    CHECK(select_index(S{std::nullopt, 0.4}, SelectionPolicy::ARGMAX) == 1);
    CHECK(select_index(S{std::nullopt}, SelectionPolicy::ARGMAX) == -1);
    CHECK(select_index(S{-0.5, -0.2}, SelectionPolicy::ARGMAX) == 1);
    CHECK(select_index(S{0.1, 0.9}, SelectionPolicy::FIRST_ONLY) == 0);
}

TEST_CASE("selection agrees with a brute-force oracle") {
    Rng rng(99);
    for (int trial = 0; trial < 5000; ++trial) {
        std::vector<std::optional<double>> s(1 + rng.below(10));
        for (auto& v : s) {
            const auto r = rng.below(10);
            if (r == 0) v.reset();
            else v = static_cast<double>(rng.below(5)) / 4.0 - 0.5;  // coarse grid forces ties
        }
        for (auto p : {SelectionPolicy::ARGMAX, SelectionPolicy::ARGMIN}) CHECK(select_index(s, p) == oracle(s, p));
    }
}

TEST_CASE("selection is invariant under strictly increasing score transforms") {
    ScriptedBackend backend;
    WarmupConfig config;
    config.candidates_per_prompt = 6;
    const auto inst = instance();
    auto base_sets = generate_candidates(backend, inst, default_prompt_bank(), config);
    TableScorer plain;
    Rng rng(3);
    for (const auto& s : base_sets)
        for (const auto& c : s.candidates) plain.table[c.caption] = rng.uniform() * 2 - 1;
    TableScorer warped = plain;
    warped.transform = [](double x) { return std::exp(3 * x) + 10; };

    for (auto policy : {SelectionPolicy::ARGMAX, SelectionPolicy::ARGMIN}) {
        auto a = base_sets, b = base_sets;
        const auto da = filter_candidates(plain, inst.image, a, policy);
        const auto db = filter_candidates(warped, inst.image, b, policy);
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].selected_index == b[i].selected_index);
        REQUIRE(da.items.size() == db.items.size());
        for (std::size_t i = 0; i < da.items.size(); ++i) CHECK(da.items[i].target_caption == db.items[i].target_caption);
    }
}

TEST_CASE("argmax picks the caption closest to the reference, argmin the farthest") {
    std::vector<ScoredCandidateSet> sets = {{"p", "prompt", {{"blue", {}, false}, {"red", {}, false}, {"green", {}, false}}, -1}};
    TableScorer scorer;
    scorer.table = {{"blue", 0.2}, {"red", 0.9}, {"green", 0.1}};
    auto a = sets;
    CHECK(filter_candidates(scorer, instance().image, a, SelectionPolicy::ARGMAX).items.at(0).target_caption == "red");
    CHECK(a[0].candidates[2].score == 0.1);
    auto b = sets;
    CHECK(filter_candidates(scorer, instance().image, b, SelectionPolicy::ARGMIN).items.at(0).target_caption == "green");
}

TEST_CASE("the unfiltered ablation never consults the scorer") {
    ScriptedBackend backend;
    WarmupConfig config;
    config.candidates_per_prompt = 1;
    config.selection_policy = SelectionPolicy::FIRST_ONLY;
    auto sets = generate_candidates(backend, instance(), default_prompt_bank(), config);
    for (const auto& s : sets) CHECK(s.candidates.size() == 1);
    testing::ThrowingScorer scorer;
    const auto data = filter_candidates(scorer, instance().image, sets, SelectionPolicy::FIRST_ONLY);
    CHECK(data.items.size() == 10);

    config.candidates_per_prompt = 3;
    CHECK_THROWS_AS(generate_candidates(backend, instance(), default_prompt_bank(), config), Error);
}

TEST_CASE("step count law") {
    for (int n = 1; n <= 12; ++n)
        for (int batch = 1; batch <= 6; ++batch)
            for (int epochs = 1; epochs <= 3; ++epochs) {
                ScriptedBackend backend;
                WarmupConfig config;
                config.batch_size = batch;
                config.epochs = epochs;
                const auto report = adapt(backend, dataset_of(n), instance().image, config, 1);
                const int expected = epochs * ((n + batch - 1) / batch);
                CHECK(report.steps == expected);
                CHECK(static_cast<int>(backend.batch_sizes.size()) == expected);
                CHECK(static_cast<int>(report.epoch_mean_loss.size()) == epochs);
            }
}

TEST_CASE("the final partial batch is kept") {
    ScriptedBackend backend;
    WarmupConfig config;
    adapt(backend, dataset_of(9), instance().image, config, 1);
    CHECK(backend.batch_sizes == std::vector<std::size_t>{5, 4, 5, 4});
}

TEST_CASE("examples are reshuffled every epoch, reproducibly") {
    auto orders = [](std::uint64_t seed, bool shuffle) {
        ScriptedBackend backend;
        WarmupConfig config;
        config.batch_size = 10;
        config.epochs = 3;
        config.shuffle_each_epoch = shuffle;
        adapt(backend, dataset_of(10), instance().image, config, seed);
        return backend.batch_targets;
    };
    const auto a = orders(1, true);
    CHECK(orders(1, true) == a);
    CHECK(orders(2, true) != a);
    CHECK(a[0] != a[1]);
    for (const auto& epoch : a) {
        auto sorted = epoch;
        std::sort(sorted.begin(), sorted.end());
        auto expected = orders(1, false)[0];
        std::sort(expected.begin(), expected.end());
        CHECK(sorted == expected);
    }
    const auto fixed = orders(1, false);
    CHECK(fixed[0] == fixed[1]);
    CHECK(fixed[0][0] == "target 0");
}

TEST_CASE("adaptation uses a fresh optimizer and reports losses") {
    ToyBackend backend;
    backend.load_parameters(testing::pretrained_toy_weights());
    WarmupDataset data = dataset_of(4);
    for (auto& item : data.items) {
        item.prompt_text = "What objects or people are visible in this image?";
        item.target_caption = "red ball.";
    }
    const auto report = adapt(backend, data, instance().image, testing::toy_config(), 1);
    REQUIRE(report.loss_before);
    REQUIRE(report.loss_after);
    CHECK(*report.loss_after < *report.loss_before);
    CHECK(report.step_losses.size() == 2);
    CHECK(adapt(backend, WarmupDataset{}, instance().image, testing::toy_config(), 1).steps == 0);
}

TEST_CASE("run_instance stage order") {
    ToyBackend backend;
    backend.load_parameters(testing::pretrained_toy_weights());
    auto suite = toy::make_suite(toy::World(), 1, 4);
    auto config = testing::toy_config();
    config.candidates_per_prompt = 2;
    const auto pristine = backend.trainable_fingerprint();
    InferenceFn infer = [](Backend& b, const TestInstance& i) { return default_inference(b, i, 0); };
    const auto out = run_instance(backend, suite.scorer, suite.instances[0], default_prompt_bank(), config, infer);
    CHECK(out.trace == std::vector<std::string>{"snapshot", "generate", "filter", "adapt", "inference", "restore"});
    CHECK_FALSE(out.record.failed);
    CHECK(out.record.condition == Condition::TTW);
    CHECK(out.dataset.items.size() == 10);
    CHECK(out.report.steps == 4);
    CHECK(backend.trainable_fingerprint() == pristine);
}

TEST_CASE("inference sees the adapted weights") {
    ScriptedBackend backend;
    std::string seen_during_inference;
    InferenceFn infer = [&](Backend& b, const TestInstance&) {
        seen_during_inference = b.trainable_fingerprint();
        return std::string("red");
    };
    TableScorer scorer;
    WarmupConfig config;
    config.candidates_per_prompt = 2;
    const auto pristine = backend.trainable_fingerprint();
    const auto out = run_instance(backend, scorer, instance(), default_prompt_bank(), config, infer);
    CHECK(seen_during_inference != pristine);
    CHECK(out.record.score == 1.0);
    CHECK(backend.trainable_fingerprint() == pristine);
}

TEST_CASE("a failing stage is recorded and weights are still restored") {
    ScriptedBackend backend;
    TableScorer scorer;
    WarmupConfig config;
    config.candidates_per_prompt = 2;
    const auto pristine = backend.trainable_fingerprint();
    InferenceFn boom = [](Backend&, const TestInstance&) -> std::string { throw Error("inference crashed"); };
    const auto out = run_instance(backend, scorer, instance(), default_prompt_bank(), config, boom);
    CHECK(out.record.failed);
    CHECK(out.record.score == 0.0);
    CHECK(out.trace.back() == "restore");
    CHECK(backend.trainable_fingerprint() == pristine);

    testing::ThrowingScorer offline;
    const auto out2 = run_instance(backend, offline, instance(), default_prompt_bank(), config, boom);
    CHECK(out2.record.failed);
    CHECK(out2.trace == std::vector<std::string>{"snapshot", "generate", "restore"});
    CHECK(backend.trainable_fingerprint() == pristine);
}

TEST_CASE("a non-finite loss falls back to the original weights") {
    ToyBackend toy;
    toy.load_parameters(testing::pretrained_toy_weights());
    FaultyBackend backend(toy);
    auto suite = toy::make_suite(toy::World(), 1, 8);
    auto config = testing::toy_config();
    config.candidates_per_prompt = 2;
    const auto pristine = backend.trainable_fingerprint();
    std::string weights_at_inference;
    InferenceFn infer = [&](Backend& b, const TestInstance& i) {
        weights_at_inference = b.trainable_fingerprint();
        return default_inference(b, i, 0);
    };
    const auto out = run_instance(backend, suite.scorer, suite.instances[0], default_prompt_bank(), config, infer);
    CHECK_FALSE(out.record.failed);
    CHECK(weights_at_inference == pristine);
    REQUIRE_FALSE(out.record.diagnostics.empty());
    CHECK(out.record.diagnostics.back().find("adaptation aborted") != std::string::npos);
    CHECK(out.trace == std::vector<std::string>{"snapshot", "generate", "filter", "restore", "inference", "restore"});
    CHECK(backend.trainable_fingerprint() == pristine);
}

TEST_CASE("a backend that is not at pristine weights is refused") {
    ScriptedBackend backend;
    TableScorer scorer;
    RunOptions options;
    options.expected_fingerprint = "0000";
    InferenceFn infer = [](Backend&, const TestInstance&) { return std::string("x"); };
    CHECK_THROWS_AS(run_instance(backend, scorer, instance(), default_prompt_bank(), WarmupConfig{}, infer, options),
                    SnapshotMismatchError);
}

TEST_CASE("consecutive instances start from identical weights") {
    ToyBackend backend;
    backend.load_parameters(testing::pretrained_toy_weights());
    auto suite = toy::make_suite(toy::World(), 6, 21);
    auto config = testing::toy_config();
    config.candidates_per_prompt = 2;
    const auto pristine = backend.trainable_fingerprint();
    const auto frozen = backend.frozen_fingerprint();
    RunOptions options;
    options.expected_fingerprint = pristine;
    InferenceFn infer = [](Backend& b, const TestInstance& i) { return default_inference(b, i, 0); };
    for (const auto& inst : suite.instances) {
        run_instance(backend, suite.scorer, inst, default_prompt_bank(), config, infer, options);
        CHECK(backend.trainable_fingerprint() == pristine);
        CHECK(backend.frozen_fingerprint() == frozen);
    }
}

TEST_CASE("cached candidates are reused across runs and conditions") {
    testing::TempDir dir;
    ToyBackend backend;
    backend.load_parameters(testing::pretrained_toy_weights());
    auto suite = toy::make_suite(toy::World(), 1, 2);
    auto config = testing::toy_config();
    config.candidates_per_prompt = 3;

    std::vector<ScoredCandidateSet> first_sets, second_sets;
    GenerationStats first, second;
    {
        CandidateCache cache(dir / "cache.jsonl");
        build_warmup_dataset(backend, suite.scorer, suite.instances[0], default_prompt_bank(), config, &cache, &first,
                             &first_sets);
    }
    CHECK(first.generated >= 30);
    CHECK(first.cache_hits == 0);

    CandidateCache cache(dir / "cache.jsonl");
    CHECK(cache.size() == 30);
    auto inverse = config;
    inverse.selection_policy = SelectionPolicy::ARGMIN;
    const auto data = build_warmup_dataset(backend, suite.scorer, suite.instances[0], default_prompt_bank(), inverse,
                                           &cache, &second, &second_sets);
    CHECK(second.generated == 0);
    CHECK(second.cache_hits == 30);
    for (std::size_t i = 0; i < first_sets.size(); ++i)
        for (std::size_t j = 0; j < 3; ++j)
            CHECK(first_sets[i].candidates[j].caption == second_sets[i].candidates[j].caption);

    // The in-context prompt is built from the same captions.
    const std::string icl = eval::build_icl_prompt(suite.instances[0], data);
    for (const auto& item : data.items) CHECK(icl.find(item.target_caption) != std::string::npos);

    // A different model misses the cache.
    ToyBackend other;
    GenerationStats third;
    build_warmup_dataset(other, suite.scorer, suite.instances[0], default_prompt_bank(), config, &cache, &third);
    CHECK(third.cache_hits == 0);
}
