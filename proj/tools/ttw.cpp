// Copyright 2026 The TTW Authors
// SPDX-License-Identifier: Apache-2.0
//
// ttw: dataset preparation, sampling, experiment runs and reports.

#include <cstdio>
#include <map>
#include <memory>
#include <set>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "ttw/candidate_cache.hpp"
#include "ttw/experiment.hpp"
#include "ttw/io.hpp"
#include "ttw/prepare.hpp"
#include "ttw/text.hpp"
#include "ttw/toy_backend.hpp"

namespace {

struct PrepareArgs {
    std::string format;
    std::string questions, annotations, images, image_template = "COCO_val2014_{image_id}.jpg";
    std::string out;
    std::size_t toy_n = 20;
    std::uint64_t seed = 0;
    int pretrain_steps = 400;
};

struct SampleArgs {
    std::string input, out;
    std::size_t n = 0;
    std::uint64_t seed = 0;
};

struct RunArgs {
    std::string dataset, out, condition = "TTW", config, backend = "toy", weights, scorer = "mock";
    std::string references, medical_references, bank, cache, shard, base_results;
    std::optional<std::size_t> limit;
    std::optional<std::uint64_t> seed;
    std::optional<double> lr, temperature;
    std::optional<int> k, epochs, batch_size, max_new_tokens;
    bool quiet = false;
};

struct ReportArgs {
    std::vector<std::string> results;
    std::string base, json_out;
};

struct CacheArgs {
    std::string cache, instance;
};

int do_prepare(const PrepareArgs& a) {
    using namespace ttw;
    if (a.format == "toy") {
        const auto t = prepare::make_toy_dataset(a.out, a.toy_n, a.seed, a.pretrain_steps);
        fmt::print("wrote {} toy instances to {} (pretraining loss {:.3f} -> {:.3f})\n", a.toy_n, t.instances.string(),
                   t.pretrain_first_loss, t.pretrain_last_loss);
        fmt::print("references: {}\nweights:    {}\n", t.references.string(), t.weights.string());
        return 0;
    }
    std::vector<TestInstance> instances;
    if (a.format == "gqa") instances = prepare::convert_gqa(a.questions, a.images);
    else if (a.format == "vqav2") instances = prepare::convert_vqav2(a.questions, a.annotations, a.images, a.image_template);
    else if (a.format == "vqa-rad") instances = prepare::convert_vqa_rad(a.questions, a.images);
    else if (a.format == "mmmu") instances = prepare::convert_mmmu(a.questions, a.images);
    else throw Error(fmt::format("unknown format '{}'", a.format));
    io::write_instances(a.out, instances);
    fmt::print("wrote {} instances to {}\n", instances.size(), a.out);
    return 0;
}

std::pair<std::size_t, std::size_t> parse_shard(const std::string& s) {
    const auto slash = s.find('/');
    if (slash == std::string::npos) throw ttw::Error(fmt::format("shard '{}' is not i/n", s));
    try {
        return {std::stoul(s.substr(0, slash)), std::stoul(s.substr(slash + 1))};
    } catch (const std::exception&) {
        throw ttw::Error(fmt::format("shard '{}' is not i/n", s));
    }
}

int do_run(const RunArgs& a) {
    using namespace ttw;
    ExperimentOptions opts;
    opts.dataset = a.dataset;
    opts.output_dir = a.out;
    opts.condition = parse_condition(a.condition);

    // Flags first, then the config file on top of them.
    WarmupConfig config;
    if (a.seed) config.rng_seed = *a.seed;
    if (a.lr) config.learning_rate = *a.lr;
    if (a.temperature) config.generation_temperature = *a.temperature;
    if (a.k) config.candidates_per_prompt = *a.k;
    if (a.epochs) config.epochs = *a.epochs;
    if (a.batch_size) config.batch_size = *a.batch_size;
    if (a.max_new_tokens) config.generation_max_new_tokens = *a.max_new_tokens;
    if (!a.config.empty()) config = load_config_file(a.config, config);
    opts.config = config;

    if (!a.cache.empty()) opts.cache_path = a.cache;
    if (a.limit) opts.limit = *a.limit;
    if (!a.shard.empty()) std::tie(opts.shard_index, opts.shard_count) = parse_shard(a.shard);
    if (!a.base_results.empty()) opts.base_results = a.base_results;

    if (a.backend != "toy") throw Error(fmt::format("backend '{}' is not available in this build", a.backend));
    ToyBackend backend;
    if (!a.weights.empty()) backend.load_weights(a.weights);

    if (a.scorer != "mock") throw Error(fmt::format("scorer '{}' is not available in this build", a.scorer));
    std::shared_ptr<const Scorer> general, medical;
    if (!a.references.empty()) general = std::make_shared<MockScorer>(MockScorer::from_reference_file(a.references));
    if (!a.medical_references.empty())
        medical = std::make_shared<MockScorer>(MockScorer::from_reference_file(a.medical_references));
    ScorerRegistry scorers(general, medical);

    const AuxiliaryPromptBank bank = a.bank.empty() ? default_prompt_bank() : load_prompt_bank_file(a.bank);
    if (!a.quiet) {
        opts.progress = [](const EvalRecord& r, std::size_t done, std::size_t total) {
            fmt::print(stderr, "[{}/{}] {} score={:.3f}{}\n", done, total, r.instance_id, r.score,
                       r.failed ? " FAILED" : "");
        };
    }
    for (const auto& w : config_warnings(effective_config(opts.condition, config))) fmt::print(stderr, "warning: {}\n", w);

    const auto summary = run_experiment(backend, scorers, bank, opts);
    fmt::print("{} new, {} skipped, {} failed; cache hits {} of {} lookups\n", summary.processed, summary.skipped,
               summary.failed, summary.generation.cache_hits,
               summary.generation.cache_hits + summary.generation.generated - summary.generation.retries);
    fmt::print("{}", format_report(summary.aggregates));
    fmt::print("results: {}\nsummary: {}\n", summary.results_path.string(), summary.summary_path.string());
    return 0;
}

int do_report(const ReportArgs& a) {
    using namespace ttw;
    std::vector<std::filesystem::path> files(a.results.begin(), a.results.end());
    std::optional<std::filesystem::path> base;
    if (!a.base.empty()) base = a.base;
    const auto rows = build_report(files, base);
    fmt::print("{}", format_report(rows));
    if (!a.json_out.empty()) {
        nlohmann::json doc = nlohmann::json::array();
        for (const auto& r : rows) doc.push_back(io::aggregate_to_json(r));
        write_file_atomic(a.json_out, doc.dump(2) + "\n");
    }
    return 0;
}

int do_cache_inspect(const CacheArgs& a) {
    using namespace ttw;
    std::size_t malformed = 0;
    const auto records = CandidateCache::read_all(a.cache, &malformed);
    std::set<std::string> keys, models, instances, prompts;
    std::size_t empty = 0;
    for (const auto& r : records) {
        keys.insert(r.key.str());
        models.insert(r.key.model_id);
        instances.insert(r.key.instance_id);
        prompts.insert(r.key.prompt_id);
        if (r.empty) ++empty;
    }
    fmt::print("lines: {} ({} malformed)\nunique keys: {}\nmodels: {}\ninstances: {}\nprompts: {}\nempty captions: {}\n",
               records.size() + malformed, malformed, keys.size(), models.size(), instances.size(), prompts.size(), empty);
    if (!a.instance.empty()) {
        for (const auto& r : records)
            if (r.key.instance_id == a.instance)
                fmt::print("{}\t{:016x}\t{}\n", r.key.prompt_id, r.key.seed, r.empty ? "<empty>" : r.caption);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Test-time warmup for multimodal models"};
    app.require_subcommand(1);

    PrepareArgs prep;
    auto* p = app.add_subcommand("prepare", "Convert a dataset to an instance file, or build a toy dataset");
    p->add_option("--format", prep.format, "gqa | vqav2 | vqa-rad | mmmu | toy")->required();
    p->add_option("--questions", prep.questions, "Native question file (VQA-Rad JSON, MMMU JSONL)");
    p->add_option("--annotations", prep.annotations, "VQAv2 annotation file");
    p->add_option("--images", prep.images, "Image directory");
    p->add_option("--image-template", prep.image_template, "VQAv2 image file name with an {image_id} slot");
    p->add_option("--out", prep.out, "Instance file, or output directory for --format toy")->required();
    p->add_option("--toy-n", prep.toy_n, "Number of toy instances");
    p->add_option("--seed", prep.seed, "Toy dataset seed");
    p->add_option("--pretrain-steps", prep.pretrain_steps, "Toy model pretraining steps");

    SampleArgs samp;
    auto* s = app.add_subcommand("sample", "Draw a seeded random subset of an instance file");
    s->add_option("--input", samp.input)->required();
    s->add_option("--n", samp.n)->required();
    s->add_option("--seed", samp.seed);
    s->add_option("--out", samp.out)->required();

    RunArgs run;
    auto* r = app.add_subcommand("run", "Run one condition over an instance file");
    r->add_option("--dataset", run.dataset, "Instance file")->required();
    r->add_option("--out", run.out, "Output directory")->required();
    r->add_option("--condition", run.condition, "BASE | ICL | TTW | ABLATION_NO_FILTER | ABLATION_INVERSE");
    r->add_option("--config", run.config, "Config file (key = value); overrides flags");
    r->add_option("--backend", run.backend, "Model backend");
    r->add_option("--weights", run.weights, "Backend weights file");
    r->add_option("--scorer", run.scorer, "Alignment scorer");
    r->add_option("--references", run.references, "Mock scorer references for general datasets");
    r->add_option("--medical-references", run.medical_references, "Mock scorer references for VQA-Rad");
    r->add_option("--bank", run.bank, "Auxiliary prompt bank (id<TAB>text per line)");
    r->add_option("--cache", run.cache, "Candidate cache file");
    r->add_option("--limit", run.limit, "Process at most this many new instances");
    r->add_option("--shard", run.shard, "Process shard i of n (i/n)");
    r->add_option("--base-results", run.base_results, "BASE results file for relative improvement");
    r->add_option("--seed", run.seed, "Master seed");
    r->add_option("--lr", run.lr, "Learning rate");
    r->add_option("--temperature", run.temperature, "Candidate sampling temperature");
    r->add_option("-k,--candidates", run.k, "Candidates per prompt");
    r->add_option("--epochs", run.epochs);
    r->add_option("--batch-size", run.batch_size);
    r->add_option("--max-new-tokens", run.max_new_tokens, "Candidate length limit");
    r->add_flag("-q,--quiet", run.quiet, "No per-instance progress");

    ReportArgs rep;
    auto* rp = app.add_subcommand("report", "Aggregate one or more results files");
    rp->add_option("results", rep.results, "Results files")->required();
    rp->add_option("--base", rep.base, "BASE results file");
    rp->add_option("--json", rep.json_out, "Also write the table as JSON");

    CacheArgs cache;
    auto* c = app.add_subcommand("cache-inspect", "Summarize a candidate cache");
    c->add_option("--cache", cache.cache)->required();
    c->add_option("--instance", cache.instance, "Print the cached captions of one instance");

    CLI11_PARSE(app, argc, argv);
    try {
        if (*p) return do_prepare(prep);
        if (*s) {
            ttw::io::sample_instances(samp.input, samp.n, samp.seed, samp.out);
            fmt::print("wrote {} instances to {}\n", samp.n, samp.out);
            return 0;
        }
        if (*r) return do_run(run);
        if (*rp) return do_report(rep);
        if (*c) return do_cache_inspect(cache);
    } catch (const std::exception& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return 1;
    }
    return 2;
}
