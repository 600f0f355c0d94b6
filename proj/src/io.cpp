// Copyright 2026 The TTW Authors
// SPDX-License-Identifier: Apache-2.0

#include "ttw/io.hpp"

#include <numeric>

#include <fmt/format.h>

#include "ttw/random.hpp"
#include "ttw/text.hpp"

namespace ttw::io {

using nlohmann::json;

namespace {

std::filesystem::path base_dir_of(const std::filesystem::path& file) {
    auto dir = file.parent_path();
    return dir.empty() ? std::filesystem::path(".") : dir;
}

json report_to_json(const AdaptationReport& r) {
    json j = {{"steps", r.steps}, {"epoch_mean_loss", r.epoch_mean_loss}, {"step_losses", r.step_losses}};
    j["loss_before"] = r.loss_before ? json(*r.loss_before) : json(nullptr);
    j["loss_after"] = r.loss_after ? json(*r.loss_after) : json(nullptr);
    return j;
}

AdaptationReport report_from_json(const json& j) {
    AdaptationReport r;
    r.steps = j.at("steps").get<int>();
    r.epoch_mean_loss = j.at("epoch_mean_loss").get<std::vector<double>>();
    r.step_losses = j.value("step_losses", std::vector<double>{});
    if (j.contains("loss_before") && !j["loss_before"].is_null()) r.loss_before = j["loss_before"].get<double>();
    if (j.contains("loss_after") && !j["loss_after"].is_null()) r.loss_after = j["loss_after"].get<double>();
    return r;
}

}  // namespace

json instance_to_json(const TestInstance& inst, const std::filesystem::path& relative_to) {
    if (!inst.image.is_path()) throw Error(fmt::format("instance '{}' has an in-memory image", inst.instance_id));
    std::filesystem::path image = inst.image.path();
    if (!relative_to.empty()) image = std::filesystem::relative(std::filesystem::absolute(image), std::filesystem::absolute(relative_to));
    json j = {{"instance_id", inst.instance_id},
              {"image", image.generic_string()},
              {"question", inst.question},
              {"answers", inst.answers}};
    if (inst.choices) j["choices"] = *inst.choices;
    j["dataset"] = std::string(to_string(inst.dataset));
    return j;
}

TestInstance instance_from_json(const json& j, const std::filesystem::path& base_dir) {
    TestInstance inst;
    inst.instance_id = j.at("instance_id").get<std::string>();
    std::filesystem::path image(j.at("image").get<std::string>());
    if (image.is_relative() && !base_dir.empty()) image = base_dir / image;
    inst.image = ImageRef(image.lexically_normal());
    inst.question = j.at("question").get<std::string>();
    inst.answers = j.at("answers").get<std::vector<std::string>>();
    if (j.contains("choices") && !j["choices"].is_null()) inst.choices = j["choices"].get<std::vector<std::string>>();
    inst.dataset = parse_dataset(j.at("dataset").get<std::string>());
    if (inst.answers.empty()) throw Error(fmt::format("instance '{}' has no answers", inst.instance_id));
    return inst;
}

std::vector<TestInstance> read_instances(const std::filesystem::path& path) {
    const std::string doc = read_file(path);
    const auto base = base_dir_of(path);
    std::vector<TestInstance> out;
    std::size_t line_no = 0;
    for (std::string_view line : split_lines(doc)) {
        ++line_no;
        if (trim(line).empty()) continue;
        try {
            out.push_back(instance_from_json(json::parse(line), base));
        } catch (const std::exception& e) {
            throw Error(fmt::format("{}:{}: {}", path.string(), line_no, e.what()));
        }
    }
    return out;
}

void write_instances(const std::filesystem::path& path, const std::vector<TestInstance>& instances) {
    std::string doc;
    const auto base = base_dir_of(path);
    for (const auto& inst : instances) doc += instance_to_json(inst, base).dump() + "\n";
    write_file_atomic(path, doc);
}

void sample_instances(const std::filesystem::path& input, std::size_t n, std::uint64_t seed,
                      const std::filesystem::path& output) {
    const auto instances = read_instances(input);
    if (n == 0) throw Error("sample size must be at least 1");
    if (n > instances.size())
        throw Error(fmt::format("cannot sample {} instances from a file of {}", n, instances.size()));
    std::vector<std::size_t> idx(instances.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(derive_seed(seed, "sample"));
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(idx.size() - i));
        std::swap(idx[i], idx[j]);
    }
    std::vector<TestInstance> picked;
    picked.reserve(n);
    for (std::size_t i = 0; i < n; ++i) picked.push_back(instances[idx[i]]);
    write_instances(output, picked);
}

std::string to_json_line(const ResultLine& line) {
    const auto& r = line.record;
    json j = {{"instance_id", r.instance_id},
              {"dataset", std::string(to_string(r.dataset))},
              {"condition", std::string(to_string(r.condition))},
              {"raw_response", r.raw_response},
              {"parsed_answer", r.parsed_answer},
              {"score", r.score},
              {"failed", r.failed},
              {"diagnostics", r.diagnostics}};
    if (line.adaptation) j["adaptation"] = report_to_json(*line.adaptation);
    return j.dump() + "\n";
}

std::optional<ResultLine> parse_result_line(std::string_view text) {
    if (trim(text).empty()) return std::nullopt;
    try {
        const json j = json::parse(text);
        ResultLine line;
        auto& r = line.record;
        r.instance_id = j.at("instance_id").get<std::string>();
        r.dataset = parse_dataset(j.at("dataset").get<std::string>());
        r.condition = parse_condition(j.at("condition").get<std::string>());
        r.raw_response = j.at("raw_response").get<std::string>();
        r.parsed_answer = j.at("parsed_answer").get<std::string>();
        r.score = j.at("score").get<double>();
        r.failed = j.value("failed", false);
        r.diagnostics = j.value("diagnostics", std::vector<std::string>{});
        if (j.contains("adaptation")) line.adaptation = report_from_json(j["adaptation"]);
        if (!(r.score >= 0.0 && r.score <= 1.0)) return std::nullopt;
        return line;
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

std::vector<ResultLine> read_results(const std::filesystem::path& path, std::size_t* malformed) {
    std::vector<ResultLine> out;
    std::size_t bad = 0;
    if (std::filesystem::exists(path)) {
        const std::string doc = read_file(path);
        for (std::string_view line : split_lines(doc)) {
            if (trim(line).empty()) continue;
            if (auto r = parse_result_line(line)) out.push_back(std::move(*r));
            else ++bad;
        }
    }
    if (malformed) *malformed = bad;
    return out;
}

json aggregate_to_json(const eval::AggregateResult& a) {
    json j = {{"dataset", std::string(to_string(a.dataset))},
              {"condition", std::string(to_string(a.condition))},
              {"accuracy", a.accuracy},
              {"n", a.n}};
    j["relative_improvement_vs_base"] =
        a.relative_improvement_vs_base ? json(*a.relative_improvement_vs_base) : json(nullptr);
    return j;
}

}  // namespace ttw::io
