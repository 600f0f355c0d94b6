// Copyright 2026 The TTW Authors
// SPDX-License-Identifier: Apache-2.0

#include "ttw/prepare.hpp"

#include <map>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "ttw/io.hpp"
#include "ttw/random.hpp"
#include "ttw/text.hpp"
#include "ttw/toy_backend.hpp"
#include "ttw/toy_world.hpp"

namespace ttw::prepare {

using nlohmann::json;

namespace {

json load_json(const std::filesystem::path& path) {
    try {
        return json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw Error(fmt::format("{}: {}", path.string(), e.what()));
    }
}

// Answers are sometimes numbers in the raw files.
std::string as_text(const json& j) {
    if (j.is_string()) return j.get<std::string>();
    if (j.is_number_integer()) return std::to_string(j.get<long long>());
    return j.dump();
}

// MMMU stores options as a Python list literal in some exports.
std::vector<std::string> parse_options(const json& j) {
    if (j.is_array()) return j.get<std::vector<std::string>>();
    if (!j.is_string()) throw Error("options must be a list or a list literal");
    std::vector<std::string> out;
    const std::string s = j.get<std::string>();
    std::size_t i = 0;
    while (i < s.size()) {
        const char q = s[i];
        if (q != '\'' && q != '"') {
            ++i;
            continue;
        }
        std::string item;
        std::size_t k = i + 1;
        for (; k < s.size() && s[k] != q; ++k) {
            if (s[k] == '\\' && k + 1 < s.size()) ++k;
            item += s[k];
        }
        out.push_back(item);
        i = k + 1;
    }
    return out;
}

}  // namespace

std::vector<TestInstance> convert_gqa(const std::filesystem::path& questions, const std::filesystem::path& images_dir) {
    const json doc = load_json(questions);
    std::vector<TestInstance> out;
    for (const auto& [qid, q] : doc.items()) {
        TestInstance inst;
        inst.instance_id = "gqa-" + qid;
        inst.image = ImageRef(images_dir / (q.at("imageId").get<std::string>() + ".jpg"));
        inst.question = q.at("question").get<std::string>();
        inst.answers = {as_text(q.at("answer"))};
        inst.dataset = Dataset::GQA;
        out.push_back(std::move(inst));
    }
    return out;
}

std::vector<TestInstance> convert_vqav2(const std::filesystem::path& questions, const std::filesystem::path& annotations,
                                        const std::filesystem::path& images_dir, const std::string& image_template) {
    const json qdoc = load_json(questions);
    const json adoc = load_json(annotations);
    std::map<long long, std::vector<std::string>> answers;
    for (const auto& a : adoc.at("annotations")) {
        auto& list = answers[a.at("question_id").get<long long>()];
        for (const auto& ans : a.at("answers")) list.push_back(as_text(ans.at("answer")));
    }
    const auto slot = image_template.find("{image_id}");
    if (slot == std::string::npos) throw Error("image template needs an {image_id} slot");

    std::vector<TestInstance> out;
    for (const auto& q : qdoc.at("questions")) {
        const long long qid = q.at("question_id").get<long long>();
        auto it = answers.find(qid);
        if (it == answers.end()) throw Error(fmt::format("question {} has no annotation", qid));
        std::string name = image_template;
        name.replace(slot, 10, fmt::format("{:012d}", q.at("image_id").get<long long>()));
        TestInstance inst;
        inst.instance_id = fmt::format("vqav2-{}", qid);
        inst.image = ImageRef(images_dir / name);
        inst.question = q.at("question").get<std::string>();
        inst.answers = it->second;
        inst.dataset = Dataset::VQAV2;
        out.push_back(std::move(inst));
    }
    return out;
}

std::vector<TestInstance> convert_vqa_rad(const std::filesystem::path& json_file, const std::filesystem::path& images_dir) {
    const json doc = load_json(json_file);
    std::vector<TestInstance> out;
    for (const auto& q : doc) {
        TestInstance inst;
        inst.instance_id = "vqarad-" + as_text(q.at("qid"));
        inst.image = ImageRef(images_dir / q.at("image_name").get<std::string>());
        inst.question = q.at("question").get<std::string>();
        inst.answers = {as_text(q.at("answer"))};
        inst.dataset = Dataset::VQA_RAD;
        out.push_back(std::move(inst));
    }
    return out;
}

std::vector<TestInstance> convert_mmmu(const std::filesystem::path& jsonl, const std::filesystem::path& images_dir) {
    std::vector<TestInstance> out;
    const std::string doc = read_file(jsonl);
    std::size_t line_no = 0;
    for (std::string_view line : split_lines(doc)) {
        ++line_no;
        if (trim(line).empty()) continue;
        try {
            const json q = json::parse(line);
            TestInstance inst;
            inst.instance_id = "mmmu-" + as_text(q.at("id"));
            const std::string image = q.contains("image") ? q["image"].get<std::string>() : q.at("image_1").get<std::string>();
            inst.image = ImageRef(images_dir / image);
            inst.question = q.at("question").get<std::string>();
            inst.answers = {as_text(q.at("answer"))};
            if (q.contains("options")) {
                auto options = parse_options(q["options"]);
                if (!options.empty()) inst.choices = std::move(options);
            }
            inst.dataset = Dataset::MMMU;
            out.push_back(std::move(inst));
        } catch (const std::exception& e) {
            throw Error(fmt::format("{}:{}: {}", jsonl.string(), line_no, e.what()));
        }
    }
    return out;
}

ToyDataset make_toy_dataset(const std::filesystem::path& dir, std::size_t n, std::uint64_t seed, int pretrain_steps) {
    if (n == 0) throw Error("toy dataset needs at least one instance");
    const std::filesystem::path images = dir / "images";
    std::filesystem::create_directories(images);

    toy::World world;
    toy::Suite suite = toy::make_suite(world, n, seed);
    std::string references;
    std::vector<TestInstance> instances;
    for (std::size_t i = 0; i < n; ++i) {
        const std::string name = suite.instances[i].instance_id + ".bin";
        const auto& bytes = suite.scenes[i].image;
        write_file_atomic(images / name, std::string(bytes.begin(), bytes.end()));
        TestInstance inst = suite.instances[i];
        inst.image = ImageRef(images / name);
        instances.push_back(std::move(inst));
        references += fmt::format("images/{}\t{}\n", name, suite.scenes[i].color);
    }

    ToyDataset out;
    out.instances = dir / "instances.jsonl";
    out.references = dir / "references.tsv";
    out.weights = dir / "toy_weights.bin";
    io::write_instances(out.instances, instances);
    write_file_atomic(out.references, references);

    ToyBackend backend;
    toy::PretrainOptions opts;
    opts.steps = pretrain_steps;
    opts.seed = derive_seed(seed, "pretrain");
    const auto report = toy::pretrain(backend, world, default_prompt_bank(), opts);
    backend.save_weights(out.weights);
    out.pretrain_first_loss = report.first_loss;
    out.pretrain_last_loss = report.last_loss;
    return out;
}

}  // namespace ttw::prepare
