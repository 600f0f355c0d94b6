// Copyright 2026 The TTW Authors
// SPDX-License-Identifier: Apache-2.0

#include "ttw/core.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "ttw/random.hpp"
#include "ttw/text.hpp"

namespace ttw {

namespace {

std::string upper(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
    std::replace(out.begin(), out.end(), '-', '_');
    return out;
}

}  // namespace

std::string_view to_string(Dataset d) {
    switch (d) {
        case Dataset::GQA: return "GQA";
        case Dataset::VQAV2: return "VQAV2";
        case Dataset::VQA_RAD: return "VQA_RAD";
        case Dataset::MMMU: return "MMMU";
    }
    return "?";
}

std::string_view to_string(SelectionPolicy p) {
    switch (p) {
        case SelectionPolicy::ARGMAX: return "ARGMAX";
        case SelectionPolicy::ARGMIN: return "ARGMIN";
        case SelectionPolicy::FIRST_ONLY: return "FIRST_ONLY";
    }
    return "?";
}

std::string_view to_string(Condition c) {
    switch (c) {
        case Condition::BASE: return "BASE";
        case Condition::ICL: return "ICL";
        case Condition::TTW: return "TTW";
        case Condition::ABLATION_NO_FILTER: return "ABLATION_NO_FILTER";
        case Condition::ABLATION_INVERSE: return "ABLATION_INVERSE";
    }
    return "?";
}

Dataset parse_dataset(std::string_view s) {
    const std::string u = upper(s);
    if (u == "GQA") return Dataset::GQA;
    if (u == "VQAV2") return Dataset::VQAV2;
    if (u == "VQA_RAD" || u == "VQARAD") return Dataset::VQA_RAD;
    if (u == "MMMU") return Dataset::MMMU;
    throw Error(fmt::format("unknown dataset '{}'", s));
}

SelectionPolicy parse_selection_policy(std::string_view s) {
    const std::string u = upper(s);
    if (u == "ARGMAX") return SelectionPolicy::ARGMAX;
    if (u == "ARGMIN") return SelectionPolicy::ARGMIN;
    if (u == "FIRST_ONLY") return SelectionPolicy::FIRST_ONLY;
    throw Error(fmt::format("unknown selection policy '{}'", s));
}

Condition parse_condition(std::string_view s) {
    const std::string u = upper(s);
    if (u == "BASE") return Condition::BASE;
    if (u == "ICL") return Condition::ICL;
    if (u == "TTW") return Condition::TTW;
    if (u == "ABLATION_NO_FILTER") return Condition::ABLATION_NO_FILTER;
    if (u == "ABLATION_INVERSE") return Condition::ABLATION_INVERSE;
    throw Error(fmt::format("unknown condition '{}'", s));
}

std::optional<SelectionPolicy> policy_for(Condition c) {
    switch (c) {
        case Condition::TTW: return SelectionPolicy::ARGMAX;
        case Condition::ABLATION_NO_FILTER: return SelectionPolicy::FIRST_ONLY;
        case Condition::ABLATION_INVERSE: return SelectionPolicy::ARGMIN;
        default: return std::nullopt;
    }
}

Condition condition_for(SelectionPolicy p) {
    switch (p) {
        case SelectionPolicy::ARGMAX: return Condition::TTW;
        case SelectionPolicy::ARGMIN: return Condition::ABLATION_INVERSE;
        case SelectionPolicy::FIRST_ONLY: return Condition::ABLATION_NO_FILTER;
    }
    return Condition::TTW;
}

// ---------------------------------------------------------------------------
// ImageRef

std::vector<std::uint8_t> ImageRef::load() const {
    if (const auto* bytes = std::get_if<std::vector<std::uint8_t>>(&source_)) {
        if (bytes->empty()) throw Error("image is empty");
        return *bytes;
    }
    const auto& p = std::get<std::filesystem::path>(source_);
    std::ifstream in(p, std::ios::binary);
    if (!in) throw Error(fmt::format("cannot open image '{}'", p.string()));
    std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (data.empty()) throw Error(fmt::format("image '{}' is empty", p.string()));
    return data;
}

std::string ImageRef::content_key() const {
    const auto bytes = load();
    return fmt::format("{:016x}", fnv1a64(std::span<const std::uint8_t>(bytes)));
}

std::string ImageRef::describe() const {
    if (is_path()) return path().string();
    return fmt::format("<bytes:{}>", std::get<std::vector<std::uint8_t>>(source_).size());
}

std::vector<std::string> validate_instance(const TestInstance& instance) {
    std::vector<std::string> v;
    if (instance.instance_id.empty()) v.emplace_back("instance_id must be non-empty");
    if (trim(instance.question).empty()) v.emplace_back("question must be non-empty");
    if (instance.answers.empty()) v.emplace_back("answers must be non-empty");
    if (instance.choices && instance.dataset != Dataset::MMMU)
        v.emplace_back("choices are only allowed for MMMU instances");
    if (instance.choices && instance.choices->empty()) v.emplace_back("choices, when present, must be non-empty");
    try {
        (void)instance.image.load();
    } catch (const Error& e) {
        v.emplace_back(fmt::format("image not resolvable: {}", e.what()));
    }
    return v;
}

// ---------------------------------------------------------------------------
// Prompt bank

AuxiliaryPromptBank::AuxiliaryPromptBank(std::vector<AuxiliaryPrompt> prompts) : prompts_(std::move(prompts)) {
    if (prompts_.empty()) throw Error("prompt bank is empty");
    std::set<std::string> seen;
    for (const auto& p : prompts_) {
        if (p.prompt_id.empty()) throw Error("prompt bank entry with empty prompt_id");
        if (p.text.empty()) throw Error(fmt::format("prompt '{}' has empty text", p.prompt_id));
        if (!seen.insert(p.prompt_id).second) throw Error(fmt::format("duplicate prompt_id '{}'", p.prompt_id));
    }
}

const AuxiliaryPromptBank& default_prompt_bank() {
    static const AuxiliaryPromptBank bank({
        {"signs_text", "Are there any signs, symbols, or text in this image? If so, what do they say?"},
        {"objects_people", "What objects or people are visible in this image?"},
        {"before_after",
         "Based on visual cues, infer what might have happened just before and what might happen right after this "
         "image was captured"},
        {"recon_detailed", "Describe this image in as much detail as possible."},
        {"recon_materials", "What colors, textures, and materials stand out in this image?"},
        {"recon_layout", "How are the objects in this image arranged relative to each other?"},
        {"recon_unusual", "Is there anything unusual or out of place in this image?"},
        {"recon_activity", "What are the people or animals in this image doing?"},
        {"recon_counting", "How many distinct objects can you count in this image, and what are they?"},
        {"recon_setting", "Where might this image have been taken, and what is the overall setting?"},
    });
    return bank;
}

AuxiliaryPromptBank load_prompt_bank(std::string_view document) {
    std::vector<AuxiliaryPrompt> prompts;
    std::size_t line_no = 0;
    for (std::string_view line : split_lines(document)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (trim(line).empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string_view::npos)
            throw Error(fmt::format("prompt bank line {}: expected 'prompt_id<TAB>text'", line_no));
        prompts.push_back({std::string(line.substr(0, tab)), std::string(line.substr(tab + 1))});
    }
    return AuxiliaryPromptBank(std::move(prompts));
}

AuxiliaryPromptBank load_prompt_bank_file(const std::filesystem::path& path) {
    return load_prompt_bank(read_file(path));
}

std::string save_prompt_bank(const AuxiliaryPromptBank& bank) {
    std::string out;
    for (const auto& p : bank.prompts()) out += p.prompt_id + "\t" + p.text + "\n";
    return out;
}

// ---------------------------------------------------------------------------
// Config

std::vector<std::string> validate_config(const WarmupConfig& c) {
    std::vector<std::string> v;
    if (c.candidates_per_prompt < 1) v.emplace_back("candidates_per_prompt must be ≥ 1");
    if (c.selection_policy == SelectionPolicy::FIRST_ONLY && c.candidates_per_prompt != 1)
        v.emplace_back("FIRST_ONLY requires k == 1");
    if (!(std::isfinite(c.generation_temperature) && c.generation_temperature > 0))
        v.emplace_back("generation_temperature must be > 0");
    if (c.generation_max_new_tokens < 1) v.emplace_back("generation_max_new_tokens must be ≥ 1");
    if (!(std::isfinite(c.learning_rate) && c.learning_rate > 0)) v.emplace_back("learning_rate must be > 0");
    if (c.epochs < 1) v.emplace_back("epochs must be ≥ 1");
    if (c.batch_size < 1) v.emplace_back("batch_size must be ≥ 1");
    if (!(c.adamw.beta1 >= 0 && c.adamw.beta1 < 1)) v.emplace_back("adamw_beta1 must be in [0, 1)");
    if (!(c.adamw.beta2 >= 0 && c.adamw.beta2 < 1)) v.emplace_back("adamw_beta2 must be in [0, 1)");
    if (!(std::isfinite(c.adamw.eps) && c.adamw.eps > 0)) v.emplace_back("adamw_eps must be > 0");
    if (!(std::isfinite(c.adamw.weight_decay) && c.adamw.weight_decay >= 0))
        v.emplace_back("weight_decay must be ≥ 0");
    return v;
}

std::vector<std::string> config_warnings(const WarmupConfig& c) {
    std::vector<std::string> w;
    if (c.selection_policy != SelectionPolicy::FIRST_ONLY && c.candidates_per_prompt == 1)
        w.push_back(fmt::format("{} with a single candidate per prompt performs no filtering",
                                to_string(c.selection_policy)));
    return w;
}

namespace {

std::string format_double(double x) {
    std::array<char, 64> buf{};
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), x);
    return std::string(buf.data(), ptr);
}

double parse_double(std::string_view key, std::string_view s) {
    double x = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
    if (ec != std::errc() || ptr != s.data() + s.size())
        throw Error(fmt::format("config key '{}': '{}' is not a number", key, s));
    return x;
}

template <typename Int>
Int parse_int(std::string_view key, std::string_view s) {
    Int x = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
    if (ec != std::errc() || ptr != s.data() + s.size())
        throw Error(fmt::format("config key '{}': '{}' is not an integer", key, s));
    return x;
}

bool parse_bool(std::string_view key, std::string_view s) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw Error(fmt::format("config key '{}': '{}' is not a boolean", key, s));
}

}  // namespace

std::string serialize_config(const WarmupConfig& c) {
    std::string out;
    auto put = [&](std::string_view k, const std::string& v) { out += fmt::format("{} = {}\n", k, v); };
    put("candidates_per_prompt", std::to_string(c.candidates_per_prompt));
    put("generation_temperature", format_double(c.generation_temperature));
    put("generation_max_new_tokens", std::to_string(c.generation_max_new_tokens));
    put("selection_policy", std::string(to_string(c.selection_policy)));
    put("learning_rate", format_double(c.learning_rate));
    put("adamw_beta1", format_double(c.adamw.beta1));
    put("adamw_beta2", format_double(c.adamw.beta2));
    put("adamw_eps", format_double(c.adamw.eps));
    put("weight_decay", format_double(c.adamw.weight_decay));
    put("batch_size", std::to_string(c.batch_size));
    put("epochs", std::to_string(c.epochs));
    put("shuffle_each_epoch", c.shuffle_each_epoch ? "true" : "false");
    put("supervise_prompt_tokens", c.supervise_prompt_tokens ? "true" : "false");
    put("rng_seed", std::to_string(c.rng_seed));
    return out;
}

WarmupConfig parse_config(std::string_view document, WarmupConfig c) {
    std::set<std::string, std::less<>> seen;
    std::size_t line_no = 0;
    for (std::string_view raw : split_lines(document)) {
        ++line_no;
        std::string_view line = raw;
        if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) throw Error(fmt::format("config line {}: expected 'key = value'", line_no));
        const std::string_view key = trim(line.substr(0, eq));
        const std::string_view value = trim(line.substr(eq + 1));
        if (!seen.insert(std::string(key)).second) throw Error(fmt::format("config key '{}' given twice", key));

        if (key == "candidates_per_prompt") c.candidates_per_prompt = parse_int<int>(key, value);
        else if (key == "generation_temperature") c.generation_temperature = parse_double(key, value);
        else if (key == "generation_max_new_tokens") c.generation_max_new_tokens = parse_int<int>(key, value);
        else if (key == "selection_policy") c.selection_policy = parse_selection_policy(value);
        else if (key == "learning_rate") c.learning_rate = parse_double(key, value);
        else if (key == "adamw_beta1") c.adamw.beta1 = parse_double(key, value);
        else if (key == "adamw_beta2") c.adamw.beta2 = parse_double(key, value);
        else if (key == "adamw_eps") c.adamw.eps = parse_double(key, value);
        else if (key == "weight_decay") c.adamw.weight_decay = parse_double(key, value);
        else if (key == "batch_size") c.batch_size = parse_int<int>(key, value);
        else if (key == "epochs") c.epochs = parse_int<int>(key, value);
        else if (key == "shuffle_each_epoch") c.shuffle_each_epoch = parse_bool(key, value);
        else if (key == "supervise_prompt_tokens") c.supervise_prompt_tokens = parse_bool(key, value);
        else if (key == "rng_seed") c.rng_seed = parse_int<std::uint64_t>(key, value);
        else throw Error(fmt::format("unknown config key '{}'", key));
    }
    return c;
}

WarmupConfig load_config_file(const std::filesystem::path& path, WarmupConfig base) {
    return parse_config(read_file(path), base);
}

}  // namespace ttw
