// Copyright 2026 The TTW Authors
// SPDX-License-Identifier: Apache-2.0
//
// Domain types shared by every stage of the warmup pipeline.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace ttw {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Dataset { GQA, VQAV2, VQA_RAD, MMMU };

enum class SelectionPolicy { ARGMAX, ARGMIN, FIRST_ONLY };

enum class Condition { BASE, ICL, TTW, ABLATION_NO_FILTER, ABLATION_INVERSE };

std::string_view to_string(Dataset d);
std::string_view to_string(SelectionPolicy p);
std::string_view to_string(Condition c);

// Parsers accept the canonical names above (case-insensitive; "VQA-RAD" and
// "VQA_RAD" are both accepted). Unknown names throw ttw::Error.
Dataset parse_dataset(std::string_view s);
SelectionPolicy parse_selection_policy(std::string_view s);
Condition parse_condition(std::string_view s);

// TTW -> ARGMAX, ABLATION_NO_FILTER -> FIRST_ONLY, ABLATION_INVERSE -> ARGMIN.
// BASE and ICL carry no adaptation policy.
std::optional<SelectionPolicy> policy_for(Condition c);
Condition condition_for(SelectionPolicy p);

/// Image handed to backends and scorers: a file on disk or an in-memory blob.
class ImageRef {
public:
    ImageRef() = default;
    explicit ImageRef(std::filesystem::path path) : source_(std::move(path)) {}
    explicit ImageRef(std::vector<std::uint8_t> bytes) : source_(std::move(bytes)) {}

    bool is_path() const { return std::holds_alternative<std::filesystem::path>(source_); }
    const std::filesystem::path& path() const { return std::get<std::filesystem::path>(source_); }

    /// Raw bytes of the image. Throws ttw::Error when the file is missing,
    /// unreadable or empty.
    std::vector<std::uint8_t> load() const;

    /// Stable content key (FNV-1a of the bytes, hex).
    std::string content_key() const;

    /// Path string, or "<bytes:N>" for in-memory images.
    std::string describe() const;

private:
    std::variant<std::filesystem::path, std::vector<std::uint8_t>> source_;
};

struct TestInstance {
    std::string instance_id;
    ImageRef image;
    std::string question;
    std::vector<std::string> answers;
    std::optional<std::vector<std::string>> choices;
    Dataset dataset = Dataset::GQA;
};

/// Returns violated invariants; an empty list means the instance is usable.
/// Image resolvability is checked too (file exists and is non-empty).
std::vector<std::string> validate_instance(const TestInstance& instance);

struct AuxiliaryPrompt {
    std::string prompt_id;
    std::string text;
};

class AuxiliaryPromptBank {
public:
    /// Throws ttw::Error on an empty list or duplicate prompt ids.
    explicit AuxiliaryPromptBank(std::vector<AuxiliaryPrompt> prompts);

    std::size_t size() const { return prompts_.size(); }
    const std::vector<AuxiliaryPrompt>& prompts() const { return prompts_; }
    const AuxiliaryPrompt& operator[](std::size_t i) const { return prompts_[i]; }

private:
    std::vector<AuxiliaryPrompt> prompts_;
};

/// Ten open-ended perception prompts. Three are the prompts used verbatim by
/// the original method description; the other seven are reconstructions in
/// the same style (ids prefixed "recon_").
const AuxiliaryPromptBank& default_prompt_bank();

/// Parses the `prompt_id<TAB>prompt text` line format. Blank lines are
/// skipped. Order is preserved.
AuxiliaryPromptBank load_prompt_bank(std::string_view document);
AuxiliaryPromptBank load_prompt_bank_file(const std::filesystem::path& path);
std::string save_prompt_bank(const AuxiliaryPromptBank& bank);

struct AdamWParams {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;

    bool operator==(const AdamWParams&) const = default;
};

struct WarmupConfig {
    int candidates_per_prompt = 10;
    double generation_temperature = 0.75;
    int generation_max_new_tokens = 128;
    SelectionPolicy selection_policy = SelectionPolicy::ARGMAX;
    double learning_rate = 1e-6;
    AdamWParams adamw;
    int batch_size = 5;
    int epochs = 2;
    bool shuffle_each_epoch = true;
    bool supervise_prompt_tokens = false;
    std::uint64_t rng_seed = 0;

    bool operator==(const WarmupConfig&) const = default;
};

std::vector<std::string> validate_config(const WarmupConfig& config);

/// Non-fatal observations (e.g. a filtering policy with a single candidate).
std::vector<std::string> config_warnings(const WarmupConfig& config);

/// Flat `key = value` document, one field per line, `#` comments allowed.
/// Doubles are written in shortest round-trip form.
std::string serialize_config(const WarmupConfig& config);

/// Parses a config document on top of `base`. Unknown keys, malformed values
/// and duplicate keys throw ttw::Error. Missing keys keep `base` values.
WarmupConfig parse_config(std::string_view document, WarmupConfig base = {});
WarmupConfig load_config_file(const std::filesystem::path& path, WarmupConfig base = {});

struct CandidateCaption {
    std::string caption;
    std::optional<double> score;
    bool empty = false;  // generation stayed empty after the retry
};

struct ScoredCandidateSet {
    std::string prompt_id;
    std::string prompt_text;
    std::vector<CandidateCaption> candidates;
    int selected_index = -1;
};

struct WarmupItem {
    std::string prompt_id;
    std::string prompt_text;
    std::string target_caption;
};

struct WarmupDataset {
    std::vector<WarmupItem> items;
    std::vector<std::string> warnings;
};

struct EvalRecord {
    std::string instance_id;
    Dataset dataset = Dataset::GQA;
    Condition condition = Condition::BASE;
    std::string raw_response;
    std::string parsed_answer;
    double score = 0.0;
    bool failed = false;
    std::vector<std::string> diagnostics;
};

}  // namespace ttw
