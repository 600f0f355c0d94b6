// Copyright 2026 The TTW Authors
// SPDX-License-Identifier: Apache-2.0
//
// Inference prompting, answer parsing and accuracy metrics for GQA, VQAv2,
// VQA-Rad and MMMU. Everything here is a pure function of its inputs.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ttw/backend.hpp"
#include "ttw/core.hpp"

namespace ttw::eval {

inline constexpr std::string_view kShortAnswerInstruction = "Answer the question using a single word or phrase";
inline constexpr std::string_view kAnswerMarker = "Correct answer:";

/// Guideline block appended after the MMMU question.
std::string_view mmmu_guidelines();

struct PromptTemplate {
    Dataset dataset;
    std::string text;  // "{question}" marks the slot
    GenerationParams params;
};

PromptTemplate prompt_template(Dataset dataset);

struct InferencePrompt {
    std::string text;
    GenerationParams params;
};

/// "What is X?\n(A) a\n(B) b" for multiple-choice MMMU questions.
std::string format_question(const TestInstance& instance);

/// `seed` only matters for datasets decoded with sampling (MMMU).
InferencePrompt build_inference_prompt(const TestInstance& instance, std::uint64_t seed = 0);

/// Selected captions in bank order, joined by single spaces, placed in front
/// of the evaluation prompt. An empty dataset falls back to the evaluation
/// prompt and appends a warning.
std::string build_icl_prompt(const TestInstance& instance, const WarmupDataset& dataset,
                             std::vector<std::string>* warnings = nullptr);

/// Lowercase, whitespace collapsed, leading/trailing punctuation removed.
std::string normalize_answer(std::string_view text);

double score_containment(std::string_view response, const std::vector<std::string>& answers);

/// Number of annotator answers contained in the normalized response.
int vqa_matches(std::string_view response, const std::vector<std::string>& annotator_answers);
/// min(matches / 3, 1).
double score_vqav2_soft(std::string_view response, const std::vector<std::string>& annotator_answers);

/// Total and deterministic. Multiple choice: bracketed letter after the last
/// "Correct answer:", else the last bracketed option letter anywhere, else
/// the first option. Open questions: text after the last marker, else the
/// whole trimmed response.
std::string parse_mmmu_answer(std::string_view response, const std::optional<std::vector<std::string>>& choices);

struct Graded {
    std::string parsed_answer;
    double score = 0.0;
};

Graded grade(const TestInstance& instance, std::string_view response);

struct AggregateResult {
    Condition condition = Condition::BASE;
    Dataset dataset = Dataset::GQA;
    double accuracy = 0.0;  // percent
    std::optional<double> relative_improvement_vs_base;  // percent
    std::size_t n = 0;
};

/// 100 * (accuracy - base) / base.
double relative_improvement(double accuracy, double base_accuracy);

/// Throws ttw::Error on an empty list or mixed (dataset, condition).
AggregateResult aggregate(const std::vector<EvalRecord>& records, const std::optional<AggregateResult>& base = {});

}  // namespace ttw::eval
