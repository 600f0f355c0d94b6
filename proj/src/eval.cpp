// Copyright 2026 The TTW Authors
// SPDX-License-Identifier: Apache-2.0

#include "ttw/eval.hpp"

#include <algorithm>
#include <cctype>

#include <fmt/format.h>

#include "ttw/random.hpp"
#include "ttw/text.hpp"

namespace ttw::eval {

namespace {

constexpr std::string_view kMmmuGuidelines =
    "Answer the question above by strictly following the guidelines below. Your main goal is to provide the correct "
    "answer in the response. Do not deviate from the guidelines below.\n"
    "\n"
    "1. Be Concise\n"
    "   - Provide a single word or brief phrase for the answer whenever possible, adhering to the final answer "
    "format.\n"
    "\n"
    "2. Multiple-Choice (A, B, C, D)\n"
    "   - Respond only with the correct letter in square brackets, for example, [A].\n"
    "\n"
    "3. If Reasoning is Needed\n"
    "   - Do not end your response with reasoning alone; always include the final answer as specified below.\n"
    "\n"
    "4. Final Answer Format\n"
    "   - The correct answer must appear on the last line, preceded by the text: \"Correct answer:\"\n"
    "   - The answer should be either a single word/phrase or a letter in square brackets (e.g., [A]).\n"
    "   - If unsure, provide your best logical guess.";

constexpr std::string_view kIclPrefix = "Here are a detailed list of captions of the image: ";
constexpr std::string_view kIclSuffix = " Answer the following question using these captions. ";

std::string replace_slot(std::string_view tmpl, std::string_view value) {
    constexpr std::string_view slot = "{question}";
    std::string out(tmpl);
    const auto pos = out.find(slot);
    if (pos != std::string::npos) out.replace(pos, slot.size(), value);
    return out;
}

bool is_bare_letter(std::string_view s) {
    s = trim(s);
    if (s.size() == 3 && s.front() == '[' && s.back() == ']') s = s.substr(1, 1);
    if (s.size() == 3 && s.front() == '(' && s.back() == ')') s = s.substr(1, 1);
    return s.size() == 1 && std::isupper(static_cast<unsigned char>(s[0]));
}

char letter_of(std::string_view s) {
    s = trim(s);
    if (s.size() == 3) s = s.substr(1, 1);
    return static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
}

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

std::size_t rfind_marker(std::string_view response) {
    return lower(response).rfind(lower(kAnswerMarker));
}

// First "[X]" in `text` whose X is one of the first `n` option letters.
std::optional<char> first_bracketed(std::string_view text, std::size_t n) {
    for (std::size_t i = 0; i + 2 < text.size(); ++i) {
        if (text[i] != '[' || text[i + 2] != ']') continue;
        const char c = static_cast<char>(std::toupper(static_cast<unsigned char>(text[i + 1])));
        if (c >= 'A' && static_cast<std::size_t>(c - 'A') < n) return c;
    }
    return std::nullopt;
}

std::optional<char> last_bracketed(std::string_view text, std::size_t n) {
    for (std::size_t i = text.size(); i >= 3; --i) {
        const std::size_t s = i - 3;
        if (text[s] != '[' || text[s + 2] != ']') continue;
        const char c = static_cast<char>(std::toupper(static_cast<unsigned char>(text[s + 1])));
        if (c >= 'A' && static_cast<std::size_t>(c - 'A') < n) return c;
    }
    return std::nullopt;
}

}  // namespace

std::string_view mmmu_guidelines() { return kMmmuGuidelines; }

PromptTemplate prompt_template(Dataset dataset) {
    if (dataset == Dataset::MMMU) {
        GenerationParams p;
        p.mode = GenerationParams::Mode::SAMPLED;
        p.temperature = 1.0;
        p.top_k = 50;
        p.top_p = 0.8;
        p.max_new_tokens = 512;
        return {dataset, fmt::format("{{question}}\n\n{}", kMmmuGuidelines), p};
    }
    return {dataset, fmt::format("{{question}} {}", kShortAnswerInstruction), GenerationParams::greedy(128)};
}

std::string format_question(const TestInstance& instance) {
    std::string q(trim(instance.question));
    if (instance.dataset == Dataset::MMMU && instance.choices) {
        const auto& choices = *instance.choices;
        if (choices.size() > 26) throw Error("MMMU instance has more than 26 choices");
        for (std::size_t i = 0; i < choices.size(); ++i)
            q += fmt::format("\n({}) {}", static_cast<char>('A' + i), trim(choices[i]));
    }
    return q;
}

InferencePrompt build_inference_prompt(const TestInstance& instance, std::uint64_t seed) {
    if (trim(instance.question).empty()) throw Error(fmt::format("instance '{}' has an empty question", instance.instance_id));
    if (instance.dataset == Dataset::MMMU && !instance.choices && instance.answers.size() == 1 &&
        is_bare_letter(instance.answers.front()))
        throw Error(fmt::format("MMMU multiple-choice instance '{}' has no choices", instance.instance_id));
    PromptTemplate t = prompt_template(instance.dataset);
    InferencePrompt out{replace_slot(t.text, format_question(instance)), t.params};
    out.params.seed = seed;
    return out;
}

std::string build_icl_prompt(const TestInstance& instance, const WarmupDataset& dataset,
                             std::vector<std::string>* warnings) {
    const std::string base = build_inference_prompt(instance).text;
    if (dataset.items.empty()) {
        if (warnings) warnings->push_back("no auxiliary captions; using the evaluation prompt alone");
        return base;
    }
    std::string captions;
    for (const auto& item : dataset.items) {
        if (!captions.empty()) captions += ' ';
        captions += trim(item.target_caption);
    }
    // The template closes the caption list with a period; a list that already
    // ends in terminal punctuation is not given a second one.
    const char last = captions.empty() ? '\0' : captions.back();
    if (last != '.' && last != '!' && last != '?') captions += '.';
    return fmt::format("{}{}{}{}", kIclPrefix, captions, kIclSuffix, base);
}

std::string normalize_answer(std::string_view text) {
    std::string collapsed;
    collapsed.reserve(text.size());
    bool pending_space = false;
    for (unsigned char c : text) {
        if (std::isspace(c)) {
            pending_space = !collapsed.empty();
            continue;
        }
        if (pending_space) collapsed.push_back(' ');
        pending_space = false;
        collapsed.push_back(static_cast<char>(std::tolower(c)));
    }
    std::size_t b = 0, e = collapsed.size();
    while (b < e && (std::ispunct(static_cast<unsigned char>(collapsed[b])) || collapsed[b] == ' ')) ++b;
    while (e > b && (std::ispunct(static_cast<unsigned char>(collapsed[e - 1])) || collapsed[e - 1] == ' ')) --e;
    return collapsed.substr(b, e - b);
}

double score_containment(std::string_view response, const std::vector<std::string>& answers) {
    const std::string r = normalize_answer(response);
    if (r.empty()) return 0.0;
    for (const auto& a : answers) {
        const std::string n = normalize_answer(a);
        if (!n.empty() && r.find(n) != std::string::npos) return 1.0;
    }
    return 0.0;
}

int vqa_matches(std::string_view response, const std::vector<std::string>& annotator_answers) {
    const std::string r = normalize_answer(response);
    if (r.empty()) return 0;
    int m = 0;
    for (const auto& a : annotator_answers) {
        const std::string n = normalize_answer(a);
        if (!n.empty() && r.find(n) != std::string::npos) ++m;
    }
    return m;
}

double score_vqav2_soft(std::string_view response, const std::vector<std::string>& annotator_answers) {
    return std::min(vqa_matches(response, annotator_answers), 3) / 3.0;
}

std::string parse_mmmu_answer(std::string_view response, const std::optional<std::vector<std::string>>& choices) {
    const std::size_t marker = rfind_marker(response);
    if (choices && !choices->empty()) {
        const std::size_t n = choices->size();
        if (marker != std::string::npos) {
            if (auto c = first_bracketed(response.substr(marker + kAnswerMarker.size()), n)) return std::string(1, *c);
        }
        if (auto c = last_bracketed(response, n)) return std::string(1, *c);
        return "A";
    }
    if (marker != std::string::npos) {
        const std::string_view after = trim(response.substr(marker + kAnswerMarker.size()));
        if (!after.empty()) return std::string(after);
    }
    return std::string(trim(response));
}

Graded grade(const TestInstance& instance, std::string_view response) {
    Graded g;
    switch (instance.dataset) {
        case Dataset::GQA:
        case Dataset::VQA_RAD:
            g.parsed_answer = std::string(trim(response));
            g.score = score_containment(response, instance.answers);
            break;
        case Dataset::VQAV2:
            g.parsed_answer = std::string(trim(response));
            g.score = score_vqav2_soft(response, instance.answers);
            break;
        case Dataset::MMMU:
            g.parsed_answer = parse_mmmu_answer(response, instance.choices);
            if (instance.choices && !instance.choices->empty()) {
                const auto& gold = instance.answers.front();
                char gold_letter = 0;
                if (is_bare_letter(gold)) {
                    gold_letter = letter_of(gold);
                } else {
                    const std::string want = normalize_answer(gold);
                    for (std::size_t i = 0; i < instance.choices->size(); ++i)
                        if (normalize_answer((*instance.choices)[i]) == want) gold_letter = static_cast<char>('A' + i);
                }
                g.score = (gold_letter != 0 && g.parsed_answer.size() == 1 && g.parsed_answer[0] == gold_letter) ? 1.0 : 0.0;
            } else {
                g.score = score_containment(g.parsed_answer, instance.answers);
            }
            break;
    }
    return g;
}

double relative_improvement(double accuracy, double base_accuracy) {
    if (base_accuracy == 0.0) throw Error("relative improvement is undefined for a zero base accuracy");
    return 100.0 * (accuracy - base_accuracy) / base_accuracy;
}

AggregateResult aggregate(const std::vector<EvalRecord>& records, const std::optional<AggregateResult>& base) {
    if (records.empty()) throw Error("cannot aggregate an empty record list");
    AggregateResult out;
    out.condition = records.front().condition;
    out.dataset = records.front().dataset;
    out.n = records.size();
    double sum = 0.0;
    for (const auto& r : records) {
        if (r.condition != out.condition || r.dataset != out.dataset)
            throw Error("aggregate() needs records of a single (dataset, condition)");
        sum += r.score;
    }
    out.accuracy = 100.0 * sum / static_cast<double>(records.size());
    if (base && base->accuracy != 0.0) out.relative_improvement_vs_base = relative_improvement(out.accuracy, base->accuracy);
    return out;
}

}  // namespace ttw::eval
