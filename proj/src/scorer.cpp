// Copyright 2026 The TTW Authors
// SPDX-License-Identifier: Apache-2.0

#include "ttw/scorer.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

#include <fmt/format.h>

#include "ttw/text.hpp"

namespace ttw {

BatchScoreError::BatchScoreError(std::size_t index, const std::string& what)
    : Error(fmt::format("caption {}: {}", index, what)), index_(index) {}

std::vector<AlignmentScore> Scorer::score_batch(const ImageRef& image, const std::vector<std::string>& captions) const {
    if (captions.empty()) throw Error("score_batch needs at least one caption");
    std::vector<AlignmentScore> out;
    out.reserve(captions.size());
    for (std::size_t i = 0; i < captions.size(); ++i) {
        try {
            out.push_back(score(image, captions[i]));
        } catch (const ScorerUnavailableError&) {
            throw;
        } catch (const Error& e) {
            throw BatchScoreError(i, e.what());
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// MockScorer

namespace {

std::set<std::string> trigrams(std::string_view s) {
    std::string lower(s);
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    std::set<std::string> grams;
    if (lower.empty()) return grams;
    if (lower.size() < 3) {
        grams.insert(lower);
        return grams;
    }
    for (std::size_t i = 0; i + 3 <= lower.size(); ++i) grams.insert(lower.substr(i, 3));
    return grams;
}

}  // namespace

double MockScorer::trigram_similarity(std::string_view a, std::string_view b) {
    const auto ga = trigrams(a), gb = trigrams(b);
    if (ga.empty() && gb.empty()) return 0.0;
    std::size_t common = 0;
    for (const auto& g : ga) common += gb.count(g);
    return static_cast<double>(common) / static_cast<double>(ga.size() + gb.size() - common);
}

AlignmentScore MockScorer::score(const ImageRef& image, std::string_view caption) const {
    if (trim(caption).empty()) throw Error("cannot score an empty caption");
    std::string key;
    try {
        key = image.content_key();
    } catch (const Error& e) {
        throw Error(fmt::format("cannot score image {}: {}", image.describe(), e.what()));
    }
    const auto it = references_.find(key);
    if (it == references_.end())
        throw ScorerUnavailableError(fmt::format("mock scorer has no reference for image {}", image.describe()));

    AlignmentScore result;
    std::string_view scored = caption;
    std::size_t words = 0;
    bool in_word = false;
    for (std::size_t i = 0; i < caption.size(); ++i) {
        const bool space = std::isspace(static_cast<unsigned char>(caption[i])) != 0;
        if (!space && !in_word) {
            if (++words > max_words_) {
                scored = trim(caption.substr(0, i));
                result.truncated = true;
                break;
            }
        }
        in_word = !space;
    }
    result.value = trigram_similarity(scored, it->second);
    return result;
}

void MockScorer::set_reference(const ImageRef& image, std::string reference) {
    references_[image.content_key()] = std::move(reference);
}

MockScorer MockScorer::from_reference_file(const std::filesystem::path& path, std::size_t max_words) {
    MockScorer scorer(max_words);
    const std::string doc = read_file(path);
    std::size_t line_no = 0;
    for (std::string_view line : split_lines(doc)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string_view::npos)
            throw Error(fmt::format("{}:{}: expected 'image<TAB>reference'", path.string(), line_no));
        std::filesystem::path image(std::string(line.substr(0, tab)));
        if (image.is_relative()) image = path.parent_path() / image;
        scorer.set_reference(ImageRef(image), std::string(trim(line.substr(tab + 1))));
    }
    return scorer;
}

// ---------------------------------------------------------------------------
// EmbeddingScorer

double cosine_similarity(const std::vector<float>& a, const std::vector<float>& b) {
    if (a.size() != b.size() || a.empty()) throw Error("embedding dimensions do not match");
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += static_cast<double>(a[i]) * b[i];
        na += static_cast<double>(a[i]) * a[i];
        nb += static_cast<double>(b[i]) * b[i];
    }
    if (na == 0 || nb == 0) return 0.0;
    return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

EmbeddingScorer::EmbeddingScorer(std::shared_ptr<const ImageTextEncoder> encoder) : encoder_(std::move(encoder)) {
    if (!encoder_) throw ScorerUnavailableError("embedding scorer has no encoder");
}

std::string EmbeddingScorer::name() const { return "embedding:" + encoder_->checkpoint(); }

std::vector<float> EmbeddingScorer::image_embedding(const ImageRef& image) const {
    std::vector<std::uint8_t> bytes;
    try {
        bytes = image.load();
    } catch (const Error& e) {
        throw Error(fmt::format("cannot score image {}: {}", image.describe(), e.what()));
    }
    return encoder_->encode_image(bytes);
}

AlignmentScore EmbeddingScorer::score_with(const std::vector<float>& image_embedding, std::string_view caption) const {
    if (trim(caption).empty()) throw Error("cannot score an empty caption");
    AlignmentScore result;
    std::vector<int> tokens = encoder_->tokenize(caption);
    if (tokens.size() > encoder_->text_context()) {
        tokens.resize(encoder_->text_context());
        result.truncated = true;
    }
    const double v = cosine_similarity(image_embedding, encoder_->encode_text(tokens));
    if (!std::isfinite(v)) throw ScorerUnavailableError("encoder produced a non-finite embedding");
    result.value = v;
    return result;
}

AlignmentScore EmbeddingScorer::score(const ImageRef& image, std::string_view caption) const {
    return score_with(image_embedding(image), caption);
}

std::vector<AlignmentScore> EmbeddingScorer::score_batch(const ImageRef& image,
                                                         const std::vector<std::string>& captions) const {
    if (captions.empty()) throw Error("score_batch needs at least one caption");
    const auto embedding = image_embedding(image);
    std::vector<AlignmentScore> out;
    out.reserve(captions.size());
    for (std::size_t i = 0; i < captions.size(); ++i) {
        try {
            out.push_back(score_with(embedding, captions[i]));
        } catch (const ScorerUnavailableError&) {
            throw;
        } catch (const Error& e) {
            throw BatchScoreError(i, e.what());
        }
    }
    return out;
}

const Scorer& ScorerRegistry::for_dataset(Dataset dataset) const {
    const auto& s = dataset == Dataset::VQA_RAD ? medical_ : general_;
    if (!s)
        throw ScorerUnavailableError(fmt::format("no {} scorer configured for {}",
                                                 dataset == Dataset::VQA_RAD ? "medical" : "general",
                                                 to_string(dataset)));
    return *s;
}

}  // namespace ttw
