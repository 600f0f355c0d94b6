// Copyright 2026 The TTW Authors
// SPDX-License-Identifier: Apache-2.0
//
// Image-text alignment scoring used to rank candidate captions.

#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "ttw/core.hpp"

namespace ttw {

/// Raw cosine similarity in [-1, 1]. `truncated` is set when the caption was
/// longer than the scorer's text context and only its prefix was scored.
struct AlignmentScore {
    double value = 0.0;
    bool truncated = false;
};

/// Distinct from a low score: the scorer could not produce a value at all.
class ScorerUnavailableError : public Error {
public:
    using Error::Error;
};

/// Raised by score_batch; carries the position of the failing caption.
class BatchScoreError : public Error {
public:
    BatchScoreError(std::size_t index, const std::string& what);
    std::size_t index() const { return index_; }

private:
    std::size_t index_;
};

class Scorer {
public:
    virtual ~Scorer() = default;

    virtual std::string name() const = 0;
    /// Throws ttw::Error for an empty caption.
    virtual AlignmentScore score(const ImageRef& image, std::string_view caption) const = 0;

    /// Elementwise identical to score(); order preserved. The default
    /// implementation loops.
    virtual std::vector<AlignmentScore> score_batch(const ImageRef& image, const std::vector<std::string>& captions) const;
};

/// Deterministic scorer for tests and desk runs: Jaccard similarity of the
/// character-trigram sets of the caption and a per-image reference string.
/// Captions longer than `max_words` whitespace-separated words are truncated.
class MockScorer final : public Scorer {
public:
    explicit MockScorer(std::size_t max_words = 77) : max_words_(max_words) {}

    std::string name() const override { return "mock-trigram"; }
    AlignmentScore score(const ImageRef& image, std::string_view caption) const override;

    void set_reference(const ImageRef& image, std::string reference);
    std::size_t reference_count() const { return references_.size(); }

    /// Lines of `image_path<TAB>reference`; relative paths resolve against
    /// the file's directory.
    static MockScorer from_reference_file(const std::filesystem::path& path, std::size_t max_words = 77);

    /// Trigram Jaccard of two strings (lowercased). Strings shorter than
    /// three characters contribute themselves as a single gram.
    static double trigram_similarity(std::string_view a, std::string_view b);

private:
    std::size_t max_words_;
    std::map<std::string, std::string> references_;  // image content key -> reference
};

/// Embedding model behind a CLIP-family scorer (general or biomedical
/// checkpoint). Implementations wrap an external runtime.
class ImageTextEncoder {
public:
    virtual ~ImageTextEncoder() = default;
    virtual std::string checkpoint() const = 0;
    /// Maximum number of text tokens the encoder accepts.
    virtual std::size_t text_context() const = 0;
    virtual std::vector<int> tokenize(std::string_view text) const = 0;
    virtual std::vector<float> encode_text(const std::vector<int>& tokens) const = 0;
    virtual std::vector<float> encode_image(const std::vector<std::uint8_t>& image_bytes) const = 0;
};

/// Cosine similarity of encoder embeddings. Token sequences longer than the
/// encoder's context are cut to the longest prefix and flagged.
class EmbeddingScorer final : public Scorer {
public:
    explicit EmbeddingScorer(std::shared_ptr<const ImageTextEncoder> encoder);

    std::string name() const override;
    AlignmentScore score(const ImageRef& image, std::string_view caption) const override;
    std::vector<AlignmentScore> score_batch(const ImageRef& image, const std::vector<std::string>& captions) const override;

private:
    AlignmentScore score_with(const std::vector<float>& image_embedding, std::string_view caption) const;
    std::vector<float> image_embedding(const ImageRef& image) const;

    std::shared_ptr<const ImageTextEncoder> encoder_;
};

double cosine_similarity(const std::vector<float>& a, const std::vector<float>& b);

/// General-domain scorer for GQA, VQAv2 and MMMU; medical scorer for VQA-Rad.
class ScorerRegistry {
public:
    ScorerRegistry(std::shared_ptr<const Scorer> general, std::shared_ptr<const Scorer> medical)
        : general_(std::move(general)), medical_(std::move(medical)) {}

    /// Throws ScorerUnavailableError when the required scorer is missing.
    const Scorer& for_dataset(Dataset dataset) const;

private:
    std::shared_ptr<const Scorer> general_;
    std::shared_ptr<const Scorer> medical_;
};

}  // namespace ttw
