// Copyright 2026 The TTW Authors
// SPDX-License-Identifier: Apache-2.0
//
// A desk-scale multimodal model for exercising the pipeline end to end
// without downloads or accelerators. Structure mirrors an MLLM:
//
//   image bytes -> frozen random projection ("vision.*")
//              -> trainable linear connector ("connector.*")
//              -> character-level decoder ("llm.*")
//
// The decoder predicts the next character from the previous `context`
// characters, the connector output and a hashed bag-of-words summary of the
// prompt. Sequences are `prompt SEP response EOS`.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ttw/backend.hpp"

namespace ttw {

struct ToyModelConfig {
    int pixels = 64;
    int vision_dim = 32;
    int connector_dim = 32;
    int embed_dim = 16;
    int context = 6;
    int hidden = 192;
    int prompt_buckets = 256;
    int context_limit = 4096;  // maximum prompt length in characters
    std::uint64_t seed = 0;
};

class ToyBackend final : public TensorBackend {
public:
    explicit ToyBackend(ToyModelConfig config = {});

    std::string model_id() const override;
    std::string generate(const ImageRef& image, std::string_view prompt, const GenerationParams& params) override;
    double train_step(std::span<const TrainExample> batch, double learning_rate, OptimizerState& state) override;
    double evaluate_loss(std::span<const TrainExample> batch) override;
    void set_supervise_prompt_tokens(bool on) override { supervise_prompt_ = on; }

    const ToyModelConfig& config() const { return config_; }
    std::size_t parameter_count() const;

    static constexpr int kVocab = 99;

protected:
    void weights_replaced() override;

private:
    struct Encoded;
    struct Workspace;

    Encoded encode(const TrainExample& example) const;
    std::vector<float> image_pixels(const ImageRef& image) const;
    void connector_forward(const std::vector<float>& pixels, std::vector<float>& vision, std::vector<float>& conn) const;
    std::vector<float> prompt_summary(std::string_view prompt, std::vector<int>* buckets) const;
    void step_logits(const int* ctx, const float* conn, const float* prompt_vec, float* x, float* h, float* logits) const;

    /// Mean token cross-entropy; accumulates gradients when `backward`.
    double loss(std::span<const TrainExample> batch, bool backward);

    ToyModelConfig config_;
    bool supervise_prompt_ = false;
    std::string identity_;
};

}  // namespace ttw
