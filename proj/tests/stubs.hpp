// Copyright 2026 The TTW Authors
// SPDX-License-Identifier: Apache-2.0
//
// Scripted backends and scorers with observable behaviour.

#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "ttw/backend.hpp"
#include "ttw/scorer.hpp"

namespace ttw::testing {

/// Captions are a function of (prompt, seed); training nudges one weight and
/// records batch sizes.
class ScriptedBackend final : public TensorBackend {
public:
    ScriptedBackend() {
        add_parameter("adapter", 4, true).value = {0.1f, 0.2f, 0.3f, 0.4f};
        add_parameter("encoder", 2, false).value = {1.0f, 2.0f};
    }

    std::function<std::string(std::string_view prompt, const GenerationParams&)> caption =
        [](std::string_view, const GenerationParams& p) { return fmt::format("caption {:x}", p.seed & 0xfffff); };
    std::vector<std::size_t> batch_sizes;
    std::vector<std::vector<std::string>> batch_targets;
    int generate_calls = 0;

    std::string model_id() const override { return "scripted"; }
    std::string generate(const ImageRef& image, std::string_view prompt, const GenerationParams& params) override {
        image.load();
        ++generate_calls;
        return caption(prompt, params);
    }
    double train_step(std::span<const TrainExample> batch, double learning_rate, OptimizerState& state) override {
        batch_sizes.push_back(batch.size());
        std::vector<std::string> targets;
        for (const auto& e : batch) targets.push_back(e.target);
        batch_targets.push_back(targets);
        zero_grad();
        for (auto& g : param("adapter").grad) g = 1.0f;
        apply_adamw(learning_rate, state);
        return 1.0 / static_cast<double>(batch_sizes.size());
    }
    double evaluate_loss(std::span<const TrainExample>) override { return 1.0; }
    void set_supervise_prompt_tokens(bool) override {}
};

/// Score looked up by caption; unknown captions score by length.
class TableScorer final : public Scorer {
public:
    std::map<std::string, double> table;
    std::function<double(double)> transform = [](double x) { return x; };
    mutable int calls = 0;

    std::string name() const override { return "table"; }
    AlignmentScore score(const ImageRef&, std::string_view caption) const override {
        ++calls;
        if (caption.empty()) throw Error("empty caption");
        auto it = table.find(std::string(caption));
        const double raw = it != table.end() ? it->second : static_cast<double>(caption.size());
        return {transform(raw), false};
    }
};

class ThrowingScorer final : public Scorer {
public:
    std::string name() const override { return "throwing"; }
    AlignmentScore score(const ImageRef&, std::string_view) const override { throw ScorerUnavailableError("offline"); }
};

}  // namespace ttw::testing
