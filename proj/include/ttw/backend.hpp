// Copyright 2026 The TTW Authors
// SPDX-License-Identifier: Apache-2.0
//
// Model backend contract. A backend exposes conditional generation, a
// teacher-forced training step over its trainable subset, and exact
// snapshot/restore of that subset. Any adapter for an external model runtime
// implements this interface and must pass tests/backend_conformance.hpp.
//
// Backends are single-writer: calls on one instance must be serialized.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ttw/core.hpp"

namespace ttw {

class ImageDecodeError : public Error {
public:
    using Error::Error;
};

class ContextOverflowError : public Error {
public:
    using Error::Error;
};

class NonFiniteLossError : public Error {
public:
    using Error::Error;
};

class SnapshotMismatchError : public Error {
public:
    using Error::Error;
};

struct GenerationParams {
    enum class Mode { GREEDY, SAMPLED };

    Mode mode = Mode::GREEDY;
    double temperature = 1.0;
    std::optional<int> top_k;
    std::optional<double> top_p;
    int max_new_tokens = 128;
    std::uint64_t seed = 0;

    static GenerationParams greedy(int max_new_tokens) {
        GenerationParams p;
        p.max_new_tokens = max_new_tokens;
        return p;
    }
    static GenerationParams sampled(double temperature, int max_new_tokens, std::uint64_t seed) {
        GenerationParams p;
        p.mode = Mode::SAMPLED;
        p.temperature = temperature;
        p.max_new_tokens = max_new_tokens;
        p.seed = seed;
        return p;
    }

    bool operator==(const GenerationParams&) const = default;
};

std::vector<std::string> validate_generation_params(const GenerationParams& p);

struct TrainExample {
    ImageRef image;
    std::string prompt;
    std::string target;
};

struct ParameterPartition {
    std::set<std::string> trainable_ids;
    std::set<std::string> frozen_ids;
};

using ParameterBlocks = std::map<std::string, std::vector<float>>;

/// Hex digest over parameter ids, shapes and raw float bits.
std::string fingerprint_blocks(const ParameterBlocks& blocks);

/// Pre-adaptation copy of every trainable parameter. Held in memory, or
/// spilled to a file and read back on restore.
class TrainableSnapshot {
public:
    TrainableSnapshot() = default;
    explicit TrainableSnapshot(ParameterBlocks blocks);

    const std::string& fingerprint() const { return fingerprint_; }
    std::set<std::string> ids() const;
    bool spilled() const { return spill_path_.has_value(); }

    /// Values, read back from disk if spilled.
    ParameterBlocks blocks() const;

    /// Moves the values to `path` and releases memory.
    void spill(const std::filesystem::path& path);

private:
    ParameterBlocks blocks_;
    std::set<std::string> ids_;
    std::string fingerprint_;
    std::optional<std::filesystem::path> spill_path_;
};

struct Moments {
    std::vector<float> first;
    std::vector<float> second;
};

/// AdamW optimizer state. Created fresh for every instance.
struct OptimizerState {
    AdamWParams params;
    std::int64_t step = 0;
    std::map<std::string, Moments> moments;
};

class Backend {
public:
    virtual ~Backend() = default;

    virtual std::string model_id() const = 0;

    /// Greedy decoding is deterministic; sampled decoding is deterministic
    /// given params.seed. Output holds at most params.max_new_tokens tokens.
    virtual std::string generate(const ImageRef& image, std::string_view prompt, const GenerationParams& params) = 0;

    /// One AdamW step on the mean token cross-entropy of `batch`. Only the
    /// trainable subset changes. Throws NonFiniteLossError before touching
    /// any weight when the loss or a gradient is not finite.
    virtual double train_step(std::span<const TrainExample> batch, double learning_rate, OptimizerState& state) = 0;

    /// Same loss as train_step, without an update.
    virtual double evaluate_loss(std::span<const TrainExample> batch) = 0;

    virtual TrainableSnapshot snapshot() const = 0;
    /// Throws SnapshotMismatchError when the id set differs from the model's
    /// trainable subset.
    virtual void restore(const TrainableSnapshot& snapshot) = 0;

    virtual ParameterPartition partition() const = 0;
    virtual std::string trainable_fingerprint() const = 0;
    virtual std::string frozen_fingerprint() const = 0;

    /// Loss masking switch. Off: only target tokens are supervised.
    virtual void set_supervise_prompt_tokens(bool on) = 0;
};

/// Shared machinery for backends whose weights are named float tensors held
/// in host memory: partitioning, fingerprints, snapshot/restore and AdamW.
class TensorBackend : public Backend {
public:
    TrainableSnapshot snapshot() const override;
    void restore(const TrainableSnapshot& snapshot) override;
    ParameterPartition partition() const override;
    std::string trainable_fingerprint() const override;
    std::string frozen_fingerprint() const override;

    /// Every parameter, trainable and frozen.
    ParameterBlocks all_parameters() const;
    void load_parameters(const ParameterBlocks& blocks);

    void save_weights(const std::filesystem::path& path) const;
    void load_weights(const std::filesystem::path& path);

protected:
    struct Parameter {
        std::vector<float> value;
        std::vector<float> grad;
        bool trainable = true;
    };

    Parameter& add_parameter(const std::string& id, std::size_t size, bool trainable);
    Parameter& param(const std::string& id) { return params_.at(id); }
    const Parameter& param(const std::string& id) const { return params_.at(id); }

    /// Called after load_parameters replaces the weights wholesale.
    virtual void weights_replaced() {}

    void zero_grad();
    bool grads_finite() const;
    /// Decoupled weight decay, bias-corrected moments.
    void apply_adamw(double learning_rate, OptimizerState& state);

private:
    std::string fingerprint_where(bool trainable) const;

    std::map<std::string, Parameter> params_;
};

}  // namespace ttw
