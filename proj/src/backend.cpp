// Copyright 2026 The TTW Authors
// SPDX-License-Identifier: Apache-2.0

#include "ttw/backend.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <fmt/format.h>

#include "ttw/random.hpp"

namespace ttw {

namespace {

constexpr char kBlockMagic[8] = {'T', 'T', 'W', 'B', 'L', 'K', '0', '1'};

template <typename T>
void put(std::ofstream& out, const T& x) {
    out.write(reinterpret_cast<const char*>(&x), sizeof(T));
}

template <typename T>
T get(std::ifstream& in) {
    T x{};
    in.read(reinterpret_cast<char*>(&x), sizeof(T));
    if (!in) throw Error("truncated parameter file");
    return x;
}

void write_blocks(const std::filesystem::path& path, const ParameterBlocks& blocks) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(fmt::format("cannot write '{}'", path.string()));
    out.write(kBlockMagic, sizeof(kBlockMagic));
    put<std::uint64_t>(out, blocks.size());
    for (const auto& [id, values] : blocks) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(id.size()));
        out.write(id.data(), static_cast<std::streamsize>(id.size()));
        put<std::uint64_t>(out, values.size());
        out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(float)));
    }
    if (!out) throw Error(fmt::format("short write to '{}'", path.string()));
}

ParameterBlocks read_blocks(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(fmt::format("cannot open '{}'", path.string()));
    char magic[sizeof(kBlockMagic)];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kBlockMagic, sizeof(magic)) != 0)
        throw Error(fmt::format("'{}' is not a parameter file", path.string()));
    ParameterBlocks blocks;
    const auto count = get<std::uint64_t>(in);
    for (std::uint64_t i = 0; i < count; ++i) {
        std::string id(get<std::uint32_t>(in), '\0');
        in.read(id.data(), static_cast<std::streamsize>(id.size()));
        std::vector<float> values(get<std::uint64_t>(in));
        in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(float)));
        if (!in) throw Error("truncated parameter file");
        blocks.emplace(std::move(id), std::move(values));
    }
    return blocks;
}

}  // namespace

std::vector<std::string> validate_generation_params(const GenerationParams& p) {
    std::vector<std::string> v;
    if (p.max_new_tokens < 1) v.emplace_back("max_new_tokens must be ≥ 1");
    if (p.mode == GenerationParams::Mode::SAMPLED) {
        if (!(std::isfinite(p.temperature) && p.temperature > 0)) v.emplace_back("SAMPLED requires temperature > 0");
        if (p.top_k && *p.top_k < 1) v.emplace_back("top_k must be ≥ 1");
        if (p.top_p && !(*p.top_p > 0 && *p.top_p <= 1)) v.emplace_back("top_p must be in (0, 1]");
    }
    return v;
}

std::string fingerprint_blocks(const ParameterBlocks& blocks) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [id, values] : blocks) {
        h = fnv1a64(id, h);
        const std::uint64_t n = values.size();
        h = fnv1a64(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(&n), sizeof(n)), h);
        h = fnv1a64(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(values.data()),
                                                  values.size() * sizeof(float)),
                    h);
    }
    return fmt::format("{:016x}", h);
}

// ---------------------------------------------------------------------------
// TrainableSnapshot

TrainableSnapshot::TrainableSnapshot(ParameterBlocks blocks) : blocks_(std::move(blocks)) {
    for (const auto& [id, _] : blocks_) ids_.insert(id);
    fingerprint_ = fingerprint_blocks(blocks_);
}

std::set<std::string> TrainableSnapshot::ids() const { return ids_; }

ParameterBlocks TrainableSnapshot::blocks() const {
    if (!spill_path_) return blocks_;
    ParameterBlocks loaded = read_blocks(*spill_path_);
    if (fingerprint_blocks(loaded) != fingerprint_)
        throw SnapshotMismatchError(fmt::format("spilled snapshot '{}' is corrupt", spill_path_->string()));
    return loaded;
}

void TrainableSnapshot::spill(const std::filesystem::path& path) {
    if (spill_path_) return;
    write_blocks(path, blocks_);
    spill_path_ = path;
    ParameterBlocks().swap(blocks_);
}

// ---------------------------------------------------------------------------
// TensorBackend

TensorBackend::Parameter& TensorBackend::add_parameter(const std::string& id, std::size_t size, bool trainable) {
    auto [it, inserted] = params_.try_emplace(id);
    if (!inserted) throw Error(fmt::format("parameter '{}' registered twice", id));
    it->second.value.assign(size, 0.0f);
    it->second.grad.assign(trainable ? size : 0, 0.0f);
    it->second.trainable = trainable;
    return it->second;
}

void TensorBackend::zero_grad() {
    for (auto& [_, p] : params_) std::fill(p.grad.begin(), p.grad.end(), 0.0f);
}

bool TensorBackend::grads_finite() const {
    for (const auto& [_, p] : params_)
        for (float g : p.grad)
            if (!std::isfinite(g)) return false;
    return true;
}

void TensorBackend::apply_adamw(double learning_rate, OptimizerState& state) {
    state.step += 1;
    const auto& hp = state.params;
    const double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(state.step));
    const double decay = 1.0 - learning_rate * hp.weight_decay;
    for (auto& [id, p] : params_) {
        if (!p.trainable) continue;
        auto& m = state.moments[id];
        if (m.first.size() != p.value.size()) {
            m.first.assign(p.value.size(), 0.0f);
            m.second.assign(p.value.size(), 0.0f);
        }
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double g = p.grad[i];
            const double m1 = hp.beta1 * m.first[i] + (1.0 - hp.beta1) * g;
            const double m2 = hp.beta2 * m.second[i] + (1.0 - hp.beta2) * g * g;
            m.first[i] = static_cast<float>(m1);
            m.second[i] = static_cast<float>(m2);
            const double update = (m1 / bc1) / (std::sqrt(m2 / bc2) + hp.eps);
            p.value[i] = static_cast<float>(p.value[i] * decay - learning_rate * update);
        }
    }
}

TrainableSnapshot TensorBackend::snapshot() const {
    ParameterBlocks blocks;
    for (const auto& [id, p] : params_)
        if (p.trainable) blocks.emplace(id, p.value);
    return TrainableSnapshot(std::move(blocks));
}

void TensorBackend::restore(const TrainableSnapshot& snapshot) {
    const ParameterPartition part = partition();
    if (snapshot.ids() != part.trainable_ids)
        throw SnapshotMismatchError("snapshot parameter ids do not match the model's trainable subset");
    ParameterBlocks blocks = snapshot.blocks();
    for (auto& [id, values] : blocks) {
        auto& p = params_.at(id);
        if (values.size() != p.value.size())
            throw SnapshotMismatchError(fmt::format("snapshot block '{}' has the wrong size", id));
    }
    for (auto& [id, values] : blocks) params_.at(id).value = std::move(values);
}

ParameterPartition TensorBackend::partition() const {
    ParameterPartition part;
    for (const auto& [id, p] : params_) (p.trainable ? part.trainable_ids : part.frozen_ids).insert(id);
    return part;
}

std::string TensorBackend::fingerprint_where(bool trainable) const {
    ParameterBlocks blocks;
    for (const auto& [id, p] : params_)
        if (p.trainable == trainable) blocks.emplace(id, p.value);
    return fingerprint_blocks(blocks);
}

std::string TensorBackend::trainable_fingerprint() const { return fingerprint_where(true); }
std::string TensorBackend::frozen_fingerprint() const { return fingerprint_where(false); }

ParameterBlocks TensorBackend::all_parameters() const {
    ParameterBlocks blocks;
    for (const auto& [id, p] : params_) blocks.emplace(id, p.value);
    return blocks;
}

void TensorBackend::load_parameters(const ParameterBlocks& blocks) {
    if (blocks.size() != params_.size()) throw Error("parameter set does not match the model");
    for (const auto& [id, values] : blocks) {
        auto it = params_.find(id);
        if (it == params_.end() || it->second.value.size() != values.size())
            throw Error(fmt::format("parameter '{}' does not match the model", id));
    }
    for (const auto& [id, values] : blocks) params_.at(id).value = values;
    weights_replaced();
}

void TensorBackend::save_weights(const std::filesystem::path& path) const { write_blocks(path, all_parameters()); }

void TensorBackend::load_weights(const std::filesystem::path& path) { load_parameters(read_blocks(path)); }

}  // namespace ttw
