// Copyright 2026 The TTW Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <filesystem>
#include <unistd.h>
#include <string>

#include <fmt/format.h>

#include "ttw/core.hpp"
#include "ttw/toy_backend.hpp"
#include "ttw/toy_world.hpp"

namespace ttw::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "ttw") {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                fmt::format("{}-{}-{}", tag, static_cast<long>(::getpid()), counter++);
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline ImageRef toy_image(std::uint64_t seed) { return ImageRef(toy::World().scene(seed).image); }

/// Pretrained toy weights, computed once per process.
inline const ParameterBlocks& pretrained_toy_weights(int steps = 400) {
    static const ParameterBlocks blocks = [steps] {
        ToyBackend backend;
        toy::pretrain(backend, toy::World(), default_prompt_bank(), toy::PretrainOptions{.steps = steps});
        return backend.all_parameters();
    }();
    return blocks;
}

/// Settings the toy model needs to adapt visibly. The nominal learning
/// rate is far too small for a 56k-parameter model.
inline WarmupConfig toy_config(std::uint64_t seed = 0) {
    WarmupConfig c;
    c.learning_rate = 1e-3;
    c.generation_max_new_tokens = 24;
    c.rng_seed = seed;
    return c;
}

}  // namespace ttw::testing
