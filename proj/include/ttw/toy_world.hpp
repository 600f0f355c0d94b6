// Copyright 2026 The TTW Authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic world for end-to-end runs on the toy backend. Every scene is a
// random image with one hidden colour. Pretraining teaches the caption and
// answer formats with colours drawn independently of the image, so a
// pretrained model knows *how* to describe a scene but not *which* colour it
// has. Only the mock scorer (whose reference for each image is its colour)
// carries that information.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ttw/backend.hpp"
#include "ttw/core.hpp"
#include "ttw/random.hpp"
#include "ttw/scorer.hpp"

namespace ttw::toy {

struct Scene {
    std::vector<std::uint8_t> image;
    std::string color;
};

class World {
public:
    World();
    World(std::vector<std::string> colors, std::vector<std::string> objects, std::size_t image_bytes = 64);

    Scene scene(std::uint64_t seed) const;
    /// "<color> <object>." with a random object.
    std::string caption(const std::string& color, Rng& rng) const;
    const std::string& random_color(Rng& rng) const;
    TestInstance instance(std::string id, const Scene& scene) const;

    const std::vector<std::string>& colors() const { return colors_; }
    static std::string question() { return "What color is the object?"; }

private:
    std::vector<std::string> colors_;
    std::vector<std::string> objects_;
    std::size_t image_bytes_;
};

struct PretrainOptions {
    int steps = 400;
    int batch_size = 16;
    double learning_rate = 3e-3;
    double answer_fraction = 0.3;  // share of examples using the evaluation prompt
    std::uint64_t seed = 1;
};

struct PretrainReport {
    double first_loss = 0.0;
    double last_loss = 0.0;
};

/// Fits the caption/answer formats through the public train_step interface.
/// Supervises target tokens only.
PretrainReport pretrain(Backend& backend, const World& world, const AuxiliaryPromptBank& bank,
                        const PretrainOptions& options = {});

struct Suite {
    std::vector<TestInstance> instances;
    std::vector<Scene> scenes;
    MockScorer scorer;
};

/// `n` GQA-style instances whose answer is the scene colour, plus a mock
/// scorer holding each scene's colour as its reference.
Suite make_suite(const World& world, std::size_t n, std::uint64_t seed);

}  // namespace ttw::toy
