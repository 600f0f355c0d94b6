// Copyright 2026 The TTW Authors
// SPDX-License-Identifier: Apache-2.0

#include "ttw/toy_world.hpp"

#include <fmt/format.h>

#include "ttw/eval.hpp"

namespace ttw::toy {

World::World()
    : World({"red", "blue", "green", "yellow", "white", "pink", "orange", "cyan"},
            {"ball", "cup", "hat", "car", "box", "kite", "lamp", "shoe"}) {}

World::World(std::vector<std::string> colors, std::vector<std::string> objects, std::size_t image_bytes)
    : colors_(std::move(colors)), objects_(std::move(objects)), image_bytes_(image_bytes) {
    if (colors_.empty() || objects_.empty() || image_bytes_ == 0) throw Error("toy world needs colours, objects and pixels");
}

Scene World::scene(std::uint64_t seed) const {
    Rng rng(derive_seed(seed, "scene"));
    Scene s;
    s.image.resize(image_bytes_);
    for (auto& b : s.image) b = static_cast<std::uint8_t>(rng.below(256));
    s.color = random_color(rng);
    return s;
}

const std::string& World::random_color(Rng& rng) const { return colors_[rng.below(colors_.size())]; }

std::string World::caption(const std::string& color, Rng& rng) const {
    return fmt::format("{} {}.", color, objects_[rng.below(objects_.size())]);
}

TestInstance World::instance(std::string id, const Scene& scene) const {
    TestInstance inst;
    inst.instance_id = std::move(id);
    inst.image = ImageRef(scene.image);
    inst.question = question();
    inst.answers = {scene.color};
    inst.dataset = Dataset::GQA;
    return inst;
}

PretrainReport pretrain(Backend& backend, const World& world, const AuxiliaryPromptBank& bank,
                        const PretrainOptions& options) {
    Rng rng(derive_seed(options.seed, "pretrain"));
    TestInstance probe = world.instance("pretrain", world.scene(0));
    const std::string answer_prompt = eval::build_inference_prompt(probe).text;

    backend.set_supervise_prompt_tokens(false);
    OptimizerState state;
    PretrainReport report;
    for (int step = 0; step < options.steps; ++step) {
        std::vector<TrainExample> batch;
        batch.reserve(static_cast<std::size_t>(options.batch_size));
        for (int i = 0; i < options.batch_size; ++i) {
            const Scene s = world.scene(rng.next_u64());
            // Colour independent of the image: the model learns the format only.
            const std::string& color = world.random_color(rng);
            if (rng.uniform() < options.answer_fraction) {
                batch.push_back({ImageRef(s.image), answer_prompt, color});
            } else {
                const auto& prompt = bank[rng.below(bank.size())];
                batch.push_back({ImageRef(s.image), prompt.text, world.caption(color, rng)});
            }
        }
        const double loss = backend.train_step(batch, options.learning_rate, state);
        if (step == 0) report.first_loss = loss;
        report.last_loss = loss;
    }
    return report;
}

Suite make_suite(const World& world, std::size_t n, std::uint64_t seed) {
    Suite suite;
    for (std::size_t i = 0; i < n; ++i) {
        Scene s = world.scene(derive_seed(seed, "suite", i));
        suite.instances.push_back(world.instance(fmt::format("toy-{:04d}", i), s));
        suite.scorer.set_reference(suite.instances.back().image, s.color);
        suite.scenes.push_back(std::move(s));
    }
    return suite;
}

}  // namespace ttw::toy
