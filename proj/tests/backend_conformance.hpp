// Copyright 2026 The TTW Authors
// SPDX-License-Identifier: Apache-2.0
//
// Behaviour every Backend implementation must show. Call
// check_backend_conformance() from a doctest case with a freshly constructed
// backend and an image it can decode.

#pragma once

#include <cmath>
#include <filesystem>
#include <vector>

#include <doctest.h>

#include "ttw/backend.hpp"

namespace ttw::testing {

inline void check_backend_conformance(Backend& backend, const ImageRef& image,
                                      const std::filesystem::path& scratch_dir) {
    const std::string prompt = "What objects or people are visible in this image?";

    SUBCASE("greedy generation is deterministic") {
        const auto params = GenerationParams::greedy(16);
        const std::string first = backend.generate(image, prompt, params);
        for (int i = 0; i < 4; ++i) CHECK(backend.generate(image, prompt, params) == first);
    }

    SUBCASE("sampled generation is a function of the seed") {
        auto params = GenerationParams::sampled(0.75, 16, 42);
        const std::string a = backend.generate(image, prompt, params);
        CHECK(backend.generate(image, prompt, params) == a);
        bool any_different = false;
        for (std::uint64_t s = 1; s <= 8 && !any_different; ++s) {
            params.seed = s;
            any_different = backend.generate(image, prompt, params) != a;
        }
        CHECK(any_different);
    }

    SUBCASE("partition is disjoint and non-empty") {
        const auto part = backend.partition();
        CHECK_FALSE(part.trainable_ids.empty());
        for (const auto& id : part.trainable_ids) CHECK(part.frozen_ids.count(id) == 0);
        CHECK(backend.snapshot().ids() == part.trainable_ids);
    }

    SUBCASE("training lowers the loss and leaves frozen weights alone") {
        const std::vector<TrainExample> batch = {{image, prompt, "a red ball on a table."}};
        const std::string frozen = backend.frozen_fingerprint();
        OptimizerState state;
        const double before = backend.evaluate_loss(batch);
        CHECK(std::isfinite(before));
        double last = before;
        for (int i = 0; i < 20; ++i) last = backend.train_step(batch, 1e-3, state);
        CHECK(std::isfinite(last));
        CHECK(backend.evaluate_loss(batch) < before);
        CHECK(backend.frozen_fingerprint() == frozen);
        CHECK(state.step == 20);
    }

    SUBCASE("restore is bitwise exact, in memory and spilled") {
        const std::vector<TrainExample> batch = {{image, prompt, "two cups."}};
        const TrainableSnapshot mem = backend.snapshot();
        TrainableSnapshot disk = backend.snapshot();
        disk.spill(scratch_dir / "snapshot.bin");
        CHECK(disk.spilled());
        CHECK(disk.fingerprint() == mem.fingerprint());

        OptimizerState state;
        for (int i = 0; i < 3; ++i) backend.train_step(batch, 1e-2, state);
        CHECK(backend.trainable_fingerprint() != mem.fingerprint());
        backend.restore(mem);
        CHECK(backend.trainable_fingerprint() == mem.fingerprint());

        OptimizerState again;
        backend.train_step(batch, 1e-2, again);
        backend.restore(disk);
        CHECK(backend.trainable_fingerprint() == mem.fingerprint());
    }

    SUBCASE("restore rejects a snapshot of other parameters") {
        ParameterBlocks blocks = backend.snapshot().blocks();
        blocks.erase(blocks.begin());
        blocks["not.a.parameter"] = {1.0f};
        CHECK_THROWS_AS(backend.restore(TrainableSnapshot(blocks)), SnapshotMismatchError);

        ParameterBlocks resized = backend.snapshot().blocks();
        resized.begin()->second.push_back(0.0f);
        CHECK_THROWS_AS(backend.restore(TrainableSnapshot(resized)), SnapshotMismatchError);
    }

    SUBCASE("an empty target has nothing to supervise") {
        const std::vector<TrainExample> batch = {{image, prompt, ""}};
        OptimizerState state;
        const std::string before = backend.trainable_fingerprint();
        CHECK_THROWS_AS(backend.train_step(batch, 1e-3, state), Error);
        CHECK(backend.trainable_fingerprint() == before);
    }

    SUBCASE("undecodable images are reported") {
        const ImageRef missing(scratch_dir / "does-not-exist.png");
        CHECK_THROWS_AS(backend.generate(missing, prompt, GenerationParams::greedy(4)), Error);
    }
}

}  // namespace ttw::testing
