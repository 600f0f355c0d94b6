// Copyright 2026 The TTW Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "support.hpp"
#include "ttw/core.hpp"
#include "ttw/random.hpp"
#include "ttw/text.hpp"

using namespace ttw;

TEST_CASE("enum names round-trip") {
    for (auto d : {Dataset::GQA, Dataset::VQAV2, Dataset::VQA_RAD, Dataset::MMMU}) CHECK(parse_dataset(to_string(d)) == d);
    for (auto c : {Condition::BASE, Condition::ICL, Condition::TTW, Condition::ABLATION_NO_FILTER,
                   Condition::ABLATION_INVERSE})
        CHECK(parse_condition(to_string(c)) == c);
    for (auto p : {SelectionPolicy::ARGMAX, SelectionPolicy::ARGMIN, SelectionPolicy::FIRST_ONLY})
        CHECK(parse_selection_policy(to_string(p)) == p);
    CHECK(parse_dataset("vqa-rad") == Dataset::VQA_RAD);
    CHECK(parse_condition("ttw") == Condition::TTW);
    CHECK_THROWS_AS(parse_dataset("coco"), Error);
}

TEST_CASE("conditions map to selection policies") {
    CHECK(policy_for(Condition::TTW) == SelectionPolicy::ARGMAX);
    CHECK(policy_for(Condition::ABLATION_NO_FILTER) == SelectionPolicy::FIRST_ONLY);
    CHECK(policy_for(Condition::ABLATION_INVERSE) == SelectionPolicy::ARGMIN);
    CHECK_FALSE(policy_for(Condition::BASE).has_value());
    CHECK_FALSE(policy_for(Condition::ICL).has_value());
    for (auto p : {SelectionPolicy::ARGMAX, SelectionPolicy::ARGMIN, SelectionPolicy::FIRST_ONLY})
        CHECK(policy_for(condition_for(p)) == p);
}

TEST_CASE("image references") {
    testing::TempDir dir;
    write_file_atomic(dir / "a.bin", "abc");
    write_file_atomic(dir / "empty.bin", "");

    const ImageRef file(dir / "a.bin");
    const ImageRef bytes(std::vector<std::uint8_t>{'a', 'b', 'c'});
    CHECK(file.load() == bytes.load());
    CHECK(file.content_key() == bytes.content_key());
    CHECK(bytes.describe() == "<bytes:3>");
    CHECK_THROWS_AS(ImageRef(dir / "missing.bin").load(), Error);
    CHECK_THROWS_AS(ImageRef(dir / "empty.bin").load(), Error);
}

TEST_CASE("instance validation") {
    testing::TempDir dir;
    write_file_atomic(dir / "img.bin", "x");
    TestInstance inst{"q1", ImageRef(dir / "img.bin"), "What is it?", {"cat"}, std::nullopt, Dataset::GQA};
    CHECK(validate_instance(inst).empty());

    auto bad = inst;
    bad.question = "  ";
    CHECK_FALSE(validate_instance(bad).empty());
    bad = inst;
    bad.answers.clear();
    CHECK_FALSE(validate_instance(bad).empty());
    bad = inst;
    bad.image = ImageRef(dir / "nope.bin");
    CHECK_FALSE(validate_instance(bad).empty());
}

TEST_CASE("default prompt bank") {
    const auto& bank = default_prompt_bank();
    REQUIRE(bank.size() == 10);
    CHECK(bank[0].text == "Are there any signs, symbols, or text in this image? If so, what do they say?");
    CHECK(bank[1].text == "What objects or people are visible in this image?");
    CHECK(bank[2].prompt_id == "before_after");
    for (std::size_t i = 3; i < bank.size(); ++i) CHECK(bank[i].prompt_id.rfind("recon_", 0) == 0);
}

TEST_CASE("prompt bank files") {
    const auto bank = load_prompt_bank("b\tSecond prompt?\n\na\tFirst prompt?\n");
    REQUIRE(bank.size() == 2);
    CHECK(bank[0].prompt_id == "b");  // file order, not sorted
    CHECK(bank[1].text == "First prompt?");
    CHECK(load_prompt_bank(save_prompt_bank(default_prompt_bank())).prompts().size() == 10);

    CHECK_THROWS_AS(load_prompt_bank(""), Error);
    CHECK_THROWS_AS(load_prompt_bank("a\tx\na\ty\n"), Error);
    CHECK_THROWS_AS(load_prompt_bank("a\t\n"), Error);
    CHECK_THROWS_AS(load_prompt_bank("no tab here\n"), Error);
}

TEST_CASE("config defaults follow the method's hyperparameters") {
    const WarmupConfig c;
    CHECK(c.candidates_per_prompt == 10);
    CHECK(c.generation_temperature == 0.75);
    CHECK(c.learning_rate == 1e-6);
    CHECK(c.batch_size == 5);
    CHECK(c.epochs == 2);
    CHECK(c.shuffle_each_epoch);
    CHECK(c.selection_policy == SelectionPolicy::ARGMAX);
    CHECK(validate_config(c).empty());
}

TEST_CASE("config validation") {
    WarmupConfig c;
    c.epochs = 0;
    REQUIRE(validate_config(c).size() == 1);
    CHECK(validate_config(c)[0] == "epochs must be ≥ 1");

    c = {};
    c.selection_policy = SelectionPolicy::FIRST_ONLY;
    CHECK(validate_config(c) == std::vector<std::string>{"FIRST_ONLY requires k == 1"});
    c.candidates_per_prompt = 1;
    CHECK(validate_config(c).empty());
    CHECK(config_warnings(c).empty());

    c = {};
    c.candidates_per_prompt = 1;
    CHECK(validate_config(c).empty());
    CHECK(config_warnings(c).size() == 1);

    for (auto mutate : std::vector<void (*)(WarmupConfig&)>{
             [](WarmupConfig& x) { x.learning_rate = 0; },
             [](WarmupConfig& x) { x.learning_rate = std::nan(""); },
             [](WarmupConfig& x) { x.batch_size = 0; },
             [](WarmupConfig& x) { x.candidates_per_prompt = 0; },
             [](WarmupConfig& x) { x.generation_temperature = -1; },
             [](WarmupConfig& x) { x.adamw.beta2 = 1.0; },
         }) {
        WarmupConfig bad;
        mutate(bad);
        CHECK_FALSE(validate_config(bad).empty());
    }
}

TEST_CASE("config serialization round-trips for random configs") {
    Rng rng(2024);
    for (int trial = 0; trial < 500; ++trial) {
        WarmupConfig c;
        c.candidates_per_prompt = 1 + static_cast<int>(rng.below(20));
        c.generation_temperature = 0.05 + rng.uniform() * 2;
        c.generation_max_new_tokens = 1 + static_cast<int>(rng.below(1024));
        c.selection_policy = static_cast<SelectionPolicy>(rng.below(3));
        c.learning_rate = std::pow(10.0, -8 + 7 * rng.uniform());
        c.adamw.beta1 = rng.uniform();
        c.adamw.beta2 = rng.uniform();
        c.adamw.eps = 1e-12 + rng.uniform() * 1e-6;
        c.adamw.weight_decay = rng.uniform() * 0.1;
        c.batch_size = 1 + static_cast<int>(rng.below(16));
        c.epochs = 1 + static_cast<int>(rng.below(5));
        c.shuffle_each_epoch = rng.below(2) == 1;
        c.supervise_prompt_tokens = rng.below(2) == 1;
        c.rng_seed = rng.next_u64();
        CHECK(parse_config(serialize_config(c)) == c);
    }
}

TEST_CASE("config documents") {
    const WarmupConfig c = parse_config("# comment\nlearning_rate = 3e-4\n\nepochs=3\nselection_policy = ARGMIN\n");
    CHECK(c.learning_rate == 3e-4);
    CHECK(c.epochs == 3);
    CHECK(c.selection_policy == SelectionPolicy::ARGMIN);
    CHECK(c.batch_size == 5);

    WarmupConfig base;
    base.batch_size = 2;
    base.learning_rate = 0.5;
    const WarmupConfig layered = parse_config("learning_rate = 0.25\n", base);
    CHECK(layered.batch_size == 2);
    CHECK(layered.learning_rate == 0.25);

    CHECK_THROWS_AS(parse_config("no_such_key = 1\n"), Error);
    CHECK_THROWS_AS(parse_config("epochs = 2\nepochs = 3\n"), Error);
    CHECK_THROWS_AS(parse_config("epochs = two\n"), Error);
    CHECK_THROWS_AS(parse_config("epochs\n"), Error);
}

TEST_CASE("seed derivation") {
    CHECK(derive_seed(1, "a") == derive_seed(1, "a"));
    CHECK(derive_seed(1, "a") != derive_seed(2, "a"));
    CHECK(derive_seed(1, "a") != derive_seed(1, "b"));
    CHECK(derive_seed(1, "a", 0) != derive_seed(1, "a", 1));
    // FNV-1a reference values.
    CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);

    Rng rng(7);
    for (int i = 0; i < 1000; ++i) {
        const double u = rng.uniform();
        CHECK((u >= 0.0 && u < 1.0));
        CHECK(rng.below(3) < 3);
    }
}

TEST_CASE("line utilities") {
    CHECK(split_lines("a\r\nb\n\nc").size() == 4);
    CHECK(trim("  x y \t") == "x y");
    testing::TempDir dir;
    write_file_atomic(dir / "f.txt", "hello");
    CHECK(read_file(dir / "f.txt") == "hello");
    CHECK_THROWS_AS(read_file(dir / "missing.txt"), Error);
}
