// Copyright 2026 The TTW Authors
// SPDX-License-Identifier: Apache-2.0
//
// Converters from the public datasets' native layouts to instance files.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ttw/core.hpp"

namespace ttw::prepare {

/// GQA balanced questions: {"<qid>": {"imageId", "question", "answer"}, ...}.
/// Images are `<images_dir>/<imageId>.jpg`.
std::vector<TestInstance> convert_gqa(const std::filesystem::path& questions, const std::filesystem::path& images_dir);

/// VQAv2 questions + annotations files. `image_template` names the image with
/// "{image_id}" replaced by the zero-padded 12-digit COCO id, e.g.
/// "COCO_val2014_{image_id}.jpg". All ten annotator answers are kept.
std::vector<TestInstance> convert_vqav2(const std::filesystem::path& questions, const std::filesystem::path& annotations,
                                        const std::filesystem::path& images_dir, const std::string& image_template);

/// VQA-Rad public JSON: [{"qid", "image_name", "question", "answer"}, ...].
std::vector<TestInstance> convert_vqa_rad(const std::filesystem::path& json_file, const std::filesystem::path& images_dir);

/// MMMU export, one JSON object per line:
/// {"id", "question", "options": [..] or "['..', ..]", "answer", "image"}.
/// Questions with an empty option list become open questions.
std::vector<TestInstance> convert_mmmu(const std::filesystem::path& jsonl, const std::filesystem::path& images_dir);

struct ToyDataset {
    std::filesystem::path instances;
    std::filesystem::path references;
    std::filesystem::path weights;
    double pretrain_first_loss = 0.0;
    double pretrain_last_loss = 0.0;
};

/// Writes a synthetic toy suite into `dir`: image files, instances.jsonl,
/// references.tsv (for the mock scorer) and pretrained toy weights.
ToyDataset make_toy_dataset(const std::filesystem::path& dir, std::size_t n, std::uint64_t seed,
                            int pretrain_steps = 400);

}  // namespace ttw::prepare
