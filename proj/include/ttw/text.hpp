// Copyright 2026 The TTW Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace ttw {

/// Splits on '\n'. A trailing newline does not produce an empty last line.
std::vector<std::string_view> split_lines(std::string_view text);

std::string_view trim(std::string_view s);

std::string read_file(const std::filesystem::path& path);

/// Writes through a temporary sibling and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

}  // namespace ttw
