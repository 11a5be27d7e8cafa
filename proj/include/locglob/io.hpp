// Copyright (c) 2026, locglob authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace locglob::io {

/// Writes via a temporary sibling file and renames it into place, so readers
/// never observe a partially written artifact.
void write_atomic(const std::filesystem::path& path, std::string_view data);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

std::string read_file(const std::filesystem::path& path);
nlohmann::json read_json(const std::filesystem::path& path);

/// Hex digest of a file's bytes (FNV-1a 64), for manifests.
std::string file_digest(const std::filesystem::path& path);

}  // namespace locglob::io
