// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <string_view>

namespace soar {

/// Whole file as bytes; throws IoError.
std::string read_file(const std::filesystem::path& path);

/// Writes to a sibling temporary file, then renames over `path`. On failure
/// the temporary is removed and `path` is left untouched.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
void write_atomic(const std::filesystem::path& path,
                  const std::function<void(const std::filesystem::path& tmp)>& writer);

}  // namespace soar
