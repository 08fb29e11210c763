#pragma once

#include <filesystem>
#include <string>

#include "sf3d/tensor.hpp"

namespace sf3d {

/// Writes `<dir>/<name>.bin` (raw little-endian float32) and the sidecar
/// `<dir>/<name>.json` = {"shape": [...], "dtype": "float32", "name": name}.
void save_tensor(const Tensor& tensor, const std::filesystem::path& dir, const std::string& name);

/// Inverse of save_tensor. FormatError on a malformed descriptor or a blob
/// whose size disagrees with the declared shape; IoError if files are missing.
Tensor load_tensor(const std::filesystem::path& dir, const std::string& name);

namespace detail {

void write_le_floats(std::ostream& os, const float* data, size_t count);
void read_le_floats(std::istream& is, float* data, size_t count);

}  // namespace detail

}  // namespace sf3d
