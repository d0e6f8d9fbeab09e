// Copyright (c) 2026, the kfade authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "kfade/linalg.hpp"

namespace kfade {

/// One named f64 tensor inside a container file.
struct TensorEntry {
  std::string name;
  std::vector<std::uint64_t> dims;
  std::vector<double> data;
};

/// KFT1 container: magic "KFT1" (4B 46 54 31), u32-LE entry count, then per
/// entry: u16-LE name length, UTF-8 name, u8 dtype (0 = f64), u8 rank,
/// rank x u64-LE dims, raw little-endian f64 payload. Everything is written
/// with explicit little-endian byte order, so files are platform portable.
std::vector<std::uint8_t> encode_container(const std::vector<TensorEntry>& entries);
std::vector<TensorEntry> decode_container(const std::vector<std::uint8_t>& bytes);

void write_container(const std::filesystem::path& path,
                     const std::vector<TensorEntry>& entries);
std::vector<TensorEntry> read_container(const std::filesystem::path& path);

TensorEntry matrix_entry(const std::string& name, const Matrix& m);
TensorEntry vector_entry(const std::string& name, const Vector& v);
TensorEntry scalar_entry(const std::string& name, double value);
/// UTF-8 bytes carried as one f64 per byte; keeps the container pure f64
/// while allowing an embedded metadata document.
TensorEntry string_entry(const std::string& name, const std::string& text);

Matrix entry_to_matrix(const TensorEntry& e);
Vector entry_to_vector(const TensorEntry& e);
double entry_to_scalar(const TensorEntry& e);
std::string entry_to_string(const TensorEntry& e);

const TensorEntry& find_entry(const std::vector<TensorEntry>& entries,
                              const std::string& name);
bool has_entry(const std::vector<TensorEntry>& entries, const std::string& name);

}  // namespace kfade
