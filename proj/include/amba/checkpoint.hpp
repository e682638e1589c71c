/* Copyright 2026 The AudioMamba Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "amba/config.hpp"
#include "amba/model.hpp"
#include "amba/tensor.hpp"

// Named-tensor archive:
//   "AMBA" | u32 version | u32 count |
//   count x (u32 name_len | name | u8 dtype | u8 rank | rank x u64 dim | payload) |
//   u64 CRC-64/XZ of every preceding byte.
// All integers and payloads are little-endian.

namespace amba {

enum class DType : std::uint8_t {
  kF32 = 0,
  kU8 = 1,  // raw bytes; carries the config echo and training state
};

struct ArchiveEntry {
  std::string name;
  DType dtype = DType::kF32;
  Shape dims;
  std::vector<unsigned char> payload;
};

std::uint64_t crc64(const unsigned char* data, std::size_t size);

class TensorArchive {
 public:
  static constexpr std::uint32_t kVersion = 1;

  void add_f32(const std::string& name, const Shape& dims, const Vec<float>& values);
  void add_text(const std::string& name, const std::string& text);

  bool contains(const std::string& name) const { return find(name) != nullptr; }
  const ArchiveEntry* find(const std::string& name) const;
  /// Throws FormatError when the entry is absent or not f32.
  Vec<float> f32(const std::string& name) const;
  std::string text(const std::string& name) const;

  const std::vector<ArchiveEntry>& entries() const { return entries_; }

  std::vector<unsigned char> serialize() const;
  /// Throws FormatError on bad magic, version, truncation, CRC mismatch or
  /// duplicate names.
  static TensorArchive deserialize(const std::vector<unsigned char>& bytes);

  void save(const std::filesystem::path& path) const;
  static TensorArchive load(const std::filesystem::path& path);

 private:
  void append(ArchiveEntry entry);
  std::vector<ArchiveEntry> entries_;
};

inline constexpr const char* kConfigEntry = "__config__";

/// Names outside the model's parameter space: "__*" metadata and "optim.*"
/// optimizer state.
bool is_metadata_name(const std::string& name);

enum class LoadMode { kStrict, kPermissive };

struct LoadReport {
  std::vector<std::string> loaded;
  std::vector<std::string> missing;         // model parameters absent from the archive
  std::vector<std::string> extra;           // archive tensors the model does not have
  std::vector<std::string> shape_mismatch;  // present in both with different shapes

  bool exact() const { return missing.empty() && extra.empty() && shape_mismatch.empty(); }
  std::string to_text() const;
};

/// Config echo followed by every parameter in model order.
template <typename T>
TensorArchive model_archive(AudioMamba<T>& model, const RunConfig& config);

template <typename T>
void save_checkpoint(AudioMamba<T>& model, const RunConfig& config,
                     const std::filesystem::path& path);

/// Copies archive tensors into the model. Strict mode throws DataError
/// unless names and shapes match exactly; permissive mode loads the
/// intersection and reports the rest.
template <typename T>
LoadReport load_parameters(AudioMamba<T>& model, const TensorArchive& archive, LoadMode mode);

/// Config stored in the archive's echo entry.
RunConfig archive_config(const TensorArchive& archive);

/// Rebuilds the model described by the archive's config and loads it.
template <typename T>
std::pair<AudioMamba<T>, LoadReport> load_checkpoint(const std::filesystem::path& path,
                                                     LoadMode mode = LoadMode::kStrict);

}  // namespace amba
