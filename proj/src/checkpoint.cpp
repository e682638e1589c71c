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

#include "amba/checkpoint.hpp"

#include <boost/crc.hpp>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <set>

#include "amba/errors.hpp"

namespace amba {
namespace {

constexpr unsigned char kMagic[4] = {'A', 'M', 'B', 'A'};

template <typename U>
void put_le(std::vector<unsigned char>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<unsigned char>& bytes, std::size_t end)
      : bytes_(bytes), end_(end) {}

  template <typename U>
  U le(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes_[pos_ + i]) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }

  std::vector<unsigned char> take(std::size_t n, const char* what) {
    need(n, what);
    std::vector<unsigned char> out(bytes_.begin() + pos_, bytes_.begin() + pos_ + n);
    pos_ += n;
    return out;
  }

  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (n > end_ - pos_) {
      throw FormatError("checkpoint: truncated while reading " + std::string(what) +
                        " at byte offset " + std::to_string(pos_));
    }
  }

  const std::vector<unsigned char>& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

std::size_t element_size(DType d) { return d == DType::kF32 ? 4 : 1; }

}  // namespace

std::uint64_t crc64(const unsigned char* data, std::size_t size) {
  // CRC-64/XZ (ECMA-182 polynomial, reflected, all-ones init and xor-out).
  boost::crc_optimal<64, 0x42F0E1EBA9EA3693ULL, ~0ULL, ~0ULL, true, true> crc;
  crc.process_bytes(data, size);
  return crc.checksum();
}

void TensorArchive::append(ArchiveEntry entry) {
  if (contains(entry.name)) throw UsageError("archive: duplicate entry '" + entry.name + "'");
  entries_.push_back(std::move(entry));
}

void TensorArchive::add_f32(const std::string& name, const Shape& dims, const Vec<float>& values) {
  if (numel(dims) != values.size()) {
    throw ShapeError("archive: " + name + " has " + std::to_string(values.size()) +
                     " values for shape " + shape_string(dims));
  }
  ArchiveEntry e{name, DType::kF32, dims, {}};
  e.payload.reserve(values.size() * 4);
  for (Index i = 0; i < values.size(); ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, &values[i], 4);
    put_le(e.payload, bits);
  }
  append(std::move(e));
}

void TensorArchive::add_text(const std::string& name, const std::string& text) {
  append({name, DType::kU8, {static_cast<Index>(text.size())},
          std::vector<unsigned char>(text.begin(), text.end())});
}

const ArchiveEntry* TensorArchive::find(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

Vec<float> TensorArchive::f32(const std::string& name) const {
  const auto* e = find(name);
  if (e == nullptr || e->dtype != DType::kF32) {
    throw FormatError("checkpoint: no f32 entry named '" + name + "'");
  }
  Vec<float> v(numel(e->dims));
  for (Index i = 0; i < v.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(e->payload[4 * i + b]) << (8 * b);
    std::memcpy(&v[i], &bits, 4);
  }
  return v;
}

std::string TensorArchive::text(const std::string& name) const {
  const auto* e = find(name);
  if (e == nullptr || e->dtype != DType::kU8) {
    throw FormatError("checkpoint: no byte entry named '" + name + "'");
  }
  return std::string(e->payload.begin(), e->payload.end());
}

std::vector<unsigned char> TensorArchive::serialize() const {
  std::vector<unsigned char> out(std::begin(kMagic), std::end(kMagic));
  put_le<std::uint32_t>(out, kVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(entries_.size()));
  for (const auto& e : entries_) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    out.push_back(static_cast<unsigned char>(e.dtype));
    out.push_back(static_cast<unsigned char>(e.dims.size()));
    for (Index d : e.dims) put_le<std::uint64_t>(out, static_cast<std::uint64_t>(d));
    out.insert(out.end(), e.payload.begin(), e.payload.end());
  }
  put_le<std::uint64_t>(out, crc64(out.data(), out.size()));
  return out;
}

TensorArchive TensorArchive::deserialize(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 4 || !std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) {
    throw FormatError("checkpoint: bad magic (expected \"AMBA\")");
  }
  if (bytes.size() < 4 + 4 + 4 + 8) {
    throw FormatError("checkpoint: truncated header (" + std::to_string(bytes.size()) + " bytes)");
  }
  const std::size_t body = bytes.size() - 8;
  Reader r(bytes, body);
  r.take(4, "magic");
  const auto version = r.le<std::uint32_t>("version");
  if (version != kVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version) +
                      " (expected " + std::to_string(kVersion) + ")");
  }
  const auto count = r.le<std::uint32_t>("entry count");
  TensorArchive archive;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.le<std::uint32_t>("name length");
    const auto name_bytes = r.take(name_len, "name");
    ArchiveEntry e;
    e.name.assign(name_bytes.begin(), name_bytes.end());
    const auto dtype = r.le<std::uint8_t>("dtype");
    if (dtype > static_cast<std::uint8_t>(DType::kU8)) {
      throw FormatError("checkpoint: unknown dtype code " + std::to_string(dtype) + " for '" +
                        e.name + "'");
    }
    e.dtype = static_cast<DType>(dtype);
    const auto rank = r.le<std::uint8_t>("rank");
    std::uint64_t elements = 1;
    for (int d = 0; d < rank; ++d) {
      const auto dim = r.le<std::uint64_t>("dims");
      if (dim != 0 && elements > (std::uint64_t{1} << 48) / dim) {
        throw FormatError("checkpoint: implausible shape for '" + e.name + "'");
      }
      elements *= dim;
      e.dims.push_back(static_cast<Index>(dim));
    }
    e.payload = r.take(elements * element_size(e.dtype), "payload");
    if (archive.contains(e.name)) throw FormatError("checkpoint: duplicate entry '" + e.name + "'");
    archive.entries_.push_back(std::move(e));
  }
  if (r.pos() != body) {
    throw FormatError("checkpoint: " + std::to_string(body - r.pos()) +
                      " unexpected bytes before the checksum");
  }
  Reader tail(bytes, bytes.size());
  tail.take(body, "body");
  const auto stored = tail.le<std::uint64_t>("checksum");
  if (stored != crc64(bytes.data(), body)) throw FormatError("checkpoint: checksum mismatch");
  return archive;
}

void TensorArchive::save(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  // Write to a sibling and rename so a crash never leaves a torn archive.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

TensorArchive TensorArchive::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

bool is_metadata_name(const std::string& name) {
  return name.rfind("__", 0) == 0 || name.rfind("optim.", 0) == 0;
}

std::string LoadReport::to_text() const {
  std::string out = "loaded=" + std::to_string(loaded.size()) + "\n";
  for (const auto& n : missing) out += "missing=" + n + "\n";
  for (const auto& n : extra) out += "extra=" + n + "\n";
  for (const auto& n : shape_mismatch) out += "shape_mismatch=" + n + "\n";
  return out;
}

template <typename T>
TensorArchive model_archive(AudioMamba<T>& model, const RunConfig& config) {
  TensorArchive archive;
  archive.add_text(kConfigEntry, config.model_text());
  for (const auto& p : model.parameters()) {
    archive.add_f32(p.name, p.tensor.shape(), p.tensor.values().template cast<float>());
  }
  return archive;
}

template <typename T>
void save_checkpoint(AudioMamba<T>& model, const RunConfig& config,
                     const std::filesystem::path& path) {
  model_archive(model, config).save(path);
}

template <typename T>
LoadReport load_parameters(AudioMamba<T>& model, const TensorArchive& archive, LoadMode mode) {
  LoadReport report;
  std::set<std::string> model_names;
  auto params = model.parameters();
  for (const auto& p : params) model_names.insert(p.name);
  for (const auto& e : archive.entries()) {
    if (!is_metadata_name(e.name) && !model_names.count(e.name)) report.extra.push_back(e.name);
  }
  std::vector<std::pair<Tensor<T>, const ArchiveEntry*>> plan;
  for (auto& p : params) {
    const auto* e = archive.find(p.name);
    if (e == nullptr) {
      report.missing.push_back(p.name);
    } else if (e->dtype != DType::kF32 || e->dims != p.tensor.shape()) {
      report.shape_mismatch.push_back(p.name + " " + shape_string(e->dims) + " vs " +
                                      shape_string(p.tensor.shape()));
    } else {
      plan.emplace_back(p.tensor, e);
      report.loaded.push_back(p.name);
    }
  }
  if (mode == LoadMode::kStrict && !report.exact()) {
    throw DataError("checkpoint does not match the model:\n" + report.to_text());
  }
  for (auto& [tensor, entry] : plan) {
    tensor.mutable_values() = archive.f32(entry->name).template cast<T>();
  }
  return report;
}

RunConfig archive_config(const TensorArchive& archive) {
  if (!archive.contains(kConfigEntry)) throw FormatError("checkpoint: missing config entry");
  return RunConfig::parse(archive.text(kConfigEntry), "checkpoint config");
}

template <typename T>
std::pair<AudioMamba<T>, LoadReport> load_checkpoint(const std::filesystem::path& path,
                                                     LoadMode mode) {
  const auto archive = TensorArchive::load(path);
  AudioMamba<T> model(archive_config(archive).model);
  auto report = load_parameters(model, archive, mode);
  return {std::move(model), std::move(report)};
}

#define AMBA_INSTANTIATE(T)                                                                 \
  template TensorArchive model_archive(AudioMamba<T>&, const RunConfig&);                  \
  template void save_checkpoint(AudioMamba<T>&, const RunConfig&, const std::filesystem::path&); \
  template LoadReport load_parameters(AudioMamba<T>&, const TensorArchive&, LoadMode);     \
  template std::pair<AudioMamba<T>, LoadReport> load_checkpoint(const std::filesystem::path&, \
                                                                LoadMode);

AMBA_INSTANTIATE(float)
AMBA_INSTANTIATE(double)

#undef AMBA_INSTANTIATE

}  // namespace amba
