// Copyright 2026 The d2st Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "d2st/io.hpp"

#include <cstring>
#include <fstream>

namespace d2st {

namespace {

constexpr char kMagic[8] = {'D', '2', 'S', 'T', 'A', 'R', 'C', '1'};

template <typename T>
void write_pod(std::ofstream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw NumericError("archive: truncated file");
  return v;
}

void write_string(std::ofstream& os, const std::string& s) {
  write_pod<std::uint64_t>(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::ifstream& is) {
  const auto n = read_pod<std::uint64_t>(is);
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw NumericError("archive: truncated string");
  return s;
}

}  // namespace

const Tensor* TensorArchive::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

void save_archive(const TensorArchive& archive, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ConfigError("cannot open '" + path + "' for writing");
  os.write(kMagic, sizeof(kMagic));
  write_pod<std::uint32_t>(os, 1);                             // version
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(sizeof(Real)));  // scalar width
  write_string(os, archive.metadata_json);
  write_pod<std::uint64_t>(os, archive.tensors.size());
  for (const auto& [name, t] : archive.tensors) {
    write_string(os, name);
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (Index d : t.shape()) write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(d));
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.size() * static_cast<Index>(sizeof(Real))));
  }
  if (!os) throw NumericError("archive: write failed for '" + path + "'");
}

TensorArchive load_archive(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open '" + path + "' for reading");
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw ConfigError("'" + path + "' is not a tensor archive");
  const auto version = read_pod<std::uint32_t>(is);
  if (version != 1) throw ConfigError("unsupported archive version " + std::to_string(version));
  const auto width = read_pod<std::uint32_t>(is);
  if (width != sizeof(Real))
    throw ConfigError("archive scalar width " + std::to_string(width) + " does not match build (" +
                      std::to_string(sizeof(Real)) + ")");
  TensorArchive archive;
  archive.metadata_json = read_string(is);
  const auto count = read_pod<std::uint64_t>(is);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = read_string(is);
    const auto rank = read_pod<std::uint32_t>(is);
    Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r)
      shape.push_back(static_cast<Index>(read_pod<std::uint64_t>(is)));
    Tensor t(shape);
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.size() * static_cast<Index>(sizeof(Real))));
    if (!is) throw NumericError("archive: truncated tensor '" + name + "'");
    archive.tensors.emplace_back(std::move(name), std::move(t));
  }
  return archive;
}

}  // namespace d2st
