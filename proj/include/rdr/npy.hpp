// Copyright 2026 The Authors.
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

#pragma once

// Minimal reader/writer for the NumPy .npy array format, version 1.0,
// restricted to little-endian float32 in C order.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rdr/errors.hpp"

namespace rdr::npy {

static_assert(std::endian::native == std::endian::little,
              "npy I/O assumes a little-endian host");

struct Array {
  std::vector<std::size_t> shape;
  std::vector<float> data;
};

namespace detail {

inline constexpr std::string_view kMagic = "\x93NUMPY";

inline std::string header_value(const std::string& header,
                                const std::string& key,
                                const std::string& path) {
  const auto pos = header.find("'" + key + "'");
  if (pos == std::string::npos) {
    throw SchemaError(path + ": npy header lacks '" + key + "'");
  }
  auto colon = header.find(':', pos);
  if (colon == std::string::npos) {
    throw SchemaError(path + ": malformed npy header");
  }
  ++colon;
  while (colon < header.size() && header[colon] == ' ') ++colon;
  std::size_t end = colon;
  if (end < header.size() && header[end] == '(') {
    end = header.find(')', end);
    if (end == std::string::npos) {
      throw SchemaError(path + ": malformed npy shape");
    }
    ++end;
  } else if (end < header.size() && header[end] == '\'') {
    end = header.find('\'', end + 1);
    if (end == std::string::npos) {
      throw SchemaError(path + ": malformed npy header");
    }
    ++end;
  } else {
    while (end < header.size() && header[end] != ',' && header[end] != '}') {
      ++end;
    }
  }
  return header.substr(colon, end - colon);
}

inline std::vector<std::size_t> parse_shape(const std::string& text,
                                            const std::string& path) {
  std::vector<std::size_t> shape;
  std::size_t i = 1;  // skip '('
  while (i < text.size()) {
    while (i < text.size() && (text[i] == ' ' || text[i] == ',')) ++i;
    if (i >= text.size() || text[i] == ')') break;
    std::size_t value = 0;
    bool any = false;
    while (i < text.size() && text[i] >= '0' && text[i] <= '9') {
      value = value * 10 + static_cast<std::size_t>(text[i] - '0');
      any = true;
      ++i;
    }
    if (!any) throw SchemaError(path + ": malformed npy shape " + text);
    shape.push_back(value);
  }
  return shape;
}

}  // namespace detail

inline Array read_f32(const std::filesystem::path& path) {
  const std::string name = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("cannot open " + name);

  char magic[6];
  if (!in.read(magic, 6) || std::string_view(magic, 6) != detail::kMagic) {
    throw SchemaError(name + ": not an npy file");
  }
  unsigned char version[2];
  in.read(reinterpret_cast<char*>(version), 2);
  std::uint32_t header_len = 0;
  if (version[0] == 1) {
    unsigned char len[2];
    in.read(reinterpret_cast<char*>(len), 2);
    header_len = len[0] | (len[1] << 8);
  } else if (version[0] == 2 || version[0] == 3) {
    unsigned char len[4];
    in.read(reinterpret_cast<char*>(len), 4);
    header_len = len[0] | (len[1] << 8) | (len[2] << 16) |
                 (static_cast<std::uint32_t>(len[3]) << 24);
  } else {
    throw SchemaError(name + ": unsupported npy version " +
                      std::to_string(version[0]));
  }
  std::string header(header_len, '\0');
  if (!in.read(header.data(), header_len)) {
    throw SchemaError(name + ": truncated npy header");
  }

  const std::string descr = detail::header_value(header, "descr", name);
  if (descr != "'<f4'") {
    throw SchemaError(name + ": dtype " + descr + ", expected '<f4'");
  }
  if (detail::header_value(header, "fortran_order", name) != "False") {
    throw SchemaError(name + ": Fortran-ordered arrays are not supported");
  }

  Array array;
  array.shape =
      detail::parse_shape(detail::header_value(header, "shape", name), name);
  std::size_t count = 1;
  for (auto d : array.shape) count *= d;
  array.data.resize(count);
  if (!in.read(reinterpret_cast<char*>(array.data.data()),
               static_cast<std::streamsize>(count * sizeof(float)))) {
    throw SchemaError(name + ": payload shorter than declared shape");
  }
  in.peek();
  if (!in.eof()) throw SchemaError(name + ": trailing bytes after payload");
  return array;
}

/// Writes a version 1.0 header padded to a 64-byte boundary, as numpy does.
inline void write_f32(const std::filesystem::path& path,
                      std::span<const std::size_t> shape,
                      std::span<const float> data) {
  std::string dict = "{'descr': '<f4', 'fortran_order': False, 'shape': (";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    dict += std::to_string(shape[i]);
    if (shape.size() == 1 || i + 1 < shape.size()) dict += ",";
    if (i + 1 < shape.size()) dict += " ";
  }
  dict += "), }";
  const std::size_t preamble = detail::kMagic.size() + 2 + 2;
  std::size_t total = preamble + dict.size() + 1;
  const std::size_t padded = (total + 63) / 64 * 64;
  dict.append(padded - total, ' ');
  dict += '\n';

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IngestError("cannot write " + path.string());
  out.write(detail::kMagic.data(), detail::kMagic.size());
  const char version[2] = {1, 0};
  out.write(version, 2);
  const auto len = static_cast<std::uint16_t>(dict.size());
  const char len_bytes[2] = {static_cast<char>(len & 0xff),
                             static_cast<char>(len >> 8)};
  out.write(len_bytes, 2);
  out.write(dict.data(), static_cast<std::streamsize>(dict.size()));
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(float)));
  if (!out) throw IngestError("short write to " + path.string());
}

}  // namespace rdr::npy
