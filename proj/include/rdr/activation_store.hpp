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

#include <algorithm>
#include <charconv>
#include <cmath>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "json.hpp"
#include "rdr/errors.hpp"
#include "rdr/npy.hpp"

namespace rdr {

/// One layer of an activation dump. `shape` is either {n} (flat) or
/// {channels, height, width} (conv, flattened channel-major).
struct LayerSpec {
  int layer_id = 0;
  std::string name;
  std::vector<std::size_t> shape;

  bool is_conv() const noexcept { return shape.size() == 3; }
  std::size_t size() const noexcept {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return shape.empty() ? 0 : n;
  }
  std::size_t channels() const noexcept { return is_conv() ? shape[0] : 0; }
  std::size_t height() const noexcept { return is_conv() ? shape[1] : 0; }
  std::size_t width() const noexcept { return is_conv() ? shape[2] : 0; }

  bool operator==(const LayerSpec&) const = default;
};

struct NeuronRef {
  int layer_id = 0;
  std::size_t index = 0;

  auto operator<=>(const NeuronRef&) const = default;
};

struct ConvCoord {
  std::size_t channel = 0;
  std::size_t y = 0;
  std::size_t x = 0;

  bool operator==(const ConvCoord&) const = default;
};

inline std::size_t flatten(const LayerSpec& spec, const ConvCoord& c) {
  if (!spec.is_conv() || c.channel >= spec.channels() ||
      c.y >= spec.height() || c.x >= spec.width()) {
    throw QueryError("coordinate outside conv layer " +
                     std::to_string(spec.layer_id));
  }
  return c.channel * spec.height() * spec.width() + c.y * spec.width() + c.x;
}

inline ConvCoord unflatten(const LayerSpec& spec, std::size_t index) {
  if (!spec.is_conv() || index >= spec.size()) {
    throw QueryError("index " + std::to_string(index) +
                     " outside conv layer " + std::to_string(spec.layer_id));
  }
  const std::size_t plane = spec.height() * spec.width();
  return {index / plane, (index % plane) / spec.width(), index % spec.width()};
}

/// Per-instance metadata. Absent optionals disable the analyses that need
/// them.
struct InstanceMetadata {
  std::vector<std::string> instance_ids;
  std::optional<std::vector<std::int64_t>> labels;
  std::optional<std::vector<std::int64_t>> predictions;
  std::optional<std::vector<std::string>> subclasses;
};

/// Immutable activations for a fixed set of instances. Layer matrices are
/// row-major [num_instances, n_l].
class ActivationDataset {
 public:
  /// Validates every invariant; throws SchemaError or DataError.
  static ActivationDataset create(std::vector<LayerSpec> manifest,
                                  std::vector<std::vector<float>> activations,
                                  std::size_t num_instances,
                                  InstanceMetadata meta = {});

  const std::vector<LayerSpec>& manifest() const noexcept { return manifest_; }
  std::size_t num_instances() const noexcept { return num_instances_; }

  bool has_layer(int layer_id) const noexcept {
    return find_layer(layer_id) != manifest_.size();
  }
  const LayerSpec& layer(int layer_id) const {
    return manifest_[checked_layer(layer_id)];
  }
  std::span<const float> activations(int layer_id) const {
    return layer_data_[checked_layer(layer_id)];
  }
  std::span<const float> row(int layer_id, std::size_t instance) const {
    const auto pos = checked_layer(layer_id);
    if (instance >= num_instances_) {
      throw QueryError("instance " + std::to_string(instance) +
                       " out of range");
    }
    const std::size_t n = manifest_[pos].size();
    return std::span<const float>(layer_data_[pos]).subspan(instance * n, n);
  }

  const InstanceMetadata& metadata() const noexcept { return meta_; }
  const std::vector<std::string>& instance_ids() const noexcept {
    return meta_.instance_ids;
  }
  std::optional<std::size_t> find_instance(std::string_view id) const {
    for (std::size_t i = 0; i < meta_.instance_ids.size(); ++i) {
      if (meta_.instance_ids[i] == id) return i;
    }
    return std::nullopt;
  }

  /// Byte string that is identical for identical datasets: manifest JSON,
  /// raw float bytes per layer, then metadata.
  std::string canonical_bytes() const;

 private:
  ActivationDataset() = default;

  std::size_t find_layer(int layer_id) const noexcept {
    for (std::size_t i = 0; i < manifest_.size(); ++i) {
      if (manifest_[i].layer_id == layer_id) return i;
    }
    return manifest_.size();
  }
  std::size_t checked_layer(int layer_id) const {
    const auto pos = find_layer(layer_id);
    if (pos == manifest_.size()) {
      throw QueryError("unknown layer_id " + std::to_string(layer_id));
    }
    return pos;
  }

  std::vector<LayerSpec> manifest_;
  std::vector<std::vector<float>> layer_data_;
  std::size_t num_instances_ = 0;
  InstanceMetadata meta_;
};

inline ActivationDataset ActivationDataset::create(
    std::vector<LayerSpec> manifest,
    std::vector<std::vector<float>> activations, std::size_t num_instances,
    InstanceMetadata meta) {
  if (manifest.size() != activations.size()) {
    throw SchemaError("manifest declares " + std::to_string(manifest.size()) +
                      " layers, got " + std::to_string(activations.size()));
  }
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    const auto& spec = manifest[i];
    const std::string tag = "layer " + std::to_string(spec.layer_id);
    if (spec.shape.size() != 1 && spec.shape.size() != 3) {
      throw SchemaError(tag + ": shape must be [n] or [channels, height, width]");
    }
    if (spec.size() == 0) throw SchemaError(tag + ": empty shape");
    if (i > 0 && spec.layer_id <= manifest[i - 1].layer_id) {
      throw SchemaError(tag + ": layer ids must be unique and increasing");
    }
    if (activations[i].size() != num_instances * spec.size()) {
      throw SchemaError(tag + ": expected " +
                        std::to_string(num_instances * spec.size()) +
                        " values, got " +
                        std::to_string(activations[i].size()));
    }
    const std::size_t n = spec.size();
    for (std::size_t j = 0; j < activations[i].size(); ++j) {
      if (!std::isfinite(activations[i][j])) {
        throw DataError(tag + ", instance " + std::to_string(j / n) +
                            ": non-finite activation",
                        spec.layer_id, j / n);
      }
    }
  }

  if (meta.instance_ids.empty()) {
    meta.instance_ids.reserve(num_instances);
    for (std::size_t i = 0; i < num_instances; ++i) {
      meta.instance_ids.push_back(std::to_string(i));
    }
  }
  if (meta.instance_ids.size() != num_instances) {
    throw SchemaError("metadata has " + std::to_string(meta.instance_ids.size()) +
                      " rows for " + std::to_string(num_instances) +
                      " instances");
  }
  std::unordered_set<std::string> seen;
  for (const auto& id : meta.instance_ids) {
    if (!seen.insert(id).second) {
      throw SchemaError("duplicate instance_id '" + id + "'");
    }
  }
  auto check_len = [&](const auto& column, const char* name) {
    if (column && column->size() != num_instances) {
      throw SchemaError(std::string("metadata column '") + name +
                        "' has wrong length");
    }
  };
  check_len(meta.labels, "label");
  check_len(meta.predictions, "prediction");
  check_len(meta.subclasses, "subclass");

  ActivationDataset ds;
  ds.manifest_ = std::move(manifest);
  ds.layer_data_ = std::move(activations);
  ds.num_instances_ = num_instances;
  ds.meta_ = std::move(meta);
  return ds;
}

namespace detail {

inline nlohmann::json manifest_json(const std::vector<LayerSpec>& manifest,
                                    std::size_t num_instances) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& spec : manifest) {
    layers.push_back({{"layer_id", spec.layer_id},
                      {"name", spec.name},
                      {"shape", spec.shape}});
  }
  return {{"layers", layers}, {"num_instances", num_instances}};
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

inline std::int64_t parse_int(const std::string& text, const std::string& what) {
  std::int64_t value = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw SchemaError(what + ": '" + text + "' is not an integer");
  }
  return value;
}

inline InstanceMetadata read_meta_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw SchemaError(path.string() + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_csv_line(line);
  int id_col = -1, label_col = -1, pred_col = -1, sub_col = -1;
  for (std::size_t i = 0; i < header.size(); ++i) {
    const auto c = static_cast<int>(i);
    if (header[i] == "instance_id") id_col = c;
    else if (header[i] == "label") label_col = c;
    else if (header[i] == "prediction") pred_col = c;
    else if (header[i] == "subclass") sub_col = c;
  }
  if (id_col < 0) throw SchemaError(path.string() + ": missing instance_id column");

  InstanceMetadata meta;
  if (label_col >= 0) meta.labels.emplace();
  if (pred_col >= 0) meta.predictions.emplace();
  if (sub_col >= 0) meta.subclasses.emplace();
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++row;
    const auto fields = split_csv_line(line);
    if (fields.size() != header.size()) {
      throw SchemaError(path.string() + ": row " + std::to_string(row) +
                        " has " + std::to_string(fields.size()) + " fields");
    }
    const std::string where = path.string() + " row " + std::to_string(row);
    meta.instance_ids.push_back(fields[id_col]);
    if (label_col >= 0) meta.labels->push_back(parse_int(fields[label_col], where));
    if (pred_col >= 0) {
      meta.predictions->push_back(parse_int(fields[pred_col], where));
    }
    if (sub_col >= 0) meta.subclasses->push_back(fields[sub_col]);
  }
  return meta;
}

}  // namespace detail

inline std::string ActivationDataset::canonical_bytes() const {
  std::string out = detail::manifest_json(manifest_, num_instances_).dump();
  out += '\n';
  for (const auto& layer : layer_data_) {
    out.append(reinterpret_cast<const char*>(layer.data()),
               layer.size() * sizeof(float));
  }
  nlohmann::json meta = {{"instance_ids", meta_.instance_ids}};
  if (meta_.labels) meta["labels"] = *meta_.labels;
  if (meta_.predictions) meta["predictions"] = *meta_.predictions;
  if (meta_.subclasses) meta["subclasses"] = *meta_.subclasses;
  out += meta.dump();
  return out;
}

/// Loads `manifest.json`, `layer_<id>.npy` per declared layer and the
/// optional `meta.csv`. Rows of meta.csv are matched to activation rows by
/// position; `instance_id` names them.
inline ActivationDataset ingest(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw IngestError("missing " + manifest_path.string());

  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(manifest_path.string() + ": " + e.what());
  }

  std::vector<LayerSpec> manifest;
  std::size_t num_instances = 0;
  try {
    num_instances = doc.at("num_instances").get<std::size_t>();
    for (const auto& entry : doc.at("layers")) {
      LayerSpec spec;
      spec.layer_id = entry.at("layer_id").get<int>();
      spec.name = entry.value("name", std::string());
      spec.shape = entry.at("shape").get<std::vector<std::size_t>>();
      manifest.push_back(std::move(spec));
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(manifest_path.string() + ": " + e.what());
  }

  std::vector<std::vector<float>> activations;
  activations.reserve(manifest.size());
  for (const auto& spec : manifest) {
    const auto file = dir / ("layer_" + std::to_string(spec.layer_id) + ".npy");
    if (!std::filesystem::exists(file)) {
      throw IngestError("missing " + file.string());
    }
    auto array = npy::read_f32(file);
    // Accept both [N, ...shape] and [N, n_l].
    std::vector<std::size_t> expected{num_instances};
    expected.insert(expected.end(), spec.shape.begin(), spec.shape.end());
    const std::vector<std::size_t> flat{num_instances, spec.size()};
    if (array.shape != expected && array.shape != flat) {
      std::string got;
      for (auto d : array.shape) got += std::to_string(d) + " ";
      throw SchemaError(file.string() + ": shape [" + got +
                        "] does not match manifest for layer " +
                        std::to_string(spec.layer_id));
    }
    activations.push_back(std::move(array.data));
  }

  InstanceMetadata meta;
  const auto meta_path = dir / "meta.csv";
  if (std::filesystem::exists(meta_path)) meta = detail::read_meta_csv(meta_path);

  return ActivationDataset::create(std::move(manifest), std::move(activations),
                                   num_instances, std::move(meta));
}

/// Writes `dataset` in the layout `ingest` reads.
inline void write_dump(const ActivationDataset& dataset,
                       const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    if (!out) throw IngestError("cannot write manifest in " + dir.string());
    out << detail::manifest_json(dataset.manifest(), dataset.num_instances())
               .dump(2)
        << '\n';
  }
  for (const auto& spec : dataset.manifest()) {
    std::vector<std::size_t> shape{dataset.num_instances()};
    shape.insert(shape.end(), spec.shape.begin(), spec.shape.end());
    npy::write_f32(dir / ("layer_" + std::to_string(spec.layer_id) + ".npy"),
                   shape, dataset.activations(spec.layer_id));
  }
  const auto& meta = dataset.metadata();
  std::ofstream out(dir / "meta.csv", std::ios::trunc);
  if (!out) throw IngestError("cannot write meta.csv in " + dir.string());
  out << "instance_id";
  if (meta.labels) out << ",label";
  if (meta.predictions) out << ",prediction";
  if (meta.subclasses) out << ",subclass";
  out << '\n';
  for (std::size_t i = 0; i < dataset.num_instances(); ++i) {
    out << meta.instance_ids[i];
    if (meta.labels) out << ',' << (*meta.labels)[i];
    if (meta.predictions) out << ',' << (*meta.predictions)[i];
    if (meta.subclasses) out << ',' << (*meta.subclasses)[i];
    out << '\n';
  }
}

inline std::size_t neuron_count(const ActivationDataset& dataset,
                                std::span<const int> layers) {
  std::set<int> unique(layers.begin(), layers.end());
  std::size_t total = 0;
  for (int id : unique) total += dataset.layer(id).size();
  return total;
}

}  // namespace rdr
