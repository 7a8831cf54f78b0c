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
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rdr/activation_store.hpp"
#include "rdr/errors.hpp"

namespace rdr {

inline constexpr std::size_t kWordBits = 64;

inline constexpr std::size_t words_for(std::size_t bits) noexcept {
  return (bits + kWordBits - 1) / kWordBits;
}

/// Non-owning view of a packed configuration. Bits past `size` are zero.
struct ConfigurationView {
  std::span<const std::uint64_t> words;
  std::size_t size = 0;

  bool bit(std::size_t i) const noexcept {
    return (words[i / kWordBits] >> (i % kWordBits)) & 1u;
  }
};

/// Packed binary activation states, one bit per neuron. Bit i lives in word
/// i / 64 at position i % 64.
class Configuration {
 public:
  Configuration() = default;
  explicit Configuration(std::size_t size) : words_(words_for(size)), size_(size) {}

  static Configuration from_bits(std::span<const int> bits) {
    Configuration c(bits.size());
    for (std::size_t i = 0; i < bits.size(); ++i) c.set(i, bits[i] != 0);
    return c;
  }
  static Configuration from_bits(std::initializer_list<int> bits) {
    return from_bits(std::span<const int>(bits.begin(), bits.size()));
  }

  std::size_t size() const noexcept { return size_; }
  bool bit(std::size_t i) const noexcept { return view().bit(i); }
  void set(std::size_t i, bool on) noexcept {
    const std::uint64_t mask = std::uint64_t{1} << (i % kWordBits);
    if (on) {
      words_[i / kWordBits] |= mask;
    } else {
      words_[i / kWordBits] &= ~mask;
    }
  }
  std::span<const std::uint64_t> words() const noexcept { return words_; }
  ConfigurationView view() const noexcept { return {words_, size_}; }
  operator ConfigurationView() const noexcept { return view(); }

  bool operator==(const Configuration&) const = default;

 private:
  std::vector<std::uint64_t> words_;
  std::size_t size_ = 0;
};

/// Hamming distance between two configurations of equal length.
inline std::size_t config_distance(ConfigurationView a, ConfigurationView b) {
  if (a.size != b.size) {
    throw QueryError("configuration length mismatch: " +
                     std::to_string(a.size) + " vs " + std::to_string(b.size));
  }
  std::size_t d = 0;
  for (std::size_t w = 0; w < a.words.size(); ++w) {
    d += static_cast<std::size_t>(std::popcount(a.words[w] ^ b.words[w]));
  }
  return d;
}

/// Ordered neuron set over one or more layers. Canonical order is ascending
/// layer_id, then ascending index within the layer.
class NeuronSet {
 public:
  NeuronSet() = default;

  NeuronSet(const ActivationDataset& dataset, std::vector<int> layer_ids) {
    std::sort(layer_ids.begin(), layer_ids.end());
    layer_ids.erase(std::unique(layer_ids.begin(), layer_ids.end()),
                    layer_ids.end());
    if (layer_ids.empty()) throw QueryError("empty neuron set");
    for (int id : layer_ids) add(dataset.layer(id));
  }

  /// Single flat layer of `size` neurons, for stores built from raw codes.
  static NeuronSet flat(std::size_t size, int layer_id = 0) {
    if (size == 0) throw QueryError("empty neuron set");
    NeuronSet set;
    set.add(LayerSpec{layer_id, "flat", {size}});
    return set;
  }

  const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
  std::vector<int> layer_ids() const {
    std::vector<int> ids;
    for (const auto& l : layers_) ids.push_back(l.layer_id);
    return ids;
  }
  std::size_t total_size() const noexcept { return total_; }
  bool empty() const noexcept { return total_ == 0; }

  const LayerSpec* spec(int layer_id) const noexcept {
    for (const auto& l : layers_) {
      if (l.layer_id == layer_id) return &l;
    }
    return nullptr;
  }

  /// Neuron at canonical position `pos`.
  NeuronRef neuron(std::size_t pos) const {
    if (pos >= total_) throw QueryError("neuron position out of range");
    std::size_t layer = static_cast<std::size_t>(
        std::upper_bound(offsets_.begin(), offsets_.end(), pos) -
        offsets_.begin() - 1);
    return {layers_[layer].layer_id, pos - offsets_[layer]};
  }

  /// Canonical position of `ref`.
  std::size_t position(const NeuronRef& ref) const {
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      if (layers_[l].layer_id == ref.layer_id) {
        if (ref.index >= layers_[l].size()) break;
        return offsets_[l] + ref.index;
      }
    }
    throw QueryError("neuron (" + std::to_string(ref.layer_id) + ", " +
                     std::to_string(ref.index) + ") not in neuron set");
  }

  /// FNV-1a over layer ids and shapes.
  std::uint64_t hash() const noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](std::uint64_t v) {
      for (int b = 0; b < 8; ++b) {
        h ^= (v >> (8 * b)) & 0xff;
        h *= 0x100000001b3ULL;
      }
    };
    for (const auto& l : layers_) {
      mix(static_cast<std::uint64_t>(static_cast<std::int64_t>(l.layer_id)));
      mix(l.shape.size());
      for (auto d : l.shape) mix(d);
    }
    return h;
  }

  bool operator==(const NeuronSet& other) const {
    return layers_ == other.layers_;
  }

 private:
  void add(const LayerSpec& spec) {
    offsets_.push_back(total_);
    layers_.push_back(spec);
    total_ += spec.size();
  }

  std::vector<LayerSpec> layers_;
  std::vector<std::size_t> offsets_;
  std::size_t total_ = 0;
};

/// Configurations of every instance over one neuron set, packed row by row.
class ConfigurationStore {
 public:
  /// Only binary states are implemented; the field reserves room for
  /// m-state piecewise-linear activations.
  static constexpr unsigned kStatesPerNeuron = 2;

  ConfigurationStore(NeuronSet neuron_set, std::size_t num_instances,
                     std::vector<std::uint64_t> words,
                     std::shared_ptr<const ActivationDataset> source = nullptr)
      : neuron_set_(std::move(neuron_set)),
        num_instances_(num_instances),
        words_per_code_(words_for(neuron_set_.total_size())),
        words_(std::move(words)),
        source_(std::move(source)) {
    if (words_.size() != num_instances_ * words_per_code_) {
      throw SchemaError("packed code buffer has wrong size");
    }
  }

  static ConfigurationStore from_codes(
      NeuronSet neuron_set, std::span<const Configuration> codes,
      std::shared_ptr<const ActivationDataset> source = nullptr) {
    const std::size_t wpc = words_for(neuron_set.total_size());
    std::vector<std::uint64_t> words;
    words.reserve(codes.size() * wpc);
    for (const auto& c : codes) {
      if (c.size() != neuron_set.total_size()) {
        throw QueryError("code length does not match neuron set");
      }
      words.insert(words.end(), c.words().begin(), c.words().end());
    }
    return ConfigurationStore(std::move(neuron_set), codes.size(),
                              std::move(words), std::move(source));
  }

  const NeuronSet& neuron_set() const noexcept { return neuron_set_; }
  std::size_t num_instances() const noexcept { return num_instances_; }
  std::size_t code_size() const noexcept { return neuron_set_.total_size(); }
  std::span<const std::uint64_t> words() const noexcept { return words_; }

  ConfigurationView code(std::size_t instance) const {
    if (instance >= num_instances_) {
      throw QueryError("instance " + std::to_string(instance) +
                       " out of range [0, " + std::to_string(num_instances_) +
                       ")");
    }
    return {std::span<const std::uint64_t>(words_).subspan(
                instance * words_per_code_, words_per_code_),
            neuron_set_.total_size()};
  }

  /// Dataset the codes were derived from; null for stores built from raw
  /// codes or loaded from a cache without one.
  const std::shared_ptr<const ActivationDataset>& source() const noexcept {
    return source_;
  }

 private:
  NeuronSet neuron_set_;
  std::size_t num_instances_ = 0;
  std::size_t words_per_code_ = 0;
  std::vector<std::uint64_t> words_;
  std::shared_ptr<const ActivationDataset> source_;
};

/// State 1 iff activation > 0; exact zeros map to state 0.
inline ConfigurationStore binarize(
    std::shared_ptr<const ActivationDataset> dataset, const NeuronSet& set) {
  if (set.empty()) throw QueryError("empty neuron set");
  const std::size_t n = dataset->num_instances();
  const std::size_t wpc = words_for(set.total_size());
  std::vector<std::uint64_t> words(n * wpc, 0);
  std::size_t offset = 0;
  for (const auto& spec : set.layers()) {
    const auto data = dataset->activations(spec.layer_id);
    if (dataset->layer(spec.layer_id).size() != spec.size()) {
      throw QueryError("neuron set layer " + std::to_string(spec.layer_id) +
                       " does not match dataset");
    }
    const std::size_t width = spec.size();
    for (std::size_t i = 0; i < n; ++i) {
      std::uint64_t* code = words.data() + i * wpc;
      const float* row = data.data() + i * width;
      for (std::size_t j = 0; j < width; ++j) {
        if (row[j] > 0.0f) {
          const std::size_t pos = offset + j;
          code[pos / kWordBits] |= std::uint64_t{1} << (pos % kWordBits);
        }
      }
    }
    offset += width;
  }
  return ConfigurationStore(set, n, std::move(words), std::move(dataset));
}

inline ConfigurationStore binarize(
    std::shared_ptr<const ActivationDataset> dataset, std::vector<int> layers) {
  NeuronSet set(*dataset, std::move(layers));
  return binarize(std::move(dataset), set);
}

enum class Metric { kConfiguration, kEuclidean, kCosine };

inline std::string_view to_string(Metric m) noexcept {
  switch (m) {
    case Metric::kConfiguration: return "configuration";
    case Metric::kEuclidean: return "euclidean";
    case Metric::kCosine: return "cosine";
  }
  return "?";
}

inline Metric parse_metric(std::string_view name) {
  if (name == "configuration") return Metric::kConfiguration;
  if (name == "euclidean") return Metric::kEuclidean;
  if (name == "cosine") return Metric::kCosine;
  throw QueryError("unknown metric '" + std::string(name) + "'");
}

struct Neighbor {
  std::size_t index = 0;
  double distance = 0.0;

  bool operator==(const Neighbor&) const = default;
};

namespace detail {

inline void check_target(const ConfigurationStore& store, std::size_t target,
                         std::size_t k) {
  if (target >= store.num_instances()) {
    throw QueryError("target " + std::to_string(target) + " out of range");
  }
  if (k < 1 || k > store.num_instances()) {
    throw QueryError("k=" + std::to_string(k) + " outside [1, " +
                     std::to_string(store.num_instances()) + "]");
  }
}

inline std::string instance_name(const ConfigurationStore& store,
                                 std::size_t i) {
  if (store.source()) return "'" + store.source()->instance_ids()[i] + "'";
  return std::to_string(i);
}

/// Distance from `target` to every instance under `metric`.
inline std::vector<double> all_distances(const ConfigurationStore& store,
                                         std::size_t target, Metric metric,
                                         std::optional<int> feature_layer) {
  const std::size_t n = store.num_instances();
  std::vector<double> dist(n, 0.0);
  if (metric == Metric::kConfiguration) {
    const auto t = store.code(target);
    for (std::size_t i = 0; i < n; ++i) {
      dist[i] = static_cast<double>(config_distance(t, store.code(i)));
    }
    return dist;
  }

  if (!feature_layer) {
    throw QueryError(std::string(to_string(metric)) +
                     " metric requires a feature layer");
  }
  if (!store.source()) {
    throw QueryError("store has no source activations for " +
                     std::string(to_string(metric)) + " metric");
  }
  const auto& ds = *store.source();
  const auto t = ds.row(*feature_layer, target);
  auto norm = [](std::span<const float> v) {
    double s = 0.0;
    for (float x : v) s += static_cast<double>(x) * x;
    return std::sqrt(s);
  };
  const double t_norm = norm(t);
  if (metric == Metric::kCosine && t_norm == 0.0) {
    throw DegenerateInput("zero-norm feature vector for instance " +
                          instance_name(store, target));
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = ds.row(*feature_layer, i);
    if (metric == Metric::kEuclidean) {
      double s = 0.0;
      for (std::size_t j = 0; j < r.size(); ++j) {
        const double d = static_cast<double>(r[j]) - t[j];
        s += d * d;
      }
      dist[i] = std::sqrt(s);
    } else {
      const double r_norm = norm(r);
      if (r_norm == 0.0) {
        throw DegenerateInput("zero-norm feature vector for instance " +
                              instance_name(store, i));
      }
      double dot = 0.0;
      for (std::size_t j = 0; j < r.size(); ++j) {
        dot += static_cast<double>(r[j]) * t[j];
      }
      dist[i] = 1.0 - dot / (t_norm * r_norm);
    }
  }
  dist[target] = 0.0;
  return dist;
}

}  // namespace detail

/// Exact k nearest neighbors by linear scan. The target is always entry 0 at
/// distance 0; the rest are ordered by (distance, index).
inline std::vector<Neighbor> knn(const ConfigurationStore& store,
                                 std::size_t target, std::size_t k,
                                 Metric metric = Metric::kConfiguration,
                                 std::optional<int> feature_layer = std::nullopt) {
  detail::check_target(store, target, k);
  const auto dist = detail::all_distances(store, target, metric, feature_layer);

  std::vector<std::size_t> others;
  others.reserve(store.num_instances() - 1);
  for (std::size_t i = 0; i < store.num_instances(); ++i) {
    if (i != target) others.push_back(i);
  }
  auto less = [&dist](std::size_t a, std::size_t b) {
    return dist[a] != dist[b] ? dist[a] < dist[b] : a < b;
  };
  std::partial_sort(others.begin(), others.begin() + (k - 1), others.end(), less);

  std::vector<Neighbor> result;
  result.reserve(k);
  result.push_back({target, 0.0});
  for (std::size_t i = 0; i + 1 < k; ++i) {
    result.push_back({others[i], dist[others[i]]});
  }
  return result;
}

/// The `top_m` smallest configuration distances from `target`, ascending.
inline std::vector<std::size_t> distance_histogram(const ConfigurationStore& store,
                                                   std::size_t target,
                                                   std::size_t top_m) {
  const auto neighbors = knn(store, target, top_m);
  std::vector<std::size_t> out;
  out.reserve(neighbors.size());
  for (const auto& nb : neighbors) out.push_back(static_cast<std::size_t>(nb.distance));
  return out;
}

// Store cache: "RDRCFG01", then little-endian u64 neuron-set hash,
// num_instances, code_size, followed by the packed words.

inline constexpr std::string_view kCacheMagic = "RDRCFG01";

inline void save_cache(const ConfigurationStore& store,
                       const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IngestError("cannot write " + path.string());
  out.write(kCacheMagic.data(), kCacheMagic.size());
  const std::uint64_t header[3] = {store.neuron_set().hash(),
                                   store.num_instances(), store.code_size()};
  out.write(reinterpret_cast<const char*>(header), sizeof(header));
  out.write(reinterpret_cast<const char*>(store.words().data()),
            static_cast<std::streamsize>(store.words().size() * sizeof(std::uint64_t)));
  if (!out) throw IngestError("short write to " + path.string());
}

/// Returns the cached store if its header matches `set` and
/// `num_instances`, otherwise nullopt.
inline std::optional<ConfigurationStore> load_cache(
    const std::filesystem::path& path, const NeuronSet& set,
    std::size_t num_instances,
    std::shared_ptr<const ActivationDataset> source = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  char magic[8];
  std::uint64_t header[3];
  if (!in.read(magic, 8) || std::string_view(magic, 8) != kCacheMagic) {
    return std::nullopt;
  }
  if (!in.read(reinterpret_cast<char*>(header), sizeof(header))) return std::nullopt;
  if (header[0] != set.hash() || header[1] != num_instances ||
      header[2] != set.total_size()) {
    return std::nullopt;
  }
  std::vector<std::uint64_t> words(num_instances * words_for(set.total_size()));
  if (!in.read(reinterpret_cast<char*>(words.data()),
               static_cast<std::streamsize>(words.size() * sizeof(std::uint64_t)))) {
    return std::nullopt;
  }
  return ConfigurationStore(set, num_instances, std::move(words), std::move(source));
}

/// Loads the store from `cache` when valid, else binarizes and rewrites it.
inline ConfigurationStore load_or_binarize(
    const std::filesystem::path& cache,
    std::shared_ptr<const ActivationDataset> dataset, const NeuronSet& set) {
  if (auto cached = load_cache(cache, set, dataset->num_instances(), dataset)) {
    return std::move(*cached);
  }
  auto store = binarize(std::move(dataset), set);
  save_cache(store, cache);
  return store;
}

}  // namespace rdr
