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
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "rdr/activation_store.hpp"
#include "rdr/configuration.hpp"
#include "rdr/errors.hpp"
#include "rdr/region.hpp"

namespace rdr {

struct GroupEvaluation {
  double purity = 0.0;
  double entropy = 0.0;  // natural log
  std::size_t group_size = 0;
  std::string target_subclass;
  std::map<std::string, double> subclass_distribution;
};

/// Purity = share of members with the target's subclass; entropy = Shannon
/// entropy of the members' subclass distribution.
inline GroupEvaluation evaluate_group(std::span<const std::size_t> members,
                                      std::span<const std::string> subclass_labels,
                                      std::size_t target) {
  if (members.empty()) throw DegenerateInput("cannot evaluate an empty group");
  if (target >= subclass_labels.size()) {
    throw QueryError("no subclass label for target " + std::to_string(target));
  }
  std::map<std::string, std::size_t> counts;
  for (auto m : members) {
    if (m >= subclass_labels.size()) {
      throw QueryError("no subclass label for instance " + std::to_string(m));
    }
    ++counts[subclass_labels[m]];
  }
  GroupEvaluation ev;
  ev.group_size = members.size();
  ev.target_subclass = subclass_labels[target];
  const double total = static_cast<double>(members.size());
  for (const auto& [name, c] : counts) {
    const double p = static_cast<double>(c) / total;
    ev.subclass_distribution[name] = p;
    ev.entropy -= p * std::log(p);
  }
  const auto it = counts.find(ev.target_subclass);
  ev.purity = it == counts.end() ? 0.0 : static_cast<double>(it->second) / total;
  if (ev.entropy < 0.0) ev.entropy = 0.0;  // -0.0 for point masses
  return ev;
}

inline const std::vector<std::string>& require_subclasses(const ConfigurationStore& store) {
  if (!store.source() || !store.source()->metadata().subclasses) {
    throw QueryError("dataset has no subclass column");
  }
  return *store.source()->metadata().subclasses;
}

/// Members of `group` ordered by configuration distance to the target, then
/// cut to `size` or padded with the nearest non-members.
inline std::vector<std::size_t> equalize_group(const ConfigurationStore& store,
                                               std::size_t target,
                                               std::span<const std::size_t> group,
                                               std::size_t size) {
  const auto ranked = knn(store, target, store.num_instances());
  std::set<std::size_t> in_group(group.begin(), group.end());
  std::vector<std::size_t> out;
  for (const auto& nb : ranked) {
    if (out.size() == size) break;
    if (in_group.count(nb.index)) out.push_back(nb.index);
  }
  for (const auto& nb : ranked) {
    if (out.size() == size) break;
    if (!in_group.count(nb.index)) out.push_back(nb.index);
  }
  return out;
}

struct ClassRatioReport {
  std::map<std::int64_t, std::size_t> counts;  // true label -> members
};

struct LocalizationReport {
  int layer_id = 0;
  std::vector<std::pair<std::size_t, std::size_t>> channels;  // (channel, neurons in N*)
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::size_t> instances;
  std::vector<std::vector<double>> maps;  // per instance, H*W row-major in [0,1]
};

/// Groups the principal neurons of `layer_id` by channel and, per member,
/// averages the selected channels' activation maps. With `weighted`, each
/// channel is weighted by the summed selection scores of its neurons.
inline LocalizationReport localize(const RelaxedDecisionRegion& region,
                                   const ActivationDataset& dataset, int layer_id,
                                   bool weighted = false) {
  const auto& spec = dataset.layer(layer_id);
  if (!spec.is_conv()) {
    throw DegenerateInput("layer " + std::to_string(layer_id) + " is not convolutional");
  }
  std::map<std::size_t, std::size_t> per_channel;
  std::map<std::size_t, double> channel_score;
  for (const auto& s : region.principal.selected) {
    if (s.neuron.layer_id != layer_id) continue;
    const auto c = unflatten(spec, s.neuron.index).channel;
    ++per_channel[c];
    channel_score[c] += s.score;
  }
  if (per_channel.empty()) {
    throw DegenerateInput("no principal neurons in conv layer " + std::to_string(layer_id));
  }

  LocalizationReport rep;
  rep.layer_id = layer_id;
  rep.height = spec.height();
  rep.width = spec.width();
  for (const auto& [c, n] : per_channel) rep.channels.emplace_back(c, n);

  double weight_total = 0.0;
  for (const auto& [c, w] : channel_score) weight_total += weighted ? w : 1.0;
  const std::size_t plane = rep.height * rep.width;
  for (auto inst : members(region)) {
    const auto row = dataset.row(layer_id, inst);
    std::vector<double> map(plane, 0.0);
    for (const auto& [c, score] : channel_score) {
      const double w = weight_total > 0.0 ? (weighted ? score : 1.0) / weight_total
                                          : 1.0 / static_cast<double>(channel_score.size());
      for (std::size_t p = 0; p < plane; ++p) map[p] += w * row[c * plane + p];
    }
    const auto [lo, hi] = std::minmax_element(map.begin(), map.end());
    const double min = *lo, max = *hi;
    for (auto& v : map) v = max > min ? (v - min) / (max - min) : 0.0;
    rep.instances.push_back(inst);
    rep.maps.push_back(std::move(map));
  }
  return rep;
}

/// Binary 8-bit PGM of a [0,1] map.
inline void write_pgm(const std::filesystem::path& path, std::span<const double> map,
                      std::size_t height, std::size_t width) {
  if (map.size() != height * width) throw QueryError("map size does not match H*W");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IngestError("cannot write " + path.string());
  out << "P5\n" << width << ' ' << height << "\n255\n";
  for (double v : map) {
    const auto byte = static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    out.put(static_cast<char>(byte));
  }
}

struct MisclassificationReport {
  RelaxedDecisionRegion region;
  ClassRatioReport class_ratio;
  std::optional<LocalizationReport> localization;  // when N* touches a conv layer
};

/// Region around a misclassified target whose negative set is every
/// instance sharing the target's true label.
inline MisclassificationReport misclassification_report(
    std::shared_ptr<const ConfigurationStore> store, std::size_t target,
    std::size_t k = kDefaultK, std::size_t t = kDefaultT, bool weighted_localization = false) {
  const auto& source = store->source();
  if (!source || !source->metadata().labels || !source->metadata().predictions) {
    throw QueryError("misclassification analysis needs label and prediction columns");
  }
  const auto& labels = *source->metadata().labels;
  const auto& preds = *source->metadata().predictions;
  if (target >= labels.size()) throw QueryError("target out of range");
  if (labels[target] == preds[target]) {
    throw QueryError("instance " + source->instance_ids()[target] +
                     " is classified correctly");
  }

  MisclassificationReport rep;
  rep.region = build_rdr(store, target, k, t, NegativePolicy::same_true_label(labels[target]));
  for (auto m : members(rep.region)) ++rep.class_ratio.counts[labels[m]];
  for (const auto& spec : store->neuron_set().layers()) {
    if (!spec.is_conv()) continue;
    const bool touched = std::any_of(
        rep.region.principal.selected.begin(), rep.region.principal.selected.end(),
        [&](const SelectedNeuron& s) { return s.neuron.layer_id == spec.layer_id; });
    if (touched) {
      rep.localization = localize(rep.region, *source, spec.layer_id, weighted_localization);
      break;
    }
  }
  return rep;
}

/// One independent single-layer region per requested layer. Duplicate
/// layers collapse to one entry; errors are prefixed with the layer.
inline std::map<int, RelaxedDecisionRegion> layer_sweep(
    std::shared_ptr<const ActivationDataset> dataset, std::size_t target,
    std::span<const int> layers, std::size_t k = kDefaultK, std::size_t t = kDefaultT,
    NegativePolicy policy = NegativePolicy::rest()) {
  std::map<int, RelaxedDecisionRegion> out;
  for (int layer : std::set<int>(layers.begin(), layers.end())) {
    const std::string tag = "layer " + std::to_string(layer) + ": ";
    try {
      auto store = std::make_shared<const ConfigurationStore>(
          binarize(dataset, std::vector<int>{layer}));
      out.emplace(layer, build_rdr(store, target, k, t, policy));
    } catch (const InsufficientCandidates& e) {
      throw InsufficientCandidates(e.available(), e.requested(), tag);
    } catch (const DegenerateInput& e) {
      throw DegenerateInput(tag + e.what());
    } catch (const QueryError& e) {
      throw QueryError(tag + e.what());
    }
  }
  return out;
}

/// Spearman rank correlation with average ranks for ties.
inline double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw QueryError("spearman needs two equal-length samples of size >= 2");
  }
  auto ranks = [](std::span<const double> v) {
    std::vector<std::size_t> order(v.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < order.size();) {
      std::size_t j = i;
      while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
      const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
      for (std::size_t q = i; q <= j; ++q) r[order[q]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

inline nlohmann::json to_json(const GroupEvaluation& ev) {
  return {{"purity", ev.purity},
          {"entropy", ev.entropy},
          {"group_size", ev.group_size},
          {"target_subclass", ev.target_subclass},
          {"subclass_distribution", ev.subclass_distribution}};
}

inline nlohmann::json to_json(const ClassRatioReport& rep) {
  nlohmann::json counts = nlohmann::json::object();
  for (const auto& [label, n] : rep.counts) counts[std::to_string(label)] = n;
  return counts;
}

inline nlohmann::json to_json(const LocalizationReport& rep, const ActivationDataset& ds) {
  nlohmann::json channels = nlohmann::json::array();
  for (const auto& [c, n] : rep.channels) channels.push_back({{"channel", c}, {"neurons", n}});
  nlohmann::json maps = nlohmann::json::array();
  for (std::size_t i = 0; i < rep.instances.size(); ++i) {
    maps.push_back({{"instance", ds.instance_ids()[rep.instances[i]]}, {"map", rep.maps[i]}});
  }
  return {{"layer", rep.layer_id},
          {"height", rep.height},
          {"width", rep.width},
          {"channels", channels},
          {"maps", maps}};
}

}  // namespace rdr
