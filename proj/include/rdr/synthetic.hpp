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

// Synthetic activation datasets with planted structure, plus the benchmark
// harnesses built on them.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "rdr/activation_store.hpp"
#include "rdr/analysis.hpp"
#include "rdr/region.hpp"

namespace rdr::synthetic {

struct SubclassOptions {
  std::size_t subclasses = 4;
  std::size_t per_subclass = 200;
  std::size_t neurons_per_subclass = 3;  // designated neurons owned by each subclass
  std::size_t noise_neurons = 20;
  std::uint64_t seed = 0;
};

/// One flat layer (id 1). Each subclass switches on its own block of
/// designated neurons and leaves every other designated neuron off; the
/// remaining neurons fire at random. Designated positions are shuffled.
inline std::shared_ptr<const ActivationDataset> subclass_dataset(const SubclassOptions& opt) {
  std::mt19937_64 rng(opt.seed);
  const std::size_t designated = opt.subclasses * opt.neurons_per_subclass;
  const std::size_t width = designated + opt.noise_neurons;
  std::vector<std::size_t> slot(width);
  std::iota(slot.begin(), slot.end(), std::size_t{0});
  std::shuffle(slot.begin(), slot.end(), rng);

  std::uniform_real_distribution<float> magnitude(0.2f, 2.0f);
  std::bernoulli_distribution coin(0.5);
  const std::size_t n = opt.subclasses * opt.per_subclass;
  std::vector<float> data(n * width, 0.0f);
  InstanceMetadata meta;
  meta.subclasses.emplace();
  meta.labels.emplace();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t s = i % opt.subclasses;
    float* row = data.data() + i * width;
    for (std::size_t d = 0; d < designated; ++d) {
      if (d / opt.neurons_per_subclass == s) row[slot[d]] = magnitude(rng);
    }
    for (std::size_t d = designated; d < width; ++d) {
      if (coin(rng)) row[slot[d]] = magnitude(rng);
    }
    meta.instance_ids.push_back("s" + std::to_string(i));
    meta.subclasses->push_back("subclass" + std::to_string(s));
    meta.labels->push_back(0);
  }
  return std::make_shared<const ActivationDataset>(ActivationDataset::create(
      {LayerSpec{1, "synthetic", {width}}}, {std::move(data)}, n, std::move(meta)));
}

struct SubclassBenchmark {
  double rdr_purity = 0.0;
  double rdr_entropy = 0.0;
  double random_purity = 0.0;
  double random_entropy = 0.0;
  double mean_group_size = 0.0;
  std::size_t targets = 0;
};

/// Mean purity/entropy of regions around random targets versus uniformly
/// random groups of the same sizes.
inline SubclassBenchmark run_subclass_benchmark(const SubclassOptions& opt,
                                                std::size_t targets = 50,
                                                std::size_t k = kDefaultK,
                                                std::size_t t = kDefaultT,
                                                std::size_t random_draws = 20) {
  const auto dataset = subclass_dataset(opt);
  const auto store = std::make_shared<const ConfigurationStore>(binarize(dataset, {1}));
  const auto& sub = *dataset->metadata().subclasses;
  std::mt19937_64 rng(opt.seed + 1);
  std::uniform_int_distribution<std::size_t> pick(0, dataset->num_instances() - 1);

  std::vector<std::size_t> all(dataset->num_instances());
  std::iota(all.begin(), all.end(), std::size_t{0});
  SubclassBenchmark out;
  out.targets = targets;
  for (std::size_t i = 0; i < targets; ++i) {
    const std::size_t target = pick(rng);
    const auto group = members(build_rdr(store, target, k, t));
    const auto ev = evaluate_group(group, sub, target);
    out.rdr_purity += ev.purity;
    out.rdr_entropy += ev.entropy;
    out.mean_group_size += static_cast<double>(group.size());
    for (std::size_t d = 0; d < random_draws; ++d) {
      std::vector<std::size_t> random_group;
      std::sample(all.begin(), all.end(), std::back_inserter(random_group), group.size(), rng);
      const auto rev = evaluate_group(random_group, sub, target);
      out.random_purity += rev.purity / static_cast<double>(random_draws);
      out.random_entropy += rev.entropy / static_cast<double>(random_draws);
    }
  }
  const double n = static_cast<double>(targets);
  out.rdr_purity /= n;
  out.rdr_entropy /= n;
  out.random_purity /= n;
  out.random_entropy /= n;
  out.mean_group_size /= n;
  return out;
}

struct SpuriousOptions {
  std::size_t normal = 300;     // true label 0, predicted 0
  std::size_t confuser = 300;   // true label 1, predicted 1
  std::size_t misled = 30;      // true label 0, predicted 1
  std::size_t context_neurons = 12;
  double context_rate = 0.95;  // firing rate for confuser/misled, 1 - rate for normal
  std::size_t noise_neurons = 40;
  double noise_rate = 0.2;
  std::uint64_t seed = 0;
};

struct SpuriousDataset {
  std::shared_ptr<const ActivationDataset> dataset;
  std::size_t spurious_index = 0;  // neuron index within layer 1
  std::vector<std::size_t> misled;  // instances labelled 0 but predicted 1
};

/// A planted spurious neuron fires for exactly the confuser-class and misled
/// instances. Context neurons fire mostly for the same instances, noise
/// neurons at random.
inline SpuriousDataset spurious_dataset(const SpuriousOptions& opt) {
  std::mt19937_64 rng(opt.seed);
  const std::size_t width = 1 + opt.context_neurons + opt.noise_neurons;
  std::vector<std::size_t> slot(width);
  std::iota(slot.begin(), slot.end(), std::size_t{0});
  std::shuffle(slot.begin(), slot.end(), rng);

  std::uniform_real_distribution<float> magnitude(0.2f, 2.0f);
  std::bernoulli_distribution coin(opt.noise_rate), likely(opt.context_rate),
      unlikely(1.0 - opt.context_rate);
  const std::size_t n = opt.normal + opt.confuser + opt.misled;
  std::vector<float> data(n * width, 0.0f);
  InstanceMetadata meta;
  meta.labels.emplace();
  meta.predictions.emplace();
  SpuriousDataset out;
  out.spurious_index = slot[0];
  for (std::size_t i = 0; i < n; ++i) {
    const bool is_normal = i < opt.normal;
    const bool is_misled = i >= opt.normal + opt.confuser;
    float* row = data.data() + i * width;
    if (!is_normal) row[slot[0]] = magnitude(rng);
    for (std::size_t c = 1; c <= opt.context_neurons; ++c) {
      if (is_normal ? unlikely(rng) : likely(rng)) row[slot[c]] = magnitude(rng);
    }
    for (std::size_t c = 1 + opt.context_neurons; c < width; ++c) {
      if (coin(rng)) row[slot[c]] = magnitude(rng);
    }
    meta.instance_ids.push_back("m" + std::to_string(i));
    meta.labels->push_back(is_normal || is_misled ? 0 : 1);
    meta.predictions->push_back(is_normal ? 0 : 1);
    if (is_misled) out.misled.push_back(i);
  }
  out.dataset = std::make_shared<const ActivationDataset>(ActivationDataset::create(
      {LayerSpec{1, "synthetic", {width}}}, {std::move(data)}, n, std::move(meta)));
  return out;
}

/// Random profile over `candidates` neurons whose positive frequencies are
/// unanimous (0 or 1), as produced by candidate_neurons.
inline FrequencyProfile random_unanimous_profile(std::mt19937_64& rng, std::size_t candidates,
                                                 bool unanimous = true) {
  std::uniform_int_distribution<std::int64_t> pos_size(1, 12), neg_size(1, 40);
  const std::int64_t np = pos_size(rng), nn = neg_size(rng);
  std::uniform_int_distribution<std::int64_t> pos_count(0, np), neg_count(0, nn);
  std::bernoulli_distribution coin(0.5);
  std::vector<std::int64_t> p(candidates), q(candidates);
  for (std::size_t i = 0; i < candidates; ++i) {
    p[i] = unanimous ? (coin(rng) ? np : 0) : pos_count(rng);
    q[i] = neg_count(rng);
  }
  return FrequencyProfile(std::move(p), np, std::move(q), nn);
}

inline std::vector<NeuronRef> flat_candidates(std::size_t n) {
  std::vector<NeuronRef> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back({0, i});
  return out;
}

struct OracleSuiteResult {
  std::size_t profiles = 0;
  std::size_t mismatches = 0;
};

/// Greedy versus exhaustive objective on random profiles with
/// |candidates| in [5, 20] and t in [1, 5].
inline OracleSuiteResult run_oracle_suite(std::uint64_t seed, std::size_t profiles = 200) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> size(5, 20), tdist(1, 5);
  OracleSuiteResult out;
  for (std::size_t i = 0; i < profiles; ++i) {
    const std::size_t n = size(rng), t = tdist(rng);
    const auto profile = random_unanimous_profile(rng, n);
    const auto cands = flat_candidates(n);
    const auto g = objective(profile, greedy_select(profile, cands, t));
    const auto b = objective(profile, brute_force_select(profile, cands, t));
    ++out.profiles;
    if (!(g == b)) ++out.mismatches;
  }
  return out;
}

}  // namespace rdr::synthetic
