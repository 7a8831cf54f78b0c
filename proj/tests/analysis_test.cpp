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

#include "rdr/analysis.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "rdr/synthetic.hpp"
#include "test_support.hpp"

namespace rdr {
namespace {

TEST(EvaluateGroup, Purity) {
  const std::vector<std::string> sub{"a", "a", "b", "a"};
  const std::vector<std::size_t> group{0, 1, 2, 3};
  const auto ev = evaluate_group(group, sub, 0);
  EXPECT_DOUBLE_EQ(ev.purity, 0.75);
  EXPECT_NEAR(ev.entropy, -(0.75 * std::log(0.75) + 0.25 * std::log(0.25)), 1e-12);
  EXPECT_EQ(ev.group_size, 4u);
}

TEST(EvaluateGroup, PureAndEvenGroups) {
  const std::vector<std::string> sub{"x", "x", "y", "y"};
  const std::vector<std::size_t> pure{0, 1}, even{0, 1, 2, 3};
  EXPECT_DOUBLE_EQ(evaluate_group(pure, sub, 0).purity, 1.0);
  EXPECT_EQ(evaluate_group(pure, sub, 0).entropy, 0.0);
  EXPECT_NEAR(evaluate_group(even, sub, 2).entropy, std::log(2.0), 1e-12);
  // The target need not be in the group.
  EXPECT_DOUBLE_EQ(evaluate_group(pure, sub, 3).purity, 0.0);
}

TEST(EvaluateGroup, Errors) {
  const std::vector<std::string> sub{"x", "y"};
  EXPECT_THROW(evaluate_group(std::vector<std::size_t>{}, sub, 0), DegenerateInput);
  EXPECT_THROW(evaluate_group(std::vector<std::size_t>{0, 5}, sub, 0), QueryError);

  const auto ds = std::make_shared<const ActivationDataset>(
      ActivationDataset::create({LayerSpec{1, "l", {2}}}, {{1, 0, 0, 1}}, 2));
  EXPECT_THROW(require_subclasses(binarize(ds, {1})), QueryError);
}

TEST(EvaluateGroup, PermutationInvariant) {
  std::mt19937_64 rng(1);
  std::vector<std::string> sub;
  for (int i = 0; i < 60; ++i) sub.push_back("c" + std::to_string(rng() % 4));
  std::vector<std::size_t> group(40);
  std::iota(group.begin(), group.end(), std::size_t{5});
  const auto a = evaluate_group(group, sub, 7);
  std::shuffle(group.begin(), group.end(), rng);
  const auto b = evaluate_group(group, sub, 7);
  EXPECT_DOUBLE_EQ(a.purity, b.purity);
  EXPECT_NEAR(a.entropy, b.entropy, 1e-12);
}

TEST(EqualizeGroup, TruncatesAndPadsByDistance) {
  std::vector<Configuration> codes;
  for (auto bits : std::vector<std::vector<int>>{
           {0, 0, 0, 0}, {1, 1, 1, 0}, {1, 0, 0, 0}, {1, 1, 0, 0}, {1, 1, 1, 1}}) {
    codes.push_back(Configuration::from_bits(bits));
  }
  const auto store = ConfigurationStore::from_codes(NeuronSet::flat(4), codes);
  const std::vector<std::size_t> group{4, 1, 0};
  EXPECT_EQ(equalize_group(store, 0, group, 2), (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(equalize_group(store, 0, group, 5), (std::vector<std::size_t>{0, 1, 4, 2, 3}));
}

// Layer 5 is conv [3, 2, 2]; channel c of instance i has value
// (i + 1) * (c + 1) at pixel p = c, zero elsewhere.
std::shared_ptr<const ActivationDataset> conv_dataset() {
  const std::size_t n = 6;
  std::vector<float> data(n * 12, 0.0f);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      data[i * 12 + c * 4 + c] = static_cast<float>((i + 1) * (c + 1));
    }
  }
  return std::make_shared<const ActivationDataset>(
      ActivationDataset::create({LayerSpec{5, "conv5", {3, 2, 2}}}, {data}, n));
}

RelaxedDecisionRegion manual_region(std::shared_ptr<const ActivationDataset> ds,
                                    std::vector<SelectedNeuron> selected) {
  RelaxedDecisionRegion r;
  r.store = std::make_shared<const ConfigurationStore>(binarize(ds, {5}));
  r.principal.selected = std::move(selected);
  return r;
}

TEST(Localize, SingleChannel) {
  const auto ds = conv_dataset();
  // Neuron c=1, y=0, x=1 is active for every instance.
  const auto region = manual_region(ds, {{{5, 4 + 1}, 0, true, 1.0}});
  const auto rep = localize(region, *ds, 5);
  ASSERT_EQ(rep.channels.size(), 1u);
  EXPECT_EQ(rep.channels[0], (std::pair<std::size_t, std::size_t>{1, 1}));
  ASSERT_EQ(rep.instances.size(), 6u);
  EXPECT_EQ(rep.height, 2u);
  EXPECT_EQ(rep.width, 2u);
  for (const auto& m : rep.maps) EXPECT_EQ(m, (std::vector<double>{0, 1, 0, 0}));
}

TEST(Localize, ChannelCountsAndWeighting) {
  const auto ds = conv_dataset();
  // Two neurons in channel 0 (one inactive everywhere, state 0) and one in
  // channel 2.
  const auto region = manual_region(ds, {{{5, 0}, 0, true, 0.5},
                                         {{5, 1}, 1, false, 0.25},
                                         {{5, 8 + 2}, 2, true, 0.75}});
  const auto rep = localize(region, *ds, 5);
  EXPECT_EQ(rep.channels, (std::vector<std::pair<std::size_t, std::size_t>>{{0, 2}, {2, 1}}));
  // Unweighted: mean of channel 0 (value i+1 at p0) and channel 2 (3(i+1) at p2).
  for (const auto& m : rep.maps) EXPECT_EQ(m, (std::vector<double>{1.0 / 3.0, 0, 1, 0}));

  // Weighted by summed scores: 0.75 for channel 0, 0.75 for channel 2.
  const auto w = localize(region, *ds, 5, true);
  for (const auto& m : w.maps) EXPECT_EQ(m, (std::vector<double>{1.0 / 3.0, 0, 1, 0}));
}

TEST(Localize, ConstantMapIsZero) {
  std::vector<float> data(2 * 4, 2.5f);
  const auto ds = std::make_shared<const ActivationDataset>(
      ActivationDataset::create({LayerSpec{5, "c", {1, 2, 2}}}, {data}, 2));
  const auto rep = localize(manual_region(ds, {{{5, 0}, 0, true, 1.0}}), *ds, 5);
  for (const auto& m : rep.maps) EXPECT_EQ(m, (std::vector<double>(4, 0.0)));
}

TEST(Localize, ChannelTally) {
  std::mt19937_64 rng(3);
  std::vector<float> data(30 * 2 * 4 * 4);
  std::normal_distribution<float> normal;
  for (auto& x : data) x = normal(rng);
  const auto ds = std::make_shared<const ActivationDataset>(
      ActivationDataset::create({LayerSpec{2, "c", {2, 4, 4}}}, {data}, 30));
  std::vector<SelectedNeuron> sel;
  for (std::size_t i = 0; i < 7; ++i) sel.push_back({{2, i}, i, true, 0.1});
  for (std::size_t i = 0; i < 3; ++i) sel.push_back({{2, 16 + i}, 7 + i, true, 0.1});
  RelaxedDecisionRegion r;
  r.store = std::make_shared<const ConfigurationStore>(binarize(ds, {2}));
  r.principal.selected = sel;
  const auto rep = localize(r, *ds, 2);
  EXPECT_EQ(rep.channels, (std::vector<std::pair<std::size_t, std::size_t>>{{0, 7}, {1, 3}}));
}

TEST(Localize, Errors) {
  const auto ds = std::make_shared<const ActivationDataset>(ActivationDataset::create(
      {LayerSpec{1, "fc", {4}}, LayerSpec{5, "conv", {1, 2, 2}}},
      {std::vector<float>(8, 1.0f), std::vector<float>(8, 1.0f)}, 2));
  RelaxedDecisionRegion r;
  r.store = std::make_shared<const ConfigurationStore>(binarize(ds, {1, 5}));
  r.principal.selected = {{{1, 0}, 0, true, 1.0}};
  EXPECT_THROW(localize(r, *ds, 1), DegenerateInput);
  EXPECT_THROW(localize(r, *ds, 5), DegenerateInput);
}

TEST(Pgm, Header) {
  testing::TempDir dir;
  write_pgm(dir.path() / "m.pgm", std::vector<double>{0, 0.5, 1, 2}, 2, 2);
  const auto bytes = testing::read_file(dir.path() / "m.pgm");
  EXPECT_EQ(bytes.substr(0, 11), "P5\n2 2\n255\n");
  EXPECT_EQ(static_cast<unsigned char>(bytes[11 + 1]), 128);
  EXPECT_EQ(static_cast<unsigned char>(bytes[11 + 3]), 255);
  EXPECT_THROW(write_pgm(dir.path() / "x.pgm", std::vector<double>{0}, 2, 2), QueryError);
}

TEST(Misclassification, RequiresMisclassifiedTarget) {
  const auto sp = synthetic::spurious_dataset({});
  const auto store = std::make_shared<const ConfigurationStore>(binarize(sp.dataset, {1}));
  EXPECT_THROW(misclassification_report(store, 0), QueryError);

  const auto bare = std::make_shared<const ActivationDataset>(
      ActivationDataset::create({LayerSpec{1, "l", {2}}}, {{1, 0, 0, 1}}, 2));
  EXPECT_THROW(misclassification_report(
                   std::make_shared<const ConfigurationStore>(binarize(bare, {1})), 0, 1, 1),
               QueryError);
}

TEST(Misclassification, FindsPlantedNeuron) {
  // Narrow enough for the exhaustive search below.
  const auto sp = synthetic::spurious_dataset({.noise_neurons = 8, .seed = 7});
  const auto store = std::make_shared<const ConfigurationStore>(binarize(sp.dataset, {1}));
  const auto& labels = *sp.dataset->metadata().labels;
  for (auto target : std::vector<std::size_t>{sp.misled[0], sp.misled[5], sp.misled[11]}) {
    const auto rep = misclassification_report(store, target);
    const auto& sel = rep.region.principal.selected;
    const auto it = std::find_if(sel.begin(), sel.end(), [&](const SelectedNeuron& s) {
      return s.neuron.index == sp.spurious_index;
    });
    ASSERT_NE(it, sel.end());
    EXPECT_TRUE(it->state);
    for (auto i : rep.region.sets.negative) EXPECT_EQ(labels[i], 0);

    // The exhaustive optimum over the same candidates also uses it.
    const auto cands = candidate_neurons(*store, rep.region.sets);
    const auto profile = FrequencyProfile::from_sets(*store, rep.region.sets, cands);
    const auto best = brute_force_select(profile, cands, 5);
    EXPECT_TRUE(std::any_of(best.selected.begin(), best.selected.end(), [&](const SelectedNeuron& s) {
      return s.neuron.index == sp.spurious_index;
    }));
    EXPECT_EQ(objective(profile, best), objective(profile, greedy_select(profile, cands, 5)));

    std::size_t total = 0;
    for (const auto& [label, count] : rep.class_ratio.counts) total += count;
    EXPECT_EQ(total, members(rep.region).size());
    EXPECT_FALSE(rep.localization.has_value());
  }
}

std::shared_ptr<const ActivationDataset> four_layer_dataset() {
  std::mt19937_64 rng(5);
  std::normal_distribution<float> normal;
  std::vector<LayerSpec> manifest;
  std::vector<std::vector<float>> data;
  for (int id : {12, 14, 16, 17}) {
    manifest.push_back({id, "layer" + std::to_string(id), {40}});
    data.emplace_back(300 * 40);
    for (auto& x : data.back()) x = normal(rng);
  }
  return std::make_shared<const ActivationDataset>(
      ActivationDataset::create(manifest, data, 300));
}

TEST(LayerSweep, MatchesSingleLayerRegions) {
  const auto ds = four_layer_dataset();
  const std::vector<int> layers{12, 14, 16, 17};
  const auto sweep = layer_sweep(ds, 9, layers, 3, 6);
  ASSERT_EQ(sweep.size(), 4u);
  auto it = sweep.begin();
  for (int id : layers) {
    ASSERT_EQ(it->first, id);
    const auto store = std::make_shared<const ConfigurationStore>(binarize(ds, {id}));
    const auto direct = build_rdr(store, 9, 3, 6);
    EXPECT_EQ(it->second.principal, direct.principal);
    EXPECT_EQ(members(it->second), members(direct));
    for (const auto& s : it->second.principal.selected) EXPECT_EQ(s.neuron.layer_id, id);
    ++it;
  }
}

TEST(LayerSweep, DeduplicatesAndTagsErrors) {
  const auto ds = four_layer_dataset();
  const std::vector<int> dup{16, 12, 16};
  EXPECT_EQ(layer_sweep(ds, 0, dup, 3, 4).size(), 2u);

  const std::vector<int> bad{12, 13};
  try {
    layer_sweep(ds, 0, bad, 3, 4);
    FAIL();
  } catch (const QueryError& e) {
    EXPECT_NE(std::string(e.what()).find("layer 13: "), std::string::npos);
  }
  const std::vector<int> one{14};
  try {
    layer_sweep(ds, 0, one, 3, 41);
    FAIL();
  } catch (const InsufficientCandidates& e) {
    EXPECT_NE(std::string(e.what()).find("layer 14"), std::string::npos);
    EXPECT_EQ(e.requested(), 41u);
  }
}

TEST(Spearman, Values) {
  const std::vector<double> x{1, 2, 3, 4, 5};
  const std::vector<double> up{2, 4, 6, 8, 100}, down{5, 4, 3, 2, 1};
  EXPECT_NEAR(spearman(x, up), 1.0, 1e-12);
  EXPECT_NEAR(spearman(x, down), -1.0, 1e-12);
  // Ties take average ranks: y ranks [1.5, 1.5, 3, 4, 5].
  const std::vector<double> tied{0, 0, 1, 2, 3};
  const std::vector<double> rx{1, 2, 3, 4, 5}, ry{1.5, 1.5, 3, 4, 5};
  double mx = 3, my = 3, sxy = 0, sxx = 0, syy = 0;
  for (int i = 0; i < 5; ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  EXPECT_NEAR(spearman(x, tied), sxy / std::sqrt(sxx * syy), 1e-12);
  EXPECT_THROW(spearman(std::vector<double>{1}, std::vector<double>{1}), QueryError);
}

}  // namespace
}  // namespace rdr
