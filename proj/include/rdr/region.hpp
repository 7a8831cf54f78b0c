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

// Relaxed decision regions: positive/negative concept sets, unanimous
// candidate neurons, greedy principal-configuration selection (with an
// exhaustive oracle) and membership.

#include <algorithm>
#include <compare>
#include <cstdint>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"
#include "rdr/configuration.hpp"
#include "rdr/errors.hpp"

namespace rdr {

inline constexpr std::size_t kDefaultK = 8;
inline constexpr std::size_t kDefaultT = 10;

struct NegativePolicy {
  enum class Kind { kRest, kSameTrueLabel };

  Kind kind = Kind::kRest;
  std::int64_t label = 0;  // only meaningful for kSameTrueLabel

  static NegativePolicy rest() { return {}; }
  static NegativePolicy same_true_label(std::int64_t label) {
    return {Kind::kSameTrueLabel, label};
  }
  std::string describe() const {
    return kind == Kind::kRest ? "rest"
                               : "true-label:" + std::to_string(label);
  }
  bool operator==(const NegativePolicy&) const = default;
};

struct ConceptSets {
  std::vector<std::size_t> positive;  // target first
  std::vector<std::size_t> negative;  // ascending
};

inline ConceptSets build_concept_sets(const ConfigurationStore& store,
                                      std::size_t target, std::size_t k,
                                      NegativePolicy policy = NegativePolicy::rest()) {
  const std::vector<std::int64_t>* labels = nullptr;
  if (policy.kind == NegativePolicy::Kind::kSameTrueLabel) {
    if (!store.source() || !store.source()->metadata().labels) {
      throw QueryError("true-label negative set requires labels");
    }
    labels = &*store.source()->metadata().labels;
  }

  ConceptSets sets;
  for (const auto& nb : knn(store, target, k)) sets.positive.push_back(nb.index);
  std::vector<bool> in_positive(store.num_instances(), false);
  for (auto i : sets.positive) in_positive[i] = true;
  for (std::size_t i = 0; i < store.num_instances(); ++i) {
    if (in_positive[i]) continue;
    if (labels && (*labels)[i] != policy.label) continue;
    sets.negative.push_back(i);
  }
  if (sets.negative.empty()) {
    throw DegenerateInput("negative set is empty (policy " + policy.describe() +
                          ", k=" + std::to_string(k) + ")");
  }
  return sets;
}

/// Neurons whose state is identical across every positive instance, in
/// canonical order.
inline std::vector<NeuronRef> candidate_neurons(const ConfigurationStore& store,
                                                const ConceptSets& sets) {
  if (sets.positive.empty()) throw QueryError("empty positive set");
  const auto first = store.code(sets.positive.front());
  std::vector<std::uint64_t> all_on(first.words.begin(), first.words.end());
  std::vector<std::uint64_t> any_on = all_on;
  for (auto i : sets.positive) {
    const auto c = store.code(i);
    for (std::size_t w = 0; w < c.words.size(); ++w) {
      all_on[w] &= c.words[w];
      any_on[w] |= c.words[w];
    }
  }
  std::vector<NeuronRef> out;
  const std::size_t n = store.code_size();
  for (std::size_t pos = 0; pos < n; ++pos) {
    const std::size_t w = pos / kWordBits, b = pos % kWordBits;
    const bool unanimous_on = (all_on[w] >> b) & 1u;
    const bool unanimous_off = !((any_on[w] >> b) & 1u);
    if (unanimous_on || unanimous_off) out.push_back(store.neuron_set().neuron(pos));
  }
  return out;
}

/// Exact fraction with a positive denominator.
struct Rational {
  std::int64_t num = 0;
  std::int64_t den = 1;

  double value() const noexcept { return static_cast<double>(num) / den; }
  friend bool operator==(const Rational& a, const Rational& b) noexcept {
    return a.num * b.den == b.num * a.den;
  }
  friend std::strong_ordering operator<=>(const Rational& a,
                                          const Rational& b) noexcept {
    return a.num * b.den <=> b.num * a.den;
  }
};

/// Activation counts per candidate neuron over the positive and negative
/// sets. Frequencies are kept as integer counts so score comparisons are
/// exact.
class FrequencyProfile {
 public:
  FrequencyProfile(std::vector<std::int64_t> positive_counts,
                   std::int64_t positive_total,
                   std::vector<std::int64_t> negative_counts,
                   std::int64_t negative_total)
      : pos_(std::move(positive_counts)),
        neg_(std::move(negative_counts)),
        pos_total_(positive_total),
        neg_total_(negative_total) {
    if (pos_.size() != neg_.size()) {
      throw QueryError("frequency vectors differ in length");
    }
    if (pos_total_ <= 0 || neg_total_ <= 0) {
      throw DegenerateInput("frequency profile needs non-empty sets");
    }
    for (std::size_t i = 0; i < pos_.size(); ++i) {
      if (pos_[i] < 0 || pos_[i] > pos_total_ || neg_[i] < 0 ||
          neg_[i] > neg_total_) {
        throw QueryError("activation count outside [0, set size]");
      }
    }
  }

  static FrequencyProfile from_sets(const ConfigurationStore& store,
                                    const ConceptSets& sets,
                                    const std::vector<NeuronRef>& candidates) {
    std::vector<std::size_t> positions;
    positions.reserve(candidates.size());
    for (const auto& c : candidates) positions.push_back(store.neuron_set().position(c));
    auto count = [&](const std::vector<std::size_t>& instances) {
      std::vector<std::int64_t> counts(positions.size(), 0);
      for (auto i : instances) {
        const auto code = store.code(i);
        for (std::size_t j = 0; j < positions.size(); ++j) counts[j] += code.bit(positions[j]);
      }
      return counts;
    };
    return FrequencyProfile(count(sets.positive),
                            static_cast<std::int64_t>(sets.positive.size()),
                            count(sets.negative),
                            static_cast<std::int64_t>(sets.negative.size()));
  }

  std::size_t size() const noexcept { return pos_.size(); }
  std::int64_t positive_count(std::size_t i) const { return pos_.at(i); }
  std::int64_t negative_count(std::size_t i) const { return neg_.at(i); }
  std::int64_t positive_total() const noexcept { return pos_total_; }
  std::int64_t negative_total() const noexcept { return neg_total_; }

  double positive_freq(std::size_t i) const {
    return static_cast<double>(pos_.at(i)) / pos_total_;
  }
  double negative_freq(std::size_t i) const {
    return static_cast<double>(neg_.at(i)) / neg_total_;
  }
  bool unanimous(std::size_t i) const {
    return pos_.at(i) == 0 || pos_.at(i) == pos_total_;
  }

  /// Common denominator of every score and objective term.
  std::int64_t denominator() const noexcept { return pos_total_ * neg_total_; }

  /// |c̄_i − c̄_neg,i| scaled by denominator().
  std::int64_t score_numerator(std::size_t i) const {
    const std::int64_t d = pos_.at(i) * neg_total_ - neg_.at(i) * pos_total_;
    return d < 0 ? -d : d;
  }
  Rational score(std::size_t i) const { return {score_numerator(i), denominator()}; }

  /// Principal state for neuron i: the unanimous positive state when there
  /// is one, otherwise the state more frequent in the positive set.
  bool preferred_state(std::size_t i) const {
    if (unanimous(i)) return pos_.at(i) == pos_total_;
    return pos_.at(i) * neg_total_ >= neg_.at(i) * pos_total_;
  }

  /// E_pos[state_i != s] − E_neg[state_i != s], scaled by denominator().
  std::int64_t mismatch_gap(std::size_t i, bool s) const {
    const std::int64_t pos_mismatch = s ? pos_total_ - pos_.at(i) : pos_.at(i);
    const std::int64_t neg_mismatch = s ? neg_total_ - neg_.at(i) : neg_.at(i);
    return pos_mismatch * neg_total_ - neg_mismatch * pos_total_;
  }

 private:
  std::vector<std::int64_t> pos_;
  std::vector<std::int64_t> neg_;
  std::int64_t pos_total_ = 1;
  std::int64_t neg_total_ = 1;
};

struct SelectedNeuron {
  NeuronRef neuron;
  std::size_t candidate = 0;  // index into the candidate list / profile
  bool state = false;
  double score = 0.0;

  bool operator==(const SelectedNeuron&) const = default;
};

struct PrincipalConfiguration {
  std::vector<SelectedNeuron> selected;

  std::size_t size() const noexcept { return selected.size(); }
  std::vector<double> selection_scores() const {
    std::vector<double> s;
    for (const auto& n : selected) s.push_back(n.score);
    return s;
  }
  bool operator==(const PrincipalConfiguration&) const = default;
};

/// Value of the principal-configuration objective
///   E_pos[d_H(c(x), c_p)] − E_neg[d_H(c(y), c_p)]
/// restricted to the selected neurons and states. Lower is better.
inline Rational objective(const FrequencyProfile& profile,
                          const PrincipalConfiguration& principal) {
  Rational r{0, profile.denominator()};
  for (const auto& s : principal.selected) r.num += profile.mismatch_gap(s.candidate, s.state);
  return r;
}

namespace detail {

inline void check_selection_args(const FrequencyProfile& profile,
                                 const std::vector<NeuronRef>& candidates,
                                 std::size_t t) {
  if (profile.size() != candidates.size()) {
    throw QueryError("profile and candidate list differ in length");
  }
  if (t == 0) throw QueryError("t must be at least 1");
  if (t > candidates.size()) throw InsufficientCandidates(candidates.size(), t);
}

}  // namespace detail

/// Repeatedly picks the remaining candidate with the largest
/// |c̄_i − c̄_neg,i|; ties go to the earliest candidate.
inline PrincipalConfiguration greedy_select(const FrequencyProfile& profile,
                                            const std::vector<NeuronRef>& candidates,
                                            std::size_t t) {
  detail::check_selection_args(profile, candidates, t);
  std::vector<bool> taken(candidates.size(), false);
  PrincipalConfiguration out;
  out.selected.reserve(t);
  for (std::size_t step = 0; step < t; ++step) {
    std::size_t best = candidates.size();
    std::int64_t best_score = -1;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      if (taken[i]) continue;
      const auto s = profile.score_numerator(i);
      if (s > best_score) {
        best_score = s;
        best = i;
      }
    }
    taken[best] = true;
    out.selected.push_back({candidates[best], best, profile.preferred_state(best),
                            profile.score(best).value()});
  }
  return out;
}

inline constexpr std::size_t kBruteForceMaxCandidates = 25;
inline constexpr std::uint64_t kBruteForceMaxWork = std::uint64_t{1} << 31;

/// Exhaustive minimizer of objective() over every t-subset of candidates and
/// every state assignment. Test oracle for greedy_select.
inline PrincipalConfiguration brute_force_select(const FrequencyProfile& profile,
                                                 const std::vector<NeuronRef>& candidates,
                                                 std::size_t t) {
  const std::size_t n = candidates.size();
  if (n > kBruteForceMaxCandidates) {
    throw QueryError("brute force limited to " +
                     std::to_string(kBruteForceMaxCandidates) + " candidates, got " +
                     std::to_string(n));
  }
  detail::check_selection_args(profile, candidates, t);
  std::uint64_t subsets = 1;
  for (std::size_t i = 0; i < t; ++i) subsets = subsets * (n - i) / (i + 1);
  if (t >= 40 || subsets > (kBruteForceMaxWork >> t)) {
    throw QueryError("brute force search space too large");
  }

  std::vector<std::size_t> subset(t);
  std::iota(subset.begin(), subset.end(), std::size_t{0});
  std::int64_t best_value = 0;
  std::vector<std::size_t> best_subset;
  std::uint64_t best_states = 0;
  bool have_best = false;

  while (true) {
    for (std::uint64_t states = 0; states < (std::uint64_t{1} << t); ++states) {
      std::int64_t value = 0;
      for (std::size_t j = 0; j < t; ++j) {
        value += profile.mismatch_gap(subset[j], (states >> j) & 1u);
      }
      if (!have_best || value < best_value) {
        have_best = true;
        best_value = value;
        best_subset = subset;
        best_states = states;
      }
    }
    // Next combination in lexicographic order.
    std::size_t i = t;
    while (i > 0 && subset[i - 1] == n - t + (i - 1)) --i;
    if (i == 0) break;
    ++subset[i - 1];
    for (std::size_t j = i; j < t; ++j) subset[j] = subset[j - 1] + 1;
  }

  PrincipalConfiguration out;
  for (std::size_t j = 0; j < t; ++j) {
    const auto c = best_subset[j];
    out.selected.push_back({candidates[c], c, static_cast<bool>((best_states >> j) & 1u),
                            profile.score(c).value()});
  }
  std::stable_sort(out.selected.begin(), out.selected.end(),
                   [&](const SelectedNeuron& a, const SelectedNeuron& b) {
                     return profile.score_numerator(a.candidate) >
                            profile.score_numerator(b.candidate);
                   });
  return out;
}

struct RelaxedDecisionRegion {
  PrincipalConfiguration principal;
  std::shared_ptr<const ConfigurationStore> store;
  std::size_t target = 0;
  std::size_t k = kDefaultK;
  NegativePolicy policy;
  ConceptSets sets;

  std::size_t t() const noexcept { return principal.size(); }
};

inline RelaxedDecisionRegion build_rdr(std::shared_ptr<const ConfigurationStore> store,
                                       std::size_t target, std::size_t k = kDefaultK,
                                       std::size_t t = kDefaultT,
                                       NegativePolicy policy = NegativePolicy::rest()) {
  RelaxedDecisionRegion region;
  region.sets = build_concept_sets(*store, target, k, policy);
  const auto candidates = candidate_neurons(*store, region.sets);
  const auto profile = FrequencyProfile::from_sets(*store, region.sets, candidates);
  region.principal = greedy_select(profile, candidates, t);
  region.store = std::move(store);
  region.target = target;
  region.k = k;
  region.policy = policy;
  return region;
}

/// Instances whose configuration agrees with the principal configuration on
/// every selected neuron.
inline std::vector<std::size_t> members(const RelaxedDecisionRegion& region) {
  const auto& store = *region.store;
  const std::size_t wpc = words_for(store.code_size());
  std::vector<std::uint64_t> mask(wpc, 0), value(wpc, 0);
  for (const auto& s : region.principal.selected) {
    const auto pos = store.neuron_set().position(s.neuron);
    mask[pos / kWordBits] |= std::uint64_t{1} << (pos % kWordBits);
    if (s.state) value[pos / kWordBits] |= std::uint64_t{1} << (pos % kWordBits);
  }
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < store.num_instances(); ++i) {
    const auto code = store.code(i);
    bool match = true;
    for (std::size_t w = 0; w < wpc && match; ++w) {
      match = ((code.words[w] ^ value[w]) & mask[w]) == 0;
    }
    if (match) out.push_back(i);
  }
  return out;
}

inline std::string instance_label(const ConfigurationStore& store, std::size_t i) {
  if (store.source()) return store.source()->instance_ids()[i];
  return std::to_string(i);
}

/// JSON report: target, parameters, selected neurons and member ids.
inline nlohmann::json region_report(const RelaxedDecisionRegion& region) {
  const auto& store = *region.store;
  nlohmann::json neurons = nlohmann::json::array();
  for (const auto& s : region.principal.selected) {
    nlohmann::json entry = {{"layer", s.neuron.layer_id}, {"index", s.neuron.index}};
    const auto* spec = store.neuron_set().spec(s.neuron.layer_id);
    if (spec && spec->is_conv()) {
      const auto c = unflatten(*spec, s.neuron.index);
      entry["channel"] = c.channel;
      entry["y"] = c.y;
      entry["x"] = c.x;
    }
    entry["state"] = s.state ? 1 : 0;
    entry["score"] = s.score;
    neurons.push_back(std::move(entry));
  }
  nlohmann::json member_ids = nlohmann::json::array();
  for (auto i : members(region)) member_ids.push_back(instance_label(store, i));
  return {{"target", instance_label(store, region.target)},
          {"k", region.k},
          {"t", region.t()},
          {"negative_policy", region.policy.describe()},
          {"layers", store.neuron_set().layer_ids()},
          {"selected", neurons},
          {"member_count", member_ids.size()},
          {"members", member_ids}};
}

}  // namespace rdr
