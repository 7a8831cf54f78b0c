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

// Command-line front end: ingestion, neighbor queries, region building,
// evaluation and reference-network experiments. Reports are JSON on stdout
// or --out; --pretty switches to plain-text tables where one exists.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "rdr/rdr.hpp"

namespace {

using nlohmann::json;

struct RunConfig {
  std::string data;
  std::vector<int> layers;
  std::string target;
  std::size_t k = rdr::kDefaultK;
  std::size_t t = rdr::kDefaultT;
  std::vector<std::string> metrics{"configuration"};
  std::string negative = "rest";
  std::uint64_t seed = 0;
  std::string out;
  bool pretty = false;

  // command-specific
  std::string cache;
  std::optional<int> feature_layer;
  std::size_t num_targets = 50;
  std::size_t group_size = 0;
  std::string pgm_dir;
  bool weighted = false;
  std::vector<std::string> anchors;
  std::size_t plane_layer = 1;
  std::size_t grid = 50;
  std::size_t plane_neurons = 8;
  std::string weights;
  std::size_t instances = 2000;
  std::size_t input_dim = 16;
  std::vector<std::size_t> hidden{64, 64, 64, 64, 64};
  std::size_t classes = 10;
};

void emit(const RunConfig& cfg, const std::string& text) {
  if (cfg.out.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream f(cfg.out, std::ios::trunc);
  if (!f) throw rdr::IngestError("cannot write " + cfg.out);
  f << text;
}

void emit_json(const RunConfig& cfg, const json& report) { emit(cfg, report.dump(2) + "\n"); }

std::shared_ptr<const rdr::ActivationDataset> load(const RunConfig& cfg) {
  if (cfg.data.empty()) throw rdr::QueryError("--data is required");
  return std::make_shared<const rdr::ActivationDataset>(rdr::ingest(cfg.data));
}

std::vector<int> layers_or_all(const RunConfig& cfg, const rdr::ActivationDataset& ds) {
  if (!cfg.layers.empty()) return cfg.layers;
  std::vector<int> all;
  for (const auto& l : ds.manifest()) all.push_back(l.layer_id);
  return all;
}

std::size_t resolve(const rdr::ActivationDataset& ds, const std::string& id) {
  if (id.empty()) throw rdr::QueryError("--target is required");
  if (auto i = ds.find_instance(id)) return *i;
  throw rdr::QueryError("unknown instance id '" + id + "'");
}

rdr::NegativePolicy policy_for(const RunConfig& cfg, const rdr::ActivationDataset& ds,
                               std::size_t target) {
  if (cfg.negative == "rest") return rdr::NegativePolicy::rest();
  if (cfg.negative == "true-label") {
    if (!ds.metadata().labels) throw rdr::QueryError("--negative true-label needs labels");
    return rdr::NegativePolicy::same_true_label((*ds.metadata().labels)[target]);
  }
  throw rdr::QueryError("unknown negative policy '" + cfg.negative + "'");
}

std::shared_ptr<const rdr::ConfigurationStore> make_store(
    const RunConfig& cfg, std::shared_ptr<const rdr::ActivationDataset> ds) {
  const rdr::NeuronSet set(*ds, layers_or_all(cfg, *ds));
  if (!cfg.cache.empty()) {
    return std::make_shared<const rdr::ConfigurationStore>(
        rdr::load_or_binarize(cfg.cache, ds, set));
  }
  return std::make_shared<const rdr::ConfigurationStore>(rdr::binarize(ds, set));
}

// ---------------------------------------------------------------- commands

void cmd_ingest(const RunConfig& cfg) {
  const auto ds = load(cfg);
  json layers = json::array();
  for (const auto& l : ds->manifest()) {
    layers.push_back({{"layer_id", l.layer_id},
                      {"name", l.name},
                      {"shape", l.shape},
                      {"kind", l.is_conv() ? "conv" : "flat"},
                      {"neurons", l.size()}});
  }
  const auto& m = ds->metadata();
  json report = {{"status", "ok"},
                 {"num_instances", ds->num_instances()},
                 {"layers", layers},
                 {"metadata",
                  {{"label", m.labels.has_value()},
                   {"prediction", m.predictions.has_value()},
                   {"subclass", m.subclasses.has_value()}}}};
  if (cfg.pretty) {
    std::ostringstream os;
    os << ds->num_instances() << " instances\n";
    for (const auto& l : ds->manifest()) {
      os << "  layer " << l.layer_id << " (" << l.name << "): " << l.size() << " neurons\n";
    }
    emit(cfg, os.str());
    return;
  }
  emit_json(cfg, report);
}

void cmd_knn(const RunConfig& cfg) {
  const auto ds = load(cfg);
  const auto store = make_store(cfg, ds);
  const auto target = resolve(*ds, cfg.target);
  const int feature_layer = cfg.feature_layer.value_or(layers_or_all(cfg, *ds).back());
  const auto t_code = store->code(target);

  json lists = json::array();
  std::ostringstream pretty;
  for (const auto& name : cfg.metrics) {
    const auto metric = rdr::parse_metric(name);
    const auto nbrs = rdr::knn(*store, target, cfg.k, metric,
                               metric == rdr::Metric::kConfiguration
                                   ? std::nullopt
                                   : std::optional<int>(feature_layer));
    json entries = json::array();
    pretty << name << ":\n";
    for (const auto& nb : nbrs) {
      const auto cd = rdr::config_distance(t_code, store->code(nb.index));
      entries.push_back({{"instance", ds->instance_ids()[nb.index]},
                         {"distance", nb.distance},
                         {"configuration_distance", cd}});
      pretty << "  " << std::setw(12) << ds->instance_ids()[nb.index] << "  " << std::setw(12)
             << nb.distance << "  (" << cd << ")\n";
    }
    json list = {{"metric", name}, {"neighbors", entries}};
    if (metric != rdr::Metric::kConfiguration) list["feature_layer"] = feature_layer;
    lists.push_back(std::move(list));
  }
  if (cfg.pretty) {
    emit(cfg, pretty.str());
    return;
  }
  emit_json(cfg, {{"target", cfg.target}, {"k", cfg.k}, {"layers", store->neuron_set().layer_ids()},
                  {"lists", lists}});
}

std::string pretty_region(const json& r) {
  std::ostringstream os;
  os << "target " << r["target"].get<std::string>() << "  k=" << r["k"] << "  t=" << r["t"]
     << "  negative=" << r["negative_policy"].get<std::string>() << "\n";
  for (const auto& n : r["selected"]) {
    os << "  layer " << n["layer"] << " neuron " << std::setw(6) << n["index"].get<std::size_t>()
       << "  state " << n["state"] << "  score " << n["score"].get<double>() << "\n";
  }
  os << "  " << r["member_count"] << " members\n";
  return os.str();
}

void cmd_rdr(const RunConfig& cfg) {
  const auto ds = load(cfg);
  const auto store = make_store(cfg, ds);
  const auto target = resolve(*ds, cfg.target);
  const auto region = rdr::build_rdr(store, target, cfg.k, cfg.t, policy_for(cfg, *ds, target));
  const auto report = rdr::region_report(region);
  if (cfg.pretty) {
    emit(cfg, pretty_region(report));
    return;
  }
  emit_json(cfg, report);
}

void cmd_eval(const RunConfig& cfg) {
  const auto ds = load(cfg);
  const auto store = make_store(cfg, ds);
  const auto& sub = rdr::require_subclasses(*store);

  std::vector<std::size_t> targets;
  if (!cfg.target.empty()) {
    targets.push_back(resolve(*ds, cfg.target));
  } else {
    std::vector<std::size_t> all(ds->num_instances());
    std::iota(all.begin(), all.end(), std::size_t{0});
    std::mt19937_64 rng(cfg.seed);
    std::sample(all.begin(), all.end(), std::back_inserter(targets),
                std::min(cfg.num_targets, all.size()), rng);
  }

  std::mt19937_64 rng(cfg.seed + 1);
  std::vector<std::size_t> all(ds->num_instances());
  std::iota(all.begin(), all.end(), std::size_t{0});
  json groups = json::array();
  double purity = 0, entropy = 0, rpurity = 0, rentropy = 0;
  std::size_t evaluated = 0;
  for (auto target : targets) {
    std::vector<std::size_t> group;
    try {
      group = rdr::members(rdr::build_rdr(store, target, cfg.k, cfg.t, policy_for(cfg, *ds, target)));
    } catch (const rdr::InsufficientCandidates& e) {
      groups.push_back({{"target", ds->instance_ids()[target]}, {"skipped", e.what()}});
      continue;
    }
    if (cfg.group_size > 0) group = rdr::equalize_group(*store, target, group, cfg.group_size);
    const auto ev = rdr::evaluate_group(group, sub, target);
    std::vector<std::size_t> random_group;
    std::sample(all.begin(), all.end(), std::back_inserter(random_group), group.size(), rng);
    const auto rev = rdr::evaluate_group(random_group, sub, target);
    auto entry = rdr::to_json(ev);
    entry["target"] = ds->instance_ids()[target];
    entry["random_purity"] = rev.purity;
    entry["random_entropy"] = rev.entropy;
    groups.push_back(std::move(entry));
    purity += ev.purity;
    entropy += ev.entropy;
    rpurity += rev.purity;
    rentropy += rev.entropy;
    ++evaluated;
  }
  const double n = evaluated ? static_cast<double>(evaluated) : 1.0;
  json summary = {{"targets", targets.size()},
                  {"evaluated", evaluated},
                  {"mean_purity", purity / n},
                  {"mean_entropy", entropy / n},
                  {"random_mean_purity", rpurity / n},
                  {"random_mean_entropy", rentropy / n}};
  if (cfg.pretty) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4) << "groups evaluated: " << evaluated << "/"
       << targets.size() << "\n"
       << "            purity   entropy\n"
       << "  RDR       " << purity / n << "    " << entropy / n << "\n"
       << "  random    " << rpurity / n << "    " << rentropy / n << "\n";
    emit(cfg, os.str());
    return;
  }
  emit_json(cfg, {{"k", cfg.k}, {"t", cfg.t}, {"group_size", cfg.group_size},
                  {"summary", summary}, {"groups", groups}});
}

void cmd_misclassify(const RunConfig& cfg) {
  const auto ds = load(cfg);
  const auto store = make_store(cfg, ds);
  std::size_t target = 0;
  if (!cfg.target.empty()) {
    target = resolve(*ds, cfg.target);
  } else {
    const auto& m = ds->metadata();
    if (!m.labels || !m.predictions) {
      throw rdr::QueryError("misclassification analysis needs label and prediction columns");
    }
    std::size_t i = 0;
    while (i < ds->num_instances() && (*m.labels)[i] == (*m.predictions)[i]) ++i;
    if (i == ds->num_instances()) throw rdr::QueryError("no misclassified instance in dataset");
    target = i;
  }
  const auto rep = rdr::misclassification_report(store, target, cfg.k, cfg.t, cfg.weighted);
  json report = {{"region", rdr::region_report(rep.region)},
                 {"true_label", (*ds->metadata().labels)[target]},
                 {"prediction", (*ds->metadata().predictions)[target]},
                 {"class_ratio", rdr::to_json(rep.class_ratio)}};
  if (rep.localization) {
    report["localization"] = rdr::to_json(*rep.localization, *ds);
    if (!cfg.pgm_dir.empty()) {
      std::filesystem::create_directories(cfg.pgm_dir);
      const auto& loc = *rep.localization;
      for (std::size_t i = 0; i < loc.instances.size(); ++i) {
        rdr::write_pgm(std::filesystem::path(cfg.pgm_dir) /
                           (ds->instance_ids()[loc.instances[i]] + ".pgm"),
                       loc.maps[i], loc.height, loc.width);
      }
    }
  }
  if (cfg.pretty) {
    std::ostringstream os;
    os << "true label " << report["true_label"] << ", predicted " << report["prediction"] << "\n"
       << pretty_region(report["region"]) << "  members by true label:";
    for (const auto& [label, n] : report["class_ratio"].items()) os << " " << label << "=" << n;
    os << "\n";
    if (rep.localization) {
      os << "  localization on layer " << rep.localization->layer_id << ", channels:";
      for (const auto& [c, n] : rep.localization->channels) os << " " << c << "(" << n << ")";
      os << "\n";
    }
    emit(cfg, os.str());
    return;
  }
  emit_json(cfg, report);
}

void cmd_sweep(const RunConfig& cfg) {
  const auto ds = load(cfg);
  const auto target = resolve(*ds, cfg.target);
  const auto layers = layers_or_all(cfg, *ds);
  const auto regions = rdr::layer_sweep(ds, target, layers, cfg.k, cfg.t, policy_for(cfg, *ds, target));
  json out = json::array();
  std::string pretty;
  for (const auto& [layer, region] : regions) {
    auto r = rdr::region_report(region);
    pretty += "layer " + std::to_string(layer) + ": " + pretty_region(r);
    out.push_back(std::move(r));
  }
  if (cfg.pretty) {
    emit(cfg, pretty);
    return;
  }
  emit_json(cfg, {{"target", cfg.target}, {"regions", out}});
}

void cmd_plane(const RunConfig& cfg) {
  const auto ds = load(cfg);
  const std::string weights =
      cfg.weights.empty() ? (std::filesystem::path(cfg.data) / "refnet.weights").string()
                          : cfg.weights;
  const auto net = rdr::load_weights(weights);
  if (cfg.anchors.size() != 3) throw rdr::QueryError("--anchors takes three instance ids");
  std::array<rdr::VectorXd, 3> features;
  for (std::size_t i = 0; i < 3; ++i) {
    const auto row = ds->row(static_cast<int>(cfg.plane_layer), resolve(*ds, cfg.anchors[i]));
    features[i] = rdr::VectorXd(static_cast<Eigen::Index>(row.size()));
    for (std::size_t j = 0; j < row.size(); ++j) features[i](static_cast<Eigen::Index>(j)) = row[j];
  }
  const auto slice = rdr::plane_slice_features(net, features, cfg.plane_layer, cfg.grid,
                                               cfg.plane_neurons, cfg.seed);
  std::ostringstream os;
  rdr::write_plane_csv(slice, os);
  emit(cfg, os.str());
}

void cmd_bench(const RunConfig& cfg) {
  struct Row {
    std::string name;
    std::string value;
    bool pass;
  };
  std::vector<Row> rows;

  const auto oracle = rdr::synthetic::run_oracle_suite(cfg.seed, 200);
  rows.push_back({"greedy vs brute force (200 profiles)",
                  std::to_string(oracle.mismatches) + " mismatches", oracle.mismatches == 0});

  rdr::synthetic::SubclassOptions opt;
  opt.seed = cfg.seed;
  const auto b = rdr::synthetic::run_subclass_benchmark(opt, 50, cfg.k, cfg.t);
  auto fmt = [](double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4) << v;
    return os.str();
  };
  rows.push_back({"subclass purity >= 0.9", fmt(b.rdr_purity) + " (random " + fmt(b.random_purity) + ")",
                  b.rdr_purity >= 0.9});
  rows.push_back({"subclass entropy <= 0.3",
                  fmt(b.rdr_entropy) + " (random " + fmt(b.random_entropy) + ")", b.rdr_entropy <= 0.3});

  std::size_t hits = 0;
  const std::size_t trials = 20;
  for (std::size_t i = 0; i < trials; ++i) {
    rdr::synthetic::SpuriousOptions sopt;
    sopt.seed = cfg.seed + i;
    const auto sd = rdr::synthetic::spurious_dataset(sopt);
    const auto store = std::make_shared<const rdr::ConfigurationStore>(rdr::binarize(sd.dataset, {1}));
    std::mt19937_64 rng(sopt.seed);
    const auto target = sd.misled[rng() % sd.misled.size()];
    const auto rep = rdr::misclassification_report(store, target, cfg.k, cfg.t);
    for (const auto& s : rep.region.principal.selected) {
      if (s.neuron.index == sd.spurious_index) {
        ++hits;
        break;
      }
    }
  }
  rows.push_back({"planted spurious neuron recovered",
                  std::to_string(hits) + "/" + std::to_string(trials), hits == trials});

  bool all = true;
  for (const auto& r : rows) all = all && r.pass;
  if (cfg.pretty) {
    std::ostringstream os;
    for (const auto& r : rows) {
      os << (r.pass ? "PASS  " : "FAIL  ") << std::left << std::setw(40) << r.name << r.value << "\n";
    }
    emit(cfg, os.str());
  } else {
    json checks = json::array();
    for (const auto& r : rows) checks.push_back({{"check", r.name}, {"value", r.value}, {"pass", r.pass}});
    emit_json(cfg, {{"seed", cfg.seed},
                    {"oracle_mismatches", oracle.mismatches},
                    {"subclass", {{"rdr_purity", b.rdr_purity},
                                  {"rdr_entropy", b.rdr_entropy},
                                  {"random_purity", b.random_purity},
                                  {"random_entropy", b.random_entropy},
                                  {"mean_group_size", b.mean_group_size}}},
                    {"spurious_recovered", hits},
                    {"checks", checks},
                    {"pass", all}});
  }
  if (!all) std::exit(4);
}

void cmd_export_refnet(const RunConfig& cfg) {
  if (cfg.out.empty()) throw rdr::QueryError("--out DIR is required");
  rdr::RefNetOptions opt;
  opt.input_dim = cfg.input_dim;
  opt.hidden = cfg.hidden;
  opt.output_dim = cfg.classes;
  opt.seed = cfg.seed;
  const auto net = rdr::RefNet::random(opt);
  const auto sample = rdr::sample_inputs(cfg.instances, cfg.input_dim, cfg.classes, cfg.seed);
  std::vector<std::string> sub;
  for (auto l : sample.labels) sub.push_back("cluster" + std::to_string(l));
  rdr::export_activations(net, sample.inputs, cfg.out, sample.labels, sub);
  rdr::save_weights(net, std::filesystem::path(cfg.out) / "refnet.weights");
  std::cout << json{{"out", cfg.out}, {"instances", cfg.instances}, {"seed", cfg.seed}}.dump(2) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Relaxed decision regions over binarized activations"};
  app.require_subcommand(1);
  app.fallthrough();
  RunConfig cfg;

  app.add_option("--data", cfg.data, "Activation dump directory");
  app.add_option("--layers", cfg.layers, "Layer ids forming the neuron set")->delimiter(',');
  app.add_option("--target", cfg.target, "Target instance id");
  app.add_option("--k", cfg.k, "Positive set size (neighbors incl. target)")->capture_default_str();
  app.add_option("--t", cfg.t, "Principal neurons to select")->capture_default_str();
  app.add_option("--metric", cfg.metrics, "configuration, euclidean, cosine")->delimiter(',');
  app.add_option("--negative", cfg.negative, "rest | true-label")->capture_default_str();
  app.add_option("--seed", cfg.seed, "Seed for every stochastic choice")->capture_default_str();
  app.add_option("--out", cfg.out, "Output path (directory for export-refnet)");
  app.add_flag("--pretty", cfg.pretty, "Plain-text tables instead of JSON");

  struct Command {
    const char* name;
    const char* help;
    std::function<void(const RunConfig&)> run;
  };
  const std::vector<Command> commands = {
      {"ingest", "Validate and summarize a dump", cmd_ingest},
      {"knn", "Nearest neighbors under one or more metrics", cmd_knn},
      {"rdr", "Build a relaxed decision region", cmd_rdr},
      {"eval", "Purity and entropy of regions", cmd_eval},
      {"misclassify", "Explain a misclassified instance", cmd_misclassify},
      {"sweep", "One region per layer", cmd_sweep},
      {"plane", "Boundary segments on a plane through three instances", cmd_plane},
      {"bench", "Synthetic benchmark and greedy oracle suite", cmd_bench},
      {"export-refnet", "Export activations of a seeded reference network", cmd_export_refnet},
  };
  std::vector<CLI::App*> subs;
  for (const auto& c : commands) subs.push_back(app.add_subcommand(c.name, c.help));

  subs[1]->add_option("--feature-layer", cfg.feature_layer, "Layer for euclidean/cosine");
  subs[1]->add_option("--cache", cfg.cache, "Configuration store cache file");
  subs[2]->add_option("--cache", cfg.cache, "Configuration store cache file");
  subs[3]->add_option("--num-targets", cfg.num_targets, "Random targets when --target is absent")
      ->capture_default_str();
  subs[3]->add_option("--group-size", cfg.group_size, "Truncate/pad groups to this size (0 = off)");
  subs[4]->add_option("--pgm-dir", cfg.pgm_dir, "Write localization maps as PGM files");
  subs[4]->add_flag("--weighted", cfg.weighted, "Weight channels by selection score");
  subs[6]->add_option("--anchors", cfg.anchors, "Three instance ids")->delimiter(',');
  subs[6]->add_option("--layer", cfg.plane_layer, "Hidden layer of the plane")->capture_default_str();
  subs[6]->add_option("--grid", cfg.grid, "Grid points per axis")->capture_default_str();
  subs[6]->add_option("--neurons", cfg.plane_neurons, "Sampled higher-layer neurons")
      ->capture_default_str();
  subs[6]->add_option("--weights", cfg.weights, "Weight file (default DATA/refnet.weights)");
  subs[8]->add_option("--instances", cfg.instances)->capture_default_str();
  subs[8]->add_option("--input-dim", cfg.input_dim)->capture_default_str();
  subs[8]->add_option("--hidden", cfg.hidden, "Hidden widths")->delimiter(',');
  subs[8]->add_option("--classes", cfg.classes)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    for (std::size_t i = 0; i < commands.size(); ++i) {
      if (subs[i]->parsed()) commands[i].run(cfg);
    }
  } catch (const rdr::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
