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

// Reference piecewise-linear network: dense ReLU layers with a linear head.
// Hidden layers are numbered 1..L; layer 0 is the input.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "rdr/activation_store.hpp"
#include "rdr/configuration.hpp"
#include "rdr/errors.hpp"

namespace rdr {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct DenseLayer {
  MatrixXd weight;  // out x in
  VectorXd bias;
};

struct RefNetOptions {
  std::size_t input_dim = 16;
  std::vector<std::size_t> hidden = {64, 64, 64, 64, 64};
  std::size_t output_dim = 10;
  std::uint64_t seed = 0;
  bool use_bias = true;
  double bias_scale = 0.1;
};

struct ForwardRecord {
  VectorXd logits;
  std::vector<VectorXd> pre_activations;  // [l-1] for layer l
  std::vector<VectorXd> activations;      // [l-1] for layer l, post-ReLU
};

class RefNet {
 public:
  RefNet(std::vector<DenseLayer> hidden, DenseLayer head, std::uint64_t seed = 0)
      : hidden_(std::move(hidden)), head_(std::move(head)), seed_(seed) {
    if (hidden_.empty()) throw QueryError("refnet needs at least one hidden layer");
    for (std::size_t l = 0; l < hidden_.size(); ++l) {
      const auto& layer = hidden_[l];
      if (layer.bias.size() != layer.weight.rows() ||
          (l > 0 && layer.weight.cols() != hidden_[l - 1].weight.rows())) {
        throw SchemaError("refnet layer " + std::to_string(l + 1) +
                          " has incompatible dimensions");
      }
    }
    if (head_.weight.cols() != hidden_.back().weight.rows() ||
        head_.bias.size() != head_.weight.rows()) {
      throw SchemaError("refnet head has incompatible dimensions");
    }
  }

  /// Glorot-uniform weights, rounded to float32 so that saved weights
  /// reload bit-exactly. Biases are uniform in [-bias_scale, bias_scale].
  static RefNet random(const RefNetOptions& opt) {
    std::mt19937_64 rng(opt.seed);
    auto make = [&](std::size_t in, std::size_t out) {
      const double a = std::sqrt(6.0 / static_cast<double>(in + out));
      std::uniform_real_distribution<double> w(-a, a);
      std::uniform_real_distribution<double> b(-opt.bias_scale, opt.bias_scale);
      DenseLayer layer{MatrixXd(out, in), VectorXd::Zero(out)};
      for (std::size_t r = 0; r < out; ++r) {
        for (std::size_t c = 0; c < in; ++c) {
          layer.weight(r, c) = static_cast<float>(w(rng));
        }
      }
      if (opt.use_bias) {
        for (std::size_t r = 0; r < out; ++r) layer.bias(r) = static_cast<float>(b(rng));
      }
      return layer;
    };
    std::vector<DenseLayer> hidden;
    std::size_t in = opt.input_dim;
    for (auto width : opt.hidden) {
      hidden.push_back(make(in, width));
      in = width;
    }
    DenseLayer head = make(in, opt.output_dim);
    return RefNet(std::move(hidden), std::move(head), opt.seed);
  }

  std::size_t num_hidden() const noexcept { return hidden_.size(); }
  std::size_t input_dim() const noexcept {
    return static_cast<std::size_t>(hidden_.front().weight.cols());
  }
  std::size_t output_dim() const noexcept {
    return static_cast<std::size_t>(head_.weight.rows());
  }
  /// Width of layer l (0 = input).
  std::size_t width(std::size_t l) const {
    check_layer(l);
    return l == 0 ? input_dim() : static_cast<std::size_t>(hidden_[l - 1].weight.rows());
  }
  const DenseLayer& hidden(std::size_t l) const {
    if (l < 1 || l > hidden_.size()) throw QueryError("no hidden layer " + std::to_string(l));
    return hidden_[l - 1];
  }
  const DenseLayer& head() const noexcept { return head_; }
  std::uint64_t seed() const noexcept { return seed_; }

  void check_layer(std::size_t l) const {
    if (l > hidden_.size()) {
      throw QueryError("layer " + std::to_string(l) + " outside [0, " +
                       std::to_string(hidden_.size()) + "]");
    }
  }

  /// Runs layers l+1..L and the head on features `x` of layer l.
  ForwardRecord forward_from(std::size_t l, const VectorXd& x) const {
    check_layer(l);
    if (static_cast<std::size_t>(x.size()) != width(l)) {
      throw QueryError("feature dimension " + std::to_string(x.size()) +
                       " does not match layer " + std::to_string(l) + " width " +
                       std::to_string(width(l)));
    }
    ForwardRecord rec;
    VectorXd h = x;
    for (std::size_t j = l; j < hidden_.size(); ++j) {
      VectorXd z = hidden_[j].weight * h + hidden_[j].bias;
      h = z.cwiseMax(0.0);
      rec.pre_activations.push_back(std::move(z));
      rec.activations.push_back(h);
    }
    rec.logits = head_.weight * h + head_.bias;
    return rec;
  }

 private:
  std::vector<DenseLayer> hidden_;
  DenseLayer head_;
  std::uint64_t seed_ = 0;
};

inline ForwardRecord forward_record(const RefNet& net, const VectorXd& input) {
  return net.forward_from(0, input);
}

/// Activation states of every hidden neuron above layer l, concatenated in
/// layer order.
inline Configuration configuration_above(const RefNet& net, const VectorXd& input,
                                         std::size_t l) {
  const auto rec = forward_record(net, input);
  std::size_t total = 0;
  for (std::size_t j = l + 1; j <= net.num_hidden(); ++j) total += net.width(j);
  Configuration c(total);
  std::size_t pos = 0;
  for (std::size_t j = l + 1; j <= net.num_hidden(); ++j) {
    const auto& a = rec.activations[j - 1];
    for (Eigen::Index i = 0; i < a.size(); ++i) c.set(pos++, a(i) > 0.0);
  }
  return c;
}

/// logits = W x^l + b for inputs sharing the configuration of `input`
/// above layer l.
struct AffineMap {
  MatrixXd W;
  VectorXd b;

  VectorXd apply(const VectorXd& x) const { return W * x + b; }
};

/// Masks each layer above l with the input's activation pattern and
/// multiplies through to the head.
inline AffineMap affine_map_at(const RefNet& net, const VectorXd& input, std::size_t l) {
  net.check_layer(l);
  const auto rec = forward_record(net, input);
  MatrixXd W = MatrixXd::Identity(net.width(l), net.width(l));
  VectorXd b = VectorXd::Zero(net.width(l));
  for (std::size_t j = l + 1; j <= net.num_hidden(); ++j) {
    const auto& layer = net.hidden(j);
    const VectorXd mask =
        (rec.pre_activations[j - 1].array() > 0.0).cast<double>().matrix();
    W = mask.asDiagonal() * (layer.weight * W);
    b = mask.asDiagonal() * (layer.weight * b + layer.bias);
  }
  return {net.head().weight * W, net.head().weight * b + net.head().bias};
}

/// Frobenius norm of the difference between the layer-l affine maps of two
/// inputs.
inline double mapping_difference(const RefNet& net, const VectorXd& a,
                                 const VectorXd& b, std::size_t l) {
  return (affine_map_at(net, a, l).W - affine_map_at(net, b, l).W).norm();
}

struct PlaneSegment {
  std::size_t neuron = 0;  // index into PlaneSlice::neurons
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

/// Sign pattern of sampled higher-layer neurons over the affine plane
///   p(u, v) = f0 + u (f1 - f0) + v (f2 - f0)
/// through the layer-l features f0, f1, f2 of three anchor inputs, with
/// anchors at plane coordinates (0,0), (1,0) and (0,1).
struct PlaneSlice {
  std::size_t layer = 0;
  std::array<VectorXd, 3> anchors;  // layer-l features
  std::vector<double> coords;       // grid coordinates along each axis
  std::vector<NeuronRef> neurons;   // sampled neurons, layer > `layer`
  std::vector<double> values;       // [neuron][iv][iu] pre-activations
  std::vector<PlaneSegment> segments;

  std::size_t grid() const noexcept { return coords.size(); }
  double value(std::size_t neuron, std::size_t iu, std::size_t iv) const {
    return values[(neuron * grid() + iv) * grid() + iu];
  }
  bool state(std::size_t neuron, std::size_t iu, std::size_t iv) const {
    return value(neuron, iu, iv) > 0.0;
  }
  VectorXd point(double u, double v) const {
    return anchors[0] + u * (anchors[1] - anchors[0]) + v * (anchors[2] - anchors[0]);
  }
};

/// Slice through three layer-l feature vectors.
inline PlaneSlice plane_slice_features(const RefNet& net,
                                       const std::array<VectorXd, 3>& features,
                                       std::size_t layer, std::size_t grid,
                                       std::size_t neuron_sample, std::uint64_t seed,
                                       double margin = 0.25) {
  net.check_layer(layer);
  if (layer >= net.num_hidden()) {
    throw QueryError("plane slice needs neurons above layer " + std::to_string(layer));
  }
  if (grid < 2) throw QueryError("plane grid resolution must be at least 2");

  PlaneSlice slice;
  slice.layer = layer;
  for (std::size_t i = 0; i < 3; ++i) {
    if (static_cast<std::size_t>(features[i].size()) != net.width(layer)) {
      throw QueryError("anchor feature dimension does not match layer " +
                       std::to_string(layer));
    }
    slice.anchors[i] = features[i];
  }
  const VectorXd e1 = slice.anchors[1] - slice.anchors[0];
  const VectorXd e2 = slice.anchors[2] - slice.anchors[0];
  const double n1 = e1.squaredNorm(), n2 = e2.squaredNorm(), d = e1.dot(e2);
  if (n1 == 0.0 || n2 == 0.0 || (n1 * n2 - d * d) <= 1e-12 * n1 * n2) {
    throw DegenerateInput("anchor features are identical or collinear at layer " +
                          std::to_string(layer));
  }

  std::vector<NeuronRef> pool;
  for (std::size_t j = layer + 1; j <= net.num_hidden(); ++j) {
    for (std::size_t i = 0; i < net.width(j); ++i) pool.push_back({static_cast<int>(j), i});
  }
  std::mt19937_64 rng(seed);
  std::shuffle(pool.begin(), pool.end(), rng);
  pool.resize(std::min(neuron_sample, pool.size()));
  std::sort(pool.begin(), pool.end());
  slice.neurons = pool;

  for (std::size_t i = 0; i < grid; ++i) {
    slice.coords.push_back(-margin + (1.0 + 2.0 * margin) * static_cast<double>(i) /
                                         static_cast<double>(grid - 1));
  }
  const std::size_t m = slice.neurons.size();
  slice.values.assign(m * grid * grid, 0.0);
  for (std::size_t iv = 0; iv < grid; ++iv) {
    for (std::size_t iu = 0; iu < grid; ++iu) {
      const auto rec = net.forward_from(layer, slice.point(slice.coords[iu], slice.coords[iv]));
      for (std::size_t n = 0; n < m; ++n) {
        const auto& ref = slice.neurons[n];
        slice.values[(n * grid + iv) * grid + iu] =
            rec.pre_activations[static_cast<std::size_t>(ref.layer_id) - layer - 1](
                static_cast<Eigen::Index>(ref.index));
      }
    }
  }

  // Marching squares per neuron; corners 0..3 = (u0,v0) (u1,v0) (u1,v1) (u0,v1).
  for (std::size_t n = 0; n < m; ++n) {
    for (std::size_t iv = 0; iv + 1 < grid; ++iv) {
      for (std::size_t iu = 0; iu + 1 < grid; ++iu) {
        const double u[4] = {slice.coords[iu], slice.coords[iu + 1], slice.coords[iu + 1],
                             slice.coords[iu]};
        const double v[4] = {slice.coords[iv], slice.coords[iv], slice.coords[iv + 1],
                             slice.coords[iv + 1]};
        const double f[4] = {slice.value(n, iu, iv), slice.value(n, iu + 1, iv),
                             slice.value(n, iu + 1, iv + 1), slice.value(n, iu, iv + 1)};
        std::array<std::optional<std::pair<double, double>>, 4> cross;
        int count = 0;
        for (int e = 0; e < 4; ++e) {
          const int a = e, b = (e + 1) % 4;
          if ((f[a] > 0.0) != (f[b] > 0.0)) {
            const double s = f[a] / (f[a] - f[b]);
            cross[e] = {{u[a] + s * (u[b] - u[a]), v[a] + s * (v[b] - v[a])}};
            ++count;
          }
        }
        auto emit = [&](int e0, int e1) {
          slice.segments.push_back(
              {n, cross[e0]->first, cross[e0]->second, cross[e1]->first, cross[e1]->second});
        };
        if (count == 2) {
          int e0 = -1, e1 = -1;
          for (int e = 0; e < 4; ++e) {
            if (!cross[e]) continue;
            (e0 < 0 ? e0 : e1) = e;
          }
          emit(e0, e1);
        } else if (count == 4) {
          const bool center = (f[0] + f[1] + f[2] + f[3]) / 4.0 > 0.0;
          if (center == (f[0] > 0.0)) {
            emit(0, 1);
            emit(2, 3);
          } else {
            emit(3, 0);
            emit(1, 2);
          }
        }
      }
    }
  }
  return slice;
}

/// Slice through the layer-l features of three network inputs.
inline PlaneSlice plane_slice(const RefNet& net, const std::array<VectorXd, 3>& inputs,
                              std::size_t layer, std::size_t grid,
                              std::size_t neuron_sample, std::uint64_t seed,
                              double margin = 0.25) {
  net.check_layer(layer);
  std::array<VectorXd, 3> features;
  for (std::size_t i = 0; i < 3; ++i) {
    features[i] = layer == 0 ? inputs[i] : forward_record(net, inputs[i]).activations[layer - 1];
  }
  return plane_slice_features(net, features, layer, grid, neuron_sample, seed, margin);
}

/// CSV: neuron_id,x0,y0,x1,y1 with neuron_id = "<layer>:<index>".
inline void write_plane_csv(const PlaneSlice& slice, std::ostream& out) {
  out << "neuron_id,x0,y0,x1,y1\n";
  out.precision(9);
  for (const auto& s : slice.segments) {
    const auto& ref = slice.neurons[s.neuron];
    out << ref.layer_id << ':' << ref.index << ',' << s.x0 << ',' << s.y0 << ',' << s.x1
        << ',' << s.y1 << '\n';
  }
}

/// Records every hidden layer for each row of `inputs` and packages the
/// result as a dataset. Predictions are the argmax of the logits.
inline ActivationDataset to_dataset(const RefNet& net, const MatrixXd& inputs,
                                    std::optional<std::vector<std::int64_t>> labels = std::nullopt,
                                    std::optional<std::vector<std::string>> subclasses = std::nullopt) {
  const auto n = static_cast<std::size_t>(inputs.rows());
  std::vector<LayerSpec> manifest;
  std::vector<std::vector<float>> data;
  for (std::size_t l = 1; l <= net.num_hidden(); ++l) {
    manifest.push_back({static_cast<int>(l), "dense" + std::to_string(l) + "/relu",
                        {net.width(l)}});
    data.emplace_back();
    data.back().reserve(n * net.width(l));
  }
  InstanceMetadata meta;
  meta.predictions.emplace();
  for (std::size_t i = 0; i < n; ++i) {
    const auto rec = forward_record(net, inputs.row(static_cast<Eigen::Index>(i)).transpose());
    for (std::size_t l = 0; l < net.num_hidden(); ++l) {
      for (Eigen::Index j = 0; j < rec.activations[l].size(); ++j) {
        data[l].push_back(static_cast<float>(rec.activations[l](j)));
      }
    }
    Eigen::Index arg = 0;
    rec.logits.maxCoeff(&arg);
    meta.predictions->push_back(arg);
    meta.instance_ids.push_back(std::to_string(i));
  }
  meta.labels = std::move(labels);
  meta.subclasses = std::move(subclasses);
  return ActivationDataset::create(std::move(manifest), std::move(data), n, std::move(meta));
}

/// Writes a dump that `ingest` reads back exactly (up to float32 rounding of
/// the recorded activations).
inline void export_activations(const RefNet& net, const MatrixXd& inputs,
                               const std::filesystem::path& dir,
                               std::optional<std::vector<std::int64_t>> labels = std::nullopt,
                               std::optional<std::vector<std::string>> subclasses = std::nullopt) {
  write_dump(to_dataset(net, inputs, std::move(labels), std::move(subclasses)), dir);
}

/// Gaussian clusters in input space; cluster id doubles as class label.
struct SampledInputs {
  MatrixXd inputs;
  std::vector<std::int64_t> labels;
};

inline SampledInputs sample_inputs(std::size_t n, std::size_t dim, std::size_t clusters,
                                   std::uint64_t seed, double spread = 2.0) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  MatrixXd centers(clusters, dim);
  for (Eigen::Index r = 0; r < centers.rows(); ++r) {
    for (Eigen::Index c = 0; c < centers.cols(); ++c) centers(r, c) = spread * normal(rng);
  }
  SampledInputs out{MatrixXd(n, dim), {}};
  for (std::size_t i = 0; i < n; ++i) {
    const auto k = static_cast<Eigen::Index>(i % clusters);
    for (std::size_t c = 0; c < dim; ++c) {
      out.inputs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) =
          static_cast<float>(centers(k, static_cast<Eigen::Index>(c)) + normal(rng));
    }
    out.labels.push_back(k);
  }
  return out;
}

// Weight file: one line of JSON {"format", "dims", "seed"} followed by
// little-endian float32 blocks W_1, b_1, ..., W_L, b_L, W_out, b_out with
// matrices row-major.

inline void save_weights(const RefNet& net, const std::filesystem::path& path) {
  std::vector<std::size_t> dims{net.input_dim()};
  for (std::size_t l = 1; l <= net.num_hidden(); ++l) dims.push_back(net.width(l));
  dims.push_back(net.output_dim());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IngestError("cannot write " + path.string());
  out << nlohmann::json{{"format", "rdr-refnet-f32le"}, {"dims", dims}, {"seed", net.seed()}}.dump()
      << '\n';
  auto put = [&out](const DenseLayer& layer) {
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
        const float f = static_cast<float>(layer.weight(r, c));
        out.write(reinterpret_cast<const char*>(&f), sizeof f);
      }
    }
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) {
      const float f = static_cast<float>(layer.bias(r));
      out.write(reinterpret_cast<const char*>(&f), sizeof f);
    }
  };
  for (std::size_t l = 1; l <= net.num_hidden(); ++l) put(net.hidden(l));
  put(net.head());
  if (!out) throw IngestError("short write to " + path.string());
}

inline RefNet load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<std::size_t> dims;
  std::uint64_t seed = 0;
  try {
    const auto header = nlohmann::json::parse(line);
    if (header.at("format") != "rdr-refnet-f32le") {
      throw SchemaError(path.string() + ": unknown weight format");
    }
    dims = header.at("dims").get<std::vector<std::size_t>>();
    seed = header.value("seed", std::uint64_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
  if (dims.size() < 3) throw SchemaError(path.string() + ": need at least one hidden layer");
  auto get = [&](std::size_t in_dim, std::size_t out_dim) {
    DenseLayer layer{MatrixXd(out_dim, in_dim), VectorXd(out_dim)};
    std::vector<float> buf(out_dim * in_dim + out_dim);
    if (!in.read(reinterpret_cast<char*>(buf.data()),
                 static_cast<std::streamsize>(buf.size() * sizeof(float)))) {
      throw SchemaError(path.string() + ": truncated weight block");
    }
    std::size_t p = 0;
    for (std::size_t r = 0; r < out_dim; ++r) {
      for (std::size_t c = 0; c < in_dim; ++c) {
        layer.weight(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = buf[p++];
      }
    }
    for (std::size_t r = 0; r < out_dim; ++r) layer.bias(static_cast<Eigen::Index>(r)) = buf[p++];
    return layer;
  };
  std::vector<DenseLayer> hidden;
  for (std::size_t l = 1; l + 1 < dims.size(); ++l) hidden.push_back(get(dims[l - 1], dims[l]));
  DenseLayer head = get(dims[dims.size() - 2], dims.back());
  in.peek();
  if (!in.eof()) throw SchemaError(path.string() + ": trailing bytes after weights");
  return RefNet(std::move(hidden), std::move(head), seed);
}

}  // namespace rdr
