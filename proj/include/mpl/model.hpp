#pragma once

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "mpl/errors.hpp"
#include "mpl/matrix.hpp"

namespace mpl {

// Frame-level acoustic model: each frame is classified from a stacked context
// window of (2r+1) frames through tanh hidden layers and a log-softmax output.
struct ModelConfig {
  int input_dim = 0;              // feature dim D
  int context_radius = 2;         // frames stacked on each side
  std::vector<int> hidden = {64, 64};
  int output_size = 0;            // vocab size + 1, blank last
  double init_scale = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
  int stacked_dim() const { return (2 * context_radius + 1) * input_dim; }

  // Architecture identity used for checkpoint compatibility checks. Covers
  // the shape-determining fields only, not init_scale or seed.
  std::uint64_t fingerprint() const;

  bool same_shape(const ModelConfig& o) const { return fingerprint() == o.fingerprint(); }
};

struct LayerShape {
  int out = 0;
  int in = 0;
  std::size_t weight_count() const { return static_cast<std::size_t>(out) * in; }
  std::size_t param_count() const { return weight_count() + out; }
  bool operator==(const LayerShape& o) const { return out == o.out && in == o.in; }
};

std::vector<LayerShape> layer_shapes(const ModelConfig& config);
std::size_t total_param_count(const ModelConfig& config);

// Flat parameter vector with a per-layer shape table derived from the config.
// Layer l occupies [offset(l), offset(l) + param_count(l)): weights row-major
// (out x in), then bias. Keeping parameters flat makes moving-average and
// optimizer arithmetic plain element-wise vector operations.
struct ModelParams {
  ModelConfig config;
  std::vector<double> values;

  std::vector<LayerShape> shapes() const { return layer_shapes(config); }
  int num_layers() const { return static_cast<int>(config.hidden.size()) + 1; }
  std::size_t layer_offset(int layer) const;

  double* weights(int layer) { return values.data() + layer_offset(layer); }
  const double* weights(int layer) const { return values.data() + layer_offset(layer); }
  double* bias(int layer);
  const double* bias(int layer) const;

  bool same_shape(const ModelParams& o) const { return config.same_shape(o.config); }
};

// Weights uniform on (-s, s) with s = init_scale / sqrt(fan_in); biases zero.
ModelParams init_model(const ModelConfig& config);

// Per-frame log-probabilities; every row log-sum-exps to 0.
LogProbSeq forward(const ModelParams& params, const FeatureSeq& features);

// Computes (loss, d loss / d lattice) for a forward lattice.
using LatticeGradFn = std::function<std::pair<double, Matrix>(const LogProbSeq&)>;

// Runs forward, lets the callback score the lattice, then back-propagates the
// lattice gradient through log-softmax, the affine/tanh stack, and context
// stacking. Returns the callback's loss and the exact parameter gradient.
std::pair<double, std::vector<double>> loss_and_grad(const ModelParams& params,
                                                     const FeatureSeq& features,
                                                     const LatticeGradFn& lattice_grad_fn);

}  // namespace mpl
