#include "mpl/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mpl/rng.hpp"

namespace mpl {

namespace {

std::uint64_t fnv1a64(std::uint64_t h, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (8 * i)) & 0xffull;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::vector<std::size_t> layer_offsets(const std::vector<LayerShape>& shapes) {
  std::vector<std::size_t> offsets(shapes.size());
  std::size_t off = 0;
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    offsets[l] = off;
    off += shapes[l].param_count();
  }
  return offsets;
}

}  // namespace

void ModelConfig::validate() const {
  if (input_dim < 1) throw ConfigError("model: input_dim must be >= 1");
  if (context_radius < 0) throw ConfigError("model: context_radius must be >= 0");
  if (output_size < 2) throw ConfigError("model: output_size must be >= 2 (vocab + blank)");
  for (int h : hidden) {
    if (h < 1) throw ConfigError("model: hidden sizes must be >= 1");
  }
  if (init_scale < 0.0) throw ConfigError("model: init_scale must be >= 0");
}

std::uint64_t ModelConfig::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  h = fnv1a64(h, static_cast<std::uint64_t>(input_dim));
  h = fnv1a64(h, static_cast<std::uint64_t>(context_radius));
  h = fnv1a64(h, static_cast<std::uint64_t>(hidden.size()));
  for (int v : hidden) h = fnv1a64(h, static_cast<std::uint64_t>(v));
  h = fnv1a64(h, static_cast<std::uint64_t>(output_size));
  return h;
}

std::vector<LayerShape> layer_shapes(const ModelConfig& config) {
  std::vector<LayerShape> shapes;
  shapes.reserve(config.hidden.size() + 1);
  int in = config.stacked_dim();
  for (int h : config.hidden) {
    shapes.push_back({h, in});
    in = h;
  }
  shapes.push_back({config.output_size, in});
  return shapes;
}

std::size_t total_param_count(const ModelConfig& config) {
  std::size_t n = 0;
  for (const auto& s : layer_shapes(config)) n += s.param_count();
  return n;
}

std::size_t ModelParams::layer_offset(int layer) const {
  const auto shapes = layer_shapes(config);
  std::size_t off = 0;
  for (int l = 0; l < layer; ++l) off += shapes[l].param_count();
  return off;
}

double* ModelParams::bias(int layer) {
  return values.data() + layer_offset(layer) + layer_shapes(config)[layer].weight_count();
}
const double* ModelParams::bias(int layer) const {
  return values.data() + layer_offset(layer) + layer_shapes(config)[layer].weight_count();
}

ModelParams init_model(const ModelConfig& config) {
  config.validate();
  ModelParams params;
  params.config = config;
  params.values.assign(total_param_count(config), 0.0);
  Rng rng(config.seed);
  const auto shapes = layer_shapes(config);
  const auto offsets = layer_offsets(shapes);
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    const double s = config.init_scale / std::sqrt(static_cast<double>(shapes[l].in));
    double* w = params.values.data() + offsets[l];
    for (std::size_t i = 0; i < shapes[l].weight_count(); ++i) w[i] = rng.uniform(-s, s);
    // biases stay zero
  }
  return params;
}

namespace {

// Stacked context window for frame t, edge frames replicated.
void stack_context(const FeatureSeq& x, int radius, int t, double* out) {
  const int frames = x.rows();
  const int dim = x.cols();
  int pos = 0;
  for (int dt = -radius; dt <= radius; ++dt) {
    const int src = std::clamp(t + dt, 0, frames - 1);
    const double* row = x.row(src);
    for (int d = 0; d < dim; ++d) out[pos++] = row[d];
  }
}

void affine(const double* w, const double* b, const double* in, int n_out, int n_in,
            double* out) {
  for (int o = 0; o < n_out; ++o) {
    double acc = b[o];
    const double* wrow = w + static_cast<std::size_t>(o) * n_in;
    for (int i = 0; i < n_in; ++i) acc += wrow[i] * in[i];
    out[o] = acc;
  }
}

void log_softmax_row(double* z, int n) {
  double hi = z[0];
  for (int i = 1; i < n; ++i) hi = std::max(hi, z[i]);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) sum += std::exp(z[i] - hi);
  const double log_z = hi + std::log(sum);
  for (int i = 0; i < n; ++i) z[i] -= log_z;
}

struct ForwardTrace {
  // activations[0] is the stacked input; activations[l] for l >= 1 is the
  // tanh output of hidden layer l-1, i.e. the input of layer l.
  std::vector<Matrix> activations;
  LogProbSeq lattice;
};

ForwardTrace run_forward(const ModelParams& params, const FeatureSeq& features) {
  const ModelConfig& cfg = params.config;
  if (features.cols() != cfg.input_dim) {
    throw DataError("model: feature dim " + std::to_string(features.cols()) +
                    " does not match configured input_dim " + std::to_string(cfg.input_dim));
  }
  if (features.rows() < 1) throw DataError("model: empty feature sequence");

  const int frames = features.rows();
  const auto shapes = layer_shapes(cfg);
  const auto offsets = layer_offsets(shapes);
  const int n_layers = static_cast<int>(shapes.size());
  const double* v = params.values.data();

  ForwardTrace trace;
  trace.activations.reserve(n_layers);
  trace.activations.emplace_back(frames, cfg.stacked_dim());
  Matrix& stacked = trace.activations[0];
  for (int t = 0; t < frames; ++t) stack_context(features, cfg.context_radius, t, stacked.row(t));

  for (int l = 0; l < n_layers - 1; ++l) {
    const Matrix& in = trace.activations.back();
    const double* w = v + offsets[l];
    const double* b = w + shapes[l].weight_count();
    Matrix out(frames, shapes[l].out);
    for (int t = 0; t < frames; ++t) {
      affine(w, b, in.row(t), shapes[l].out, shapes[l].in, out.row(t));
      double* row = out.row(t);
      for (int o = 0; o < shapes[l].out; ++o) row[o] = std::tanh(row[o]);
    }
    trace.activations.push_back(std::move(out));
  }

  const int last = n_layers - 1;
  const double* w = v + offsets[last];
  const double* b = w + shapes[last].weight_count();
  trace.lattice = LogProbSeq(frames, shapes[last].out);
  const Matrix& in = trace.activations.back();
  for (int t = 0; t < frames; ++t) {
    affine(w, b, in.row(t), shapes[last].out, shapes[last].in, trace.lattice.row(t));
    log_softmax_row(trace.lattice.row(t), shapes[last].out);
  }
  return trace;
}

}  // namespace

LogProbSeq forward(const ModelParams& params, const FeatureSeq& features) {
  return run_forward(params, features).lattice;
}

std::pair<double, std::vector<double>> loss_and_grad(const ModelParams& params,
                                                     const FeatureSeq& features,
                                                     const LatticeGradFn& lattice_grad_fn) {
  ForwardTrace trace = run_forward(params, features);
  auto [loss, lattice_grad] = lattice_grad_fn(trace.lattice);
  if (!std::isfinite(loss)) {
    throw DivergenceError("model: non-finite loss");
  }

  const auto shapes = layer_shapes(params.config);
  const auto offsets = layer_offsets(shapes);
  const int n_layers = static_cast<int>(shapes.size());
  const int frames = features.rows();
  std::vector<double> grad(params.values.size(), 0.0);

  // d loss / d logits through log-softmax: g - softmax * sum(g), per row.
  const int n_out = shapes[n_layers - 1].out;
  Matrix delta(frames, n_out);
  for (int t = 0; t < frames; ++t) {
    const double* g = lattice_grad.row(t);
    double gsum = 0.0;
    for (int k = 0; k < n_out; ++k) gsum += g[k];
    for (int k = 0; k < n_out; ++k) delta(t, k) = g[k] - std::exp(trace.lattice(t, k)) * gsum;
  }

  // Reverse through the affine stack; tanh layers use 1 - a^2.
  for (int l = n_layers - 1; l >= 0; --l) {
    const LayerShape& shape = shapes[l];
    const Matrix& input = trace.activations[l];
    double* gw = grad.data() + offsets[l];
    double* gb = gw + shape.weight_count();
    const double* w = params.values.data() + offsets[l];

    const bool need_prev = l > 0;
    Matrix prev_delta;
    if (need_prev) prev_delta = Matrix(frames, shape.in, 0.0);

    for (int t = 0; t < frames; ++t) {
      const double* d = delta.row(t);
      const double* in = input.row(t);
      for (int o = 0; o < shape.out; ++o) {
        const double dv = d[o];
        if (dv == 0.0) continue;
        gb[o] += dv;
        double* gwrow = gw + static_cast<std::size_t>(o) * shape.in;
        for (int i = 0; i < shape.in; ++i) gwrow[i] += dv * in[i];
        if (need_prev) {
          const double* wrow = w + static_cast<std::size_t>(o) * shape.in;
          double* pd = prev_delta.row(t);
          for (int i = 0; i < shape.in; ++i) pd[i] += dv * wrow[i];
        }
      }
      if (need_prev) {
        double* pd = prev_delta.row(t);
        for (int i = 0; i < shape.in; ++i) pd[i] *= 1.0 - in[i] * in[i];
      }
    }
    delta = std::move(prev_delta);
  }
  return {loss, std::move(grad)};
}

}  // namespace mpl
