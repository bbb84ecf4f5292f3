#include "mpl/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace mpl {
namespace ctc {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_sum_exp(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

// Extended target: blank, y1, blank, y2, ..., yL, blank.
int extended_symbol(const std::vector<int>& target, int s, int blank) {
  return (s % 2 == 0) ? blank : target[s / 2];
}

void check_target(const LogProbSeq& lattice, const std::vector<int>& target) {
  if (target.empty()) {
    throw InfeasibleTarget("ctc: empty target");
  }
  const int vocab = lattice.cols() - 1;
  for (int y : target) {
    if (y < 0 || y >= vocab) {
      throw DataError("ctc: target index " + std::to_string(y) + " outside vocabulary of size " +
                      std::to_string(vocab));
    }
  }
  if (min_path_length(target) > lattice.rows()) {
    throw InfeasibleTarget("ctc: target needs at least " +
                           std::to_string(min_path_length(target)) + " frames, lattice has " +
                           std::to_string(lattice.rows()));
  }
}

// Forward (alpha) pass over the extended-target trellis. Returns the trellis
// (T x S) and writes the total log-likelihood into *log_z.
Matrix forward_pass(const LogProbSeq& lattice, const std::vector<int>& target, double* log_z) {
  const int frames = lattice.rows();
  const int blank = blank_index(lattice);
  const int states = 2 * static_cast<int>(target.size()) + 1;

  Matrix alpha(frames, states, kNegInf);
  alpha(0, 0) = lattice(0, blank);
  if (states > 1) alpha(0, 1) = lattice(0, extended_symbol(target, 1, blank));

  for (int t = 1; t < frames; ++t) {
    for (int s = 0; s < states; ++s) {
      const int sym = extended_symbol(target, s, blank);
      double acc = alpha(t - 1, s);
      if (s >= 1) acc = log_sum_exp(acc, alpha(t - 1, s - 1));
      if (s >= 2 && sym != blank && sym != extended_symbol(target, s - 2, blank)) {
        acc = log_sum_exp(acc, alpha(t - 1, s - 2));
      }
      alpha(t, s) = acc + lattice(t, sym);
    }
  }

  double z = alpha(frames - 1, states - 1);
  if (states > 1) z = log_sum_exp(z, alpha(frames - 1, states - 2));
  *log_z = z;
  return alpha;
}

}  // namespace

std::vector<int> collapse(const std::vector<int>& path, int blank) {
  std::vector<int> out;
  int prev = blank;
  for (int sym : path) {
    if (sym != prev && sym != blank) out.push_back(sym);
    prev = sym;
  }
  return out;
}

int min_path_length(const std::vector<int>& target) {
  int len = static_cast<int>(target.size());
  for (std::size_t i = 1; i < target.size(); ++i) {
    if (target[i] == target[i - 1]) ++len;
  }
  return len;
}

double ctc_loss(const LogProbSeq& lattice, const std::vector<int>& target) {
  check_target(lattice, target);
  double log_z = kNegInf;
  forward_pass(lattice, target, &log_z);
  if (log_z == kNegInf) {
    throw InfeasibleTarget("ctc: target has zero total path probability");
  }
  return -log_z;
}

std::pair<double, Matrix> ctc_lattice_grad(const LogProbSeq& lattice,
                                           const std::vector<int>& target) {
  check_target(lattice, target);
  const int frames = lattice.rows();
  const int blank = blank_index(lattice);
  const int states = 2 * static_cast<int>(target.size()) + 1;

  double log_z = kNegInf;
  const Matrix alpha = forward_pass(lattice, target, &log_z);
  if (log_z == kNegInf) {
    throw InfeasibleTarget("ctc: target has zero total path probability");
  }

  // Backward (beta) pass: log-probability of completing the sequence from
  // state s after frame t, excluding frame t's own emission.
  Matrix beta(frames, states, kNegInf);
  beta(frames - 1, states - 1) = 0.0;
  if (states > 1) beta(frames - 1, states - 2) = 0.0;
  for (int t = frames - 2; t >= 0; --t) {
    for (int s = states - 1; s >= 0; --s) {
      double acc = beta(t + 1, s) + lattice(t + 1, extended_symbol(target, s, blank));
      if (s + 1 < states) {
        acc = log_sum_exp(acc, beta(t + 1, s + 1) + lattice(t + 1, extended_symbol(target, s + 1, blank)));
      }
      if (s + 2 < states) {
        const int sym2 = extended_symbol(target, s + 2, blank);
        if (sym2 != blank && sym2 != extended_symbol(target, s, blank)) {
          acc = log_sum_exp(acc, beta(t + 1, s + 2) + lattice(t + 1, sym2));
        }
      }
      beta(t, s) = acc;
    }
  }

  // d(-log Z)/d lp[t][k] = -sum_{s: sym(s)=k} exp(alpha[t][s] + beta[t][s] - log Z).
  Matrix grad(frames, lattice.cols(), 0.0);
  for (int t = 0; t < frames; ++t) {
    for (int s = 0; s < states; ++s) {
      const double post = alpha(t, s) + beta(t, s) - log_z;
      if (post != kNegInf) {
        grad(t, extended_symbol(target, s, blank)) -= std::exp(post);
      }
    }
  }
  return {-log_z, std::move(grad)};
}

std::vector<int> greedy_decode(const LogProbSeq& lattice) {
  const int blank = blank_index(lattice);
  std::vector<int> path(lattice.rows());
  for (int t = 0; t < lattice.rows(); ++t) {
    int best = 0;
    for (int k = 1; k < lattice.cols(); ++k) {
      if (lattice(t, k) > lattice(t, best)) best = k;  // ties keep the lowest index
    }
    path[t] = best;
  }
  return collapse(path, blank);
}

double brute_force_loss(const LogProbSeq& lattice, const std::vector<int>& target) {
  const int frames = lattice.rows();
  const int symbols = lattice.cols();
  double instance_size = std::pow(static_cast<double>(symbols), frames);
  if (instance_size > 1e6) {
    throw ConfigError("brute_force_loss: instance too large, (V+1)^T = " +
                      std::to_string(instance_size));
  }
  const int blank = symbols - 1;

  double total = kNegInf;
  std::vector<int> path(frames, 0);
  const auto count = static_cast<long long>(instance_size + 0.5);
  for (long long n = 0; n < count; ++n) {
    long long rem = n;
    for (int t = 0; t < frames; ++t) {
      path[t] = static_cast<int>(rem % symbols);
      rem /= symbols;
    }
    if (collapse(path, blank) != target) continue;
    double lp = 0.0;
    for (int t = 0; t < frames; ++t) lp += lattice(t, path[t]);
    total = log_sum_exp(total, lp);
  }
  if (total == kNegInf) {
    throw InfeasibleTarget("brute_force_loss: no path collapses to target");
  }
  return -total;
}

}  // namespace ctc
}  // namespace mpl
