#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <map>
#include <vector>

#include "mpl/ctc.hpp"
#include "mpl/rng.hpp"

using namespace mpl;
using namespace mpl::ctc;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Random row-normalized lattice (log probabilities).
LogProbSeq random_lattice(int frames, int vocab, Rng& rng) {
  LogProbSeq lat(frames, vocab + 1);
  for (int t = 0; t < frames; ++t) {
    double hi = -kInf;
    for (int k = 0; k <= vocab; ++k) {
      lat(t, k) = rng.normal();
      hi = std::max(hi, lat(t, k));
    }
    double sum = 0.0;
    for (int k = 0; k <= vocab; ++k) sum += std::exp(lat(t, k) - hi);
    const double log_z = hi + std::log(sum);
    for (int k = 0; k <= vocab; ++k) lat(t, k) -= log_z;
  }
  return lat;
}

// Lattice that puts probability 1 on one alignment path.
LogProbSeq certain_path_lattice(const std::vector<int>& path, int vocab) {
  LogProbSeq lat(static_cast<int>(path.size()), vocab + 1, -kInf);
  for (std::size_t t = 0; t < path.size(); ++t) lat(static_cast<int>(t), path[t]) = 0.0;
  return lat;
}

std::vector<int> random_target(int len, int vocab, Rng& rng) {
  std::vector<int> y(len);
  for (int i = 0; i < len; ++i) y[i] = static_cast<int>(rng.uniform_int(0, vocab - 1));
  return y;
}

}  // namespace

TEST_CASE("collapse merges repeats then removes blanks") {
  const int blank = 2;
  CHECK(collapse({0, 0, blank, 1, 1}, blank) == std::vector<int>{0, 1});
  CHECK(collapse({0, blank, 0}, blank) == std::vector<int>{0, 0});
  CHECK(collapse({blank, blank, blank}, blank).empty());
}

TEST_CASE("min path length counts separating blanks") {
  CHECK(min_path_length({0}) == 1);
  CHECK(min_path_length({0, 0}) == 3);
  CHECK(min_path_length({0, 1, 1, 0}) == 5);
}

TEST_CASE("ctc_loss on the two-frame uniform lattice") {
  // T=2, V=1, every entry probability 1/2; paths (a,a), (a,-), (-,a) carry
  // total mass 3/4.
  LogProbSeq lat(2, 2, std::log(0.5));
  const double loss = ctc_loss(lat, {0});
  CHECK(loss == doctest::Approx(-std::log(0.75)).epsilon(1e-12));
  CHECK(brute_force_loss(lat, {0}) == doctest::Approx(-std::log(0.75)).epsilon(1e-12));
}

TEST_CASE("ctc_loss of a certain single-frame path is zero") {
  const LogProbSeq lat = certain_path_lattice({0}, 1);
  CHECK(ctc_loss(lat, {0}) == doctest::Approx(0.0));
}

TEST_CASE("repeated label without room is infeasible") {
  LogProbSeq lat(2, 2, std::log(0.5));
  CHECK_THROWS_AS(ctc_loss(lat, {0, 0}), InfeasibleTarget);
  CHECK_THROWS_AS(brute_force_loss(lat, {0, 0}), InfeasibleTarget);
}

TEST_CASE("empty target is rejected") {
  LogProbSeq lat(2, 2, std::log(0.5));
  CHECK_THROWS_AS(ctc_loss(lat, {}), InfeasibleTarget);
}

TEST_CASE("oracle equivalence on random small instances") {
  Rng rng(2024);
  int checked = 0;
  while (checked < 200) {
    const int frames = static_cast<int>(rng.uniform_int(1, 6));
    const int vocab = static_cast<int>(rng.uniform_int(1, 3));
    const int len = static_cast<int>(rng.uniform_int(1, 3));
    const std::vector<int> target = random_target(len, vocab, rng);
    if (min_path_length(target) > frames) continue;
    const LogProbSeq lat = random_lattice(frames, vocab, rng);
    const double fast = ctc_loss(lat, target);
    const double slow = brute_force_loss(lat, target);
    CHECK(std::fabs(fast - slow) < 1e-9);
    ++checked;
  }
}

TEST_CASE("brute force guard rejects oversized instances") {
  LogProbSeq lat(30, 4, std::log(0.25));
  CHECK_THROWS_AS(brute_force_loss(lat, {0}), ConfigError);
}

TEST_CASE("lattice gradient matches central finite differences") {
  Rng rng(7);
  for (int rep = 0; rep < 5; ++rep) {
    const int frames = 4;
    const int vocab = 3;
    LogProbSeq lat = random_lattice(frames, vocab, rng);
    std::vector<int> target = random_target(2, vocab, rng);
    if (min_path_length(target) > frames) target = {0, 1};

    const auto [loss, grad] = ctc_lattice_grad(lat, target);
    CHECK(loss == doctest::Approx(ctc_loss(lat, target)).epsilon(1e-12));

    const double eps = 1e-5;
    for (int t = 0; t < frames; ++t) {
      for (int k = 0; k <= vocab; ++k) {
        LogProbSeq plus = lat, minus = lat;
        plus(t, k) += eps;
        minus(t, k) -= eps;
        const double fd = (ctc_loss(plus, target) - ctc_loss(minus, target)) / (2.0 * eps);
        const double an = grad(t, k);
        CHECK(std::fabs(fd - an) <= 1e-6 * std::max({1.0, std::fabs(fd), std::fabs(an)}));
      }
    }
  }
}

TEST_CASE("certain-path lattice: loss 0, path-indicator gradient, flat under log-softmax") {
  // prob 1 on the path a,a,-,b collapsing to [a,b]
  const std::vector<int> path = {0, 0, 2, 1};
  const LogProbSeq lat = certain_path_lattice(path, 2);
  const auto [loss, grad] = ctc_lattice_grad(lat, {0, 1});
  CHECK(loss == doctest::Approx(0.0));

  for (int t = 0; t < lat.rows(); ++t) {
    for (int k = 0; k < lat.cols(); ++k) {
      CHECK(grad(t, k) == doctest::Approx(k == path[t] ? -1.0 : 0.0).epsilon(1e-12));
    }
  }

  // Chained through the log-softmax Jacobian the gradient vanishes: the loss
  // already sits at its minimum over normalized lattices.
  for (int t = 0; t < lat.rows(); ++t) {
    double gsum = 0.0;
    for (int k = 0; k < lat.cols(); ++k) gsum += grad(t, k);
    for (int k = 0; k < lat.cols(); ++k) {
      const double p = std::exp(lat(t, k));
      const double projected = grad(t, k) - p * gsum;
      CHECK(projected == doctest::Approx(0.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("lattice gradient rows sum to zero after the log-softmax chain") {
  Rng rng(13);
  const LogProbSeq lat = random_lattice(5, 3, rng);
  const std::vector<int> target = {1, 0, 2};
  const auto [loss, grad] = ctc_lattice_grad(lat, target);
  CHECK(loss > 0.0);
  for (int t = 0; t < lat.rows(); ++t) {
    double gsum = 0.0;
    for (int k = 0; k < lat.cols(); ++k) gsum += grad(t, k);
    double row_total = 0.0;
    for (int k = 0; k < lat.cols(); ++k) {
      row_total += grad(t, k) - std::exp(lat(t, k)) * gsum;
    }
    CHECK(row_total == doctest::Approx(0.0).epsilon(1e-12));
  }
}

TEST_CASE("greedy decode is collapse of the frame argmax") {
  SUBCASE("one-hot path") {
    const LogProbSeq lat = certain_path_lattice({0, 0, 2, 1}, 2);
    CHECK(greedy_decode(lat) == std::vector<int>{0, 1});
  }
  SUBCASE("blank-dominant lattice decodes to empty") {
    LogProbSeq lat(4, 3, -3.0);
    for (int t = 0; t < 4; ++t) lat(t, 2) = -0.1;
    CHECK(greedy_decode(lat).empty());
  }
  SUBCASE("ties go to the lowest index") {
    LogProbSeq lat(1, 2, std::log(0.5));  // index 0 and blank tie
    CHECK(greedy_decode(lat) == std::vector<int>{0});
  }
  SUBCASE("definitional equality on random lattices") {
    Rng rng(99);
    for (int rep = 0; rep < 50; ++rep) {
      const int frames = static_cast<int>(rng.uniform_int(1, 8));
      const int vocab = static_cast<int>(rng.uniform_int(1, 4));
      const LogProbSeq lat = random_lattice(frames, vocab, rng);
      std::vector<int> path(frames);
      for (int t = 0; t < frames; ++t) {
        int best = 0;
        for (int k = 1; k <= vocab; ++k) {
          if (lat(t, k) > lat(t, best)) best = k;
        }
        path[t] = best;
      }
      CHECK(greedy_decode(lat) == collapse(path, vocab));
    }
  }
}

TEST_CASE("total collapse-class mass is one") {
  Rng rng(5);
  for (int rep = 0; rep < 10; ++rep) {
    const int frames = static_cast<int>(rng.uniform_int(1, 4));
    const int vocab = static_cast<int>(rng.uniform_int(1, 2));
    const LogProbSeq lat = random_lattice(frames, vocab, rng);
    const int symbols = vocab + 1;

    std::map<std::vector<int>, double> class_mass;
    long long total_paths = 1;
    for (int t = 0; t < frames; ++t) total_paths *= symbols;
    for (long long n = 0; n < total_paths; ++n) {
      long long rem = n;
      std::vector<int> path(frames);
      for (int t = 0; t < frames; ++t) {
        path[t] = static_cast<int>(rem % symbols);
        rem /= symbols;
      }
      double lp = 0.0;
      for (int t = 0; t < frames; ++t) lp += lat(t, path[t]);
      class_mass[collapse(path, vocab)] += std::exp(lp);
    }

    double total = 0.0;
    for (const auto& [label, mass] : class_mass) {
      total += mass;
      if (!label.empty()) {
        CHECK(mass == doctest::Approx(std::exp(-ctc_loss(lat, label))).epsilon(1e-9));
      }
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("loss is sensitive to target order") {
  Rng rng(11);
  const LogProbSeq lat = random_lattice(6, 3, rng);
  const std::vector<int> target = {0, 1, 2};
  const std::vector<int> reversed = {2, 1, 0};
  CHECK(std::fabs(ctc_loss(lat, target) - ctc_loss(lat, reversed)) > 1e-9);
}

TEST_CASE("feasible targets never underflow on strongly negative lattices") {
  LogProbSeq lat(6, 3, -700.0);
  for (int t = 0; t < 6; ++t) lat(t, 2) = -1e-3;  // blank carries the mass
  const double loss = ctc_loss(lat, {0, 1});
  CHECK(std::isfinite(loss));
  CHECK(loss > 0.0);
}
