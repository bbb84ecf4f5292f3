#include "mpl/mdd.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

namespace mpl {
namespace mdd {

namespace {

// Costs are 0 for match, 1 for substitute/insert/delete.
std::vector<std::vector<int>> dp_table(const std::vector<int>& ref, const std::vector<int>& hyp) {
  const int n_ref = static_cast<int>(ref.size());
  const int n_hyp = static_cast<int>(hyp.size());
  std::vector<std::vector<int>> d(n_ref + 1, std::vector<int>(n_hyp + 1, 0));
  for (int i = 0; i <= n_ref; ++i) d[i][0] = i;
  for (int j = 0; j <= n_hyp; ++j) d[0][j] = j;
  for (int i = 1; i <= n_ref; ++i) {
    for (int j = 1; j <= n_hyp; ++j) {
      const int sub = d[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      const int del = d[i - 1][j] + 1;
      const int ins = d[i][j - 1] + 1;
      d[i][j] = std::min({sub, del, ins});
    }
  }
  return d;
}

}  // namespace

EditAlignment align(const std::vector<int>& reference, const std::vector<int>& hypothesis) {
  const auto d = dp_table(reference, hypothesis);
  const int n_ref = static_cast<int>(reference.size());
  const int n_hyp = static_cast<int>(hypothesis.size());

  EditAlignment result;
  result.distance = d[n_ref][n_hyp];
  std::vector<EditOp> rev;
  int i = n_ref;
  int j = n_hyp;
  while (i > 0 || j > 0) {
    const int cur = d[i][j];
    if (i > 0 && j > 0 && reference[i - 1] == hypothesis[j - 1] && d[i - 1][j - 1] == cur) {
      rev.push_back({EditOpKind::Match, i - 1, j - 1});
      --i, --j;
    } else if (i > 0 && j > 0 && reference[i - 1] != hypothesis[j - 1] &&
               d[i - 1][j - 1] + 1 == cur) {
      rev.push_back({EditOpKind::Substitute, i - 1, j - 1});
      --i, --j;
    } else if (i > 0 && d[i - 1][j] + 1 == cur) {
      rev.push_back({EditOpKind::Delete, i - 1, -1});
      --i;
    } else {
      rev.push_back({EditOpKind::Insert, -1, j - 1});
      --j;
    }
  }
  result.ops.assign(rev.rbegin(), rev.rend());
  return result;
}

int edit_distance(const std::vector<int>& reference, const std::vector<int>& hypothesis) {
  return dp_table(reference, hypothesis)[reference.size()][hypothesis.size()];
}

MddCounts& MddCounts::operator+=(const MddCounts& o) {
  ta += o.ta;
  fr += o.fr;
  fa += o.fa;
  tr_correct_diag += o.tr_correct_diag;
  tr_error_diag += o.tr_error_diag;
  return *this;
}

MddCounts classify(const std::vector<int>& canonical, const std::vector<int>& perceived,
                   const std::vector<int>& predicted) {
  if (canonical.empty()) throw DataError("classify: canonical sequence is empty");

  const EditAlignment canon_vs_perc = align(canonical, perceived);
  const EditAlignment perc_vs_pred = align(perceived, predicted);

  constexpr int kAbsent = -1;

  // Predicted symbol per perceived position, and predicted insertions bucketed
  // by the inter-perceived gap they occur in (gap g = before perceived[g]).
  std::vector<int> pred_at(perceived.size(), kAbsent);
  std::vector<std::deque<int>> gap_insertions(perceived.size() + 1);
  {
    std::size_t consumed = 0;
    for (const EditOp& op : perc_vs_pred.ops) {
      switch (op.kind) {
        case EditOpKind::Match:
        case EditOpKind::Substitute:
          pred_at[op.ref_pos] = predicted[op.hyp_pos];
          consumed = static_cast<std::size_t>(op.ref_pos) + 1;
          break;
        case EditOpKind::Delete:
          consumed = static_cast<std::size_t>(op.ref_pos) + 1;
          break;
        case EditOpKind::Insert:
          gap_insertions[consumed].push_back(predicted[op.hyp_pos]);
          break;
      }
    }
  }

  MddCounts counts;
  std::size_t consumed = 0;
  for (const EditOp& op : canon_vs_perc.ops) {
    switch (op.kind) {
      case EditOpKind::Match: {
        // correct pronunciation; canonical == perceived here
        const int c = canonical[op.ref_pos];
        const int pred = pred_at[op.hyp_pos];
        (pred == c) ? ++counts.ta : ++counts.fr;
        consumed = static_cast<std::size_t>(op.hyp_pos) + 1;
        break;
      }
      case EditOpKind::Substitute: {
        const int c = canonical[op.ref_pos];
        const int p = perceived[op.hyp_pos];
        const int pred = pred_at[op.hyp_pos];
        if (pred == c) {
          ++counts.fa;
        } else {
          (pred == p) ? ++counts.tr_correct_diag : ++counts.tr_error_diag;
        }
        consumed = static_cast<std::size_t>(op.hyp_pos) + 1;
        break;
      }
      case EditOpKind::Delete: {
        // speaker skipped this canonical phoneme; a predicted insertion in
        // the same gap stands in for the prediction at this position
        const int c = canonical[op.ref_pos];
        int pred = kAbsent;
        auto& queue = gap_insertions[consumed];
        if (!queue.empty()) {
          pred = queue.front();
          queue.pop_front();
        }
        if (pred == c) {
          ++counts.fa;
        } else {
          (pred == kAbsent) ? ++counts.tr_correct_diag : ++counts.tr_error_diag;
        }
        break;
      }
      case EditOpKind::Insert: {
        // speaker inserted a phoneme with no canonical counterpart
        const int p = perceived[op.hyp_pos];
        const int pred = pred_at[op.hyp_pos];
        if (pred == kAbsent) {
          ++counts.fa;
        } else {
          (pred == p) ? ++counts.tr_correct_diag : ++counts.tr_error_diag;
        }
        consumed = static_cast<std::size_t>(op.hyp_pos) + 1;
        break;
      }
    }
  }
  return counts;
}

MddScores mdd_scores(const MddCounts& counts) {
  MddScores scores;
  const double tr = static_cast<double>(counts.tr());
  if (counts.fr + counts.tr() > 0) {
    scores.precision = 100.0 * tr / static_cast<double>(counts.fr + counts.tr());
  }
  if (counts.fa + counts.tr() > 0) {
    scores.recall = 100.0 * tr / static_cast<double>(counts.fa + counts.tr());
  }
  if (scores.precision && scores.recall && (*scores.precision + *scores.recall) > 0.0) {
    scores.f1 = 2.0 * (*scores.precision) * (*scores.recall) /
                (*scores.precision + *scores.recall);
  }
  return scores;
}

double per(const std::vector<int>& reference, const std::vector<int>& hypothesis) {
  if (reference.empty()) throw DataError("per: empty reference");
  return static_cast<double>(edit_distance(reference, hypothesis)) /
         static_cast<double>(reference.size());
}

void PerAccumulator::add(const std::vector<int>& reference, const std::vector<int>& hypothesis) {
  if (reference.empty()) throw DataError("per: empty reference");
  distance += edit_distance(reference, hypothesis);
  ref_len += static_cast<long long>(reference.size());
}

double PerAccumulator::ratio() const {
  if (ref_len == 0) throw DataError("per: zero total reference length");
  return static_cast<double>(distance) / static_cast<double>(ref_len);
}

std::map<std::string, double> per_speaker_per(const std::vector<ScoredUtterance>& rows) {
  std::map<std::string, PerAccumulator> acc;
  for (const auto& row : rows) acc[row.speaker].add(row.reference, row.hypothesis);
  std::map<std::string, double> out;
  for (const auto& [speaker, a] : acc) out[speaker] = a.ratio();
  return out;
}

std::pair<std::vector<std::string>, std::vector<std::string>> select_extremes(
    const std::map<std::string, double>& per_map, int k) {
  if (k < 1) throw ConfigError("select_extremes: k must be >= 1");
  if (2 * static_cast<std::size_t>(k) > per_map.size()) {
    throw ConfigError("select_extremes: need at least 2k speakers, have " +
                      std::to_string(per_map.size()));
  }
  std::vector<std::pair<std::string, double>> rows(per_map.begin(), per_map.end());

  // bottom k: lowest PER, ties to the smaller id
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second < b.second : a.first < b.first;
  });
  std::vector<std::string> bottom;
  for (int i = 0; i < k; ++i) bottom.push_back(rows[i].first);

  // top k from the remainder: highest PER, ties to the smaller id
  std::vector<std::pair<std::string, double>> rest(rows.begin() + k, rows.end());
  std::sort(rest.begin(), rest.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  std::vector<std::string> top;
  for (int i = 0; i < k; ++i) top.push_back(rest[i].first);
  return {top, bottom};
}

std::optional<double> pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw DataError("pearson: length mismatch");
  if (x.size() < 2) throw DataError("pearson: need at least 2 points");
  const auto n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

namespace {

// Regularized incomplete beta via Lentz's continued fraction.
double beta_cf(double a, double b, double x) {
  constexpr int kMaxIter = 200;
  constexpr double kEps = 3e-14;
  constexpr double kTiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) break;
  }
  return h;
}

double beta_inc(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double bt = std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                             a * std::log(x) + b * std::log1p(-x));
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return bt * beta_cf(a, b, x) / a;
  }
  return 1.0 - bt * beta_cf(b, a, 1.0 - x) / b;
}

}  // namespace

double pearson_p_value(double r, int n) {
  if (n < 3) return 1.0;
  const double df = static_cast<double>(n - 2);
  const double r2 = std::min(r * r, 1.0);
  if (r2 >= 1.0) return 0.0;
  const double t2 = r2 * df / (1.0 - r2);
  return beta_inc(df / 2.0, 0.5, df / (df + t2));
}

}  // namespace mdd
}  // namespace mpl
