#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mpl/errors.hpp"

namespace mpl {
namespace mdd {

enum class EditOpKind { Match, Substitute, Insert, Delete };

struct EditOp {
  EditOpKind kind;
  int ref_pos;  // -1 for Insert
  int hyp_pos;  // -1 for Delete
};

struct EditAlignment {
  std::vector<EditOp> ops;
  int distance = 0;
};

// Minimum-edit-distance alignment with unit costs. Traceback tie-breaking
// prefers Match > Substitute > Delete > Insert.
EditAlignment align(const std::vector<int>& reference, const std::vector<int>& hypothesis);

int edit_distance(const std::vector<int>& reference, const std::vector<int>& hypothesis);

// Detection/diagnosis tallies. Correct-pronunciation positions land in TA/FR;
// mispronunciation events (substitutions, deletions, perceived insertions)
// land in FA or TR, with TR split by diagnosis correctness.
struct MddCounts {
  long ta = 0;
  long fr = 0;
  long fa = 0;
  long tr_correct_diag = 0;
  long tr_error_diag = 0;

  long tr() const { return tr_correct_diag + tr_error_diag; }
  MddCounts& operator+=(const MddCounts& o);
};

// Classifies every canonical position (and perceived-insertion event) by
// comparing the model prediction against the canonical and perceived
// sequences. Anchored on two alignments with perceived as the pivot:
// align(canonical, perceived) fixes the events, align(perceived, predicted)
// supplies the predicted symbol per perceived position. Canonical deletions
// pick up predicted insertions occurring in the same inter-perceived gap.
MddCounts classify(const std::vector<int>& canonical, const std::vector<int>& perceived,
                   const std::vector<int>& predicted);

// Percentages. A metric whose denominator is zero is reported as nullopt,
// never silently as 0.
struct MddScores {
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> f1;
};

MddScores mdd_scores(const MddCounts& counts);

// Edit distance over reference length. May exceed 1.
double per(const std::vector<int>& reference, const std::vector<int>& hypothesis);

// Micro-average accumulator: sum of distances over sum of reference lengths.
struct PerAccumulator {
  long long distance = 0;
  long long ref_len = 0;

  void add(const std::vector<int>& reference, const std::vector<int>& hypothesis);
  double ratio() const;
};

// Micro-averaged PER per speaker over (speaker, reference, hypothesis) rows.
struct ScoredUtterance {
  std::string speaker;
  std::vector<int> reference;
  std::vector<int> hypothesis;
};

std::map<std::string, double> per_speaker_per(const std::vector<ScoredUtterance>& rows);

// k highest-PER and k lowest-PER speakers; boundary ties go to the
// lexicographically smaller id; the two sets never overlap.
std::pair<std::vector<std::string>, std::vector<std::string>> select_extremes(
    const std::map<std::string, double>& per_map, int k);

// Sample Pearson correlation; nullopt when either input is constant.
std::optional<double> pearson(const std::vector<double>& x, const std::vector<double>& y);

// Two-sided p-value for a sample correlation r over n pairs (t-test with
// n-2 degrees of freedom).
double pearson_p_value(double r, int n);

}  // namespace mdd
}  // namespace mpl
