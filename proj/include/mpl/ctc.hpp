#pragma once

#include <utility>
#include <vector>

#include "mpl/errors.hpp"
#include "mpl/matrix.hpp"

namespace mpl {
namespace ctc {

// Blank is always the last lattice column: index V for a V-symbol vocabulary.
inline int blank_index(const LogProbSeq& lattice) { return lattice.cols() - 1; }

// Merge adjacent repeats, then delete blanks.
std::vector<int> collapse(const std::vector<int>& path, int blank);

// Shortest path length that can emit `target`: L plus one separating blank
// per adjacent repeated label.
int min_path_length(const std::vector<int>& target);

// -log sum over all alignments collapsing to `target`, log-space forward
// algorithm over the 2L+1 extended-target states.
// Throws InfeasibleTarget when min_path_length(target) > T or target is empty.
double ctc_loss(const LogProbSeq& lattice, const std::vector<int>& target);

// Loss plus its gradient with respect to every log-probability entry,
// computed by the forward-backward recursion. The lattice entries are
// treated as free variables (no renormalization), so the gradient matches
// direct finite differences on the entries.
std::pair<double, Matrix> ctc_lattice_grad(const LogProbSeq& lattice,
                                           const std::vector<int>& target);

// Per-frame argmax (ties resolved to the lowest index), then collapse.
std::vector<int> greedy_decode(const LogProbSeq& lattice);

// Literal enumeration of all (V+1)^T paths; test oracle for ctc_loss.
// Guarded to (V+1)^T <= 10^6 instances.
double brute_force_loss(const LogProbSeq& lattice, const std::vector<int>& target);

}  // namespace ctc
}  // namespace mpl
