#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mpl/errors.hpp"
#include "mpl/matrix.hpp"
#include "mpl/rng.hpp"

namespace mpl {

// Phoneme inventory. Blank is not a member; it lives at lattice column V.
struct PhonemeVocab {
  std::vector<std::string> symbols;
  int sil_index = -1;

  int size() const { return static_cast<int>(symbols.size()); }
  const std::string& symbol(int i) const { return symbols.at(i); }
  // -1 when unknown.
  int index_of(const std::string& s) const;

  static PhonemeVocab make(std::vector<std::string> symbols, const std::string& sil_symbol);
};

// One annotated phoneme. Artificial silence tokens are annotation artifacts
// that encode deletions; only the sil symbol may carry the flag.
struct PerceivedToken {
  int symbol = -1;
  bool artificial = false;
  bool operator==(const PerceivedToken& o) const {
    return symbol == o.symbol && artificial == o.artificial;
  }
};

struct Utterance {
  std::string id;
  std::string speaker;
  std::string domain;
  FeatureSeq features;                                    // T x D
  std::vector<int> canonical;                             // what should be said
  std::optional<std::vector<PerceivedToken>> perceived;   // absent = unlabeled

  bool labeled() const { return perceived.has_value(); }
};

struct Corpus {
  PhonemeVocab vocab;
  std::vector<Utterance> utterances;

  int feature_dim() const { return utterances.empty() ? 0 : utterances.front().features.cols(); }
  const Utterance* find(const std::string& id) const;
};

struct CorpusSplits {
  std::vector<std::string> labeled_train;
  std::vector<std::string> unlabeled_train;
  std::vector<std::string> dev;
  std::vector<std::string> test;
};

// Synthetic corpus: phonemes are random prototype vectors in feature space,
// utterances repeat each spoken phoneme's prototype for a sampled duration
// and add Gaussian noise. Task difficulty is controlled by noise_sigma.
struct SynthSpec {
  int vocab_size = 12;           // includes the sil symbol
  int num_speakers = 50;
  int utts_per_speaker = 10;
  int phoneme_len_min = 4;       // canonical length range
  int phoneme_len_max = 9;
  int frames_per_phoneme_min = 2;
  int frames_per_phoneme_max = 4;
  int feature_dim = 10;
  double mispronunciation_rate = 0.15;  // per-speaker average event rate
  double noise_sigma = 1.0;
  double labeled_fraction = 0.15;
  std::uint64_t seed = 1;

  void validate() const;
};

struct SynthResult {
  Corpus corpus;       // labeled_fraction of utterances keep annotations
  Corpus truth;        // sidecar: identical but perceived always present
  Matrix prototypes;   // vocab_size x feature_dim
};

// JSON Lines corpus file. First line is a header declaring the vocab and sil
// symbol; every following line is one utterance. Features are either an
// inline 2-D array or a relative path to a little-endian float32 binary
// (8-byte header of two u32: T, D).
Corpus load_corpus(const std::filesystem::path& path);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);

// Binary feature file: u32 T, u32 D, then T*D float32, all little-endian.
Matrix load_features_bin(const std::filesystem::path& path);
void save_features_bin(const Matrix& features, const std::filesystem::path& path);

// Drops artificial-flagged tokens, keeps true pauses, preserves order.
std::vector<int> strip_artificial_sil(const std::vector<PerceivedToken>& perceived);

// test = labeled utterances of held-out speakers; remaining labeled split into
// dev (floor(dev_fraction * n), seeded shuffle) and labeled_train; unannotated
// utterances of non-held-out speakers become unlabeled_train.
CorpusSplits split_corpus(const Corpus& corpus, const std::set<std::string>& held_out_speakers,
                          double dev_fraction, std::uint64_t seed);

SynthResult synth_corpus(const SynthSpec& spec);

// Linear time interpolation to T' = round(T / factor) frames, factor in [0.5, 2].
FeatureSeq speed_perturb(const FeatureSeq& features, double factor);

// Zeroes out up to max_time_masks random time spans (each up to max_time_width
// frames) and up to max_feat_masks feature-dim spans; counts and widths are
// sampled uniformly up to the maxima.
FeatureSeq spec_mask(const FeatureSeq& features, int max_time_masks, int max_time_width,
                     int max_feat_masks, int max_feat_width, Rng& rng);

}  // namespace mpl
