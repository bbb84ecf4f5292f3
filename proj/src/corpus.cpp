#include "mpl/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

namespace mpl {

using nlohmann::json;

int PhonemeVocab::index_of(const std::string& s) const {
  for (int i = 0; i < size(); ++i) {
    if (symbols[i] == s) return i;
  }
  return -1;
}

PhonemeVocab PhonemeVocab::make(std::vector<std::string> symbols, const std::string& sil_symbol) {
  if (symbols.empty()) throw DataError("vocab: empty symbol list");
  std::unordered_set<std::string> seen;
  for (const auto& s : symbols) {
    if (s.empty()) throw DataError("vocab: empty symbol");
    if (!seen.insert(s).second) throw DataError("vocab: duplicate symbol '" + s + "'");
  }
  PhonemeVocab vocab;
  vocab.symbols = std::move(symbols);
  vocab.sil_index = vocab.index_of(sil_symbol);
  if (vocab.sil_index < 0) {
    throw DataError("vocab: sil symbol '" + sil_symbol + "' not in symbol list");
  }
  return vocab;
}

const Utterance* Corpus::find(const std::string& id) const {
  for (const auto& u : utterances) {
    if (u.id == id) return &u;
  }
  return nullptr;
}

void SynthSpec::validate() const {
  if (vocab_size < 2) throw ConfigError("synth: vocab_size must be >= 2");
  if (num_speakers < 1) throw ConfigError("synth: num_speakers must be >= 1");
  if (utts_per_speaker < 1) throw ConfigError("synth: utts_per_speaker must be >= 1");
  if (phoneme_len_min < 1 || phoneme_len_max < phoneme_len_min) {
    throw ConfigError("synth: bad phoneme length range");
  }
  if (frames_per_phoneme_min < 1 || frames_per_phoneme_max < frames_per_phoneme_min) {
    throw ConfigError("synth: bad frames-per-phoneme range");
  }
  if (feature_dim < 1) throw ConfigError("synth: feature_dim must be >= 1");
  if (mispronunciation_rate < 0.0 || mispronunciation_rate > 1.0) {
    throw ConfigError("synth: mispronunciation_rate must be in [0, 1]");
  }
  if (noise_sigma < 0.0) throw ConfigError("synth: noise_sigma must be >= 0");
  if (labeled_fraction <= 0.0 || labeled_fraction > 1.0) {
    throw ConfigError("synth: labeled_fraction must be in (0, 1]");
  }
}

namespace {

[[noreturn]] void corpus_error(const std::filesystem::path& path, std::size_t line,
                               const std::string& msg) {
  throw DataError(path.string() + ":" + std::to_string(line) + ": " + msg);
}

std::uint32_t read_u32_le(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_u32_le(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

Matrix parse_inline_features(const json& arr, const std::filesystem::path& path,
                             std::size_t line) {
  if (!arr.is_array() || arr.empty()) corpus_error(path, line, "features must be a non-empty 2-D array");
  const auto rows = static_cast<int>(arr.size());
  if (!arr[0].is_array()) corpus_error(path, line, "features must be a 2-D array");
  const auto cols = static_cast<int>(arr[0].size());
  if (cols == 0) corpus_error(path, line, "features have zero dimensions");
  Matrix m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    const json& row = arr[r];
    if (!row.is_array() || static_cast<int>(row.size()) != cols) {
      corpus_error(path, line, "ragged feature rows");
    }
    for (int c = 0; c < cols; ++c) m(r, c) = row[c].get<double>();
  }
  return m;
}

}  // namespace

Matrix load_features_bin(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("features: cannot open " + path.string());
  const std::uint32_t frames = read_u32_le(in);
  const std::uint32_t dim = read_u32_le(in);
  if (!in) throw DataError("features: truncated header in " + path.string());
  Matrix m(static_cast<int>(frames), static_cast<int>(dim));
  for (std::size_t i = 0; i < m.data().size(); ++i) {
    std::uint32_t bits = read_u32_le(in);
    float f;
    std::memcpy(&f, &bits, 4);
    m.data()[i] = static_cast<double>(f);
  }
  if (!in) throw DataError("features: truncated payload in " + path.string());
  return m;
}

void save_features_bin(const Matrix& features, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("features: cannot write " + path.string());
  write_u32_le(out, static_cast<std::uint32_t>(features.rows()));
  write_u32_le(out, static_cast<std::uint32_t>(features.cols()));
  for (double v : features.data()) {
    const auto f = static_cast<float>(v);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    write_u32_le(out, bits);
  }
  if (!out) throw DataError("features: write failed for " + path.string());
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("corpus: cannot open " + path.string());

  Corpus corpus;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  int feature_dim = -1;
  std::unordered_set<std::string> ids;

  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      corpus_error(path, line_no, std::string("malformed JSON: ") + e.what());
    }

    if (!have_header) {
      if (!rec.contains("vocab") || !rec.contains("sil")) {
        corpus_error(path, line_no, "first line must be a header with 'vocab' and 'sil'");
      }
      try {
        corpus.vocab = PhonemeVocab::make(rec["vocab"].get<std::vector<std::string>>(),
                                          rec["sil"].get<std::string>());
      } catch (const DataError& e) {
        corpus_error(path, line_no, e.what());
      } catch (const json::exception& e) {
        corpus_error(path, line_no, std::string("bad header: ") + e.what());
      }
      have_header = true;
      continue;
    }

    try {
      Utterance utt;
      utt.id = rec.at("id").get<std::string>();
      utt.speaker = rec.at("speaker").get<std::string>();
      utt.domain = rec.value("domain", std::string());

      const json& feats = rec.at("features");
      if (feats.is_string()) {
        utt.features = load_features_bin(path.parent_path() / feats.get<std::string>());
      } else {
        utt.features = parse_inline_features(feats, path, line_no);
      }
      if (utt.features.rows() < 1) corpus_error(path, line_no, "utterance has no frames");
      if (feature_dim < 0) feature_dim = utt.features.cols();
      if (utt.features.cols() != feature_dim) {
        corpus_error(path, line_no,
                     "inconsistent feature dim " + std::to_string(utt.features.cols()) +
                         " (corpus uses " + std::to_string(feature_dim) + ")");
      }

      for (const auto& sym : rec.at("canonical")) {
        const int idx = corpus.vocab.index_of(sym.get<std::string>());
        if (idx < 0) {
          corpus_error(path, line_no, "unknown phoneme symbol '" + sym.get<std::string>() + "'");
        }
        utt.canonical.push_back(idx);
      }
      if (utt.canonical.empty()) corpus_error(path, line_no, "empty canonical sequence");

      const json& perc = rec.at("perceived");
      if (!perc.is_null()) {
        std::vector<PerceivedToken> tokens;
        for (const auto& tok : perc) {
          PerceivedToken t;
          const std::string sym = tok.at("symbol").get<std::string>();
          t.symbol = corpus.vocab.index_of(sym);
          if (t.symbol < 0) corpus_error(path, line_no, "unknown phoneme symbol '" + sym + "'");
          t.artificial = tok.value("artificial", false);
          if (t.artificial && t.symbol != corpus.vocab.sil_index) {
            corpus_error(path, line_no, "artificial flag on non-sil symbol '" + sym + "'");
          }
          tokens.push_back(t);
        }
        utt.perceived = std::move(tokens);
      }

      if (!ids.insert(utt.id).second) corpus_error(path, line_no, "duplicate utterance id '" + utt.id + "'");
      corpus.utterances.push_back(std::move(utt));
    } catch (const json::exception& e) {
      corpus_error(path, line_no, std::string("bad record: ") + e.what());
    }
  }

  if (!have_header && !corpus.utterances.empty()) {
    throw DataError("corpus: missing header line in " + path.string());
  }
  return corpus;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("corpus: cannot write " + path.string());

  json header;
  header["vocab"] = corpus.vocab.symbols;
  header["sil"] = corpus.vocab.symbol(corpus.vocab.sil_index);
  out << header.dump() << '\n';

  for (const auto& utt : corpus.utterances) {
    json rec;
    rec["id"] = utt.id;
    rec["speaker"] = utt.speaker;
    rec["domain"] = utt.domain;
    json rows = json::array();
    for (int r = 0; r < utt.features.rows(); ++r) {
      json row = json::array();
      for (int c = 0; c < utt.features.cols(); ++c) row.push_back(utt.features(r, c));
      rows.push_back(std::move(row));
    }
    rec["features"] = std::move(rows);
    json canonical = json::array();
    for (int idx : utt.canonical) canonical.push_back(corpus.vocab.symbol(idx));
    rec["canonical"] = std::move(canonical);
    if (utt.perceived) {
      json perc = json::array();
      for (const auto& tok : *utt.perceived) {
        perc.push_back({{"symbol", corpus.vocab.symbol(tok.symbol)}, {"artificial", tok.artificial}});
      }
      rec["perceived"] = std::move(perc);
    } else {
      rec["perceived"] = nullptr;
    }
    out << rec.dump() << '\n';
  }
  if (!out) throw DataError("corpus: write failed for " + path.string());
}

std::vector<int> strip_artificial_sil(const std::vector<PerceivedToken>& perceived) {
  std::vector<int> out;
  out.reserve(perceived.size());
  for (const auto& tok : perceived) {
    if (!tok.artificial) out.push_back(tok.symbol);
  }
  return out;
}

CorpusSplits split_corpus(const Corpus& corpus, const std::set<std::string>& held_out_speakers,
                          double dev_fraction, std::uint64_t seed) {
  if (dev_fraction <= 0.0 || dev_fraction >= 1.0) {
    throw ConfigError("split: dev_fraction must be in (0, 1)");
  }
  std::unordered_set<std::string> speakers;
  for (const auto& u : corpus.utterances) speakers.insert(u.speaker);
  for (const auto& s : held_out_speakers) {
    if (!speakers.count(s)) throw DataError("split: held-out speaker '" + s + "' not in corpus");
  }

  CorpusSplits splits;
  std::vector<std::size_t> train_labeled_idx;
  std::map<std::string, int> held_out_labeled_count;
  for (const auto& s : held_out_speakers) held_out_labeled_count[s] = 0;

  for (std::size_t i = 0; i < corpus.utterances.size(); ++i) {
    const Utterance& u = corpus.utterances[i];
    const bool held_out = held_out_speakers.count(u.speaker) > 0;
    if (held_out) {
      if (u.labeled()) {
        splits.test.push_back(u.id);
        ++held_out_labeled_count[u.speaker];
      }
      // unlabeled utterances of held-out speakers take part in nothing
    } else if (u.labeled()) {
      train_labeled_idx.push_back(i);
    } else {
      splits.unlabeled_train.push_back(u.id);
    }
  }

  for (const auto& [spk, count] : held_out_labeled_count) {
    if (count == 0) throw DataError("split: held-out speaker '" + spk + "' has no labeled utterances");
  }

  const auto dev_count =
      static_cast<std::size_t>(std::floor(dev_fraction * static_cast<double>(train_labeled_idx.size())));
  if (dev_count == 0) throw DataError("split: dev set would be empty");

  Rng rng(seed);
  std::vector<std::size_t> order = train_labeled_idx;
  rng.shuffle(order);
  std::vector<std::size_t> dev_idx(order.begin(), order.begin() + dev_count);
  std::vector<std::size_t> train_idx(order.begin() + dev_count, order.end());
  std::sort(dev_idx.begin(), dev_idx.end());
  std::sort(train_idx.begin(), train_idx.end());
  for (std::size_t i : dev_idx) splits.dev.push_back(corpus.utterances[i].id);
  for (std::size_t i : train_idx) splits.labeled_train.push_back(corpus.utterances[i].id);
  return splits;
}

namespace {

std::string speaker_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "s%03d", i);
  return buf;
}

std::string utt_name(int spk, int utt) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "s%03d_u%04d", spk, utt);
  return buf;
}

// Uniform non-sil symbol, avoiding `avoid` (pass -1 to allow all).
int draw_symbol(Rng& rng, const PhonemeVocab& vocab, int avoid) {
  for (;;) {
    const int idx = static_cast<int>(rng.uniform_int(0, vocab.size() - 1));
    if (idx == vocab.sil_index) continue;
    if (idx == avoid) continue;
    return idx;
  }
}

}  // namespace

SynthResult synth_corpus(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);

  std::vector<std::string> symbols;
  symbols.push_back("sil");
  for (int i = 1; i < spec.vocab_size; ++i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "p%02d", i);
    symbols.push_back(buf);
  }
  PhonemeVocab vocab = PhonemeVocab::make(symbols, "sil");

  Matrix prototypes(spec.vocab_size, spec.feature_dim);
  for (int p = 0; p < spec.vocab_size; ++p) {
    for (int d = 0; d < spec.feature_dim; ++d) prototypes(p, d) = rng.normal();
  }

  // Speakers differ in how often they mispronounce; the configured rate is
  // the average across speakers.
  std::vector<double> speaker_rate(spec.num_speakers);
  for (int s = 0; s < spec.num_speakers; ++s) {
    speaker_rate[s] = std::min(1.0, spec.mispronunciation_rate * rng.uniform(0.5, 1.5));
  }

  Corpus truth;
  truth.vocab = vocab;

  for (int s = 0; s < spec.num_speakers; ++s) {
    for (int u = 0; u < spec.utts_per_speaker; ++u) {
      Utterance utt;
      utt.id = utt_name(s, u);
      utt.speaker = speaker_name(s);
      utt.domain = "synth";

      const int len = static_cast<int>(rng.uniform_int(spec.phoneme_len_min, spec.phoneme_len_max));
      utt.canonical.reserve(len);
      int prev = -1;
      for (int i = 0; i < len; ++i) {
        // uniform over the full vocab (sil included as a true pause), no
        // immediate repeats so frame decoders can recover boundaries
        int sym;
        do {
          sym = static_cast<int>(rng.uniform_int(0, vocab.size() - 1));
        } while (sym == prev);
        utt.canonical.push_back(sym);
        prev = sym;
      }

      // Mutate canonical into the perceived sequence. Deletions are encoded
      // as artificial sil tokens; insertions appear as plain extra tokens.
      // Regenerate if every phoneme got deleted (the spoken sequence must be
      // non-empty); fall back to the canonical sequence after 100 tries.
      std::vector<PerceivedToken> perceived;
      bool spoken_nonempty = false;
      for (int attempt = 0; attempt < 100 && !spoken_nonempty; ++attempt) {
        perceived.clear();
        for (int sym : utt.canonical) {
          if (sym == vocab.sil_index || rng.uniform() >= speaker_rate[s]) {
            perceived.push_back({sym, false});
            continue;
          }
          switch (rng.uniform_int(0, 2)) {
            case 0:  // substitution
              perceived.push_back({draw_symbol(rng, vocab, sym), false});
              break;
            case 1:  // deletion
              perceived.push_back({vocab.sil_index, true});
              break;
            default:  // insertion after the canonical phoneme
              perceived.push_back({sym, false});
              perceived.push_back({draw_symbol(rng, vocab, sym), false});
              break;
          }
        }
        spoken_nonempty = !strip_artificial_sil(perceived).empty();
      }
      if (!spoken_nonempty) {
        perceived.clear();
        for (int sym : utt.canonical) perceived.push_back({sym, false});
      }
      utt.perceived = perceived;

      const std::vector<int> spoken = strip_artificial_sil(perceived);
      int total_frames = 0;
      std::vector<int> durations(spoken.size());
      for (std::size_t i = 0; i < spoken.size(); ++i) {
        durations[i] =
            static_cast<int>(rng.uniform_int(spec.frames_per_phoneme_min, spec.frames_per_phoneme_max));
        total_frames += durations[i];
      }
      utt.features = Matrix(total_frames, spec.feature_dim);
      int t = 0;
      for (std::size_t i = 0; i < spoken.size(); ++i) {
        for (int f = 0; f < durations[i]; ++f, ++t) {
          for (int d = 0; d < spec.feature_dim; ++d) {
            utt.features(t, d) = prototypes(spoken[i], d) + spec.noise_sigma * rng.normal();
          }
        }
      }
      truth.utterances.push_back(std::move(utt));
    }
  }

  // Hide annotations outside the labeled fraction.
  const auto total = truth.utterances.size();
  auto labeled_count = static_cast<std::size_t>(
      std::llround(spec.labeled_fraction * static_cast<double>(total)));
  labeled_count = std::max<std::size_t>(1, std::min(labeled_count, total));
  std::vector<std::size_t> order(total);
  for (std::size_t i = 0; i < total; ++i) order[i] = i;
  rng.shuffle(order);
  std::vector<bool> keep(total, false);
  for (std::size_t i = 0; i < labeled_count; ++i) keep[order[i]] = true;

  SynthResult result;
  result.truth = std::move(truth);
  result.prototypes = std::move(prototypes);
  result.corpus.vocab = result.truth.vocab;
  result.corpus.utterances = result.truth.utterances;
  for (std::size_t i = 0; i < total; ++i) {
    if (!keep[i]) result.corpus.utterances[i].perceived.reset();
  }
  return result;
}

FeatureSeq speed_perturb(const FeatureSeq& features, double factor) {
  if (factor < 0.5 || factor > 2.0) {
    throw ConfigError("speed_perturb: factor must be in [0.5, 2.0]");
  }
  const int frames = features.rows();
  const int dim = features.cols();
  const int out_frames =
      std::max(1, static_cast<int>(std::llround(static_cast<double>(frames) / factor)));
  if (out_frames == frames && factor == 1.0) return features;

  FeatureSeq out(out_frames, dim);
  for (int t = 0; t < out_frames; ++t) {
    const double src = (out_frames == 1)
                           ? (frames - 1) / 2.0
                           : static_cast<double>(t) * (frames - 1) / (out_frames - 1);
    const int lo = static_cast<int>(std::floor(src));
    const int hi = std::min(lo + 1, frames - 1);
    const double w = src - lo;
    for (int d = 0; d < dim; ++d) {
      out(t, d) = (1.0 - w) * features(lo, d) + w * features(hi, d);
    }
  }
  return out;
}

FeatureSeq spec_mask(const FeatureSeq& features, int max_time_masks, int max_time_width,
                     int max_feat_masks, int max_feat_width, Rng& rng) {
  FeatureSeq out = features;
  const int frames = out.rows();
  const int dim = out.cols();

  const int n_time = static_cast<int>(rng.uniform_int(0, std::max(0, max_time_masks)));
  for (int m = 0; m < n_time; ++m) {
    const int width = static_cast<int>(rng.uniform_int(0, std::min(max_time_width, frames)));
    if (width == 0) continue;
    const int start = static_cast<int>(rng.uniform_int(0, frames - width));
    for (int t = start; t < start + width; ++t) {
      for (int d = 0; d < dim; ++d) out(t, d) = 0.0;
    }
  }

  const int n_feat = static_cast<int>(rng.uniform_int(0, std::max(0, max_feat_masks)));
  for (int m = 0; m < n_feat; ++m) {
    const int width = static_cast<int>(rng.uniform_int(0, std::min(max_feat_width, dim)));
    if (width == 0) continue;
    const int start = static_cast<int>(rng.uniform_int(0, dim - width));
    for (int t = 0; t < frames; ++t) {
      for (int d = start; d < start + width; ++d) out(t, d) = 0.0;
    }
  }
  return out;
}

}  // namespace mpl
