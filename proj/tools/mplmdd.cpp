// mplmdd: semi-supervised CTC phoneme recognizer with momentum pseudo-labeling
// and mispronunciation detection/diagnosis scoring.
//
// Subcommands: synth, train, mpl, oneshot, eval, correlate.
// Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric divergence.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mpl/corpus.hpp"
#include "mpl/ctc.hpp"
#include "mpl/errors.hpp"
#include "mpl/mdd.hpp"
#include "mpl/model.hpp"
#include "mpl/report.hpp"
#include "mpl/rng.hpp"
#include "mpl/trainer.hpp"

namespace fs = std::filesystem;

namespace {

struct SplitOpts {
  std::vector<std::string> held_out;
  double dev_fraction = 0.1;
  std::uint64_t split_seed = 17;
};

struct ModelOpts {
  int context_radius = 2;
  std::vector<int> hidden = {64, 64};
  double init_scale = 1.0;
};

struct TrainOpts {
  int epochs = 50;
  int micro_batch = 1;
  int accum_steps = 32;
  double lr_head = 3e-4;
  double lr_body = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::string momentum_mode = "half_life";  // or "fixed"
  double momentum_alpha = 0.999;
  bool no_augment = false;
  std::vector<double> speed_factors = {0.9, 1.0, 1.1};
  int time_masks = 2;
  double time_mask_frac = 0.10;
  int feat_masks = 1;
  double feat_mask_frac = 0.20;
  double labeled_batch_fraction = -1.0;  // <0 = proportional mixing
  std::uint64_t seed = 1;
};

void add_split_options(CLI::App* cmd, SplitOpts& opts) {
  cmd->add_option("--held-out", opts.held_out, "speakers whose labeled utterances form the test set")
      ->required();
  cmd->add_option("--dev-fraction", opts.dev_fraction, "fraction of labeled training data held for dev")
      ->capture_default_str();
  cmd->add_option("--split-seed", opts.split_seed, "seed for the dev split shuffle")
      ->capture_default_str();
}

void add_model_options(CLI::App* cmd, ModelOpts& opts) {
  cmd->add_option("--context-radius", opts.context_radius, "frames stacked on each side")
      ->capture_default_str();
  cmd->add_option("--hidden", opts.hidden, "hidden layer sizes")->capture_default_str();
  cmd->add_option("--init-scale", opts.init_scale, "weight init scale")->capture_default_str();
}

void add_train_options(CLI::App* cmd, TrainOpts& opts) {
  cmd->add_option("--epochs", opts.epochs)->capture_default_str();
  cmd->add_option("--micro-batch", opts.micro_batch)->capture_default_str();
  cmd->add_option("--accum-steps", opts.accum_steps, "gradient accumulation count")
      ->capture_default_str();
  cmd->add_option("--lr-head", opts.lr_head, "output layer learning rate")->capture_default_str();
  cmd->add_option("--lr-body", opts.lr_body, "hidden layer learning rate")->capture_default_str();
  cmd->add_option("--beta1", opts.beta1)->capture_default_str();
  cmd->add_option("--beta2", opts.beta2)->capture_default_str();
  cmd->add_option("--adam-eps", opts.adam_eps)->capture_default_str();
  cmd->add_option("--momentum-mode", opts.momentum_mode, "teacher momentum: fixed or half_life")
      ->check(CLI::IsMember({"fixed", "half_life"}))
      ->capture_default_str();
  cmd->add_option("--momentum-alpha", opts.momentum_alpha, "alpha for fixed mode")
      ->capture_default_str();
  cmd->add_flag("--no-augment", opts.no_augment, "disable speed perturbation and masking");
  cmd->add_option("--speed-factors", opts.speed_factors)->capture_default_str();
  cmd->add_option("--time-masks", opts.time_masks)->capture_default_str();
  cmd->add_option("--time-mask-frac", opts.time_mask_frac)->capture_default_str();
  cmd->add_option("--feat-masks", opts.feat_masks)->capture_default_str();
  cmd->add_option("--feat-mask-frac", opts.feat_mask_frac)->capture_default_str();
  cmd->add_option("--labeled-batch-fraction", opts.labeled_batch_fraction,
                  "per-batch labeled share; negative keeps proportional mixing")
      ->capture_default_str();
  cmd->add_option("--seed", opts.seed, "training/init seed")->capture_default_str();
}

mpl::TrainConfig to_train_config(const TrainOpts& opts, std::uint64_t train_seed) {
  mpl::TrainConfig cfg;
  cfg.epochs = opts.epochs;
  cfg.micro_batch = opts.micro_batch;
  cfg.accum_steps = opts.accum_steps;
  cfg.lr_head = opts.lr_head;
  cfg.lr_body = opts.lr_body;
  cfg.adam = {opts.beta1, opts.beta2, opts.adam_eps};
  cfg.momentum = opts.momentum_mode == "fixed"
                     ? mpl::MomentumSchedule::fixed(opts.momentum_alpha)
                     : mpl::MomentumSchedule::half_life();
  cfg.augment = !opts.no_augment;
  cfg.speed_factors = opts.speed_factors;
  cfg.time_masks = opts.time_masks;
  cfg.time_mask_frac = opts.time_mask_frac;
  cfg.feat_masks = opts.feat_masks;
  cfg.feat_mask_frac = opts.feat_mask_frac;
  if (opts.labeled_batch_fraction >= 0.0) cfg.labeled_batch_fraction = opts.labeled_batch_fraction;
  cfg.seed = train_seed;
  return cfg;
}

fs::path resolve_out_dir(const std::string& flag_value) {
  const char* env = std::getenv("MPLMDD_OUT_DIR");
  fs::path dir = (env && *env) ? fs::path(env) : fs::path(flag_value);
  if (dir.empty()) throw mpl::ConfigError("output directory not set");
  fs::create_directories(dir);
  return dir;
}

std::ofstream open_log(const fs::path& path) {
  std::ofstream log(path);
  if (!log) throw mpl::DataError("cannot write log file " + path.string());
  return log;
}

mpl::EpochCallback log_appender(std::ofstream& log) {
  return [&log](const mpl::EpochLog& e) {
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "epoch=%d loss_labeled=%.6f loss_unlabeled=%.6f dev_per=%.4f alpha=%.6f skipped=%ld",
                  e.epoch, e.loss_labeled, e.loss_unlabeled, e.dev_per, e.alpha, e.skipped);
    log << buf << '\n';
    log.flush();
  };
}

struct SplitSets {
  mpl::CorpusSplits splits;
  std::vector<mpl::TrainExample> labeled;
  std::vector<mpl::TrainExample> dev;
  std::vector<const mpl::Utterance*> unlabeled;
};

SplitSets prepare_splits(const mpl::Corpus& corpus, const SplitOpts& opts) {
  SplitSets sets;
  const std::set<std::string> held_out(opts.held_out.begin(), opts.held_out.end());
  sets.splits = mpl::split_corpus(corpus, held_out, opts.dev_fraction, opts.split_seed);
  sets.labeled = mpl::make_examples(corpus, sets.splits.labeled_train);
  sets.dev = mpl::make_examples(corpus, sets.splits.dev);
  sets.unlabeled = mpl::collect_utterances(corpus, sets.splits.unlabeled_train);
  return sets;
}

mpl::ModelConfig build_model_config(const mpl::Corpus& corpus, const ModelOpts& opts,
                                    std::uint64_t init_seed) {
  mpl::ModelConfig cfg;
  cfg.input_dim = corpus.feature_dim();
  cfg.context_radius = opts.context_radius;
  cfg.hidden = opts.hidden;
  cfg.output_size = corpus.vocab.size() + 1;
  cfg.init_scale = opts.init_scale;
  cfg.seed = init_seed;
  cfg.validate();
  return cfg;
}

void check_checkpoint_compat(const mpl::Checkpoint& ckpt, const mpl::Corpus& corpus) {
  if (ckpt.params.config.input_dim != corpus.feature_dim()) {
    throw mpl::ConfigError("checkpoint input_dim " + std::to_string(ckpt.params.config.input_dim) +
                           " does not match corpus feature dim " +
                           std::to_string(corpus.feature_dim()));
  }
  if (ckpt.params.config.output_size != corpus.vocab.size() + 1) {
    throw mpl::ConfigError("checkpoint output size does not match corpus vocab");
  }
}

void save_best(const mpl::TrainResult& result, const fs::path& out_dir) {
  mpl::save_checkpoint(result.best, out_dir / "best.ckpt");
  std::printf("best epoch %d dev_per %.4f%% -> %s\n", result.best.epoch, result.best.dev_per,
              (out_dir / "best.ckpt").c_str());
}

// ---------------------------------------------------------------------------

int cmd_synth(const mpl::SynthSpec& spec, const std::string& out_flag) {
  const fs::path out_dir = resolve_out_dir(out_flag);
  const mpl::SynthResult result = mpl::synth_corpus(spec);
  mpl::save_corpus(result.corpus, out_dir / "corpus.jsonl");
  mpl::save_corpus(result.truth, out_dir / "truth.jsonl");

  long labeled = 0;
  long frames = 0;
  for (const auto& u : result.corpus.utterances) {
    labeled += u.labeled() ? 1 : 0;
    frames += u.features.rows();
  }
  std::printf("synth: %zu utterances (%ld labeled), %d speakers, %ld frames, vocab %d\n",
              result.corpus.utterances.size(), labeled, spec.num_speakers, frames,
              result.corpus.vocab.size());
  std::printf("wrote %s and %s\n", (out_dir / "corpus.jsonl").c_str(),
              (out_dir / "truth.jsonl").c_str());
  return 0;
}

int cmd_train(const std::string& corpus_path, const SplitOpts& split, const ModelOpts& model,
              const TrainOpts& train, const std::string& out_flag) {
  const fs::path out_dir = resolve_out_dir(out_flag);
  const mpl::Corpus corpus = mpl::load_corpus(corpus_path);
  const SplitSets sets = prepare_splits(corpus, split);

  mpl::Rng master(train.seed);
  const std::uint64_t init_seed = master.next_u64();
  const std::uint64_t train_seed = master.next_u64();
  const mpl::ModelParams init = mpl::init_model(build_model_config(corpus, model, init_seed));
  const mpl::TrainConfig cfg = to_train_config(train, train_seed);

  std::ofstream log = open_log(out_dir / "train.log");
  const mpl::TrainResult result =
      mpl::finetune_labeled(init, sets.labeled, sets.dev, cfg, log_appender(log));
  save_best(result, out_dir);
  return 0;
}

int cmd_mpl(const std::string& corpus_path, const std::string& base_path, const SplitOpts& split,
            const TrainOpts& train, bool allow_empty_unlabeled, const std::string& out_flag) {
  const fs::path out_dir = resolve_out_dir(out_flag);
  const mpl::Corpus corpus = mpl::load_corpus(corpus_path);
  const mpl::Checkpoint base = mpl::load_checkpoint(base_path);
  check_checkpoint_compat(base, corpus);
  const SplitSets sets = prepare_splits(corpus, split);
  if (sets.unlabeled.empty() && !allow_empty_unlabeled) {
    throw mpl::DataError("mpl: unlabeled training pool is empty (pass --allow-empty-unlabeled to proceed)");
  }

  mpl::Rng master(train.seed);
  master.next_u64();  // the init-seed slot is unused when starting from a checkpoint
  const mpl::TrainConfig cfg = to_train_config(train, master.next_u64());

  std::ofstream log = open_log(out_dir / "mpl.log");
  const mpl::TrainResult result =
      mpl::mpl_finetune(base.params, sets.labeled, sets.unlabeled, sets.dev, cfg, log_appender(log));
  std::printf("skipped pseudo labels: %ld\n", result.total_skipped);
  save_best(result, out_dir);
  return 0;
}

int cmd_oneshot(const std::string& corpus_path, const std::string& base_path,
                const std::string& mode_str, const SplitOpts& split, const TrainOpts& train,
                const std::string& out_flag) {
  const fs::path out_dir = resolve_out_dir(out_flag);
  const mpl::Corpus corpus = mpl::load_corpus(corpus_path);
  const mpl::Checkpoint base = mpl::load_checkpoint(base_path);
  check_checkpoint_compat(base, corpus);
  const SplitSets sets = prepare_splits(corpus, split);
  const auto mode = mode_str == "scratch" ? mpl::OneshotMode::scratch : mpl::OneshotMode::continual;

  mpl::Rng master(train.seed);
  master.next_u64();
  const mpl::TrainConfig cfg = to_train_config(train, master.next_u64());

  std::ofstream log = open_log(out_dir / "oneshot.log");
  const mpl::OneshotResult result =
      mpl::oneshot_pl(base.params, sets.labeled, sets.unlabeled, sets.dev, mode, cfg,
                      log_appender(log));

  // Frozen pseudo labels, dumped in corpus format.
  mpl::Corpus dump;
  dump.vocab = corpus.vocab;
  for (const mpl::PseudoLabel& pl : result.pseudo_labels) {
    mpl::Utterance utt = *pl.utt;
    std::vector<mpl::PerceivedToken> tokens;
    tokens.reserve(pl.target.size());
    for (int sym : pl.target) tokens.push_back({sym, false});
    utt.perceived = std::move(tokens);
    dump.utterances.push_back(std::move(utt));
  }
  mpl::save_corpus(dump, out_dir / "pseudo_labels.jsonl");

  std::printf("pseudo labels: %zu written, %ld dropped (empty decode)\n",
              result.pseudo_labels.size(), result.dropped);
  save_best(result.train, out_dir);
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& corpus_path,
             const std::string& mode, const std::vector<std::string>& speakers,
             const std::string& out_flag) {
  const fs::path out_dir = resolve_out_dir(out_flag);
  const mpl::Corpus corpus = mpl::load_corpus(corpus_path);
  const mpl::Checkpoint ckpt = mpl::load_checkpoint(ckpt_path);
  check_checkpoint_compat(ckpt, corpus);

  const std::set<std::string> wanted(speakers.begin(), speakers.end());
  std::vector<const mpl::Utterance*> selected;
  for (const auto& u : corpus.utterances) {
    if (wanted.empty() || wanted.count(u.speaker)) selected.push_back(&u);
  }
  if (selected.empty()) throw mpl::DataError("eval: no utterances selected");

  if (mode == "open_test") {
    // canonical-reference scoring; no annotations required
    std::vector<mpl::mdd::ScoredUtterance> rows;
    mpl::mdd::PerAccumulator total;
    for (const auto* u : selected) {
      const auto hyp = mpl::decode_utterance(ckpt.params, u->features);
      total.add(u->canonical, hyp);
      rows.push_back({u->speaker, u->canonical, hyp});
    }
    std::map<std::string, double> speaker_per;
    for (auto& [spk, value] : mpl::mdd::per_speaker_per(rows)) speaker_per[spk] = 100.0 * value;
    mpl::report::write_text_file(out_dir / "per_speaker_per.csv",
                                 mpl::report::format_speaker_per_csv(speaker_per));
    std::printf("open_test per: %.4f%% over %zu utterances, %zu speakers\n", 100.0 * total.ratio(),
                selected.size(), speaker_per.size());
    std::printf("wrote %s\n", (out_dir / "per_speaker_per.csv").c_str());
    return 0;
  }

  // mdd / per modes score against the annotated (perceived) targets
  std::vector<mpl::mdd::ScoredUtterance> rows;
  mpl::mdd::PerAccumulator total;
  mpl::mdd::MddCounts counts;
  for (const auto* u : selected) {
    if (!u->labeled()) {
      throw mpl::DataError("eval: utterance '" + u->id + "' has no annotations (required by mode '" +
                           mode + "')");
    }
    const std::vector<int> target = mpl::strip_artificial_sil(*u->perceived);
    if (target.empty()) {
      throw mpl::DataError("eval: utterance '" + u->id + "' has an empty target after sil stripping");
    }
    const auto hyp = mpl::decode_utterance(ckpt.params, u->features);
    total.add(target, hyp);
    rows.push_back({u->speaker, target, hyp});
    if (mode == "mdd") counts += mpl::mdd::classify(u->canonical, target, hyp);
  }
  std::map<std::string, double> speaker_per;
  for (auto& [spk, value] : mpl::mdd::per_speaker_per(rows)) speaker_per[spk] = 100.0 * value;
  mpl::report::write_text_file(out_dir / "per_speaker_per.csv",
                               mpl::report::format_speaker_per_csv(speaker_per));

  if (mode == "mdd") {
    mpl::report::MddReport rep;
    rep.counts = counts;
    rep.scores = mpl::mdd::mdd_scores(counts);
    rep.per_percent = 100.0 * total.ratio();
    rep.speaker_per = speaker_per;
    mpl::report::write_text_file(out_dir / "mdd_report.txt", mpl::report::format_mdd_text(rep));
    mpl::report::write_text_file(out_dir / "mdd_report.csv", mpl::report::format_mdd_csv(rep));
    std::fputs(mpl::report::format_mdd_text(rep).c_str(), stdout);
    std::printf("wrote %s\n", (out_dir / "mdd_report.csv").c_str());
  } else {
    std::printf("per: %.4f%% over %zu utterances\n", 100.0 * total.ratio(), selected.size());
  }
  std::printf("wrote %s\n", (out_dir / "per_speaker_per.csv").c_str());
  return 0;
}

int cmd_correlate(const std::string& per_csv, const std::string& scores_csv, int k,
                  const std::string& out_flag) {
  const fs::path out_dir = resolve_out_dir(out_flag);
  const auto speaker_per = mpl::report::load_speaker_per_csv(per_csv);
  const auto ratings = mpl::report::load_scores_csv(scores_csv);
  const mpl::report::CorrelationReport rep = mpl::report::correlate(speaker_per, ratings, k);
  mpl::report::write_text_file(out_dir / "correlation.csv",
                               mpl::report::format_correlation_csv(rep));
  mpl::report::write_text_file(out_dir / "correlation.txt",
                               mpl::report::format_correlation_text(rep));
  std::fputs(mpl::report::format_correlation_text(rep).c_str(), stdout);
  std::printf("wrote %s\n", (out_dir / "correlation.csv").c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"momentum pseudo-labeling CTC trainer and mispronunciation scorer"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML config file; flags override file values");

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus with a ground-truth sidecar");
  mpl::SynthSpec spec;
  std::string synth_out = "out";
  synth->add_option("--vocab-size", spec.vocab_size)->capture_default_str();
  synth->add_option("--speakers", spec.num_speakers)->capture_default_str();
  synth->add_option("--utts-per-speaker", spec.utts_per_speaker)->capture_default_str();
  synth->add_option("--len-min", spec.phoneme_len_min)->capture_default_str();
  synth->add_option("--len-max", spec.phoneme_len_max)->capture_default_str();
  synth->add_option("--dur-min", spec.frames_per_phoneme_min)->capture_default_str();
  synth->add_option("--dur-max", spec.frames_per_phoneme_max)->capture_default_str();
  synth->add_option("--feat-dim", spec.feature_dim)->capture_default_str();
  synth->add_option("--misp-rate", spec.mispronunciation_rate)->capture_default_str();
  synth->add_option("--noise-sigma", spec.noise_sigma)->capture_default_str();
  synth->add_option("--labeled-fraction", spec.labeled_fraction)->capture_default_str();
  synth->add_option("--seed", spec.seed)->capture_default_str();
  synth->add_option("--out", synth_out, "output directory")->capture_default_str();

  // train
  auto* train = app.add_subcommand("train", "labeled-only fine-tuning");
  std::string train_corpus, train_out = "out";
  SplitOpts train_split;
  ModelOpts train_model;
  TrainOpts train_train;
  train->add_option("--corpus", train_corpus, "corpus file")->required();
  add_split_options(train, train_split);
  add_model_options(train, train_model);
  add_train_options(train, train_train);
  train->add_option("--out", train_out, "output directory")->capture_default_str();

  // mpl
  auto* mpl_cmd = app.add_subcommand("mpl", "fine-tune with labeled + unlabeled data (momentum pseudo-labeling)");
  std::string mpl_corpus, mpl_base, mpl_out = "out";
  SplitOpts mpl_split;
  TrainOpts mpl_train;
  bool allow_empty_unlabeled = false;
  mpl_cmd->add_option("--corpus", mpl_corpus, "corpus file")->required();
  mpl_cmd->add_option("--base", mpl_base, "base checkpoint from the train stage")->required();
  add_split_options(mpl_cmd, mpl_split);
  add_train_options(mpl_cmd, mpl_train);
  mpl_cmd->add_flag("--allow-empty-unlabeled", allow_empty_unlabeled,
                    "permit an empty unlabeled pool (degenerates to labeled-only training)");
  mpl_cmd->add_option("--out", mpl_out, "output directory")->capture_default_str();

  // oneshot
  auto* oneshot = app.add_subcommand("oneshot", "one-shot pseudo-labeling baseline");
  std::string os_corpus, os_base, os_mode = "scratch", os_out = "out";
  SplitOpts os_split;
  TrainOpts os_train;
  oneshot->add_option("--corpus", os_corpus, "corpus file")->required();
  oneshot->add_option("--base", os_base, "base checkpoint used to generate pseudo labels")->required();
  oneshot->add_option("--mode", os_mode, "scratch or continual")
      ->check(CLI::IsMember({"scratch", "continual"}))
      ->capture_default_str();
  add_split_options(oneshot, os_split);
  add_train_options(oneshot, os_train);
  oneshot->add_option("--out", os_out, "output directory")->capture_default_str();

  // eval
  auto* eval = app.add_subcommand("eval", "score a checkpoint");
  std::string ev_ckpt, ev_corpus, ev_mode = "mdd", ev_out = "out";
  std::vector<std::string> ev_speakers;
  eval->add_option("--checkpoint", ev_ckpt)->required();
  eval->add_option("--corpus", ev_corpus)->required();
  eval->add_option("--mode", ev_mode, "mdd, per, or open_test")
      ->check(CLI::IsMember({"mdd", "per", "open_test"}))
      ->capture_default_str();
  eval->add_option("--speakers", ev_speakers, "restrict scoring to these speakers");
  eval->add_option("--out", ev_out, "output directory")->capture_default_str();

  // correlate
  auto* correlate = app.add_subcommand("correlate", "correlate per-speaker PER with human ratings");
  std::string co_per, co_scores, co_out = "out";
  int co_k = 10;
  correlate->add_option("--per-csv", co_per, "per-speaker PER csv from eval")->required();
  correlate->add_option("--scores-csv", co_scores, "speaker,intelligibility,accentedness csv")
      ->required();
  correlate->add_option("--k", co_k, "number of extreme speakers per end")->capture_default_str();
  correlate->add_option("--out", co_out, "output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << "error[config]: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*synth) return cmd_synth(spec, synth_out);
    if (*train) return cmd_train(train_corpus, train_split, train_model, train_train, train_out);
    if (*mpl_cmd) return cmd_mpl(mpl_corpus, mpl_base, mpl_split, mpl_train, allow_empty_unlabeled, mpl_out);
    if (*oneshot) return cmd_oneshot(os_corpus, os_base, os_mode, os_split, os_train, os_out);
    if (*eval) return cmd_eval(ev_ckpt, ev_corpus, ev_mode, ev_speakers, ev_out);
    if (*correlate) return cmd_correlate(co_per, co_scores, co_k, co_out);
  } catch (const mpl::ConfigError& e) {
    std::cerr << "error[config]: " << e.what() << "\n";
    return 2;
  } catch (const mpl::DivergenceError& e) {
    std::cerr << "error[divergence]: " << e.what() << "\n";
    return 4;
  } catch (const mpl::InfeasibleTarget& e) {
    std::cerr << "error[data]: " << e.what() << "\n";
    return 3;
  } catch (const mpl::DataError& e) {
    std::cerr << "error[data]: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error[internal]: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
