#include "mpl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mpl/ctc.hpp"
#include "mpl/mdd.hpp"
#include "mpl/rng.hpp"

namespace mpl {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (micro_batch < 1 || accum_steps < 1) throw ConfigError("train: batch sizes must be >= 1");
  if (lr_head <= 0.0 || lr_body <= 0.0) throw ConfigError("train: learning rates must be > 0");
  if (adam.beta1 < 0.0 || adam.beta1 >= 1.0 || adam.beta2 < 0.0 || adam.beta2 >= 1.0) {
    throw ConfigError("train: Adam betas must be in [0, 1)");
  }
  if (adam.eps <= 0.0) throw ConfigError("train: Adam eps must be > 0");
  if (momentum.mode == MomentumSchedule::Mode::fixed &&
      (momentum.alpha < 0.0 || momentum.alpha > 1.0)) {
    throw ConfigError("train: momentum alpha must be in [0, 1]");
  }
  for (double f : speed_factors) {
    if (f < 0.5 || f > 2.0) throw ConfigError("train: speed factors must be in [0.5, 2.0]");
  }
  if (time_masks < 0 || feat_masks < 0) throw ConfigError("train: mask counts must be >= 0");
  if (time_mask_frac < 0.0 || time_mask_frac > 1.0 || feat_mask_frac < 0.0 ||
      feat_mask_frac > 1.0) {
    throw ConfigError("train: mask fractions must be in [0, 1]");
  }
  if (labeled_batch_fraction &&
      (*labeled_batch_fraction < 0.0 || *labeled_batch_fraction > 1.0)) {
    throw ConfigError("train: labeled_batch_fraction must be in [0, 1]");
  }
}

std::vector<LrGroup> head_body_groups(const ModelParams& params, double lr_head, double lr_body,
                                      const std::vector<int>& freeze_layers) {
  const auto shapes = layer_shapes(params.config);
  const int n_layers = static_cast<int>(shapes.size());
  std::vector<LrGroup> groups;
  std::size_t offset = 0;
  for (int l = 0; l < n_layers; ++l) {
    const std::size_t count = shapes[l].param_count();
    const bool frozen =
        std::find(freeze_layers.begin(), freeze_layers.end(), l) != freeze_layers.end();
    if (!frozen) {
      groups.push_back({offset, offset + count, l == n_layers - 1 ? lr_head : lr_body});
    }
    offset += count;
  }
  return groups;
}

void adam_step(ModelParams& params, const std::vector<double>& grad, AdamState& state,
               const AdamConfig& cfg, const std::vector<LrGroup>& groups) {
  const std::size_t n = params.values.size();
  if (grad.size() != n || state.m.size() != n || state.v.size() != n) {
    throw ConfigError("adam: parameter/gradient/state size mismatch");
  }
  for (double g : grad) {
    if (!std::isfinite(g)) throw DivergenceError("adam: non-finite gradient");
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (const LrGroup& group : groups) {
    for (std::size_t i = group.begin; i < group.end; ++i) {
      const double g = grad[i];
      state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
      state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
      const double m_hat = state.m[i] / bc1;
      const double v_hat = state.v[i] / bc2;
      params.values[i] -= group.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
  }
}

double resolve_alpha(const MomentumSchedule& schedule) {
  if (schedule.mode == MomentumSchedule::Mode::fixed) {
    if (schedule.alpha < 0.0 || schedule.alpha > 1.0) {
      throw ConfigError("momentum: fixed alpha must be in [0, 1]");
    }
    return schedule.alpha;
  }
  if (schedule.total_steps < 1) {
    throw ConfigError("momentum: half_life mode needs total_steps >= 1");
  }
  return std::pow(0.5, 1.0 / static_cast<double>(schedule.total_steps));
}

ModelParams ema_update(const ModelParams& teacher, const ModelParams& student, double alpha) {
  if (!teacher.same_shape(student) || teacher.values.size() != student.values.size()) {
    throw ConfigError("ema: teacher/student shape mismatch");
  }
  if (alpha < 0.0 || alpha > 1.0) throw ConfigError("ema: alpha must be in [0, 1]");
  ModelParams out = teacher;
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    out.values[i] = alpha * teacher.values[i] + (1.0 - alpha) * student.values[i];
  }
  return out;
}

std::vector<TrainExample> make_examples(const Corpus& corpus, const std::vector<std::string>& ids) {
  std::vector<TrainExample> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    const Utterance* utt = corpus.find(id);
    if (!utt) throw DataError("trainer: unknown utterance id '" + id + "'");
    if (!utt->labeled()) throw DataError("trainer: utterance '" + id + "' has no annotations");
    TrainExample ex;
    ex.utt = utt;
    ex.target = strip_artificial_sil(*utt->perceived);
    if (ex.target.empty()) {
      throw DataError("trainer: utterance '" + id + "' has an empty target after sil stripping");
    }
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<const Utterance*> collect_utterances(const Corpus& corpus,
                                                 const std::vector<std::string>& ids) {
  std::vector<const Utterance*> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    const Utterance* utt = corpus.find(id);
    if (!utt) throw DataError("trainer: unknown utterance id '" + id + "'");
    out.push_back(utt);
  }
  return out;
}

std::vector<int> decode_utterance(const ModelParams& params, const FeatureSeq& features) {
  return ctc::greedy_decode(forward(params, features));
}

double evaluate_per(const ModelParams& params, const std::vector<TrainExample>& examples) {
  mdd::PerAccumulator acc;
  for (const auto& ex : examples) {
    acc.add(ex.target, decode_utterance(params, ex.utt->features));
  }
  return 100.0 * acc.ratio();
}

namespace {

// Student-side augmentation. The speed draw happens unconditionally so rng
// consumption does not depend on feasibility; a perturbation that would make
// the target unalignable falls back to the original length.
FeatureSeq augment_features(const FeatureSeq& features, int min_frames, const TrainConfig& cfg,
                            Rng& rng) {
  if (!cfg.augment) return features;
  FeatureSeq out = features;
  if (!cfg.speed_factors.empty()) {
    const auto pick = rng.uniform_int(0, static_cast<std::int64_t>(cfg.speed_factors.size()) - 1);
    const double factor = cfg.speed_factors[static_cast<std::size_t>(pick)];
    FeatureSeq warped = speed_perturb(out, factor);
    if (warped.rows() >= min_frames) out = std::move(warped);
  }
  const int time_width = static_cast<int>(std::floor(cfg.time_mask_frac * out.rows()));
  const int feat_width = static_cast<int>(std::floor(cfg.feat_mask_frac * out.cols()));
  return spec_mask(out, cfg.time_masks, time_width, cfg.feat_masks, feat_width, rng);
}

struct MixedItem {
  bool is_labeled = true;
  std::size_t idx = 0;
};

std::vector<MixedItem> epoch_order(std::size_t n_labeled, std::size_t n_unlabeled,
                                   const TrainConfig& cfg, Rng& rng) {
  std::vector<MixedItem> order;
  if (cfg.labeled_batch_fraction && n_unlabeled > 0 && n_labeled > 0) {
    // Fixed per-batch composition: round(B * fraction) labeled slots per
    // effective batch, pools cycled in shuffled order.
    const std::size_t batch = static_cast<std::size_t>(cfg.effective_batch());
    const std::size_t total = n_labeled + n_unlabeled;
    const auto n_lab_slots = static_cast<std::size_t>(
        std::llround(*cfg.labeled_batch_fraction * static_cast<double>(batch)));
    std::vector<std::size_t> lab_pool(n_labeled), unlab_pool(n_unlabeled);
    for (std::size_t i = 0; i < n_labeled; ++i) lab_pool[i] = i;
    for (std::size_t i = 0; i < n_unlabeled; ++i) unlab_pool[i] = i;
    rng.shuffle(lab_pool);
    rng.shuffle(unlab_pool);
    std::size_t lab_cursor = 0, unlab_cursor = 0;
    while (order.size() < total) {
      for (std::size_t slot = 0; slot < batch && order.size() < total; ++slot) {
        if (slot < n_lab_slots) {
          order.push_back({true, lab_pool[lab_cursor++ % n_labeled]});
        } else {
          order.push_back({false, unlab_pool[unlab_cursor++ % n_unlabeled]});
        }
      }
    }
    return order;
  }
  order.reserve(n_labeled + n_unlabeled);
  for (std::size_t i = 0; i < n_labeled; ++i) order.push_back({true, i});
  for (std::size_t i = 0; i < n_unlabeled; ++i) order.push_back({false, i});
  rng.shuffle(order);
  return order;
}

TrainResult run_training(const ModelParams& init, const std::vector<TrainExample>& labeled,
                         const std::vector<const Utterance*>& unlabeled,
                         const std::vector<TrainExample>& dev, const TrainConfig& cfg,
                         bool use_teacher, const EpochCallback& on_epoch) {
  cfg.validate();
  if (labeled.empty() && unlabeled.empty()) throw ConfigError("trainer: no training data");
  if (dev.empty()) throw ConfigError("trainer: dev set must be non-empty");

  ModelParams student = init;
  std::optional<ModelParams> teacher;
  double alpha = 0.0;

  const std::size_t total_items = labeled.size() + unlabeled.size();
  const auto batch = static_cast<std::size_t>(cfg.effective_batch());
  const auto steps_per_epoch =
      static_cast<std::int64_t>((total_items + batch - 1) / batch);

  if (use_teacher) {
    teacher = student;
    MomentumSchedule schedule = cfg.momentum;
    if (schedule.mode == MomentumSchedule::Mode::half_life && schedule.total_steps == 0) {
      schedule.total_steps = steps_per_epoch * cfg.epochs;
    }
    alpha = resolve_alpha(schedule);
  }

  AdamState state = AdamState::zeros(student.values.size());
  const auto groups = head_body_groups(student, cfg.lr_head, cfg.lr_body, cfg.freeze_layers);
  Rng rng(cfg.seed);

  TrainResult result;
  bool have_best = false;
  std::vector<double> grad_acc(student.values.size(), 0.0);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = epoch_order(labeled.size(), unlabeled.size(), cfg, rng);

    double loss_lab_sum = 0.0, loss_unlab_sum = 0.0;
    long n_lab = 0, n_unlab = 0, skipped = 0;
    int in_batch = 0;

    auto flush = [&]() {
      if (in_batch == 0) return;
      for (double& g : grad_acc) g /= static_cast<double>(in_batch);
      adam_step(student, grad_acc, state, cfg.adam, groups);
      if (teacher) *teacher = ema_update(*teacher, student, alpha);
      std::fill(grad_acc.begin(), grad_acc.end(), 0.0);
      in_batch = 0;
    };

    std::size_t processed = 0;
    for (const MixedItem& item : order) {
      ++processed;
      const Utterance* utt = nullptr;
      std::vector<int> target;
      if (item.is_labeled) {
        const TrainExample& ex = labeled[item.idx];
        utt = ex.utt;
        target = ex.target;
        if (ctc::min_path_length(target) > utt->features.rows()) {
          if (!cfg.skip_infeasible_labeled) {
            throw InfeasibleTarget("trainer: labeled utterance '" + utt->id +
                                   "' cannot align to its frame count");
          }
          if (processed % batch == 0) flush();
          continue;
        }
      } else {
        utt = unlabeled[item.idx];
        target = decode_utterance(*teacher, utt->features);
        if (target.empty()) {
          ++skipped;
          if (processed % batch == 0) flush();
          continue;
        }
      }

      const FeatureSeq feats =
          augment_features(utt->features, ctc::min_path_length(target), cfg, rng);
      double loss = 0.0;
      try {
        auto [l, grad] = loss_and_grad(student, feats, [&target](const LogProbSeq& lattice) {
          return ctc::ctc_lattice_grad(lattice, target);
        });
        loss = l;
        for (std::size_t i = 0; i < grad.size(); ++i) grad_acc[i] += grad[i];
      } catch (const InfeasibleTarget&) {
        if (item.is_labeled && !cfg.skip_infeasible_labeled) throw;
        ++skipped;
        if (processed % batch == 0) flush();
        continue;
      }
      ++in_batch;
      if (item.is_labeled) {
        loss_lab_sum += loss;
        ++n_lab;
      } else {
        loss_unlab_sum += loss;
        ++n_unlab;
      }
      if (processed % batch == 0) flush();
    }
    flush();

    if (n_lab + n_unlab == 0) {
      throw DataError("trainer: every utterance was skipped in epoch " + std::to_string(epoch));
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.loss_labeled = n_lab > 0 ? loss_lab_sum / static_cast<double>(n_lab) : 0.0;
    entry.loss_unlabeled = n_unlab > 0 ? loss_unlab_sum / static_cast<double>(n_unlab) : 0.0;
    entry.dev_per = evaluate_per(student, dev);
    entry.alpha = use_teacher ? alpha : 0.0;
    entry.skipped = skipped;
    result.log.push_back(entry);
    result.total_skipped += skipped;
    if (on_epoch) on_epoch(entry);

    if (!have_best || entry.dev_per < result.best.dev_per) {
      have_best = true;
      result.best.params = student;
      result.best.epoch = epoch;
      result.best.dev_per = entry.dev_per;
      result.best.fingerprint = student.config.fingerprint();
      result.best.rng_state = rng.serialize();
    }
  }
  result.final_params = std::move(student);
  result.final_teacher = std::move(teacher);
  return result;
}

}  // namespace

TrainResult finetune_labeled(const ModelParams& init, const std::vector<TrainExample>& labeled,
                             const std::vector<TrainExample>& dev, const TrainConfig& config,
                             const EpochCallback& on_epoch) {
  if (labeled.empty()) throw ConfigError("trainer: labeled set must be non-empty");
  return run_training(init, labeled, {}, dev, config, /*use_teacher=*/false, on_epoch);
}

TrainResult mpl_finetune(const ModelParams& base, const std::vector<TrainExample>& labeled,
                         const std::vector<const Utterance*>& unlabeled,
                         const std::vector<TrainExample>& dev, const TrainConfig& config,
                         const EpochCallback& on_epoch) {
  return run_training(base, labeled, unlabeled, dev, config, /*use_teacher=*/true, on_epoch);
}

OneshotResult oneshot_pl(const ModelParams& base, const std::vector<TrainExample>& labeled,
                         const std::vector<const Utterance*>& unlabeled,
                         const std::vector<TrainExample>& dev, OneshotMode mode,
                         const TrainConfig& config, const EpochCallback& on_epoch) {
  OneshotResult result;
  for (const Utterance* utt : unlabeled) {
    std::vector<int> target = decode_utterance(base, utt->features);
    if (target.empty()) {
      ++result.dropped;
      continue;
    }
    result.pseudo_labels.push_back({utt, std::move(target)});
  }

  std::vector<TrainExample> train_set = labeled;
  for (const PseudoLabel& pl : result.pseudo_labels) train_set.push_back({pl.utt, pl.target});

  ModelParams start;
  if (mode == OneshotMode::scratch) {
    ModelConfig fresh = base.config;
    fresh.seed = Rng(config.seed).next_u64();
    start = init_model(fresh);
  } else {
    start = base;
  }
  result.init_params = start;
  result.train = finetune_labeled(start, train_set, dev, config, on_epoch);
  return result;
}

namespace {

constexpr char kCheckpointMagic[8] = {'M', 'P', 'L', 'C', 'K', 'P', 'T', '1'};

void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 8);
}

void write_f64(std::ostream& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  write_u64(out, bits);
}

std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t read_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

double read_f64(std::istream& in) {
  const std::uint64_t bits = read_u64(in);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("checkpoint: cannot write " + path.string());
  const ModelConfig& cfg = ckpt.params.config;

  out.write(kCheckpointMagic, 8);
  write_u32(out, static_cast<std::uint32_t>(cfg.input_dim));
  write_u32(out, static_cast<std::uint32_t>(cfg.context_radius));
  write_u32(out, static_cast<std::uint32_t>(cfg.hidden.size()));
  for (int h : cfg.hidden) write_u32(out, static_cast<std::uint32_t>(h));
  write_u32(out, static_cast<std::uint32_t>(cfg.output_size));
  write_f64(out, cfg.init_scale);
  write_u64(out, cfg.seed);
  write_u64(out, ckpt.fingerprint);

  write_u64(out, static_cast<std::uint64_t>(ckpt.params.values.size()));
  for (double v : ckpt.params.values) write_f64(out, v);

  std::ostringstream meta;
  meta.precision(17);
  meta << "epoch=" << ckpt.epoch << "\ndev_per=" << ckpt.dev_per << "\nrng=" << ckpt.rng_state
       << "\n";
  const std::string text = meta.str();
  write_u32(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw DataError("checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint: cannot open " + path.string());

  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw DataError("checkpoint: bad magic in " + path.string());
  }

  Checkpoint ckpt;
  ModelConfig cfg;
  cfg.input_dim = static_cast<int>(read_u32(in));
  cfg.context_radius = static_cast<int>(read_u32(in));
  const std::uint32_t n_hidden = read_u32(in);
  if (n_hidden > 64) throw DataError("checkpoint: implausible hidden layer count");
  cfg.hidden.clear();
  for (std::uint32_t i = 0; i < n_hidden; ++i) cfg.hidden.push_back(static_cast<int>(read_u32(in)));
  cfg.output_size = static_cast<int>(read_u32(in));
  cfg.init_scale = read_f64(in);
  cfg.seed = read_u64(in);
  ckpt.fingerprint = read_u64(in);
  if (!in) throw DataError("checkpoint: truncated config block in " + path.string());
  cfg.validate();
  if (ckpt.fingerprint != cfg.fingerprint()) {
    throw DataError("checkpoint: fingerprint does not match stored config in " + path.string());
  }

  const std::uint64_t n_params = read_u64(in);
  if (n_params != total_param_count(cfg)) {
    throw DataError("checkpoint: parameter count mismatch in " + path.string());
  }
  ckpt.params.config = cfg;
  ckpt.params.values.resize(n_params);
  for (std::uint64_t i = 0; i < n_params; ++i) {
    ckpt.params.values[i] = read_f64(in);
    if (!std::isfinite(ckpt.params.values[i])) {
      throw DataError("checkpoint: non-finite parameter in " + path.string());
    }
  }

  const std::uint32_t meta_len = read_u32(in);
  std::string meta(meta_len, '\0');
  in.read(meta.data(), meta_len);
  if (!in) throw DataError("checkpoint: truncated metadata in " + path.string());
  std::istringstream ms(meta);
  std::string line;
  while (std::getline(ms, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "epoch") ckpt.epoch = std::stoi(value);
    else if (key == "dev_per") ckpt.dev_per = std::stod(value);
    else if (key == "rng") ckpt.rng_state = value;
  }
  return ckpt;
}

}  // namespace mpl
