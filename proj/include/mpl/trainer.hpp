#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mpl/corpus.hpp"
#include "mpl/errors.hpp"
#include "mpl/model.hpp"

namespace mpl {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t t = 0;

  static AdamState zeros(std::size_t n) { return {std::vector<double>(n, 0.0), std::vector<double>(n, 0.0), 0}; }
};

// Contiguous flat-parameter range sharing one learning rate.
struct LrGroup {
  std::size_t begin = 0;
  std::size_t end = 0;
  double lr = 0.0;
};

// Output layer forms the head group (lr_head), hidden layers the body group
// (lr_body). Layers listed in freeze_layers are excluded entirely.
std::vector<LrGroup> head_body_groups(const ModelParams& params, double lr_head, double lr_body,
                                      const std::vector<int>& freeze_layers = {});

// Bias-corrected Adam update, applied per group with that group's learning
// rate; the step counter advances once per call.
void adam_step(ModelParams& params, const std::vector<double>& grad, AdamState& state,
               const AdamConfig& cfg, const std::vector<LrGroup>& groups);

struct MomentumSchedule {
  enum class Mode { fixed, half_life };
  Mode mode = Mode::fixed;
  double alpha = 0.999;             // fixed mode
  std::int64_t total_steps = 0;     // half_life mode; 0 lets the trainer fill it in

  static MomentumSchedule fixed(double alpha) { return {Mode::fixed, alpha, 0}; }
  static MomentumSchedule half_life(std::int64_t steps = 0) { return {Mode::half_life, 0.0, steps}; }
};

// fixed -> the configured alpha; half_life -> 0.5^(1/N), so the initial
// teacher's weight decays to one half over the planned run.
double resolve_alpha(const MomentumSchedule& schedule);

// teacher' = alpha * teacher + (1 - alpha) * student, element-wise.
ModelParams ema_update(const ModelParams& teacher, const ModelParams& student, double alpha);

struct TrainConfig {
  int epochs = 50;
  int micro_batch = 1;
  int accum_steps = 32;  // effective batch = micro_batch * accum_steps
  double lr_head = 3e-4;
  double lr_body = 1e-5;
  AdamConfig adam;
  MomentumSchedule momentum = MomentumSchedule::fixed(0.999);

  bool augment = true;
  std::vector<double> speed_factors = {0.9, 1.0, 1.1};
  int time_masks = 2;
  double time_mask_frac = 0.10;
  int feat_masks = 1;
  double feat_mask_frac = 0.20;

  std::uint64_t seed = 0;
  bool skip_infeasible_labeled = false;   // default: infeasible labeled target is an error
  std::optional<double> labeled_batch_fraction;  // mixing override; default proportional
  std::vector<int> freeze_layers;         // excluded from updates; empty by default

  int effective_batch() const { return micro_batch * accum_steps; }
  void validate() const;
};

// One labeled training/dev item: target is the perceived sequence with
// artificial sil tokens removed.
struct TrainExample {
  const Utterance* utt = nullptr;
  std::vector<int> target;
};

std::vector<TrainExample> make_examples(const Corpus& corpus, const std::vector<std::string>& ids);
std::vector<const Utterance*> collect_utterances(const Corpus& corpus,
                                                 const std::vector<std::string>& ids);

struct EpochLog {
  int epoch = 0;                 // 1-based
  double loss_labeled = 0.0;     // mean per contributing labeled utterance
  double loss_unlabeled = 0.0;   // mean per contributing pseudo-labeled utterance
  double dev_per = 0.0;          // percent
  double alpha = 0.0;            // 0 when no teacher is in play
  long skipped = 0;              // pseudo labels skipped (empty or infeasible)
};

struct Checkpoint {
  ModelParams params;
  int epoch = 0;
  double dev_per = 0.0;          // percent
  std::uint64_t fingerprint = 0;
  std::string rng_state;
};

struct TrainResult {
  Checkpoint best;
  std::vector<EpochLog> log;
  long total_skipped = 0;
  ModelParams final_params;                  // student after the last epoch
  std::optional<ModelParams> final_teacher;  // present for momentum runs
};

using EpochCallback = std::function<void(const EpochLog&)>;

// Labeled-only fine-tuning. Per epoch: seeded shuffle, augmentation, gradient
// accumulation to the effective batch size, Adam step; the returned checkpoint
// minimizes dev PER (earliest epoch wins ties).
TrainResult finetune_labeled(const ModelParams& init, const std::vector<TrainExample>& labeled,
                             const std::vector<TrainExample>& dev, const TrainConfig& config,
                             const EpochCallback& on_epoch = nullptr);

// Momentum pseudo-labeling. Student and teacher start from `base`; pseudo
// labels come from greedy-decoding the teacher on clean features while the
// student trains on augmented ones; after every optimizer step the teacher
// moves by the momentum factor toward the student. Empty unlabeled input
// degenerates to finetune_labeled continued from `base`.
TrainResult mpl_finetune(const ModelParams& base, const std::vector<TrainExample>& labeled,
                         const std::vector<const Utterance*>& unlabeled,
                         const std::vector<TrainExample>& dev, const TrainConfig& config,
                         const EpochCallback& on_epoch = nullptr);

enum class OneshotMode { scratch, continual };

struct PseudoLabel {
  const Utterance* utt = nullptr;
  std::vector<int> target;
};

struct OneshotResult {
  TrainResult train;
  std::vector<PseudoLabel> pseudo_labels;  // the frozen labels actually used
  long dropped = 0;                        // unlabeled utterances with empty decodes
  ModelParams init_params;                 // fresh for scratch, base for continual
};

// Pseudo labels are generated once with `base` and then frozen; training uses
// finetune_labeled mechanics on the union of labeled and pseudo-labeled data.
OneshotResult oneshot_pl(const ModelParams& base, const std::vector<TrainExample>& labeled,
                         const std::vector<const Utterance*>& unlabeled,
                         const std::vector<TrainExample>& dev, OneshotMode mode,
                         const TrainConfig& config, const EpochCallback& on_epoch = nullptr);

// Greedy CTC decode of clean features.
std::vector<int> decode_utterance(const ModelParams& params, const FeatureSeq& features);

// Micro-averaged PER (percent) of greedy decodes against example targets.
double evaluate_per(const ModelParams& params, const std::vector<TrainExample>& examples);

// Checkpoint file: magic, config block, flat little-endian float64 parameters,
// then a text metadata block (epoch, dev PER, fingerprint, rng state).
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mpl
