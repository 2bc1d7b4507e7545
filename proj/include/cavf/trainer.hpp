#pragma once

// SGD training of one fusion model per target, plus evaluation and the
// unimodal least-squares baselines used in the ablation.
//
// Splits are built from sequences sorted by id: the first 60% train, the
// next 20% validation, the rest test. Evaluation concatenates predictions
// in that order, subsequences in temporal order, into a single trace.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cavf/fusion.hpp"
#include "cavf/postproc.hpp"
#include "cavf/synth.hpp"

namespace cavf {

enum class Target { valence, arousal };

std::string_view to_string(Target t);
std::optional<Target> parse_target(std::string_view name);
const Vector& labels(const LabeledSequence& s, Target t);

struct TrainConfig {
  double learning_rate = 1e-3;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t batch_size = 16;
  std::size_t max_epochs = 100;
  std::size_t patience = 20;
  double dropout_p = 0.5;
  std::uint64_t seed = 1;
  Target target = Target::valence;
  Variant variant = Variant::cross_attention;
  std::size_t hidden = 64;
  double temperature = 1.0;

  void validate() const;
};

struct Splits {
  Dataset train;
  Dataset val;
  Dataset test;
};

Splits split_dataset(const Dataset& d, double train_fraction = 0.6, double val_fraction = 0.2);
const Dataset& split_by_name(const Splits& s, std::string_view name);

// v <- momentum v - lr (g + wd p); p <- p + v. Decay applies to weight
// matrices (attention and both fc weights), never to biases.
void sgd_step(FusionParams& p, const GradientBundle& g, FusionParams& velocity, const TrainConfig& cfg);
FusionParams zero_velocity(const FusionParams& p);

struct BatchGradient {
  double loss = 0.0;
  GradientBundle grads;
};

// 1 - CCC over the concatenated predictions of all sequences in `batch`.
// Sequences run in parallel; gradients are summed in batch order.
// `masks` is empty (no dropout) or holds one mask per sequence.
BatchGradient batch_gradient(const FusionParams& p, const std::vector<const LabeledSequence*>& batch,
                             Target target, const std::vector<Matrix>& masks);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_ccc = 0.0;
  std::size_t skipped_batches = 0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_ccc = 0.0;
  bool early_stopped = false;
  std::vector<std::string> warnings;
  double wall_time_s = 0.0;  // not persisted

  // One JSON object per epoch, then a summary object; newline terminated.
  std::string to_json_lines() const;
};

struct TrainResult {
  FusionParams params;  // best validation epoch
  TrainReport report;
};

TrainResult train(const Dataset& train_split, const Dataset& val_split, const TrainConfig& cfg);

struct Evaluation {
  double ccc = 0.0;
  PredictionTrace predictions;
  PredictionTrace targets;
  std::vector<std::string> order;  // sequence ids in trace order
};

Vector predict(const FusionParams& p, const LabeledSequence& s);
// The post-processing config, when given, is replayed frozen.
Evaluation evaluate(const FusionParams& p, const Dataset& split, Target target,
                    const std::optional<PostprocConfig>& postproc = std::nullopt);

// Ordinary least squares from one modality's per-subsequence features
// (plus an intercept) to the target.
struct LinearBaseline {
  Modality modality = Modality::visual;
  Vector coef;  // K weights then the intercept

  double predict(const Matrix& features, std::size_t column) const;
};

LinearBaseline fit_linear_baseline(const Dataset& train_split, Modality m, Target target);
Evaluation evaluate(const LinearBaseline& b, const Dataset& split, Target target);

namespace serial {
BatchGradient batch_gradient(const FusionParams& p, const std::vector<const LabeledSequence*>& batch,
                             Target target, const std::vector<Matrix>& masks);
}  // namespace serial

}  // namespace cavf
