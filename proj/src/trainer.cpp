#include "cavf/trainer.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <json.hpp>
#include <numeric>

#include "cavf/errors.hpp"
#include "cavf/metrics.hpp"

namespace cavf {

namespace {

// One subsequence spans 16 frames of 40 ms.
constexpr double kSubsequencePeriod = 0.64;

void check_inputs(const FusionParams& p, const LabeledSequence& s) {
  if (s.xa.dim() != p.feature_dim() || s.xv.dim() != p.feature_dim())
    throw ShapeError("sequence " + s.id() + " has K=" + std::to_string(s.xa.dim()) + " but the model expects " +
                     std::to_string(p.feature_dim()));
  if (s.xa.length() != s.xv.length())
    throw ShapeError("sequence " + s.id() + " has mismatched audio/visual lengths");
}

// Runs body(i) for i in [0, n) across threads and rethrows the first
// failure (lowest index) on the calling thread.
template <class Body>
void parallel_for(std::size_t n, Body body) {
  std::vector<std::exception_ptr> errors(n);
  const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    try {
      body(static_cast<std::size_t>(i));
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

template <class Loop>
BatchGradient batch_gradient_impl(const FusionParams& p, const std::vector<const LabeledSequence*>& batch,
                                  Target target, const std::vector<Matrix>& masks, Loop loop) {
  if (batch.empty()) throw DegenerateError("batch_gradient: empty batch");
  if (!masks.empty() && masks.size() != batch.size())
    throw ShapeError("batch_gradient: " + std::to_string(masks.size()) + " masks for " +
                     std::to_string(batch.size()) + " sequences");
  validate(p);
  for (const auto* s : batch) check_inputs(p, *s);

  const auto mask = [&](std::size_t i) -> std::optional<Matrix> {
    if (masks.empty()) return std::nullopt;
    return masks[i];
  };

  std::vector<FusionOutput> fwd(batch.size());
  loop(batch.size(), [&](std::size_t i) { fwd[i] = fusion_forward(batch[i]->xa, batch[i]->xv, p, mask(i)); });

  Vector pred, tgt;
  std::vector<std::size_t> offsets{0};
  for (std::size_t i = 0; i < batch.size(); ++i) {
    pred.insert(pred.end(), fwd[i].predictions.begin(), fwd[i].predictions.end());
    const Vector& y = labels(*batch[i], target);
    tgt.insert(tgt.end(), y.begin(), y.end());
    offsets.push_back(pred.size());
  }
  BatchGradient out;
  out.loss = ccc_loss(pred, tgt);
  const Vector d_pred = ccc_loss_grad(pred, tgt);

  std::vector<GradientBundle> parts(batch.size());
  loop(batch.size(), [&](std::size_t i) {
    const Vector slice(d_pred.begin() + static_cast<std::ptrdiff_t>(offsets[i]),
                       d_pred.begin() + static_cast<std::ptrdiff_t>(offsets[i + 1]));
    parts[i] = backward_from_predictions(batch[i]->xa, batch[i]->xv, p, fwd[i], slice, mask(i));
  });
  out.grads = GradientBundle::zeros_like(p);
  for (const auto& g : parts) out.grads.accumulate(g);
  return out;
}

void serial_loop(std::size_t n, const auto& body) {
  for (std::size_t i = 0; i < n; ++i) body(i);
}

void momentum_update(Matrix& p, const Matrix& g, Matrix& v, const TrainConfig& cfg, double decay) {
  if (p.rows() != g.rows() || p.cols() != g.cols() || p.rows() != v.rows() || p.cols() != v.cols())
    throw ShapeError("sgd_step: parameter " + p.shape_string() + ", gradient " + g.shape_string() +
                     ", velocity " + v.shape_string());
  auto pd = p.data();
  auto gd = g.data();
  auto vd = v.data();
  for (std::size_t i = 0; i < pd.size(); ++i) {
    vd[i] = cfg.momentum * vd[i] - cfg.learning_rate * (gd[i] + decay * pd[i]);
    pd[i] += vd[i];
  }
}

bool constant(const Vector& v) {
  return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
}

std::vector<std::size_t> id_order(const Dataset& d) {
  std::vector<std::size_t> idx(d.sequences.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return d.sequences[a].id() < d.sequences[b].id(); });
  return idx;
}

}  // namespace

std::string_view to_string(Target t) { return t == Target::valence ? "valence" : "arousal"; }

std::optional<Target> parse_target(std::string_view name) {
  if (name == "valence") return Target::valence;
  if (name == "arousal") return Target::arousal;
  return std::nullopt;
}

const Vector& labels(const LabeledSequence& s, Target t) { return t == Target::valence ? s.valence : s.arousal; }

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (max_epochs == 0) throw ConfigError("max_epochs must be >= 1");
  if (patience == 0) throw ConfigError("patience must be >= 1");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("dropout_p must lie in [0, 1)");
  if (hidden == 0) throw ConfigError("hidden must be >= 1");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
}

Splits split_dataset(const Dataset& d, double train_fraction, double val_fraction) {
  if (!(train_fraction > 0.0 && val_fraction > 0.0 && train_fraction + val_fraction < 1.0))
    throw ConfigError("split fractions must be positive and sum to less than 1");
  const auto order = id_order(d);
  const std::size_t n = order.size();
  const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(n) * train_fraction));
  const auto n_val = static_cast<std::size_t>(std::floor(static_cast<double>(n) * val_fraction));
  if (n_train == 0 || n_val == 0 || n_train + n_val >= n)
    throw DegenerateError("dataset of " + std::to_string(n) + " sequences is too small to split");
  Splits s;
  for (std::size_t i = 0; i < n; ++i) {
    Dataset& dst = i < n_train ? s.train : i < n_train + n_val ? s.val : s.test;
    dst.sequences.push_back(d.sequences[order[i]]);
  }
  return s;
}

const Dataset& split_by_name(const Splits& s, std::string_view name) {
  if (name == "train") return s.train;
  if (name == "val") return s.val;
  if (name == "test") return s.test;
  throw ConfigError("unknown split '" + std::string(name) + "' (expected train, val or test)");
}

FusionParams zero_velocity(const FusionParams& p) {
  FusionParams v = p;
  for (Matrix& w : v.w) w = Matrix(w.rows(), w.cols());
  v.fc1_w = Matrix(p.fc1_w.rows(), p.fc1_w.cols());
  v.fc1_b.assign(p.fc1_b.size(), 0.0);
  v.fc2_w = Matrix(p.fc2_w.rows(), p.fc2_w.cols());
  v.fc2_b = 0.0;
  return v;
}

void sgd_step(FusionParams& p, const GradientBundle& g, FusionParams& velocity, const TrainConfig& cfg) {
  if (g.d_w.size() != p.w.size() || velocity.w.size() != p.w.size())
    throw ShapeError("sgd_step: attention matrix counts differ");
  if (g.d_fc1_b.size() != p.fc1_b.size() || velocity.fc1_b.size() != p.fc1_b.size())
    throw ShapeError("sgd_step: fc1 bias lengths differ");
  for (std::size_t i = 0; i < p.w.size(); ++i) momentum_update(p.w[i], g.d_w[i], velocity.w[i], cfg, cfg.weight_decay);
  momentum_update(p.fc1_w, g.d_fc1_w, velocity.fc1_w, cfg, cfg.weight_decay);
  momentum_update(p.fc2_w, g.d_fc2_w, velocity.fc2_w, cfg, cfg.weight_decay);
  for (std::size_t i = 0; i < p.fc1_b.size(); ++i) {
    velocity.fc1_b[i] = cfg.momentum * velocity.fc1_b[i] - cfg.learning_rate * g.d_fc1_b[i];
    p.fc1_b[i] += velocity.fc1_b[i];
  }
  velocity.fc2_b = cfg.momentum * velocity.fc2_b - cfg.learning_rate * g.d_fc2_b;
  p.fc2_b += velocity.fc2_b;
}

BatchGradient batch_gradient(const FusionParams& p, const std::vector<const LabeledSequence*>& batch,
                             Target target, const std::vector<Matrix>& masks) {
  return batch_gradient_impl(p, batch, target, masks,
                             [](std::size_t n, const auto& body) { parallel_for(n, body); });
}

namespace serial {
BatchGradient batch_gradient(const FusionParams& p, const std::vector<const LabeledSequence*>& batch,
                             Target target, const std::vector<Matrix>& masks) {
  return batch_gradient_impl(p, batch, target, masks,
                             [](std::size_t n, const auto& body) { serial_loop(n, body); });
}
}  // namespace serial

std::string TrainReport::to_json_lines() const {
  std::string out;
  for (const auto& e : epochs) {
    nlohmann::ordered_json j;
    j["record"] = "epoch";
    j["epoch"] = e.epoch;
    j["train_loss"] = e.train_loss;
    j["val_ccc"] = e.val_ccc;
    j["skipped_batches"] = e.skipped_batches;
    out += j.dump() + '\n';
  }
  nlohmann::ordered_json s;
  s["record"] = "summary";
  s["epochs_run"] = epochs.size();
  s["best_epoch"] = best_epoch;
  s["best_val_ccc"] = best_val_ccc;
  s["early_stopped"] = early_stopped;
  s["warnings"] = warnings;
  out += s.dump() + '\n';
  return out;
}

TrainResult train(const Dataset& train_split, const Dataset& val_split, const TrainConfig& cfg) {
  cfg.validate();
  if (train_split.sequences.empty() || val_split.sequences.empty())
    throw DegenerateError("training needs non-empty train and validation splits");
  train_split.validate();
  val_split.validate();
  if (val_split.feature_dim() != train_split.feature_dim())
    throw ShapeError("train and validation splits disagree on K");

  const auto start = std::chrono::steady_clock::now();
  Rng init_rng(Rng::mix(cfg.seed, 1));
  Rng run_rng(Rng::mix(cfg.seed, 2));
  FusionParams params = init_params(cfg.variant, train_split.feature_dim(), cfg.hidden, cfg.temperature, init_rng);
  FusionParams velocity = zero_velocity(params);

  TrainResult result{params, {}};
  TrainReport& report = result.report;
  std::vector<std::size_t> order(train_split.sequences.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t k2 = 2 * train_split.feature_dim();
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    run_rng.shuffle(order);
    EpochRecord rec{epoch, 0.0, 0.0, 0};
    std::size_t used = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      std::vector<const LabeledSequence*> batch;
      Vector batch_targets;
      for (std::size_t i = b; i < std::min(order.size(), b + cfg.batch_size); ++i) {
        batch.push_back(&train_split.sequences[order[i]]);
        const Vector& y = labels(*batch.back(), cfg.target);
        batch_targets.insert(batch_targets.end(), y.begin(), y.end());
      }
      std::vector<Matrix> masks;
      if (cfg.dropout_p > 0.0)
        for (const auto* s : batch) masks.push_back(dropout_mask(k2, s->xa.length(), cfg.dropout_p, run_rng));
      const std::string where = "epoch " + std::to_string(epoch) + " batch " + std::to_string(b / cfg.batch_size + 1);
      if (batch_targets.size() < 2 || constant(batch_targets)) {
        report.warnings.push_back(where + ": constant targets, batch skipped");
        ++rec.skipped_batches;
        continue;
      }
      BatchGradient bg;
      try {
        bg = batch_gradient(params, batch, cfg.target, masks);
      } catch (const DegenerateError& e) {
        report.warnings.push_back(where + ": " + e.what() + ", batch skipped");
        ++rec.skipped_batches;
        continue;
      }
      sgd_step(params, bg.grads, velocity, cfg);
      rec.train_loss += bg.loss;
      ++used;
    }
    if (used == 0) throw DegenerateError("every training batch in epoch " + std::to_string(epoch) + " is degenerate");
    rec.train_loss /= static_cast<double>(used);
    if (!std::isfinite(rec.train_loss))
      throw DomainError("training diverged at epoch " + std::to_string(epoch) + " (non-finite loss)");

    rec.val_ccc = evaluate(params, val_split, cfg.target).ccc;
    report.epochs.push_back(rec);
    if (epoch == 1 || rec.val_ccc > report.best_val_ccc) {
      report.best_val_ccc = rec.val_ccc;
      report.best_epoch = epoch;
      result.params = params;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      report.early_stopped = epoch < cfg.max_epochs;
      break;
    }
  }
  report.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

Vector predict(const FusionParams& p, const LabeledSequence& s) {
  check_inputs(p, s);
  return fusion_forward(s.xa, s.xv, p).predictions;
}

namespace {

template <class Predict>
Evaluation evaluate_impl(const Dataset& split, Target target, Predict predict_one) {
  if (split.sequences.empty()) throw DegenerateError("cannot evaluate an empty split");
  const auto order = id_order(split);
  std::vector<Vector> preds(order.size());
  parallel_for(order.size(), [&](std::size_t i) { preds[i] = predict_one(split.sequences[order[i]]); });
  Evaluation ev;
  ev.predictions.frame_period = ev.targets.frame_period = kSubsequencePeriod;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const LabeledSequence& s = split.sequences[order[i]];
    ev.order.push_back(s.id());
    ev.predictions.values.insert(ev.predictions.values.end(), preds[i].begin(), preds[i].end());
    const Vector& y = labels(s, target);
    ev.targets.values.insert(ev.targets.values.end(), y.begin(), y.end());
  }
  return ev;
}

}  // namespace

Evaluation evaluate(const FusionParams& p, const Dataset& split, Target target,
                    const std::optional<PostprocConfig>& postproc) {
  validate(p);
  Evaluation ev = evaluate_impl(split, target, [&](const LabeledSequence& s) { return predict(p, s); });
  ev.ccc = postproc ? frozen_ccc(*postproc, ev.predictions, ev.targets)
                    : ccc(ev.predictions.values, ev.targets.values).ccc;
  return ev;
}

double LinearBaseline::predict(const Matrix& features, std::size_t column) const {
  if (coef.size() != features.rows() + 1)
    throw ShapeError("linear baseline expects K=" + std::to_string(coef.size() - 1) + ", got " +
                     std::to_string(features.rows()));
  double acc = coef.back();
  for (std::size_t i = 0; i < features.rows(); ++i) acc += coef[i] * features(i, column);
  return acc;
}

LinearBaseline fit_linear_baseline(const Dataset& train_split, Modality m, Target target) {
  train_split.validate();
  const std::size_t k = train_split.feature_dim();
  const std::size_t l = train_split.subseq();
  const auto rows = static_cast<Eigen::Index>(train_split.sequences.size() * l);
  Eigen::MatrixXd a(rows, static_cast<Eigen::Index>(k + 1));
  Eigen::VectorXd b(rows);
  Eigen::Index r = 0;
  for (const auto& s : train_split.sequences) {
    const Matrix& x = m == Modality::audio ? s.xa.features : s.xv.features;
    const Vector& y = labels(s, target);
    for (std::size_t j = 0; j < l; ++j, ++r) {
      for (std::size_t i = 0; i < k; ++i) a(r, static_cast<Eigen::Index>(i)) = x(i, j);
      a(r, static_cast<Eigen::Index>(k)) = 1.0;
      b(r) = y[j];
    }
  }
  const Eigen::VectorXd coef = a.colPivHouseholderQr().solve(b);
  return {m, Vector(coef.data(), coef.data() + coef.size())};
}

Evaluation evaluate(const LinearBaseline& b, const Dataset& split, Target target) {
  Evaluation ev = evaluate_impl(split, target, [&](const LabeledSequence& s) {
    const Matrix& x = b.modality == Modality::audio ? s.xa.features : s.xv.features;
    Vector out(x.cols());
    for (std::size_t j = 0; j < x.cols(); ++j) out[j] = b.predict(x, j);
    return out;
  });
  ev.ccc = ccc(ev.predictions.values, ev.targets.values).ccc;
  return ev;
}

}  // namespace cavf
