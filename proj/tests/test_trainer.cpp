#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "cavf/errors.hpp"
#include "cavf/metrics.hpp"
#include "cavf/trainer.hpp"
#include "oracles.hpp"

using namespace cavf;

namespace {

SyntheticSpec small_spec(std::uint64_t seed = 3) {
  SyntheticSpec s;
  s.n_sequences = 40;
  s.feature_dim = 6;
  s.subseq_per_sequence = 6;
  s.seed = seed;
  return s;
}

TrainConfig small_config() {
  TrainConfig c;
  c.hidden = 8;
  c.max_epochs = 6;
  c.batch_size = 4;
  return c;
}

FusionParams tiny_params() {
  Rng rng(11);
  return init_params(Variant::cross_attention, 2, 3, 1.0, rng);
}

GradientBundle constant_grad(const FusionParams& p, double value) {
  GradientBundle g = GradientBundle::zeros_like(p);
  for (Matrix& m : g.d_w)
    for (double& v : m.data()) v = value;
  for (double& v : g.d_fc1_w.data()) v = value;
  for (double& v : g.d_fc1_b) v = value;
  for (double& v : g.d_fc2_w.data()) v = value;
  g.d_fc2_b = value;
  return g;
}

std::vector<const LabeledSequence*> pointers(const Dataset& d, std::size_t n) {
  std::vector<const LabeledSequence*> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(&d.sequences[i]);
  return out;
}

}  // namespace

TEST_CASE("sgd_step with no momentum or decay is plain gradient descent") {
  FusionParams p = tiny_params();
  const FusionParams before = p;
  FusionParams v = zero_velocity(p);
  TrainConfig cfg;
  cfg.momentum = 0.0;
  cfg.weight_decay = 0.0;
  cfg.learning_rate = 0.1;
  sgd_step(p, constant_grad(p, 2.0), v, cfg);
  CHECK(p.w[0](1, 0) == before.w[0](1, 0) - 0.1 * 2.0);
  CHECK(p.fc1_w(2, 3) == before.fc1_w(2, 3) - 0.1 * 2.0);
  CHECK(p.fc1_b[1] == before.fc1_b[1] - 0.1 * 2.0);
  CHECK(p.fc2_b == before.fc2_b - 0.1 * 2.0);
}

TEST_CASE("zero gradient shrinks weights by decay and leaves biases alone") {
  FusionParams p = tiny_params();
  p.fc1_b = {0.5, -0.25, 1.0};
  p.fc2_b = 0.75;
  const FusionParams before = p;
  FusionParams v = zero_velocity(p);
  TrainConfig cfg;
  sgd_step(p, GradientBundle::zeros_like(p), v, cfg);
  const double shrink = 1.0 - cfg.learning_rate * cfg.weight_decay;
  for (std::size_t i = 0; i < p.fc1_w.size(); ++i)
    CHECK(p.fc1_w.data()[i] == doctest::Approx(before.fc1_w.data()[i] * shrink).epsilon(1e-15));
  for (std::size_t i = 0; i < p.w[0].size(); ++i)
    CHECK(p.w[0].data()[i] == doctest::Approx(before.w[0].data()[i] * shrink).epsilon(1e-15));
  CHECK(p.fc2_w(0, 1) == doctest::Approx(before.fc2_w(0, 1) * shrink).epsilon(1e-15));
  CHECK(p.fc1_b == before.fc1_b);
  CHECK(p.fc2_b == before.fc2_b);
}

TEST_CASE("two momentum steps with a constant gradient move by lr g (1 + 1.9)") {
  FusionParams p = tiny_params();
  const FusionParams before = p;
  FusionParams v = zero_velocity(p);
  TrainConfig cfg;
  cfg.weight_decay = 0.0;
  cfg.learning_rate = 0.01;
  const GradientBundle g = constant_grad(p, 3.0);
  sgd_step(p, g, v, cfg);
  sgd_step(p, g, v, cfg);
  const double expected = -0.01 * 3.0 * (1.0 + 1.9);
  CHECK(p.fc1_w(0, 0) - before.fc1_w(0, 0) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(p.fc1_b[2] - before.fc1_b[2] == doctest::Approx(expected).epsilon(1e-12));
  CHECK(p.w[0](1, 1) - before.w[0](1, 1) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("sgd_step rejects mismatched shapes") {
  FusionParams p = tiny_params();
  FusionParams v = zero_velocity(p);
  GradientBundle g = GradientBundle::zeros_like(p);
  g.d_fc1_w = Matrix(2, 2);
  CHECK_THROWS_AS(sgd_step(p, g, v, TrainConfig{}), ShapeError);
  g = GradientBundle::zeros_like(p);
  g.d_w.clear();
  CHECK_THROWS_AS(sgd_step(p, g, v, TrainConfig{}), ShapeError);
}

TEST_CASE("config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.patience = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.learning_rate = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.dropout_p = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(parse_target("arousal") == Target::arousal);
  CHECK_FALSE(parse_target("dominance"));
}

TEST_CASE("split_dataset is a sorted 60/20/20 partition") {
  SyntheticSpec spec;
  spec.n_sequences = 200;
  spec.feature_dim = 2;
  Dataset d = generate(spec);
  std::reverse(d.sequences.begin(), d.sequences.end());
  const Splits s = split_dataset(d);
  CHECK(s.train.sequences.size() == 120);
  CHECK(s.val.sequences.size() == 40);
  CHECK(s.test.sequences.size() == 40);
  CHECK(s.train.sequences.front().id() == "seq00000");
  CHECK(s.val.sequences.front().id() == "seq00120");
  CHECK(s.test.sequences.back().id() == "seq00199");
  CHECK(&split_by_name(s, "val") == &s.val);
  CHECK_THROWS_AS((void)split_by_name(s, "dev"), ConfigError);
  Dataset tiny;
  tiny.sequences.assign(d.sequences.begin(), d.sequences.begin() + 2);
  CHECK_THROWS_AS((void)split_dataset(tiny), DegenerateError);
}

TEST_CASE("batch gradient: parallel matches serial and finite differences") {
  const Dataset d = generate(small_spec());
  for (Variant variant : {Variant::cross_attention, Variant::concat, Variant::self_attention, Variant::two_stage}) {
    Rng rng(5);
    FusionParams p = init_params(variant, 6, 5, 1.0, rng);
    const auto batch = pointers(d, 5);
    std::vector<Matrix> masks;
    for (std::size_t i = 0; i < batch.size(); ++i) masks.push_back(dropout_mask(12, 6, 0.3, rng));

    const BatchGradient par = batch_gradient(p, batch, Target::arousal, masks);
    const BatchGradient ser = serial::batch_gradient(p, batch, Target::arousal, masks);
    CHECK(par.loss == ser.loss);
    CHECK(par.grads.d_fc1_w == ser.grads.d_fc1_w);
    for (std::size_t i = 0; i < p.w.size(); ++i) CHECK(par.grads.d_w[i] == ser.grads.d_w[i]);

    // The batch loss is one CCC over all predictions, so the gradient is not
    // a sum of per-sequence losses; check it against the whole batch.
    const auto loss = [&] { return serial::batch_gradient(p, batch, Target::arousal, masks).loss; };
    double worst = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < p.fc1_w.size(); i += 7) {
      const double num = oracle::central_difference(loss, p.fc1_w.data()[i], 1e-6);
      worst = std::max(worst, std::abs(num - par.grads.d_fc1_w.data()[i]));
      scale = std::max(scale, std::abs(num));
    }
    if (!p.w.empty())
      for (std::size_t i = 0; i < p.w.back().size(); i += 5) {
        const double num = oracle::central_difference(loss, p.w.back().data()[i], 1e-6);
        worst = std::max(worst, std::abs(num - par.grads.d_w.back().data()[i]));
        scale = std::max(scale, std::abs(num));
      }
    CHECK(worst <= 1e-6 * std::max(scale, 1e-3));
  }
}

TEST_CASE("training is deterministic") {
  const Splits s = split_dataset(generate(small_spec()));
  const TrainConfig cfg = small_config();
  const TrainResult a = train(s.train, s.val, cfg);
  const TrainResult b = train(s.train, s.val, cfg);
  CHECK(a.report.to_json_lines() == b.report.to_json_lines());
  CHECK(a.params.fc1_w == b.params.fc1_w);
  CHECK(a.params.w[0] == b.params.w[0]);

  TrainConfig other = cfg;
  other.seed = 99;
  CHECK(train(s.train, s.val, other).report.to_json_lines() != a.report.to_json_lines());
}

TEST_CASE("early stopping keeps the best validation epoch") {
  const Splits s = split_dataset(generate(small_spec()));
  TrainConfig cfg = small_config();
  cfg.max_epochs = 30;
  cfg.patience = 4;
  cfg.learning_rate = 0.02;
  const TrainResult r = train(s.train, s.val, cfg);
  double best = -2.0;
  for (const auto& e : r.report.epochs) best = std::max(best, e.val_ccc);
  CHECK(r.report.best_val_ccc == best);
  CHECK(r.report.epochs[r.report.best_epoch - 1].val_ccc == best);
  CHECK(evaluate(r.params, s.val, cfg.target).ccc == best);
  if (r.report.early_stopped) CHECK(r.report.epochs.size() == r.report.best_epoch + cfg.patience);
}

TEST_CASE("patience 1 with a validation score that never improves stops at epoch 2") {
  const Splits s = split_dataset(generate(small_spec()));
  TrainConfig cfg = small_config();
  cfg.patience = 1;
  // Updates far below one ulp leave the parameters, and hence the
  // validation CCC, exactly unchanged.
  cfg.learning_rate = 1e-300;
  const TrainResult r = train(s.train, s.val, cfg);
  CHECK(r.report.epochs.size() == 2);
  CHECK(r.report.best_epoch == 1);
  CHECK(r.report.early_stopped);
  CHECK(r.report.epochs[0].val_ccc == r.report.epochs[1].val_ccc);
}

TEST_CASE("noiseless data trains to loss below 0.1 within 100 epochs") {
  SyntheticSpec spec;
  spec.noise_sigma = 0.0;
  spec.occlusion_rate = 0.0;
  spec.silence_rate = 0.0;
  spec.seed = 4;
  const Splits s = split_dataset(generate(spec));
  TrainConfig cfg;
  cfg.seed = 4;
  const TrainResult r = train(s.train, s.val, cfg);
  double best_loss = 2.0;
  for (const auto& e : r.report.epochs) best_loss = std::min(best_loss, e.train_loss);
  CHECK(best_loss < 0.1);
  CHECK(r.report.best_val_ccc > 0.9);
}

TEST_CASE("degenerate batches are skipped, all-degenerate training fails") {
  Splits s = split_dataset(generate(small_spec()));
  TrainConfig cfg = small_config();
  cfg.batch_size = 1;
  cfg.max_epochs = 2;
  std::fill(s.train.sequences[0].valence.begin(), s.train.sequences[0].valence.end(), 0.25);
  const TrainResult r = train(s.train, s.val, cfg);
  CHECK(r.report.epochs[0].skipped_batches == 1);
  REQUIRE(r.report.warnings.size() == 2);
  CHECK(r.report.warnings[0].find("constant targets") != std::string::npos);

  for (auto& seq : s.train.sequences) std::fill(seq.valence.begin(), seq.valence.end(), 0.25);
  CHECK_THROWS_AS((void)train(s.train, s.val, cfg), DegenerateError);
  CHECK_THROWS_AS((void)train(Dataset{}, s.val, cfg), DegenerateError);
}

TEST_CASE("evaluate examples") {
  Dataset d = generate(small_spec());
  Rng rng(2);
  const FusionParams p = init_params(Variant::cross_attention, 6, 8, 1.0, rng);
  for (auto& seq : d.sequences) seq.arousal = predict(p, seq);
  CHECK(evaluate(p, d, Target::arousal).ccc == doctest::Approx(1.0).epsilon(1e-12));

  const Dataset fresh = generate(small_spec());
  const Evaluation base = evaluate(p, fresh, Target::valence);
  Dataset shuffled = fresh;
  Rng(9).shuffle(shuffled.sequences);
  const Evaluation again = evaluate(p, shuffled, Target::valence);
  CHECK(again.ccc == base.ccc);
  CHECK(again.order == base.order);
  CHECK(std::is_sorted(base.order.begin(), base.order.end()));

  CHECK(evaluate(p, fresh, Target::valence, PostprocConfig::identity()).ccc == base.ccc);
  CHECK_THROWS_AS((void)evaluate(p, Dataset{}, Target::valence), DegenerateError);
}

TEST_CASE("linear baselines") {
  SyntheticSpec spec = small_spec();
  spec.n_sequences = 60;
  Dataset d = generate(spec);
  // A target that is exactly linear in the visual features is recovered.
  for (auto& seq : d.sequences)
    for (std::size_t j = 0; j < seq.valence.size(); ++j)
      seq.valence[j] = 0.3 * seq.xv.features(0, j) - 0.1 * seq.xv.features(4, j) + 0.05;
  const Splits s = split_dataset(d);
  const LinearBaseline b = fit_linear_baseline(s.train, Modality::visual, Target::valence);
  CHECK(b.coef.size() == 7);
  CHECK(b.coef[0] == doctest::Approx(0.3).epsilon(1e-9));
  CHECK(b.coef[6] == doctest::Approx(0.05).epsilon(1e-9));
  CHECK(evaluate(b, s.test, Target::valence).ccc == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(evaluate(fit_linear_baseline(s.train, Modality::audio, Target::valence), s.test, Target::valence).ccc < 0.9);
}

TEST_CASE("report serialisation") {
  TrainReport r;
  r.epochs.push_back({1, 0.5, 0.25, 0});
  r.epochs.push_back({2, 0.375, 0.125, 1});
  r.best_epoch = 1;
  r.best_val_ccc = 0.25;
  r.warnings.push_back("w");
  r.wall_time_s = 12.5;
  CHECK(r.to_json_lines() ==
        "{\"record\":\"epoch\",\"epoch\":1,\"train_loss\":0.5,\"val_ccc\":0.25,\"skipped_batches\":0}\n"
        "{\"record\":\"epoch\",\"epoch\":2,\"train_loss\":0.375,\"val_ccc\":0.125,\"skipped_batches\":1}\n"
        "{\"record\":\"summary\",\"epochs_run\":2,\"best_epoch\":1,\"best_val_ccc\":0.25,\"early_stopped\":false,"
        "\"warnings\":[\"w\"]}\n");
}
