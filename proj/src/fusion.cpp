#include "cavf/fusion.hpp"

#include <algorithm>
#include <cmath>

#include "cavf/errors.hpp"
#include "cavf/metrics.hpp"

namespace cavf {

namespace {

void require_pair(const FeatureSequence& xa, const FeatureSequence& xv) {
  if (xa.dim() == 0 || xa.length() == 0)
    throw ShapeError("feature sequence '" + xa.sequence_id + "' is empty");
  if (xa.features.rows() != xv.features.rows() || xa.features.cols() != xv.features.cols())
    throw ShapeError("audio features " + xa.features.shape_string() +
                     " and visual features " + xv.features.shape_string() + " disagree");
}

void require_square(const Matrix& w, std::size_t k, const char* what) {
  if (w.rows() != k || w.cols() != k)
    throw ShapeError(std::string(what) + " must be (" + std::to_string(k) + "x" + std::to_string(k) +
                     "), got " + w.shape_string());
}

// Sa = Xa + Xa Aa and Sv = Xv + Xv Av, squashed by tanh.
AttentionStage attend(const Matrix& xa, const Matrix& xv, Matrix z, Matrix z_v, double t) {
  AttentionStage s;
  s.att_a = softmax_columns(z, t);
  s.att_v = softmax_rows(transpose(z_v), t);
  s.attended_a = elementwise_tanh(add(xa, matmul(xa, s.att_a)));
  s.attended_v = elementwise_tanh(add(xv, matmul(xv, s.att_v)));
  s.z = std::move(z);
  s.z_v = std::move(z_v);
  return s;
}

AttentionStage cross_stage(const Matrix& xa, const Matrix& xv, const Matrix& w, double t) {
  Matrix z = matmul(matmul(transpose(xa), w), xv);
  Matrix z_v = z;
  return attend(xa, xv, std::move(z), std::move(z_v), t);
}

AttentionStage self_stage(const Matrix& xa, const Matrix& xv, const Matrix& wa, const Matrix& wv,
                          double t) {
  Matrix za = matmul(matmul(transpose(xa), wa), xa);
  Matrix zv = matmul(matmul(transpose(xv), wv), xv);
  return attend(xa, xv, std::move(za), std::move(zv), t);
}

void run_head(FusionOutput& out, const FusionParams& p, const std::optional<Matrix>& dropout) {
  const Matrix input = dropout ? hadamard(out.joint, *dropout) : out.joint;
  out.hidden_pre = matmul(p.fc1_w, input);
  out.hidden = out.hidden_pre;
  for (std::size_t h = 0; h < out.hidden.rows(); ++h)
    for (std::size_t l = 0; l < out.hidden.cols(); ++l) {
      out.hidden_pre(h, l) += p.fc1_b[h];
      out.hidden(h, l) = std::max(0.0, out.hidden_pre(h, l));
    }
  const Matrix pred = matmul(p.fc2_w, out.hidden);
  out.predictions.assign(pred.data().begin(), pred.data().end());
  for (double& v : out.predictions) v += p.fc2_b;
}

FusionOutput forward_impl(const Matrix& xa, const Matrix& xv, const FusionParams& p,
                          const std::vector<double>& temperatures,
                          const std::optional<Matrix>& dropout) {
  FusionOutput out;
  switch (p.variant) {
    case Variant::concat:
      out.joint = vstack(xv, xa);
      break;
    case Variant::cross_attention:
      out.stages.push_back(cross_stage(xa, xv, p.w[0], temperatures[0]));
      break;
    case Variant::self_attention:
      out.stages.push_back(self_stage(xa, xv, p.w[0], p.w[1], temperatures[0]));
      break;
    case Variant::two_stage: {
      out.stages.push_back(cross_stage(xa, xv, p.w[0], temperatures[0]));
      const AttentionStage& first = out.stages.front();
      out.stages.push_back(cross_stage(first.attended_a, first.attended_v, p.w[1], temperatures[1]));
      break;
    }
  }
  if (!out.stages.empty()) out.joint = vstack(out.last_stage().attended_v, out.last_stage().attended_a);
  if (dropout && (dropout->rows() != out.joint.rows() || dropout->cols() != out.joint.cols()))
    throw ShapeError("dropout mask " + dropout->shape_string() + " does not match joint features " +
                     out.joint.shape_string());
  run_head(out, p, dropout);
  return out;
}

void check_inputs(const FeatureSequence& xa, const FeatureSequence& xv, const FusionParams& p) {
  require_pair(xa, xv);
  validate(p);
  if (p.feature_dim() != xa.dim())
    throw ShapeError("model expects K=" + std::to_string(p.feature_dim()) + " but features have K=" +
                     std::to_string(xa.dim()));
}

// Gradients flowing into one attention stage's inputs and weights.
struct StageGrads {
  Matrix d_xa;
  Matrix d_xv;
  std::vector<Matrix> d_w;
};

// dL/dZ for Aa = colsoftmax(Z/T).
Matrix softmax_columns_backward(const Matrix& att, const Matrix& d_att, double t) {
  Matrix dz(att.rows(), att.cols());
  for (std::size_t j = 0; j < att.cols(); ++j) {
    double dot = 0.0;
    for (std::size_t i = 0; i < att.rows(); ++i) dot += att(i, j) * d_att(i, j);
    for (std::size_t i = 0; i < att.rows(); ++i) dz(i, j) = att(i, j) * (d_att(i, j) - dot) / t;
  }
  return dz;
}

// dL/dY for A = rowsoftmax(Y/T).
Matrix softmax_rows_backward(const Matrix& att, const Matrix& d_att, double t) {
  Matrix dy(att.rows(), att.cols());
  for (std::size_t i = 0; i < att.rows(); ++i) {
    double dot = 0.0;
    for (std::size_t j = 0; j < att.cols(); ++j) dot += att(i, j) * d_att(i, j);
    for (std::size_t j = 0; j < att.cols(); ++j) dy(i, j) = att(i, j) * (d_att(i, j) - dot) / t;
  }
  return dy;
}

Matrix tanh_backward(const Matrix& y, const Matrix& dy) {
  Matrix ds(y.rows(), y.cols());
  for (std::size_t i = 0; i < y.size(); ++i) ds.data()[i] = dy.data()[i] * (1.0 - y.data()[i] * y.data()[i]);
  return ds;
}

StageGrads stage_backward(const Matrix& xa, const Matrix& xv, const AttentionStage& s,
                          const Matrix& d_att_a, const Matrix& d_att_v, Variant variant,
                          const Matrix& w_first, const Matrix* w_second, double t) {
  const Matrix dsa = tanh_backward(s.attended_a, d_att_a);
  const Matrix dsv = tanh_backward(s.attended_v, d_att_v);

  // S = X (I + A): dX = dS (I + A)^T, dA = X^T dS.
  StageGrads g;
  g.d_xa = add(dsa, matmul(dsa, transpose(s.att_a)));
  g.d_xv = add(dsv, matmul(dsv, transpose(s.att_v)));
  const Matrix d_aa = matmul(transpose(xa), dsa);
  const Matrix d_av = matmul(transpose(xv), dsv);

  const Matrix dza = softmax_columns_backward(s.att_a, d_aa, t);
  const Matrix dzv = transpose(softmax_rows_backward(s.att_v, d_av, t));

  if (variant == Variant::self_attention) {
    // Za = Xa^T Wa Xa, Zv = Xv^T Wv Xv.
    const Matrix& wa = w_first;
    const Matrix& wv = *w_second;
    g.d_w.push_back(matmul(matmul(xa, dza), transpose(xa)));
    g.d_w.push_back(matmul(matmul(xv, dzv), transpose(xv)));
    add_in_place(g.d_xa, matmul(matmul(wa, xa), transpose(dza)));
    add_in_place(g.d_xa, matmul(matmul(transpose(wa), xa), dza));
    add_in_place(g.d_xv, matmul(matmul(wv, xv), transpose(dzv)));
    add_in_place(g.d_xv, matmul(matmul(transpose(wv), xv), dzv));
  } else {
    // Z = Xa^T W Xv feeds both softmaxes.
    const Matrix dz = add(dza, dzv);
    const Matrix& w = w_first;
    g.d_w.push_back(matmul(matmul(xa, dz), transpose(xv)));
    add_in_place(g.d_xa, matmul(matmul(w, xv), transpose(dz)));
    add_in_place(g.d_xv, matmul(matmul(transpose(w), xa), dz));
  }
  return g;
}

Matrix split_rows(const Matrix& m, std::size_t begin, std::size_t count) {
  Matrix out(count, m.cols());
  std::copy_n(m.data().begin() + static_cast<std::ptrdiff_t>(begin * m.cols()), count * m.cols(),
              out.data().begin());
  return out;
}

}  // namespace

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::cross_attention: return "cross-attn";
    case Variant::concat: return "concat";
    case Variant::self_attention: return "self-attn";
    case Variant::two_stage: return "cross-attn-2stage";
  }
  return "unknown";
}

std::optional<Variant> parse_variant(std::string_view name) {
  for (Variant v : {Variant::cross_attention, Variant::concat, Variant::self_attention, Variant::two_stage})
    if (to_string(v) == name) return v;
  return std::nullopt;
}

std::size_t attention_matrix_count(Variant v) {
  switch (v) {
    case Variant::concat: return 0;
    case Variant::cross_attention: return 1;
    case Variant::self_attention:
    case Variant::two_stage: return 2;
  }
  return 0;
}

FusionParams init_params(Variant variant, std::size_t feature_dim, std::size_t hidden,
                         double temperature, Rng& rng) {
  FusionParams p;
  p.variant = variant;
  p.temperature = temperature;
  for (std::size_t i = 0; i < attention_matrix_count(variant); ++i)
    p.w.push_back(xavier_init(feature_dim, feature_dim, rng));
  p.fc1_w = xavier_init(hidden, 2 * feature_dim, rng);
  p.fc1_b.assign(hidden, 0.0);
  p.fc2_w = xavier_init(1, hidden, rng);
  p.fc2_b = 0.0;
  validate(p);
  return p;
}

void validate(const FusionParams& p) {
  if (!(p.temperature > 0.0)) throw DomainError("temperature must be positive");
  if (p.fc1_w.cols() == 0 || p.fc1_w.cols() % 2 != 0)
    throw ShapeError("fc1_w must have 2K columns, got " + p.fc1_w.shape_string());
  const std::size_t k = p.feature_dim();
  const std::size_t h = p.hidden();
  if (p.fc1_b.size() != h) throw ShapeError("fc1_b length does not match hidden width");
  if (p.fc2_w.rows() != 1 || p.fc2_w.cols() != h)
    throw ShapeError("fc2_w must be (1x" + std::to_string(h) + "), got " + p.fc2_w.shape_string());
  if (p.w.size() != attention_matrix_count(p.variant))
    throw ShapeError(std::string(to_string(p.variant)) + " expects " +
                     std::to_string(attention_matrix_count(p.variant)) + " attention matrices, got " +
                     std::to_string(p.w.size()));
  for (const Matrix& w : p.w) require_square(w, k, "attention weight");
}

GradientBundle GradientBundle::zeros_like(const FusionParams& p) {
  GradientBundle g;
  for (const Matrix& w : p.w) g.d_w.emplace_back(w.rows(), w.cols());
  g.d_fc1_w = Matrix(p.fc1_w.rows(), p.fc1_w.cols());
  g.d_fc1_b.assign(p.fc1_b.size(), 0.0);
  g.d_fc2_w = Matrix(p.fc2_w.rows(), p.fc2_w.cols());
  return g;
}

void GradientBundle::accumulate(const GradientBundle& other) {
  if (other.d_w.size() != d_w.size()) throw ShapeError("gradient bundles disagree on attention count");
  for (std::size_t i = 0; i < d_w.size(); ++i) add_in_place(d_w[i], other.d_w[i]);
  add_in_place(d_fc1_w, other.d_fc1_w);
  for (std::size_t i = 0; i < d_fc1_b.size(); ++i) d_fc1_b[i] += other.d_fc1_b[i];
  add_in_place(d_fc2_w, other.d_fc2_w);
  d_fc2_b += other.d_fc2_b;
}

Matrix cross_correlation(const FeatureSequence& xa, const FeatureSequence& xv, const Matrix& w) {
  if (xa.dim() != xv.dim())
    throw ShapeError("cross_correlation: K differs " + xa.features.shape_string() + " vs " +
                     xv.features.shape_string());
  require_square(w, xa.dim(), "cross_correlation: W");
  return matmul(matmul(transpose(xa.features), w), xv.features);
}

AttentionPair attention_weights(const Matrix& z, double t) {
  if (z.rows() != z.cols()) throw ShapeError("attention_weights: Z must be square, got " + z.shape_string());
  return {softmax_columns(z, t), softmax_rows(transpose(z), t)};
}

AttendedPair attended_features(const FeatureSequence& xa, const FeatureSequence& xv,
                               const Matrix& att_a, const Matrix& att_v) {
  require_pair(xa, xv);
  const std::size_t l = xa.length();
  if (att_a.rows() != l || att_a.cols() != l || att_v.rows() != l || att_v.cols() != l)
    throw ShapeError("attended_features: attention must be (" + std::to_string(l) + "x" +
                     std::to_string(l) + ")");
  return {elementwise_tanh(add(xa.features, matmul(xa.features, att_a))),
          elementwise_tanh(add(xv.features, matmul(xv.features, att_v)))};
}

FusionOutput fusion_forward(const FeatureSequence& xa, const FeatureSequence& xv,
                            const FusionParams& p, const std::optional<Matrix>& dropout) {
  check_inputs(xa, xv, p);
  return forward_impl(xa.features, xv.features, p, {p.temperature, p.temperature}, dropout);
}

Vector concat_baseline_forward(const FeatureSequence& xa, const FeatureSequence& xv,
                               const FusionParams& head) {
  FusionParams p = head;
  p.variant = Variant::concat;
  p.w.clear();
  return fusion_forward(xa, xv, p).predictions;
}

FusionOutput self_attention_forward(const FeatureSequence& xa, const FeatureSequence& xv,
                                    const FusionParams& p) {
  if (p.variant != Variant::self_attention)
    throw ShapeError("self_attention_forward: params are for " + std::string(to_string(p.variant)));
  return fusion_forward(xa, xv, p);
}

FusionOutput two_stage_forward(const FeatureSequence& xa, const FeatureSequence& xv,
                               const FusionParams& stage1, const FusionParams& stage2) {
  if (stage1.w.empty() || stage2.w.empty())
    throw ShapeError("two_stage_forward: both stages need an attention weight");
  FusionParams p = stage2;
  p.variant = Variant::two_stage;
  p.w = {stage1.w.front(), stage2.w.front()};
  check_inputs(xa, xv, p);
  if (!(stage1.temperature > 0.0)) throw DomainError("stage 1 temperature must be positive");
  return forward_impl(xa.features, xv.features, p, {stage1.temperature, stage2.temperature},
                      std::nullopt);
}

GradientBundle backward_from_predictions(const FeatureSequence& xa, const FeatureSequence& xv,
                                         const FusionParams& p, const FusionOutput& fwd,
                                         const Vector& d_pred, const std::optional<Matrix>& dropout,
                                         bool input_grads) {
  const std::size_t l = xa.length();
  const std::size_t k = p.feature_dim();
  if (d_pred.size() != l)
    throw ShapeError("backward: " + std::to_string(d_pred.size()) + " prediction gradients for L=" +
                     std::to_string(l));

  GradientBundle g = GradientBundle::zeros_like(p);

  // Head.
  const Matrix input = dropout ? hadamard(fwd.joint, *dropout) : fwd.joint;
  Matrix du(p.hidden(), l);
  for (std::size_t j = 0; j < l; ++j) {
    g.d_fc2_b += d_pred[j];
    for (std::size_t h = 0; h < p.hidden(); ++h) {
      g.d_fc2_w(0, h) += d_pred[j] * fwd.hidden(h, j);
      du(h, j) = fwd.hidden_pre(h, j) > 0.0 ? p.fc2_w(0, h) * d_pred[j] : 0.0;
    }
  }
  g.d_fc1_w = matmul(du, transpose(input));
  for (std::size_t h = 0; h < p.hidden(); ++h)
    for (std::size_t j = 0; j < l; ++j) g.d_fc1_b[h] += du(h, j);
  Matrix d_joint = matmul(transpose(p.fc1_w), du);
  if (dropout) d_joint = hadamard(d_joint, *dropout);

  Matrix d_top = split_rows(d_joint, 0, k);     // visual block
  Matrix d_bottom = split_rows(d_joint, k, k);  // audio block

  if (p.variant == Variant::concat) {
    if (input_grads) {
      g.d_xa = std::move(d_bottom);
      g.d_xv = std::move(d_top);
    }
    return g;
  }

  const std::vector<double> temps{p.temperature, p.temperature};
  Matrix d_att_a = std::move(d_bottom);
  Matrix d_att_v = std::move(d_top);
  for (std::size_t s = fwd.stages.size(); s-- > 0;) {
    const Matrix& in_a = s == 0 ? xa.features : fwd.stages[s - 1].attended_a;
    const Matrix& in_v = s == 0 ? xv.features : fwd.stages[s - 1].attended_v;
    StageGrads sg;
    if (p.variant == Variant::self_attention) {
      sg = stage_backward(in_a, in_v, fwd.stages[s], d_att_a, d_att_v, p.variant, p.w[0], &p.w[1],
                          temps[s]);
      g.d_w[0] = std::move(sg.d_w[0]);
      g.d_w[1] = std::move(sg.d_w[1]);
    } else {
      sg = stage_backward(in_a, in_v, fwd.stages[s], d_att_a, d_att_v, p.variant, p.w[s], nullptr,
                          temps[s]);
      g.d_w[s] = std::move(sg.d_w[0]);
    }
    d_att_a = std::move(sg.d_xa);
    d_att_v = std::move(sg.d_xv);
  }
  if (input_grads) {
    g.d_xa = std::move(d_att_a);
    g.d_xv = std::move(d_att_v);
  }
  return g;
}

LossAndGrads fusion_backward(const FeatureSequence& xa, const FeatureSequence& xv,
                             const FusionParams& p, const Vector& target,
                             const std::optional<Matrix>& dropout, bool input_grads) {
  if (xa.length() < 2)
    throw DegenerateError("fusion_backward: CCC loss needs L >= 2, got L=" + std::to_string(xa.length()));
  if (target.size() != xa.length())
    throw ShapeError("fusion_backward: target length " + std::to_string(target.size()) + " for L=" +
                     std::to_string(xa.length()));
  const FusionOutput fwd = fusion_forward(xa, xv, p, dropout);
  LossAndGrads out;
  out.loss = ccc_loss(fwd.predictions, target);
  const Vector d_pred = ccc_loss_grad(fwd.predictions, target);
  out.grads = backward_from_predictions(xa, xv, p, fwd, d_pred, dropout, input_grads);
  return out;
}

Matrix dropout_mask(std::size_t rows, std::size_t cols, double p, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw DomainError("dropout probability must be in [0, 1)");
  Matrix m(rows, cols);
  const double keep = 1.0 / (1.0 - p);
  for (double& v : m.data()) v = rng.bernoulli(p) ? 0.0 : keep;
  return m;
}

}  // namespace cavf
