#pragma once

// Cross-attentional audio-visual fusion.
//
// Shapes follow the features-by-subsequences convention: each modality is a
// K x L matrix whose column l is the feature vector of subsequence l.
//
//   Z       = Xa^T W Xv                      (L x L)
//   Aa      = column softmax of Z / T        (column-stochastic)
//   Av      = row softmax of Z^T / T         (row-stochastic)
//   Xatt_a  = tanh(Xa + Xa Aa)
//   Xatt_v  = tanh(Xv + Xv Av)
//   joint   = [Xatt_v ; Xatt_a]              (2K x L, visual block on top)
//   pred_l  = fc2 relu(fc1 joint[:, l] + b1) + b2
//
// The ablation variants share the head: concatenation feeds [Xv ; Xa]
// directly, self-attention builds Za = Xa^T Wa Xa and Zv = Xv^T Wv Xv, and
// the two-stage model runs the attention block twice before the head.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cavf/linalg.hpp"

namespace cavf {

enum class Modality { audio, visual };

struct FeatureSequence {
  Modality modality = Modality::audio;
  Matrix features;  // K x L
  std::string sequence_id;

  std::size_t dim() const noexcept { return features.rows(); }
  std::size_t length() const noexcept { return features.cols(); }
};

enum class Variant { cross_attention, concat, self_attention, two_stage };

std::string_view to_string(Variant v);
// Accepts the CLI spellings cross-attn, concat, self-attn, cross-attn-2stage.
std::optional<Variant> parse_variant(std::string_view name);
// Number of K x K attention weight matrices the variant owns.
std::size_t attention_matrix_count(Variant v);

/// Learnable state of one fusion model. `w` holds the attention weights:
/// {W} for cross-attention, {Wa, Wv} for self-attention, {W1, W2} for the
/// two-stage model and nothing for concatenation.
struct FusionParams {
  Variant variant = Variant::cross_attention;
  std::vector<Matrix> w;
  double temperature = 1.0;
  Matrix fc1_w;  // H x 2K
  Vector fc1_b;  // H
  Matrix fc2_w;  // 1 x H
  double fc2_b = 0.0;

  std::size_t feature_dim() const { return fc1_w.cols() / 2; }
  std::size_t hidden() const { return fc1_w.rows(); }
};

// Xavier-initialised weights, zero biases.
FusionParams init_params(Variant variant, std::size_t feature_dim, std::size_t hidden,
                         double temperature, Rng& rng);
// Throws ShapeError/DomainError when shapes disagree with each other or with K.
void validate(const FusionParams& p);

struct AttentionStage {
  Matrix z;    // correlation driving att_a
  Matrix z_v;  // correlation driving att_v (equal to z for cross-attention)
  Matrix att_a;
  Matrix att_v;
  Matrix attended_a;
  Matrix attended_v;
};

struct FusionOutput {
  std::vector<AttentionStage> stages;  // empty for concatenation
  Matrix joint;                        // 2K x L before dropout
  Matrix hidden_pre;                   // H x L, fc1 pre-activation
  Matrix hidden;                       // H x L, after relu
  Vector predictions;                  // L

  const AttentionStage& last_stage() const { return stages.back(); }
};

struct GradientBundle {
  std::vector<Matrix> d_w;
  Matrix d_fc1_w;
  Vector d_fc1_b;
  Matrix d_fc2_w;
  double d_fc2_b = 0.0;
  std::optional<Matrix> d_xa;
  std::optional<Matrix> d_xv;

  static GradientBundle zeros_like(const FusionParams& p);
  void accumulate(const GradientBundle& other);
};

struct AttentionPair {
  Matrix att_a;
  Matrix att_v;
};

struct AttendedPair {
  Matrix attended_a;
  Matrix attended_v;
};

Matrix cross_correlation(const FeatureSequence& xa, const FeatureSequence& xv, const Matrix& w);
AttentionPair attention_weights(const Matrix& z, double t);
AttendedPair attended_features(const FeatureSequence& xa, const FeatureSequence& xv,
                               const Matrix& att_a, const Matrix& att_v);

// Dispatches on p.variant. `dropout` is an inverted-dropout mask (2K x L)
// multiplied into the joint representation before fc1.
FusionOutput fusion_forward(const FeatureSequence& xa, const FeatureSequence& xv,
                            const FusionParams& p, const std::optional<Matrix>& dropout = std::nullopt);

Vector concat_baseline_forward(const FeatureSequence& xa, const FeatureSequence& xv,
                               const FusionParams& head);
FusionOutput self_attention_forward(const FeatureSequence& xa, const FeatureSequence& xv,
                                    const FusionParams& p);
// Stage 1 contributes only its attention weights; stage 2 also supplies the head.
FusionOutput two_stage_forward(const FeatureSequence& xa, const FeatureSequence& xv,
                               const FusionParams& stage1, const FusionParams& stage2);

// Backpropagates d_pred (dLoss/dpredictions for this sequence) through a
// forward pass computed with the same inputs, params and mask.
GradientBundle backward_from_predictions(const FeatureSequence& xa, const FeatureSequence& xv,
                                         const FusionParams& p, const FusionOutput& fwd,
                                         const Vector& d_pred,
                                         const std::optional<Matrix>& dropout = std::nullopt,
                                         bool input_grads = false);

struct LossAndGrads {
  double loss = 0.0;
  GradientBundle grads;
};

// Loss = 1 - ccc(predictions, target) over one sequence (needs L >= 2).
LossAndGrads fusion_backward(const FeatureSequence& xa, const FeatureSequence& xv,
                             const FusionParams& p, const Vector& target,
                             const std::optional<Matrix>& dropout = std::nullopt,
                             bool input_grads = false);

// Inverted dropout: entries are 0 with probability p, else 1/(1-p).
Matrix dropout_mask(std::size_t rows, std::size_t cols, double p, Rng& rng);

}  // namespace cavf
