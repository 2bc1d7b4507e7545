#include "cavf/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>

#include "cavf/metrics.hpp"

namespace cavf {

namespace {

double tensor_error(std::span<const double> analytic, const Vector& numeric) {
  double worst = 0.0, scale = 1e-12;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]));
    scale = std::max(scale, std::abs(numeric[i]));
  }
  return worst / scale;
}

Vector central_differences(std::span<double> param, const std::function<double()>& loss, double h) {
  Vector out(param.size());
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double saved = param[i];
    param[i] = saved + h;
    const double up = loss();
    param[i] = saved - h;
    const double down = loss();
    param[i] = saved;
    out[i] = (up - down) / (2.0 * h);
  }
  return out;
}

}  // namespace

bool GradcheckReport::passed() const {
  return !rows.empty() && std::all_of(rows.begin(), rows.end(), [](const GradcheckRow& r) { return r.passed; });
}

GradcheckReport gradient_check(const GradcheckOptions& o) {
  GradcheckReport report;
  for (Variant variant : o.variants) {
    std::vector<GradcheckRow> rows;
    const auto record = [&](const std::string& name, double err) {
      auto it = std::find_if(rows.begin(), rows.end(), [&](const GradcheckRow& r) { return r.tensor == name; });
      if (it == rows.end()) {
        rows.push_back({variant, name, err, false});
      } else {
        it->max_error = std::max(it->max_error, err);
      }
    };
    for (std::size_t s = 0; s < o.seeds; ++s) {
      Rng rng(Rng::mix(o.first_seed + s, static_cast<std::uint64_t>(variant)));
      FeatureSequence xa{Modality::audio, Matrix(o.feature_dim, o.length), "gradcheck"};
      FeatureSequence xv{Modality::visual, Matrix(o.feature_dim, o.length), "gradcheck"};
      for (double& v : xa.features.data()) v = 0.8 * rng.normal();
      for (double& v : xv.features.data()) v = 0.8 * rng.normal();
      FusionParams p = init_params(variant, o.feature_dim, o.hidden, 1.0, rng);
      for (double& b : p.fc1_b) b = 0.1 * rng.normal();
      p.fc2_b = 0.1 * rng.normal();
      Vector target(o.length);
      for (double& t : target) t = rng.normal();
      // Alternate between no dropout and a random inverted-dropout mask.
      std::optional<Matrix> mask;
      if (s % 2 == 1) mask = dropout_mask(2 * o.feature_dim, o.length, 0.5, rng);

      LossAndGrads r = fusion_backward(xa, xv, p, target, mask, true);
      if (o.perturb_w)
        for (Matrix& g : r.grads.d_w)
          for (double& v : g.data()) v = v * 1.01 + 1e-4;

      const auto loss = [&] { return ccc_loss(fusion_forward(xa, xv, p, mask).predictions, target); };
      for (std::size_t i = 0; i < p.w.size(); ++i)
        record("w" + std::to_string(i), tensor_error(r.grads.d_w[i].data(), central_differences(p.w[i].data(), loss, o.step)));
      record("fc1_w", tensor_error(r.grads.d_fc1_w.data(), central_differences(p.fc1_w.data(), loss, o.step)));
      record("fc1_b", tensor_error(r.grads.d_fc1_b, central_differences(p.fc1_b, loss, o.step)));
      record("fc2_w", tensor_error(r.grads.d_fc2_w.data(), central_differences(p.fc2_w.data(), loss, o.step)));
      record("fc2_b", tensor_error(std::span<const double>(&r.grads.d_fc2_b, 1),
                                   central_differences(std::span<double>(&p.fc2_b, 1), loss, o.step)));
      record("xa", tensor_error(r.grads.d_xa->data(), central_differences(xa.features.data(), loss, o.step)));
      record("xv", tensor_error(r.grads.d_xv->data(), central_differences(xv.features.data(), loss, o.step)));
      ++report.instances;
    }
    for (GradcheckRow& row : rows) {
      row.passed = row.max_error < o.tolerance;
      report.rows.push_back(row);
    }
  }
  return report;
}

}  // namespace cavf
