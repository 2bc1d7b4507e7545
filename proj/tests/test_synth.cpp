#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "cavf/errors.hpp"
#include "cavf/metrics.hpp"
#include "cavf/synth.hpp"

using namespace cavf;

namespace {

std::filesystem::path temp_file(const std::string& name) { return std::filesystem::temp_directory_path() / name; }

// Ordinary least squares from the columns of one modality (plus intercept)
// to a target; returns in-sample fitted values over the selected columns.
struct Fit {
  Vector fitted;
  Vector target;
};

Fit linear_fit(const Dataset& d, bool visual, bool use_valence, Corruption keep) {
  const std::size_t k = d.feature_dim();
  std::vector<Eigen::VectorXd> rows;
  Vector target;
  for (const auto& s : d.sequences) {
    const Matrix& x = visual ? s.xv.features : s.xa.features;
    for (std::size_t j = 0; j < s.corruption.size(); ++j) {
      if (s.corruption[j] != keep) continue;
      Eigen::VectorXd r(k + 1);
      for (std::size_t i = 0; i < k; ++i) r[static_cast<Eigen::Index>(i)] = x(i, j);
      r[static_cast<Eigen::Index>(k)] = 1.0;
      rows.push_back(r);
      target.push_back(use_valence ? s.valence[j] : s.arousal[j]);
    }
  }
  Eigen::MatrixXd a(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(k + 1));
  for (std::size_t i = 0; i < rows.size(); ++i) a.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
  const Eigen::VectorXd b = Eigen::Map<const Eigen::VectorXd>(target.data(), static_cast<Eigen::Index>(target.size()));
  const Eigen::VectorXd coef = a.colPivHouseholderQr().solve(b);
  const Eigen::VectorXd fitted = a * coef;
  return {Vector(fitted.data(), fitted.data() + fitted.size()), target};
}

}  // namespace

TEST_CASE("subsequence_targets averages equal chunks") {
  CHECK(subsequence_targets({1, 3, 5, 7, 0, 0}, 3) == Vector{2, 6, 0});
  CHECK(subsequence_targets({4, 4}, 1) == Vector{4});
  CHECK_THROWS_AS((void)subsequence_targets({1, 2, 3}, 2), ShapeError);
  CHECK_THROWS_AS((void)subsequence_targets({1, 2}, 0), ShapeError);
}

TEST_CASE("spec validation") {
  SyntheticSpec s;
  s.occlusion_rate = 0.7;
  s.silence_rate = 0.4;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = {};
  s.noise_sigma = -1;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = {};
  s.feature_dim = 0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  CHECK_NOTHROW(SyntheticSpec{}.validate());
}

TEST_CASE("generation is deterministic and shaped") {
  SyntheticSpec spec;
  spec.n_sequences = 40;
  const Dataset a = generate(spec);
  const Dataset b = generate(spec);
  CHECK(a.fingerprint() == b.fingerprint());
  CHECK(a.sequences.size() == 40);
  CHECK(a.feature_dim() == 32);
  CHECK(a.subseq() == 8);
  CHECK(a.sequences[3].id() == "seq00003");
  CHECK(a.sequences[3].xv.sequence_id == "seq00003");
  CHECK(a.sequences[3].xa.modality == Modality::audio);

  spec.seed = 2;
  CHECK(generate(spec).fingerprint() != a.fingerprint());

  // Sequence i does not depend on how many sequences were requested.
  SyntheticSpec smaller;
  smaller.n_sequences = 5;
  const Dataset c = generate(smaller);
  CHECK(c.sequences[4].xa.features == a.sequences[4].xa.features);
  CHECK(c.sequences[4].valence == a.sequences[4].valence);
}

TEST_CASE("labels stay in [-1, 1] and vary") {
  const Dataset d = generate(SyntheticSpec{});
  Vector all_v, all_a;
  for (const auto& s : d.sequences)
    for (std::size_t j = 0; j < s.valence.size(); ++j) {
      CHECK(std::abs(s.valence[j]) <= 1.0);
      CHECK(std::abs(s.arousal[j]) <= 1.0);
      all_v.push_back(s.valence[j]);
      all_a.push_back(s.arousal[j]);
    }
  CHECK(stddev(all_v) > 0.1);
  CHECK(stddev(all_a) > 0.1);
}

TEST_CASE("corruption rates match the spec and never overlap") {
  SyntheticSpec spec;
  spec.n_sequences = 1000;
  spec.feature_dim = 4;
  spec.occlusion_rate = 0.25;
  spec.silence_rate = 0.15;
  const Dataset d = generate(spec);
  double occ = 0, sil = 0, n = 0;
  for (const auto& s : d.sequences)
    for (Corruption c : s.corruption) {
      occ += c == Corruption::occluded;
      sil += c == Corruption::silent;
      ++n;
    }
  CHECK(std::abs(occ / n - 0.25) <= 0.05);
  CHECK(std::abs(sil / n - 0.15) <= 0.05);

  spec.occlusion_rate = 0.0;
  spec.silence_rate = 0.0;
  for (const auto& s : generate(spec).sequences)
    for (Corruption c : s.corruption) CHECK(c == Corruption::clean);
}

TEST_CASE("noiseless clean features are a linear image of the latent state") {
  SyntheticSpec spec;
  spec.noise_sigma = 0.0;
  spec.occlusion_rate = 0.0;
  spec.silence_rate = 0.0;
  spec.feature_dim = 8;
  const Dataset d = generate(spec);

  // Two latent coordinates span every clean column.
  Eigen::MatrixXd cols(8, static_cast<Eigen::Index>(d.sequences.size() * 8));
  Eigen::Index c = 0;
  for (const auto& s : d.sequences)
    for (std::size_t j = 0; j < 8; ++j, ++c)
      for (std::size_t i = 0; i < 8; ++i) cols(static_cast<Eigen::Index>(i), c) = s.xv.features(i, j);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(cols);
  const auto sv = svd.singularValues();
  CHECK(sv[2] < 1e-9 * sv[0]);
  CHECK(sv[1] > 1e-3 * sv[0]);

  const Fit v = linear_fit(d, true, true, Corruption::clean);
  CHECK(ccc(v.fitted, v.target).ccc > 0.99);
  const Fit a = linear_fit(d, false, false, Corruption::clean);
  CHECK(ccc(a.fitted, a.target).ccc > 0.9);
}

TEST_CASE("corrupted columns carry no label information") {
  SyntheticSpec spec;
  spec.n_sequences = 400;
  spec.feature_dim = 8;
  const Dataset d = generate(spec);
  const Fit clean = linear_fit(d, true, true, Corruption::clean);
  const Fit occluded = linear_fit(d, true, true, Corruption::occluded);
  CHECK(ccc(clean.fitted, clean.target).ccc > 0.6);
  CHECK(ccc(occluded.fitted, occluded.target).ccc < 0.15);
  const Fit silent = linear_fit(d, false, false, Corruption::silent);
  CHECK(ccc(silent.fitted, silent.target).ccc < 0.15);
}

TEST_CASE("dataset files round-trip bit-identically") {
  SyntheticSpec spec;
  spec.n_sequences = 12;
  spec.feature_dim = 5;
  spec.subseq_per_sequence = 4;
  const Dataset d = generate(spec);
  for (const char* name : {"cavf_ds.bin", "cavf_ds.txt"}) {
    const auto path = temp_file(name);
    save_dataset(d, path);
    const Dataset back = load_dataset(path);
    CHECK(back.fingerprint() == d.fingerprint());
    REQUIRE(back.sequences.size() == d.sequences.size());
    CHECK(back.sequences[7].corruption == d.sequences[7].corruption);
    CHECK(back.sequences[7].xv.features == d.sequences[7].xv.features);
    CHECK(back.sequences[7].xv.modality == Modality::visual);
    std::filesystem::remove(path);
  }
  // Explicit format overrides the extension.
  const auto path = temp_file("cavf_ds_forced.bin");
  save_dataset(d, path, DatasetFormat::text);
  {
    std::ifstream in(path);
    std::string first;
    in >> first;
    CHECK(first == "cavf-dataset");
  }
  CHECK(load_dataset(path).fingerprint() == d.fingerprint());
  std::filesystem::remove(path);
}

TEST_CASE("malformed dataset files are rejected") {
  SyntheticSpec spec;
  spec.n_sequences = 3;
  spec.feature_dim = 2;
  spec.subseq_per_sequence = 2;
  const Dataset d = generate(spec);
  const auto path = temp_file("cavf_ds_bad.bin");
  save_dataset(d, path);
  const auto size = std::filesystem::file_size(path);

  std::filesystem::resize_file(path, size - 5);
  CHECK_THROWS_AS((void)load_dataset(path), FormatError);

  save_dataset(d, path);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(8);
    f.put(2);
  }
  CHECK_THROWS_AS((void)load_dataset(path), VersionError);

  const auto txt = temp_file("cavf_ds_bad.txt");
  save_dataset(d, txt);
  std::string text;
  {
    std::ifstream in(txt);
    text.assign(std::istreambuf_iterator<char>(in), {});
  }
  {
    std::ofstream(txt) << text.replace(0, 14, "cavf-dataset 9");
  }
  CHECK_THROWS_AS((void)load_dataset(txt), VersionError);
  {
    std::ofstream(txt) << "cavf-dataset 1\nsequences 1 dim 2 subseq 2\nsequence x\nvalence 0.1\n";
  }
  CHECK_THROWS_AS((void)load_dataset(txt), FormatError);
  {
    std::ofstream(txt) << "garbage";
  }
  CHECK_THROWS_AS((void)load_dataset(txt), FormatError);
  CHECK_THROWS_AS((void)load_dataset("/nonexistent/ds.bin"), IoError);
  std::filesystem::remove(path);
  std::filesystem::remove(txt);
}
