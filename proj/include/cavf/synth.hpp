#pragma once

// Deterministic synthetic bimodal dataset.
//
// Each sequence carries a smooth scalar latent process sampled at 25 fps,
// `frames_per_subseq` frames per subsequence. Valence is tanh(latent / 2);
// arousal is a tanh of the latent's local energy (windowed mean square).
// Per-subsequence labels are frame averages. Audio and visual features are
// two fixed random linear embeddings of (latent, energy) plus Gaussian
// noise: the visual embedding weights the latent, the audio embedding the
// energy. An occluded subsequence replaces its visual column with pure
// noise, a silent one its audio column; the two never coincide, so every
// subsequence keeps at least one informative modality.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cavf/fusion.hpp"

namespace cavf {

struct SyntheticSpec {
  std::size_t n_sequences = 200;
  std::size_t subseq_per_sequence = 8;  // L
  std::size_t feature_dim = 32;         // K
  std::uint64_t seed = 1;
  double occlusion_rate = 0.3;
  double silence_rate = 0.3;
  double noise_sigma = 0.5;
  double latent_smoothness = 1.0;  // larger is slower
  std::size_t frames_per_subseq = 16;

  void validate() const;
};

enum class Corruption : std::uint8_t { clean = 0, occluded = 1, silent = 2 };

struct LabeledSequence {
  FeatureSequence xa;
  FeatureSequence xv;
  Vector valence;
  Vector arousal;
  std::vector<Corruption> corruption;

  const std::string& id() const { return xa.sequence_id; }
};

struct Dataset {
  std::vector<LabeledSequence> sequences;

  std::size_t feature_dim() const { return sequences.empty() ? 0 : sequences.front().xa.dim(); }
  std::size_t subseq() const { return sequences.empty() ? 0 : sequences.front().xa.length(); }
  // FNV-1a over ids, labels, masks and features.
  std::uint64_t fingerprint() const;
  void validate() const;
};

// Averages frame-level labels within each of `subseq` equal chunks.
Vector subsequence_targets(const Vector& frame_labels, std::size_t subseq);

// Sequence i depends only on (spec.seed, i); sequences generate in parallel.
Dataset generate(const SyntheticSpec& spec);

enum class DatasetFormat { binary, text };

// Binary by default; `.txt`/`.tsv` extensions select the text layout.
void save_dataset(const Dataset& d, const std::filesystem::path& path);
void save_dataset(const Dataset& d, const std::filesystem::path& path, DatasetFormat format);
// Detects the layout from the leading magic bytes.
Dataset load_dataset(const std::filesystem::path& path);

std::string to_string(Corruption c);

}  // namespace cavf
