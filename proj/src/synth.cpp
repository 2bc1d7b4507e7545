#include "cavf/synth.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include "cavf/errors.hpp"
#include "cavf/textio.hpp"

namespace cavf {

namespace {

constexpr char kBinaryMagic[8] = {'C', 'A', 'V', 'F', 'D', 'A', 'T', 'A'};
constexpr std::string_view kTextMagic = "cavf-dataset";
constexpr std::uint32_t kDatasetVersion = 1;

constexpr std::size_t kComponents = 3;
constexpr double kEnergyHalfWindow = 8;  // frames either side
constexpr double kStrongWeight = 2.0;
constexpr double kWeakWeight = 0.6;

struct Embeddings {
  Matrix audio;   // K x 2
  Matrix visual;  // K x 2
};

Embeddings make_embeddings(const SyntheticSpec& spec) {
  Rng rng(Rng::mix(spec.seed, 0xE3BEDull));
  const std::size_t k = spec.feature_dim;
  const double unit = 1.0 / std::sqrt(static_cast<double>(k));
  Embeddings e{Matrix(k, 2), Matrix(k, 2)};
  // Visual: latent strong, energy weak. Audio: the reverse.
  for (std::size_t r = 0; r < k; ++r) e.visual(r, 0) = kStrongWeight * unit * rng.normal();
  for (std::size_t r = 0; r < k; ++r) e.visual(r, 1) = kWeakWeight * unit * rng.normal();
  for (std::size_t r = 0; r < k; ++r) e.audio(r, 0) = kWeakWeight * unit * rng.normal();
  for (std::size_t r = 0; r < k; ++r) e.audio(r, 1) = kStrongWeight * unit * rng.normal();
  return e;
}

std::string sequence_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "seq%05zu", i);
  return buf;
}

LabeledSequence make_sequence(const SyntheticSpec& spec, const Embeddings& emb, std::size_t index) {
  Rng rng(Rng::mix(spec.seed, index + 1));
  const std::size_t l = spec.subseq_per_sequence;
  const std::size_t k = spec.feature_dim;
  const std::size_t frames = l * spec.frames_per_subseq;

  double cycles[kComponents], amp[kComponents], phase[kComponents];
  for (std::size_t m = 0; m < kComponents; ++m) {
    cycles[m] = rng.uniform(0.3, 1.5) / spec.latent_smoothness;
    amp[m] = rng.uniform(0.35, 0.7);
    phase[m] = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  const double offset = 0.4 * rng.normal();

  Vector latent(frames);
  for (std::size_t f = 0; f < frames; ++f) {
    double v = offset;
    for (std::size_t m = 0; m < kComponents; ++m)
      v += amp[m] * std::sin(2.0 * std::numbers::pi * cycles[m] * static_cast<double>(f) /
                                 static_cast<double>(frames) +
                             phase[m]);
    latent[f] = v;
  }
  Vector energy(frames), valence(frames), arousal(frames);
  const auto h = static_cast<std::ptrdiff_t>(kEnergyHalfWindow);
  for (std::size_t f = 0; f < frames; ++f) {
    const auto lo = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(f) - h);
    const auto hi = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(frames) - 1, static_cast<std::ptrdiff_t>(f) + h);
    double acc = 0.0;
    for (auto j = lo; j <= hi; ++j) acc += latent[static_cast<std::size_t>(j)] * latent[static_cast<std::size_t>(j)];
    energy[f] = acc / static_cast<double>(hi - lo + 1);
    valence[f] = std::tanh(0.5 * latent[f]);
    arousal[f] = std::tanh(1.5 * (energy[f] - 0.6));
  }

  LabeledSequence s;
  s.valence = subsequence_targets(valence, l);
  s.arousal = subsequence_targets(arousal, l);
  const Vector sub_latent = subsequence_targets(latent, l);
  const Vector sub_energy = subsequence_targets(energy, l);

  s.corruption.resize(l);
  for (std::size_t j = 0; j < l; ++j) {
    const double u = rng.uniform();
    s.corruption[j] = u < spec.occlusion_rate                         ? Corruption::occluded
                      : u < spec.occlusion_rate + spec.silence_rate ? Corruption::silent
                                                                      : Corruption::clean;
  }

  // An uninformative column has the same per-entry scale as a clean one.
  const double junk_sigma = std::sqrt(spec.noise_sigma * spec.noise_sigma + 0.25);
  const std::string id = sequence_name(index);
  s.xa = {Modality::audio, Matrix(k, l), id};
  s.xv = {Modality::visual, Matrix(k, l), id};
  for (auto [seq, e, junk] : {std::tuple{&s.xa, &emb.audio, Corruption::silent},
                              std::tuple{&s.xv, &emb.visual, Corruption::occluded}}) {
    for (std::size_t j = 0; j < l; ++j) {
      const double z0 = sub_latent[j], z1 = sub_energy[j] - 0.5;
      const bool replaced = s.corruption[j] == junk;
      for (std::size_t r = 0; r < k; ++r) {
        const double draw = rng.normal();
        seq->features(r, j) = replaced ? junk_sigma * draw
                                       : (*e)(r, 0) * z0 + (*e)(r, 1) * z1 + spec.noise_sigma * draw;
      }
    }
  }
  return s;
}

// --- binary helpers ---------------------------------------------------------

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}
void put_double(std::ostream& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

class Reader {
 public:
  Reader(std::vector<unsigned char> bytes, std::string name) : bytes_(std::move(bytes)), name_(std::move(name)) {}
  const unsigned char* take(std::size_t n) {
    if (n > bytes_.size() - pos_)
      throw FormatError(name_ + ": truncated dataset (wanted " + std::to_string(n) + " bytes at offset " +
                        std::to_string(pos_) + ")");
    const unsigned char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint64_t u64() {
    const unsigned char* p = take(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = v << 8 | p[i];
    return v;
  }
  std::uint32_t u32() {
    const unsigned char* p = take(4);
    return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
           static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  bool done() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::vector<unsigned char> bytes_;
  std::string name_;
  std::size_t pos_ = 0;
};

void write_binary(const Dataset& d, std::ostream& out) {
  out.write(kBinaryMagic, 8);
  const std::uint32_t v = kDatasetVersion;
  const unsigned char vb[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                               static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(vb), 4);
  put_u64(out, d.sequences.size());
  put_u64(out, d.feature_dim());
  put_u64(out, d.subseq());
  for (const auto& s : d.sequences) {
    put_u64(out, s.id().size());
    out.write(s.id().data(), static_cast<std::streamsize>(s.id().size()));
    for (double x : s.valence) put_double(out, x);
    for (double x : s.arousal) put_double(out, x);
    for (Corruption c : s.corruption) out.put(static_cast<char>(c));
    for (double x : s.xa.features.data()) put_double(out, x);
    for (double x : s.xv.features.data()) put_double(out, x);
  }
}

Corruption corruption_from(unsigned value, const std::string& where) {
  if (value > 2) throw FormatError(where + ": bad corruption flag " + std::to_string(value));
  return static_cast<Corruption>(value);
}

Dataset read_binary(Reader& in, const std::string& name) {
  in.take(8);
  const std::uint32_t version = in.u32();
  if (version != kDatasetVersion)
    throw VersionError(name + ": dataset format version " + std::to_string(version) + ", expected " +
                       std::to_string(kDatasetVersion));
  const std::uint64_t n = in.u64(), k = in.u64(), l = in.u64();
  // Each sequence needs at least this many bytes; rejects absurd headers early.
  const std::uint64_t per_seq = 8 + 16 * l + l + 16 * k * l;
  if (n > 0 && (k == 0 || l == 0 || per_seq == 0 || n > in.remaining() / per_seq))
    throw FormatError(name + ": truncated dataset or corrupt header");
  Dataset d;
  d.sequences.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    LabeledSequence s;
    const std::uint64_t id_len = in.u64();
    if (id_len > 4096) throw FormatError(name + ": implausible sequence id length");
    const unsigned char* id = in.take(id_len);
    const std::string sid(reinterpret_cast<const char*>(id), id_len);
    s.valence.resize(l);
    s.arousal.resize(l);
    for (double& x : s.valence) x = in.f64();
    for (double& x : s.arousal) x = in.f64();
    s.corruption.resize(l);
    for (auto& c : s.corruption) c = corruption_from(*in.take(1), name);
    s.xa = {Modality::audio, Matrix(k, l), sid};
    s.xv = {Modality::visual, Matrix(k, l), sid};
    for (double& x : s.xa.features.data()) x = in.f64();
    for (double& x : s.xv.features.data()) x = in.f64();
    d.sequences.push_back(std::move(s));
  }
  if (!in.done()) throw FormatError(name + ": trailing bytes after dataset");
  return d;
}

// --- text helpers -----------------------------------------------------------

void write_text(const Dataset& d, std::ostream& out) {
  out << kTextMagic << ' ' << kDatasetVersion << '\n';
  out << "sequences " << d.sequences.size() << " dim " << d.feature_dim() << " subseq " << d.subseq() << '\n';
  const auto row = [&](const char* tag, const Vector& v) {
    out << tag;
    for (double x : v) out << ' ' << format_double(x);
    out << '\n';
  };
  const auto block = [&](const FeatureSequence& f) {
    out << (f.modality == Modality::audio ? "audio" : "visual") << ' ' << f.dim() << ' ' << f.length() << '\n';
    for (std::size_t r = 0; r < f.dim(); ++r) {
      const auto values = f.features.row(r);
      for (std::size_t c = 0; c < values.size(); ++c) out << (c ? " " : "") << format_double(values[c]);
      out << '\n';
    }
  };
  for (const auto& s : d.sequences) {
    out << "sequence " << s.id() << '\n';
    row("valence", s.valence);
    row("arousal", s.arousal);
    out << "mask";
    for (Corruption c : s.corruption) out << ' ' << to_string(c);
    out << '\n';
    block(s.xa);
    block(s.xv);
  }
}

class TextReader {
 public:
  TextReader(const std::string& text, std::string name) : in_(text), name_(std::move(name)) {}

  std::string word() {
    std::string w;
    if (!(in_ >> w)) throw FormatError(name_ + ": unexpected end of dataset text");
    return w;
  }
  void expect(std::string_view keyword) {
    const std::string w = word();
    if (w != keyword) throw FormatError(name_ + ": expected '" + std::string(keyword) + "', got '" + w + "'");
  }
  std::uint64_t count() { return parse_u64(word()); }
  double number() { return parse_double(word()); }
  bool at_end() {
    in_ >> std::ws;
    return in_.eof();
  }

 private:
  std::istringstream in_;
  std::string name_;
};

Corruption corruption_from_word(const std::string& w, const std::string& name) {
  if (w == "clean") return Corruption::clean;
  if (w == "occluded") return Corruption::occluded;
  if (w == "silent") return Corruption::silent;
  throw FormatError(name + ": bad mask entry '" + w + "'");
}

Dataset read_text(const std::string& text, const std::string& name) {
  TextReader in(text, name);
  in.expect(kTextMagic);
  const std::uint64_t version = in.count();
  if (version != kDatasetVersion)
    throw VersionError(name + ": dataset format version " + std::to_string(version) + ", expected " +
                       std::to_string(kDatasetVersion));
  in.expect("sequences");
  const std::uint64_t n = in.count();
  in.expect("dim");
  const std::uint64_t k = in.count();
  in.expect("subseq");
  const std::uint64_t l = in.count();
  Dataset d;
  for (std::uint64_t i = 0; i < n; ++i) {
    in.expect("sequence");
    const std::string id = in.word();
    LabeledSequence s;
    in.expect("valence");
    for (std::uint64_t j = 0; j < l; ++j) s.valence.push_back(in.number());
    in.expect("arousal");
    for (std::uint64_t j = 0; j < l; ++j) s.arousal.push_back(in.number());
    in.expect("mask");
    for (std::uint64_t j = 0; j < l; ++j) s.corruption.push_back(corruption_from_word(in.word(), name));
    for (Modality m : {Modality::audio, Modality::visual}) {
      in.expect(m == Modality::audio ? "audio" : "visual");
      if (in.count() != k || in.count() != l) throw FormatError(name + ": block shape disagrees with header");
      Matrix f(k, l);
      for (double& x : f.data()) x = in.number();
      (m == Modality::audio ? s.xa : s.xv) = {m, std::move(f), id};
    }
    d.sequences.push_back(std::move(s));
  }
  if (!in.at_end()) throw FormatError(name + ": trailing content after dataset");
  return d;
}

}  // namespace

void SyntheticSpec::validate() const {
  if (n_sequences == 0) throw ConfigError("n_sequences must be >= 1");
  if (subseq_per_sequence == 0 || feature_dim == 0) throw ConfigError("subseq and feature dim must be >= 1");
  if (frames_per_subseq == 0) throw ConfigError("frames_per_subseq must be >= 1");
  for (double r : {occlusion_rate, silence_rate})
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("corruption rates must lie in [0, 1]");
  if (occlusion_rate + silence_rate > 1.0)
    throw ConfigError("occlusion_rate + silence_rate must not exceed 1 (they never co-occur)");
  if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be >= 0");
  if (!(latent_smoothness > 0.0)) throw ConfigError("latent_smoothness must be positive");
}

std::string to_string(Corruption c) {
  switch (c) {
    case Corruption::clean: return "clean";
    case Corruption::occluded: return "occluded";
    case Corruption::silent: return "silent";
  }
  return "?";
}

Vector subsequence_targets(const Vector& frame_labels, std::size_t subseq) {
  if (subseq == 0 || frame_labels.size() % subseq != 0)
    throw ShapeError("subsequence_targets: " + std::to_string(frame_labels.size()) +
                     " frames do not split into " + std::to_string(subseq) + " subsequences");
  const std::size_t per = frame_labels.size() / subseq;
  Vector out(subseq);
  for (std::size_t j = 0; j < subseq; ++j) {
    double acc = 0.0;
    for (std::size_t f = 0; f < per; ++f) acc += frame_labels[j * per + f];
    out[j] = acc / static_cast<double>(per);
  }
  return out;
}

Dataset generate(const SyntheticSpec& spec) {
  spec.validate();
  const Embeddings emb = make_embeddings(spec);
  Dataset d;
  d.sequences.resize(spec.n_sequences);
  const auto n = static_cast<std::ptrdiff_t>(spec.n_sequences);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i)
    d.sequences[static_cast<std::size_t>(i)] = make_sequence(spec, emb, static_cast<std::size_t>(i));
  return d;
}

std::uint64_t Dataset::fingerprint() const {
  Fnv1a h;
  for (const auto& s : sequences) {
    h.update(s.id());
    for (double v : s.valence) h.update(v);
    for (double v : s.arousal) h.update(v);
    for (Corruption c : s.corruption) {
      const auto b = static_cast<unsigned char>(c);
      h.update(&b, 1);
    }
    for (double v : s.xa.features.data()) h.update(v);
    for (double v : s.xv.features.data()) h.update(v);
  }
  return h.digest();
}

void Dataset::validate() const {
  if (sequences.empty()) throw DegenerateError("dataset has no sequences");
  const std::size_t k = feature_dim(), l = subseq();
  for (const auto& s : sequences) {
    if (s.xa.dim() != k || s.xv.dim() != k || s.xa.length() != l || s.xv.length() != l)
      throw ShapeError("sequence " + s.id() + " has inconsistent feature shapes");
    if (s.valence.size() != l || s.arousal.size() != l || s.corruption.size() != l)
      throw ShapeError("sequence " + s.id() + " has inconsistent label lengths");
  }
}

void save_dataset(const Dataset& d, const std::filesystem::path& path) {
  const auto ext = path.extension();
  save_dataset(d, path, ext == ".txt" || ext == ".tsv" ? DatasetFormat::text : DatasetFormat::binary);
}

void save_dataset(const Dataset& d, const std::filesystem::path& path, DatasetFormat format) {
  d.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write dataset " + path.string());
  if (format == DatasetFormat::binary)
    write_binary(d, out);
  else
    write_text(d, out);
  if (!out) throw IoError("failed writing dataset " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read dataset " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string name = path.string();
  Dataset d;
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), kBinaryMagic, 8) == 0) {
    Reader r(std::move(bytes), name);
    d = read_binary(r, name);
  } else if (bytes.size() >= kTextMagic.size() &&
             std::memcmp(bytes.data(), kTextMagic.data(), kTextMagic.size()) == 0) {
    d = read_text(std::string(bytes.begin(), bytes.end()), name);
  } else {
    throw FormatError(name + ": not a cavf dataset (unrecognised header)");
  }
  d.validate();
  return d;
}

}  // namespace cavf
