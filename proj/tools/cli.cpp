#include "cli.hpp"

#include <omp.h>

#include <CLI11.hpp>
#include <algorithm>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <map>
#include <ostream>
#include <sstream>

#include "cavf/audio.hpp"
#include "cavf/checkpoint.hpp"
#include "cavf/errors.hpp"
#include "cavf/gradcheck.hpp"
#include "cavf/metrics.hpp"
#include "cavf/postproc.hpp"
#include "cavf/synth.hpp"
#include "cavf/textio.hpp"
#include "cavf/trainer.hpp"

namespace cavf::cli {

namespace {

using Json = nlohmann::ordered_json;

constexpr int kConfigVersion = 1;

enum class Kind { count, real, text, flag };

struct Param {
  std::string name;
  Kind kind;
  Json fallback;  // null: required, unless `optional`
  std::string help;
  bool optional = false;
};

struct Context {
  const Json& cfg;
  std::ostream& out;
  std::ostream& err;

  std::uint64_t count(const std::string& k) const { return cfg.at(k).get<std::uint64_t>(); }
  double real(const std::string& k) const { return cfg.at(k).get<double>(); }
  std::string text(const std::string& k) const { return cfg.at(k).get<std::string>(); }
  bool flag(const std::string& k) const { return cfg.at(k).get<bool>(); }
  bool has(const std::string& k) const { return !cfg.at(k).is_null(); }
};

struct Command {
  std::string name;
  std::string help;
  std::vector<Param> params;
  int (*handler)(const Context&);
};

// --- helpers ---------------------------------------------------------------

Json parse_flag_value(const Param& p, const std::string& raw) {
  switch (p.kind) {
    case Kind::count:
      try {
        return parse_u64(raw);
      } catch (const FormatError&) {
        throw ConfigError("--" + p.name + " expects a non-negative integer, got '" + raw + "'");
      }
    case Kind::real:
      try {
        return parse_double(raw);
      } catch (const FormatError&) {
        throw ConfigError("--" + p.name + " expects a number, got '" + raw + "'");
      }
    case Kind::text: return raw;
    case Kind::flag: return raw == "true";
  }
  return nullptr;
}

void check_config_value(const Param& p, const Json& v) {
  const bool ok = v.is_null() ? p.optional
                  : p.kind == Kind::count ? v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0)
                  : p.kind == Kind::real  ? v.is_number()
                  : p.kind == Kind::text  ? v.is_string()
                                          : v.is_boolean();
  if (!ok) throw ConfigError("config key '" + p.name + "' has the wrong type");
}

Json load_config_file(const std::string& path) {
  const std::string text = read_text_file(path);
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config file " + path + " must hold a JSON object");
  return j;
}

void write_json_file(const std::string& path, const Json& j) { write_text_file(path, j.dump(2) + "\n"); }

std::string config_path_for(const std::string& artifact) { return artifact + ".config.json"; }

void apply_threads(const Context& c) {
  const auto n = c.count("threads");
  if (n > 0) omp_set_num_threads(static_cast<int>(n));
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

std::string variant_names() { return "cross-attn, concat, self-attn, cross-attn-2stage"; }

Variant variant_from(const std::string& name) {
  const auto v = parse_variant(name);
  if (!v) throw ConfigError("unknown model '" + name + "' (valid: " + variant_names() + ")");
  return *v;
}

Target target_from(const std::string& name) {
  const auto t = parse_target(name);
  if (!t) throw ConfigError("unknown target '" + name + "' (valid: valence, arousal)");
  return *t;
}

std::string hex(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

// --- CSV traces --------------------------------------------------------------

PredictionTrace read_trace_csv(const std::string& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  if (!std::getline(in, line) || line.substr(0, 12) != "time_s,value")
    throw FormatError(path + ": expected CSV header 'time_s,value'");
  Vector times;
  PredictionTrace t;
  std::size_t number = 1;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw FormatError(path + " line " + std::to_string(number) + ": expected two columns");
    try {
      times.push_back(parse_double(line.substr(0, comma)));
      t.values.push_back(parse_double(line.substr(comma + 1)));
    } catch (const FormatError& e) {
      throw FormatError(path + " line " + std::to_string(number) + ": " + e.what());
    }
  }
  if (t.values.size() < 2) throw FormatError(path + ": need at least two samples");
  t.frame_period = times[1] - times[0];
  if (!(t.frame_period > 0.0)) throw FormatError(path + ": time_s must increase");
  return t;
}

void write_trace_csv(const std::string& path, const PredictionTrace& t) {
  std::string text = "time_s,value\n";
  for (std::size_t i = 0; i < t.values.size(); ++i)
    text += format_double(static_cast<double>(i) * t.frame_period) + "," + format_double(t.values[i]) + "\n";
  write_text_file(path, text);
}

// --- commands ----------------------------------------------------------------

int cmd_synth(const Context& c) {
  apply_threads(c);
  SyntheticSpec spec;
  spec.seed = c.count("seed");
  spec.n_sequences = c.count("sequences");
  spec.subseq_per_sequence = c.count("subseq");
  spec.feature_dim = c.count("dim");
  spec.occlusion_rate = c.real("occlusion");
  spec.silence_rate = c.real("silence");
  spec.noise_sigma = c.real("noise");
  spec.latent_smoothness = c.real("smoothness");
  spec.frames_per_subseq = c.count("frames-per-subseq");
  spec.validate();
  const std::string format = c.text("format");
  if (format != "auto" && format != "binary" && format != "text")
    throw ConfigError("--format must be auto, binary or text");

  const Dataset d = generate(spec);
  const std::string path = c.text("output");
  if (format == "auto")
    save_dataset(d, path);
  else
    save_dataset(d, path, format == "text" ? DatasetFormat::text : DatasetFormat::binary);
  write_json_file(config_path_for(path), c.cfg);
  c.out << "wrote " << d.sequences.size() << " sequences (K=" << d.feature_dim() << ", L=" << d.subseq()
        << ") to " << path << ", fingerprint " << hex(d.fingerprint()) << "\n";
  return kOk;
}

TrainConfig train_config_from(const Context& c) {
  TrainConfig t;
  t.variant = variant_from(c.text("model"));
  t.target = target_from(c.text("target"));
  t.hidden = c.count("hidden");
  t.temperature = c.real("temperature");
  t.learning_rate = c.real("lr");
  t.momentum = c.real("momentum");
  t.weight_decay = c.real("weight-decay");
  t.batch_size = c.count("batch-size");
  t.max_epochs = c.count("epochs");
  t.patience = c.count("patience");
  t.dropout_p = c.real("dropout");
  t.seed = c.count("seed");
  t.validate();
  return t;
}

int cmd_train(const Context& c) {
  apply_threads(c);
  const TrainConfig cfg = train_config_from(c);
  const Dataset d = load_dataset(c.text("data"));
  const Splits s = split_dataset(d, c.real("train-fraction"), c.real("val-fraction"));
  const TrainResult r = train(s.train, s.val, cfg);

  const std::string config_line = c.cfg.dump();
  Checkpoint ck{r.params, cfg.target, cfg.seed, d.fingerprint(), config_line};
  const std::string ckpt_path = c.text("checkpoint");
  save_checkpoint(ck, ckpt_path);
  write_json_file(config_path_for(ckpt_path), c.cfg);
  Json head;
  head["record"] = "config";
  head["config"] = c.cfg;
  write_text_file(c.text("report"), head.dump() + "\n" + r.report.to_json_lines());

  for (const auto& w : r.report.warnings) c.err << "warning: " << w << "\n";
  c.out << "model " << to_string(cfg.variant) << " target " << to_string(cfg.target) << ": "
        << r.report.epochs.size() << " epochs, best epoch " << r.report.best_epoch << ", best validation CCC "
        << fixed(r.report.best_val_ccc) << " (" << fixed(r.report.wall_time_s, 1) << " s)\n";
  c.out << "wrote " << ckpt_path << " and " << c.text("report") << "\n";
  return kOk;
}

int cmd_eval(const Context& c) {
  apply_threads(c);
  const Checkpoint ck = load_checkpoint(c.text("checkpoint"));
  Json trained;
  try {
    trained = Json::parse(ck.config_json);
  } catch (const nlohmann::json::parse_error&) {
    throw FormatError("checkpoint carries an unreadable config");
  }
  const auto fraction = [&](const std::string& key) {
    const double stored = trained.contains(key) ? trained.at(key).get<double>() : key == "train-fraction" ? 0.6 : 0.2;
    if (c.has(key) && c.real(key) != stored)
      throw ConfigError("--" + key + " " + format_double(c.real(key)) + " does not match the checkpoint's split (" +
                        format_double(stored) + ")");
    return stored;
  };
  const double train_fraction = fraction("train-fraction");
  const double val_fraction = fraction("val-fraction");

  const Dataset d = load_dataset(c.text("data"));
  if (d.fingerprint() != ck.dataset_fingerprint)
    throw FormatError("dataset fingerprint " + hex(d.fingerprint()) + " differs from the checkpoint's " +
                      hex(ck.dataset_fingerprint) + "; evaluate on the dataset the model was trained on");
  const Splits s = split_dataset(d, train_fraction, val_fraction);

  std::optional<PostprocConfig> pp;
  const std::string mode = c.text("postproc");
  Json pp_json = nullptr;
  if (mode == "search") {
    const Evaluation tune = evaluate(ck.params, split_by_name(s, c.text("tune-split")), ck.target);
    const ChainResult chain = chain_search(tune.predictions, tune.targets, PostprocConfig{}.grid);
    pp = chain.config;
    save_postproc_config(*pp, c.text("postproc-out"));
    pp_json = {{"mode", "search"}, {"tune_split", c.text("tune-split")}, {"file", c.text("postproc-out")},
               {"tune_ccc", chain.ccc}};
  } else if (mode.rfind("frozen:", 0) == 0) {
    pp = load_postproc_config(mode.substr(7));
    pp_json = {{"mode", "frozen"}, {"file", mode.substr(7)}};
  } else if (mode != "none") {
    throw ConfigError("--postproc must be none, search or frozen:<file>");
  }
  if (pp) {
    pp_json["median_window"] = pp->median_window;
    pp_json["bias"] = pp->bias;
    pp_json["scale"] = pp->scale;
    pp_json["pivot"] = pp->pivot;
    pp_json["lag"] = pp->lag;
  }

  Json report;
  report["format_version"] = kConfigVersion;
  report["config"] = c.cfg;
  report["model"] = to_string(ck.params.variant);
  report["target"] = to_string(ck.target);
  report["postproc"] = pp_json;
  Json splits = Json::object();
  c.out << "model " << to_string(ck.params.variant) << " target " << to_string(ck.target) << "\n";
  for (const std::string& name : split_list(c.text("split"))) {
    const Dataset& split = split_by_name(s, name);
    const Evaluation raw = evaluate(ck.params, split, ck.target);
    Json entry;
    entry["sequences"] = split.sequences.size();
    entry["raw_ccc"] = raw.ccc;
    c.out << "split " << name << ": raw CCC " << fixed(raw.ccc);
    if (pp) {
      const double post = frozen_ccc(*pp, raw.predictions, raw.targets);
      entry["postproc_ccc"] = post;
      c.out << ", post-processed CCC " << fixed(post);
    }
    c.out << "\n";
    splits[name] = entry;
  }
  report["splits"] = splits;
  write_json_file(c.text("report"), report);
  write_json_file(config_path_for(c.text("report")), c.cfg);
  return kOk;
}

int cmd_gradcheck(const Context& c) {
  apply_threads(c);
  GradcheckOptions o;
  o.variants.clear();
  for (const auto& name : split_list(c.text("models"))) o.variants.push_back(variant_from(name));
  if (o.variants.empty()) throw ConfigError("--models lists no variants");
  o.seeds = c.count("seeds");
  if (o.seeds == 0) throw ConfigError("--seeds must be >= 1");
  o.feature_dim = c.count("dim");
  o.length = c.count("length");
  o.hidden = c.count("hidden");
  if (o.feature_dim == 0 || o.length < 2 || o.hidden == 0)
    throw ConfigError("gradcheck needs dim >= 1, length >= 2 and hidden >= 1");
  o.step = c.real("step");
  o.tolerance = c.real("tolerance");
  o.perturb_w = c.flag("perturb-w");
  const GradcheckReport r = gradient_check(o);
  c.out << "gradcheck: " << o.seeds << " seeds per model (K=" << o.feature_dim << ", L=" << o.length
        << ", H=" << o.hidden << ", step " << format_double(o.step) << ")\n";
  c.out << std::left << std::setw(20) << "model" << std::setw(8) << "tensor" << std::setw(14) << "max_rel_err"
        << "result\n";
  for (const auto& row : r.rows) {
    std::ostringstream e;
    e << std::scientific << std::setprecision(3) << row.max_error;
    c.out << std::left << std::setw(20) << to_string(row.variant) << std::setw(8) << row.tensor << std::setw(14)
          << e.str() << (row.passed ? "pass" : "FAIL") << "\n";
  }
  c.out << (r.passed() ? "all tensors below " : "some tensors at or above ") << format_double(o.tolerance) << "\n";
  return r.passed() ? kOk : kNumeric;
}

int cmd_spectrogram(const Context& c) {
  apply_threads(c);
  const std::string preset = c.text("preset");
  SpectrogramOptions o;
  if (preset == "paper-shape")
    o = SpectrogramOptions::paper_shape();
  else if (preset != "default")
    throw ConfigError("--preset must be default or paper-shape");
  if (c.has("dft")) o.dft_len = c.count("dft");
  const std::string taper = c.text("taper");
  if (taper == "hann")
    o.taper = Taper::hann;
  else if (taper != "rectangular")
    throw ConfigError("--taper must be rectangular or hann");

  Waveform w = read_wav(c.text("input"));
  if (w.sample_rate != kTargetSampleRate) w = resample_linear(w, kTargetSampleRate);
  std::vector<Spectrogram> segments;
  try {
    segments = segment_spectrograms(w, o);
  } catch (const DegenerateError& e) {
    throw FormatError(c.text("input") + ": " + e.what());
  }
  std::string text = "cavf-spectrogram 1\nsegments " + std::to_string(segments.size()) + "\n";
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const Matrix& m = segments[i].data;
    text += "segment " + std::to_string(i) + " frames " + std::to_string(m.rows()) + " bins " +
            std::to_string(m.cols()) + "\n";
    for (std::size_t r = 0; r < m.rows(); ++r) {
      const auto row = m.row(r);
      for (std::size_t k = 0; k < row.size(); ++k) text += (k ? " " : "") + format_double(row[k]);
      text += "\n";
    }
    c.out << "segment " << i << ": " << m.rows() << " x " << m.cols() << "\n";
  }
  write_text_file(c.text("output"), text);
  write_json_file(config_path_for(c.text("output")), c.cfg);
  return kOk;
}

int cmd_postproc(const Context& c) {
  apply_threads(c);
  const PredictionTrace pred = read_trace_csv(c.text("prediction"));
  PredictionTrace ref = read_trace_csv(c.text("reference"));
  if (pred.values.size() != ref.values.size())
    throw FormatError("prediction and reference traces differ in length (" + std::to_string(pred.values.size()) +
                      " vs " + std::to_string(ref.values.size()) + ")");
  const double raw = ccc(pred.values, ref.values).ccc;
  PostprocConfig cfg;
  double post = 0.0;
  if (c.has("frozen")) {
    cfg = load_postproc_config(c.text("frozen"));
    post = frozen_ccc(cfg, pred, ref);
  } else {
    PostprocGrid grid;
    grid.windows.clear();
    for (const auto& w : split_list(c.text("windows"))) grid.windows.push_back(parse_u64(w));
    grid.lags = PostprocGrid::default_lags(c.count("max-lag"));
    const ChainResult r = chain_search(pred, ref, grid);
    cfg = r.config;
    post = r.ccc;
    save_postproc_config(cfg, c.text("output"));
    write_json_file(config_path_for(c.text("output")), c.cfg);
  }
  if (c.has("processed")) write_trace_csv(c.text("processed"), apply_postproc(cfg, pred));
  c.out << "raw CCC " << fixed(raw) << ", post-processed CCC " << fixed(post) << "\n";
  c.out << "median_window " << cfg.median_window << " bias " << format_double(cfg.bias) << " scale "
        << format_double(cfg.scale) << " lag " << cfg.lag << " frames\n";
  return kOk;
}

std::vector<Command> commands() {
  const Param threads{"threads", Kind::count, 0, "worker threads (0: OpenMP default, 1: bit-exact serial order)"};
  return {
      {"synth",
       "generate a synthetic audio-visual dataset",
       {{"seed", Kind::count, 1, "dataset seed"},
        {"sequences", Kind::count, 200, "number of sequences"},
        {"subseq", Kind::count, 8, "subsequences per sequence (L)"},
        {"dim", Kind::count, 32, "feature dimension (K)"},
        {"occlusion", Kind::real, 0.3, "probability a subsequence's visual column is noise"},
        {"silence", Kind::real, 0.3, "probability a subsequence's audio column is noise"},
        {"noise", Kind::real, 0.5, "feature noise standard deviation"},
        {"smoothness", Kind::real, 1.0, "latent smoothness (larger is slower)"},
        {"frames-per-subseq", Kind::count, 16, "label frames averaged per subsequence"},
        {"output", Kind::text, nullptr, "dataset path (.txt/.tsv selects the text layout)"},
        {"format", Kind::text, "auto", "auto, binary or text"},
        threads},
       cmd_synth},
      {"train",
       "train one fusion model for one target",
       {{"data", Kind::text, nullptr, "dataset file"},
        {"model", Kind::text, "cross-attn", "cross-attn, concat, self-attn or cross-attn-2stage"},
        {"target", Kind::text, "valence", "valence or arousal"},
        {"hidden", Kind::count, 64, "head hidden units (H)"},
        {"temperature", Kind::real, 1.0, "attention softmax temperature (T)"},
        {"lr", Kind::real, 1e-3, "learning rate"},
        {"momentum", Kind::real, 0.9, "SGD momentum"},
        {"weight-decay", Kind::real, 5e-4, "L2 decay on weight matrices"},
        {"batch-size", Kind::count, 16, "sequences per batch"},
        {"epochs", Kind::count, 100, "maximum epochs"},
        {"patience", Kind::count, 20, "epochs without validation improvement before stopping"},
        {"dropout", Kind::real, 0.5, "dropout on the joint attended features"},
        {"seed", Kind::count, 1, "initialisation, shuffling and dropout seed"},
        {"train-fraction", Kind::real, 0.6, "leading share of sequences (by id) used for training"},
        {"val-fraction", Kind::real, 0.2, "next share used for validation"},
        {"checkpoint", Kind::text, "model.ckpt", "checkpoint output path"},
        {"report", Kind::text, "report.jsonl", "training report output path"},
        threads},
       cmd_train},
      {"eval",
       "evaluate a checkpoint on dataset splits",
       {{"checkpoint", Kind::text, nullptr, "checkpoint file"},
        {"data", Kind::text, nullptr, "dataset file used for training"},
        {"split", Kind::text, "test", "comma-separated splits: train, val, test"},
        {"postproc", Kind::text, "none", "none, search or frozen:<file>"},
        {"tune-split", Kind::text, "val", "split used by --postproc search"},
        {"postproc-out", Kind::text, "postproc.cfg", "where --postproc search saves its config"},
        {"train-fraction", Kind::real, nullptr, "must match the checkpoint if given", true},
        {"val-fraction", Kind::real, nullptr, "must match the checkpoint if given", true},
        {"report", Kind::text, "eval.json", "evaluation report output path"},
        threads},
       cmd_eval},
      {"gradcheck",
       "compare analytic gradients with central differences",
       {{"models", Kind::text, "cross-attn,self-attn,cross-attn-2stage", "comma-separated variants"},
        {"seeds", Kind::count, 10, "random instances per model"},
        {"dim", Kind::count, 4, "feature dimension (K)"},
        {"length", Kind::count, 6, "subsequences (L)"},
        {"hidden", Kind::count, 8, "head hidden units (H)"},
        {"step", Kind::real, 1e-5, "finite-difference step"},
        {"tolerance", Kind::real, 1e-5, "maximum relative error"},
        {"perturb-w", Kind::flag, false, "corrupt the attention gradient (negative control)"},
        threads},
       cmd_gradcheck},
      {"spectrogram",
       "normalised log-power spectrograms of 5.12 s segments",
       {{"input", Kind::text, nullptr, "WAV file"},
        {"preset", Kind::text, "default", "default (DFT 1024) or paper-shape (DFT 256)"},
        {"dft", Kind::count, nullptr, "override the preset DFT length", true},
        {"taper", Kind::text, "rectangular", "rectangular or hann"},
        {"output", Kind::text, "spectrogram.txt", "output path"},
        threads},
       cmd_spectrogram},
      {"postproc",
       "search or replay the post-processing chain on CSV traces",
       {{"prediction", Kind::text, nullptr, "prediction CSV (time_s,value)"},
        {"reference", Kind::text, nullptr, "reference CSV (time_s,value)"},
        {"windows", Kind::text, "1,11,25,51,101,251,501", "median window candidates in frames"},
        {"max-lag", Kind::count, 250, "largest lag candidate in frames"},
        {"frozen", Kind::text, nullptr, "replay this config instead of searching", true},
        {"output", Kind::text, "postproc.cfg", "where the searched config is saved"},
        {"processed", Kind::text, nullptr, "optional CSV of the processed prediction", true},
        threads},
       cmd_postproc},
  };
}

Json resolve(const Command& cmd, const std::map<std::string, std::string>& flags, const std::string& config_path) {
  Json file = Json::object();
  if (!config_path.empty()) file = load_config_file(config_path);
  for (const auto& [key, value] : file.items()) {
    if (key == "format_version") {
      if (!value.is_number_unsigned() || value.get<std::uint64_t>() != kConfigVersion)
        throw VersionError("config format_version must be " + std::to_string(kConfigVersion));
      continue;
    }
    if (key == "command") {
      if (value != cmd.name) throw ConfigError("config was written for '" + value.dump() + "', not " + cmd.name);
      continue;
    }
    const bool known = std::any_of(cmd.params.begin(), cmd.params.end(), [&](const Param& p) { return p.name == key; });
    if (!known) throw ConfigError("config key '" + key + "' is not a " + cmd.name + " option");
  }

  Json resolved;
  resolved["format_version"] = kConfigVersion;
  resolved["command"] = cmd.name;
  for (const Param& p : cmd.params) {
    Json v = p.fallback;
    if (file.contains(p.name)) {
      v = file[p.name];
      check_config_value(p, v);
    }
    if (const auto it = flags.find(p.name); it != flags.end()) v = parse_flag_value(p, it->second);
    if (v.is_null() && !p.optional) throw ConfigError("--" + p.name + " is required");
    resolved[p.name] = v;
  }
  return resolved;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  const std::vector<Command> table = commands();
  CLI::App app{"Cross-attentional audio-visual fusion toolkit", "cavf"};
  app.require_subcommand(1);

  struct Bound {
    std::map<std::string, std::string> raw;
    std::map<std::string, bool> flags;
    std::map<std::string, CLI::Option*> options;
    std::string config;
  };
  std::vector<Bound> bound(table.size());
  std::vector<CLI::App*> subs;
  for (std::size_t i = 0; i < table.size(); ++i) {
    CLI::App* sub = app.add_subcommand(table[i].name, table[i].help);
    sub->add_option("--config", bound[i].config, "JSON config file; flags override its values");
    for (const Param& p : table[i].params) {
      std::string names = "--" + p.name;
      if (p.name == "output" || p.name == "checkpoint") names += p.name == "output" ? ",-o" : ",-c";
      if (p.kind == Kind::flag)
        bound[i].options[p.name] = sub->add_flag(names, bound[i].flags[p.name], p.help);
      else
        bound[i].options[p.name] = sub->add_option(names, bound[i].raw[p.name], p.help);
    }
    subs.push_back(sub);
  }

  std::vector<std::string> argv_store{"cavf"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  for (std::size_t i = 0; i < table.size(); ++i) {
    if (!subs[i]->parsed()) continue;
    const Command& cmd = table[i];
    try {
      std::map<std::string, std::string> given;
      for (const Param& p : cmd.params) {
        if (bound[i].options[p.name]->count() == 0) continue;
        given[p.name] = p.kind == Kind::flag ? (bound[i].flags[p.name] ? "true" : "false") : bound[i].raw[p.name];
      }
      const Json resolved = resolve(cmd, given, bound[i].config);
      out << "config " << resolved.dump() << "\n";
      return cmd.handler(Context{resolved, out, err});
    } catch (const ConfigError& e) {
      err << "cavf " << cmd.name << ": " << e.what() << "\n";
      return kUsage;
    } catch (const IoError& e) {
      err << "cavf " << cmd.name << ": " << e.what() << "\n";
      return kData;
    } catch (const FormatError& e) {
      err << "cavf " << cmd.name << ": " << e.what() << "\n";
      return kData;
    } catch (const ShapeError& e) {
      err << "cavf " << cmd.name << ": " << e.what() << "\n";
      return kData;
    } catch (const DegenerateError& e) {
      err << "cavf " << cmd.name << ": " << e.what() << "\n";
      return kNumeric;
    } catch (const DomainError& e) {
      err << "cavf " << cmd.name << ": " << e.what() << "\n";
      return kNumeric;
    } catch (const std::exception& e) {
      err << "cavf " << cmd.name << ": internal error: " << e.what() << "\n";
      return kInternal;
    }
  }
  return kUsage;
}

}  // namespace cavf::cli
