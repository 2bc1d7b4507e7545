#include "cavf/checkpoint.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <vector>

#include "cavf/errors.hpp"
#include "cavf/textio.hpp"

namespace cavf {

namespace {

constexpr std::string_view kMagic = "cavf-checkpoint";
constexpr std::uint64_t kVersion = 1;

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t parse_hex64(std::string_view s) {
  std::uint64_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v, 16);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw FormatError("checkpoint: bad fingerprint '" + std::string(s) + "'");
  return v;
}

void put_matrix(std::string& out, const std::string& name, const Matrix& m) {
  out += "matrix " + name + ' ' + std::to_string(m.rows()) + ' ' + std::to_string(m.cols()) + '\n';
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) out += ' ';
      out += format_double(row[c]);
    }
    out += '\n';
  }
}

std::vector<std::string> words(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream is(line);
  for (std::string w; is >> w;) out.push_back(w);
  return out;
}

class LineReader {
 public:
  explicit LineReader(const std::string& text) : in_(text) {}

  std::string line() {
    std::string l;
    if (!std::getline(in_, l)) throw FormatError("checkpoint: unexpected end of file");
    ++number_;
    return l;
  }
  // Reads `key value`, where value is the rest of the line.
  std::string field(std::string_view key) {
    const std::string l = line();
    if (l.size() <= key.size() || l.compare(0, key.size(), key) != 0 || l[key.size()] != ' ')
      throw FormatError("checkpoint line " + std::to_string(number_) + ": expected '" + std::string(key) + "'");
    return l.substr(key.size() + 1);
  }
  Matrix matrix(std::string_view name) {
    const auto head = words(line());
    if (head.size() != 4 || head[0] != "matrix" || head[1] != name)
      throw FormatError("checkpoint line " + std::to_string(number_) + ": expected matrix " + std::string(name));
    Matrix m(parse_u64(head[2]), parse_u64(head[3]));
    for (std::size_t r = 0; r < m.rows(); ++r) {
      const auto values = words(line());
      if (values.size() != m.cols())
        throw FormatError("checkpoint line " + std::to_string(number_) + ": expected " + std::to_string(m.cols()) +
                          " values");
      for (std::size_t c = 0; c < m.cols(); ++c) m(r, c) = parse_double(values[c]);
    }
    return m;
  }
  bool at_end() {
    in_ >> std::ws;
    return in_.eof();
  }

 private:
  std::istringstream in_;
  std::size_t number_ = 0;
};

}  // namespace

std::string format_checkpoint(const Checkpoint& c) {
  validate(c.params);
  const FusionParams& p = c.params;
  std::string out;
  out += std::string(kMagic) + ' ' + std::to_string(kVersion) + '\n';
  out += "variant " + std::string(to_string(p.variant)) + '\n';
  out += "target " + std::string(to_string(c.target)) + '\n';
  out += "temperature " + format_double(p.temperature) + '\n';
  out += "seed " + std::to_string(c.seed) + '\n';
  out += "dataset_fingerprint " + hex64(c.dataset_fingerprint) + '\n';
  if (c.config_json.find('\n') != std::string::npos) throw FormatError("checkpoint config must be a single line");
  out += "config " + c.config_json + '\n';
  for (std::size_t i = 0; i < p.w.size(); ++i) put_matrix(out, "w" + std::to_string(i), p.w[i]);
  put_matrix(out, "fc1_w", p.fc1_w);
  out += "vector fc1_b " + std::to_string(p.fc1_b.size()) + '\n';
  for (std::size_t i = 0; i < p.fc1_b.size(); ++i) out += (i ? " " : "") + format_double(p.fc1_b[i]);
  out += '\n';
  put_matrix(out, "fc2_w", p.fc2_w);
  out += "scalar fc2_b " + format_double(p.fc2_b) + '\n';
  out += "end\n";
  return out;
}

Checkpoint parse_checkpoint(const std::string& text) {
  LineReader in(text);
  const auto head = words(in.line());
  if (head.size() != 2 || head[0] != kMagic) throw FormatError("not a cavf checkpoint (bad header)");
  if (parse_u64(head[1]) != kVersion)
    throw VersionError("checkpoint format version " + head[1] + ", expected " + std::to_string(kVersion));

  Checkpoint c;
  const std::string variant = in.field("variant");
  const auto v = parse_variant(variant);
  if (!v) throw FormatError("checkpoint: unknown variant '" + variant + "'");
  c.params.variant = *v;
  const std::string target = in.field("target");
  const auto t = parse_target(target);
  if (!t) throw FormatError("checkpoint: unknown target '" + target + "'");
  c.target = *t;
  c.params.temperature = parse_double(in.field("temperature"));
  c.seed = parse_u64(in.field("seed"));
  c.dataset_fingerprint = parse_hex64(in.field("dataset_fingerprint"));
  c.config_json = in.field("config");
  for (std::size_t i = 0; i < attention_matrix_count(c.params.variant); ++i)
    c.params.w.push_back(in.matrix("w" + std::to_string(i)));
  c.params.fc1_w = in.matrix("fc1_w");
  const auto bias_head = words(in.line());
  if (bias_head.size() != 3 || bias_head[0] != "vector" || bias_head[1] != "fc1_b")
    throw FormatError("checkpoint: expected vector fc1_b");
  const auto bias = words(in.line());
  if (bias.size() != parse_u64(bias_head[2])) throw FormatError("checkpoint: fc1_b length disagrees with header");
  for (const auto& b : bias) c.params.fc1_b.push_back(parse_double(b));
  c.params.fc2_w = in.matrix("fc2_w");
  const auto scalar = words(in.line());
  if (scalar.size() != 3 || scalar[0] != "scalar" || scalar[1] != "fc2_b")
    throw FormatError("checkpoint: expected scalar fc2_b");
  c.params.fc2_b = parse_double(scalar[2]);
  if (in.line() != "end") throw FormatError("checkpoint: missing end marker");
  if (!in.at_end()) throw FormatError("checkpoint: trailing content after end marker");
  try {
    validate(c.params);
  } catch (const std::exception& e) {
    throw FormatError(std::string("checkpoint: inconsistent tensors: ") + e.what());
  }
  return c;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  write_text_file(path, format_checkpoint(c));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(read_text_file(path)); }

}  // namespace cavf
