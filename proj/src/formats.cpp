#include "ulm/formats.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <ctime>
#include <fstream>
#include <set>
#include <system_error>

#include <json.hpp>

#include "ulm/errors.hpp"
#include "ulm/evalsuite.hpp"
#include "ulm/hash.hpp"
#include "ulm/tokenizer.hpp"

namespace ulm {

using json = nlohmann::json;

namespace {

constexpr std::string_view kFeatureMagic = "ULMFEAT1";
constexpr std::string_view kCheckpointMagic = "ULMCKPT1";
constexpr std::string_view kCodebookMagic = "ULMCBK01";

void put_u32(Bytes& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xFF));
}

void put_u64(Bytes& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xFF));
}

void put_f32(Bytes& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

void put_text(Bytes& out, std::string_view s) {
  for (char c : s) out.push_back(static_cast<std::byte>(c));
}

// Bounds-checked little-endian reader; running out of input is a
// truncation error.
class Reader {
 public:
  Reader(std::span<const std::byte> bytes, std::string what) : b_(bytes), what_(std::move(what)) {}

  void need(std::uint64_t n) const {
    if (n > remaining()) throw TruncationError(what_ + ": truncated input");
  }
  std::uint64_t remaining() const { return b_.size() - pos_; }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string text(std::uint64_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), static_cast<std::size_t>(n));
    pos_ += n;
    return s;
  }

  void magic(std::string_view expected) {
    const std::size_t have = std::min<std::size_t>(b_.size(), expected.size());
    if (std::memcmp(b_.data(), expected.data(), have) != 0) {
      throw FormatError(what_ + ": bad magic");
    }
    need(expected.size());
    pos_ += expected.size();
  }

  void expect_end() const {
    if (remaining() != 0) throw FormatError(what_ + ": trailing bytes after payload");
  }

 private:
  std::span<const std::byte> b_;
  std::string what_;
  std::size_t pos_ = 0;
};

json parse_json(std::string_view text, const std::string& what) {
  try {
    return json::parse(text.begin(), text.end());
  } catch (const json::exception& e) {
    throw FormatError(what + ": malformed JSON: " + e.what());
  }
}

// Rejects missing and unknown keys.
void require_keys(const json& j, const std::set<std::string>& keys, const std::string& what) {
  if (!j.is_object()) throw FormatError(what + ": expected a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (!keys.count(k)) throw ValidationError(what + ": unknown field '" + k + "'");
  }
  for (const auto& k : keys) {
    if (!j.contains(k)) throw ValidationError(what + ": missing field '" + k + "'");
  }
}

// json::get with type errors mapped to FormatError.
template <class T>
T get(const json& j, const char* key, const std::string& what) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw FormatError(what + ": bad field '" + key + "': " + e.what());
  }
}

json config_to_json(const ModelConfig& c) {
  return json{{"n_layers", c.n_layers},        {"d_model", c.d_model},
              {"n_heads", c.n_heads},          {"d_ff", c.d_ff},
              {"vocab_size", c.vocab_size},    {"max_seq_len", c.max_seq_len},
              {"dropout_p", c.dropout_p},      {"tie_embeddings", c.tie_embeddings},
              {"init_std", c.init_std}};
}

ModelConfig config_from_json(const json& j) {
  const std::string what = "model config";
  require_keys(j,
               {"n_layers", "d_model", "n_heads", "d_ff", "vocab_size", "max_seq_len", "dropout_p",
                "tie_embeddings", "init_std"},
               what);
  ModelConfig c;
  c.n_layers = get<int>(j, "n_layers", what);
  c.d_model = get<int>(j, "d_model", what);
  c.n_heads = get<int>(j, "n_heads", what);
  c.d_ff = get<int>(j, "d_ff", what);
  c.vocab_size = get<int>(j, "vocab_size", what);
  c.max_seq_len = get<int>(j, "max_seq_len", what);
  c.dropout_p = get<double>(j, "dropout_p", what);
  c.tie_embeddings = get<bool>(j, "tie_embeddings", what);
  c.init_std = get<double>(j, "init_std", what);
  validate(c);
  return c;
}

json tokens_to_json(const TokenSequence& z) { return json(z.tokens); }

TokenSequence tokens_from_json(const json& j, int vocab_size, const std::string& what) {
  if (!j.is_array()) throw FormatError(what + ": token list must be an array");
  TokenSequence z;
  z.vocab_size = vocab_size;
  for (const auto& v : j) {
    if (!v.is_number_integer()) throw FormatError(what + ": token ids must be integers");
    const auto id = v.get<std::int64_t>();
    if (id < 0 || id >= vocab_size) {
      throw ValidationError(what + ": token id " + std::to_string(id) + " out of range");
    }
    z.tokens.push_back(static_cast<TokenId>(id));
  }
  validate(z);
  return z;
}

}  // namespace

void write_file_atomic(const fs::path& path, std::span<const std::byte> bytes) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw IoError("write failed: " + tmp.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot rename into " + path.string());
  }
}

void write_file_atomic(const fs::path& path, std::string_view text) {
  write_file_atomic(path, std::as_bytes(std::span<const char>(text.data(), text.size())));
}

Bytes read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = in.tellg();
  in.seekg(0, std::ios::beg);
  Bytes b(static_cast<std::size_t>(size));
  in.read(reinterpret_cast<char*>(b.data()), size);
  if (!in) throw IoError("read failed: " + path.string());
  return b;
}

std::string read_text_file(const fs::path& path) {
  const Bytes b = read_file(path);
  return std::string(reinterpret_cast<const char*>(b.data()), b.size());
}

// ---------------------------------------------------------------- features

Bytes encode_features(const FeatureSequence& x) {
  validate(x);
  const double mhz = std::round(x.frame_rate_hz * 1000.0);
  if (mhz < 1.0 || mhz > 4294967295.0) throw ValidationError("frame rate not representable in mHz");
  Bytes out;
  out.reserve(20 + x.frames.size() * 4);
  put_text(out, kFeatureMagic);
  put_u32(out, x.dim);
  put_u32(out, static_cast<std::uint32_t>(x.num_frames()));
  put_u32(out, static_cast<std::uint32_t>(mhz));
  for (float f : x.frames) put_f32(out, f);
  return out;
}

FeatureSequence decode_features(std::span<const std::byte> bytes) {
  Reader r(bytes, "features");
  r.magic(kFeatureMagic);
  FeatureSequence x;
  x.dim = r.u32();
  const std::uint32_t n = r.u32();
  const std::uint32_t mhz = r.u32();
  if (x.dim == 0 || n == 0) throw ValidationError("features: empty dimension or frame count");
  if (mhz == 0) throw ValidationError("features: zero frame rate");
  x.frame_rate_hz = mhz / 1000.0;
  const std::uint64_t count = static_cast<std::uint64_t>(x.dim) * n;
  r.need(count * 4);
  x.frames.resize(static_cast<std::size_t>(count));
  for (auto& f : x.frames) f = r.f32();
  r.expect_end();
  validate(x);
  return x;
}

void write_features(const fs::path& path, const FeatureSequence& x) {
  write_file_atomic(path, encode_features(x));
}

FeatureSequence read_features(const fs::path& path) { return decode_features(read_file(path)); }

// ------------------------------------------------------------------ tokens

std::string encode_tokens(const Corpus& corpus) {
  std::string out;
  for (const auto& z : corpus) {
    validate(z);
    if (z.vocab_size != corpus.front().vocab_size) {
      throw ValidationError("tokens: sequences do not share vocab_size");
    }
    for (std::size_t i = 0; i < z.tokens.size(); ++i) {
      if (i) out.push_back(' ');
      out += std::to_string(z.tokens[i]);
    }
    out.push_back('\n');
  }
  return out;
}

Corpus decode_tokens(std::string_view text, int vocab_size) {
  if (vocab_size < 1) throw ValidationError("tokens: vocab_size must be >= 1");
  Corpus corpus;
  if (text.empty()) return corpus;
  if (text.back() != '\n') throw FormatError("tokens: missing final newline");
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    ++line_no;
    const std::size_t eol = text.find('\n', pos);
    const std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    const std::string where = "tokens line " + std::to_string(line_no);
    if (line.empty()) throw ValidationError(where + ": empty line");
    TokenSequence z;
    z.vocab_size = vocab_size;
    std::size_t i = 0;
    while (true) {
      const std::size_t end = std::min(line.find(' ', i), line.size());
      const std::string_view field = line.substr(i, end - i);
      if (field.empty()) throw FormatError(where + ": empty field");
      if (field.size() > 1 && field[0] == '0') throw FormatError(where + ": leading zero");
      std::uint64_t v = 0;
      auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
      if (ec == std::errc::result_out_of_range) {
        throw ValidationError(where + ": id out of range");
      }
      if (ec != std::errc{} || ptr != field.data() + field.size()) {
        throw FormatError(where + ": not a decimal id");
      }
      if (v >= static_cast<std::uint64_t>(vocab_size)) {
        throw ValidationError(where + ": id " + std::string(field) + " >= vocab_size " +
                              std::to_string(vocab_size));
      }
      z.tokens.push_back(static_cast<TokenId>(v));
      if (end == line.size()) break;
      i = end + 1;
    }
    corpus.push_back(std::move(z));
  }
  return corpus;
}

void write_tokens(const fs::path& path, const Corpus& corpus) {
  write_file_atomic(path, encode_tokens(corpus));
}

Corpus read_tokens(const fs::path& path, int vocab_size) {
  return decode_tokens(read_text_file(path), vocab_size);
}

// ------------------------------------------------------------- checkpoints

Bytes encode_checkpoint(const Checkpoint& ckpt) {
  validate(ckpt);
  json manifest = json::array();
  std::uint64_t offset = 0;
  for (const auto& t : ckpt.tensors) {
    manifest.push_back({{"name", t.name}, {"shape", t.tensor.shape}, {"offset", offset}});
    offset += t.tensor.data.size() * 4;
  }
  const json header{{"format", "ulm-checkpoint"},
                    {"version", 1},
                    {"config", config_to_json(ckpt.config)},
                    {"provenance", ckpt.provenance.tag()},
                    {"init_seed", ckpt.provenance.seed},
                    {"step", ckpt.step},
                    {"tensors", manifest}};
  const std::string h = header.dump();
  Bytes out;
  out.reserve(16 + h.size() + offset);
  put_text(out, kCheckpointMagic);
  put_u64(out, h.size());
  put_text(out, h);
  for (const auto& t : ckpt.tensors) {
    for (float f : t.tensor.data) put_f32(out, f);
  }
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::byte> bytes) {
  const std::string what = "checkpoint";
  Reader r(bytes, what);
  r.magic(kCheckpointMagic);
  const std::uint64_t header_len = r.u64();
  const json header = parse_json(r.text(header_len), what);
  require_keys(header, {"format", "version", "config", "provenance", "init_seed", "step", "tensors"},
               what);
  if (get<std::string>(header, "format", what) != "ulm-checkpoint" ||
      get<int>(header, "version", what) != 1) {
    throw FormatError("checkpoint: unsupported format/version");
  }
  Checkpoint ckpt;
  ckpt.config = config_from_json(header.at("config"));
  ckpt.provenance = Provenance::parse(get<std::string>(header, "provenance", what),
                                      get<std::uint64_t>(header, "init_seed", what));
  ckpt.step = get<std::int64_t>(header, "step", what);
  const json& manifest = header.at("tensors");
  if (!manifest.is_array()) throw FormatError("checkpoint: tensor manifest must be an array");
  std::uint64_t offset = 0;
  for (const auto& m : manifest) {
    require_keys(m, {"name", "shape", "offset"}, "tensor manifest");
    NamedTensor nt;
    nt.name = get<std::string>(m, "name", what);
    nt.tensor.shape = get<std::vector<std::int64_t>>(m, "shape", what);
    if (get<std::uint64_t>(m, "offset", what) != offset) {
      throw FormatError("checkpoint: non-contiguous offset for " + nt.name);
    }
    std::uint64_t n = 1;
    for (auto s : nt.tensor.shape) {
      if (s < 0 || s > (1LL << 40)) throw ValidationError("checkpoint: bad shape for " + nt.name);
      n *= static_cast<std::uint64_t>(s);
      if (n > (1ULL << 40)) throw ValidationError("checkpoint: tensor too large: " + nt.name);
    }
    offset += n * 4;
    ckpt.tensors.push_back(std::move(nt));
  }
  r.need(offset);
  for (auto& t : ckpt.tensors) {
    t.tensor.data.resize(static_cast<std::size_t>(t.tensor.numel()));
    for (auto& f : t.tensor.data) f = r.f32();
  }
  r.expect_end();
  validate(ckpt);
  return ckpt;
}

void write_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
  write_file_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint read_checkpoint(const fs::path& path) { return decode_checkpoint(read_file(path)); }

std::string checkpoint_hash(const Checkpoint& ckpt) { return sha256_hex(encode_checkpoint(ckpt)); }

// --------------------------------------------------------------- codebooks

Bytes encode_codebook(const Codebook& cb) {
  validate(cb);
  const json header{{"format", "ulm-codebook"},  {"version", 1},
                    {"dim", cb.dim},             {"k", cb.k},
                    {"seed", cb.seed},           {"iters", cb.iters_run},
                    {"distortion_trace", cb.distortion_trace}};
  const std::string h = header.dump();
  Bytes out;
  put_text(out, kCodebookMagic);
  put_u64(out, h.size());
  put_text(out, h);
  for (float f : cb.centroids) put_f32(out, f);
  return out;
}

Codebook decode_codebook(std::span<const std::byte> bytes) {
  const std::string what = "codebook";
  Reader r(bytes, what);
  r.magic(kCodebookMagic);
  const std::uint64_t header_len = r.u64();
  const json header = parse_json(r.text(header_len), what);
  require_keys(header, {"format", "version", "dim", "k", "seed", "iters", "distortion_trace"}, what);
  if (get<std::string>(header, "format", what) != "ulm-codebook" ||
      get<int>(header, "version", what) != 1) {
    throw FormatError("codebook: unsupported format/version");
  }
  Codebook cb;
  cb.dim = get<std::uint32_t>(header, "dim", what);
  cb.k = get<std::uint32_t>(header, "k", what);
  cb.seed = get<std::uint64_t>(header, "seed", what);
  cb.iters_run = get<std::uint32_t>(header, "iters", what);
  cb.distortion_trace = get<std::vector<double>>(header, "distortion_trace", what);
  if (cb.dim == 0 || cb.k == 0) throw ValidationError("codebook: zero dim or k");
  const std::uint64_t n = static_cast<std::uint64_t>(cb.dim) * cb.k;
  r.need(n * 4);
  cb.centroids.resize(static_cast<std::size_t>(n));
  for (auto& f : cb.centroids) f = r.f32();
  r.expect_end();
  validate(cb);
  return cb;
}

void write_codebook(const fs::path& path, const Codebook& cb) {
  write_file_atomic(path, encode_codebook(cb));
}

Codebook read_codebook(const fs::path& path) { return decode_codebook(read_file(path)); }

// -------------------------------------------------------------- benchmarks

std::string encode_benchmark(const PairwiseBenchmark& b) {
  validate(b);
  json pairs = json::array();
  for (const auto& p : b.pairs) {
    pairs.push_back({{"id", p.id},
                     {"positive", tokens_to_json(p.positive)},
                     {"negative", tokens_to_json(p.negative)}});
  }
  const json j{{"name", b.name}, {"vocab_size", b.vocab_size}, {"pairs", pairs}};
  return j.dump() + "\n";
}

PairwiseBenchmark decode_benchmark(std::string_view text) {
  const std::string what = "benchmark";
  const json j = parse_json(text, what);
  require_keys(j, {"name", "vocab_size", "pairs"}, what);
  PairwiseBenchmark b;
  b.name = get<std::string>(j, "name", what);
  b.vocab_size = get<std::int32_t>(j, "vocab_size", what);
  if (b.vocab_size < 1) throw ValidationError("benchmark: vocab_size must be >= 1");
  const json& pairs = j.at("pairs");
  if (!pairs.is_array()) throw FormatError("benchmark: pairs must be an array");
  for (const auto& p : pairs) {
    require_keys(p, {"id", "positive", "negative"}, "benchmark pair");
    BenchmarkPair bp;
    bp.id = get<std::string>(p, "id", what);
    bp.positive = tokens_from_json(p.at("positive"), b.vocab_size, what);
    bp.negative = tokens_from_json(p.at("negative"), b.vocab_size, what);
    b.pairs.push_back(std::move(bp));
  }
  validate(b);
  return b;
}

void write_benchmark(const fs::path& path, const PairwiseBenchmark& b) {
  write_file_atomic(path, encode_benchmark(b));
}

PairwiseBenchmark read_benchmark(const fs::path& path) {
  return decode_benchmark(read_text_file(path));
}

// ----------------------------------------------------------------- reports

namespace {

const char* kind_name(MetricEntry::Kind k) {
  switch (k) {
    case MetricEntry::Kind::kAccuracy: return "accuracy";
    case MetricEntry::Kind::kPerplexity: return "ppl";
    case MetricEntry::Kind::kOther: return "other";
  }
  return "other";
}

MetricEntry::Kind kind_from_name(const std::string& s) {
  if (s == "accuracy") return MetricEntry::Kind::kAccuracy;
  if (s == "ppl") return MetricEntry::Kind::kPerplexity;
  if (s == "other") return MetricEntry::Kind::kOther;
  throw ValidationError("report: unknown metric kind '" + s + "'");
}

}  // namespace

const MetricEntry* EvalReport::find(const std::string& name) const {
  for (const auto& m : metrics) {
    if (m.name == name) return &m;
  }
  return nullptr;
}

void validate(const EvalReport& report) {
  for (const auto& m : report.metrics) {
    if (!std::isfinite(m.value)) throw ValidationError("report: non-finite value for " + m.name);
    if (m.n < 0) throw ValidationError("report: negative count for " + m.name);
    if (m.kind == MetricEntry::Kind::kAccuracy && (m.value < 0.0 || m.value > 1.0)) {
      throw ValidationError("report: accuracy outside [0,1] for " + m.name);
    }
    if (m.kind == MetricEntry::Kind::kPerplexity && m.value < 1.0) {
      throw ValidationError("report: perplexity below 1 for " + m.name);
    }
  }
}

std::string encode_report(const EvalReport& report) {
  validate(report);
  json metrics = json::array();
  for (const auto& m : report.metrics) {
    metrics.push_back({{"name", m.name},
                       {"value", m.value},
                       {"n", m.n},
                       {"config_hash", m.config_hash},
                       {"kind", kind_name(m.kind)}});
  }
  const json j{{"metrics", metrics},
               {"seed", report.seed},
               {"timestamp", report.timestamp},
               {"config", parse_json(report.config_json, "report config")}};
  return j.dump(2) + "\n";
}

EvalReport decode_report(std::string_view text) {
  const std::string what = "report";
  const json j = parse_json(text, what);
  require_keys(j, {"metrics", "seed", "timestamp", "config"}, what);
  EvalReport r;
  r.seed = get<std::int64_t>(j, "seed", what);
  r.timestamp = get<std::string>(j, "timestamp", what);
  r.config_json = j.at("config").dump();
  const json& metrics = j.at("metrics");
  if (!metrics.is_array()) throw FormatError("report: metrics must be an array");
  for (const auto& m : metrics) {
    require_keys(m, {"name", "value", "n", "config_hash", "kind"}, "report metric");
    MetricEntry e;
    e.name = get<std::string>(m, "name", what);
    e.value = get<double>(m, "value", what);
    e.n = get<std::int64_t>(m, "n", what);
    e.config_hash = get<std::string>(m, "config_hash", what);
    e.kind = kind_from_name(get<std::string>(m, "kind", what));
    r.metrics.push_back(std::move(e));
  }
  validate(r);
  return r;
}

void write_report(const fs::path& path, const EvalReport& report) {
  write_file_atomic(path, encode_report(report));
}

EvalReport read_report(const fs::path& path) { return decode_report(read_text_file(path)); }

std::string report_timestamp() {
  std::time_t t = 0;
  if (const char* s = std::getenv("SOURCE_DATE_EPOCH")) t = static_cast<std::time_t>(std::atoll(s));
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace ulm
