#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ulm/checkpoint.hpp"
#include "ulm/types.hpp"

namespace ulm {

struct Codebook;
struct PairwiseBenchmark;

namespace fs = std::filesystem;
using Bytes = std::vector<std::byte>;

// Writes via a sibling temp file and rename, so readers never observe a
// partial file.
void write_file_atomic(const fs::path& path, std::span<const std::byte> bytes);
void write_file_atomic(const fs::path& path, std::string_view text);
Bytes read_file(const fs::path& path);
std::string read_text_file(const fs::path& path);

// Features: "ULMFEAT1" | u32 dim | u32 frames | u32 rate_mhz | f32 frames.
Bytes encode_features(const FeatureSequence& x);
FeatureSequence decode_features(std::span<const std::byte> bytes);
void write_features(const fs::path& path, const FeatureSequence& x);
FeatureSequence read_features(const fs::path& path);

// Token corpora: one sequence per line, ids separated by one space, "\n".
std::string encode_tokens(const Corpus& corpus);
Corpus decode_tokens(std::string_view text, int vocab_size);
void write_tokens(const fs::path& path, const Corpus& corpus);
Corpus read_tokens(const fs::path& path, int vocab_size);

// Checkpoints: "ULMCKPT1" | u64 header_len | JSON header | f32 blob.
Bytes encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::byte> bytes);
void write_checkpoint(const fs::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const fs::path& path);

// SHA-256 of the canonical encoding; equals the hash of the file bytes.
std::string checkpoint_hash(const Checkpoint& ckpt);

// Codebooks: "ULMCBK01" | u64 header_len | JSON header | f32 centroids.
Bytes encode_codebook(const Codebook& cb);
Codebook decode_codebook(std::span<const std::byte> bytes);
void write_codebook(const fs::path& path, const Codebook& cb);
Codebook read_codebook(const fs::path& path);

// Benchmarks: JSON {name, vocab_size, pairs: [{id, positive, negative}]}.
std::string encode_benchmark(const PairwiseBenchmark& b);
PairwiseBenchmark decode_benchmark(std::string_view text);
void write_benchmark(const fs::path& path, const PairwiseBenchmark& b);
PairwiseBenchmark read_benchmark(const fs::path& path);

struct MetricEntry {
  enum class Kind { kAccuracy, kPerplexity, kOther };
  std::string name;
  double value = 0.0;
  std::int64_t n = 0;
  std::string config_hash;
  Kind kind = Kind::kOther;

  bool operator==(const MetricEntry&) const = default;
};

struct EvalReport {
  std::vector<MetricEntry> metrics;
  std::int64_t seed = 0;
  std::string timestamp;
  std::string config_json = "{}";  // resolved configuration echo

  const MetricEntry* find(const std::string& name) const;
  bool operator==(const EvalReport&) const = default;
};

void validate(const EvalReport& report);
std::string encode_report(const EvalReport& report);
EvalReport decode_report(std::string_view text);
void write_report(const fs::path& path, const EvalReport& report);
EvalReport read_report(const fs::path& path);

// Report timestamp: SOURCE_DATE_EPOCH (UTC, ISO-8601) when set, else the
// epoch, so reports stay byte-reproducible.
std::string report_timestamp();

}  // namespace ulm
