#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ulm/checkpoint.hpp"

namespace ulm {

struct SurgeryReport {
  std::vector<std::string> preserved;  // byte-identical between source and result
  std::vector<std::string> replaced;
  std::string source_hash;
  std::uint64_t seed = 0;
  bool operator==(const SurgeryReport&) const = default;
};

struct SurgeryResult {
  Checkpoint checkpoint;
  SurgeryReport report;
};

// Swaps the vocabulary-bound tensors of `source` for fresh Normal(0, init_std^2)
// draws sized to `vocab`, and copies every other tensor unchanged. The token
// embedding is replaced even when the vocabulary size is unchanged.
SurgeryResult twist_init(const Checkpoint& source, const Vocabulary& vocab, std::uint64_t seed);

// Compares per-tensor byte hashes of the two checkpoints. Throws
// SurgeryViolation if the configs differ in anything but vocab_size, or if
// `result` claims to be warm-started from `source` yet a body tensor differs.
SurgeryReport verify_surgery(const Checkpoint& source, const Checkpoint& result);

std::string surgery_report_to_json(const SurgeryReport& report);

}  // namespace ulm
