#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ulm/checkpoint.hpp"
#include "ulm/model.hpp"
#include "ulm/types.hpp"

namespace ulm {

struct BenchmarkPair {
  std::string id;
  TokenSequence positive;
  TokenSequence negative;
  bool operator==(const BenchmarkPair&) const = default;
};

// Matched (positive, negative) pairs: sWUGGY / sBLIMP / StoryCloze style.
struct PairwiseBenchmark {
  std::string name;
  std::int32_t vocab_size = 0;
  std::vector<BenchmarkPair> pairs;
  bool operator==(const PairwiseBenchmark&) const = default;
};

void validate(const PairwiseBenchmark& b);

// Anything that can assign a log-probability to a token sequence.
class SequenceScorer {
 public:
  virtual ~SequenceScorer() = default;
  virtual SequenceScore score(const TokenSequence& z) const = 0;
};

class CheckpointScorer final : public SequenceScorer {
 public:
  explicit CheckpointScorer(const Checkpoint& ckpt, Precision precision = Precision::kF32)
      : ckpt_(ckpt), precision_(precision) {}
  SequenceScore score(const TokenSequence& z) const override;

 private:
  const Checkpoint& ckpt_;
  Precision precision_;
};

struct JudgeResult {
  std::string id;
  double pos_score = 0.0;  // geometric-mean probability
  double neg_score = 0.0;
  bool correct = false;    // pos_score > neg_score, strictly
};

// exp(total_logprob / n_scored), using the running mean of log-probs.
double geometric_mean_prob(const SequenceScore& s);

JudgeResult judge_pair(const SequenceScorer& scorer, const TokenSequence& pos,
                       const TokenSequence& neg, std::string id = {});
JudgeResult judge_pair(const Checkpoint& ckpt, const TokenSequence& pos, const TokenSequence& neg);

struct BenchmarkResult {
  double accuracy = 0.0;
  std::vector<JudgeResult> results;
};

// Pairs are judged independently (in parallel up to thread_limit()).
BenchmarkResult benchmark_accuracy(const SequenceScorer& scorer, const PairwiseBenchmark& b);
BenchmarkResult benchmark_accuracy(const Checkpoint& ckpt, const PairwiseBenchmark& b);

// Fraction of n-gram positions whose n-gram occurs at least twice in z.
double repeated_ngram_fraction(const TokenSequence& z, int order);

// Mean of repeated_ngram_fraction over the orders (default {3, 4}).
double auto_bleu(const TokenSequence& z, std::span<const int> orders);
double auto_bleu(const TokenSequence& z);

struct CalibrationRow {
  double temperature = 0.0;
  double mean_auto_bleu = 0.0;
  double gap = 0.0;  // |mean_auto_bleu - reference_mean|
};

struct CalibrationResult {
  double temperature = 0.0;
  double reference_mean = 0.0;
  std::vector<CalibrationRow> table;  // one row per grid temperature, grid order
};

// For each temperature, one continuation of gen_len tokens per prompt;
// picks the temperature whose mean continuation auto-BLEU is closest to
// the references' mean. Ties go to the lower temperature.
CalibrationResult calibrate_temperature(const Checkpoint& ckpt, const Corpus& prompts,
                                        const Corpus& references,
                                        std::span<const double> temp_grid, int gen_len,
                                        std::uint64_t seed);

}  // namespace ulm
