#include "ulm/evalsuite.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "ulm/errors.hpp"
#include "ulm/generator.hpp"
#include "ulm/parallel.hpp"

namespace ulm {

void validate(const PairwiseBenchmark& b) {
  std::set<std::string> ids;
  for (const auto& p : b.pairs) {
    if (!ids.insert(p.id).second) throw ValidationError("benchmark: duplicate pair id " + p.id);
    validate(p.positive);
    validate(p.negative);
    if (p.positive.vocab_size != b.vocab_size || p.negative.vocab_size != b.vocab_size) {
      throw ValidationError("benchmark: pair " + p.id + " does not share the benchmark vocab");
    }
  }
}

SequenceScore CheckpointScorer::score(const TokenSequence& z) const {
  return sequence_log_prob(ckpt_, z, precision_);
}

double geometric_mean_prob(const SequenceScore& s) { return std::exp(s.mean_logprob); }

JudgeResult judge_pair(const SequenceScorer& scorer, const TokenSequence& pos,
                       const TokenSequence& neg, std::string id) {
  JudgeResult r;
  r.id = std::move(id);
  r.pos_score = geometric_mean_prob(scorer.score(pos));
  r.neg_score = geometric_mean_prob(scorer.score(neg));
  r.correct = r.pos_score > r.neg_score;
  return r;
}

JudgeResult judge_pair(const Checkpoint& ckpt, const TokenSequence& pos, const TokenSequence& neg) {
  return judge_pair(CheckpointScorer(ckpt), pos, neg);
}

BenchmarkResult benchmark_accuracy(const SequenceScorer& scorer, const PairwiseBenchmark& b) {
  if (b.pairs.empty()) throw ValidationError("benchmark_accuracy: empty benchmark");
  BenchmarkResult out;
  out.results.resize(b.pairs.size());
  parallel_for(b.pairs.size(), [&](std::size_t i) {
    const auto& p = b.pairs[i];
    out.results[i] = judge_pair(scorer, p.positive, p.negative, p.id);
  });
  const auto correct = std::count_if(out.results.begin(), out.results.end(),
                                     [](const JudgeResult& r) { return r.correct; });
  out.accuracy = static_cast<double>(correct) / static_cast<double>(b.pairs.size());
  return out;
}

BenchmarkResult benchmark_accuracy(const Checkpoint& ckpt, const PairwiseBenchmark& b) {
  return benchmark_accuracy(CheckpointScorer(ckpt), b);
}

double repeated_ngram_fraction(const TokenSequence& z, int order) {
  if (order < 1) throw ValidationError("auto_bleu: n-gram order must be >= 1");
  const auto len = z.tokens.size();
  if (len < static_cast<std::size_t>(order)) {
    throw ValidationError("auto_bleu: sequence of length " + std::to_string(len) +
                          " is shorter than order " + std::to_string(order));
  }
  const std::size_t positions = len - static_cast<std::size_t>(order) + 1;
  std::map<std::vector<TokenId>, int> counts;
  for (std::size_t i = 0; i < positions; ++i) {
    ++counts[std::vector<TokenId>(z.tokens.begin() + static_cast<long>(i),
                                  z.tokens.begin() + static_cast<long>(i) + order)];
  }
  std::size_t repeated = 0;
  for (const auto& [gram, c] : counts) {
    if (c >= 2) repeated += static_cast<std::size_t>(c);
  }
  return static_cast<double>(repeated) / static_cast<double>(positions);
}

double auto_bleu(const TokenSequence& z, std::span<const int> orders) {
  if (orders.empty()) throw ValidationError("auto_bleu: no orders");
  double sum = 0.0;
  for (int n : orders) sum += repeated_ngram_fraction(z, n);
  return sum / static_cast<double>(orders.size());
}

double auto_bleu(const TokenSequence& z) {
  static constexpr int kOrders[] = {3, 4};
  return auto_bleu(z, kOrders);
}

namespace {

// Continuations shorter than the largest order carry no repeated n-gram.
double continuation_auto_bleu(const TokenSequence& z) {
  return z.tokens.size() < 4 ? 0.0 : auto_bleu(z);
}

}  // namespace

CalibrationResult calibrate_temperature(const Checkpoint& ckpt, const Corpus& prompts,
                                        const Corpus& references,
                                        std::span<const double> temp_grid, int gen_len,
                                        std::uint64_t seed) {
  if (temp_grid.empty()) throw ValidationError("calibrate_temperature: empty temperature grid");
  if (prompts.empty()) throw ValidationError("calibrate_temperature: no prompts");
  if (prompts.size() != references.size()) {
    throw ValidationError("calibrate_temperature: prompts and references are not aligned");
  }
  CalibrationResult out;
  double ref_sum = 0.0;
  for (const auto& r : references) ref_sum += continuation_auto_bleu(r);
  out.reference_mean = ref_sum / static_cast<double>(references.size());

  for (double t : temp_grid) {
    const Corpus gens = generate_all(ckpt, prompts, gen_len, t, seed);
    double sum = 0.0;
    for (std::size_t i = 0; i < gens.size(); ++i) {
      sum += continuation_auto_bleu(continuation(gens[i], prompts[i]));
    }
    CalibrationRow row;
    row.temperature = t;
    row.mean_auto_bleu = sum / static_cast<double>(gens.size());
    row.gap = std::abs(row.mean_auto_bleu - out.reference_mean);
    out.table.push_back(row);
  }
  const CalibrationRow* best = &out.table.front();
  for (const auto& row : out.table) {
    if (row.gap < best->gap || (row.gap == best->gap && row.temperature < best->temperature)) {
      best = &row;
    }
  }
  out.temperature = best->temperature;
  return out;
}

}  // namespace ulm
