#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ulm/checkpoint.hpp"
#include "ulm/types.hpp"

namespace ulm {

enum class Precision { kF32, kF64 };

// Weights ~ Normal(0, init_std^2), biases 0, layer-norm gains 1.
Checkpoint cold_init(const ModelConfig& cfg, std::uint64_t seed);

// Row i holds p(. | tokens[0..i]) over the full vocabulary. The input is
// expected to start with BOS; it is not added here.
std::vector<std::vector<double>> forward(const Checkpoint& ckpt,
                                         std::span<const TokenId> tokens,
                                         Precision precision = Precision::kF32);

struct SequenceScore {
  double total_logprob = 0.0;
  std::int64_t n_scored = 0;
  // Running mean of the per-prediction log-probabilities; exactly equal to
  // the per-token value when all predictions score the same.
  double mean_logprob = 0.0;
};

// Scores [BOS, z..., EOS]: len(z) content predictions plus EOS.
SequenceScore sequence_log_prob(const Checkpoint& ckpt, const TokenSequence& z,
                                Precision precision = Precision::kF32);

// Per-prediction log-probabilities for [BOS, z..., EOS], in order.
std::vector<double> token_log_probs(const Checkpoint& ckpt, const TokenSequence& z,
                                    Precision precision = Precision::kF32);

struct LossAndGrad {
  double loss = 0.0;             // mean NLL per scored token
  std::int64_t n_scored = 0;
  std::map<std::string, Tensor> grads;
};

// Mean NLL over the batch with gradients for every tensor. Dropout is
// active iff config.dropout_p > 0, with masks drawn from dropout_seed.
LossAndGrad nll_loss_and_grad(const Checkpoint& ckpt, const Corpus& batch,
                              std::uint64_t dropout_seed = 0,
                              Precision precision = Precision::kF32);

// exp(mean NLL per scored token over the corpus), dropout off.
double perplexity(const Checkpoint& ckpt, const Corpus& corpus,
                  Precision precision = Precision::kF32);

}  // namespace ulm
