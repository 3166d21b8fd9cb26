#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ulm/checkpoint.hpp"
#include "ulm/types.hpp"

namespace ulm {

// Below this temperature sampling becomes an exact argmax.
inline constexpr double kGreedyTemperature = 1e-6;

// Sampling distribution for the token after `context` (which starts with
// BOS): softmax(logits / temperature) restricted to content units and
// EOS. PAD and BOS get probability 0.
std::vector<double> next_token_distribution(const Checkpoint& ckpt,
                                            std::span<const TokenId> context,
                                            double temperature);

// Returns prompt ++ continuation. Sampling stops at EOS (not emitted) or
// after max_new tokens.
TokenSequence generate(const Checkpoint& ckpt, const TokenSequence& prompt, int max_new,
                       double temperature, std::uint64_t seed);

// Continuation only (the tokens after the prompt).
TokenSequence continuation(const TokenSequence& generated, const TokenSequence& prompt);

// One generation per prompt with seed (seed ^ index).
Corpus generate_all(const Checkpoint& ckpt, const Corpus& prompts, int max_new,
                    double temperature, std::uint64_t seed);

}  // namespace ulm
