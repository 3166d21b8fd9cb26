#pragma once

#include <cstdint>
#include <vector>

namespace ulm {

// Encoder-output stand-in: frames row-major, frames.size() == n_frames * dim.
struct FeatureSequence {
  std::uint32_t dim = 0;
  std::vector<float> frames;
  double frame_rate_hz = 50.0;

  std::size_t num_frames() const { return dim == 0 ? 0 : frames.size() / dim; }
  const float* frame(std::size_t i) const { return frames.data() + i * dim; }
  float* frame(std::size_t i) { return frames.data() + i * dim; }

  bool operator==(const FeatureSequence&) const = default;
};

using TokenId = std::int32_t;

struct TokenSequence {
  std::vector<TokenId> tokens;
  std::int32_t vocab_size = 0;

  std::size_t size() const { return tokens.size(); }
  bool operator==(const TokenSequence&) const = default;
};

using Corpus = std::vector<TokenSequence>;
using FeatureCorpus = std::vector<FeatureSequence>;

/// Throws ValidationError unless the sequence is non-empty and every id is
/// in [0, vocab_size).
void validate(const TokenSequence& z);

/// Throws ValidationError unless dim > 0, at least one frame, and every
/// component finite.
void validate(const FeatureSequence& x);

}  // namespace ulm
