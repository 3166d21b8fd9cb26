#include "ulm/types.hpp"

#include <cmath>
#include <string>

#include "ulm/errors.hpp"

namespace ulm {

void validate(const TokenSequence& z) {
  if (z.vocab_size < 1) throw ValidationError("token sequence: vocab_size must be >= 1");
  if (z.tokens.empty()) throw ValidationError("token sequence: empty");
  for (TokenId t : z.tokens) {
    if (t < 0 || t >= z.vocab_size) {
      throw ValidationError("token id " + std::to_string(t) + " outside [0, " +
                            std::to_string(z.vocab_size) + ")");
    }
  }
}

void validate(const FeatureSequence& x) {
  if (x.dim == 0) throw ValidationError("feature sequence: dim must be positive");
  if (x.frames.empty()) throw ValidationError("feature sequence: no frames");
  if (x.frames.size() % x.dim != 0) throw ValidationError("feature sequence: ragged frame data");
  if (!(x.frame_rate_hz > 0.0) || !std::isfinite(x.frame_rate_hz)) {
    throw ValidationError("feature sequence: frame rate must be positive");
  }
  for (float v : x.frames) {
    if (!std::isfinite(v)) throw ValidationError("feature sequence: non-finite component");
  }
}

}  // namespace ulm
