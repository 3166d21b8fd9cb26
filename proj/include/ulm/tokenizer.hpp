#pragma once

#include <cstdint>
#include <vector>

#include "ulm/types.hpp"

namespace ulm {

struct FitConfig {
  int k = 100;
  int max_iters = 100;
  double rel_tol = 1e-6;
  std::uint64_t seed = 0;
};

struct Codebook {
  std::uint32_t dim = 0;
  std::uint32_t k = 0;
  std::vector<float> centroids;  // k x dim, row-major
  std::vector<double> distortion_trace;
  std::uint64_t seed = 0;
  std::uint32_t iters_run = 0;

  const float* centroid(std::size_t i) const { return centroids.data() + i * dim; }
  bool operator==(const Codebook&) const = default;
};

void validate(const FitConfig& cfg);
void validate(const Codebook& cb);

// Lloyd iterations from k-means++ seeding. Each iteration assigns every
// frame, records the mean squared distortion, then moves centroids to
// their cluster means. Empty clusters take the frame farthest from its
// assigned centroid. Stops after max_iters, when the relative
// improvement drops below rel_tol, or when assignments stop changing.
Codebook fit_codebook(const FeatureCorpus& corpus, const FitConfig& cfg);

// Nearest centroid per frame by squared Euclidean distance; ties go to
// the lowest index.
TokenSequence encode(const Codebook& cb, const FeatureSequence& x, bool dedup);
std::vector<TokenId> assign(const Codebook& cb, const FeatureSequence& x);

// Collapses maximal runs of equal ids.
TokenSequence dedup(const TokenSequence& z);

// One frame per token: frame i is centroid z[i]. No duration model.
FeatureSequence reconstruct(const Codebook& cb, const TokenSequence& z,
                            double frame_rate_hz = 50.0);

// Mean over all frames of the squared distance to the nearest centroid.
double quantization_distortion(const Codebook& cb, const FeatureCorpus& corpus);

// Mean squared distance between aligned frames of equal-length sequences.
double frame_distortion(const FeatureSequence& a, const FeatureSequence& b);

}  // namespace ulm
