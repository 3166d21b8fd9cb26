#include "ulm/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ulm/errors.hpp"
#include "ulm/parallel.hpp"
#include "ulm/rng.hpp"

namespace ulm {

namespace {

double sq_dist(const float* a, const float* b, std::size_t dim) {
  double s = 0.0;
  for (std::size_t j = 0; j < dim; ++j) {
    const double d = static_cast<double>(a[j]) - static_cast<double>(b[j]);
    s += d * d;
  }
  return s;
}

struct Nearest {
  std::uint32_t index;
  double dist;
};

Nearest nearest(const float* centroids, std::size_t k, std::size_t dim, const float* x) {
  Nearest best{0, std::numeric_limits<double>::infinity()};
  for (std::size_t c = 0; c < k; ++c) {
    const double d = sq_dist(centroids + c * dim, x, dim);
    if (d < best.dist) best = {static_cast<std::uint32_t>(c), d};
  }
  return best;
}

constexpr std::size_t kChunk = 1024;

// Assigns every frame; results land in per-frame slots so chunking never
// changes the outcome.
void assign_all(const std::vector<float>& centroids, std::size_t k, std::size_t dim,
                const std::vector<float>& frames, std::vector<std::uint32_t>& labels,
                std::vector<double>& dists) {
  const std::size_t n = frames.size() / dim;
  labels.resize(n);
  dists.resize(n);
  parallel_for((n + kChunk - 1) / kChunk, [&](std::size_t chunk) {
    const std::size_t end = std::min(n, (chunk + 1) * kChunk);
    for (std::size_t i = chunk * kChunk; i < end; ++i) {
      const Nearest nn = nearest(centroids.data(), k, dim, frames.data() + i * dim);
      labels[i] = nn.index;
      dists[i] = nn.dist;
    }
  });
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

void check_dims(const Codebook& cb, const FeatureSequence& x) {
  validate(x);
  if (x.dim != cb.dim) {
    throw ValidationError("feature dim " + std::to_string(x.dim) + " does not match codebook dim " +
                          std::to_string(cb.dim));
  }
}

}  // namespace

void validate(const FitConfig& cfg) {
  if (cfg.k < 1) throw ValidationError("fit config: k must be >= 1");
  if (cfg.max_iters < 1) throw ValidationError("fit config: max_iters must be >= 1");
  if (!(cfg.rel_tol >= 0.0)) throw ValidationError("fit config: rel_tol must be >= 0");
}

void validate(const Codebook& cb) {
  if (cb.dim == 0 || cb.k == 0) throw ValidationError("codebook: dim and k must be positive");
  if (cb.centroids.size() != static_cast<std::size_t>(cb.dim) * cb.k) {
    throw ValidationError("codebook: centroid count does not match k*dim");
  }
  for (float v : cb.centroids) {
    if (!std::isfinite(v)) throw ValidationError("codebook: non-finite centroid");
  }
  for (std::size_t i = 1; i < cb.distortion_trace.size(); ++i) {
    if (cb.distortion_trace[i] > cb.distortion_trace[i - 1]) {
      throw ValidationError("codebook: distortion trace increases");
    }
  }
}

Codebook fit_codebook(const FeatureCorpus& corpus, const FitConfig& cfg) {
  validate(cfg);
  if (corpus.empty()) throw ValidationError("fit_codebook: empty corpus");
  const std::uint32_t dim = corpus.front().dim;
  std::vector<float> frames;
  for (const auto& x : corpus) {
    validate(x);
    if (x.dim != dim) throw ValidationError("fit_codebook: feature dims differ across sequences");
    frames.insert(frames.end(), x.frames.begin(), x.frames.end());
  }
  const std::size_t n = frames.size() / dim;
  const auto k = static_cast<std::size_t>(cfg.k);
  if (n < k) {
    throw CapacityError("fit_codebook: " + std::to_string(n) + " frames cannot support k=" +
                        std::to_string(k));
  }

  // k-means++ seeding
  Rng rng(cfg.seed);
  std::vector<float> centroids(k * dim);
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::size_t pick = static_cast<std::size_t>(rng.below(n));
  for (std::size_t c = 0; c < k; ++c) {
    std::copy_n(frames.data() + pick * dim, dim, centroids.data() + c * dim);
    if (c + 1 == k) break;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], sq_dist(frames.data() + i * dim, centroids.data() + c * dim, dim));
      total += d2[i];
    }
    pick = total > 0.0 ? rng.categorical(d2) : static_cast<std::size_t>(rng.below(n));
  }

  Codebook cb;
  cb.dim = dim;
  cb.k = static_cast<std::uint32_t>(k);
  cb.seed = cfg.seed;

  std::vector<std::uint32_t> labels, prev_labels;
  std::vector<double> dists;
  std::vector<float> prev_centroids;
  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    assign_all(centroids, k, dim, frames, labels, dists);
    const double distortion = mean_of(dists);
    if (!cb.distortion_trace.empty() && distortion > cb.distortion_trace.back()) {
      // Rounding noise only; keep the centroids that produced the last entry.
      centroids = prev_centroids;
      break;
    }
    const bool first = cb.distortion_trace.empty();
    const double prev = first ? 0.0 : cb.distortion_trace.back();
    cb.distortion_trace.push_back(distortion);
    if (distortion == 0.0) break;
    if (!first && ((prev - distortion) / prev < cfg.rel_tol || labels == prev_labels)) break;
    if (iter + 1 == cfg.max_iters) break;

    // update step
    prev_centroids = centroids;
    prev_labels = labels;
    std::vector<double> sums(k * dim, 0.0);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t c = labels[i];
      ++counts[c];
      const float* x = frames.data() + i * dim;
      for (std::size_t j = 0; j < dim; ++j) sums[c * dim + j] += x[j];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      for (std::size_t j = 0; j < dim; ++j) {
        centroids[c * dim + j] =
            static_cast<float>(sums[c * dim + j] / static_cast<double>(counts[c]));
      }
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] != 0) continue;
      const auto far = static_cast<std::size_t>(
          std::max_element(dists.begin(), dists.end()) - dists.begin());
      std::copy_n(frames.data() + far * dim, dim, centroids.data() + c * dim);
      dists[far] = 0.0;
    }
  }
  cb.centroids = std::move(centroids);
  cb.iters_run = static_cast<std::uint32_t>(cb.distortion_trace.size());
  return cb;
}

std::vector<TokenId> assign(const Codebook& cb, const FeatureSequence& x) {
  check_dims(cb, x);
  std::vector<TokenId> ids(x.num_frames());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    ids[i] = static_cast<TokenId>(nearest(cb.centroids.data(), cb.k, cb.dim, x.frame(i)).index);
  }
  return ids;
}

TokenSequence encode(const Codebook& cb, const FeatureSequence& x, bool do_dedup) {
  TokenSequence z{assign(cb, x), static_cast<std::int32_t>(cb.k)};
  return do_dedup ? dedup(z) : z;
}

TokenSequence dedup(const TokenSequence& z) {
  TokenSequence out;
  out.vocab_size = z.vocab_size;
  for (TokenId t : z.tokens) {
    if (out.tokens.empty() || out.tokens.back() != t) out.tokens.push_back(t);
  }
  return out;
}

FeatureSequence reconstruct(const Codebook& cb, const TokenSequence& z, double frame_rate_hz) {
  if (z.tokens.empty()) throw ValidationError("reconstruct: empty token sequence");
  FeatureSequence x;
  x.dim = cb.dim;
  x.frame_rate_hz = frame_rate_hz;
  x.frames.reserve(z.size() * cb.dim);
  for (TokenId t : z.tokens) {
    if (t < 0 || static_cast<std::uint32_t>(t) >= cb.k) {
      throw ValidationError("reconstruct: id " + std::to_string(t) + " outside codebook of size " +
                            std::to_string(cb.k));
    }
    const float* c = cb.centroid(static_cast<std::size_t>(t));
    x.frames.insert(x.frames.end(), c, c + cb.dim);
  }
  return x;
}

double quantization_distortion(const Codebook& cb, const FeatureCorpus& corpus) {
  if (corpus.empty()) throw ValidationError("quantization_distortion: empty corpus");
  double total = 0.0;
  std::size_t frames = 0;
  for (const auto& x : corpus) {
    check_dims(cb, x);
    for (std::size_t i = 0; i < x.num_frames(); ++i) {
      total += nearest(cb.centroids.data(), cb.k, cb.dim, x.frame(i)).dist;
    }
    frames += x.num_frames();
  }
  return total / static_cast<double>(frames);
}

double frame_distortion(const FeatureSequence& a, const FeatureSequence& b) {
  if (a.dim != b.dim || a.frames.size() != b.frames.size() || a.frames.empty()) {
    throw ValidationError("frame_distortion: sequences must have equal, non-zero shape");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < a.num_frames(); ++i) total += sq_dist(a.frame(i), b.frame(i), a.dim);
  return total / static_cast<double>(a.num_frames());
}

}  // namespace ulm
