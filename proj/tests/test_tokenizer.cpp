#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "support/oracles.hpp"
#include "ulm/benchgen.hpp"
#include "ulm/errors.hpp"
#include "ulm/rng.hpp"
#include "ulm/tokenizer.hpp"

using namespace ulm;
using ulm::testing::best_permutation_agreement;
using ulm::testing::linear_scan_assign;

namespace {

FeatureSequence frames_1d(std::vector<float> v) { return {1, std::move(v), 50.0}; }

FeatureCorpus random_corpus(std::uint32_t dim, int seqs, int frames, std::uint64_t seed) {
  Rng rng(seed);
  FeatureCorpus c;
  for (int s = 0; s < seqs; ++s) {
    FeatureSequence x{dim, {}, 50.0};
    for (int i = 0; i < frames * static_cast<int>(dim); ++i) x.frames.push_back(static_cast<float>(rng.normal()));
    c.push_back(std::move(x));
  }
  return c;
}

Codebook manual_codebook(std::uint32_t dim, std::vector<float> centroids) {
  Codebook cb;
  cb.dim = dim;
  cb.k = static_cast<std::uint32_t>(centroids.size() / dim);
  cb.centroids = std::move(centroids);
  return cb;
}

}  // namespace

TEST_SUITE("tokenizer") {
  TEST_CASE("exactly K distinct frames are recovered with zero distortion") {
    const FeatureCorpus c = {{2, {0, 0, 5, 1, -3, 2, 7, 7, 1, -6}, 50.0}};
    const auto cb = fit_codebook(c, {5, 50, 0.0, 3});
    CHECK(cb.distortion_trace.back() == 0.0);
    std::multiset<std::pair<float, float>> want, got;
    for (std::size_t i = 0; i < 5; ++i) {
      want.insert({c[0].frame(i)[0], c[0].frame(i)[1]});
      got.insert({cb.centroid(i)[0], cb.centroid(i)[1]});
    }
    CHECK(want == got);
  }

  TEST_CASE("two symmetric clusters") {
    const auto cb = fit_codebook({frames_1d({0, 0, 10, 10})}, {2, 20, 0.0, 1});
    std::vector<float> cents(cb.centroids);
    std::sort(cents.begin(), cents.end());
    CHECK(cents == std::vector<float>{0.f, 10.f});
    CHECK(cb.distortion_trace.back() == 0.0);
  }

  TEST_CASE("well-separated Gaussian clusters are recovered") {
    const auto s = synth_features(4, 8, 100, 20, 10.0, 5);
    const auto cb = fit_codebook(s.corpus, {4, 100, 1e-9, 11});
    std::vector<int> truth;
    std::vector<TokenId> pred;
    for (std::size_t i = 0; i < s.corpus.size(); ++i) {
      const auto a = assign(cb, s.corpus[i]);
      pred.insert(pred.end(), a.begin(), a.end());
      truth.insert(truth.end(), s.labels[i].begin(), s.labels[i].end());
    }
    CHECK(best_permutation_agreement(truth, pred, 4) >= 0.99);
  }

  TEST_CASE("distortion trace is non-increasing and fitting is deterministic") {
    for (std::uint64_t seed : {1, 2, 3, 4}) {
      const auto c = random_corpus(3, 10, 50, seed);
      const auto cb = fit_codebook(c, {12, 60, 0.0, seed});
      REQUIRE(!cb.distortion_trace.empty());
      for (std::size_t i = 1; i < cb.distortion_trace.size(); ++i) {
        CHECK(cb.distortion_trace[i] <= cb.distortion_trace[i - 1]);
      }
      CHECK(cb.iters_run == cb.distortion_trace.size());
      CHECK(fit_codebook(c, {12, 60, 0.0, seed}) == cb);
    }
  }

  TEST_CASE("more clusters never hurt across a seed sweep") {
    const auto c = random_corpus(2, 8, 60, 9);
    double best4 = 1e300, best8 = 1e300;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      best4 = std::min(best4, quantization_distortion(fit_codebook(c, {4, 100, 1e-9, seed}), c));
      best8 = std::min(best8, quantization_distortion(fit_codebook(c, {8, 100, 1e-9, seed}), c));
    }
    CHECK(best8 <= best4);
  }

  TEST_CASE("fit errors") {
    CHECK_THROWS_AS(fit_codebook({frames_1d({1, 2})}, {3, 10, 0.0, 0}), CapacityError);
    CHECK_THROWS_AS(fit_codebook({frames_1d({1, 2}), {2, {1, 2}, 50.0}}, {1, 10, 0.0, 0}),
                    ValidationError);
    CHECK_THROWS_AS(fit_codebook({frames_1d({1, 2})}, {0, 10, 0.0, 0}), ValidationError);
    CHECK_THROWS_AS(fit_codebook({frames_1d({1, 2})}, {1, 0, 0.0, 0}), ValidationError);
    CHECK_THROWS_AS(fit_codebook({frames_1d({1, 2})}, {1, 10, -1.0, 0}), ValidationError);
  }

  TEST_CASE("encode: nearest centroid, ties to the lowest index, dedup") {
    const auto cb = manual_codebook(2, {0, 0, 1, 1});
    const FeatureSequence x{2, {0.1f, 0.1f, 0.9f, 0.9f, 0.95f, 1.0f}, 50.0};
    CHECK(encode(cb, x, true).tokens == std::vector<TokenId>{0, 1});
    CHECK(encode(cb, x, false).tokens == std::vector<TokenId>{0, 1, 1});
    CHECK(encode(cb, x, true).vocab_size == 2);

    const auto tie = manual_codebook(1, {-1, 5, 7, 1});
    CHECK(assign(tie, frames_1d({0})) == std::vector<TokenId>{0});
    CHECK_THROWS_AS(encode(cb, frames_1d({0}), false), ValidationError);
  }

  TEST_CASE("encode agrees with a linear scan") {
    Rng rng(4);
    std::vector<float> cents(16 * 5);
    for (auto& v : cents) v = static_cast<float>(rng.normal());
    const auto cb = manual_codebook(5, cents);
    const auto x = random_corpus(5, 1, 10000, 77)[0];
    CHECK(assign(cb, x) == linear_scan_assign(cb, x));
    // Grid points produce many exact ties.
    const auto grid = manual_codebook(1, {0, 2, 4, 6});
    std::vector<float> pts;
    for (int i = -2; i <= 16; ++i) pts.push_back(static_cast<float>(i) * 0.5f);
    CHECK(assign(grid, frames_1d(pts)) == linear_scan_assign(grid, frames_1d(pts)));
  }

  TEST_CASE("dedup") {
    CHECK(dedup({{1, 1, 1, 2, 2, 1}, 3}).tokens == std::vector<TokenId>{1, 2, 1});
    CHECK(dedup({{1, 2, 1}, 3}).tokens == std::vector<TokenId>{1, 2, 1});
    Rng rng(8);
    for (int t = 0; t < 200; ++t) {
      TokenSequence z{std::vector<TokenId>(static_cast<std::size_t>(rng.between(1, 30))), 3};
      for (auto& v : z.tokens) v = static_cast<TokenId>(rng.below(3));
      std::size_t changes = 0;
      for (std::size_t i = 1; i < z.size(); ++i) changes += z.tokens[i] != z.tokens[i - 1];
      const auto d = dedup(z);
      CHECK(d.size() == 1 + changes);
      CHECK(dedup(d) == d);
      for (std::size_t i = 1; i < d.size(); ++i) CHECK(d.tokens[i] != d.tokens[i - 1]);
    }
  }

  TEST_CASE("reconstruct and distortion identities") {
    const auto c = random_corpus(3, 1, 40, 5);
    const auto cb = fit_codebook(c, {6, 50, 0.0, 2});
    const auto z = encode(cb, c[0], false);
    const auto r = reconstruct(cb, z);
    CHECK(r.num_frames() == c[0].num_frames());
    CHECK(frame_distortion(c[0], r) == doctest::Approx(quantization_distortion(cb, c)).epsilon(1e-12));
    const auto one = reconstruct(cb, {{2}, 6});
    CHECK(one.num_frames() == 1);
    CHECK(std::equal(one.frames.begin(), one.frames.end(), cb.centroid(2)));
    CHECK_THROWS_AS(reconstruct(cb, {{6}, 7}), ValidationError);
    CHECK_THROWS_AS(quantization_distortion(cb, {}), ValidationError);
  }

  TEST_CASE("nearest assignment is optimal over all 3-frame assignments") {
    Rng rng(12);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<float> cents(3 * 2), frames(3 * 2);
      for (auto& v : cents) v = static_cast<float>(rng.normal());
      for (auto& v : frames) v = static_cast<float>(rng.normal());
      const auto cb = manual_codebook(2, cents);
      const FeatureSequence x{2, frames, 50.0};
      const double ours = frame_distortion(x, reconstruct(cb, encode(cb, x, false)));
      for (int a = 0; a < 27; ++a) {
        const TokenSequence z{{a % 3, (a / 3) % 3, a / 9}, 3};
        CHECK(ours <= frame_distortion(x, reconstruct(cb, z)));
      }
    }
  }

  TEST_CASE("quantization distortion against direct summation") {
    const auto corpus = random_corpus(4, 3, 70, 21);
    const auto cb = fit_codebook(corpus, {7, 30, 0.0, 5});
    double total = 0;
    long frames = 0;
    for (const auto& x : corpus) {
      for (std::size_t i = 0; i < x.num_frames(); ++i, ++frames) {
        double best = 1e300;
        for (std::uint32_t c = 0; c < cb.k; ++c) {
          double s = 0;
          for (std::uint32_t j = 0; j < cb.dim; ++j) {
            const double d = static_cast<double>(x.frame(i)[j]) - cb.centroid(c)[j];
            s += d * d;
          }
          best = std::min(best, s);
        }
        total += best;
      }
    }
    CHECK(quantization_distortion(cb, corpus) == doctest::Approx(total / frames).epsilon(1e-12));

    // Single centroid at the mean: distortion equals the summed variance.
    Codebook mean_cb = manual_codebook(4, std::vector<float>(4, 0.f));
    std::vector<double> mean(4, 0.0);
    for (const auto& x : corpus) for (std::size_t i = 0; i < x.num_frames(); ++i) for (int j = 0; j < 4; ++j) mean[j] += x.frame(i)[j];
    for (int j = 0; j < 4; ++j) mean_cb.centroids[j] = static_cast<float>(mean[j] / frames);
    double var = 0;
    for (const auto& x : corpus) for (std::size_t i = 0; i < x.num_frames(); ++i) for (int j = 0; j < 4; ++j) {
      const double d = x.frame(i)[j] - static_cast<double>(mean_cb.centroids[j]);
      var += d * d;
    }
    CHECK(quantization_distortion(mean_cb, corpus) == doctest::Approx(var / frames).epsilon(1e-12));

    FeatureCorpus cents_only = {{4, cb.centroids, 50.0}};
    CHECK(quantization_distortion(cb, cents_only) == 0.0);
  }
}
