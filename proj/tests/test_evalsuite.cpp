#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "support/markov.hpp"
#include "support/oracles.hpp"
#include "ulm/benchgen.hpp"
#include "ulm/errors.hpp"
#include "ulm/evalsuite.hpp"
#include "ulm/generator.hpp"
#include "ulm/model.hpp"
#include "ulm/rng.hpp"

using namespace ulm;
using namespace ulm::testing;

namespace {

ModelConfig small_cfg(int vocab, double std = 0.02) {
  ModelConfig c = preset_config("tiny", vocab);
  c.n_layers = 1;
  c.d_model = 32;
  c.n_heads = 2;
  c.d_ff = 64;
  c.max_seq_len = 80;
  c.init_std = std;
  return c;
}

// Independent n-gram counter keyed by a string encoding of the gram.
double hash_counter_auto_bleu(const std::vector<TokenId>& z) {
  double sum = 0;
  for (int n : {3, 4}) {
    std::unordered_map<std::string, int> counts;
    const std::size_t positions = z.size() - static_cast<std::size_t>(n) + 1;
    auto key = [&](std::size_t i) {
      std::string k;
      for (int j = 0; j < n; ++j) k += std::to_string(z[i + static_cast<std::size_t>(j)]) + ",";
      return k;
    };
    for (std::size_t i = 0; i < positions; ++i) ++counts[key(i)];
    std::size_t rep = 0;
    for (std::size_t i = 0; i < positions; ++i) rep += counts[key(i)] >= 2;
    sum += static_cast<double>(rep) / static_cast<double>(positions);
  }
  return sum / 2;
}

}  // namespace

TEST_SUITE("evalsuite") {
  TEST_CASE("tie rule") {
    const auto ck = cold_init(small_cfg(10), 1);
    const TokenSequence z{{1, 2, 3}, 7};
    const auto r = judge_pair(ck, z, z);
    CHECK(r.pos_score == r.neg_score);
    CHECK(!r.correct);
    CHECK(r.pos_score > 0.0);
    CHECK(r.pos_score <= 1.0);
  }

  TEST_CASE("zero-initialized model: every pair is a tie") {
    const auto ck = cold_init(small_cfg(10, 0.0), 1);
    const auto r = judge_pair(ck, {{1, 2, 3}, 7}, {{4, 4}, 7});
    CHECK(r.pos_score == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(r.pos_score == r.neg_score);
    Corpus units;
    Rng rng(1);
    for (int i = 0; i < 50; ++i) {
      TokenSequence z{std::vector<TokenId>(static_cast<std::size_t>(rng.between(3, 20))), 7};
      for (auto& t : z.tokens) t = static_cast<TokenId>(rng.below(7));
      units.push_back(z);
    }
    const auto b = make_swuggy_pairs(units, 100, Corruption::kSubstitute, 2, 3);
    CHECK(benchmark_accuracy(ck, b).accuracy == 0.0);
  }

  TEST_CASE("identical pairs score zero") {
    const auto ck = cold_init(small_cfg(10), 2);
    PairwiseBenchmark b{"same", 7, {}};
    for (int i = 0; i < 10; ++i) {
      const TokenSequence z{{i % 7, (i + 2) % 7}, 7};
      b.pairs.push_back({"p" + std::to_string(i), z, z});
    }
    CHECK(benchmark_accuracy(ck, b).accuracy == 0.0);
  }

  TEST_CASE("judging matches the exact chain comparison") {
    const DyadicChainScorer scorer;
    const auto pairs = enumerate_chain_pairs(50, 5);
    REQUIRE(pairs.size() == 50);
    int positives = 0;
    for (const auto& p : pairs) {
      const auto r = judge_pair(scorer, {p.pos, 2}, {p.neg, 2});
      CHECK(r.correct == p.expected_correct);
      positives += p.expected_correct;
    }
    CHECK(positives > 5);
    CHECK(positives < 45);
  }

  TEST_CASE("random init on generated pairs is at chance") {
    const auto ck = cold_init(small_cfg(30), 3);
    Corpus units;
    Rng rng(5);
    for (int i = 0; i < 400; ++i) {
      TokenSequence z{std::vector<TokenId>(static_cast<std::size_t>(rng.between(10, 30))), 27};
      for (auto& t : z.tokens) t = static_cast<TokenId>(rng.below(27));
      units.push_back(z);
    }
    const auto b = make_swuggy_pairs(units, 1000, Corruption::kSubstitute, 3, 9);
    const double acc = benchmark_accuracy(ck, b).accuracy;
    CHECK(acc >= 0.45);
    CHECK(acc <= 0.55);
  }

  TEST_CASE("order invariance and mirrored benchmarks") {
    const auto ck = cold_init(small_cfg(12), 8);
    Corpus units;
    Rng rng(2);
    for (int i = 0; i < 60; ++i) {
      TokenSequence z{std::vector<TokenId>(static_cast<std::size_t>(rng.between(4, 12))), 9};
      for (auto& t : z.tokens) t = static_cast<TokenId>(rng.below(9));
      units.push_back(z);
    }
    auto b = make_swuggy_pairs(units, 60, Corruption::kSwapAdjacent, 1, 4);
    const auto base = benchmark_accuracy(ck, b);
    auto shuffled = b;
    Rng(7).shuffle(shuffled.pairs);
    const auto re = benchmark_accuracy(ck, shuffled);
    for (const auto& r : re.results) {
      const auto it = std::find_if(base.results.begin(), base.results.end(),
                                   [&](const JudgeResult& x) { return x.id == r.id; });
      REQUIRE(it != base.results.end());
      CHECK(it->correct == r.correct);
    }
    CHECK(re.accuracy == base.accuracy);

    auto mirror = b;
    for (auto& p : mirror.pairs) std::swap(p.positive, p.negative);
    CHECK(base.accuracy + benchmark_accuracy(ck, mirror).accuracy <= 1.0);
  }

  TEST_CASE("benchmark validation") {
    const auto ck = cold_init(small_cfg(10), 1);
    CHECK_THROWS_AS(benchmark_accuracy(ck, PairwiseBenchmark{"empty", 7, {}}), ValidationError);
    PairwiseBenchmark dup{"dup", 7, {{"a", {{1}, 7}, {{2}, 7}}, {"a", {{1}, 7}, {{3}, 7}}}};
    CHECK_THROWS_AS(validate(dup), ValidationError);
    PairwiseBenchmark mixed{"mixed", 7, {{"a", {{1}, 7}, {{2}, 8}}}};
    CHECK_THROWS_AS(validate(mixed), ValidationError);
    const TokenSequence long_seq{std::vector<TokenId>(100, 1), 7};
    CHECK_THROWS_AS(judge_pair(ck, long_seq, {{1}, 7}), CapacityError);
  }

  TEST_CASE("auto-BLEU fixed points") {
    CHECK(auto_bleu({std::vector<TokenId>(20, 7), 8}) == 1.0);
    std::vector<TokenId> distinct(30);
    for (int i = 0; i < 30; ++i) distinct[static_cast<std::size_t>(i)] = i;
    CHECK(auto_bleu({distinct, 30}) == 0.0);
    // One repeated 3-gram occurrence pair, all 4-grams distinct.
    const std::vector<TokenId> z = {1, 2, 3, 9, 1, 2, 3, 8, 7, 6};
    CHECK(auto_bleu({z, 10}) == doctest::Approx((2.0 / (z.size() - 2)) / 2).epsilon(1e-15));
    CHECK_THROWS_AS(auto_bleu({{1, 2, 3}, 4}), ValidationError);
  }

  TEST_CASE("auto-BLEU matches independent counters") {
    Rng rng(10);
    for (int t = 0; t < 1000; ++t) {
      std::vector<TokenId> z(static_cast<std::size_t>(rng.between(4, 60)));
      const auto v = rng.between(2, 6);
      for (auto& x : z) x = static_cast<TokenId>(rng.below(static_cast<std::uint64_t>(v)));
      const double got = auto_bleu({z, static_cast<std::int32_t>(v)});
      CHECK(got == hash_counter_auto_bleu(z));
      CHECK(got == (repeated_fraction_oracle(z, 3) + repeated_fraction_oracle(z, 4)) / 2);
    }
  }

  TEST_CASE("calibration: singleton grid, constructed zero gap, table re-scan") {
    const auto ck = cold_init(small_cfg(12, 0.5), 4);
    Corpus prompts;
    for (int i = 0; i < 12; ++i) prompts.push_back({{i % 9, (i * 5) % 9, 3}, 9});
    const std::vector<double> single = {0.8};
    CHECK(calibrate_temperature(ck, prompts, prompts, single, 20, 1).temperature == 0.8);

    const std::vector<double> grid = {0.3, 0.7, 1.2, 2.0};
    const auto at = generate_all(ck, prompts, 20, 1.2, 5);
    Corpus refs;
    for (std::size_t i = 0; i < at.size(); ++i) refs.push_back(continuation(at[i], prompts[i]));
    const auto res = calibrate_temperature(ck, prompts, refs, grid, 20, 5);
    REQUIRE(res.table.size() == grid.size());
    const auto row = std::find_if(res.table.begin(), res.table.end(),
                                  [](const CalibrationRow& r) { return r.temperature == 1.2; });
    CHECK(row->gap == 0.0);
    // Re-scan the emitted table: the choice has the minimal gap, earliest
    // (lowest) temperature among equals.
    double best_gap = 1e300;
    double best_t = 0;
    for (const auto& r : res.table) {
      CHECK(r.gap == std::abs(r.mean_auto_bleu - res.reference_mean));
      if (r.gap < best_gap || (r.gap == best_gap && r.temperature < best_t)) {
        best_gap = r.gap;
        best_t = r.temperature;
      }
    }
    CHECK(res.temperature == best_t);
    CHECK(res.table[static_cast<std::size_t>(std::find(grid.begin(), grid.end(), res.temperature) - grid.begin())].gap == 0.0);
  }

  TEST_CASE("calibration errors") {
    const auto ck = cold_init(small_cfg(12), 4);
    const Corpus prompts = {{{1}, 9}};
    const std::vector<double> none;
    CHECK_THROWS_AS(calibrate_temperature(ck, prompts, prompts, none, 5, 1), ValidationError);
    const std::vector<double> grid = {1.0};
    CHECK_THROWS_AS(calibrate_temperature(ck, prompts, {}, grid, 5, 1), ValidationError);
    const std::vector<double> bad = {-1.0};
    CHECK_THROWS_AS(calibrate_temperature(ck, prompts, prompts, bad, 5, 1), ValidationError);
  }
}
