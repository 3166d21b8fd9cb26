#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>

#include "ulm/benchgen.hpp"
#include "ulm/errors.hpp"
#include "ulm/rng.hpp"

using namespace ulm;

namespace {

// Stationary law of the (prev2, prev1) chain by a direct linear solve:
// pi (P - I) = 0 with the last equation replaced by sum(pi) = 1.
std::vector<double> solved_stationary_marginal(const TextSource& src, int topic) {
  const int C = src.char_vocab();
  const int n = C * C;
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
  for (int a = 0; a < C; ++a) {
    for (int b = 0; b < C; ++b) {
      const auto row = src.transition(topic, a, b);
      for (int c = 0; c < C; ++c) A(b * C + c, a * C + b) += row[static_cast<std::size_t>(c)];
    }
  }
  A -= Eigen::MatrixXd::Identity(n, n);
  A.row(n - 1).setOnes();
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
  rhs(n - 1) = 1.0;
  const Eigen::VectorXd pi = A.partialPivLu().solve(rhs);
  std::vector<double> m(static_cast<std::size_t>(C), 0.0);
  for (int i = 0; i < n; ++i) m[static_cast<std::size_t>(i % C)] += pi(i);
  return m;
}

double tv(const std::vector<double>& p, const std::vector<double>& q) {
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return s / 2;
}

Corpus random_units(int n, int vocab, std::pair<int, int> len, std::uint64_t seed) {
  Rng rng(seed);
  Corpus out;
  for (int i = 0; i < n; ++i) {
    TokenSequence z{std::vector<TokenId>(static_cast<std::size_t>(rng.between(len.first, len.second))), vocab};
    for (auto& t : z.tokens) t = static_cast<TokenId>(rng.below(static_cast<std::uint64_t>(vocab)));
    out.push_back(std::move(z));
  }
  return out;
}

}  // namespace

TEST_SUITE("benchgen") {
  TEST_CASE("synthetic features") {
    const auto a = synth_features(4, 8, 50, 40, 10.0, 3);
    CHECK(a.corpus.size() == 40);
    CHECK(a.labels.size() == 40);
    for (std::size_t s = 0; s < a.corpus.size(); ++s) {
      validate(a.corpus[s]);
      CHECK(a.corpus[s].frames.size() == 50 * 8);
      CHECK(a.labels[s].size() == 50);
    }
    const auto b = synth_features(4, 8, 50, 40, 10.0, 3);
    CHECK(a.corpus == b.corpus);
    CHECK(a.labels == b.labels);

    const auto one = synth_features(1, 3, 10, 5, 2.0, 1);
    for (const auto& l : one.labels) CHECK(std::all_of(l.begin(), l.end(), [](int x) { return x == 0; }));

    CHECK_THROWS_AS(synth_features(4, 8, 10, 10, 0.0, 1), ValidationError);
    CHECK_THROWS_AS(synth_features(4, 8, 10, 10, -1.0, 1), ValidationError);
    CHECK_THROWS_AS(synth_features(0, 8, 10, 10, 1.0, 1), ValidationError);
  }

  TEST_CASE("cluster means are at least the separation apart") {
    for (auto [k, d] : {std::pair{4, 8}, std::pair{5, 5}, std::pair{12, 3}, std::pair{30, 2}}) {
      const auto f = synth_features(k, d, 5, 2, 4.0, 17);
      REQUIRE(f.means.size() == static_cast<std::size_t>(k));
      for (std::size_t i = 0; i < f.means.size(); ++i) {
        for (std::size_t j = i + 1; j < f.means.size(); ++j) {
          double s = 0;
          for (int x = 0; x < d; ++x) s += std::pow(f.means[i][static_cast<std::size_t>(x)] - f.means[j][static_cast<std::size_t>(x)], 2);
          CHECK(std::sqrt(s) >= 4.0 - 1e-12);
        }
      }
    }
  }

  TEST_CASE("text corpus follows the chain's stationary law") {
    TransferSpec spec;
    spec.seed = 21;
    const auto text = make_text_corpus(spec, 4000, {20, 40}, 3);
    CHECK(text == make_text_corpus(spec, 4000, {20, 40}, 3));
    CHECK(!(text == make_text_corpus(spec, 4000, {20, 40}, 4)));
    std::vector<double> freq(27, 0.0);
    std::size_t n = 0;
    for (const auto& z : text) {
      validate(z);
      CHECK(z.vocab_size == 27);
      CHECK(z.size() >= 20);
      CHECK(z.size() <= 40);
      for (TokenId t : z.tokens) freq[static_cast<std::size_t>(t)] += 1, ++n;
    }
    REQUIRE(n >= 100000);
    for (auto& f : freq) f /= static_cast<double>(n);
    // The corpus uses topic 0 of a single-topic source seeded from the spec.
    const TextSource src(27, 1, derive_seed(spec.seed, 1));
    const auto pi = solved_stationary_marginal(src, 0);
    CHECK(tv(freq, pi) < 0.02);
    CHECK(tv(src.stationary_marginal(0), pi) < 1e-9);

    CHECK_THROWS_AS(make_text_corpus(spec, 0, {5, 10}, 1), ValidationError);
    CHECK_THROWS_AS(make_text_corpus(spec, 5, {0, 10}, 1), ValidationError);
  }

  TEST_CASE("entropy rate matches an empirical estimate") {
    const TextSource src(9, 1, 5);
    Rng rng(8);
    const auto z = src.sample(0, 200000, rng);
    double nll = 0;
    for (std::size_t i = 2; i < z.size(); ++i) {
      nll -= std::log(src.transition(0, z[i - 2], z[i - 1])[static_cast<std::size_t>(z[i])]);
    }
    CHECK(nll / static_cast<double>(z.size() - 2) == doctest::Approx(src.entropy_rate(0)).epsilon(0.01));
  }

  TEST_CASE("stories") {
    TransferSpec spec;
    spec.seed = 2;
    const auto s = make_text_stories(spec, 4, 300, 3, {5, 8}, 9);
    CHECK(s.size() == 300);
    std::set<int> topics;
    for (const auto& story : s) {
      topics.insert(story.topic);
      CHECK(story.topic >= 0);
      CHECK(story.topic < 4);
      REQUIRE(story.segments.size() == 3);
      for (const auto& g : story.segments) {
        validate(g);
        CHECK(g.size() >= 5);
        CHECK(g.size() <= 8);
      }
    }
    CHECK(topics.size() == 4);
    const auto again = make_text_stories(spec, 4, 300, 3, {5, 8}, 9);
    for (std::size_t i = 0; i < s.size(); ++i) CHECK(s[i].segments == again[i].segments);
    CHECK_THROWS_AS(make_text_stories(spec, 0, 3, 3, {5, 8}, 9), ValidationError);
  }

  TEST_CASE("unit expansion") {
    TransferSpec spec;
    spec.seed = 5;
    const auto text = make_text_corpus(spec, 300, {10, 30}, 1);

    SUBCASE("identity granularity is a relabelling") {
      TransferSpec id = spec;
      id.subtokens_per_char = 1;
      id.tokens_per_char_min = id.tokens_per_char_max = 1;
      id.noise_p = 0.0;
      const auto u = expand_to_units(text, id);
      for (std::size_t i = 0; i < text.size(); ++i) CHECK(u[i].tokens == text[i].tokens);
    }
    SUBCASE("noise-free expansion decodes back to the text") {
      TransferSpec clean = spec;
      clean.noise_p = 0.0;
      const auto e = expand_to_units_with_runs(text, clean);
      for (std::size_t i = 0; i < text.size(); ++i) {
        CHECK(e.units[i].vocab_size == 108);
        CHECK(e.units[i].size() >= 2 * text[i].size());
        CHECK(e.units[i].size() <= 3 * text[i].size());
        std::vector<TokenId> decoded;
        std::size_t p = 0;
        for (int run : e.run_lengths[i]) {
          const TokenId owner = clean.owner_of(e.units[i].tokens[p]);
          for (int r = 0; r < run; ++r) CHECK(clean.owner_of(e.units[i].tokens[p + static_cast<std::size_t>(r)]) == owner);
          decoded.push_back(owner);
          p += static_cast<std::size_t>(run);
        }
        CHECK(p == e.units[i].size());
        CHECK(decoded == text[i].tokens);
      }
    }
    SUBCASE("noise rate") {
      const auto e = expand_to_units_with_runs(text, spec);
      double foreign = 0, n = 0;
      for (std::size_t i = 0; i < text.size(); ++i) {
        std::size_t p = 0;
        for (std::size_t c = 0; c < text[i].size(); ++c) {
          for (int r = 0; r < e.run_lengths[i][c]; ++r, ++p) {
            foreign += spec.owner_of(e.units[i].tokens[p]) != text[i].tokens[c];
            n += 1;
          }
        }
      }
      // A uniform replacement stays inside the owner's sub-alphabet with
      // probability s/K.
      CHECK(foreign / n == doctest::Approx(0.1 * (1.0 - 4.0 / 108.0)).epsilon(0.08));
    }
    CHECK(expand_to_units(text, spec) == expand_to_units(text, spec));
    CHECK_THROWS_AS(expand_to_units({{{27}, 28}}, spec), ValidationError);
    TransferSpec bad = spec;
    bad.noise_p = 1.0;
    CHECK_THROWS_AS(expand_to_units(text, bad), ValidationError);
    bad = spec;
    bad.tokens_per_char_min = 0;
    CHECK_THROWS_AS(expand_to_units(text, bad), ValidationError);
  }

  TEST_CASE("substitution pairs") {
    const auto units = random_units(100, 20, {5, 15}, 3);
    const auto b = make_swuggy_pairs(units, 300, Corruption::kSubstitute, 3, 4);
    validate(b);
    CHECK(b.pairs.size() == 300);
    std::set<std::string> ids;
    for (const auto& p : b.pairs) {
      ids.insert(p.id);
      CHECK(std::find(units.begin(), units.end(), p.positive) != units.end());
      REQUIRE(p.positive.size() == p.negative.size());
      int diff = 0;
      for (std::size_t i = 0; i < p.positive.size(); ++i) diff += p.positive.tokens[i] != p.negative.tokens[i];
      CHECK(diff == 3);
    }
    CHECK(ids.size() == b.pairs.size());
    CHECK(b.pairs == make_swuggy_pairs(units, 300, Corruption::kSubstitute, 3, 4).pairs);

    const auto zero = make_swuggy_pairs(units, 20, Corruption::kSubstitute, 0, 4);
    for (const auto& p : zero.pairs) CHECK(p.positive == p.negative);
    CHECK_THROWS_AS(make_swuggy_pairs({}, 5, Corruption::kSubstitute, 1, 1), ValidationError);
    CHECK_THROWS_AS(make_swuggy_pairs(random_units(5, 10, {2, 3}, 1), 5, Corruption::kSubstitute, 4, 1),
                    ValidationError);
  }

  TEST_CASE("swap pairs") {
    const auto units = random_units(100, 5, {4, 12}, 6);
    const auto b = make_swuggy_pairs(units, 300, Corruption::kSwapAdjacent, 2, 8);
    validate(b);
    for (const auto& p : b.pairs) {
      CHECK(p.positive.size() == p.negative.size());
      CHECK(!(p.positive == p.negative));
      auto x = p.positive.tokens, y = p.negative.tokens;
      std::sort(x.begin(), x.end());
      std::sort(y.begin(), y.end());
      CHECK(x == y);
    }
    const Corpus flat = {{{1, 1, 1}, 3}, {{2, 2}, 3}};
    CHECK_THROWS_AS(make_swuggy_pairs(flat, 2, Corruption::kSwapAdjacent, 1, 1), ValidationError);
    // A single swappable position toggled twice always returns to itself.
    CHECK_THROWS_AS(make_swuggy_pairs({{{1, 2}, 3}}, 2, Corruption::kSwapAdjacent, 2, 1), ValidationError);
  }

  TEST_CASE("topic pairs") {
    std::vector<Corpus> stories;
    Rng rng(1);
    for (int s = 0; s < 5; ++s) {
      Corpus story;
      for (int g = 0; g < 3; ++g) {
        story.push_back({{static_cast<TokenId>(s), static_cast<TokenId>(g), static_cast<TokenId>(rng.below(9))}, 10});
      }
      stories.push_back(story);
    }
    const auto b = make_topic_pairs(stories, 10000, 12);
    validate(b);
    REQUIRE(b.pairs.size() == 10000);
    std::map<std::size_t, std::map<std::size_t, int>> donors;
    for (const auto& p : b.pairs) {
      const auto c1 = p.id.find(':');
      const auto c2 = p.id.find(':', c1 + 1);
      const auto s = std::stoul(p.id.substr(c1 + 1, c2 - c1 - 1));
      const auto d = std::stoul(p.id.substr(c2 + 1));
      CHECK(s != d);
      ++donors[s][d];
      const auto prefix = concat({stories[s].begin(), stories[s].end() - 1});
      CHECK(p.positive == concat(stories[s]));
      CHECK(std::equal(prefix.tokens.begin(), prefix.tokens.end(), p.negative.tokens.begin()));
      CHECK(p.negative == concat({stories[s][0], stories[s][1], stories[d][2]}));
    }
    for (const auto& [s, counts] : donors) {
      int total = 0;
      for (const auto& [d, c] : counts) total += c;
      std::vector<double> emp, uni;
      for (std::size_t d = 0; d < 5; ++d) {
        if (d == s) continue;
        emp.push_back(counts.count(d) ? counts.at(d) / static_cast<double>(total) : 0.0);
        uni.push_back(0.25);
      }
      CHECK(tv(emp, uni) < 0.05);
    }

    // Two stories sharing an ending cannot form a pair.
    std::vector<Corpus> twins = {{{{1}, 4}, {{2}, 4}}, {{{3}, 4}, {{2}, 4}}};
    CHECK(make_topic_pairs(twins, 10, 1).pairs.empty());
    CHECK_THROWS_AS(make_topic_pairs({stories[0]}, 3, 1), ValidationError);
    CHECK_THROWS_AS(make_topic_pairs({stories[0], {{{1}, 10}}}, 3, 1), ValidationError);
  }
}
