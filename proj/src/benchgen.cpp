#include "ulm/benchgen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "ulm/errors.hpp"

namespace ulm {

namespace {

constexpr std::uint64_t kTextStream = 1;
constexpr std::uint64_t kExpandStream = 2;

// Base chain: three favoured successors per context over a small floor.
constexpr double kFloorWeight = 0.01;
constexpr double kFavouredWeights[] = {1.0, 0.5, 0.25};
// Topic chains multiply the weight of their characters by this factor.
constexpr double kTopicTilt = 50.0;

void check_range(std::pair<int, int> r, const char* what) {
  if (r.first < 1 || r.second < r.first) {
    throw ValidationError(std::string(what) + ": invalid length range");
  }
}

}  // namespace

void validate(const TransferSpec& spec) {
  if (spec.char_vocab < 1) throw ValidationError("transfer spec: char_vocab must be >= 1");
  if (spec.tokens_per_char_min < 1 || spec.tokens_per_char_max < spec.tokens_per_char_min) {
    throw ValidationError("transfer spec: tokens_per_char range must satisfy 1 <= a <= b");
  }
  if (spec.subtokens_per_char < 1) throw ValidationError("transfer spec: subtokens_per_char >= 1");
  if (!(spec.noise_p >= 0.0 && spec.noise_p < 1.0)) {
    throw ValidationError("transfer spec: noise_p must be in [0,1)");
  }
}

SynthFeatures synth_features(int n_clusters, int dim, int frames_per_seq, int n_seqs,
                             double separation, std::uint64_t seed, double frame_rate_hz) {
  if (!(separation > 0.0) || !std::isfinite(separation)) {
    throw ValidationError("synth_features: separation must be positive");
  }
  if (n_clusters < 1 || dim < 1 || frames_per_seq < 1 || n_seqs < 1) {
    throw ValidationError("synth_features: counts must be positive");
  }
  Rng rng(seed);
  SynthFeatures out;
  const auto d = static_cast<std::size_t>(dim);
  if (n_clusters <= dim) {
    // Scaled simplex: e_c * sep / sqrt(2) are pairwise exactly sep apart.
    for (int c = 0; c < n_clusters; ++c) {
      std::vector<double> m(d, 0.0);
      if (n_clusters > 1) m[static_cast<std::size_t>(c)] = separation / std::sqrt(2.0);
      out.means.push_back(std::move(m));
    }
  } else {
    double radius = separation * std::cbrt(static_cast<double>(n_clusters));
    while (static_cast<int>(out.means.size()) < n_clusters) {
      int attempts = 0;
      while (static_cast<int>(out.means.size()) < n_clusters && attempts < 1000) {
        ++attempts;
        std::vector<double> m(d);
        for (auto& v : m) v = (2.0 * rng.uniform() - 1.0) * radius;
        bool ok = true;
        for (const auto& other : out.means) {
          double s = 0.0;
          for (std::size_t j = 0; j < d; ++j) s += (m[j] - other[j]) * (m[j] - other[j]);
          if (std::sqrt(s) < separation) ok = false;
        }
        if (ok) out.means.push_back(std::move(m)), attempts = 0;
      }
      radius *= 1.5;
    }
  }
  for (int s = 0; s < n_seqs; ++s) {
    FeatureSequence x;
    x.dim = static_cast<std::uint32_t>(dim);
    x.frame_rate_hz = frame_rate_hz;
    std::vector<int> labels;
    for (int f = 0; f < frames_per_seq; ++f) {
      const int c = static_cast<int>(rng.below(static_cast<std::uint64_t>(n_clusters)));
      labels.push_back(c);
      for (std::size_t j = 0; j < d; ++j) {
        x.frames.push_back(static_cast<float>(out.means[static_cast<std::size_t>(c)][j] + rng.normal()));
      }
    }
    out.corpus.push_back(std::move(x));
    out.labels.push_back(std::move(labels));
  }
  return out;
}

TextSource::TextSource(int char_vocab, int n_topics, std::uint64_t seed)
    : c_(char_vocab), n_topics_(n_topics) {
  if (char_vocab < 1 || n_topics < 1) throw ValidationError("text source: bad sizes");
  const auto C = static_cast<std::size_t>(c_);
  Rng rng(seed);
  std::vector<double> base(C * C * C, kFloorWeight);
  for (std::size_t ctx = 0; ctx < C * C; ++ctx) {
    for (double w : kFavouredWeights) base[ctx * C + rng.below(C)] += w;
  }
  std::vector<std::vector<bool>> topic_chars(static_cast<std::size_t>(n_topics), std::vector<bool>(C, false));
  if (n_topics > 1) {
    const std::size_t subset = std::max<std::size_t>(1, C / 3);
    for (auto& chars : topic_chars) {
      std::vector<std::size_t> perm(C);
      std::iota(perm.begin(), perm.end(), 0);
      rng.shuffle(perm);
      for (std::size_t i = 0; i < subset; ++i) chars[perm[i]] = true;
    }
  }
  trans_.resize(static_cast<std::size_t>(n_topics) * C * C * C);
  for (int t = 0; t < n_topics; ++t) {
    const auto& chars = topic_chars[static_cast<std::size_t>(t)];
    for (std::size_t ctx = 0; ctx < C * C; ++ctx) {
      double* row = trans_.data() + (static_cast<std::size_t>(t) * C * C + ctx) * C;
      double sum = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        row[c] = base[ctx * C + c] * (chars[c] ? kTopicTilt : 1.0);
        sum += row[c];
      }
      for (std::size_t c = 0; c < C; ++c) row[c] /= sum;
    }
  }
  // Stationary law of the (prev2, prev1) pair chain by power iteration.
  for (int t = 0; t < n_topics; ++t) {
    std::vector<double> pi(C * C, 1.0 / static_cast<double>(C * C)), next(C * C);
    for (int iter = 0; iter < 100000; ++iter) {
      std::fill(next.begin(), next.end(), 0.0);
      for (std::size_t a = 0; a < C; ++a) {
        for (std::size_t b = 0; b < C; ++b) {
          const double w = pi[a * C + b];
          const auto row = transition(t, static_cast<int>(a), static_cast<int>(b));
          for (std::size_t c = 0; c < C; ++c) next[b * C + c] += w * row[c];
        }
      }
      double diff = 0.0;
      for (std::size_t i = 0; i < pi.size(); ++i) diff += std::abs(next[i] - pi[i]);
      pi.swap(next);
      if (diff < 1e-14) break;
    }
    stationary_.push_back(std::move(pi));
  }
}

std::span<const double> TextSource::transition(int topic, int prev2, int prev1) const {
  const auto C = static_cast<std::size_t>(c_);
  const std::size_t ctx = static_cast<std::size_t>(prev2) * C + static_cast<std::size_t>(prev1);
  return {trans_.data() + (static_cast<std::size_t>(topic) * C * C + ctx) * C, C};
}

const std::vector<double>& TextSource::stationary_pairs(int topic) const {
  return stationary_.at(static_cast<std::size_t>(topic));
}

std::vector<double> TextSource::stationary_marginal(int topic) const {
  const auto C = static_cast<std::size_t>(c_);
  const auto& pi = stationary_pairs(topic);
  std::vector<double> m(C, 0.0);
  for (std::size_t a = 0; a < C; ++a) {
    for (std::size_t b = 0; b < C; ++b) m[b] += pi[a * C + b];
  }
  return m;
}

double TextSource::entropy_rate(int topic) const {
  const auto C = static_cast<std::size_t>(c_);
  const auto& pi = stationary_pairs(topic);
  double h = 0.0;
  for (std::size_t a = 0; a < C; ++a) {
    for (std::size_t b = 0; b < C; ++b) {
      for (double p : transition(topic, static_cast<int>(a), static_cast<int>(b))) {
        if (p > 0.0) h -= pi[a * C + b] * p * std::log(p);
      }
    }
  }
  return h;
}

std::vector<TokenId> TextSource::sample(int topic, int length, Rng& rng) const {
  const auto C = static_cast<std::size_t>(c_);
  std::vector<TokenId> out;
  const std::size_t pair = rng.categorical(stationary_pairs(topic));
  out.push_back(static_cast<TokenId>(pair / C));
  if (length > 1) out.push_back(static_cast<TokenId>(pair % C));
  while (static_cast<int>(out.size()) < length) {
    const auto row = transition(topic, out[out.size() - 2], out[out.size() - 1]);
    out.push_back(static_cast<TokenId>(rng.categorical(row)));
  }
  return out;
}

Corpus make_text_corpus(const TransferSpec& spec, int n_sentences,
                        std::pair<int, int> sentence_len_range, std::uint64_t seed) {
  validate(spec);
  if (n_sentences < 1) throw ValidationError("make_text_corpus: n_sentences must be >= 1");
  check_range(sentence_len_range, "make_text_corpus");
  const TextSource source(spec.char_vocab, 1, derive_seed(spec.seed, kTextStream));
  Rng rng(seed);
  Corpus out;
  for (int i = 0; i < n_sentences; ++i) {
    const int len = static_cast<int>(rng.between(sentence_len_range.first, sentence_len_range.second));
    out.push_back({source.sample(0, len, rng), spec.char_vocab});
  }
  return out;
}

std::vector<TextStory> make_text_stories(const TransferSpec& spec, int n_topics, int n_stories,
                                         int segments_per_story,
                                         std::pair<int, int> segment_len_range,
                                         std::uint64_t seed) {
  validate(spec);
  if (n_stories < 1 || segments_per_story < 1 || n_topics < 1) {
    throw ValidationError("make_text_stories: counts must be positive");
  }
  check_range(segment_len_range, "make_text_stories");
  const TextSource source(spec.char_vocab, n_topics, derive_seed(spec.seed, kTextStream));
  Rng rng(seed);
  std::vector<TextStory> out;
  for (int s = 0; s < n_stories; ++s) {
    TextStory story;
    story.topic = static_cast<int>(rng.below(static_cast<std::uint64_t>(n_topics)));
    for (int g = 0; g < segments_per_story; ++g) {
      const int len =
          static_cast<int>(rng.between(segment_len_range.first, segment_len_range.second));
      story.segments.push_back({source.sample(story.topic, len, rng), spec.char_vocab});
    }
    out.push_back(std::move(story));
  }
  return out;
}

Expansion expand_to_units_with_runs(const Corpus& text, const TransferSpec& spec) {
  validate(spec);
  const int K = spec.unit_vocab();
  const std::uint64_t base = derive_seed(spec.seed, kExpandStream);
  Expansion out;
  for (std::size_t i = 0; i < text.size(); ++i) {
    Rng rng(derive_seed(base, i));
    TokenSequence units;
    units.vocab_size = K;
    std::vector<int> runs;
    for (TokenId c : text[i].tokens) {
      if (c < 0 || c >= spec.char_vocab) {
        throw ValidationError("expand_to_units: symbol " + std::to_string(c) +
                              " outside the character vocabulary");
      }
      const int run = static_cast<int>(rng.between(spec.tokens_per_char_min, spec.tokens_per_char_max));
      runs.push_back(run);
      for (int r = 0; r < run; ++r) {
        TokenId u = c * spec.subtokens_per_char +
                    static_cast<TokenId>(rng.below(static_cast<std::uint64_t>(spec.subtokens_per_char)));
        const bool noisy = rng.bernoulli(spec.noise_p);
        const auto replacement = static_cast<TokenId>(rng.below(static_cast<std::uint64_t>(K)));
        if (noisy) u = replacement;
        units.tokens.push_back(u);
      }
    }
    out.units.push_back(std::move(units));
    out.run_lengths.push_back(std::move(runs));
  }
  return out;
}

Corpus expand_to_units(const Corpus& text, const TransferSpec& spec) {
  return expand_to_units_with_runs(text, spec).units;
}

PairwiseBenchmark make_swuggy_pairs(const Corpus& units, int n_pairs, Corruption corruption,
                                    int k, std::uint64_t seed) {
  if (units.empty()) throw ValidationError("make_swuggy_pairs: empty corpus");
  if (n_pairs < 1 || k < 0) throw ValidationError("make_swuggy_pairs: bad n_pairs or k");
  const int V = units.front().vocab_size;
  auto has_unequal_neighbours = [](const TokenSequence& z) {
    for (std::size_t i = 0; i + 1 < z.size(); ++i) {
      if (z.tokens[i] != z.tokens[i + 1]) return true;
    }
    return false;
  };
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < units.size(); ++i) {
    validate(units[i]);
    const auto& z = units[i];
    const bool ok = corruption == Corruption::kSubstitute
                        ? z.size() >= static_cast<std::size_t>(k)
                        : (k == 0 || has_unequal_neighbours(z));
    if (ok) eligible.push_back(i);
  }
  if (eligible.empty()) throw ValidationError("make_swuggy_pairs: no sequence long enough");
  if (corruption == Corruption::kSubstitute && k > 0 && V < 2) {
    throw ValidationError("make_swuggy_pairs: substitution needs at least two units");
  }

  Rng rng(seed);
  rng.shuffle(eligible);
  PairwiseBenchmark b;
  b.name = std::string(corruption == Corruption::kSubstitute ? "swuggy-sub-k" : "swuggy-swap-k") +
           std::to_string(k);
  b.vocab_size = V;
  std::size_t cursor = 0;
  std::size_t misses = 0;
  for (int i = 0; i < n_pairs;) {
    const TokenSequence& pos = units[eligible[cursor++ % eligible.size()]];
    TokenSequence neg = pos;
    if (corruption == Corruption::kSubstitute) {
      std::vector<std::size_t> positions(pos.size());
      std::iota(positions.begin(), positions.end(), 0);
      for (int j = 0; j < k; ++j) {
        const auto pick = static_cast<std::size_t>(j) +
                          static_cast<std::size_t>(rng.below(positions.size() - static_cast<std::size_t>(j)));
        std::swap(positions[static_cast<std::size_t>(j)], positions[pick]);
        auto& t = neg.tokens[positions[static_cast<std::size_t>(j)]];
        auto r = static_cast<TokenId>(rng.below(static_cast<std::uint64_t>(V - 1)));
        t = r >= t ? r + 1 : r;
      }
    } else {
      // Swaps can undo each other; redraw, and give up on a sequence that
      // keeps returning to itself.
      for (int attempt = 0; attempt < 100; ++attempt) {
        neg = pos;
        for (int j = 0; j < k; ++j) {
          std::vector<std::size_t> swappable;
          for (std::size_t p = 0; p + 1 < neg.size(); ++p) {
            if (neg.tokens[p] != neg.tokens[p + 1]) swappable.push_back(p);
          }
          const std::size_t p = swappable[static_cast<std::size_t>(rng.below(swappable.size()))];
          std::swap(neg.tokens[p], neg.tokens[p + 1]);
        }
        if (k == 0 || !(neg == pos)) break;
      }
      if (k > 0 && neg == pos) {
        if (++misses > eligible.size()) {
          throw ValidationError("make_swuggy_pairs: swaps cannot change any sequence");
        }
        continue;
      }
    }
    b.pairs.push_back({"swuggy-" + std::to_string(i), pos, std::move(neg)});
    ++i;
  }
  return b;
}

TokenSequence concat(const Corpus& segments) {
  TokenSequence out;
  if (segments.empty()) return out;
  out.vocab_size = segments.front().vocab_size;
  for (const auto& s : segments) out.tokens.insert(out.tokens.end(), s.tokens.begin(), s.tokens.end());
  return out;
}

PairwiseBenchmark make_topic_pairs(const std::vector<Corpus>& stories, int n_pairs,
                                   std::uint64_t seed) {
  if (stories.size() < 2) throw ValidationError("make_topic_pairs: need at least two stories");
  if (n_pairs < 1) throw ValidationError("make_topic_pairs: n_pairs must be >= 1");
  for (const auto& s : stories) {
    if (s.size() < 2) throw ValidationError("make_topic_pairs: every story needs >= 2 segments");
  }
  constexpr int kMaxResample = 64;
  const std::size_t n = stories.size();
  Rng rng(seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);

  PairwiseBenchmark b;
  b.name = "topic";
  b.vocab_size = stories.front().front().vocab_size;
  for (int i = 0; i < n_pairs; ++i) {
    const std::size_t s = order[static_cast<std::size_t>(i) % n];
    const Corpus& story = stories[s];
    const TokenSequence& ending = story.back();
    bool found = false;
    std::size_t donor = 0;
    for (int attempt = 0; attempt < kMaxResample && !found; ++attempt) {
      donor = static_cast<std::size_t>(rng.below(n - 1));
      if (donor >= s) ++donor;
      found = !(stories[donor].back() == ending);
    }
    if (!found) continue;  // pair rejected
    Corpus neg_segments(story.begin(), story.end() - 1);
    neg_segments.push_back(stories[donor].back());
    b.pairs.push_back({"topic-" + std::to_string(i) + ":" + std::to_string(s) + ":" + std::to_string(donor),
                       concat(story), concat(neg_segments)});
  }
  return b;
}

}  // namespace ulm
