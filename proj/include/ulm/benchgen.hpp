#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "ulm/evalsuite.hpp"
#include "ulm/rng.hpp"
#include "ulm/types.hpp"

namespace ulm {

// Text-to-unit granularity model: each character becomes a run of
// [min, max] units drawn from its private sub-alphabet of
// subtokens_per_char units.
struct TransferSpec {
  int char_vocab = 27;
  int tokens_per_char_min = 2;
  int tokens_per_char_max = 3;
  int subtokens_per_char = 4;
  double noise_p = 0.1;
  std::uint64_t seed = 0;  // fixes the text source and the expansion draws

  int unit_vocab() const { return char_vocab * subtokens_per_char; }
  int owner_of(TokenId unit) const { return unit / subtokens_per_char; }
};

void validate(const TransferSpec& spec);

struct SynthFeatures {
  FeatureCorpus corpus;
  std::vector<std::vector<int>> labels;  // per sequence, per frame
  std::vector<std::vector<double>> means;
};

// Unit-variance Gaussian clusters whose means are pairwise at least
// separation apart.
SynthFeatures synth_features(int n_clusters, int dim, int frames_per_seq, int n_seqs,
                             double separation, std::uint64_t seed, double frame_rate_hz = 50.0);

// Order-2 Markov chains over the character alphabet, one per topic. Topic
// chains share a base transition structure and tilt toward a
// topic-specific subset of characters.
class TextSource {
 public:
  TextSource(int char_vocab, int n_topics, std::uint64_t seed);

  int char_vocab() const { return c_; }
  int n_topics() const { return n_topics_; }
  // P(next | prev2, prev1) for a topic; length char_vocab.
  std::span<const double> transition(int topic, int prev2, int prev1) const;
  // Stationary distribution over (prev2, prev1) pairs, index prev2*C+prev1.
  const std::vector<double>& stationary_pairs(int topic) const;
  std::vector<double> stationary_marginal(int topic) const;
  double entropy_rate(int topic) const;  // nats per symbol

  std::vector<TokenId> sample(int topic, int length, Rng& rng) const;

 private:
  int c_;
  int n_topics_;
  std::vector<double> trans_;  // [topic][prev2][prev1][next]
  std::vector<std::vector<double>> stationary_;
};

// Sentences from the spec's topic-0 chain, lengths uniform in len_range.
Corpus make_text_corpus(const TransferSpec& spec, int n_sentences,
                        std::pair<int, int> sentence_len_range, std::uint64_t seed);

// Multi-segment stories; each story draws a topic and samples every
// segment from that topic's chain.
struct TextStory {
  int topic = 0;
  Corpus segments;
};
std::vector<TextStory> make_text_stories(const TransferSpec& spec, int n_topics, int n_stories,
                                         int segments_per_story,
                                         std::pair<int, int> segment_len_range,
                                         std::uint64_t seed);

// Expands every sentence independently; the draws for sentence i use a
// seed derived from (spec.seed, i).
Corpus expand_to_units(const Corpus& text, const TransferSpec& spec);

struct Expansion {
  Corpus units;
  std::vector<std::vector<int>> run_lengths;  // per sentence, per character
};
Expansion expand_to_units_with_runs(const Corpus& text, const TransferSpec& spec);

enum class Corruption { kSwapAdjacent, kSubstitute };

PairwiseBenchmark make_swuggy_pairs(const Corpus& units, int n_pairs, Corruption corruption,
                                    int k, std::uint64_t seed);

// stories[i] is a list of segments. Positive: the full story. Negative:
// the same prefix with the final segment taken from a uniformly drawn
// different story. Pair ids are "topic-<n>:<story>:<donor>".
PairwiseBenchmark make_topic_pairs(const std::vector<Corpus>& stories, int n_pairs,
                                   std::uint64_t seed);

TokenSequence concat(const Corpus& segments);

}  // namespace ulm
