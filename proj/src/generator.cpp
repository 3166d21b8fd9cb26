#include "ulm/generator.hpp"

#include <cmath>
#include <limits>

#include "ulm/errors.hpp"
#include "ulm/parallel.hpp"
#include "ulm/rng.hpp"
#include "ulm/transformer.hpp"

namespace ulm {

namespace {

void check_temperature(double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw ValidationError("temperature must be a positive finite number");
  }
}

// Distribution over the vocabulary from the last logits row.
template <class Row>
std::vector<double> sampling_distribution(const Row& logits, const Vocabulary& vocab,
                                          double temperature) {
  const auto V = static_cast<std::size_t>(vocab.size());
  std::vector<double> p(V, 0.0);
  auto allowed = [&](std::size_t j) {
    return static_cast<int>(j) != vocab.pad() && static_cast<int>(j) != vocab.bos();
  };
  if (temperature < kGreedyTemperature) {
    std::size_t best = 0;
    double best_v = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < V; ++j) {
      if (!allowed(j)) continue;
      const double v = static_cast<double>(logits(static_cast<Eigen::Index>(j)));
      if (v > best_v) best_v = v, best = j;
    }
    p[best] = 1.0;
    return p;
  }
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < V; ++j) {
    if (allowed(j)) mx = std::max(mx, static_cast<double>(logits(static_cast<Eigen::Index>(j))) / temperature);
  }
  double sum = 0.0;
  for (std::size_t j = 0; j < V; ++j) {
    if (!allowed(j)) continue;
    p[j] = std::exp(static_cast<double>(logits(static_cast<Eigen::Index>(j))) / temperature - mx);
    sum += p[j];
  }
  for (auto& x : p) x /= sum;
  return p;
}

}  // namespace

std::vector<double> next_token_distribution(const Checkpoint& ckpt,
                                            std::span<const TokenId> context,
                                            double temperature) {
  check_temperature(temperature);
  if (context.empty()) throw ValidationError("next_token_distribution: empty context");
  if (static_cast<long>(context.size()) > ckpt.config.max_seq_len) {
    throw CapacityError("next_token_distribution: context longer than max_seq_len");
  }
  const Transformer<float> model(ckpt);
  const auto logits = model.logits(context);
  return sampling_distribution(logits.row(logits.rows() - 1),
                               Vocabulary::from_model_vocab(ckpt.config.vocab_size), temperature);
}

TokenSequence generate(const Checkpoint& ckpt, const TokenSequence& prompt, int max_new,
                       double temperature, std::uint64_t seed) {
  check_temperature(temperature);
  validate(prompt);
  if (max_new < 0) throw ValidationError("generate: max_new must be >= 0");
  const Vocabulary vocab = Vocabulary::from_model_vocab(ckpt.config.vocab_size);
  for (TokenId t : prompt.tokens) {
    if (t >= vocab.k_content) throw ValidationError("generate: prompt contains a non-content id");
  }
  if (static_cast<long>(prompt.size()) + max_new + 2 > ckpt.config.max_seq_len) {
    throw CapacityError("generate: prompt plus max_new exceeds max_seq_len");
  }
  TokenSequence out = prompt;
  if (max_new == 0) return out;

  const Transformer<float> model(ckpt);
  Rng rng(seed);
  std::vector<TokenId> context;
  context.reserve(prompt.size() + static_cast<std::size_t>(max_new) + 1);
  context.push_back(vocab.bos());
  context.insert(context.end(), prompt.tokens.begin(), prompt.tokens.end());
  for (int i = 0; i < max_new; ++i) {
    const auto logits = model.logits(context);
    const auto p = sampling_distribution(logits.row(logits.rows() - 1), vocab, temperature);
    const auto next = static_cast<TokenId>(temperature < kGreedyTemperature
                                               ? std::max_element(p.begin(), p.end()) - p.begin()
                                               : static_cast<long>(rng.categorical(p)));
    if (next == vocab.eos()) break;
    out.tokens.push_back(next);
    context.push_back(next);
  }
  return out;
}

TokenSequence continuation(const TokenSequence& generated, const TokenSequence& prompt) {
  TokenSequence c;
  c.vocab_size = generated.vocab_size;
  c.tokens.assign(generated.tokens.begin() + static_cast<long>(prompt.size()), generated.tokens.end());
  return c;
}

Corpus generate_all(const Checkpoint& ckpt, const Corpus& prompts, int max_new,
                    double temperature, std::uint64_t seed) {
  Corpus out(prompts.size());
  parallel_for(prompts.size(), [&](std::size_t i) {
    out[i] = generate(ckpt, prompts[i], max_new, temperature, seed ^ static_cast<std::uint64_t>(i));
  });
  return out;
}

}  // namespace ulm
