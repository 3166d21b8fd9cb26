#include "ulm/model.hpp"

#include <cmath>
#include <limits>

#include "ulm/errors.hpp"
#include "ulm/rng.hpp"
#include "ulm/transformer.hpp"

namespace ulm {

namespace {

void check_scorable(const Checkpoint& ckpt, const TokenSequence& z) {
  validate(z);
  const int k = ckpt.config.vocab_size - 3;
  for (TokenId t : z.tokens) {
    if (t >= k) {
      throw ValidationError("token id " + std::to_string(t) + " is not a content unit (K=" +
                            std::to_string(k) + ")");
    }
  }
  if (static_cast<long>(z.size()) + 2 > ckpt.config.max_seq_len) {
    throw CapacityError("sequence of length " + std::to_string(z.size()) +
                        " plus BOS/EOS exceeds max_seq_len " +
                        std::to_string(ckpt.config.max_seq_len));
  }
}

template <class S>
std::vector<std::vector<double>> forward_impl(const Checkpoint& ckpt,
                                              std::span<const TokenId> tokens) {
  const Transformer<S> model(ckpt);
  const auto logits = model.logits(tokens);
  const auto V = logits.cols();
  std::vector<std::vector<double>> probs(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    auto& row = probs[static_cast<std::size_t>(i)];
    row.resize(static_cast<std::size_t>(V));
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < V; ++j) mx = std::max(mx, static_cast<double>(logits(i, j)));
    double sum = 0.0;
    for (Eigen::Index j = 0; j < V; ++j) {
      row[static_cast<std::size_t>(j)] = std::exp(static_cast<double>(logits(i, j)) - mx);
      sum += row[static_cast<std::size_t>(j)];
    }
    for (auto& p : row) p /= sum;
  }
  return probs;
}

template <class S>
std::vector<double> token_log_probs_impl(const Checkpoint& ckpt, const TokenSequence& z) {
  const Transformer<S> model(ckpt);
  const Example ex = make_example(z.tokens, ckpt.config.vocab_size);
  const auto logits = model.logits(ex.inputs);
  const auto V = logits.cols();
  std::vector<double> out;
  out.reserve(ex.targets.size());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < V; ++j) mx = std::max(mx, static_cast<double>(logits(i, j)));
    double sum = 0.0;
    for (Eigen::Index j = 0; j < V; ++j) sum += std::exp(static_cast<double>(logits(i, j)) - mx);
    out.push_back(static_cast<double>(logits(i, ex.targets[static_cast<std::size_t>(i)])) - mx -
                  std::log(sum));
  }
  return out;
}

template <class S>
LossAndGrad loss_and_grad_impl(const Checkpoint& ckpt, const std::vector<Example>& examples,
                               std::int64_t count, std::uint64_t dropout_seed) {
  const Transformer<S> model(ckpt);
  std::vector<S> grad(model.layout().total, S(0));
  Rng rng(dropout_seed);
  const double nll = model.loss_and_grad(examples, &grad, static_cast<S>(1.0 / count),
                                         ckpt.config.dropout_p > 0.0 ? &rng : nullptr);
  LossAndGrad out;
  out.loss = nll / static_cast<double>(count);
  out.n_scored = count;
  for (const auto& e : model.layout().entries) {
    Tensor t;
    t.shape = e.shape;
    t.data.resize(e.size);
    for (std::size_t i = 0; i < e.size; ++i) t.data[i] = static_cast<float>(grad[e.offset + i]);
    out.grads.emplace(e.name, std::move(t));
  }
  return out;
}

template <class S>
double corpus_nll_impl(const Checkpoint& ckpt, const std::vector<Example>& examples) {
  const Transformer<S> model(ckpt);
  constexpr std::size_t kChunk = 32;
  double nll = 0.0;
  for (std::size_t i = 0; i < examples.size(); i += kChunk) {
    const std::size_t n = std::min(kChunk, examples.size() - i);
    nll += model.loss_and_grad(std::span<const Example>(examples.data() + i, n), nullptr, S(0),
                               nullptr);
  }
  return nll;
}

}  // namespace

Checkpoint cold_init(const ModelConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  Checkpoint ckpt;
  ckpt.config = cfg;
  ckpt.provenance = Provenance{Provenance::Kind::kCold, "", seed};
  Rng rng(seed);
  for (const auto& spec : tensor_specs(cfg)) {
    NamedTensor nt{spec.name, Tensor{spec.shape, {}}};
    const auto n = static_cast<std::size_t>(nt.tensor.numel());
    nt.tensor.data.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (spec.is_weight) {
        // + 0.0f folds a -0.0 draw (init_std == 0) to +0.0.
        nt.tensor.data[i] = static_cast<float>(cfg.init_std * rng.normal()) + 0.0f;
      } else {
        nt.tensor.data[i] = spec.unit_gain ? 1.0f : 0.0f;
      }
    }
    ckpt.tensors.push_back(std::move(nt));
  }
  return ckpt;
}

std::vector<std::vector<double>> forward(const Checkpoint& ckpt, std::span<const TokenId> tokens,
                                         Precision precision) {
  if (tokens.empty()) throw ValidationError("forward: empty input");
  if (static_cast<long>(tokens.size()) > ckpt.config.max_seq_len) {
    throw CapacityError("forward: input longer than max_seq_len");
  }
  return precision == Precision::kF64 ? forward_impl<double>(ckpt, tokens)
                                      : forward_impl<float>(ckpt, tokens);
}

std::vector<double> token_log_probs(const Checkpoint& ckpt, const TokenSequence& z,
                                    Precision precision) {
  check_scorable(ckpt, z);
  return precision == Precision::kF64 ? token_log_probs_impl<double>(ckpt, z)
                                      : token_log_probs_impl<float>(ckpt, z);
}

SequenceScore sequence_log_prob(const Checkpoint& ckpt, const TokenSequence& z,
                                Precision precision) {
  const auto lps = token_log_probs(ckpt, z, precision);
  SequenceScore s;
  for (double lp : lps) {
    s.total_logprob += lp;
    ++s.n_scored;
    s.mean_logprob += (lp - s.mean_logprob) / static_cast<double>(s.n_scored);
  }
  return s;
}

LossAndGrad nll_loss_and_grad(const Checkpoint& ckpt, const Corpus& batch,
                              std::uint64_t dropout_seed, Precision precision) {
  if (batch.empty()) throw ValidationError("nll_loss_and_grad: empty batch");
  std::vector<Example> examples;
  std::int64_t count = 0;
  for (const auto& z : batch) {
    check_scorable(ckpt, z);
    examples.push_back(make_example(z.tokens, ckpt.config.vocab_size));
    count += static_cast<std::int64_t>(examples.back().targets.size());
  }
  return precision == Precision::kF64 ? loss_and_grad_impl<double>(ckpt, examples, count, dropout_seed)
                                      : loss_and_grad_impl<float>(ckpt, examples, count, dropout_seed);
}

double perplexity(const Checkpoint& ckpt, const Corpus& corpus, Precision precision) {
  if (corpus.empty()) throw ValidationError("perplexity: empty corpus");
  std::vector<Example> examples;
  std::int64_t count = 0;
  for (const auto& z : corpus) {
    check_scorable(ckpt, z);
    examples.push_back(make_example(z.tokens, ckpt.config.vocab_size));
    count += static_cast<std::int64_t>(examples.back().targets.size());
  }
  const double nll = precision == Precision::kF64 ? corpus_nll_impl<double>(ckpt, examples)
                                                  : corpus_nll_impl<float>(ckpt, examples);
  return std::exp(nll / static_cast<double>(count));
}

}  // namespace ulm
