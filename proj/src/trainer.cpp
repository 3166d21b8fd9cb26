#include "ulm/trainer.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "ulm/errors.hpp"
#include "ulm/model.hpp"
#include "ulm/rng.hpp"
#include "ulm/transformer.hpp"

namespace ulm {

using json = nlohmann::json;

namespace {

constexpr std::uint64_t kShuffleStream = 11;
constexpr std::uint64_t kCropStream = 12;
constexpr std::uint64_t kDropoutStream = 13;

const char* schedule_name(Schedule s) { return s == Schedule::kCosine ? "cosine" : "inverse_sqrt"; }

}  // namespace

void validate(const TrainConfig& cfg) {
  auto fail = [](const std::string& m) { throw ValidationError("train config: " + m); };
  if (cfg.max_steps < 1) fail("max_steps must be >= 1");
  if (cfg.batch_sequences < 1) fail("batch_sequences must be >= 1");
  if (cfg.max_tokens_per_sample < 2) fail("max_tokens_per_sample must be >= 2");
  if (!(cfg.lr_max >= 0.0) || !(cfg.lr_final >= 0.0)) fail("learning rates must be >= 0");
  if (cfg.lr_final > cfg.lr_max) fail("lr_final must be <= lr_max");
  if (cfg.warmup_steps < 1) fail("warmup_steps must be >= 1");
  if (cfg.schedule == Schedule::kCosine && cfg.max_steps <= cfg.warmup_steps) {
    fail("cosine schedule needs max_steps > warmup_steps");
  }
  if (cfg.eval_every < 1) fail("eval_every must be >= 1");
  if (!(cfg.grad_clip_norm > 0.0)) fail("grad_clip_norm must be > 0");
  const auto& o = cfg.optimizer;
  if (!(o.beta1 >= 0.0 && o.beta1 < 1.0) || !(o.beta2 >= 0.0 && o.beta2 < 1.0)) {
    fail("betas must be in [0,1)");
  }
  if (!(o.eps > 0.0) || !(o.weight_decay >= 0.0)) fail("eps must be > 0, weight_decay >= 0");
}

TrainConfig preset_train_config(const std::string& name) {
  TrainConfig c;
  if (name == "full-warm" || name == "full-cold") {
    c.max_steps = 400000;
    c.batch_sequences = 64;
    c.max_tokens_per_sample = 704;
    c.warmup_steps = 100;
    c.schedule = Schedule::kInverseSqrt;
    c.lr_max = name == "full-warm" ? 4e-4 : 8e-5;
    c.lr_final = name == "full-warm" ? 8e-5 : 2.5e-5;
    c.eval_every = 10000;
  } else if (name == "full-cosine") {
    c.max_steps = 75000;
    c.batch_sequences = 1024;
    c.max_tokens_per_sample = 704;
    c.warmup_steps = 500;
    c.schedule = Schedule::kCosine;
    c.lr_max = 1e-4;
    c.lr_final = 1e-5;
    c.eval_every = 5000;
  } else if (name != "desk") {
    throw ValidationError("unknown train preset: " + name);
  }
  return c;
}

double lr_at(const TrainConfig& cfg, long step) {
  if (step < 1) throw ValidationError("lr_at: step must be >= 1");
  const double warm = static_cast<double>(cfg.warmup_steps);
  const double s = static_cast<double>(step);
  if (step <= cfg.warmup_steps) return cfg.lr_max * s / warm;
  if (cfg.schedule == Schedule::kInverseSqrt) {
    return std::max(cfg.lr_max * std::sqrt(warm / s), cfg.lr_final);
  }
  if (step > cfg.max_steps) throw ValidationError("lr_at: step beyond max_steps");
  const double progress = (s - warm) / static_cast<double>(cfg.max_steps - cfg.warmup_steps);
  return cfg.lr_final +
         0.5 * (cfg.lr_max - cfg.lr_final) * (1.0 + std::cos(std::numbers::pi * progress));
}

double clip_grad_norm(std::span<float> grad, double max_norm) {
  double sq = 0.0;
  for (float g : grad) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const auto scale = static_cast<float>(max_norm / norm);
    for (float& g : grad) g *= scale;
  }
  return norm;
}

AdamW::AdamW(std::size_t n, const OptimizerConfig& cfg, std::vector<bool> decay_mask)
    : cfg_(cfg), decay_(std::move(decay_mask)), m_(n, 0.0f), v_(n, 0.0f) {
  if (decay_.size() != n) throw ValidationError("AdamW: decay mask size mismatch");
}

void AdamW::step(std::span<float> params, std::span<const float> grad, double lr) {
  ++t_;
  const double b1 = cfg_.beta1, b2 = cfg_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const auto lr_f = static_cast<float>(lr);
  const auto wd = static_cast<float>(lr * cfg_.weight_decay);
  const auto eps = static_cast<float>(cfg_.eps);
  const auto b1f = static_cast<float>(b1), b2f = static_cast<float>(b2);
  const auto inv_c1 = static_cast<float>(1.0 / c1);
  const auto inv_c2 = static_cast<float>(1.0 / c2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const float g = grad[i];
    m_[i] = b1f * m_[i] + (1.0f - b1f) * g;
    v_[i] = b2f * v_[i] + (1.0f - b2f) * g * g;
    const float mhat = m_[i] * inv_c1;
    const float vhat = v_[i] * inv_c2;
    float update = lr_f * (mhat / (std::sqrt(vhat) + eps));
    if (decay_[i]) update += wd * params[i];
    params[i] -= update;
  }
}

TrainResult train(const Checkpoint& start, const Corpus& train_corpus,
                  const std::vector<Corpus>& val_corpora, const TrainConfig& cfg,
                  const EvalCallback& on_eval) {
  validate(cfg);
  validate(start);
  if (train_corpus.empty()) throw ValidationError("train: empty training corpus");
  if (val_corpora.empty()) throw ValidationError("train: no validation corpora");
  for (const auto& v : val_corpora) {
    if (v.empty()) throw ValidationError("train: empty validation corpus");
  }
  const int K = start.config.vocab_size - 3;
  for (const auto& z : train_corpus) {
    validate(z);
    for (TokenId t : z.tokens) {
      if (t >= K) throw ValidationError("train: token outside the model's content vocabulary");
    }
  }
  const auto window = static_cast<std::size_t>(
      std::min<long>(cfg.max_tokens_per_sample, static_cast<long>(start.config.max_seq_len) + 1));

  Transformer<float> model(start);
  const auto& layout = model.layout();
  std::vector<bool> decay(layout.total, false);
  for (const auto& e : layout.entries) {
    if (e.decay) std::fill(decay.begin() + static_cast<long>(e.offset),
                           decay.begin() + static_cast<long>(e.offset + e.size), true);
  }
  AdamW opt(layout.total, cfg.optimizer, std::move(decay));

  TrainResult result;
  result.best = start;
  auto snapshot = [&](long step) {
    Checkpoint c = start;
    model.store(c);
    c.step = start.step + step;
    return c;
  };

  std::vector<std::size_t> order(train_corpus.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  std::uint64_t epoch = 0;
  Rng crop_rng(derive_seed(cfg.seed, kCropStream));

  std::vector<float> grad(layout.total);
  double loss_sum = 0.0;
  long loss_steps = 0;
  bool have_best = false;
  for (long step = 1; step <= cfg.max_steps; ++step) {
    std::vector<Example> batch;
    std::size_t n_targets = 0;
    for (int b = 0; b < cfg.batch_sequences; ++b) {
      if (cursor == order.size()) {
        Rng shuffle_rng(derive_seed(derive_seed(cfg.seed, kShuffleStream), epoch++));
        shuffle_rng.shuffle(order);
        cursor = 0;
      }
      const auto& z = train_corpus[order[cursor++]];
      Example full = make_example(z.tokens, start.config.vocab_size);
      // full sequence [BOS, z, EOS] has inputs.size() + 1 tokens
      const std::size_t total = full.inputs.size() + 1;
      Example ex;
      if (total <= window) {
        ex = std::move(full);
      } else {
        const auto off = static_cast<std::size_t>(crop_rng.below(total - window + 1));
        ex.inputs.assign(full.inputs.begin() + static_cast<long>(off),
                         full.inputs.begin() + static_cast<long>(off + window - 1));
        ex.targets.assign(full.targets.begin() + static_cast<long>(off),
                          full.targets.begin() + static_cast<long>(off + window - 1));
      }
      n_targets += ex.targets.size();
      batch.push_back(std::move(ex));
    }

    const double lr = lr_at(cfg, step);
    std::fill(grad.begin(), grad.end(), 0.0f);
    Rng dropout_rng(derive_seed(derive_seed(cfg.seed, kDropoutStream), static_cast<std::uint64_t>(step)));
    const double nll = model.loss_and_grad(batch, &grad, 1.0f / static_cast<float>(n_targets),
                                           start.config.dropout_p > 0.0 ? &dropout_rng : nullptr);
    const double loss = nll / static_cast<double>(n_targets);
    if (!std::isfinite(loss)) {
      throw DivergenceError("training diverged: non-finite loss at step " + std::to_string(step) +
                                " (lr " + std::to_string(lr) + ")",
                            step, lr);
    }
    clip_grad_norm(grad, cfg.grad_clip_norm);
    opt.step(model.params(), grad, lr);
    loss_sum += loss;
    ++loss_steps;

    if (step % cfg.eval_every == 0 || step == cfg.max_steps) {
      Checkpoint current = snapshot(step);
      double ppl_sum = 0.0;
      for (const auto& v : val_corpora) ppl_sum += perplexity(current, v);
      EvalRecord rec{step, loss_sum / static_cast<double>(loss_steps),
                     ppl_sum / static_cast<double>(val_corpora.size()), lr};
      if (!std::isfinite(rec.val_ppl)) {
        throw DivergenceError("training diverged: non-finite validation perplexity at step " +
                                  std::to_string(step),
                              step, lr);
      }
      loss_sum = 0.0;
      loss_steps = 0;
      result.log.records.push_back(rec);
      if (!have_best || rec.val_ppl < result.log.best_val_ppl) {
        have_best = true;
        result.log.best_val_ppl = rec.val_ppl;
        result.log.best_step = step;
        result.best = current;
      }
      if (on_eval) on_eval(rec);
      if (step == cfg.max_steps) result.last = std::move(current);
    }
  }
  return result;
}

std::string encode_train_log(const TrainLog& log) {
  std::string out;
  for (const auto& r : log.records) {
    const json j{{"step", r.step}, {"train_loss", r.train_loss}, {"val_ppl", r.val_ppl},
                 {"lr", r.lr}, {"best", r.step == log.best_step}};
    out += j.dump() + "\n";
  }
  return out;
}

std::string train_config_to_json(const TrainConfig& c) {
  const json j{{"max_steps", c.max_steps},
               {"batch_sequences", c.batch_sequences},
               {"max_tokens_per_sample", c.max_tokens_per_sample},
               {"lr_max", c.lr_max},
               {"lr_final", c.lr_final},
               {"warmup_steps", c.warmup_steps},
               {"schedule", schedule_name(c.schedule)},
               {"optimizer",
                {{"beta1", c.optimizer.beta1},
                 {"beta2", c.optimizer.beta2},
                 {"eps", c.optimizer.eps},
                 {"weight_decay", c.optimizer.weight_decay}}},
               {"grad_clip_norm", c.grad_clip_norm},
               {"eval_every", c.eval_every},
               {"seed", c.seed}};
  return j.dump();
}

TrainConfig train_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("train config: malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw ValidationError("train config: expected an object");
  TrainConfig c;
  if (j.contains("preset")) c = preset_train_config(j.at("preset").get<std::string>());
  try {
    for (const auto& [k, v] : j.items()) {
      if (k == "preset") continue;
      else if (k == "max_steps") c.max_steps = v.get<long>();
      else if (k == "batch_sequences") c.batch_sequences = v.get<int>();
      else if (k == "max_tokens_per_sample") c.max_tokens_per_sample = v.get<int>();
      else if (k == "lr_max") c.lr_max = v.get<double>();
      else if (k == "lr_final") c.lr_final = v.get<double>();
      else if (k == "warmup_steps") c.warmup_steps = v.get<long>();
      else if (k == "schedule") {
        const auto s = v.get<std::string>();
        if (s == "inverse_sqrt") c.schedule = Schedule::kInverseSqrt;
        else if (s == "cosine") c.schedule = Schedule::kCosine;
        else throw ValidationError("train config: unknown schedule '" + s + "'");
      } else if (k == "optimizer") {
        for (const auto& [ok, ov] : v.items()) {
          if (ok == "beta1") c.optimizer.beta1 = ov.get<double>();
          else if (ok == "beta2") c.optimizer.beta2 = ov.get<double>();
          else if (ok == "eps") c.optimizer.eps = ov.get<double>();
          else if (ok == "weight_decay") c.optimizer.weight_decay = ov.get<double>();
          else throw ValidationError("train config: unknown optimizer field '" + ok + "'");
        }
      } else if (k == "grad_clip_norm") c.grad_clip_norm = v.get<double>();
      else if (k == "eval_every") c.eval_every = v.get<long>();
      else if (k == "seed") c.seed = v.get<std::uint64_t>();
      else throw ValidationError("train config: unknown field '" + k + "'");
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("train config: ") + e.what());
  }
  validate(c);
  return c;
}

}  // namespace ulm
