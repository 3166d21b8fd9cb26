#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ulm/checkpoint.hpp"
#include "ulm/types.hpp"

namespace ulm {

enum class Schedule { kInverseSqrt, kCosine };

struct OptimizerConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double weight_decay = 0.01;
  bool operator==(const OptimizerConfig&) const = default;
};

struct TrainConfig {
  long max_steps = 2000;
  int batch_sequences = 8;
  int max_tokens_per_sample = 64;
  double lr_max = 1e-3;
  double lr_final = 1e-4;
  long warmup_steps = 100;
  Schedule schedule = Schedule::kInverseSqrt;
  OptimizerConfig optimizer;
  double grad_clip_norm = 1.0;
  long eval_every = 100;
  std::uint64_t seed = 0;
  bool operator==(const TrainConfig&) const = default;
};

void validate(const TrainConfig& cfg);

// "full-warm", "full-cold", "full-cosine" carry the full-scale recipes;
// "desk" is the scaled-down default.
TrainConfig preset_train_config(const std::string& name);

double lr_at(const TrainConfig& cfg, long step);

struct EvalRecord {
  long step = 0;
  double train_loss = 0.0;  // mean loss over the steps since the last record
  double val_ppl = 0.0;     // arithmetic mean of per-corpus perplexities
  double lr = 0.0;
  bool operator==(const EvalRecord&) const = default;
};

struct TrainLog {
  std::vector<EvalRecord> records;
  long best_step = 0;
  double best_val_ppl = 0.0;
  bool operator==(const TrainLog&) const = default;
};

struct TrainResult {
  Checkpoint best;
  Checkpoint last;
  TrainLog log;
};

// Scales grad in place so its global L2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_grad_norm(std::span<float> grad, double max_norm);

// Decoupled-weight-decay Adam over a flat parameter buffer.
class AdamW {
 public:
  AdamW(std::size_t n, const OptimizerConfig& cfg, std::vector<bool> decay_mask);
  void step(std::span<float> params, std::span<const float> grad, double lr);
  long steps_taken() const { return t_; }

 private:
  OptimizerConfig cfg_;
  std::vector<bool> decay_;
  std::vector<float> m_, v_;
  long t_ = 0;
};

using EvalCallback = std::function<void(const EvalRecord&)>;

// Deterministic given cfg.seed. Throws DivergenceError on a non-finite loss.
TrainResult train(const Checkpoint& start, const Corpus& train_corpus,
                  const std::vector<Corpus>& val_corpora, const TrainConfig& cfg,
                  const EvalCallback& on_eval = {});

std::string encode_train_log(const TrainLog& log);  // JSON lines
std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text);

}  // namespace ulm
