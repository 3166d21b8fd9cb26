#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "ulm/benchgen.hpp"
#include "ulm/checkpoint.hpp"
#include "ulm/trainer.hpp"

namespace ulm {

// Warm-start versus cold-start comparison on synthetic unit data.
//
// A text model is pretrained once on character stories. Unit stories are
// then produced by expanding fresh character stories, and for every seed a
// warm model (surgery on the pretrained text model) and a cold model are
// trained with identical recipes and compared.
struct WarmColdConfig {
  TransferSpec transfer;
  std::string model_preset = "small";
  int n_topics = 8;
  int segments_per_story = 5;
  std::pair<int, int> segment_len = {5, 8};
  int pretrain_stories = 20000;
  int unit_train_stories = 4000;
  int unit_val_stories = 400;
  TrainConfig pretrain;
  TrainConfig finetune;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  int swuggy_pairs = 1000;
  int swuggy_k = 3;
  int topic_pairs = 500;
  std::uint64_t seed = 0;  // corpora, pretraining and benchmarks
};

WarmColdConfig default_warm_cold_config();
std::string warm_cold_config_to_json(const WarmColdConfig& cfg);
WarmColdConfig warm_cold_config_from_json(const std::string& text);

struct WarmColdRun {
  std::uint64_t seed = 0;
  TrainLog warm_log, cold_log;
  double warm_ppl_quarter = 0.0;  // warm val PPL at step S/4
  double cold_ppl_final = 0.0;    // cold val PPL at step S
  double warm_ppl_final = 0.0;
  double warm_swuggy = 0.0, cold_swuggy = 0.0;
  double warm_topic = 0.0, cold_topic = 0.0;
  Checkpoint warm_best, cold_best;
};

struct WarmColdResult {
  double text_val_ppl = 0.0;
  double untrained_swuggy = 0.0;
  Checkpoint text_model;
  std::vector<WarmColdRun> runs;

  // Number of seeds satisfying each comparison.
  int quarter_wins() const;
  int final_wins() const;
  int swuggy_wins() const;
};

using ProgressFn = std::function<void(const std::string&)>;

WarmColdResult run_warm_cold(const WarmColdConfig& cfg, const ProgressFn& progress = {});

std::string warm_cold_summary_json(const WarmColdConfig& cfg, const WarmColdResult& result);

}  // namespace ulm
