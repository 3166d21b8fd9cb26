#include "ulm/experiment.hpp"

#include <cmath>

#include <json.hpp>

#include "ulm/errors.hpp"
#include "ulm/evalsuite.hpp"
#include "ulm/formats.hpp"
#include "ulm/model.hpp"
#include "ulm/surgery.hpp"

namespace ulm {

using json = nlohmann::json;

namespace {

constexpr std::uint64_t kPretrainStories = 21;
constexpr std::uint64_t kUnitStories = 22;
constexpr std::uint64_t kInitStream = 23;
constexpr std::uint64_t kBenchStream = 24;
constexpr std::uint64_t kTextValStories = 25;

struct StorySplit {
  Corpus flat;                  // one sequence per story
  std::vector<Corpus> stories;  // per story, per segment
};

StorySplit flatten(const std::vector<TextStory>& stories) {
  StorySplit out;
  for (const auto& s : stories) {
    out.stories.push_back(s.segments);
    out.flat.push_back(concat(s.segments));
  }
  return out;
}

// Expands each segment separately so story boundaries survive in unit space.
StorySplit expand_stories(const std::vector<TextStory>& stories, const TransferSpec& spec) {
  Corpus segments;
  for (const auto& s : stories) {
    for (const auto& g : s.segments) segments.push_back(g);
  }
  const Corpus units = expand_to_units(segments, spec);
  std::vector<TextStory> unit_stories;
  std::size_t i = 0;
  for (const auto& s : stories) {
    TextStory u{s.topic, {}};
    for (std::size_t g = 0; g < s.segments.size(); ++g) u.segments.push_back(units[i++]);
    unit_stories.push_back(std::move(u));
  }
  return flatten(unit_stories);
}

double ppl_at(const TrainLog& log, long step) {
  for (const auto& r : log.records) {
    if (r.step == step) return r.val_ppl;
  }
  throw ValidationError("experiment: no evaluation recorded at step " + std::to_string(step));
}

json train_to_json(const TrainConfig& c) { return json::parse(train_config_to_json(c)); }

json log_to_json(const TrainLog& log) {
  json records = json::array();
  for (const auto& r : log.records) {
    records.push_back({{"step", r.step}, {"train_loss", r.train_loss}, {"val_ppl", r.val_ppl},
                       {"lr", r.lr}});
  }
  return {{"records", records}, {"best_step", log.best_step}, {"best_val_ppl", log.best_val_ppl}};
}

}  // namespace

WarmColdConfig default_warm_cold_config() {
  WarmColdConfig c;
  c.transfer.seed = 7;
  c.seed = 7;

  c.pretrain.max_steps = 3000;
  c.pretrain.batch_sequences = 16;
  c.pretrain.max_tokens_per_sample = 64;
  c.pretrain.lr_max = 2e-3;
  c.pretrain.lr_final = 2e-4;
  c.pretrain.warmup_steps = 100;
  c.pretrain.eval_every = 1000;

  c.finetune.max_steps = 2000;
  c.finetune.batch_sequences = 8;
  c.finetune.max_tokens_per_sample = 128;
  c.finetune.lr_max = 1e-3;
  c.finetune.lr_final = 1e-4;
  c.finetune.warmup_steps = 100;
  c.finetune.eval_every = 250;
  return c;
}

int WarmColdResult::quarter_wins() const {
  int n = 0;
  for (const auto& r : runs) n += r.warm_ppl_quarter <= r.cold_ppl_final;
  return n;
}

int WarmColdResult::final_wins() const {
  int n = 0;
  for (const auto& r : runs) n += r.warm_ppl_final < r.cold_ppl_final;
  return n;
}

int WarmColdResult::swuggy_wins() const {
  int n = 0;
  for (const auto& r : runs) n += r.warm_swuggy >= r.cold_swuggy;
  return n;
}

WarmColdResult run_warm_cold(const WarmColdConfig& cfg, const ProgressFn& progress) {
  auto say = [&](const std::string& m) {
    if (progress) progress(m);
  };
  validate(cfg.transfer);
  validate(cfg.pretrain);
  validate(cfg.finetune);
  if (cfg.seeds.empty()) throw ValidationError("experiment: no seeds");
  if (cfg.finetune.max_steps % 4 != 0 ||
      (cfg.finetune.max_steps / 4) % cfg.finetune.eval_every != 0) {
    throw ValidationError("experiment: eval_every must divide max_steps/4");
  }
  const TransferSpec& spec = cfg.transfer;
  WarmColdResult out;

  // Character-level pretraining.
  const auto text_train = flatten(make_text_stories(spec, cfg.n_topics, cfg.pretrain_stories,
                                                    cfg.segments_per_story, cfg.segment_len,
                                                    derive_seed(cfg.seed, kPretrainStories)));
  const auto text_val = flatten(make_text_stories(spec, cfg.n_topics, cfg.unit_val_stories,
                                                  cfg.segments_per_story, cfg.segment_len,
                                                  derive_seed(cfg.seed, kTextValStories)));
  ModelConfig text_cfg = preset_config(cfg.model_preset, spec.char_vocab + 3);
  TrainConfig pre = cfg.pretrain;
  pre.seed = cfg.seed;
  say("pretraining text model");
  auto pretrained = train(cold_init(text_cfg, derive_seed(cfg.seed, kInitStream)), text_train.flat,
                          {text_val.flat}, pre, [&](const EvalRecord& r) {
                            say("  text step " + std::to_string(r.step) +
                                " val_ppl " + std::to_string(r.val_ppl));
                          });
  out.text_model = std::move(pretrained.best);
  out.text_val_ppl = pretrained.log.best_val_ppl;

  // Unit corpora: train, validation, and held-out benchmark stories.
  const auto unit_stories = make_text_stories(
      spec, cfg.n_topics, cfg.unit_train_stories + 2 * cfg.unit_val_stories,
      cfg.segments_per_story, cfg.segment_len, derive_seed(cfg.seed, kUnitStories));
  const auto units = expand_stories(unit_stories, spec);
  const auto n_train = static_cast<std::size_t>(cfg.unit_train_stories);
  const auto n_val = static_cast<std::size_t>(cfg.unit_val_stories);
  const Corpus unit_train(units.flat.begin(), units.flat.begin() + static_cast<long>(n_train));
  const Corpus unit_val(units.flat.begin() + static_cast<long>(n_train),
                        units.flat.begin() + static_cast<long>(n_train + n_val));
  const Corpus bench_flat(units.flat.begin() + static_cast<long>(n_train + n_val), units.flat.end());
  const std::vector<Corpus> bench_stories(units.stories.begin() + static_cast<long>(n_train + n_val),
                                          units.stories.end());

  const auto swuggy = make_swuggy_pairs(bench_flat, cfg.swuggy_pairs, Corruption::kSubstitute,
                                        cfg.swuggy_k, derive_seed(cfg.seed, kBenchStream));
  const auto topic = make_topic_pairs(bench_stories, cfg.topic_pairs,
                                      derive_seed(cfg.seed, kBenchStream + 1));

  const Vocabulary unit_vocab{spec.unit_vocab()};
  ModelConfig unit_cfg = text_cfg;
  unit_cfg.vocab_size = unit_vocab.size();
  out.untrained_swuggy =
      benchmark_accuracy(cold_init(unit_cfg, derive_seed(cfg.seed, kInitStream + 1)), swuggy)
          .accuracy;

  const long quarter = cfg.finetune.max_steps / 4;
  for (std::uint64_t s : cfg.seeds) {
    WarmColdRun run;
    run.seed = s;
    TrainConfig ft = cfg.finetune;
    ft.seed = s;

    const auto warm_start = twist_init(out.text_model, unit_vocab, derive_seed(s, kInitStream));
    const auto cold_start = cold_init(unit_cfg, derive_seed(s, kInitStream));

    say("seed " + std::to_string(s) + ": warm");
    auto warm = train(warm_start.checkpoint, unit_train, {unit_val}, ft, [&](const EvalRecord& r) {
      say("  warm step " + std::to_string(r.step) + " val_ppl " + std::to_string(r.val_ppl));
    });
    say("seed " + std::to_string(s) + ": cold");
    auto cold = train(cold_start, unit_train, {unit_val}, ft, [&](const EvalRecord& r) {
      say("  cold step " + std::to_string(r.step) + " val_ppl " + std::to_string(r.val_ppl));
    });

    run.warm_ppl_quarter = ppl_at(warm.log, quarter);
    run.warm_ppl_final = ppl_at(warm.log, cfg.finetune.max_steps);
    run.cold_ppl_final = ppl_at(cold.log, cfg.finetune.max_steps);
    run.warm_swuggy = benchmark_accuracy(warm.best, swuggy).accuracy;
    run.cold_swuggy = benchmark_accuracy(cold.best, swuggy).accuracy;
    run.warm_topic = benchmark_accuracy(warm.best, topic).accuracy;
    run.cold_topic = benchmark_accuracy(cold.best, topic).accuracy;
    run.warm_log = std::move(warm.log);
    run.cold_log = std::move(cold.log);
    run.warm_best = std::move(warm.best);
    run.cold_best = std::move(cold.best);
    out.runs.push_back(std::move(run));
  }
  return out;
}

std::string warm_cold_config_to_json(const WarmColdConfig& c) {
  const json j{{"transfer",
                {{"char_vocab", c.transfer.char_vocab},
                 {"tokens_per_char_min", c.transfer.tokens_per_char_min},
                 {"tokens_per_char_max", c.transfer.tokens_per_char_max},
                 {"subtokens_per_char", c.transfer.subtokens_per_char},
                 {"noise_p", c.transfer.noise_p},
                 {"seed", c.transfer.seed}}},
               {"model_preset", c.model_preset},
               {"n_topics", c.n_topics},
               {"segments_per_story", c.segments_per_story},
               {"segment_len", {c.segment_len.first, c.segment_len.second}},
               {"pretrain_stories", c.pretrain_stories},
               {"unit_train_stories", c.unit_train_stories},
               {"unit_val_stories", c.unit_val_stories},
               {"pretrain", train_to_json(c.pretrain)},
               {"finetune", train_to_json(c.finetune)},
               {"seeds", c.seeds},
               {"swuggy_pairs", c.swuggy_pairs},
               {"swuggy_k", c.swuggy_k},
               {"topic_pairs", c.topic_pairs},
               {"seed", c.seed}};
  return j.dump();
}

WarmColdConfig warm_cold_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("experiment config: malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw ValidationError("experiment config: expected an object");
  WarmColdConfig c = default_warm_cold_config();
  try {
    for (const auto& [k, v] : j.items()) {
      if (k == "transfer") {
        for (const auto& [tk, tv] : v.items()) {
          if (tk == "char_vocab") c.transfer.char_vocab = tv.get<int>();
          else if (tk == "tokens_per_char_min") c.transfer.tokens_per_char_min = tv.get<int>();
          else if (tk == "tokens_per_char_max") c.transfer.tokens_per_char_max = tv.get<int>();
          else if (tk == "subtokens_per_char") c.transfer.subtokens_per_char = tv.get<int>();
          else if (tk == "noise_p") c.transfer.noise_p = tv.get<double>();
          else if (tk == "seed") c.transfer.seed = tv.get<std::uint64_t>();
          else throw ValidationError("experiment config: unknown transfer field '" + tk + "'");
        }
      } else if (k == "model_preset") c.model_preset = v.get<std::string>();
      else if (k == "n_topics") c.n_topics = v.get<int>();
      else if (k == "segments_per_story") c.segments_per_story = v.get<int>();
      else if (k == "segment_len") c.segment_len = {v.at(0).get<int>(), v.at(1).get<int>()};
      else if (k == "pretrain_stories") c.pretrain_stories = v.get<int>();
      else if (k == "unit_train_stories") c.unit_train_stories = v.get<int>();
      else if (k == "unit_val_stories") c.unit_val_stories = v.get<int>();
      else if (k == "pretrain") c.pretrain = train_config_from_json(v.dump());
      else if (k == "finetune") c.finetune = train_config_from_json(v.dump());
      else if (k == "seeds") c.seeds = v.get<std::vector<std::uint64_t>>();
      else if (k == "swuggy_pairs") c.swuggy_pairs = v.get<int>();
      else if (k == "swuggy_k") c.swuggy_k = v.get<int>();
      else if (k == "topic_pairs") c.topic_pairs = v.get<int>();
      else if (k == "seed") c.seed = v.get<std::uint64_t>();
      else throw ValidationError("experiment config: unknown field '" + k + "'");
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("experiment config: ") + e.what());
  }
  validate(c.transfer);
  return c;
}

std::string warm_cold_summary_json(const WarmColdConfig& cfg, const WarmColdResult& r) {
  json runs = json::array();
  for (const auto& run : r.runs) {
    runs.push_back({{"seed", run.seed},
                    {"warm_ppl_quarter", run.warm_ppl_quarter},
                    {"warm_ppl_final", run.warm_ppl_final},
                    {"cold_ppl_final", run.cold_ppl_final},
                    {"warm_swuggy", run.warm_swuggy},
                    {"cold_swuggy", run.cold_swuggy},
                    {"warm_topic", run.warm_topic},
                    {"cold_topic", run.cold_topic},
                    {"warm_log", log_to_json(run.warm_log)},
                    {"cold_log", log_to_json(run.cold_log)}});
  }
  const json j{{"config", json::parse(warm_cold_config_to_json(cfg))},
               {"text_val_ppl", r.text_val_ppl},
               {"untrained_swuggy", r.untrained_swuggy},
               {"runs", runs},
               {"quarter_wins", r.quarter_wins()},
               {"final_wins", r.final_wins()},
               {"swuggy_wins", r.swuggy_wins()}};
  return j.dump(2);
}

}  // namespace ulm
