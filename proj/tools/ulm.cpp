#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "ulm/benchgen.hpp"
#include "ulm/errors.hpp"
#include "ulm/evalsuite.hpp"
#include "ulm/experiment.hpp"
#include "ulm/formats.hpp"
#include "ulm/generator.hpp"
#include "ulm/hash.hpp"
#include "ulm/model.hpp"
#include "ulm/parallel.hpp"
#include "ulm/surgery.hpp"
#include "ulm/tokenizer.hpp"
#include "ulm/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace ulm;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

// Raised for malformed configs and flag combinations the parser cannot
// catch on its own; maps to the usage exit code.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string load_config_text(const std::string& path) {
  try {
    return read_text_file(path);
  } catch (const Error& e) {
    throw UsageError(std::string("cannot read config: ") + e.what());
  }
}

template <class F>
auto parse_config(F&& parse) {
  try {
    return parse();
  } catch (const ValidationError& e) {
    throw UsageError(e.what());
  }
}

MetricEntry metric(std::string name, double value, std::int64_t n, MetricEntry::Kind kind,
                   const std::string& config_hash) {
  return MetricEntry{std::move(name), value, n, config_hash, kind};
}

// Every report carries the resolved configuration of the command that made it.
struct ReportBuilder {
  EvalReport report;
  std::string hash;

  ReportBuilder(const json& config, std::int64_t seed) {
    report.config_json = config.dump();
    report.seed = seed;
    report.timestamp = report_timestamp();
    hash = sha256_hex(report.config_json);
  }
  void add(std::string name, double value, std::int64_t n, MetricEntry::Kind kind) {
    report.metrics.push_back(metric(std::move(name), value, n, kind, hash));
  }
  void write(const std::string& path) const { write_report(path, report); }
};

FeatureCorpus read_feature_files(const std::vector<std::string>& paths) {
  FeatureCorpus out;
  for (const auto& p : paths) {
    if (fs::is_directory(p)) {
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(p)) {
        if (e.is_regular_file() && e.path().extension() == ".feat") files.push_back(e.path());
      }
      std::sort(files.begin(), files.end());
      for (const auto& f : files) out.push_back(read_features(f));
    } else {
      out.push_back(read_features(p));
    }
  }
  if (out.empty()) throw UsageError("no feature files found");
  return out;
}

int content_vocab(const Checkpoint& ck) { return Vocabulary::from_model_vocab(ck.config.vocab_size).k_content; }

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> grid;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      grid.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("bad temperature grid entry '" + item + "'");
    }
  }
  return grid;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

// ---- tokenizer ------------------------------------------------------------

void add_tokenizer(CLI::App& app) {
  auto* tok = app.add_subcommand("tokenizer", "k-means unit tokenizer");
  tok->require_subcommand(1);

  {
    auto* cmd = tok->add_subcommand("fit", "fit a codebook on feature files");
    struct Opts {
      std::vector<std::string> features;
      FitConfig fit;
      std::string out;
    };
    auto o = std::make_shared<Opts>();
    cmd->add_option("--features", o->features, "feature files or directories of *.feat")->required();
    cmd->add_option("--k", o->fit.k, "number of centroids");
    cmd->add_option("--seed", o->fit.seed);
    cmd->add_option("--max-iters", o->fit.max_iters);
    cmd->add_option("--rel-tol", o->fit.rel_tol);
    cmd->add_option("--out", o->out, "codebook path")->required();
    cmd->callback([o] {
      parse_config([&] { validate(o->fit); return 0; });
      const auto corpus = read_feature_files(o->features);
      write_codebook(o->out, fit_codebook(corpus, o->fit));
    });
  }
  {
    auto* cmd = tok->add_subcommand("encode", "quantize feature files to a token corpus");
    struct Opts {
      std::string codebook, out;
      std::vector<std::string> features;
      bool dedup = true;
    };
    auto o = std::make_shared<Opts>();
    cmd->add_option("--codebook", o->codebook)->required();
    cmd->add_option("--features", o->features)->required();
    cmd->add_flag("--dedup,!--no-dedup", o->dedup, "collapse repeated units (default on)");
    cmd->add_option("--out", o->out, "token corpus path")->required();
    cmd->callback([o] {
      const auto cb = read_codebook(o->codebook);
      Corpus corpus;
      for (const auto& x : read_feature_files(o->features)) corpus.push_back(encode(cb, x, o->dedup));
      write_tokens(o->out, corpus);
    });
  }
  {
    auto* cmd = tok->add_subcommand("distortion", "quantization and resynthesis distortion");
    struct Opts {
      std::string codebook, out;
      std::vector<std::string> features;
    };
    auto o = std::make_shared<Opts>();
    cmd->add_option("--codebook", o->codebook)->required();
    cmd->add_option("--features", o->features)->required();
    cmd->add_option("--out", o->out, "report path")->required();
    cmd->callback([o] {
      const auto cb = read_codebook(o->codebook);
      const auto corpus = read_feature_files(o->features);
      std::int64_t frames = 0;
      double resynth = 0.0;
      for (const auto& x : corpus) {
        const auto z = encode(cb, x, false);
        const auto n = static_cast<std::int64_t>(z.size());
        resynth += frame_distortion(x, reconstruct(cb, z, x.frame_rate_hz)) * static_cast<double>(n);
        frames += n;
      }
      ReportBuilder r(json{{"command", "tokenizer distortion"},
                           {"codebook", o->codebook},
                           {"features", o->features}},
                      static_cast<std::int64_t>(cb.seed));
      r.add("quantization_distortion", quantization_distortion(cb, corpus), frames, MetricEntry::Kind::kOther);
      r.add("resynthesis_distortion", resynth / static_cast<double>(frames), frames, MetricEntry::Kind::kOther);
      r.write(o->out);
    });
  }
}

// ---- lm -------------------------------------------------------------------

void add_lm(CLI::App& app) {
  auto* lm = app.add_subcommand("lm", "unit language model");
  lm->require_subcommand(1);

  {
    auto* cmd = lm->add_subcommand("init-cold", "randomly initialized checkpoint");
    struct Opts {
      std::string preset = "tiny", out;
      int vocab = 0;
      std::uint64_t seed = 0;
      std::optional<double> init_std, dropout;
      std::optional<int> max_seq_len;
      bool untied = false;
    };
    auto o = std::make_shared<Opts>();
    cmd->add_option("--preset", o->preset);
    cmd->add_option("--vocab-size", o->vocab, "number of content units K")->required();
    cmd->add_option("--seed", o->seed);
    cmd->add_option("--init-std", o->init_std);
    cmd->add_option("--dropout", o->dropout);
    cmd->add_option("--max-seq-len", o->max_seq_len);
    cmd->add_flag("--untied", o->untied, "separate output projection");
    cmd->add_option("--out", o->out)->required();
    cmd->callback([o] {
      const ModelConfig cfg = parse_config([&] {
        ModelConfig c = preset_config(o->preset, Vocabulary{o->vocab}.size());
        if (o->init_std) c.init_std = *o->init_std;
        if (o->dropout) c.dropout_p = *o->dropout;
        if (o->max_seq_len) c.max_seq_len = *o->max_seq_len;
        c.tie_embeddings = !o->untied;
        validate(c);
        return c;
      });
      write_checkpoint(o->out, cold_init(cfg, o->seed));
    });
  }
  {
    auto* cmd = lm->add_subcommand("twist-init", "warm start from a text checkpoint");
    struct Opts {
      std::string source, out, report;
      int vocab = 0;
      std::uint64_t seed = 0;
    };
    auto o = std::make_shared<Opts>();
    cmd->add_option("--source", o->source)->required();
    cmd->add_option("--vocab-size", o->vocab, "number of content units K")->required();
    cmd->add_option("--seed", o->seed);
    cmd->add_option("--out", o->out)->required();
    cmd->add_option("--report", o->report, "surgery report JSON")->required();
    cmd->callback([o] {
      if (o->vocab < 1) throw UsageError("--vocab-size must be >= 1");
      const auto result = twist_init(read_checkpoint(o->source), Vocabulary{o->vocab}, o->seed);
      const auto checked = verify_surgery(read_checkpoint(o->source), result.checkpoint);
      write_checkpoint(o->out, result.checkpoint);
      write_file_atomic(o->report, surgery_report_to_json(checked));
    });
  }
  {
    auto* cmd = lm->add_subcommand("train", "train a checkpoint on a token corpus");
    struct Opts {
      std::string config, init, train, out_dir;
      std::vector<std::string> val;
    };
    auto o = std::make_shared<Opts>();
    cmd->add_option("--config", o->config, "TrainConfig JSON")->required();
    cmd->add_option("--init", o->init, "starting checkpoint")->required();
    cmd->add_option("--train", o->train, "training token corpus")->required();
    cmd->add_option("--val", o->val, "validation corpora (repeatable)")->required();
    cmd->add_option("--out-dir", o->out_dir, "receives best.ckpt, last.ckpt, train_log.jsonl")->required();
    cmd->callback([o] {
      const auto text = load_config_text(o->config);
      const TrainConfig cfg = parse_config([&] { return train_config_from_json(text); });
      const auto start = read_checkpoint(o->init);
      const int k = content_vocab(start);
      const auto train_corpus = read_tokens(o->train, k);
      std::vector<Corpus> val;
      for (const auto& v : o->val) val.push_back(read_tokens(v, k));
      const auto result = train(start, train_corpus, val, cfg, [](const EvalRecord& r) {
        std::cerr << "step " << r.step << " loss " << r.train_loss << " val_ppl " << r.val_ppl << "\n";
      });
      const fs::path dir(o->out_dir);
      ensure_dir(dir);
      write_checkpoint(dir / "best.ckpt", result.best);
      write_checkpoint(dir / "last.ckpt", result.last);
      write_file_atomic(dir / "train_log.jsonl", encode_train_log(result.log));
      write_file_atomic(dir / "train_config.json", train_config_to_json(cfg));
    });
  }
  {
    auto* cmd = lm->add_subcommand("ppl", "perplexity per corpus");
    struct Opts {
      std::string ckpt, out;
      std::vector<std::string> corpora;
    };
    auto o = std::make_shared<Opts>();
    cmd->add_option("--ckpt", o->ckpt)->required();
    cmd->add_option("--corpus", o->corpora)->required();
    cmd->add_option("--out", o->out)->required();
    cmd->callback([o] {
      const auto ck = read_checkpoint(o->ckpt);
      ReportBuilder r(json{{"command", "lm ppl"}, {"ckpt", o->ckpt}, {"checkpoint_hash", checkpoint_hash(ck)},
                           {"corpus", o->corpora}},
                      static_cast<std::int64_t>(ck.provenance.seed));
      for (const auto& path : o->corpora) {
        const auto corpus = read_tokens(path, content_vocab(ck));
        r.add("ppl:" + fs::path(path).filename().string(), perplexity(ck, corpus),
              static_cast<std::int64_t>(corpus.size()), MetricEntry::Kind::kPerplexity);
      }
      r.write(o->out);
    });
  }
  {
    auto* cmd = lm->add_subcommand("judge", "pairwise benchmark accuracy");
    struct Opts {
      std::string ckpt, out;
      std::vector<std::string> benches;
    };
    auto o = std::make_shared<Opts>();
    cmd->add_option("--ckpt", o->ckpt)->required();
    cmd->add_option("--bench", o->benches)->required();
    cmd->add_option("--out", o->out)->required();
    cmd->callback([o] {
      const auto ck = read_checkpoint(o->ckpt);
      ReportBuilder r(json{{"command", "lm judge"}, {"ckpt", o->ckpt}, {"checkpoint_hash", checkpoint_hash(ck)},
                           {"bench", o->benches}},
                      static_cast<std::int64_t>(ck.provenance.seed));
      for (const auto& path : o->benches) {
        const auto b = read_benchmark(path);
        if (b.vocab_size != content_vocab(ck)) {
          throw UsageError("benchmark " + path + " has vocab_size " + std::to_string(b.vocab_size) +
                           ", checkpoint has " + std::to_string(content_vocab(ck)));
        }
        r.add("accuracy:" + b.name, benchmark_accuracy(ck, b).accuracy,
              static_cast<std::int64_t>(b.pairs.size()), MetricEntry::Kind::kAccuracy);
      }
      r.write(o->out);
    });
  }
  {
    auto* cmd = lm->add_subcommand("autobleu", "mean auto-BLEU of a token corpus");
    struct Opts {
      std::string tokens, out;
      int vocab = 0;
    };
    auto o = std::make_shared<Opts>();
    cmd->add_option("--tokens", o->tokens)->required();
    cmd->add_option("--vocab-size", o->vocab, "number of content units K")->required();
    cmd->add_option("--out", o->out)->required();
    cmd->callback([o] {
      const auto corpus = read_tokens(o->tokens, o->vocab);
      double sum = 0.0;
      for (const auto& z : corpus) sum += auto_bleu(z);
      ReportBuilder r(json{{"command", "lm autobleu"}, {"tokens", o->tokens}, {"vocab_size", o->vocab},
                           {"orders", {3, 4}}},
                      0);
      r.add("auto_bleu", sum / static_cast<double>(corpus.size()), static_cast<std::int64_t>(corpus.size()),
            MetricEntry::Kind::kOther);
      r.write(o->out);
    });
  }
  {
    auto* cmd = lm->add_subcommand("calibrate", "pick the sampling temperature matching reference auto-BLEU");
    struct Opts {
      std::string ckpt, prompts, references, grid = "0.5,0.6,0.7,0.8,0.9,1.0,1.1,1.2", out;
      int gen_len = 100;
      std::uint64_t seed = 0;
    };
    auto o = std::make_shared<Opts>();
    cmd->add_option("--ckpt", o->ckpt)->required();
    cmd->add_option("--prompts", o->prompts)->required();
    cmd->add_option("--references", o->references)->required();
    cmd->add_option("--temperatures", o->grid, "comma-separated grid");
    cmd->add_option("--gen-len", o->gen_len);
    cmd->add_option("--seed", o->seed);
    cmd->add_option("--out", o->out)->required();
    cmd->callback([o] {
      const auto grid = parse_config([&] { return parse_grid(o->grid); });
      const auto ck = read_checkpoint(o->ckpt);
      const int k = content_vocab(ck);
      const auto prompts = read_tokens(o->prompts, k);
      const auto refs = read_tokens(o->references, k);
      const auto res = calibrate_temperature(ck, prompts, refs, grid, o->gen_len, o->seed);
      ReportBuilder r(json{{"command", "lm calibrate"}, {"ckpt", o->ckpt}, {"checkpoint_hash", checkpoint_hash(ck)},
                           {"prompts", o->prompts}, {"references", o->references}, {"temperatures", grid},
                           {"gen_len", o->gen_len}, {"seed", o->seed}},
                      static_cast<std::int64_t>(o->seed));
      const auto n = static_cast<std::int64_t>(prompts.size());
      r.add("temperature", res.temperature, n, MetricEntry::Kind::kOther);
      r.add("reference_auto_bleu", res.reference_mean, static_cast<std::int64_t>(refs.size()),
            MetricEntry::Kind::kOther);
      for (const auto& row : res.table) {
        std::ostringstream name;
        name << "auto_bleu@T=" << row.temperature;
        r.add(name.str(), row.mean_auto_bleu, n, MetricEntry::Kind::kOther);
      }
      r.write(o->out);
    });
  }
  {
    auto* cmd = lm->add_subcommand("generate", "sample continuations of prompts");
    struct Opts {
      std::string ckpt, prompts, out;
      double temperature = 1.0;
      int max_new = 100;
      std::uint64_t seed = 0;
    };
    auto o = std::make_shared<Opts>();
    cmd->add_option("--ckpt", o->ckpt)->required();
    cmd->add_option("--prompts", o->prompts)->required();
    cmd->add_option("--temperature", o->temperature);
    cmd->add_option("--max-new", o->max_new);
    cmd->add_option("--seed", o->seed);
    cmd->add_option("--out", o->out, "generated token corpus (prompt plus continuation)")->required();
    cmd->callback([o] {
      if (!(o->temperature > 0.0)) throw UsageError("--temperature must be positive");
      const auto ck = read_checkpoint(o->ckpt);
      const auto prompts = read_tokens(o->prompts, content_vocab(ck));
      write_tokens(o->out, generate_all(ck, prompts, o->max_new, o->temperature, o->seed));
    });
  }
}

// ---- bench ----------------------------------------------------------------

TransferSpec& add_transfer_options(CLI::App* cmd, TransferSpec& spec) {
  cmd->add_option("--char-vocab", spec.char_vocab);
  cmd->add_option("--tokens-per-char-min", spec.tokens_per_char_min);
  cmd->add_option("--tokens-per-char-max", spec.tokens_per_char_max);
  cmd->add_option("--subtokens-per-char", spec.subtokens_per_char);
  cmd->add_option("--noise-p", spec.noise_p);
  cmd->add_option("--spec-seed", spec.seed, "seed of the text source and expansion");
  return spec;
}

void add_bench(CLI::App& app) {
  auto* bench = app.add_subcommand("bench", "synthetic data and benchmarks");
  bench->require_subcommand(1);

  {
    auto* cmd = bench->add_subcommand("synth-features", "Gaussian-cluster feature sequences");
    struct Opts {
      int clusters = 4, dim = 8, frames = 100, seqs = 20;
      double separation = 10.0, rate = 50.0;
      std::uint64_t seed = 0;
      std::string out_dir;
    };
    auto o = std::make_shared<Opts>();
    cmd->add_option("--clusters", o->clusters);
    cmd->add_option("--dim", o->dim);
    cmd->add_option("--frames", o->frames, "frames per sequence");
    cmd->add_option("--seqs", o->seqs);
    cmd->add_option("--separation", o->separation);
    cmd->add_option("--frame-rate", o->rate);
    cmd->add_option("--seed", o->seed);
    cmd->add_option("--out-dir", o->out_dir, "receives NNNNN.feat files and labels.txt")->required();
    cmd->callback([o] {
      const auto f = parse_config([&] {
        return synth_features(o->clusters, o->dim, o->frames, o->seqs, o->separation, o->seed, o->rate);
      });
      const fs::path dir(o->out_dir);
      ensure_dir(dir);
      Corpus labels;
      for (std::size_t i = 0; i < f.corpus.size(); ++i) {
        std::ostringstream name;
        name << std::setw(5) << std::setfill('0') << i << ".feat";
        write_features(dir / name.str(), f.corpus[i]);
        labels.push_back({std::vector<TokenId>(f.labels[i].begin(), f.labels[i].end()), o->clusters});
      }
      write_tokens(dir / "labels.txt", labels);
    });
  }
  {
    auto* cmd = bench->add_subcommand("text-corpus", "sentences from the character Markov source");
    struct Opts {
      TransferSpec spec;
      int n = 1000, min_len = 20, max_len = 60;
      std::uint64_t seed = 0;
      std::string out;
    };
    auto o = std::make_shared<Opts>();
    add_transfer_options(cmd, o->spec);
    cmd->add_option("--n-sentences", o->n);
    cmd->add_option("--min-len", o->min_len);
    cmd->add_option("--max-len", o->max_len);
    cmd->add_option("--seed", o->seed);
    cmd->add_option("--out", o->out)->required();
    cmd->callback([o] {
      const auto c = parse_config([&] { return make_text_corpus(o->spec, o->n, {o->min_len, o->max_len}, o->seed); });
      write_tokens(o->out, c);
    });
  }
  {
    auto* cmd = bench->add_subcommand("expand", "expand a character corpus into units");
    struct Opts {
      TransferSpec spec;
      std::string input, out;
    };
    auto o = std::make_shared<Opts>();
    add_transfer_options(cmd, o->spec);
    cmd->add_option("--input", o->input)->required();
    cmd->add_option("--out", o->out)->required();
    cmd->callback([o] {
      parse_config([&] { validate(o->spec); return 0; });
      write_tokens(o->out, expand_to_units(read_tokens(o->input, o->spec.char_vocab), o->spec));
    });
  }
  {
    auto* cmd = bench->add_subcommand("swuggy", "corrupted-sequence pairs");
    struct Opts {
      std::string units, corruption = "substitute", out;
      int vocab = 0, n = 1000, k = 3;
      std::uint64_t seed = 0;
    };
    auto o = std::make_shared<Opts>();
    cmd->add_option("--units", o->units)->required();
    cmd->add_option("--vocab-size", o->vocab, "number of content units K")->required();
    cmd->add_option("--n-pairs", o->n);
    cmd->add_option("--corruption", o->corruption)->check(CLI::IsMember({"substitute", "swap"}));
    cmd->add_option("--k", o->k);
    cmd->add_option("--seed", o->seed);
    cmd->add_option("--out", o->out)->required();
    cmd->callback([o] {
      const auto units = read_tokens(o->units, o->vocab);
      const auto kind = o->corruption == "swap" ? Corruption::kSwapAdjacent : Corruption::kSubstitute;
      write_benchmark(o->out, make_swuggy_pairs(units, o->n, kind, o->k, o->seed));
    });
  }
  {
    auto* cmd = bench->add_subcommand("topic", "story-ending pairs");
    struct Opts {
      std::string segments, out;
      int vocab = 0, per_story = 3, n = 500;
      std::uint64_t seed = 0;
    };
    auto o = std::make_shared<Opts>();
    cmd->add_option("--segments", o->segments, "token corpus, consecutive lines form a story")->required();
    cmd->add_option("--segments-per-story", o->per_story);
    cmd->add_option("--vocab-size", o->vocab, "number of content units K")->required();
    cmd->add_option("--n-pairs", o->n);
    cmd->add_option("--seed", o->seed);
    cmd->add_option("--out", o->out)->required();
    cmd->callback([o] {
      if (o->per_story < 2) throw UsageError("--segments-per-story must be >= 2");
      const auto segs = read_tokens(o->segments, o->vocab);
      const auto per = static_cast<std::size_t>(o->per_story);
      if (segs.size() % per != 0) throw ValidationError("segment count is not a multiple of --segments-per-story");
      std::vector<Corpus> stories;
      for (std::size_t i = 0; i < segs.size(); i += per) stories.emplace_back(segs.begin() + static_cast<long>(i), segs.begin() + static_cast<long>(i + per));
      write_benchmark(o->out, make_topic_pairs(stories, o->n, o->seed));
    });
  }
}

// ---- exp ------------------------------------------------------------------

void add_exp(CLI::App& app) {
  auto* exp = app.add_subcommand("exp", "experiments");
  exp->require_subcommand(1);
  auto* cmd = exp->add_subcommand("warm-vs-cold", "warm-start versus cold-start comparison");
  struct Opts {
    std::string config, out_dir;
    bool save_models = false;
  };
  auto o = std::make_shared<Opts>();
  cmd->add_option("--config", o->config, "WarmColdConfig JSON; defaults apply to missing fields");
  cmd->add_option("--out-dir", o->out_dir)->required();
  cmd->add_flag("--save-models", o->save_models, "also write the text, warm and cold checkpoints");
  cmd->callback([o] {
    const WarmColdConfig cfg = o->config.empty()
                                   ? default_warm_cold_config()
                                   : parse_config([&] { return warm_cold_config_from_json(load_config_text(o->config)); });
    const auto result = run_warm_cold(cfg, [](const std::string& m) { std::cerr << m << "\n"; });
    const fs::path dir(o->out_dir);
    ensure_dir(dir);
    write_file_atomic(dir / "summary.json", warm_cold_summary_json(cfg, result));
    ReportBuilder r(json::parse(warm_cold_config_to_json(cfg)), static_cast<std::int64_t>(cfg.seed));
    r.add("text_val_ppl", result.text_val_ppl, 1, MetricEntry::Kind::kPerplexity);
    r.add("untrained_swuggy_accuracy", result.untrained_swuggy, cfg.swuggy_pairs, MetricEntry::Kind::kAccuracy);
    for (const auto& run : result.runs) {
      const std::string s = ":seed" + std::to_string(run.seed);
      r.add("warm_ppl_quarter" + s, run.warm_ppl_quarter, 1, MetricEntry::Kind::kPerplexity);
      r.add("warm_ppl_final" + s, run.warm_ppl_final, 1, MetricEntry::Kind::kPerplexity);
      r.add("cold_ppl_final" + s, run.cold_ppl_final, 1, MetricEntry::Kind::kPerplexity);
      r.add("warm_swuggy" + s, run.warm_swuggy, cfg.swuggy_pairs, MetricEntry::Kind::kAccuracy);
      r.add("cold_swuggy" + s, run.cold_swuggy, cfg.swuggy_pairs, MetricEntry::Kind::kAccuracy);
      r.add("warm_topic" + s, run.warm_topic, cfg.topic_pairs, MetricEntry::Kind::kAccuracy);
      r.add("cold_topic" + s, run.cold_topic, cfg.topic_pairs, MetricEntry::Kind::kAccuracy);
      if (o->save_models) {
        write_checkpoint(dir / ("warm" + s.substr(1) + ".ckpt"), run.warm_best);
        write_checkpoint(dir / ("cold" + s.substr(1) + ".ckpt"), run.cold_best);
      }
    }
    if (o->save_models) write_checkpoint(dir / "text.ckpt", result.text_model);
    r.write((dir / "report.json").string());
    std::cout << "quarter wins " << result.quarter_wins() << "/" << result.runs.size() << ", final wins "
              << result.final_wins() << "/" << result.runs.size() << ", swuggy wins "
              << result.swuggy_wins() << "/" << result.runs.size() << "\n";
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unit language model toolkit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "help for every subcommand");
  int threads = 0;
  app.add_option("--threads", threads, "worker cap (overrides ULM_THREADS)")
      ->check(CLI::PositiveNumber);
  app.parse_complete_callback([&] {
    if (threads > 0) set_thread_limit(threads);
  });

  add_tokenizer(app);
  add_lm(app);
  add_bench(app);
  add_exp(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ValidationError& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DivergenceError& e) {
    std::cerr << "training diverged at step " << e.step() << " (lr " << e.lr() << "): " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
