#include "ulm/checkpoint.hpp"

#include <cmath>

#include "ulm/errors.hpp"

namespace ulm {

void validate(const ModelConfig& cfg) {
  auto fail = [](const std::string& msg) { throw ValidationError("model config: " + msg); };
  if (cfg.n_layers < 0) fail("n_layers must be >= 0");
  if (cfg.d_model < 1) fail("d_model must be >= 1");
  if (cfg.n_heads < 1) fail("n_heads must be >= 1");
  if (cfg.d_model % cfg.n_heads != 0) fail("d_model must be divisible by n_heads");
  if (cfg.d_ff < 1) fail("d_ff must be >= 1");
  if (cfg.vocab_size < 4) fail("vocab_size must be >= 4");
  if (cfg.max_seq_len < 2) fail("max_seq_len must be >= 2");
  if (!(cfg.dropout_p >= 0.0 && cfg.dropout_p < 1.0)) fail("dropout_p must be in [0,1)");
  if (!(cfg.init_std >= 0.0) || !std::isfinite(cfg.init_std)) fail("init_std must be finite and >= 0");
}

ModelConfig preset_config(const std::string& name, int vocab_size) {
  ModelConfig c;
  c.vocab_size = vocab_size;
  if (name == "tiny") {
    c.n_layers = 2, c.d_model = 64, c.n_heads = 4, c.d_ff = 256, c.max_seq_len = 128;
  } else if (name == "small") {
    c.n_layers = 4, c.d_model = 128, c.n_heads = 8, c.d_ff = 512, c.max_seq_len = 128;
  } else if (name == "opt-125m") {
    c.n_layers = 12, c.d_model = 768, c.n_heads = 12, c.d_ff = 3072, c.max_seq_len = 2048;
  } else if (name == "opt-350m") {
    c.n_layers = 24, c.d_model = 1024, c.n_heads = 16, c.d_ff = 4096, c.max_seq_len = 2048;
  } else if (name == "opt-1.3b") {
    c.n_layers = 24, c.d_model = 2048, c.n_heads = 32, c.d_ff = 8192, c.max_seq_len = 2048;
  } else {
    throw ValidationError("unknown model preset: " + name);
  }
  return c;
}

std::int64_t Tensor::numel() const {
  std::int64_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

std::string Provenance::tag() const {
  return kind == Kind::kCold ? std::string("cold") : "warm:" + source_hash;
}

Provenance Provenance::parse(const std::string& tag, std::uint64_t seed) {
  Provenance p;
  p.seed = seed;
  if (tag == "cold") {
    p.kind = Kind::kCold;
  } else if (tag.rfind("warm:", 0) == 0 && tag.size() > 5) {
    p.kind = Kind::kWarm;
    p.source_hash = tag.substr(5);
  } else {
    throw ValidationError("bad provenance tag: " + tag);
  }
  return p;
}

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t.tensor;
  }
  return nullptr;
}

const Tensor& Checkpoint::at(const std::string& name) const {
  if (const Tensor* t = find(name)) return *t;
  throw ValidationError("checkpoint has no tensor " + name);
}

Tensor& Checkpoint::at(const std::string& name) {
  return const_cast<Tensor&>(static_cast<const Checkpoint&>(*this).at(name));
}

std::vector<TensorSpec> tensor_specs(const ModelConfig& cfg) {
  const std::int64_t d = cfg.d_model, v = cfg.vocab_size, f = cfg.d_ff;
  std::vector<TensorSpec> specs;
  auto weight = [&](std::string name, std::vector<std::int64_t> shape, bool vocab = false) {
    specs.push_back({std::move(name), std::move(shape), true, vocab, false, false});
  };
  auto bias = [&](std::string name, std::int64_t n) {
    specs.push_back({std::move(name), {n}, false, false, true, false});
  };
  auto gain = [&](std::string name, std::int64_t n) {
    specs.push_back({std::move(name), {n}, false, false, true, true});
  };
  weight("tok_emb", {v, d}, true);
  weight("pos_emb", {cfg.max_seq_len, d});
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    gain(p + "ln1.gain", d);
    bias(p + "ln1.bias", d);
    weight(p + "attn.qkv.weight", {d, 3 * d});
    bias(p + "attn.qkv.bias", 3 * d);
    weight(p + "attn.out.weight", {d, d});
    bias(p + "attn.out.bias", d);
    gain(p + "ln2.gain", d);
    bias(p + "ln2.bias", d);
    weight(p + "mlp.fc.weight", {d, f});
    bias(p + "mlp.fc.bias", f);
    weight(p + "mlp.proj.weight", {f, d});
    bias(p + "mlp.proj.bias", d);
  }
  gain("ln_f.gain", d);
  bias("ln_f.bias", d);
  if (!cfg.tie_embeddings) weight("head.weight", {d, v}, true);
  return specs;
}

void validate(const Checkpoint& ckpt) {
  validate(ckpt.config);
  const auto specs = tensor_specs(ckpt.config);
  if (specs.size() != ckpt.tensors.size()) {
    throw ValidationError("checkpoint has " + std::to_string(ckpt.tensors.size()) +
                          " tensors, config implies " + std::to_string(specs.size()));
  }
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& t = ckpt.tensors[i];
    if (t.name != specs[i].name) {
      throw ValidationError("tensor " + std::to_string(i) + " is '" + t.name + "', expected '" +
                            specs[i].name + "'");
    }
    if (t.tensor.shape != specs[i].shape) throw ValidationError("bad shape for tensor " + t.name);
    if (static_cast<std::int64_t>(t.tensor.data.size()) != t.tensor.numel()) {
      throw ValidationError("data size does not match shape for tensor " + t.name);
    }
    for (float x : t.tensor.data) {
      if (!std::isfinite(x)) throw ValidationError("non-finite value in tensor " + t.name);
    }
  }
  if (ckpt.provenance.kind == Provenance::Kind::kWarm && ckpt.provenance.source_hash.empty()) {
    throw ValidationError("warm provenance without source hash");
  }
  if (ckpt.step < 0) throw ValidationError("negative step");
}

}  // namespace ulm
