#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ulm {

struct ModelConfig {
  int n_layers = 2;
  int d_model = 64;
  int n_heads = 4;
  int d_ff = 256;
  int vocab_size = 4;  // content tokens + 3 specials
  int max_seq_len = 128;
  double dropout_p = 0.0;
  bool tie_embeddings = true;
  double init_std = 0.02;

  bool operator==(const ModelConfig&) const = default;
};

/// Throws ValidationError on any violated config invariant.
void validate(const ModelConfig& cfg);

// Named presets: "tiny", "small" (desk scale) and "opt-125m", "opt-350m",
// "opt-1.3b" (layer/width shapes of the original text models).
ModelConfig preset_config(const std::string& name, int vocab_size);

// Specials follow the K content units: PAD = K, BOS = K+1, EOS = K+2.
struct Vocabulary {
  int k_content = 1;

  int pad() const { return k_content; }
  int bos() const { return k_content + 1; }
  int eos() const { return k_content + 2; }
  int size() const { return k_content + 3; }

  static Vocabulary from_model_vocab(int vocab_size) { return Vocabulary{vocab_size - 3}; }
};

struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<float> data;

  std::int64_t numel() const;
  bool operator==(const Tensor&) const = default;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
  bool operator==(const NamedTensor&) const = default;
};

struct Provenance {
  enum class Kind { kCold, kWarm };
  Kind kind = Kind::kCold;
  std::string source_hash;  // warm only
  std::uint64_t seed = 0;

  // "cold" or "warm:<source-hash>"
  std::string tag() const;
  static Provenance parse(const std::string& tag, std::uint64_t seed);

  bool operator==(const Provenance&) const = default;
};

struct Checkpoint {
  ModelConfig config;
  std::vector<NamedTensor> tensors;  // canonical order, see tensor_specs
  Provenance provenance;
  std::int64_t step = 0;

  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);
  const Tensor* find(const std::string& name) const;

  bool operator==(const Checkpoint&) const = default;
};

struct TensorSpec {
  std::string name;
  std::vector<std::int64_t> shape;
  bool is_weight;           // drawn from Normal(0, init_std^2) at init
  bool vocabulary_bound;    // depends on vocab_size (replaced by surgery)
  bool is_bias_or_gain;     // 1-D; excluded from weight decay
  bool unit_gain;           // layer-norm gain, initialized to 1
};

// Exact tensor layout implied by a config, in canonical file order.
std::vector<TensorSpec> tensor_specs(const ModelConfig& cfg);

/// Validates config, tensor names/shapes against tensor_specs, and
/// finiteness. Throws ValidationError.
void validate(const Checkpoint& ckpt);

}  // namespace ulm
