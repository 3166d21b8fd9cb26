#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ulm/checkpoint.hpp"
#include "ulm/rng.hpp"
#include "ulm/types.hpp"

namespace ulm {

// Flat parameter buffer layout; offsets follow tensor_specs order.
struct ParamLayout {
  struct Entry {
    std::string name;
    std::vector<std::int64_t> shape;
    std::size_t offset = 0;
    std::size_t size = 0;
    bool decay = false;  // 2-D weights take weight decay
  };
  struct Layer {
    std::size_t ln1_g, ln1_b, qkv_w, qkv_b, out_w, out_b;
    std::size_t ln2_g, ln2_b, fc_w, fc_b, proj_w, proj_b;
  };

  std::vector<Entry> entries;
  std::vector<Layer> layers;
  std::size_t tok_emb = 0, pos_emb = 0, lnf_g = 0, lnf_b = 0;
  std::size_t head_w = 0;  // valid iff !tie_embeddings
  std::size_t total = 0;

  explicit ParamLayout(const ModelConfig& cfg);
  const Entry& entry(const std::string& name) const;
};

// One training/scoring example: predict targets[i] from inputs[0..i].
struct Example {
  std::vector<TokenId> inputs;
  std::vector<TokenId> targets;
};

// [BOS, z..., EOS] split into shifted input/target rows.
Example make_example(std::span<const TokenId> z, int vocab_size);

// Decoder-only pre-norm transformer with hand-written backward pass.
// Scalar is float for training and double for verification.
template <class Scalar>
class Transformer {
 public:
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MapMat = Eigen::Map<Mat>;
  using ConstMapMat = Eigen::Map<const Mat>;

  explicit Transformer(const ModelConfig& cfg);
  explicit Transformer(const Checkpoint& ckpt);

  const ModelConfig& config() const { return cfg_; }
  const ParamLayout& layout() const { return layout_; }
  std::vector<Scalar>& params() { return params_; }
  const std::vector<Scalar>& params() const { return params_; }

  void load(const Checkpoint& ckpt);
  // Writes the parameters back into ckpt's tensors (rounded to float).
  void store(Checkpoint& ckpt) const;

  // Logits [len, vocab] for a single sequence in eval mode.
  Mat logits(std::span<const TokenId> inputs) const;

  // Sum of NLL over all targets of the batch; if grad is non-null, adds
  // d(sum NLL)/d(param) * grad_scale into it. Dropout applies when
  // dropout_rng is non-null and dropout_p > 0.
  double loss_and_grad(std::span<const Example> batch, std::vector<Scalar>* grad,
                       Scalar grad_scale, Rng* dropout_rng) const;

 private:
  struct Cache;
  void forward(std::span<const Example> batch, Cache& c, Rng* dropout_rng) const;
  void backward(std::span<const Example> batch, const Cache& c, Mat dlogits,
                std::vector<Scalar>& grad) const;

  ModelConfig cfg_;
  ParamLayout layout_;
  std::vector<Scalar> params_;
};

extern template class Transformer<float>;
extern template class Transformer<double>;

}  // namespace ulm
