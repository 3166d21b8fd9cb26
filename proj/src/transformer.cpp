#include "ulm/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ulm/errors.hpp"

namespace ulm {

namespace {

constexpr double kLayerNormEps = 1e-5;

template <class S>
using RowVec = Eigen::Matrix<S, 1, Eigen::Dynamic>;

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

// tanh-approximation GELU over a whole matrix; keeps the tanh values for
// the backward pass.
template <class Mat>
void gelu_forward(const Mat& pre, Mat& tanh_out, Mat& act) {
  using S = typename Mat::Scalar;
  const auto x = pre.array();
  tanh_out = (static_cast<S>(kGeluC) * (x + static_cast<S>(kGeluA) * x.cube())).tanh().matrix();
  act = (static_cast<S>(0.5) * x * (static_cast<S>(1) + tanh_out.array())).matrix();
}

// d act / d pre, multiplied into grad in place.
template <class Mat>
void gelu_backward(const Mat& pre, const Mat& tanh_val, Mat& grad) {
  using S = typename Mat::Scalar;
  const auto x = pre.array();
  const auto t = tanh_val.array();
  const S c = static_cast<S>(kGeluC);
  const S a3 = static_cast<S>(3 * kGeluA);
  grad.array() *= static_cast<S>(0.5) * (static_cast<S>(1) + t) +
                  static_cast<S>(0.5) * x * (static_cast<S>(1) - t.square()) * c *
                      (static_cast<S>(1) + a3 * x.square());
}

template <class Mat, class S>
void layer_norm(const Mat& x, const S* gain, const S* bias, Mat& y, std::vector<S>& mean,
                std::vector<S>& rstd) {
  const auto rows = x.rows();
  const auto d = x.cols();
  y.resize(rows, d);
  mean.resize(rows);
  rstd.resize(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const S* xr = x.data() + r * d;
    S m = 0;
    for (Eigen::Index j = 0; j < d; ++j) m += xr[j];
    m /= static_cast<S>(d);
    S var = 0;
    for (Eigen::Index j = 0; j < d; ++j) var += (xr[j] - m) * (xr[j] - m);
    var /= static_cast<S>(d);
    const S rs = static_cast<S>(1) / std::sqrt(var + static_cast<S>(kLayerNormEps));
    S* yr = y.data() + r * d;
    for (Eigen::Index j = 0; j < d; ++j) yr[j] = (xr[j] - m) * rs * gain[j] + bias[j];
    mean[r] = m;
    rstd[r] = rs;
  }
}

// dx (assigned), dgain/dbias (accumulated).
template <class Mat, class S>
void layer_norm_backward(const Mat& x, const Mat& dy, const S* gain, const std::vector<S>& mean,
                         const std::vector<S>& rstd, Mat& dx, S* dgain, S* dbias) {
  const auto rows = x.rows();
  const auto d = x.cols();
  dx.resize(rows, d);
  std::vector<S> xhat(d), dxhat(d);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const S* xr = x.data() + r * d;
    const S* dyr = dy.data() + r * d;
    S sum_dxhat = 0, sum_dxhat_xhat = 0;
    for (Eigen::Index j = 0; j < d; ++j) {
      xhat[j] = (xr[j] - mean[r]) * rstd[r];
      dxhat[j] = dyr[j] * gain[j];
      dgain[j] += dyr[j] * xhat[j];
      dbias[j] += dyr[j];
      sum_dxhat += dxhat[j];
      sum_dxhat_xhat += dxhat[j] * xhat[j];
    }
    const S inv_d = static_cast<S>(1) / static_cast<S>(d);
    S* dxr = dx.data() + r * d;
    for (Eigen::Index j = 0; j < d; ++j) {
      dxr[j] = rstd[r] * (dxhat[j] - sum_dxhat * inv_d - xhat[j] * sum_dxhat_xhat * inv_d);
    }
  }
}

template <class Mat>
Mat dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng) {
  using S = typename Mat::Scalar;
  Mat m(rows, cols);
  const S keep_scale = static_cast<S>(1.0 / (1.0 - p));
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = rng.uniform() < p ? S(0) : keep_scale;
  }
  return m;
}

}  // namespace

ParamLayout::ParamLayout(const ModelConfig& cfg) {
  std::size_t offset = 0;
  for (const auto& spec : tensor_specs(cfg)) {
    std::size_t size = 1;
    for (auto s : spec.shape) size *= static_cast<std::size_t>(s);
    entries.push_back({spec.name, spec.shape, offset, size, spec.shape.size() == 2});
    offset += size;
  }
  total = offset;
  tok_emb = entry("tok_emb").offset;
  pos_emb = entry("pos_emb").offset;
  lnf_g = entry("ln_f.gain").offset;
  lnf_b = entry("ln_f.bias").offset;
  if (!cfg.tie_embeddings) head_w = entry("head.weight").offset;
  layers.resize(static_cast<std::size_t>(cfg.n_layers));
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    auto& L = layers[static_cast<std::size_t>(l)];
    L.ln1_g = entry(p + "ln1.gain").offset;
    L.ln1_b = entry(p + "ln1.bias").offset;
    L.qkv_w = entry(p + "attn.qkv.weight").offset;
    L.qkv_b = entry(p + "attn.qkv.bias").offset;
    L.out_w = entry(p + "attn.out.weight").offset;
    L.out_b = entry(p + "attn.out.bias").offset;
    L.ln2_g = entry(p + "ln2.gain").offset;
    L.ln2_b = entry(p + "ln2.bias").offset;
    L.fc_w = entry(p + "mlp.fc.weight").offset;
    L.fc_b = entry(p + "mlp.fc.bias").offset;
    L.proj_w = entry(p + "mlp.proj.weight").offset;
    L.proj_b = entry(p + "mlp.proj.bias").offset;
  }
}

const ParamLayout::Entry& ParamLayout::entry(const std::string& name) const {
  for (const auto& e : entries) {
    if (e.name == name) return e;
  }
  throw ValidationError("unknown tensor: " + name);
}

Example make_example(std::span<const TokenId> z, int vocab_size) {
  const Vocabulary vocab = Vocabulary::from_model_vocab(vocab_size);
  Example ex;
  ex.inputs.reserve(z.size() + 1);
  ex.targets.reserve(z.size() + 1);
  ex.inputs.push_back(vocab.bos());
  for (TokenId t : z) {
    ex.inputs.push_back(t);
    ex.targets.push_back(t);
  }
  ex.targets.push_back(vocab.eos());
  return ex;
}

template <class S>
struct Transformer<S>::Cache {
  struct Layer {
    Mat x_in, ln1, qkv, att_cat, x_mid, ln2, fc_pre, fc_tanh, fc_act;
    std::vector<S> ln1_mean, ln1_rstd, ln2_mean, ln2_rstd;
    std::vector<Mat> probs;  // [seq * n_heads + head]
    Mat drop_attn, drop_mlp;
  };
  std::vector<Layer> layers;
  Mat drop_emb;
  Mat x_final, lnf;
  std::vector<S> lnf_mean, lnf_rstd;
  Mat logits;
  std::vector<Eigen::Index> start, len;
  Eigen::Index rows = 0;
};

template <class S>
Transformer<S>::Transformer(const ModelConfig& cfg)
    : cfg_(cfg), layout_(cfg), params_(layout_.total, S(0)) {}

template <class S>
Transformer<S>::Transformer(const Checkpoint& ckpt) : Transformer(ckpt.config) {
  load(ckpt);
}

template <class S>
void Transformer<S>::load(const Checkpoint& ckpt) {
  if (!(ckpt.config == cfg_)) throw ValidationError("checkpoint config mismatch");
  if (ckpt.tensors.size() != layout_.entries.size()) {
    throw ValidationError("checkpoint tensor count mismatch");
  }
  for (std::size_t i = 0; i < layout_.entries.size(); ++i) {
    const auto& e = layout_.entries[i];
    const auto& t = ckpt.tensors[i];
    if (t.name != e.name || t.tensor.data.size() != e.size) {
      throw ValidationError("checkpoint tensor mismatch at " + e.name);
    }
    std::copy(t.tensor.data.begin(), t.tensor.data.end(), params_.begin() + e.offset);
  }
}

template <class S>
void Transformer<S>::store(Checkpoint& ckpt) const {
  ckpt.config = cfg_;
  ckpt.tensors.resize(layout_.entries.size());
  for (std::size_t i = 0; i < layout_.entries.size(); ++i) {
    const auto& e = layout_.entries[i];
    auto& t = ckpt.tensors[i];
    t.name = e.name;
    t.tensor.shape = e.shape;
    t.tensor.data.resize(e.size);
    for (std::size_t j = 0; j < e.size; ++j) {
      t.tensor.data[j] = static_cast<float>(params_[e.offset + j]);
    }
  }
}

template <class S>
void Transformer<S>::forward(std::span<const Example> batch, Cache& c, Rng* dropout_rng) const {
  const Eigen::Index d = cfg_.d_model;
  const Eigen::Index V = cfg_.vocab_size;
  const Eigen::Index H = cfg_.n_heads;
  const Eigen::Index hd = d / H;
  const Eigen::Index dff = cfg_.d_ff;
  const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(hd)));
  const bool dropout = dropout_rng != nullptr && cfg_.dropout_p > 0.0;
  const S* p = params_.data();

  c.start.clear();
  c.len.clear();
  Eigen::Index rows = 0;
  for (const auto& ex : batch) {
    const auto len = static_cast<Eigen::Index>(ex.inputs.size());
    if (len < 1) throw ValidationError("empty example");
    if (len > cfg_.max_seq_len) {
      throw CapacityError("sequence length " + std::to_string(len) + " exceeds max_seq_len " +
                          std::to_string(cfg_.max_seq_len));
    }
    c.start.push_back(rows);
    c.len.push_back(len);
    rows += len;
  }
  c.rows = rows;

  Mat x(rows, d);
  for (std::size_t s = 0; s < batch.size(); ++s) {
    for (Eigen::Index i = 0; i < c.len[s]; ++i) {
      const TokenId tok = batch[s].inputs[static_cast<std::size_t>(i)];
      if (tok < 0 || tok >= V) throw ValidationError("token id out of range");
      const S* e = p + layout_.tok_emb + static_cast<std::size_t>(tok) * d;
      const S* pe = p + layout_.pos_emb + static_cast<std::size_t>(i) * d;
      S* xr = x.data() + (c.start[s] + i) * d;
      for (Eigen::Index j = 0; j < d; ++j) xr[j] = e[j] + pe[j];
    }
  }
  if (dropout) {
    c.drop_emb = dropout_mask<Mat>(rows, d, cfg_.dropout_p, *dropout_rng);
    x = x.cwiseProduct(c.drop_emb);
  }

  c.layers.resize(layout_.layers.size());
  for (std::size_t l = 0; l < layout_.layers.size(); ++l) {
    const auto& P = layout_.layers[l];
    auto& L = c.layers[l];
    L.x_in = x;
    layer_norm(L.x_in, p + P.ln1_g, p + P.ln1_b, L.ln1, L.ln1_mean, L.ln1_rstd);

    ConstMapMat w_qkv(p + P.qkv_w, d, 3 * d);
    Eigen::Map<const RowVec<S>> b_qkv(p + P.qkv_b, 3 * d);
    L.qkv.noalias() = L.ln1 * w_qkv;
    L.qkv.rowwise() += b_qkv;

    L.att_cat.setZero(rows, d);
    L.probs.assign(batch.size() * static_cast<std::size_t>(H), Mat());
    for (std::size_t s = 0; s < batch.size(); ++s) {
      const Eigen::Index st = c.start[s];
      const Eigen::Index n = c.len[s];
      for (Eigen::Index h = 0; h < H; ++h) {
        const auto q = L.qkv.block(st, h * hd, n, hd);
        const auto k = L.qkv.block(st, d + h * hd, n, hd);
        const auto v = L.qkv.block(st, 2 * d + h * hd, n, hd);
        Mat prob(n, n);
        prob.noalias() = q * k.transpose();
        for (Eigen::Index i = 0; i < n; ++i) {
          S* row = prob.data() + i * n;
          Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>> seen(row, i + 1);
          seen *= scale;
          seen = (seen - seen.maxCoeff()).exp();
          seen *= static_cast<S>(1) / seen.sum();
          for (Eigen::Index j = i + 1; j < n; ++j) row[j] = 0;
        }
        L.att_cat.block(st, h * hd, n, hd).noalias() = prob * v;
        L.probs[s * static_cast<std::size_t>(H) + static_cast<std::size_t>(h)] = std::move(prob);
      }
    }

    ConstMapMat w_out(p + P.out_w, d, d);
    Eigen::Map<const RowVec<S>> b_out(p + P.out_b, d);
    Mat attn(rows, d);
    attn.noalias() = L.att_cat * w_out;
    attn.rowwise() += b_out;
    if (dropout) {
      L.drop_attn = dropout_mask<Mat>(rows, d, cfg_.dropout_p, *dropout_rng);
      attn = attn.cwiseProduct(L.drop_attn);
    }
    L.x_mid = L.x_in + attn;

    layer_norm(L.x_mid, p + P.ln2_g, p + P.ln2_b, L.ln2, L.ln2_mean, L.ln2_rstd);
    ConstMapMat w_fc(p + P.fc_w, d, dff);
    Eigen::Map<const RowVec<S>> b_fc(p + P.fc_b, dff);
    L.fc_pre.noalias() = L.ln2 * w_fc;
    L.fc_pre.rowwise() += b_fc;
    gelu_forward(L.fc_pre, L.fc_tanh, L.fc_act);
    ConstMapMat w_proj(p + P.proj_w, dff, d);
    Eigen::Map<const RowVec<S>> b_proj(p + P.proj_b, d);
    Mat mlp(rows, d);
    mlp.noalias() = L.fc_act * w_proj;
    mlp.rowwise() += b_proj;
    if (dropout) {
      L.drop_mlp = dropout_mask<Mat>(rows, d, cfg_.dropout_p, *dropout_rng);
      mlp = mlp.cwiseProduct(L.drop_mlp);
    }
    x = L.x_mid + mlp;
  }

  c.x_final = std::move(x);
  layer_norm(c.x_final, p + layout_.lnf_g, p + layout_.lnf_b, c.lnf, c.lnf_mean, c.lnf_rstd);
  if (cfg_.tie_embeddings) {
    ConstMapMat emb(p + layout_.tok_emb, V, d);
    c.logits.noalias() = c.lnf * emb.transpose();
  } else {
    ConstMapMat head(p + layout_.head_w, d, V);
    c.logits.noalias() = c.lnf * head;
  }
}

template <class S>
void Transformer<S>::backward(std::span<const Example> batch, const Cache& c, Mat dlogits,
                              std::vector<S>& grad) const {
  const Eigen::Index d = cfg_.d_model;
  const Eigen::Index V = cfg_.vocab_size;
  const Eigen::Index H = cfg_.n_heads;
  const Eigen::Index hd = d / H;
  const Eigen::Index dff = cfg_.d_ff;
  const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(hd)));
  const S* p = params_.data();
  S* g = grad.data();

  Mat dlnf(c.rows, d);
  if (cfg_.tie_embeddings) {
    ConstMapMat emb(p + layout_.tok_emb, V, d);
    MapMat demb(g + layout_.tok_emb, V, d);
    demb.noalias() += dlogits.transpose() * c.lnf;
    dlnf.noalias() = dlogits * emb;
  } else {
    ConstMapMat head(p + layout_.head_w, d, V);
    MapMat dhead(g + layout_.head_w, d, V);
    dhead.noalias() += c.lnf.transpose() * dlogits;
    dlnf.noalias() = dlogits * head.transpose();
  }
  Mat dx;
  layer_norm_backward(c.x_final, dlnf, p + layout_.lnf_g, c.lnf_mean, c.lnf_rstd, dx,
                      g + layout_.lnf_g, g + layout_.lnf_b);

  Mat tmp;
  for (std::size_t li = layout_.layers.size(); li-- > 0;) {
    const auto& P = layout_.layers[li];
    const auto& L = c.layers[li];

    // MLP branch
    Mat dmlp = L.drop_mlp.size() ? Mat(dx.cwiseProduct(L.drop_mlp)) : dx;
    MapMat dw_proj(g + P.proj_w, dff, d);
    Eigen::Map<RowVec<S>> db_proj(g + P.proj_b, d);
    dw_proj.noalias() += L.fc_act.transpose() * dmlp;
    db_proj += dmlp.colwise().sum();
    ConstMapMat w_proj(p + P.proj_w, dff, d);
    Mat dpre(c.rows, dff);
    dpre.noalias() = dmlp * w_proj.transpose();
    gelu_backward(L.fc_pre, L.fc_tanh, dpre);
    MapMat dw_fc(g + P.fc_w, d, dff);
    Eigen::Map<RowVec<S>> db_fc(g + P.fc_b, dff);
    dw_fc.noalias() += L.ln2.transpose() * dpre;
    db_fc += dpre.colwise().sum();
    ConstMapMat w_fc(p + P.fc_w, d, dff);
    Mat dln2(c.rows, d);
    dln2.noalias() = dpre * w_fc.transpose();
    layer_norm_backward(L.x_mid, dln2, p + P.ln2_g, L.ln2_mean, L.ln2_rstd, tmp, g + P.ln2_g,
                        g + P.ln2_b);
    dx += tmp;  // now d(x_mid)

    // attention branch
    Mat datt = L.drop_attn.size() ? Mat(dx.cwiseProduct(L.drop_attn)) : dx;
    MapMat dw_out(g + P.out_w, d, d);
    Eigen::Map<RowVec<S>> db_out(g + P.out_b, d);
    dw_out.noalias() += L.att_cat.transpose() * datt;
    db_out += datt.colwise().sum();
    ConstMapMat w_out(p + P.out_w, d, d);
    Mat datt_cat(c.rows, d);
    datt_cat.noalias() = datt * w_out.transpose();

    Mat dqkv = Mat::Zero(c.rows, 3 * d);
    for (std::size_t s = 0; s < batch.size(); ++s) {
      const Eigen::Index st = c.start[s];
      const Eigen::Index n = c.len[s];
      for (Eigen::Index h = 0; h < H; ++h) {
        const Mat& prob = L.probs[s * static_cast<std::size_t>(H) + static_cast<std::size_t>(h)];
        const auto q = L.qkv.block(st, h * hd, n, hd);
        const auto k = L.qkv.block(st, d + h * hd, n, hd);
        const auto v = L.qkv.block(st, 2 * d + h * hd, n, hd);
        const auto dout = datt_cat.block(st, h * hd, n, hd);
        Mat dprob(n, n);
        dprob.noalias() = dout * v.transpose();
        dqkv.block(st, 2 * d + h * hd, n, hd).noalias() = prob.transpose() * dout;
        for (Eigen::Index i = 0; i < n; ++i) {
          const S* pr = prob.data() + i * n;
          S* dr = dprob.data() + i * n;
          S dot = 0;
          for (Eigen::Index j = 0; j <= i; ++j) dot += dr[j] * pr[j];
          for (Eigen::Index j = 0; j <= i; ++j) dr[j] = pr[j] * (dr[j] - dot) * scale;
          for (Eigen::Index j = i + 1; j < n; ++j) dr[j] = 0;
        }
        dqkv.block(st, h * hd, n, hd).noalias() = dprob * k;
        dqkv.block(st, d + h * hd, n, hd).noalias() = dprob.transpose() * q;
      }
    }
    MapMat dw_qkv(g + P.qkv_w, d, 3 * d);
    Eigen::Map<RowVec<S>> db_qkv(g + P.qkv_b, 3 * d);
    dw_qkv.noalias() += L.ln1.transpose() * dqkv;
    db_qkv += dqkv.colwise().sum();
    ConstMapMat w_qkv(p + P.qkv_w, d, 3 * d);
    Mat dln1(c.rows, d);
    dln1.noalias() = dqkv * w_qkv.transpose();
    layer_norm_backward(L.x_in, dln1, p + P.ln1_g, L.ln1_mean, L.ln1_rstd, tmp, g + P.ln1_g,
                        g + P.ln1_b);
    dx += tmp;
  }

  if (c.drop_emb.size()) dx = dx.cwiseProduct(c.drop_emb);
  for (std::size_t s = 0; s < batch.size(); ++s) {
    for (Eigen::Index i = 0; i < c.len[s]; ++i) {
      const TokenId tok = batch[s].inputs[static_cast<std::size_t>(i)];
      const S* dr = dx.data() + (c.start[s] + i) * d;
      S* de = g + layout_.tok_emb + static_cast<std::size_t>(tok) * d;
      S* dp = g + layout_.pos_emb + static_cast<std::size_t>(i) * d;
      for (Eigen::Index j = 0; j < d; ++j) {
        de[j] += dr[j];
        dp[j] += dr[j];
      }
    }
  }
}

template <class S>
typename Transformer<S>::Mat Transformer<S>::logits(std::span<const TokenId> inputs) const {
  Example ex;
  ex.inputs.assign(inputs.begin(), inputs.end());
  Cache c;
  forward(std::span<const Example>(&ex, 1), c, nullptr);
  return std::move(c.logits);
}

template <class S>
double Transformer<S>::loss_and_grad(std::span<const Example> batch, std::vector<S>* grad,
                                     S grad_scale, Rng* dropout_rng) const {
  Cache c;
  forward(batch, c, dropout_rng);
  const Eigen::Index V = cfg_.vocab_size;
  double nll = 0.0;
  Mat dlogits;
  if (grad) dlogits.resize(c.rows, V);
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const auto& ex = batch[s];
    if (ex.targets.size() != ex.inputs.size()) throw ValidationError("inputs/targets length mismatch");
    for (Eigen::Index i = 0; i < c.len[s]; ++i) {
      const Eigen::Index r = c.start[s] + i;
      const S* lr = c.logits.data() + r * V;
      const TokenId target = ex.targets[static_cast<std::size_t>(i)];
      if (target < 0 || target >= V) throw ValidationError("target id out of range");
      double mx = -std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < V; ++j) mx = std::max(mx, static_cast<double>(lr[j]));
      double sum = 0.0;
      for (Eigen::Index j = 0; j < V; ++j) sum += std::exp(static_cast<double>(lr[j]) - mx);
      const double lse = mx + std::log(sum);
      nll -= static_cast<double>(lr[target]) - lse;
      if (grad) {
        S* dr = dlogits.data() + r * V;
        for (Eigen::Index j = 0; j < V; ++j) {
          dr[j] = static_cast<S>(std::exp(static_cast<double>(lr[j]) - lse)) * grad_scale;
        }
        dr[target] -= grad_scale;
      }
    }
  }
  if (grad) {
    if (grad->size() != layout_.total) grad->assign(layout_.total, S(0));
    backward(batch, c, std::move(dlogits), *grad);
  }
  return nll;
}

template class Transformer<float>;
template class Transformer<double>;

}  // namespace ulm
