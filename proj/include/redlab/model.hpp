#pragma once

// Small post-LN transformer encoder classifier. Base weights live in a named
// parameter table so freezing, counting, BitFit selection and checkpointing
// all key off the same dotted names (e.g. block.3.ffn.w_in.bias).

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "redlab/rng.hpp"
#include "redlab/tensor.hpp"

namespace redlab {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TransformerConfig {
  int n_layers = 2;
  int d_model = 64;
  int n_heads = 4;
  int d_ff = 0;  // 0 -> 4*d_model
  int vocab_size = 16;
  int max_seq_len = 16;
  int n_classes = 2;
  double ln_eps = 1e-5;
  bool pre_residual = false;  // edit sub-layer output before residual+LN instead of after

  void validate() const {
    if (n_layers < 1 || d_model < 1 || n_heads < 1 || vocab_size < 1 || max_seq_len < 1 ||
        n_classes < 1)
      throw ConfigError("TransformerConfig: all dims must be >= 1");
    if (d_model % n_heads != 0)
      throw ConfigError("TransformerConfig: d_model " + std::to_string(d_model) +
                        " not divisible by n_heads " + std::to_string(n_heads));
  }
  int ffn_width() const { return d_ff > 0 ? d_ff : 4 * d_model; }
};

// Per-block callbacks PEFT methods hang onto the forward pass. Sites receive
// the sub-layer output representation (after residual + layer norm by default)
// and return its edited version. proj_q / proj_v replace the full q/v linear
// projection (LoRA).
template <class T>
struct BlockHooks {
  std::function<Tensor<T>(const Tensor<T>&)> edit_attn;
  std::function<Tensor<T>(const Tensor<T>&)> edit_ffn;
  std::function<Tensor<T>(const Tensor<T>&)> proj_q;
  std::function<Tensor<T>(const Tensor<T>&)> proj_v;
};

template <class T>
struct PeftHooks {
  std::vector<BlockHooks<T>> blocks;
  bool empty() const { return blocks.empty(); }
};

template <class T>
struct ParamEntry {
  std::string name;
  Tensor<T> tensor;
  bool trainable = true;
};

template <class T>
class TransformerModel {
 public:
  static TransformerModel init(const TransformerConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    TransformerModel m;
    m.cfg_ = cfg;
    Rng rng(derive_seed(seed, "model-init"));
    const int d = cfg.d_model, dff = cfg.ffn_width();
    m.add_xavier(rng, "tok_emb.weight", cfg.vocab_size, d);
    m.add_xavier(rng, "pos_emb.weight", cfg.max_seq_len, d);
    for (int i = 0; i < cfg.n_layers; ++i) {
      const std::string blk = "block." + std::to_string(i) + ".";
      for (const char* p : {"attn.w_q", "attn.w_k", "attn.w_v", "attn.w_o"}) {
        m.add_xavier(rng, blk + p + ".weight", d, d);
        m.add_const(blk + p + ".bias", {d}, T(0));
      }
      m.add_xavier(rng, blk + "ffn.w_in.weight", d, dff);
      m.add_const(blk + "ffn.w_in.bias", {dff}, T(0));
      m.add_xavier(rng, blk + "ffn.w_out.weight", dff, d);
      m.add_const(blk + "ffn.w_out.bias", {d}, T(0));
      m.add_const(blk + "ln1.gain", {d}, T(1));
      m.add_const(blk + "ln1.bias", {d}, T(0));
      m.add_const(blk + "ln2.gain", {d}, T(1));
      m.add_const(blk + "ln2.bias", {d}, T(0));
    }
    m.add_xavier(rng, "head.weight", d, cfg.n_classes);
    m.add_const("head.bias", {cfg.n_classes}, T(0));
    m.sync_requires_grad();
    return m;
  }

  const TransformerConfig& config() const { return cfg_; }
  std::vector<ParamEntry<T>>& params() { return params_; }
  const std::vector<ParamEntry<T>>& params() const { return params_; }

  ParamEntry<T>& param(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
    return params_[it->second];
  }
  const ParamEntry<T>& param(const std::string& name) const {
    return const_cast<TransformerModel*>(this)->param(name);
  }
  bool has_param(const std::string& name) const { return index_.count(name) != 0; }

  void set_all_trainable(bool trainable) {
    for (auto& p : params_) p.trainable = trainable;
    sync_requires_grad();
  }
  void sync_requires_grad() {
    for (auto& p : params_) p.tensor.set_requires_grad(p.trainable);
  }

  // tokens: flat batch*seq row-major; mask (optional): same length, 0 = padding.
  Tensor<T> forward(const std::vector<int>& tokens, int batch, int seq,
                    const PeftHooks<T>* hooks = nullptr,
                    const std::vector<std::uint8_t>& mask = {}) const {
    if (static_cast<int>(tokens.size()) != batch * seq)
      throw TensorError("forward: token count mismatch");
    if (seq > cfg_.max_seq_len)
      throw TensorError("forward: seq " + std::to_string(seq) + " exceeds max_seq_len " +
                        std::to_string(cfg_.max_seq_len));
    if (hooks && !hooks->empty() && static_cast<int>(hooks->blocks.size()) != cfg_.n_layers)
      throw TensorError("forward: hook block count mismatch");
    std::vector<int> pos(tokens.size());
    for (int b = 0; b < batch; ++b)
      for (int s = 0; s < seq; ++s) pos[b * seq + s] = s;
    Tensor<T> x = add(gather_rows(t("tok_emb.weight"), tokens), gather_rows(t("pos_emb.weight"), pos));
    const T eps = static_cast<T>(cfg_.ln_eps);
    for (int i = 0; i < cfg_.n_layers; ++i) {
      const std::string blk = "block." + std::to_string(i) + ".";
      const BlockHooks<T>* bh = (hooks && !hooks->empty()) ? &hooks->blocks[i] : nullptr;
      Tensor<T> q = (bh && bh->proj_q) ? bh->proj_q(x) : linear(x, blk + "attn.w_q");
      Tensor<T> k = linear(x, blk + "attn.w_k");
      Tensor<T> v = (bh && bh->proj_v) ? bh->proj_v(x) : linear(x, blk + "attn.w_v");
      Tensor<T> ctx = multi_head_attention(q, k, v, batch, cfg_.n_heads, mask);
      Tensor<T> attn_out = linear(ctx, blk + "attn.w_o");
      Tensor<T> h;
      if (cfg_.pre_residual) {
        if (bh && bh->edit_attn) attn_out = bh->edit_attn(attn_out);
        h = ln(add(x, attn_out), blk + "ln1", eps);
      } else {
        h = ln(add(x, attn_out), blk + "ln1", eps);
        if (bh && bh->edit_attn) h = bh->edit_attn(h);
      }
      Tensor<T> ffn_out = linear(gelu(linear(h, blk + "ffn.w_in")), blk + "ffn.w_out");
      if (cfg_.pre_residual) {
        if (bh && bh->edit_ffn) ffn_out = bh->edit_ffn(ffn_out);
        x = ln(add(h, ffn_out), blk + "ln2", eps);
      } else {
        x = ln(add(h, ffn_out), blk + "ln2", eps);
        if (bh && bh->edit_ffn) x = bh->edit_ffn(x);
      }
    }
    Tensor<T> pooled = mean_pool_rows(x, seq, mask);
    return add(matmul(pooled, t("head.weight")), t("head.bias"));
  }

  Tensor<T> linear(const Tensor<T>& x, const std::string& prefix) const {
    return add(matmul(x, t(prefix + ".weight")), t(prefix + ".bias"));
  }

 private:
  Tensor<T> t(const std::string& name) const { return param(name).tensor; }

  Tensor<T> ln(const Tensor<T>& x, const std::string& prefix, T eps) const {
    return add(mul(layer_norm_rows(x, eps), t(prefix + ".gain")), t(prefix + ".bias"));
  }

  void add_xavier(Rng& rng, const std::string& name, int fan_in, int fan_out) {
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::vector<T> data(static_cast<std::int64_t>(fan_in) * fan_out);
    for (T& v : data) v = static_cast<T>(rng.uniform(-limit, limit));
    push(name, Tensor<T>::from({fan_in, fan_out}, std::move(data)));
  }
  void add_const(const std::string& name, std::vector<int> shape, T value) {
    push(name, Tensor<T>::filled(std::move(shape), value));
  }
  void push(const std::string& name, Tensor<T> tensor) {
    index_[name] = params_.size();
    params_.push_back({name, std::move(tensor), true});
  }

  TransformerConfig cfg_;
  std::vector<ParamEntry<T>> params_;
  std::unordered_map<std::string, size_t> index_;
};

}  // namespace redlab
