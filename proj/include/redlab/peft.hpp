#pragma once

// PEFT mechanisms: RED edit vectors, LoRA, Adapter / Adapter_FFN, BitFit and
// full fine-tuning, attached to a frozen base model as forward hooks plus a
// registry of trainable parameters.

#include <memory>
#include <string>
#include <vector>

#include "redlab/digest.hpp"
#include "redlab/model.hpp"
#include "redlab/rng.hpp"
#include "redlab/tensor.hpp"

namespace redlab {

enum class PeftMethod { red, lora, adapter, adapter_ffn, bitfit, full_ft };
enum class RedPositions { ffn, attn, both };
enum class RedComponents { both, scaling_only, bias_only };
enum class AdapterAct { gelu, relu, identity };

inline std::string to_string(PeftMethod m) {
  switch (m) {
    case PeftMethod::red: return "red";
    case PeftMethod::lora: return "lora";
    case PeftMethod::adapter: return "adapter";
    case PeftMethod::adapter_ffn: return "adapter_ffn";
    case PeftMethod::bitfit: return "bitfit";
    case PeftMethod::full_ft: return "full_ft";
  }
  return "?";
}
inline std::string to_string(RedPositions p) {
  switch (p) {
    case RedPositions::ffn: return "ffn";
    case RedPositions::attn: return "attn";
    case RedPositions::both: return "both";
  }
  return "?";
}
inline std::string to_string(RedComponents c) {
  switch (c) {
    case RedComponents::both: return "both";
    case RedComponents::scaling_only: return "scaling_only";
    case RedComponents::bias_only: return "bias_only";
  }
  return "?";
}

inline PeftMethod peft_method_from(const std::string& s) {
  if (s == "red") return PeftMethod::red;
  if (s == "lora") return PeftMethod::lora;
  if (s == "adapter") return PeftMethod::adapter;
  if (s == "adapter_ffn") return PeftMethod::adapter_ffn;
  if (s == "bitfit") return PeftMethod::bitfit;
  if (s == "full_ft") return PeftMethod::full_ft;
  throw ConfigError("unknown peft method: " + s);
}
inline RedPositions red_positions_from(const std::string& s) {
  if (s == "ffn") return RedPositions::ffn;
  if (s == "attn") return RedPositions::attn;
  if (s == "both") return RedPositions::both;
  throw ConfigError("unknown red positions: " + s);
}
inline RedComponents red_components_from(const std::string& s) {
  if (s == "both") return RedComponents::both;
  if (s == "scaling_only") return RedComponents::scaling_only;
  if (s == "bias_only") return RedComponents::bias_only;
  throw ConfigError("unknown red components: " + s);
}
inline AdapterAct adapter_act_from(const std::string& s) {
  if (s == "gelu") return AdapterAct::gelu;
  if (s == "relu") return AdapterAct::relu;
  if (s == "identity") return AdapterAct::identity;
  throw ConfigError("unknown adapter activation: " + s);
}

struct PeftSpec {
  PeftMethod method = PeftMethod::red;
  int rank = 8;           // lora / adapter bottleneck
  double alpha = 8.0;     // lora scale s = alpha / rank
  RedPositions positions = RedPositions::ffn;
  RedComponents components = RedComponents::both;
  AdapterAct adapter_activation = AdapterAct::gelu;

  void validate() const {
    const bool needs_rank = method == PeftMethod::lora || method == PeftMethod::adapter ||
                            method == PeftMethod::adapter_ffn;
    if (needs_rank && rank < 1)
      throw ConfigError("peft method " + to_string(method) + " requires rank >= 1");
  }
};

template <class T>
struct EditVectorPair {
  Tensor<T> scaling;  // init all-ones
  Tensor<T> bias;     // init all-zeros
  RedComponents components = RedComponents::both;
};

template <class T>
struct LoraPair {
  Tensor<T> w_down;  // d×r, small random init
  Tensor<T> w_up;    // r×k, zero init so the initial update is exactly zero
  double alpha = 8.0;
  int rank = 1;
  T scale() const { return static_cast<T>(alpha / rank); }
};

template <class T>
struct AdapterBlock {
  Tensor<T> w_down, b_down;  // d×r, r
  Tensor<T> w_up, b_up;      // r×d (zero init), d
  AdapterAct activation = AdapterAct::gelu;
};

// h2 = l_scaling ⊙ h1 + l_bias, broadcast over leading dims; the component
// mask drops either term entirely.
template <class T>
Tensor<T> red_edit(const Tensor<T>& h, const EditVectorPair<T>& ev) {
  switch (ev.components) {
    case RedComponents::both: return add(mul(h, ev.scaling), ev.bias);
    case RedComponents::scaling_only: return mul(h, ev.scaling);
    case RedComponents::bias_only: return add(h, ev.bias);
  }
  throw TensorError("red_edit: bad component mask");
}

// h = xW + s·x·W_down·W_up
template <class T>
Tensor<T> lora_forward(const Tensor<T>& x, const Tensor<T>& w, const LoraPair<T>& lp) {
  return add(matmul(x, w), scale(matmul(matmul(x, lp.w_down), lp.w_up), lp.scale()));
}

// h2 = h1 + f(h1·W_down + b_down)·W_up + b_up
template <class T>
Tensor<T> adapter_forward(const Tensor<T>& h, const AdapterBlock<T>& ab) {
  Tensor<T> z = add(matmul(h, ab.w_down), ab.b_down);
  switch (ab.activation) {
    case AdapterAct::gelu: z = gelu(z); break;
    case AdapterAct::relu: z = relu(z); break;
    case AdapterAct::identity: break;
  }
  return add(h, add(matmul(z, ab.w_up), ab.b_up));
}

template <class T>
struct ParamRef {
  std::string name;
  Tensor<T> tensor;
};

template <class T>
struct PeftState {
  std::vector<EditVectorPair<T>> edit_pairs;
  std::vector<LoraPair<T>> lora_pairs;
  std::vector<AdapterBlock<T>> adapters;
};

template <class T>
struct PeftAttachment {
  PeftSpec spec;
  PeftHooks<T> hooks;
  std::shared_ptr<PeftState<T>> state = std::make_shared<PeftState<T>>();
  std::vector<ParamRef<T>> registry;  // exactly the trainable parameters
};

namespace detail {

template <class T>
void registry_add(PeftAttachment<T>& att, const std::string& name, Tensor<T> t) {
  t.set_requires_grad(true);
  att.registry.push_back({name, std::move(t)});
}

}  // namespace detail

// Freezes the base (except full_ft), creates method-specific parameters and
// hooks, and returns the trainable registry. The model must not already carry
// an attachment.
template <class T>
PeftAttachment<T> attach_peft(TransformerModel<T>& model, const PeftSpec& spec,
                              std::uint64_t seed = 0) {
  spec.validate();
  const TransformerConfig& cfg = model.config();
  const int d = cfg.d_model;
  PeftAttachment<T> att;
  att.spec = spec;
  model.set_all_trainable(spec.method == PeftMethod::full_ft);

  if (spec.method == PeftMethod::full_ft) {
    for (auto& p : model.params()) att.registry.push_back({p.name, p.tensor});
    return att;
  }
  if (spec.method == PeftMethod::bitfit) {
    // encoder-block biases + LN biases; embeddings and head stay frozen
    for (auto& p : model.params())
      if (p.name.starts_with("block.") && p.name.ends_with(".bias")) {
        p.trainable = true;
        att.registry.push_back({p.name, p.tensor});
      }
    model.sync_requires_grad();
    return att;
  }

  att.hooks.blocks.resize(cfg.n_layers);
  auto& state = *att.state;
  Rng rng(derive_seed(seed, "peft-init"));

  for (int i = 0; i < cfg.n_layers; ++i) {
    const std::string blk = "peft.block." + std::to_string(i) + ".";
    BlockHooks<T>& bh = att.hooks.blocks[i];
    switch (spec.method) {
      case PeftMethod::red: {
        auto make_pair = [&](const std::string& site,
                             std::function<Tensor<T>(const Tensor<T>&)>& slot) {
          EditVectorPair<T> ev{Tensor<T>::filled({d}, T(1)), Tensor<T>::zeros({d}),
                               spec.components};
          if (spec.components != RedComponents::bias_only)
            detail::registry_add(att, blk + site + ".scaling", ev.scaling);
          if (spec.components != RedComponents::scaling_only)
            detail::registry_add(att, blk + site + ".bias", ev.bias);
          state.edit_pairs.push_back(ev);
          slot = [ev](const Tensor<T>& h) { return red_edit(h, ev); };
        };
        if (spec.positions != RedPositions::ffn) make_pair("attn_site", bh.edit_attn);
        if (spec.positions != RedPositions::attn) make_pair("ffn_site", bh.edit_ffn);
        break;
      }
      case PeftMethod::lora: {
        auto make_lora = [&](const std::string& proj,
                             std::function<Tensor<T>(const Tensor<T>&)>& slot) {
          LoraPair<T> lp;
          lp.rank = spec.rank;
          lp.alpha = spec.alpha;
          const double limit = 1.0 / std::sqrt(static_cast<double>(d));
          std::vector<T> down(static_cast<std::int64_t>(d) * spec.rank);
          for (T& v : down) v = static_cast<T>(rng.uniform(-limit, limit));
          lp.w_down = Tensor<T>::from({d, spec.rank}, std::move(down));
          lp.w_up = Tensor<T>::zeros({spec.rank, d});
          detail::registry_add(att, blk + proj + ".lora_down", lp.w_down);
          detail::registry_add(att, blk + proj + ".lora_up", lp.w_up);
          state.lora_pairs.push_back(lp);
          const std::string base = "block." + std::to_string(i) + "." + proj;
          Tensor<T> w = model.param(base + ".weight").tensor;
          Tensor<T> b = model.param(base + ".bias").tensor;
          slot = [w, b, lp](const Tensor<T>& x) { return add(lora_forward(x, w, lp), b); };
        };
        make_lora("attn.w_q", bh.proj_q);
        make_lora("attn.w_v", bh.proj_v);
        break;
      }
      case PeftMethod::adapter:
      case PeftMethod::adapter_ffn: {
        auto make_adapter = [&](const std::string& site,
                                std::function<Tensor<T>(const Tensor<T>&)>& slot) {
          AdapterBlock<T> ab;
          ab.activation = spec.adapter_activation;
          const double limit = 1.0 / std::sqrt(static_cast<double>(d));
          std::vector<T> down(static_cast<std::int64_t>(d) * spec.rank);
          for (T& v : down) v = static_cast<T>(rng.uniform(-limit, limit));
          ab.w_down = Tensor<T>::from({d, spec.rank}, std::move(down));
          ab.b_down = Tensor<T>::zeros({spec.rank});
          ab.w_up = Tensor<T>::zeros({spec.rank, d});
          ab.b_up = Tensor<T>::zeros({d});
          detail::registry_add(att, blk + site + ".w_down", ab.w_down);
          detail::registry_add(att, blk + site + ".b_down", ab.b_down);
          detail::registry_add(att, blk + site + ".w_up", ab.w_up);
          detail::registry_add(att, blk + site + ".b_up", ab.b_up);
          state.adapters.push_back(ab);
          slot = [ab](const Tensor<T>& h) { return adapter_forward(h, ab); };
        };
        if (spec.method == PeftMethod::adapter) make_adapter("attn_adapter", bh.edit_attn);
        make_adapter("ffn_adapter", bh.edit_ffn);
        break;
      }
      default:
        throw ConfigError("attach_peft: unhandled method");
    }
  }
  return att;
}

// SHA-256 over all frozen parameter names and bytes, in parameter-table order.
// With nothing frozen (full_ft) every base parameter is hashed instead, so the
// digest still witnesses base-weight changes.
template <class T>
std::string frozen_digest(const TransformerModel<T>& model) {
  bool any_frozen = false;
  for (const auto& p : model.params()) any_frozen = any_frozen || !p.trainable;
  Sha256 h;
  for (const auto& p : model.params()) {
    if (any_frozen && p.trainable) continue;
    h.update(p.name);
    h.update(p.tensor.data().data(), p.tensor.data().size() * sizeof(T));
  }
  return h.hex_digest();
}

}  // namespace redlab
