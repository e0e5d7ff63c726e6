#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>

#include "redlab/checkpoint.hpp"
#include "redlab/peft.hpp"

using namespace redlab;

namespace {

TransformerConfig toy_config() {
  TransformerConfig cfg;
  cfg.n_layers = 2;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.d_ff = 16;
  cfg.vocab_size = 8;
  cfg.max_seq_len = 6;
  cfg.n_classes = 2;
  return cfg;
}

std::vector<int> toy_tokens(int batch, int seq, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<int> t(batch * seq);
  for (int& v : t) v = static_cast<int>(rng.next_below(8));
  return t;
}

std::int64_t registry_size(const PeftAttachment<double>& att) {
  std::int64_t n = 0;
  for (const auto& r : att.registry) n += r.tensor.numel();
  return n;
}

}  // namespace

TEST_CASE("red_edit arithmetic") {
  EditVectorPair<double> ev{Tensor<double>::from({2}, {2, 0.5}),
                            Tensor<double>::from({2}, {1, -1}), RedComponents::both};
  auto h = Tensor<double>::from({1, 2}, {3, 4});
  CHECK(red_edit(h, ev).data() == std::vector<double>{7, 1});

  ev.components = RedComponents::scaling_only;
  CHECK(red_edit(h, ev).data() == std::vector<double>{6, 2});
  ev.components = RedComponents::bias_only;
  CHECK(red_edit(h, ev).data() == std::vector<double>{4, 3});

  // identity init leaves h untouched bitwise
  EditVectorPair<double> id{Tensor<double>::filled({2}, 1.0), Tensor<double>::zeros({2}),
                            RedComponents::both};
  CHECK(red_edit(h, id).data() == h.data());
}

TEST_CASE("red_edit grads: bias gets column sums, scaling gets h-weighted sums") {
  EditVectorPair<double> ev{Tensor<double>::filled({4}, 1.0), Tensor<double>::zeros({4}),
                            RedComponents::both};
  ev.scaling.set_requires_grad(true);
  ev.bias.set_requires_grad(true);
  Rng rng(3);
  std::vector<double> hd(12);
  for (double& v : hd) v = rng.uniform(-1, 1);
  auto h = Tensor<double>::from({3, 4}, hd);
  backward(sum_all(red_edit(h, ev)));
  for (int j = 0; j < 4; ++j) {
    CHECK(ev.bias.grad()[j] == doctest::Approx(3.0));
    double col = hd[j] + hd[4 + j] + hd[8 + j];
    CHECK(ev.scaling.grad()[j] == doctest::Approx(col));
  }
}

TEST_CASE("lora_forward") {
  LoraPair<double> lp;
  lp.rank = 1;
  lp.alpha = 1;
  lp.w_down = Tensor<double>::from({2, 1}, {1, 0});
  lp.w_up = Tensor<double>::from({1, 2}, {0, 2});
  auto x = Tensor<double>::from({1, 2}, {1, 1});
  auto w = Tensor<double>::from({2, 2}, {1, 0, 0, 1});
  CHECK(lora_forward(x, w, lp).data() == std::vector<double>{1, 3});

  // zero W_up → exactly xW
  lp.w_up = Tensor<double>::zeros({1, 2});
  CHECK(lora_forward(x, w, lp).data() == matmul(x, w).data());
}

TEST_CASE("lora equals dense W + s*down*up") {
  Rng rng(9);
  auto fill = [&](std::vector<int> s) {
    std::vector<double> d(numel_of(s));
    for (double& v : d) v = rng.uniform(-1, 1);
    return Tensor<double>::from(std::move(s), std::move(d));
  };
  LoraPair<double> lp;
  lp.rank = 2;
  lp.alpha = 6;
  lp.w_down = fill({4, 2});
  lp.w_up = fill({2, 4});
  auto x = fill({3, 4});
  auto w = fill({4, 4});
  auto via_lora = lora_forward(x, w, lp);
  auto dense = add(w, scale(matmul(lp.w_down, lp.w_up), lp.scale()));
  auto expect = matmul(x, dense);
  for (int i = 0; i < 12; ++i)
    CHECK(via_lora.data()[i] == doctest::Approx(expect.data()[i]).epsilon(1e-12));
}

TEST_CASE("adapter_forward") {
  AdapterBlock<double> ab;
  ab.activation = AdapterAct::identity;
  ab.w_down = Tensor<double>::from({2, 1}, {1, 1});
  ab.b_down = Tensor<double>::zeros({1});
  ab.w_up = Tensor<double>::from({1, 2}, {1, 0});
  ab.b_up = Tensor<double>::zeros({2});
  auto h = Tensor<double>::from({1, 2}, {2, 3});
  CHECK(adapter_forward(h, ab).data() == std::vector<double>{7, 3});

  ab.w_up = Tensor<double>::zeros({1, 2});
  ab.activation = AdapterAct::gelu;
  CHECK(adapter_forward(h, ab).data() == h.data());  // zero init → identity
}

TEST_CASE("registry sizes match the closed-form count formulas") {
  const TransformerConfig cfg = toy_config();
  const std::int64_t d = cfg.d_model, L = cfg.n_layers;
  auto with = [&](PeftSpec spec) {
    auto model = TransformerModel<double>::init(cfg, 1);
    return attach_peft(model, spec, 1);
  };
  PeftSpec red;
  red.method = PeftMethod::red;
  CHECK(registry_size(with(red)) == 2 * d * L);
  red.positions = RedPositions::both;
  CHECK(registry_size(with(red)) == 4 * d * L);
  red.positions = RedPositions::ffn;
  red.components = RedComponents::scaling_only;
  CHECK(registry_size(with(red)) == d * L);
  red.components = RedComponents::bias_only;
  CHECK(registry_size(with(red)) == d * L);

  PeftSpec lora;
  lora.method = PeftMethod::lora;
  lora.rank = 3;
  CHECK(registry_size(with(lora)) == 4 * d * 3 * L);

  PeftSpec ad;
  ad.method = PeftMethod::adapter;
  ad.rank = 2;
  CHECK(registry_size(with(ad)) == 2 * L * (d * 2 + 2 + 2 * d + d));
  ad.method = PeftMethod::adapter_ffn;
  CHECK(registry_size(with(ad)) == L * (d * 2 + 2 + 2 * d + d));

  PeftSpec bf;
  bf.method = PeftMethod::bitfit;
  CHECK(registry_size(with(bf)) == L * (7 * d + cfg.d_ff));

  PeftSpec invalid;
  invalid.method = PeftMethod::lora;
  invalid.rank = 0;
  CHECK_THROWS_AS(with(invalid), ConfigError);
}

TEST_CASE("bitfit registry contains only bias names; full_ft everything") {
  auto model = TransformerModel<double>::init(toy_config(), 2);
  PeftSpec bf;
  bf.method = PeftMethod::bitfit;
  auto att = attach_peft(model, bf, 2);
  CHECK(!att.registry.empty());
  for (const auto& r : att.registry) {
    CHECK(r.name.starts_with("block."));
    CHECK(r.name.ends_with(".bias"));
  }

  auto model2 = TransformerModel<double>::init(toy_config(), 2);
  PeftSpec ft;
  ft.method = PeftMethod::full_ft;
  auto att2 = attach_peft(model2, ft, 2);
  CHECK(att2.registry.size() == model2.params().size());
  for (const auto& p : model2.params()) CHECK(p.trainable);
}

TEST_CASE("identity at init for every hooked method") {
  const auto tokens = toy_tokens(3, 6, 17);
  for (PeftMethod m : {PeftMethod::red, PeftMethod::lora, PeftMethod::adapter,
                       PeftMethod::adapter_ffn, PeftMethod::bitfit, PeftMethod::full_ft}) {
    auto frozen = TransformerModel<double>::init(toy_config(), 7);
    const auto base_logits = frozen.forward(tokens, 3, 6).data();
    auto model = TransformerModel<double>::init(toy_config(), 7);
    PeftSpec spec;
    spec.method = m;
    spec.rank = 2;
    auto att = attach_peft(model, spec, 7);
    CHECK(model.forward(tokens, 3, 6, &att.hooks).data() == base_logits);
  }
}

TEST_CASE("gradient flow: registry grads populated, frozen params untouched") {
  for (PeftMethod m : {PeftMethod::red, PeftMethod::lora, PeftMethod::adapter,
                       PeftMethod::adapter_ffn, PeftMethod::bitfit}) {
    auto model = TransformerModel<double>::init(toy_config(), 8);
    PeftSpec spec;
    spec.method = m;
    spec.rank = 2;
    auto att = attach_peft(model, spec, 8);
    auto tokens = toy_tokens(4, 6, 18);
    auto loss = cross_entropy_mean(model.forward(tokens, 4, 6, &att.hooks),
                                   std::vector<int>{0, 1, 0, 1});
    backward(loss);
    for (const auto& r : att.registry) CHECK(r.tensor.has_grad());
    for (const auto& p : model.params())
      if (!p.trainable) CHECK(!p.tensor.has_grad());
  }
}

TEST_CASE("frozen_digest") {
  auto model = TransformerModel<double>::init(toy_config(), 9);
  PeftSpec red;
  red.method = PeftMethod::red;
  auto att = attach_peft(model, red, 9);
  const std::string before = frozen_digest(model);
  // editing a trainable (peft) param leaves the digest alone
  att.registry[0].tensor.data()[0] += 1.0;
  CHECK(frozen_digest(model) == before);
  // editing a frozen base weight changes it
  model.param("block.0.attn.w_q.weight").tensor.data()[0] += 1.0;
  CHECK(frozen_digest(model) != before);
}

TEST_CASE("digest survives a checkpoint round trip") {
  auto model = TransformerModel<double>::init(toy_config(), 10);
  PeftSpec red;
  red.method = PeftMethod::red;
  attach_peft(model, red, 10);
  const std::string digest = frozen_digest(model);

  const std::string path = "peft_roundtrip.ckpt";
  save_checkpoint(path, checkpoint_of(model));
  auto reloaded = model_from_checkpoint<double>(load_checkpoint(path));
  attach_peft(reloaded, red, 10);
  CHECK(frozen_digest(reloaded) == digest);
  std::remove(path.c_str());
}
