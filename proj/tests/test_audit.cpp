#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "redlab/audit.hpp"

using namespace redlab;

namespace {

PeftSpec spec_of(PeftMethod m, int rank = 8) {
  PeftSpec s;
  s.method = m;
  s.rank = rank;
  return s;
}

}  // namespace

TEST_CASE("presets exist with published dims") {
  CHECK(host_preset("roberta_base").n_layers == 12);
  CHECK(host_preset("roberta_base").d_model == 768);
  CHECK(host_preset("roberta_large").d_model == 1024);
  CHECK(host_preset("gpt2_medium").n_layers == 24);
  CHECK(host_preset("gpt2_large").d_model == 1280);
  CHECK(host_preset("t5_base").total_layers() == 24);
  CHECK(host_preset("llama2_7b").d_model == 4096);
  CHECK(host_preset("llama2_7b").total_params == 6'739'000'000);
  CHECK_THROWS_AS(host_preset("bert_tiny"), ConfigError);
}

TEST_CASE("red counts reproduce every published row") {
  CHECK(count_trainable(spec_of(PeftMethod::red), host_preset("roberta_base")) == 18'432);
  CHECK(count_trainable(spec_of(PeftMethod::red), host_preset("roberta_large")) == 49'152);
  CHECK(count_trainable(spec_of(PeftMethod::red), host_preset("gpt2_medium")) == 49'152);
  CHECK(count_trainable(spec_of(PeftMethod::red), host_preset("gpt2_large")) == 92'160);
  CHECK(count_trainable(spec_of(PeftMethod::red), host_preset("t5_base")) == 36'864);
  CHECK(count_trainable(spec_of(PeftMethod::red), host_preset("llama2_7b")) == 262'144);

  CHECK(paper_units(18'432, 2) == "0.02M");
  CHECK(paper_units(49'152, 2) == "0.05M");
  CHECK(paper_units(92'160, 2) == "0.09M");
  CHECK(paper_units(36'864, 2) == "0.04M");
  CHECK(paper_units(262'144, 2) == "0.26M");
}

TEST_CASE("lora counts at printed precision") {
  CHECK(count_trainable(spec_of(PeftMethod::lora, 8), host_preset("roberta_base")) == 294'912);
  CHECK(paper_units(294'912, 1) == "0.3M");
  CHECK(paper_units(count_trainable(spec_of(PeftMethod::lora, 8), host_preset("roberta_large")),
                    1) == "0.8M");
  CHECK(paper_units(count_trainable(spec_of(PeftMethod::lora, 8), host_preset("gpt2_medium")),
                    1) == "0.8M");
  CHECK(paper_units(count_trainable(spec_of(PeftMethod::lora, 8), host_preset("gpt2_large")),
                    1) == "1.5M");
  CHECK(count_trainable(spec_of(PeftMethod::lora, 16), host_preset("llama2_7b")) == 8'388'608);
  CHECK(paper_units(8'388'608, 2) == "8.39M");
}

TEST_CASE("red position and component variants") {
  const HostDescriptor h = host_preset("roberta_base");
  PeftSpec s = spec_of(PeftMethod::red);
  const std::int64_t dL = static_cast<std::int64_t>(h.d_model) * h.n_layers;
  CHECK(count_trainable(s, h) == 2 * dL);
  s.positions = RedPositions::both;
  CHECK(count_trainable(s, h) == 4 * dL);
  s.positions = RedPositions::ffn;
  s.components = RedComponents::scaling_only;
  CHECK(count_trainable(s, h) == dL);
  s.components = RedComponents::bias_only;
  CHECK(count_trainable(s, h) == dL);
}

TEST_CASE("reduction factors") {
  const auto llama = host_preset("llama2_7b");
  const double full_red = reduction_factor(
      count_trainable(spec_of(PeftMethod::full_ft), llama),
      count_trainable(spec_of(PeftMethod::red), llama));
  CHECK(full_red >= 25'400);
  CHECK(full_red <= 26'000);
  CHECK(std::abs(full_red - 25'700) / 25'700 < 0.005);

  const double lora_red = reduction_factor(
      count_trainable(spec_of(PeftMethod::lora, 16), llama),
      count_trainable(spec_of(PeftMethod::red), llama));
  CHECK(lora_red >= 32.0);
  CHECK(lora_red <= 32.5);

  // published as ~7200x; surfaced as a flagged discrepancy
  const auto base = host_preset("roberta_base");
  const double base_ratio = reduction_factor(
      count_trainable(spec_of(PeftMethod::full_ft), base),
      count_trainable(spec_of(PeftMethod::red), base));
  CHECK(base_ratio == doctest::Approx(6781.7).epsilon(1e-3));
  bool flagged = false;
  for (const auto& r : audit_reductions())
    if (r.label.find("roberta_base") != std::string::npos) flagged = r.flagged;
  CHECK(flagged);

  CHECK_THROWS_AS(reduction_factor(1, 0), ConfigError);
}

TEST_CASE("prefix and prompt closed forms") {
  const auto t5 = host_preset("t5_base");
  CHECK(count_prompt_tuning(t5, 100) == 76'800);  // published "0.08M" PT row
  CHECK(paper_units(count_prompt_tuning(t5, 100), 2) == "0.08M");
  CHECK(count_prefix_tuning(host_preset("gpt2_medium"), 16) ==
        16LL * 1024 * 2 * 24);
}

TEST_CASE("formula counts match a real attach_peft registry on a toy host") {
  TransformerConfig cfg;
  cfg.n_layers = 3;
  cfg.d_model = 12;
  cfg.n_heads = 2;
  cfg.d_ff = 20;
  cfg.vocab_size = 8;
  cfg.max_seq_len = 8;
  cfg.n_classes = 2;
  HostDescriptor toy{"toy", cfg.n_layers, cfg.d_model, cfg.d_ff, 0, 0};
  for (PeftMethod m : {PeftMethod::red, PeftMethod::lora, PeftMethod::adapter,
                       PeftMethod::adapter_ffn, PeftMethod::bitfit}) {
    auto model = TransformerModel<float>::init(cfg, 1);
    PeftSpec spec = spec_of(m, 2);
    auto att = attach_peft(model, spec, 1);
    std::int64_t measured = 0;
    for (const auto& r : att.registry) measured += r.tensor.numel();
    CHECK(measured == count_trainable(spec, toy));
  }
}

TEST_CASE("audit table covers every RED row and marks them matched") {
  const auto rows = audit_rows();
  int red_rows = 0;
  for (const auto& r : rows)
    if (r.method == "red") {
      ++red_rows;
      CHECK(r.match);
    }
  CHECK(red_rows == 6);
  for (const auto& r : rows)
    if (r.method.starts_with("lora")) CHECK(r.match);
  CHECK_THROWS_AS(audit_rows("bert_tiny"), ConfigError);
  CHECK(audit_rows("llama2_7b").size() == 3);
}

TEST_CASE("full_ft count needs total_params") {
  HostDescriptor h{"custom", 2, 8, 16, 0, 0};
  CHECK_THROWS_AS(count_trainable(spec_of(PeftMethod::full_ft), h), ConfigError);
  PeftSpec bad = spec_of(PeftMethod::lora, 0);
  CHECK_THROWS_AS(count_trainable(bad, host_preset("roberta_base")), ConfigError);
}
