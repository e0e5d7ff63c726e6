#pragma once

// Experiment config: strict JSON schema, one master seed fanned out to the
// named streams (model-init / data / shuffle / peft-init).

#include <fstream>
#include <string>

#include <json.hpp>

#include "redlab/checkpoint.hpp"
#include "redlab/model.hpp"
#include "redlab/peft.hpp"
#include "redlab/tasks.hpp"
#include "redlab/train.hpp"

namespace redlab {

struct ExperimentConfig {
  TransformerConfig model;
  PeftSpec peft;
  TrainConfig train;
  TaskSpec task;
  std::string output_dir = "out";
  std::string init_checkpoint;  // optional: base weights loaded before attach
  std::uint64_t seed = 42;

  void validate() const {
    model.validate();
    peft.validate();
    train.validate();
    task.validate();
    if (task.vocab_size > model.vocab_size)
      throw ConfigError("task vocab_size exceeds model vocab_size");
    if (task.seq_len > model.max_seq_len)
      throw ConfigError("task seq_len exceeds model max_seq_len");
    if (task.n_classes != model.n_classes)
      throw ConfigError("task n_classes does not match model n_classes");
  }
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const char* section,
                           std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(std::string(section) + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError("unknown key '" + key + "' in " + section);
  }
}

}  // namespace detail

inline ExperimentConfig parse_experiment(const nlohmann::json& j) {
  detail::reject_unknown(j, "config",
                         {"model", "peft", "train", "task", "output_dir", "init_checkpoint",
                          "seed"});
  ExperimentConfig cfg;
  cfg.seed = j.value("seed", std::uint64_t{42});
  cfg.output_dir = j.value("output_dir", std::string("out"));
  cfg.init_checkpoint = j.value("init_checkpoint", std::string());

  if (j.contains("model")) {
    const auto& m = j.at("model");
    detail::reject_unknown(m, "model",
                           {"n_layers", "d_model", "n_heads", "d_ff", "vocab_size",
                            "max_seq_len", "n_classes", "ln_eps", "pre_residual"});
    cfg.model.n_layers = m.value("n_layers", cfg.model.n_layers);
    cfg.model.d_model = m.value("d_model", cfg.model.d_model);
    cfg.model.n_heads = m.value("n_heads", cfg.model.n_heads);
    cfg.model.d_ff = m.value("d_ff", cfg.model.d_ff);
    cfg.model.vocab_size = m.value("vocab_size", cfg.model.vocab_size);
    cfg.model.max_seq_len = m.value("max_seq_len", cfg.model.max_seq_len);
    cfg.model.n_classes = m.value("n_classes", cfg.model.n_classes);
    cfg.model.ln_eps = m.value("ln_eps", cfg.model.ln_eps);
    cfg.model.pre_residual = m.value("pre_residual", cfg.model.pre_residual);
  }
  if (j.contains("peft")) {
    const auto& p = j.at("peft");
    detail::reject_unknown(
        p, "peft", {"method", "rank", "alpha", "positions", "components", "adapter_activation"});
    if (p.contains("method")) cfg.peft.method = peft_method_from(p.at("method"));
    cfg.peft.rank = p.value("rank", cfg.peft.rank);
    cfg.peft.alpha = p.value("alpha", cfg.peft.alpha);
    if (p.contains("positions")) cfg.peft.positions = red_positions_from(p.at("positions"));
    if (p.contains("components")) cfg.peft.components = red_components_from(p.at("components"));
    if (p.contains("adapter_activation"))
      cfg.peft.adapter_activation = adapter_act_from(p.at("adapter_activation"));
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    detail::reject_unknown(t, "train",
                           {"lr", "weight_decay", "warmup_ratio", "epochs", "batch_size",
                            "beta1", "beta2", "adam_eps", "grad_clip", "stop_at_val_acc"});
    cfg.train.lr = t.value("lr", cfg.train.lr);
    cfg.train.weight_decay = t.value("weight_decay", cfg.train.weight_decay);
    cfg.train.warmup_ratio = t.value("warmup_ratio", cfg.train.warmup_ratio);
    cfg.train.epochs = t.value("epochs", cfg.train.epochs);
    cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
    cfg.train.beta1 = t.value("beta1", cfg.train.beta1);
    cfg.train.beta2 = t.value("beta2", cfg.train.beta2);
    cfg.train.adam_eps = t.value("adam_eps", cfg.train.adam_eps);
    cfg.train.grad_clip = t.value("grad_clip", cfg.train.grad_clip);
    cfg.train.stop_at_val_acc = t.value("stop_at_val_acc", cfg.train.stop_at_val_acc);
  }
  if (j.contains("task")) {
    const auto& t = j.at("task");
    detail::reject_unknown(
        t, "task", {"name", "vocab_size", "seq_len", "n_classes", "n_train", "n_valid", "n_test"});
    if (t.contains("name")) cfg.task.name = task_name_from(t.at("name"));
    cfg.task.vocab_size = t.value("vocab_size", cfg.task.vocab_size);
    cfg.task.seq_len = t.value("seq_len", cfg.task.seq_len);
    cfg.task.n_classes = t.value("n_classes", cfg.task.n_classes);
    cfg.task.n_train = t.value("n_train", cfg.task.n_train);
    cfg.task.n_valid = t.value("n_valid", cfg.task.n_valid);
    cfg.task.n_test = t.value("n_test", cfg.task.n_test);
  }
  // one master seed, fanned out
  cfg.train.seed = cfg.seed;
  cfg.task.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

inline ExperimentConfig load_experiment(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file: " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("invalid JSON in " + path + ": " + e.what());
  }
  try {
    return parse_experiment(j);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad config value in " + path + ": " + e.what());
  }
}

// Builds the base model for an experiment: fresh init from the master seed,
// then optional checkpoint load (curriculum chaining).
template <class T>
TransformerModel<T> build_base_model(const ExperimentConfig& cfg) {
  TransformerModel<T> model = TransformerModel<T>::init(cfg.model, cfg.seed);
  if (!cfg.init_checkpoint.empty()) load_into(model, load_checkpoint(cfg.init_checkpoint));
  return model;
}

}  // namespace redlab
