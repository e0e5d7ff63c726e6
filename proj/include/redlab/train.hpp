#pragma once

// AdamW with decoupled weight decay, linear warmup/decay schedule, the
// training/eval loop and the finite-difference gradient checker.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "redlab/model.hpp"
#include "redlab/peft.hpp"
#include "redlab/rng.hpp"
#include "redlab/tasks.hpp"
#include "redlab/tensor.hpp"

namespace redlab {

struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  double lr = 1e-3;
  double weight_decay = 0.0;
  double warmup_ratio = 0.06;
  int epochs = 10;
  int batch_size = 32;
  std::uint64_t seed = 42;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 0.0;         // 0 = off
  double stop_at_val_acc = 0.0;   // early stop once val acc reaches this; 0 = off

  void validate() const {
    if (lr <= 0) throw ConfigError("train: lr must be > 0");
    if (warmup_ratio < 0 || warmup_ratio > 1)
      throw ConfigError("train: warmup_ratio must be in [0,1]");
    if (epochs < 0 || batch_size < 1) throw ConfigError("train: bad epochs/batch_size");
  }
};

// Linear ramp 0 -> lr over the warmup steps, then linear decay to 0 at total.
inline double lr_at(std::int64_t t, std::int64_t total, const TrainConfig& cfg) {
  if (total <= 0) return 0.0;
  const std::int64_t warmup = std::llround(cfg.warmup_ratio * static_cast<double>(total));
  if (t <= warmup) return warmup == 0 ? cfg.lr : cfg.lr * static_cast<double>(t) / warmup;
  return cfg.lr * static_cast<double>(total - t) / static_cast<double>(total - warmup);
}

// Optimizer state exists only for registry parameters.
template <class T>
class AdamW {
 public:
  AdamW(const std::vector<ParamRef<T>>& registry, const TrainConfig& cfg)
      : registry_(registry), cfg_(cfg) {
    m_.resize(registry.size());
    v_.resize(registry.size());
    for (size_t i = 0; i < registry.size(); ++i) {
      m_[i].assign(registry[i].tensor.numel(), 0.0);
      v_[i].assign(registry[i].tensor.numel(), 0.0);
    }
  }

  std::int64_t steps_taken() const { return t_; }

  // One update at learning rate lr_t; decoupled decay before the Adam delta,
  // grads zeroed afterwards. Throws DivergenceError on NaN/Inf grads.
  void step(double lr_t) {
    ++t_;
    for (size_t i = 0; i < registry_.size(); ++i) {
      const auto& grad = registry_[i].tensor.grad_view();
      for (T g : grad)
        if (!std::isfinite(static_cast<double>(g)))
          throw DivergenceError("non-finite gradient in parameter " + registry_[i].name);
    }
    double clip_scale = 1.0;
    if (cfg_.grad_clip > 0) {
      double sq = 0;
      for (const auto& ref : registry_)
        for (T g : ref.tensor.grad_view()) sq += static_cast<double>(g) * g;
      const double norm = std::sqrt(sq);
      if (norm > cfg_.grad_clip) clip_scale = cfg_.grad_clip / norm;
    }
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t i = 0; i < registry_.size(); ++i) {
      auto& p = registry_[i].tensor.data();
      const auto& grad = registry_[i].tensor.grad_view();
      auto& m = m_[i];
      auto& v = v_[i];
      for (size_t j = 0; j < p.size(); ++j) {
        const double g = (j < grad.size() ? static_cast<double>(grad[j]) : 0.0) * clip_scale;
        m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g;
        v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g;
        double pj = static_cast<double>(p[j]);
        pj -= lr_t * cfg_.weight_decay * pj;
        pj -= lr_t * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.adam_eps);
        p[j] = static_cast<T>(pj);
      }
      registry_[i].tensor.zero_grad();
    }
  }

 private:
  std::vector<ParamRef<T>> registry_;
  TrainConfig cfg_;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

template <class T>
double evaluate(const TransformerModel<T>& model, const PeftHooks<T>* hooks, const Dataset& ds,
                int eval_batch = 64) {
  int correct = 0;
  const int c = model.config().n_classes;
  for (int start = 0; start < ds.size(); start += eval_batch) {
    const int n = std::min(eval_batch, ds.size() - start);
    std::vector<int> tokens(ds.tokens.begin() + static_cast<std::int64_t>(start) * ds.seq_len,
                            ds.tokens.begin() + static_cast<std::int64_t>(start + n) * ds.seq_len);
    Tensor<T> logits = model.forward(tokens, n, ds.seq_len, hooks);
    const auto& x = logits.data();
    for (int i = 0; i < n; ++i) {
      int arg = 0;
      for (int j = 1; j < c; ++j)
        if (x[static_cast<std::int64_t>(i) * c + j] > x[static_cast<std::int64_t>(i) * c + arg])
          arg = j;
      correct += arg == ds.labels[start + i];
    }
  }
  return static_cast<double>(correct) / ds.size();
}

struct StepRow {
  std::int64_t step = 0;
  int epoch = 0;
  double lr = 0;
  double loss = 0;
};

struct TrainReport {
  std::vector<StepRow> steps;
  std::vector<double> epoch_val_acc;
  double initial_val_acc = 0;
  int best_epoch = 0;  // 0 = initial state (epochs == 0)
  double best_val_acc = 0;
  double test_acc = 0;
  std::int64_t trainable_params = 0;
  std::int64_t total_params = 0;
  double wall_seconds = 0;  // reported in the sidecar only, never in report.json
};

// Deterministic given cfg.seed; only registry parameters change. Best epoch is
// picked on validation accuracy, ties to the earlier epoch; the returned model
// state is the best epoch's.
template <class T>
TrainReport train(TransformerModel<T>& model, PeftAttachment<T>& att, const TaskData& data,
                  const TrainConfig& cfg) {
  cfg.validate();
  const auto t_start = std::chrono::steady_clock::now();
  TrainReport report;
  for (const auto& p : model.params()) report.total_params += p.tensor.numel();
  for (const auto& r : att.registry) {
    report.trainable_params += r.tensor.numel();
    if (r.name.starts_with("peft.")) report.total_params += r.tensor.numel();
  }

  const int n = data.train.size();
  const int seq = data.train.seq_len;
  const std::int64_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::int64_t total_steps = steps_per_epoch * cfg.epochs;

  report.initial_val_acc = evaluate(model, &att.hooks, data.valid);
  report.best_val_acc = -1.0;  // any trained epoch may become best

  AdamW<T> opt(att.registry, cfg);
  Rng shuffle_rng(derive_seed(cfg.seed, "shuffle"));
  std::vector<int> order(n);
  std::vector<std::vector<T>> best_snapshot;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (int i = 0; i < n; ++i) order[i] = i;
    for (int i = n - 1; i > 0; --i)
      std::swap(order[i], order[static_cast<int>(shuffle_rng.next_below(i + 1))]);
    for (int start = 0; start < n; start += cfg.batch_size) {
      const int bs = std::min(cfg.batch_size, n - start);
      std::vector<int> tokens(static_cast<std::int64_t>(bs) * seq);
      std::vector<int> labels(bs);
      for (int i = 0; i < bs; ++i) {
        const int src = order[start + i];
        std::copy_n(data.train.row(src), seq, tokens.begin() + static_cast<std::int64_t>(i) * seq);
        labels[i] = data.train.labels[src];
      }
      Tensor<T> loss = cross_entropy_mean(model.forward(tokens, bs, seq, &att.hooks), labels);
      const double loss_val = static_cast<double>(loss.item());
      if (!std::isfinite(loss_val)) throw DivergenceError("non-finite training loss");
      backward(loss);
      const double lr_t = lr_at(opt.steps_taken() + 1, total_steps, cfg);
      opt.step(lr_t);
      report.steps.push_back({opt.steps_taken(), epoch, lr_t, loss_val});
    }
    const double acc = evaluate(model, &att.hooks, data.valid);
    report.epoch_val_acc.push_back(acc);
    if (acc > report.best_val_acc) {
      report.best_val_acc = acc;
      report.best_epoch = epoch;
      best_snapshot.clear();
      for (const auto& r : att.registry) best_snapshot.push_back(r.tensor.data());
    }
    if (cfg.stop_at_val_acc > 0 && acc >= cfg.stop_at_val_acc) break;
  }

  if (!best_snapshot.empty())
    for (size_t i = 0; i < att.registry.size(); ++i)
      att.registry[i].tensor.data() = best_snapshot[i];
  if (cfg.epochs == 0) {
    report.best_val_acc = report.initial_val_acc;
    report.best_epoch = 0;
  }
  report.test_acc = evaluate(model, &att.hooks, data.test);
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return report;
}

// ------------------------------------------------------------- grad check

struct GradCheckRow {
  std::string name;
  double max_rel_err = 0;
};

struct GradCheckReport {
  std::vector<GradCheckRow> rows;
  double worst = 0;
  bool passed(double tol = 1e-4) const { return worst <= tol; }
};

// Central finite differences (h = 1e-5 scaled by parameter magnitude) against
// the analytic grads, per registry parameter. Run with T = double.
template <class T>
GradCheckReport grad_check(TransformerModel<T>& model, PeftAttachment<T>& att,
                           const Dataset& batch, int n_examples) {
  const int bs = std::min(n_examples, batch.size());
  const int seq = batch.seq_len;
  std::vector<int> tokens(batch.tokens.begin(),
                          batch.tokens.begin() + static_cast<std::int64_t>(bs) * seq);
  std::vector<int> labels(batch.labels.begin(), batch.labels.begin() + bs);
  auto loss_value = [&] {
    return static_cast<double>(
        cross_entropy_mean(model.forward(tokens, bs, seq, &att.hooks), labels).item());
  };
  for (auto& r : att.registry) r.tensor.zero_grad();
  Tensor<T> loss = cross_entropy_mean(model.forward(tokens, bs, seq, &att.hooks), labels);
  backward(loss);
  std::vector<std::vector<T>> analytic;
  for (auto& r : att.registry) {
    analytic.push_back(r.tensor.grad_view().empty() ? std::vector<T>(r.tensor.numel(), T(0))
                                                    : r.tensor.grad_view());
    r.tensor.zero_grad();
  }
  GradCheckReport report;
  for (size_t pi = 0; pi < att.registry.size(); ++pi) {
    auto& p = att.registry[pi].tensor.data();
    GradCheckRow row{att.registry[pi].name, 0.0};
    for (size_t j = 0; j < p.size(); ++j) {
      const T orig = p[j];
      const double h = 1e-5 * std::max(1.0, std::abs(static_cast<double>(orig)));
      p[j] = orig + static_cast<T>(h);
      const double up = loss_value();
      p[j] = orig - static_cast<T>(h);
      const double down = loss_value();
      p[j] = orig;
      const double fd = (up - down) / (2 * h);
      const double an = static_cast<double>(analytic[pi][j]);
      const double denom = std::max(std::abs(an), std::abs(fd));
      if (denom <= 1e-8) continue;  // both effectively zero
      row.max_rel_err = std::max(row.max_rel_err, std::abs(an - fd) / denom);
    }
    report.worst = std::max(report.worst, row.max_rel_err);
    report.rows.push_back(std::move(row));
  }
  return report;
}

}  // namespace redlab
