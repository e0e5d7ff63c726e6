#pragma once

// One experiment end to end: build base, attach PEFT, train, emit artifacts.
// Everything written here is byte-deterministic for a fixed config + seed;
// wall-clock time goes to a sidecar meta file only.

#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

#include <json.hpp>

#include "redlab/checkpoint.hpp"
#include "redlab/config.hpp"
#include "redlab/peft.hpp"
#include "redlab/train.hpp"

namespace redlab {

struct RunResult {
  TrainReport report;
  std::string frozen_before, frozen_after;
  std::string steps_csv;
  nlohmann::json report_json;
};

inline std::string steps_csv_of(const TrainReport& rep) {
  std::ostringstream os;
  os << "step,epoch,lr,loss\n" << std::setprecision(17);
  for (const auto& s : rep.steps) os << s.step << "," << s.epoch << "," << s.lr << "," << s.loss << "\n";
  return os.str();
}

template <class T>
RunResult run_experiment(const ExperimentConfig& cfg, TransformerModel<T>* model_out = nullptr,
                         PeftAttachment<T>* att_out = nullptr) {
  cfg.validate();
  TransformerModel<T> model = build_base_model<T>(cfg);
  TaskData data = generate(cfg.task);
  PeftAttachment<T> att = attach_peft(model, cfg.peft, cfg.seed);

  RunResult rr;
  rr.frozen_before = frozen_digest(model);
  rr.report = train(model, att, data, cfg.train);
  rr.frozen_after = frozen_digest(model);
  rr.steps_csv = steps_csv_of(rr.report);

  nlohmann::json j;
  j["task"] = {{"name", to_string(cfg.task.name)},
               {"vocab_size", cfg.task.vocab_size},
               {"seq_len", cfg.task.seq_len},
               {"n_classes", cfg.task.n_classes}};
  j["peft"] = {{"method", to_string(cfg.peft.method)},
               {"rank", cfg.peft.rank},
               {"positions", to_string(cfg.peft.positions)},
               {"components", to_string(cfg.peft.components)}};
  j["seed"] = cfg.seed;
  j["initial_val_acc"] = rr.report.initial_val_acc;
  j["epoch_val_acc"] = rr.report.epoch_val_acc;
  j["best_epoch"] = rr.report.best_epoch;
  j["best_val_acc"] = rr.report.best_val_acc;
  j["test_acc"] = rr.report.test_acc;
  j["trainable_params"] = rr.report.trainable_params;
  j["total_params"] = rr.report.total_params;
  j["steps"] = rr.report.steps.size();
  j["frozen_digest_before"] = rr.frozen_before;
  j["frozen_digest_after"] = rr.frozen_after;
  rr.report_json = std::move(j);

  if (model_out) *model_out = std::move(model);
  if (att_out) *att_out = std::move(att);
  return rr;
}

inline void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw ConfigError("cannot write " + p.string());
  os << content;
}

// report.json + steps.csv + checkpoints under out_dir; timestamps only in meta.json.
template <class T>
void write_run_outputs(const std::filesystem::path& out_dir, const RunResult& rr,
                       const TransformerModel<T>& model, const PeftAttachment<T>& att) {
  std::filesystem::create_directories(out_dir);
  write_file(out_dir / "report.json", rr.report_json.dump(2) + "\n");
  write_file(out_dir / "steps.csv", rr.steps_csv);
  save_checkpoint((out_dir / "model.ckpt").string(), checkpoint_of(model));
  if (att.spec.method != PeftMethod::full_ft)
    save_checkpoint((out_dir / "peft.ckpt").string(), checkpoint_of_registry(att));
  nlohmann::json meta;
  meta["wall_seconds"] = rr.report.wall_seconds;
  meta["unix_time"] = static_cast<std::int64_t>(std::time(nullptr));
  write_file(out_dir / "meta.json", meta.dump(2) + "\n");
}

}  // namespace redlab
