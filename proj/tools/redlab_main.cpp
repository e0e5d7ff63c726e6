// redlab CLI: audit-params, train, grad-check, ablate.
// Exit codes: 0 ok, 1 check failure, 2 config error, 3 divergence.

#include <filesystem>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "redlab/audit.hpp"
#include "redlab/config.hpp"
#include "redlab/runner.hpp"

namespace fs = std::filesystem;
using namespace redlab;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailure = 1;
constexpr int kExitConfigError = 2;
constexpr int kExitDivergence = 3;

int cmd_audit_params(const std::string& host, bool all, const std::string& json_out) {
  const auto rows = audit_rows(all ? "" : host);
  const auto reductions = audit_reductions();
  std::cout << audit_text(rows, reductions);
  if (!json_out.empty())
    write_file(json_out, audit_json(rows, reductions).dump(2) + "\n");
  return kExitOk;
}

ExperimentConfig load_with_overrides(const std::string& config_path, const std::string& out_dir,
                                     long long seed) {
  ExperimentConfig cfg = load_experiment(config_path);
  if (!out_dir.empty()) cfg.output_dir = out_dir;
  if (seed >= 0) {
    cfg.seed = static_cast<std::uint64_t>(seed);
    cfg.train.seed = cfg.seed;
    cfg.task.seed = cfg.seed;
  }
  return cfg;
}

template <class T>
int run_train(const ExperimentConfig& cfg) {
  TransformerModel<T> model;
  PeftAttachment<T> att;
  RunResult rr = run_experiment<T>(cfg, &model, &att);
  write_run_outputs(fs::path(cfg.output_dir), rr, model, att);
  std::cout << "method=" << to_string(cfg.peft.method)
            << " trainable=" << rr.report.trainable_params
            << " initial_val_acc=" << rr.report.initial_val_acc
            << " best_val_acc=" << rr.report.best_val_acc << " (epoch " << rr.report.best_epoch
            << ") test_acc=" << rr.report.test_acc << "\n";
  return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& out_dir, long long seed,
              const std::string& precision) {
  const ExperimentConfig cfg = load_with_overrides(config_path, out_dir, seed);
  if (precision == "verify") return run_train<double>(cfg);
  return run_train<float>(cfg);
}

int cmd_grad_check(const std::string& config_path, long long seed) {
  // verification precision; small default host unless a config says otherwise
  ExperimentConfig cfg;
  if (!config_path.empty()) {
    cfg = load_with_overrides(config_path, "", seed);
  } else {
    cfg.model = {2, 16, 2, 32, 8, 8, 2};
    cfg.task = {TaskName::parity, 4, 8, 2, 64, 64, 64, cfg.seed};
    if (seed >= 0) {
      cfg.seed = static_cast<std::uint64_t>(seed);
      cfg.task.seed = cfg.seed;
    }
  }
  std::vector<PeftMethod> methods = {PeftMethod::red, PeftMethod::lora, PeftMethod::adapter,
                                     PeftMethod::adapter_ffn, PeftMethod::bitfit};
  double worst = 0;
  std::cout << std::left << std::setw(14) << "method" << std::setw(36) << "param group"
            << "max rel err\n";
  for (PeftMethod m : methods) {
    TransformerModel<double> model = build_base_model<double>(cfg);
    PeftSpec spec = cfg.peft;
    spec.method = m;
    if (m == PeftMethod::lora || m == PeftMethod::adapter || m == PeftMethod::adapter_ffn)
      spec.rank = 2;
    PeftAttachment<double> att = attach_peft(model, spec, cfg.seed);
    TaskData data = generate(cfg.task);
    GradCheckReport rep = grad_check(model, att, data.train, 4);
    for (const auto& row : rep.rows)
      std::cout << std::left << std::setw(14) << to_string(m) << std::setw(36) << row.name
                << std::scientific << std::setprecision(3) << row.max_rel_err << "\n"
                << std::defaultfloat;
    worst = std::max(worst, rep.worst);
  }
  std::cout << "worst max rel err: " << std::scientific << std::setprecision(3) << worst << "\n";
  return worst <= 1e-4 ? kExitOk : kExitCheckFailure;
}

struct AblateRow {
  std::string label;
  std::int64_t trainable = 0;
  double best_val_acc = 0;
  double test_acc = 0;
};

int cmd_ablate(const std::string& suite, const std::string& config_path,
               const std::string& out_dir, long long seed) {
  ExperimentConfig base = load_with_overrides(config_path, out_dir, seed);
  std::vector<std::pair<std::string, PeftSpec>> variants;
  auto red_with = [&](RedComponents comp, RedPositions pos) {
    PeftSpec s = base.peft;
    s.method = PeftMethod::red;
    s.components = comp;
    s.positions = pos;
    return s;
  };
  auto ranked = [&](PeftMethod m) {
    PeftSpec s = base.peft;
    s.method = m;
    s.rank = 1;
    s.alpha = base.peft.alpha;
    return s;
  };
  if (suite == "components") {
    variants = {{"red(both)", red_with(RedComponents::both, base.peft.positions)},
                {"red(scaling_only)", red_with(RedComponents::scaling_only, base.peft.positions)},
                {"red(bias_only)", red_with(RedComponents::bias_only, base.peft.positions)}};
  } else if (suite == "positions") {
    variants = {{"red(ffn)", red_with(base.peft.components, RedPositions::ffn)},
                {"red(attn)", red_with(base.peft.components, RedPositions::attn)},
                {"red(both)", red_with(base.peft.components, RedPositions::both)}};
  } else if (suite == "rank1") {
    variants = {{"red", red_with(base.peft.components, base.peft.positions)},
                {"lora(r=1)", ranked(PeftMethod::lora)},
                {"adapter(r=1)", ranked(PeftMethod::adapter)},
                {"adapter_ffn(r=1)", ranked(PeftMethod::adapter_ffn)}};
  } else {
    throw ConfigError("unknown ablation suite: " + suite);
  }

  std::vector<AblateRow> rows;
  for (const auto& [label, spec] : variants) {
    ExperimentConfig cfg = base;
    cfg.peft = spec;
    cfg.output_dir = (fs::path(base.output_dir) / label).string();
    TransformerModel<float> model;
    PeftAttachment<float> att;
    RunResult rr = run_experiment<float>(cfg, &model, &att);
    write_run_outputs(fs::path(cfg.output_dir), rr, model, att);
    rows.push_back({label, rr.report.trainable_params, rr.report.best_val_acc,
                    rr.report.test_acc});
  }

  std::ostringstream table;
  table << std::left << std::setw(20) << "method" << std::right << std::setw(12) << "trainable"
        << std::setw(14) << "best_val_acc" << std::setw(10) << "test_acc" << "\n";
  nlohmann::json jrows = nlohmann::json::array();
  for (const auto& r : rows) {
    table << std::left << std::setw(20) << r.label << std::right << std::setw(12) << r.trainable
          << std::fixed << std::setprecision(4) << std::setw(14) << r.best_val_acc
          << std::setw(10) << r.test_acc << "\n" << std::defaultfloat;
    jrows.push_back({{"method", r.label},
                     {"trainable", r.trainable},
                     {"best_val_acc", r.best_val_acc},
                     {"test_acc", r.test_acc}});
  }
  fs::create_directories(base.output_dir);
  write_file(fs::path(base.output_dir) / "table.txt", table.str());
  write_file(fs::path(base.output_dir) / "table.json",
             nlohmann::json{{"suite", suite}, {"rows", jrows}}.dump(2) + "\n");
  std::cout << table.str();
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale PEFT lab: representation editing and friends"};
  app.require_subcommand(1);

  std::string host, json_out;
  bool all = false;
  auto* audit = app.add_subcommand("audit-params", "closed-form trainable-parameter audit");
  audit->add_option("host", host, "host preset name");
  audit->add_flag("--all", all, "all presets");
  audit->add_option("--json", json_out, "also write the table as JSON");

  std::string config_path, out_dir, precision = "train", suite;
  long long seed = -1;
  auto* train_cmd = app.add_subcommand("train", "run one experiment");
  train_cmd->add_option("--config", config_path, "experiment config JSON")->required();
  train_cmd->add_option("--out", out_dir, "output directory (overrides config)");
  train_cmd->add_option("--seed", seed, "seed override");
  train_cmd->add_option("--precision", precision, "train|verify")
      ->check(CLI::IsMember({"train", "verify"}));

  auto* gc = app.add_subcommand("grad-check", "finite-difference gradient verification");
  gc->add_option("--config", config_path, "experiment config JSON (optional)");
  gc->add_option("--seed", seed, "seed override");

  auto* ab = app.add_subcommand("ablate", "ablation suites");
  ab->add_option("suite", suite, "components|positions|rank1")->required();
  ab->add_option("--config", config_path, "base experiment config JSON")->required();
  ab->add_option("--out", out_dir, "output directory (overrides config)");
  ab->add_option("--seed", seed, "seed override");

  CLI11_PARSE(app, argc, argv);

  try {
    if (audit->parsed()) {
      if (!all && host.empty()) {
        std::cerr << "audit-params: give a host preset or --all\n";
        return kExitConfigError;
      }
      return cmd_audit_params(host, all, json_out);
    }
    if (train_cmd->parsed()) return cmd_train(config_path, out_dir, seed, precision);
    if (gc->parsed()) return cmd_grad_check(config_path, seed);
    if (ab->parsed()) return cmd_ablate(suite, config_path, out_dir, seed);
  } catch (const DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfigError;
  }
  return kExitConfigError;
}
