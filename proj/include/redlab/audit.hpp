#pragma once

// Closed-form trainable-parameter accounting for published host architectures,
// plus the headline reduction-factor claims.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "redlab/peft.hpp"

namespace redlab {

struct HostDescriptor {
  std::string name;
  int n_layers = 0;
  int d_model = 0;
  int d_ff = 0;
  int decoder_layers = 0;          // encoder-decoder hosts
  std::int64_t total_params = 0;   // published size, for full-FT ratios

  int total_layers() const { return n_layers + decoder_layers; }
  void validate() const;
};

const std::vector<HostDescriptor>& host_presets();
HostDescriptor host_preset(const std::string& name);  // throws ConfigError

// Exact trainable-parameter count for one method on one host.
std::int64_t count_trainable(const PeftSpec& spec, const HostDescriptor& host);

// Audit-only baselines: soft prompt at the embedding vs per-layer key/value prefix.
std::int64_t count_prompt_tuning(const HostDescriptor& host, int prefix_len = 16);
std::int64_t count_prefix_tuning(const HostDescriptor& host, int prefix_len = 16);

// count / 1e6 formatted like the papers print it, e.g. "0.02M", "0.3M", "125M".
std::string paper_units(std::int64_t count, int decimals);

double reduction_factor(std::int64_t count_a, std::int64_t count_b);

struct AuditRow {
  std::string host;
  std::string method;
  std::int64_t exact = 0;
  std::string units;   // exact count in the paper row's printed precision
  std::string paper;   // published value, empty if none
  bool match = false;  // units == paper (meaningless when paper is empty)
  std::string note;    // counting convention / known discrepancy
};

struct ReductionRow {
  std::string label;
  double computed = 0;
  double paper = 0;
  bool flagged = false;  // discrepancy beyond rounding, surfaced not hidden
};

std::vector<AuditRow> audit_rows(const std::string& host_filter = "");
std::vector<ReductionRow> audit_reductions();

std::string audit_text(const std::vector<AuditRow>& rows,
                       const std::vector<ReductionRow>& reductions);
nlohmann::json audit_json(const std::vector<AuditRow>& rows,
                          const std::vector<ReductionRow>& reductions);

}  // namespace redlab
