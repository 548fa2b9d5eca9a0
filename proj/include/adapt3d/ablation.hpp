#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "adapt3d/adaptation.hpp"
#include "adapt3d/metrics.hpp"

namespace adapt3d {

struct AblationRow {
  std::string name;
  bool use_depth = false;
  bool use_mask = false;
  bool use_hsc = false;
  double lambda = 0.0;
};

/// The four component rows (sds, sds+depth, sds+depth+mask, full at
/// `lambda`) followed by the lambda sweep {0, 1, 3, 5} of the full method.
std::vector<AblationRow> ablation_rows(double lambda);

struct Verdict {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct AblationTable {
  std::vector<MetricReport> rows;
  /// Unadapted source generator under the same evaluation.
  MetricReport baseline;
  /// Full method without the mask, for the background check.
  MetricReport no_mask;
  std::vector<Verdict> verdicts;
};

/// Inputs shared by every row. `eval.source` must be the source generator.
struct AblationSetup {
  AdaptConfig base;
  const NoisePredictor* predictor = nullptr;
  EvalContext eval;
};

/// Adapts and evaluates every row from the same seed. Rows whose effective
/// training configuration coincides (e.g. lambda = 0 with and without the
/// consistency toggle) are trained once. Reports are appended to
/// `on_report` as they finish, so a training error keeps earlier rows.
AblationTable ablation_suite(const AblationSetup& setup,
                             const std::function<void(const MetricReport&)>& on_report = {},
                             const std::function<void(const std::string&)>& log = {});

std::vector<Verdict> ablation_verdicts(const AblationTable& table);

/// CSV: header plus one line per row of `table.rows`, "\n"-terminated.
std::string ablation_csv(const AblationTable& table);

/// Plain-text verdict summary, one "PASS|FAIL <name>: <detail>" line each.
std::string verdict_summary(const AblationTable& table);

}  // namespace adapt3d
