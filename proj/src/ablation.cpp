#include "adapt3d/ablation.hpp"

#include <cstdio>
#include <map>
#include <tuple>

#include "adapt3d/errors.hpp"

namespace adapt3d {

std::vector<AblationRow> ablation_rows(double lambda) {
  return {
      {"sds", false, false, false, 0.0},
      {"sds+depth", true, false, false, 0.0},
      {"sds+depth+mask", true, true, false, 0.0},
      {"full", true, true, true, lambda},
      {"lambda_0", true, true, true, 0.0},
      {"lambda_1", true, true, true, 1.0},
      {"lambda_3", true, true, true, 3.0},
      {"lambda_5", true, true, true, 5.0},
  };
}

namespace {

// Training is identical whenever the consistency term contributes nothing.
using RowKey = std::tuple<bool, bool, double>;

RowKey effective_key(const AblationRow& row) {
  const bool hsc = row.use_hsc && row.lambda > 0.0;
  return {row.use_depth, row.use_mask, hsc ? row.lambda : 0.0};
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

const MetricReport& find(const AblationTable& t, const std::string& name) {
  for (const auto& r : t.rows)
    if (r.config == name) return r;
  throw ConfigError("ablation table has no row '" + name + "'");
}

}  // namespace

AblationTable ablation_suite(const AblationSetup& setup, const std::function<void(const MetricReport&)>& on_report,
                             const std::function<void(const std::string&)>& log) {
  if (!setup.predictor || !setup.eval.guidance) throw ConfigError("ablation needs a guidance model");
  setup.base.validate();
  AdaptContext ctx;
  ctx.schedule = &setup.eval.guidance->schedule;
  ctx.predictor = setup.predictor;
  ctx.tokenizer = setup.eval.tokenizer;
  ctx.condition = setup.eval.condition;

  std::map<RowKey, Generator> trained;
  auto train = [&](const AblationRow& row) {
    const auto key = effective_key(row);
    if (auto it = trained.find(key); it != trained.end()) return it->second;
    auto cfg = setup.base;
    cfg.use_depth = row.use_depth;
    cfg.use_mask = row.use_mask;
    cfg.use_hsc = row.use_hsc && row.lambda > 0.0;
    cfg.lambda = row.lambda;
    auto state = init_target(setup.eval.source, cfg);
    if (log) log("# training " + row.name);
    run_adaptation(state, cfg, ctx, {}, [&](const std::string& line) {
      if (log) log(row.name + " " + line);
    });
    trained.emplace(key, state.target);
    return state.target;
  };

  AblationTable table;
  table.baseline = evaluate("source", setup.eval.source, setup.eval);
  for (const auto& row : ablation_rows(setup.base.lambda)) {
    auto report = evaluate(row.name, train(row), setup.eval);
    table.rows.push_back(report);
    if (on_report) on_report(report);
  }
  AblationRow no_mask{"full-no-mask", true, false, true, setup.base.lambda};
  table.no_mask = evaluate(no_mask.name, train(no_mask), setup.eval);
  table.verdicts = ablation_verdicts(table);
  return table;
}

std::vector<Verdict> ablation_verdicts(const AblationTable& t) {
  std::vector<Verdict> out;
  const auto& sds = find(t, "sds");
  const auto& depth = find(t, "sds+depth");
  const auto& mask = find(t, "sds+depth+mask");
  const auto& full = find(t, "full");

  out.push_back({"pose_order",
                 full.pose_deg <= mask.pose_deg && mask.pose_deg <= depth.pose_deg && depth.pose_deg <= sds.pose_deg &&
                     full.pose_deg < sds.pose_deg,
                 "full " + fmt(full.pose_deg) + " <= +mask " + fmt(mask.pose_deg) + " <= +depth " +
                     fmt(depth.pose_deg) + " <= sds " + fmt(sds.pose_deg) + " (full < sds strict)"});
  out.push_back({"scs_order",
                 full.scs >= mask.scs && mask.scs >= depth.scs && depth.scs >= sds.scs && full.scs > sds.scs,
                 "full " + fmt(full.scs) + " >= +mask " + fmt(mask.scs) + " >= +depth " + fmt(depth.scs) +
                     " >= sds " + fmt(sds.scs) + " (full > sds strict)"});
  {
    const bool ok = full.bg_mse && t.no_mask.bg_mse && *full.bg_mse < *t.no_mask.bg_mse;
    out.push_back({"background",
                   ok,
                   "full " + (full.bg_mse ? fmt(*full.bg_mse) : std::string("ABSENT")) + " < no-mask " +
                       (t.no_mask.bg_mse ? fmt(*t.no_mask.bg_mse) : std::string("ABSENT"))});
  }
  const auto& l0 = find(t, "lambda_0");
  const auto& l1 = find(t, "lambda_1");
  const auto& l3 = find(t, "lambda_3");
  const auto& l5 = find(t, "lambda_5");
  out.push_back({"lambda_pose",
                 l1.pose_deg <= l0.pose_deg && l3.pose_deg <= l1.pose_deg && l5.pose_deg <= l3.pose_deg &&
                     l3.pose_deg < l0.pose_deg,
                 "pose " + fmt(l0.pose_deg) + " >= " + fmt(l1.pose_deg) + " >= " + fmt(l3.pose_deg) + " >= " +
                     fmt(l5.pose_deg) + " (0 -> 3 strict)"});
  out.push_back({"lambda_align",
                 l1.align_proxy <= l0.align_proxy && l3.align_proxy <= l1.align_proxy &&
                     l5.align_proxy <= l3.align_proxy,
                 "align " + fmt(l0.align_proxy) + " >= " + fmt(l1.align_proxy) + " >= " + fmt(l3.align_proxy) +
                     " >= " + fmt(l5.align_proxy)});
  out.push_back({"source_pose_floor", t.baseline.pose_deg <= sds.pose_deg,
                 "source " + fmt(t.baseline.pose_deg) + " <= sds " + fmt(sds.pose_deg)});
  out.push_back({"align_above_baseline", full.align_proxy > t.baseline.align_proxy,
                 "full " + fmt(full.align_proxy) + " > source " + fmt(t.baseline.align_proxy)});
  return out;
}

std::string ablation_csv(const AblationTable& table) {
  std::string out = csv_header() + "\n";
  for (const auto& r : table.rows) out += csv_row(r) + "\n";
  return out;
}

std::string verdict_summary(const AblationTable& table) {
  std::string out;
  for (const auto& v : table.verdicts) out += std::string(v.pass ? "PASS " : "FAIL ") + v.name + ": " + v.detail + "\n";
  return out;
}

}  // namespace adapt3d
