// prevalshift: simulation sweeps, calibrator fitting, prevalence estimation,
// shifted populations and calibration reports.
//
// Exit codes: 0 success, 2 configuration / input errors, 3 runtime failures.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "prevalshift/prevalshift.hpp"

namespace fs = std::filesystem;
using namespace prevalshift;
using io::json;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string out;
  std::string format;
};

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidConfig:
    case ErrorCode::ParseError:
    case ErrorCode::SchemaMismatch:
    case ErrorCode::UnknownMethod:
    case ErrorCode::FeatureNotFound:
    case ErrorCode::NonNumericFeature:
    case ErrorCode::EmptyDataset:
    case ErrorCode::IoError:
    case ErrorCode::InvalidEpsilon:
      return 2;
    default:
      return 3;
  }
}

void log(const std::string& msg) { std::cerr << "prevalshift: " << msg << '\n'; }

/// Reads a JSON object and rejects keys outside `allowed`.
json load_config(const std::string& path, const std::set<std::string>& allowed) {
  if (path.empty()) return json::object();
  json j = io::parse_json(io::read_file(path), "config " + path);
  if (!j.is_object()) fail(ErrorCode::InvalidConfig, "config " + path + " must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (!allowed.count(key)) fail(ErrorCode::InvalidConfig, "unknown config key '" + key + "' in " + path);
  return j;
}

/// Config value access with type errors reported as configuration errors.
template <typename T>
T get(const json& j, const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    fail(ErrorCode::InvalidConfig, "config key '" + key + "' has the wrong type");
  }
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::vector<MethodId> parse_methods(const std::vector<std::string>& ids) {
  std::vector<MethodId> out;
  for (const auto& id : ids) out.push_back(parse_method(id));
  return out;
}

RngSeed seed_of(const Globals& g, const json& config, std::uint64_t fallback) {
  if (g.seed) return RngSeed{*g.seed};
  return RngSeed{get<std::uint64_t>(config, "seed", fallback)};
}

std::string require_out(const Globals& g) {
  if (g.out.empty()) fail(ErrorCode::InvalidConfig, "--out is required");
  return g.out;
}

/// "dir/name.csv" -> "dir/name" + suffix
fs::path sibling(const fs::path& path, const std::string& suffix) {
  fs::path p = path;
  p.replace_extension();
  p += suffix;
  return p;
}

struct Table {
  io::TableSchema sidecar;
  Dataset data;
};

Table load_table(const std::string& csv, const std::string& schema_path, const Schema* base = nullptr) {
  if (csv.empty()) fail(ErrorCode::InvalidConfig, "--data is required");
  const auto sidecar = schema_path.empty() ? fs::path(sibling(csv, ".schema.json")) : fs::path(schema_path);
  auto t = io::read_table_schema(sidecar);
  auto d = io::read_csv(csv, t, base);
  return {std::move(t), std::move(d)};
}

/// Lists which features differ between two schemas, one per line.
std::string schema_diff(const Schema& expected, const Schema& actual) {
  auto describe = [](const FeatureDecl& f) {
    return f.name + " (" + (f.kind == FeatureKind::Categorical ? "categorical" : "numeric") + ")";
  };
  std::string out = "  model fingerprint " + expected.fingerprint() + ", data fingerprint " + actual.fingerprint();
  const std::size_t n = std::max(expected.features.size(), actual.features.size());
  for (std::size_t i = 0; i < n; ++i) {
    const auto* e = i < expected.features.size() ? &expected.features[i] : nullptr;
    const auto* a = i < actual.features.size() ? &actual.features[i] : nullptr;
    if (e && a && e->name == a->name && e->kind == a->kind) continue;
    out += "\n  feature " + std::to_string(i) + ": model " + (e ? describe(*e) : "<none>") + ", data " +
           (a ? describe(*a) : "<none>");
  }
  return out;
}

void check_fingerprint(const Schema& model, const io::TableSchema& sidecar) {
  const Schema data = sidecar.feature_schema();
  if (model.fingerprint() != data.fingerprint())
    fail(ErrorCode::SchemaMismatch, "schema fingerprint mismatch\n" + schema_diff(model, data));
}

// ---------------------------------------------------------------------------
// sweep

const std::set<std::string> kSweepKeys = {"n",          "p_y_given_x1", "p_y_given_x0", "score_x1", "score_x0",
                                          "train_p_x0", "shift_grid",   "iterations",   "seed",     "methods",
                                          "boost"};

int cmd_sweep(const Globals& g, const std::string& methods_flag) {
  const json cfg = load_config(g.config, kSweepKeys);
  SimConfig c;
  c.n = get(cfg, "n", c.n);
  c.p_y_given_x1 = get(cfg, "p_y_given_x1", c.p_y_given_x1);
  c.p_y_given_x0 = get(cfg, "p_y_given_x0", c.p_y_given_x0);
  c.score_x1 = get(cfg, "score_x1", c.score_x1);
  c.score_x0 = get(cfg, "score_x0", c.score_x0);
  c.train_p_x0 = get(cfg, "train_p_x0", c.train_p_x0);
  c.shift_grid = get(cfg, "shift_grid", c.shift_grid);
  c.iterations = get(cfg, "iterations", c.iterations);
  c.seed = seed_of(g, cfg, c.seed.value);
  c.validate();

  std::vector<MethodId> methods = default_sweep_methods();
  if (!methods_flag.empty())
    methods = parse_methods(split_list(methods_flag));
  else if (cfg.contains("methods"))
    methods = parse_methods(get<std::vector<std::string>>(cfg, "methods", {}));

  SweepOptions opts;
  opts.threads = threads_from_env();
  if (cfg.contains("boost")) opts.boost = io::boost_config_from_json(cfg["boost"]);

  const fs::path prefix = sibling(require_out(g), "");
  log("sweep: n=" + std::to_string(c.n) + " B=" + std::to_string(c.iterations) + " grid=" +
      std::to_string(c.shift_grid.size()) + " methods=" + std::to_string(methods.size()) +
      " threads=" + std::to_string(opts.threads));
  const auto report = run_sweep(c, methods, opts);
  if (g.format.empty() || g.format == "csv") io::write_file_atomic(sibling(prefix, ".csv"), io::sweep_csv(report));
  if (g.format.empty() || g.format == "json")
    io::write_file_atomic(sibling(prefix, ".json"), io::to_json(report).dump(2) + "\n");
  std::cout << "sweep " << report.rows.size() << " rows, config " << report.config_hash << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// generate

const std::set<std::string> kGenerateKeys = {"population", "n",        "p_x0",     "p_y_given_x1", "p_y_given_x0",
                                             "score_x1",   "score_x0", "seed"};

int cmd_generate(const Globals& g, std::string population, std::optional<int> n_flag, std::optional<double> p_flag) {
  const json cfg = load_config(g.config, kGenerateKeys);
  if (population.empty()) population = get<std::string>(cfg, "population", "simulation");
  const RngSeed seed = seed_of(g, cfg, SimConfig{}.seed.value);
  Dataset data = [&] {
    if (population == "simulation") {
      SimConfig c;
      c.n = n_flag.value_or(get(cfg, "n", c.n));
      c.p_y_given_x1 = get(cfg, "p_y_given_x1", c.p_y_given_x1);
      c.p_y_given_x0 = get(cfg, "p_y_given_x0", c.p_y_given_x0);
      c.score_x1 = get(cfg, "score_x1", c.score_x1);
      c.score_x0 = get(cfg, "score_x0", c.score_x0);
      return generate(c, p_flag.value_or(get(cfg, "p_x0", c.train_p_x0)), seed);
    }
    if (population == "age") {
      const int n = n_flag.value_or(get(cfg, "n", 50000));
      if (n < 1) fail(ErrorCode::InvalidConfig, "n must be at least 1");
      return generate_age_population(static_cast<std::size_t>(n), seed);
    }
    fail(ErrorCode::InvalidConfig, "unknown population '" + population + "' (expected simulation or age)");
  }();
  const fs::path out = require_out(g);
  const auto sidecar = io::table_schema_for(data);
  io::write_file_atomic(out, io::format_csv(data, sidecar));
  io::write_file_atomic(sibling(out, ".schema.json"), io::to_json(sidecar).dump(2) + "\n");
  log("generate: wrote " + std::to_string(data.size()) + " rows to " + out.string());
  return 0;
}

// ---------------------------------------------------------------------------
// calibrate

const std::set<std::string> kCalibrateKeys = {"calibrators", "methods", "seed"};
const std::set<std::string> kCalibratorKeys = {"type", "id", "groups", "edges", "boost"};

Calibrator fit_from_config(const json& spec, const Dataset& cal, RngSeed seed) {
  if (!spec.is_object()) fail(ErrorCode::InvalidConfig, "each calibrator entry must be an object");
  for (const auto& [key, _] : spec.items())
    if (!kCalibratorKeys.count(key)) fail(ErrorCode::InvalidConfig, "unknown calibrator key '" + key + "'");
  const auto type = get<std::string>(spec, "type", "");
  Calibrator c;
  if (type == "global") {
    c = fit_global_multiplicative(cal);
  } else if (type == "isotonic") {
    c = fit_isotonic(cal);
  } else if (type == "stratum") {
    const auto names = get<std::vector<std::string>>(spec, "groups", {});
    if (names.empty()) fail(ErrorCode::InvalidConfig, "stratum calibrator needs 'groups'");
    const auto edges = get<std::map<std::string, std::vector<double>>>(spec, "edges", {});
    try {
      c = fit_stratum_additive(cal, GroupSpec::by_features(cal.schema(), names, edges));
    } catch (const Error& e) {
      if (e.code() == ErrorCode::InvalidArgument) fail(ErrorCode::InvalidConfig, e.what());
      throw;
    }
  } else if (type == "boosted") {
    const BoostConfig boost = spec.contains("boost") ? io::boost_config_from_json(spec["boost"]) : BoostConfig{};
    c = fit_boosted_multicalibrator(cal, boost, seed);
  } else {
    fail(ErrorCode::InvalidConfig, "unknown calibrator type '" + type + "'");
  }
  c.id = get<std::string>(spec, "id", c.id);
  return c;
}

int cmd_calibrate(const Globals& g, const std::string& data_path, const std::string& schema_path) {
  const json cfg = load_config(g.config, kCalibrateKeys);
  const RngSeed seed = seed_of(g, cfg, 0);
  const json specs = cfg.contains("calibrators") ? cfg["calibrators"]
                                                 : json::array({{{"type", "global"}}, {{"type", "isotonic"}}});
  if (!specs.is_array()) fail(ErrorCode::InvalidConfig, "'calibrators' must be an array");
  const auto methods =
      parse_methods(get<std::vector<std::string>>(cfg, "methods", {"cc", "rg", "pacc", "sld"}));
  for (const auto& m : methods)
    if (m.kind == MethodKind::CalibratedMean || m.kind == MethodKind::Ipw)
      fail(ErrorCode::InvalidConfig, "'methods' lists quantifiers to fit; " + m.str() + " has no fixed parameters");

  const auto cal = load_table(data_path, schema_path).data;
  if (!cal.all_labeled()) fail(ErrorCode::InvalidConfig, "calibration data needs a label on every row");
  if (!cal.all_scored()) fail(ErrorCode::InvalidConfig, "calibration data needs a score on every row");

  io::ModelBundle bundle;
  bundle.schema = cal.schema();
  std::set<std::string> ids;
  Rng rng(seed);
  for (std::size_t k = 0; k < specs.size(); ++k) {
    auto c = fit_from_config(specs[k], cal, rng.derive_seed(k));
    if (!ids.insert(c.id).second) fail(ErrorCode::InvalidConfig, "duplicate calibrator id '" + c.id + "'");
    log("calibrate: fitted " + c.id);
    bundle.calibrators.push_back(std::move(c));
  }
  bundle.quantifiers = fit_quantifiers(cal, methods);
  io::write_file_atomic(require_out(g), io::to_json(bundle).dump(2) + "\n");
  return 0;
}

// ---------------------------------------------------------------------------
// estimate

const std::set<std::string> kEstimateKeys = {"methods", "bootstrap_iterations", "clip", "seed"};

int cmd_estimate(const Globals& g, const std::string& data_path, const std::string& schema_path,
                 const std::string& model_path, const std::string& methods_flag, const std::string& calibration_path) {
  const json cfg = load_config(g.config, kEstimateKeys);
  const RngSeed seed = seed_of(g, cfg, 0);
  const int boot = get(cfg, "bootstrap_iterations", 200);
  if (boot < 1) fail(ErrorCode::InvalidConfig, "bootstrap_iterations must be positive");
  if (model_path.empty()) fail(ErrorCode::InvalidConfig, "--model is required");

  const auto model = io::model_from_json(io::parse_json(io::read_file(model_path), "model " + model_path));
  QuantifierFits fits = model.quantifiers;
  fits.clip = get(cfg, "clip", false);

  std::vector<std::string> ids = split_list(methods_flag);
  if (ids.empty()) ids = get<std::vector<std::string>>(cfg, "methods", {});
  if (ids.empty()) {
    ids = {"mean"};
    if (fits.threshold) ids.push_back("cc");
    if (fits.rates) ids.push_back("rg");
    if (fits.means) ids.push_back("pacc");
    if (fits.source) ids.push_back("sld");
    for (const auto& c : model.calibrators) ids.push_back("cal-mean:" + c.id);
  }
  const auto methods = parse_methods(ids);

  // IPW needs labeled calibration rows; their dictionaries seed the target's.
  std::optional<Dataset> cal;
  const Schema* base = &model.schema;
  if (!calibration_path.empty()) {
    auto t = load_table(calibration_path, "");
    check_fingerprint(model.schema, t.sidecar);
    cal = io::read_csv(calibration_path, t.sidecar, &model.schema);
    base = &cal->schema();
  }
  for (const auto& m : methods)
    if (m.kind == MethodKind::Ipw && !cal) fail(ErrorCode::InvalidConfig, "method ipw needs --calibration");

  if (data_path.empty()) fail(ErrorCode::InvalidConfig, "--data is required");
  const auto sidecar = io::read_table_schema(schema_path.empty() ? sibling(data_path, ".schema.json")
                                                                 : fs::path(schema_path));
  check_fingerprint(model.schema, sidecar);
  const Dataset target = io::read_csv(data_path, sidecar, base);
  const bool labeled = target.all_labeled();

  std::vector<PrevalenceEstimate> estimates;
  for (const auto& m : methods) {
    try {
      estimates.push_back(estimate(m, target, fits, cal ? &*cal : nullptr));
    } catch (const Error& e) {
      if (exit_code_for(e.code()) == 2) throw;
      fail(e.code(), "method " + m.str() + " failed: " + e.what());
    }
  }

  json out = {{"rows", target.size()}, {"labeled", labeled}, {"schema_fingerprint", model.schema.fingerprint()}};
  json rows = json::array();
  std::optional<double> truth;
  if (labeled) {
    const auto y = target.labels();
    const auto w = target.weights();
    std::vector<double> yd(y.begin(), y.end());
    truth = weighted_mean(yd, w);
    out["truth"] = *truth;
    out["bootstrap_iterations"] = boot;
  }
  const Rng root(seed);
  for (std::size_t k = 0; k < estimates.size(); ++k) {
    const auto& e = estimates[k];
    json row = io::to_json(e);
    if (truth) {
      const auto b = bias_report({e}, *truth)[0];
      row["bias_pp"] = b.bias_pp;
      row["relative_bias_pct"] = b.relative_pct ? json(*b.relative_pct) : json(nullptr);
      const auto& m = methods[k];
      auto fn = [&](const Dataset& d) { return estimate(m, d, fits, cal ? &*cal : nullptr).value; };
      try {
        row["rmse"] = bootstrap_rmse(target, fn, *truth, boot, root.derive_seed(k)).rmse;
      } catch (const Error& err) {
        fail(err.code(), "bootstrap for method " + m.str() + " failed: " + err.what());
      }
    }
    rows.push_back(row);
  }
  out["estimates"] = rows;

  std::string text;
  if (g.format == "csv") {
    text = labeled ? "method,value,bias_pp,relative_bias_pct,rmse\n" : "method,value\n";
    for (const auto& r : rows) {
      text += r["method"].get<std::string>() + ',' + io::format_double(r["value"].get<double>());
      if (labeled)
        text += ',' + io::format_double(r["bias_pp"].get<double>()) + ',' +
                (r["relative_bias_pct"].is_null() ? "" : io::format_double(r["relative_bias_pct"].get<double>())) +
                ',' + io::format_double(r["rmse"].get<double>());
      text += '\n';
    }
  } else {
    text = out.dump(2) + "\n";
  }
  io::write_file_atomic(require_out(g), text);
  for (const auto& e : estimates) log("estimate: " + e.method + " = " + io::format_double(e.value));
  return 0;
}

// ---------------------------------------------------------------------------
// shift

const std::set<std::string> kShiftKeys = {"kind", "feature", "shape", "rate", "p_first", "target_n", "seed"};

int cmd_shift(const Globals& g, const std::string& data_path, const std::string& schema_path) {
  if (g.config.empty()) fail(ErrorCode::InvalidConfig, "--config with a shift spec is required");
  const json cfg = load_config(g.config, kShiftKeys);
  const RngSeed seed = seed_of(g, cfg, 0);
  const auto kind = get<std::string>(cfg, "kind", "importance");
  const auto feature = get<std::string>(cfg, "feature", "");
  if (feature.empty()) fail(ErrorCode::InvalidConfig, "shift spec needs 'feature'");
  const auto target_n = get<long long>(cfg, "target_n", 0);
  if (target_n < 0) fail(ErrorCode::InvalidConfig, "target_n must be non-negative");
  ShiftSpec spec;
  spec.target_n = static_cast<std::size_t>(target_n);
  if (kind == "importance") {
    spec.kind = ImportanceShift{feature, parse_weight_shape(get<std::string>(cfg, "shape", "favor_low")),
                                get(cfg, "rate", 3.0)};
  } else if (kind == "mixture") {
    if (!cfg.contains("p_first")) fail(ErrorCode::InvalidConfig, "mixture shift needs 'p_first'");
    spec.kind = MixtureShift{feature, get(cfg, "p_first", 0.5)};
  } else {
    fail(ErrorCode::InvalidConfig, "unknown shift kind '" + kind + "'");
  }

  const auto table = load_table(data_path, schema_path);
  const auto result = resample_shift(table.data, spec, seed);
  const fs::path out = require_out(g);
  io::write_file_atomic(out, io::format_csv(result.data, table.sidecar));
  io::write_file_atomic(sibling(out, ".schema.json"), io::to_json(table.sidecar).dump(2) + "\n");
  json diag = {{"source_rows", table.data.size()},
               {"target_rows", result.data.size()},
               {"effective_sample_size", result.effective_sample_size}};
  if (result.feature_mean_before) {
    diag["feature_mean_before"] = *result.feature_mean_before;
    diag["feature_mean_after"] = *result.feature_mean_after;
  }
  if (table.data.all_labeled()) {
    auto mean = [](const Dataset& d) {
      const auto y = d.labels();
      return std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
    };
    diag["label_mean_before"] = mean(table.data);
    diag["label_mean_after"] = mean(result.data);
  }
  io::write_file_atomic(sibling(out, ".diagnostics.json"), diag.dump(2) + "\n");
  log("shift: effective sample size " + io::format_double(result.effective_sample_size));
  return 0;
}

// ---------------------------------------------------------------------------
// report

const std::set<std::string> kReportKeys = {"groups", "edges", "bins", "min_cell_rows"};

int cmd_report(const Globals& g, const std::string& data_path, const std::string& schema_path,
               const std::string& model_path, const std::string& calibrator_id, const std::string& groups_flag) {
  const json cfg = load_config(g.config, kReportKeys);
  const int bins = get(cfg, "bins", 10);
  if (bins < 1) fail(ErrorCode::InvalidConfig, "bins must be positive");
  const auto min_cell = get<std::size_t>(cfg, "min_cell_rows", 20);

  std::optional<io::ModelBundle> model;
  if (!model_path.empty()) model = io::model_from_json(io::parse_json(io::read_file(model_path), "model " + model_path));
  const auto table = load_table(data_path, schema_path, model ? &model->schema : nullptr);
  const Dataset& data = table.data;

  Calibrator calibrator = identity_calibrator();
  if (!calibrator_id.empty()) {
    if (!model) fail(ErrorCode::InvalidConfig, "--calibrator needs --model");
    auto it = std::find_if(model->calibrators.begin(), model->calibrators.end(),
                           [&](const Calibrator& c) { return c.id == calibrator_id; });
    if (it == model->calibrators.end()) fail(ErrorCode::InvalidConfig, "model has no calibrator '" + calibrator_id + "'");
    calibrator = *it;
  }

  auto names = split_list(groups_flag);
  if (names.empty()) names = get<std::vector<std::string>>(cfg, "groups", {});
  GroupFn groups = [](const FeatureVector&) { return std::string("all"); };
  if (!names.empty()) {
    const auto edges = get<std::map<std::string, std::vector<double>>>(cfg, "edges", {});
    try {
      groups = GroupSpec::by_features(data.schema(), names, edges);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::InvalidArgument) fail(ErrorCode::InvalidConfig, e.what());
      throw;
    }
  }

  const auto hist = score_histogram(data, bins);
  std::string text;
  if (g.format == "csv") {
    text = io::histogram_csv(hist);
  } else {
    json out = {{"rows", data.size()}, {"histogram", io::to_json(hist)}, {"calibrator", calibrator.id}};
    if (data.all_labeled()) out["calibration"] = io::to_json(multicalibration_report(data, calibrator, groups, bins, min_cell));
    text = out.dump(2) + "\n";
  }
  io::write_file_atomic(require_out(g), text);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prevalence estimation under covariate shift"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "RNG seed (overrides the config)");
  app.add_option("--config", g.config, "JSON config for the subcommand");
  app.add_option("--out", g.out, "output path");
  app.add_option("--format", g.format, "output format")->check(CLI::IsMember({"csv", "json"}));

  std::string data, schema, model, methods, calibration, calibrator, groups, population;
  std::optional<int> n;
  std::optional<double> p_x0;

  auto* sweep = app.add_subcommand("sweep", "run the two-stratum simulation sweep");
  sweep->add_option("--methods", methods, "comma-separated method ids");

  auto* calibrate = app.add_subcommand("calibrate", "fit calibrators and quantifier parameters on labeled data");
  calibrate->add_option("--data", data, "calibration CSV")->required();
  calibrate->add_option("--schema", schema, "sidecar schema (default <data>.schema.json)");

  auto* est = app.add_subcommand("estimate", "estimate prevalence on a target CSV");
  est->add_option("--data", data, "target CSV")->required();
  est->add_option("--schema", schema, "sidecar schema (default <data>.schema.json)");
  est->add_option("--model", model, "model JSON from calibrate")->required();
  est->add_option("--methods", methods, "comma-separated method ids");
  est->add_option("--calibration", calibration, "labeled calibration CSV, needed by ipw");

  auto* shift = app.add_subcommand("shift", "resample a CSV into a shifted population");
  shift->add_option("--data", data, "source CSV")->required();
  shift->add_option("--schema", schema, "sidecar schema (default <data>.schema.json)");

  auto* report = app.add_subcommand("report", "score histogram and calibration gaps");
  report->add_option("--data", data, "CSV")->required();
  report->add_option("--schema", schema, "sidecar schema (default <data>.schema.json)");
  report->add_option("--model", model, "model JSON");
  report->add_option("--calibrator", calibrator, "calibrator id within the model");
  report->add_option("--groups", groups, "comma-separated grouping features");

  auto* gen = app.add_subcommand("generate", "write a synthetic population as CSV plus sidecar");
  gen->add_option("--population", population, "simulation or age");
  gen->add_option("--n", n, "rows");
  gen->add_option("--p-x0", p_x0, "P(X=0) for the simulation population");

  for (auto* sub : {sweep, calibrate, est, shift, report, gen}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (sweep->parsed()) return cmd_sweep(g, methods);
    if (calibrate->parsed()) return cmd_calibrate(g, data, schema);
    if (est->parsed()) return cmd_estimate(g, data, schema, model, methods, calibration);
    if (shift->parsed()) return cmd_shift(g, data, schema);
    if (report->parsed()) return cmd_report(g, data, schema, model, calibrator, groups);
    if (gen->parsed()) return cmd_generate(g, population, n, p_x0);
  } catch (const Error& e) {
    log(e.what());
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    log(std::string("error: ") + e.what());
    return 3;
  }
  return 2;
}
