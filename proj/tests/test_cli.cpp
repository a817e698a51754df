#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "support.hpp"

using namespace prevalshift;
namespace fs = std::filesystem;

namespace {

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("prevalshift_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  int run(const std::string& args) {
    const std::string cmd =
        "cd '" + dir_.string() + "' && '" + PREVALSHIFT_CLI_PATH + "' " + args + " >stdout.txt 2>stderr.txt";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  std::string stderr_text() const { return io::read_file(dir_ / "stderr.txt"); }
  std::string read(const std::string& name) const { return io::read_file(dir_ / name); }
  io::json read_json(const std::string& name) const { return io::json::parse(read(name)); }
  void write(const std::string& name, const std::string& text) const { io::write_file_atomic(dir_ / name, text); }

  fs::path dir_;
};

double csv_label_mean(const std::string& text) {
  const auto t = io::table_schema_from_json(io::json::parse(
      R"({"columns": [{"name": "X", "type": "categorical"}, {"name": "label", "type": "label"},
                      {"name": "score", "type": "score"}]})"));
  const auto d = io::parse_csv(text, t);
  const auto y = d.labels();
  return std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
}

}  // namespace

TEST_F(Cli, SweepSmallConfigIsByteIdentical) {
  write("cfg.json", R"({"n": 500, "iterations": 1, "shift_grid": [0.1, 0.5, 0.9]})");
  ASSERT_EQ(run("sweep --config cfg.json --seed 7 --out a"), 0) << stderr_text();
  ASSERT_EQ(run("sweep --config cfg.json --seed 7 --out b"), 0) << stderr_text();
  EXPECT_EQ(read("a.csv"), read("b.csv"));
  EXPECT_EQ(read("a.json"), read("b.json"));
  const auto j = read_json("a.json");
  EXPECT_EQ(j["rows"].size(), 3U * 7U);
  EXPECT_EQ(j["metadata"]["seed"], 7);
  ASSERT_EQ(run("sweep --config cfg.json --seed 8 --out c"), 0);
  EXPECT_NE(read("a.csv"), read("c.csv"));
}

TEST_F(Cli, SweepFormatAndThreads) {
  write("cfg.json", R"({"n": 300, "iterations": 3, "shift_grid": [0.3], "methods": ["mean", "cal-mean:stratum"]})");
  ASSERT_EQ(run("sweep --config cfg.json --format csv --out one"), 0) << stderr_text();
  EXPECT_TRUE(fs::exists(dir_ / "one.csv"));
  EXPECT_FALSE(fs::exists(dir_ / "one.json"));
  ASSERT_EQ(run("sweep --config cfg.json --format csv --out threaded.csv"), 0);
  ASSERT_EQ(std::system(("cd '" + dir_.string() + "' && PREVALSHIFT_THREADS=3 '" + PREVALSHIFT_CLI_PATH +
                         "' sweep --config cfg.json --format csv --out many 2>/dev/null >/dev/null")
                            .c_str()),
            0);
  EXPECT_EQ(read("one.csv"), read("many.csv"));
  EXPECT_EQ(read("one.csv"), read("threaded.csv"));
}

TEST_F(Cli, DefaultSweepHasOneRowPerShiftAndMethod) {
  ASSERT_EQ(run("sweep --out default"), 0) << stderr_text();
  const auto csv = read("default.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 20 * 7);
  const auto j = read_json("default.json");
  EXPECT_EQ(j["metadata"]["iterations"], 50);
  EXPECT_EQ(j["metadata"]["n"], 10000);
  EXPECT_EQ(j["metadata"]["seed"], 20260101);
}

TEST_F(Cli, ConfigErrorsExitTwo) {
  EXPECT_EQ(run("sweep --methods mean,quantile-forest --out x"), 2);
  EXPECT_NE(stderr_text().find("quantile-forest"), std::string::npos);
  write("bad.json", R"({"n": 100, "iteratons": 2})");
  EXPECT_EQ(run("sweep --config bad.json --out x"), 2);
  EXPECT_NE(stderr_text().find("iteratons"), std::string::npos);
  write("typed.json", R"({"n": "many"})");
  EXPECT_EQ(run("sweep --config typed.json --out x"), 2);
  write("broken.json", "{");
  EXPECT_EQ(run("sweep --config broken.json --out x"), 2);
  EXPECT_EQ(run("sweep --config missing.json --out x"), 2);
  EXPECT_EQ(run("sweep --format xml --out x"), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("sweep"), 2);
  EXPECT_EQ(run("--help"), 0);
  EXPECT_FALSE(fs::exists(dir_ / "x.csv"));
}

TEST_F(Cli, CalibrateEstimateEndToEnd) {
  ASSERT_EQ(run("generate --p-x0 0.5 --n 10000 --seed 11 --out cal.csv"), 0) << stderr_text();
  ASSERT_EQ(run("generate --p-x0 0.9 --n 10000 --seed 12 --out target.csv"), 0);
  write("cal.json", R"({"calibrators": [{"type": "stratum", "groups": ["X"]}, {"type": "global"}]})");
  ASSERT_EQ(run("calibrate --data cal.csv --config cal.json --out model.json"), 0) << stderr_text();

  // Offsets are the per-stratum residuals of the exported calibration rows.
  const auto cal = io::read_csv(dir_ / "cal.csv", io::read_table_schema(dir_ / "cal.schema.json"));
  std::map<std::string, std::pair<double, double>> acc;
  for (const auto& r : cal.rows()) {
    auto& [n, s] = acc["X=" + cal.schema().features[0].categories[*r.features.categorical(0)]];
    n += 1;
    s += *r.label - *r.score;
  }
  const auto model = read_json("model.json");
  const auto& offsets = model["calibrators"][0]["params"]["offsets"];
  EXPECT_NEAR(offsets["X=0"].get<double>(), acc["X=0"].second / acc["X=0"].first, 1e-12);
  EXPECT_NEAR(offsets["X=1"].get<double>(), acc["X=1"].second / acc["X=1"].first, 1e-12);
  EXPECT_NEAR(offsets["X=0"].get<double>(), 0.015, 0.015);
  EXPECT_NEAR(offsets["X=1"].get<double>(), -0.085, 0.015);
  EXPECT_FALSE(model["schema_fingerprint"].get<std::string>().empty());

  ASSERT_EQ(run("estimate --data target.csv --model model.json --methods mean,cal-mean:stratum,cal-mean:global "
                "--seed 3 --out est.json"),
            0)
      << stderr_text();
  const auto est = read_json("est.json");
  const double truth = csv_label_mean(read("target.csv"));
  EXPECT_NEAR(est["truth"].get<double>(), truth, 1e-12);
  ASSERT_EQ(est["estimates"].size(), 3U);
  const auto& stratum = est["estimates"][1];
  EXPECT_EQ(stratum["method"], "cal-mean:stratum");
  EXPECT_NEAR(stratum["value"].get<double>(), truth, 0.01);
  EXPECT_TRUE(stratum.contains("bias_pp"));
  EXPECT_TRUE(stratum.contains("rmse"));
  EXPECT_GE(stratum["rmse"].get<double>(), std::abs(stratum["bias_pp"].get<double>()) / 100 - 1e-12);
  EXPECT_EQ(est["bootstrap_iterations"], 200);

  ASSERT_EQ(run("estimate --data target.csv --model model.json --methods mean,cal-mean:stratum --seed 3 "
                "--out again.json"),
            0);
  EXPECT_EQ(read_json("again.json")["estimates"][1], stratum);
}

TEST_F(Cli, UnlabeledTargetHasNoBiasColumns) {
  ASSERT_EQ(run("generate --p-x0 0.5 --n 2000 --seed 1 --out cal.csv"), 0);
  ASSERT_EQ(run("calibrate --data cal.csv --out model.json"), 0) << stderr_text();
  ASSERT_EQ(run("generate --p-x0 0.2 --n 500 --seed 2 --out t.csv"), 0);
  // blank out the label column
  std::string unlabeled;
  std::istringstream in(read("t.csv"));
  std::string line;
  std::getline(in, line);
  unlabeled += line + "\n";
  while (std::getline(in, line)) unlabeled += line.substr(0, line.find(',')) + ",," + line.substr(line.rfind(',') + 1) + "\n";
  write("u.csv", unlabeled);
  ASSERT_EQ(run("estimate --data u.csv --schema t.schema.json --model model.json --out est.json"), 0) << stderr_text();
  const auto est = read_json("est.json");
  EXPECT_FALSE(est["labeled"].get<bool>());
  EXPECT_FALSE(est.contains("truth"));
  std::vector<std::string> methods;
  for (const auto& e : est["estimates"]) {
    methods.push_back(e["method"]);
    EXPECT_FALSE(e.contains("bias_pp"));
    EXPECT_FALSE(e.contains("rmse"));
  }
  EXPECT_EQ(methods, (std::vector<std::string>{"mean", "cc", "rg", "pacc", "sld", "cal-mean:global",
                                               "cal-mean:isotonic"}));

  ASSERT_EQ(run("estimate --data u.csv --schema t.schema.json --model model.json --format csv --out est.csv"), 0);
  EXPECT_EQ(read("est.csv").substr(0, 13), "method,value\n");
}

TEST_F(Cli, EstimateErrors) {
  ASSERT_EQ(run("generate --p-x0 0.5 --n 2000 --seed 1 --out cal.csv"), 0);
  ASSERT_EQ(run("calibrate --data cal.csv --out model.json"), 0);
  ASSERT_EQ(run("generate --population age --n 1000 --seed 2 --out age.csv"), 0);

  EXPECT_EQ(run("estimate --data age.csv --model model.json --out e.json"), 2);
  const auto err = stderr_text();
  EXPECT_NE(err.find("fingerprint"), std::string::npos);
  EXPECT_NE(err.find("model X (categorical), data age (numeric)"), std::string::npos) << err;

  EXPECT_EQ(run("estimate --data cal.csv --model model.json --methods ipw --out e.json"), 2);
  EXPECT_NE(stderr_text().find("--calibration"), std::string::npos);
  EXPECT_EQ(run("estimate --data cal.csv --model model.json --methods cal-mean:boosted --out e.json"), 2);

  EXPECT_EQ(run("calibrate --data cal.csv --config none.json --out m.json"), 2);

  // Constant scores give TPR == FPR, which only fails once RG is applied.
  write("flat.csv", "X,label,score\n0,0,0.5\n0,1,0.5\n1,0,0.5\n1,1,0.5\n");
  write("flat.schema.json", read("cal.schema.json"));
  write("rg.json", R"({"calibrators": [], "methods": ["rg"]})");
  EXPECT_EQ(run("calibrate --data flat.csv --config rg.json --out m.json"), 0) << stderr_text();
  EXPECT_EQ(run("estimate --data cal.csv --model m.json --methods rg --out e.json"), 3);
  EXPECT_NE(stderr_text().find("method rg"), std::string::npos) << stderr_text();
}

TEST_F(Cli, CalibrateErrors) {
  ASSERT_EQ(run("generate --p-x0 0.5 --n 1000 --seed 1 --out cal.csv"), 0);
  write("empty.csv", "X,label,score\n");
  write("empty.schema.json", read("cal.schema.json"));
  EXPECT_EQ(run("calibrate --data empty.csv --out m.json"), 2);
  write("blank.csv", "");
  write("blank.schema.json", read("cal.schema.json"));
  EXPECT_EQ(run("calibrate --data blank.csv --out m.json"), 2);
  write("bad.csv", "X,label,score\n0,1,0.2\n1,3,0.9\n");
  write("bad.schema.json", read("cal.schema.json"));
  EXPECT_EQ(run("calibrate --data bad.csv --out m.json"), 2);
  EXPECT_NE(stderr_text().find("row 2, column 'label'"), std::string::npos) << stderr_text();
  write("groups.json", R"({"calibrators": [{"type": "stratum", "groups": ["region"]}]})");
  EXPECT_EQ(run("calibrate --data cal.csv --config groups.json --out m.json"), 2);
  write("key.json", R"({"calibrators": [{"type": "stratum", "group": ["X"]}]})");
  EXPECT_EQ(run("calibrate --data cal.csv --config key.json --out m.json"), 2);
  EXPECT_FALSE(fs::exists(dir_ / "m.json"));
}

TEST_F(Cli, ShiftAgePopulation) {
  ASSERT_EQ(run("generate --population age --n 20000 --seed 4 --out age.csv"), 0) << stderr_text();
  write("zero.json", R"({"feature": "age", "shape": "favor_low", "rate": 0})");
  ASSERT_EQ(run("shift --data age.csv --config zero.json --seed 5 --out zero.csv"), 0) << stderr_text();
  const auto zero = read_json("zero.diagnostics.json");
  EXPECT_NEAR(zero["label_mean_after"].get<double>(), zero["label_mean_before"].get<double>(), 0.02);
  EXPECT_NEAR(zero["effective_sample_size"].get<double>(), 20000.0, 1e-6);

  write("low.json", R"({"feature": "age", "shape": "favor_low", "rate": 3})");
  ASSERT_EQ(run("shift --data age.csv --config low.json --seed 5 --out low.csv"), 0);
  const auto low = read_json("low.diagnostics.json");
  EXPECT_LT(low["feature_mean_after"].get<double>(), low["feature_mean_before"].get<double>() - 5);
  EXPECT_LT(low["effective_sample_size"].get<double>(), 20000.0);
  // the shifted file re-parses with the source sidecar
  const auto shifted = io::read_csv(dir_ / "low.csv", io::read_table_schema(dir_ / "age.schema.json"));
  EXPECT_EQ(shifted.size(), 20000U);
  ASSERT_EQ(run("shift --data age.csv --config low.json --seed 5 --out low2.csv"), 0);
  EXPECT_EQ(read("low.csv"), read("low2.csv"));

  write("missing.json", R"({"feature": "income", "shape": "favor_low"})");
  EXPECT_EQ(run("shift --data age.csv --config missing.json --out m.csv"), 2);
  write("cat.json", R"({"feature": "education", "shape": "favor_low"})");
  EXPECT_EQ(run("shift --data age.csv --config cat.json --out m.csv"), 2);
  write("shape.json", R"({"feature": "age", "shape": "favor_middle"})");
  EXPECT_EQ(run("shift --data age.csv --config shape.json --out m.csv"), 2);
}

TEST_F(Cli, MixtureShiftOfSimulationData) {
  ASSERT_EQ(run("generate --p-x0 0.5 --n 20000 --seed 6 --out cal.csv"), 0);
  write("mix.json", R"({"kind": "mixture", "feature": "X", "p_first": 0.99})");
  ASSERT_EQ(run("shift --data cal.csv --config mix.json --seed 1 --out mix.csv"), 0) << stderr_text();
  const auto d = io::read_csv(dir_ / "mix.csv", io::read_table_schema(dir_ / "cal.schema.json"));
  std::size_t x0 = 0;
  for (const auto& r : d.rows()) x0 += *r.features.categorical(0) == 0;
  EXPECT_NEAR(static_cast<double>(x0) / d.size(), 0.99, 0.005);
}

TEST_F(Cli, ShiftedOutputFeedsEstimate) {
  ASSERT_EQ(run("generate --population age --n 20000 --seed 11 --out cal.csv"), 0);
  ASSERT_EQ(run("generate --population age --n 20000 --seed 12 --out pool.csv"), 0);
  write("high.json", R"({"feature": "age", "shape": "favor_high", "rate": 3})");
  ASSERT_EQ(run("shift --data pool.csv --config high.json --seed 13 --out target.csv"), 0) << stderr_text();
  EXPECT_EQ(read("target.schema.json"), read("pool.schema.json"));
  write("stratum.json", R"({"calibrators": [{"type": "stratum", "groups": ["age", "education"],
                                               "edges": {"age": [25, 55, 65]}}]})");
  ASSERT_EQ(run("calibrate --data cal.csv --config stratum.json --out model.json"), 0) << stderr_text();
  ASSERT_EQ(run("estimate --data target.csv --model model.json --methods cc,cal-mean:stratum --out est.json"), 0)
      << stderr_text();
  const auto est = read_json("est.json");
  const double truth = est["truth"].get<double>();
  int found = 0;
  for (const auto& e : est["estimates"]) {
    if (e["method"] != "cal-mean:stratum") continue;
    ++found;
    EXPECT_NEAR(e["value"].get<double>(), truth, 0.02);
  }
  EXPECT_EQ(found, 1);
}

TEST_F(Cli, ReportCalibrationGaps) {
  ASSERT_EQ(run("generate --p-x0 0.5 --n 5000 --seed 9 --out cal.csv"), 0);
  write("cal.json", R"({"calibrators": [{"type": "stratum", "groups": ["X"]}]})");
  ASSERT_EQ(run("calibrate --data cal.csv --config cal.json --out model.json"), 0);
  ASSERT_EQ(run("report --data cal.csv --groups X --out raw.json"), 0) << stderr_text();
  const auto raw = read_json("raw.json");
  EXPECT_NEAR(raw["calibration"]["per_group_gaps"]["X=0"].get<double>(), 0.015, 0.015);
  EXPECT_GT(raw["calibration"]["per_group_gaps"]["X=1"].get<double>(), 0.06);
  ASSERT_EQ(run("report --data cal.csv --model model.json --calibrator stratum --groups X --out fixed.json"), 0);
  const auto fixed = read_json("fixed.json");
  for (const auto& [g, gap] : fixed["calibration"]["per_group_gaps"].items()) EXPECT_LT(gap.get<double>(), 1e-9) << g;
  ASSERT_EQ(run("report --data cal.csv --format csv --out hist.csv"), 0);
  EXPECT_EQ(read("hist.csv").substr(0, 46), "bin_lo,bin_hi,total,positive,negative,unlabele");
  EXPECT_EQ(run("report --data cal.csv --model model.json --calibrator boosted --out r.json"), 2);
}
