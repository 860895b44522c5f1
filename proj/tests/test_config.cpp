#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "intertwine/intertwine.hpp"

using namespace intertwine;

namespace {

const char* kOu = R"(# comment
model.potential = x^2/2
model.region.lo = -8
model.region.hi = 8
model.region.points = 401
model.grid.points = 1601
twist.family = identity
tasks = bound; gap
)";

std::string expect_config_error(const std::string& text) {
  try {
    validate(parse_config(text));
  } catch (const ConfigError& e) {
    return e.what();
  }
  ADD_FAILURE() << "no ConfigError for:\n" << text;
  return {};
}

Json without_timing(Json j) {
  j.erase("timing");
  return j;
}

}  // namespace

TEST(Config, ParsesTypedFields) {
  auto p = parse_config(
      "model.manifold = euclidean\nmodel.dim = 2\nmodel.region.lo = -1, -2*pi\nmodel.region.hi = 1, 2\n"
      "verify.functions = sin(x); x*y\nsimulation.seed = 5\nverify.gronwall = yes\ntasks = bound\n");
  const auto& c = p.config;
  EXPECT_EQ(c.model.dim, 2);
  ASSERT_EQ(c.model.region_lo.size(), 2u);
  EXPECT_DOUBLE_EQ(c.model.region_lo[1], -2 * std::numbers::pi);
  EXPECT_EQ(c.verify.functions, (std::vector<std::string>{"sin(x)", "x*y"}));
  EXPECT_EQ(c.simulation.seed, std::optional<std::uint64_t>(5));
  EXPECT_TRUE(c.verify.gronwall);
  EXPECT_EQ(p.lines.at("model.dim"), 2);
}

TEST(Config, EchoRoundTrips) {
  auto c = parse_config(kOu).config;
  c.simulation.seed = 42;
  c.model.region_hi = {0.1 + 0.2};
  c.twist.params = {1.0 / 3.0, -1e-300};
  c.twist.param_names = {"a", "b"};
  const auto back = parse_config(to_text(c)).config;
  EXPECT_EQ(back, c);
  EXPECT_EQ(to_text(back), to_text(c));
}

TEST(Config, ShippedConfigsValidateAndRoundTrip) {
  int count = 0;
  for (const auto& entry : std::filesystem::directory_iterator(INTERTWINE_CONFIG_DIR)) {
    if (entry.path().extension() != ".conf") continue;
    ++count;
    const auto parsed = load_config(entry.path().string());
    EXPECT_NO_THROW(validate(parsed)) << entry.path();
    EXPECT_EQ(parse_config(to_text(parsed.config)).config, parsed.config) << entry.path();
  }
  EXPECT_GE(count, 5);
}

TEST(Config, DiagnosticsNameLineAndField) {
  EXPECT_NE(expect_config_error("tasks = bound\nmodel.potentail = x\n").find("line 2: unknown key 'model.potentail'"),
            std::string::npos);
  EXPECT_NE(expect_config_error("tasks = bound\n\nmodel.dim = two\n").find("line 3 (model.dim)"), std::string::npos);
  EXPECT_NE(expect_config_error("tasks = bound\nmodel.region.points\n").find("line 2: expected 'key = value'"),
            std::string::npos);
  EXPECT_NE(expect_config_error("tasks = bound\ntasks = gap\n").find("duplicate key"), std::string::npos);
  const auto bad_expr = expect_config_error("model.region.lo = -1\nmodel.region.hi = 1\nmodel.potential = x^^2\ntasks = bound\n");
  EXPECT_NE(bad_expr.find("line 3 (model.potential)"), std::string::npos);
  const auto bad_f = expect_config_error(
      "model.region.lo = -1\nmodel.region.hi = 1\nverify.functions = sin(x); cos(z)\ntasks = verify\n");
  EXPECT_NE(bad_f.find("verify.functions"), std::string::npos);
}

TEST(Config, EmptyTasksIsAValidationError) {
  EXPECT_NE(expect_config_error("model.region.lo = -1\nmodel.region.hi = 1\n").find("no tasks"), std::string::npos);
  EXPECT_NE(expect_config_error("model.region.lo = -1\nmodel.region.hi = 1\ntasks = bound; fly\n").find("unknown task"),
            std::string::npos);
}

TEST(Config, MonteCarloTasksNeedASeed) {
  const std::string base = "model.region.lo = -1\nmodel.region.hi = 1\n";
  EXPECT_NE(expect_config_error(base + "tasks = simulate\n").find("seed"), std::string::npos);
  EXPECT_NE(expect_config_error(base + "tasks = verify\nverify.gronwall = true\n").find("seed"), std::string::npos);
  EXPECT_NO_THROW(validate(parse_config(base + "tasks = verify\n")));
}

TEST(Config, RegionsDefaultToBoundedCharts) {
  EXPECT_NE(expect_config_error("tasks = bound\n").find("region"), std::string::npos);
  const auto s = validate(parse_config("model.manifold = circle\ntasks = gap\n"));
  EXPECT_TRUE(s.model.region.periodic[0]);
  EXPECT_DOUBLE_EQ(s.model.region.hi[0], 2 * std::numbers::pi);
}

TEST(Config, OptimizeNeedsFreeParameters) {
  EXPECT_NE(expect_config_error("model.region.lo = -1\nmodel.region.hi = 1\ntasks = optimize\n").find("free parameters"),
            std::string::npos);
}

TEST(Run, OuBoundAndGap) {
  const auto p = parse_config(kOu);
  const auto report = run(p.config, validate(p));
  const auto& t = report.json["tasks"];
  EXPECT_NEAR(t["bound"]["rho_B"].get<double>(), 1.0, 1e-12);
  EXPECT_NEAR(t["bound"]["rho"].get<double>(), 1.0, 1e-12);
  EXPECT_NEAR(t["gap"]["lambda1"].get<double>(), 1.0, 1e-3);
  EXPECT_NEAR(t["gap"]["gap_ratio"].get<double>(), 1.0, 1e-3);
  EXPECT_TRUE(t["gap"]["sound"].get<bool>());
  EXPECT_EQ(report.exit_code(), kExitClean);
  EXPECT_EQ(report.tables.count("bounds.csv"), 1u);
  EXPECT_EQ(report.tables.count("spectrum.csv"), 1u);
}

TEST(Run, DoubleWellOptimizeGapVerify) {
  const auto p = parse_config(
      "model.potential = (x^2 - 1)^2\nmodel.region.lo = -3\nmodel.region.hi = 3\nmodel.region.points = 241\n"
      "twist.family = exp-poly\ntwist.degree = 4\nverify.kinds = poincare\ntasks = optimize; gap; verify\n");
  const auto report = run(p.config, validate(p));
  const auto& t = report.json["tasks"];
  EXPECT_NEAR(t["optimize"]["identity_bound"].get<double>(), -4.0, 1e-9);
  const double bound = t["optimize"]["bound"].get<double>();
  EXPECT_GT(bound, 0.0);
  EXPECT_LE(bound, t["gap"]["lambda1"].get<double>() + kSoundnessSlack);
  ASSERT_EQ(t["verify"]["reports"].size(), 10u);
  for (const auto& r : t["verify"]["reports"]) EXPECT_EQ(r["status"], "pass") << r["name"];
  EXPECT_EQ(report.exit_code(), kExitClean);
}

TEST(Run, PlainShearIsAGateViolation) {
  const auto p = parse_config(
      "model.dim = 2\nmodel.potential = (x^2 + y^2)/2\nmodel.region.lo = -1, -1\nmodel.region.hi = 1, 1\n"
      "model.region.points = 11\ntwist.family = shear\ntwist.exprs = x\ntwist.mode = plain\n"
      "verify.functions = sin(x)\nverify.kinds = poincare\ntasks = bound; verify\n");
  const auto report = run(p.config, validate(p));
  EXPECT_EQ(report.json["tasks"]["bound"]["status"], "gate-violation");
  EXPECT_EQ(report.json["tasks"]["verify"]["reports"][0]["status"], "hypothesis-violation");
  EXPECT_FALSE(report.json["tasks"]["bound"].contains("rho_B"));
  EXPECT_EQ(report.exit_code(), kExitFailure);
}

TEST(Run, TaskErrorsDoNotAbortLaterTasks) {
  // The finite-difference stencil of intertwine leaves the interval chart.
  const auto p = parse_config(
      "model.manifold = interval\nmodel.chart.lo = 0\nmodel.chart.hi = 1\nmodel.potential = x\n"
      "model.region.points = 21\nsimulation.x0 = 0.995\nsimulation.n = 100\nsimulation.t = 0.01\n"
      "simulation.h = 0.001\nsimulation.seed = 1\nverify.functions = x\nverify.kinds = poincare\n"
      "tasks = intertwine; verify\n");
  const auto report = run(p.config, validate(p));
  EXPECT_EQ(report.json["tasks"]["intertwine"]["status"], "error");
  EXPECT_TRUE(report.json["tasks"].contains("verify"));
  EXPECT_EQ(report.json["tasks"]["verify"]["status"], "gate-violation");  // ρ = 0 for V = x
  EXPECT_EQ(report.task_errors, 1);
  EXPECT_EQ(report.exit_code(), kExitFailure);
}

TEST(Run, DeterministicApartFromTiming) {
  const std::string text =
      "model.potential = x^2/2\nmodel.region.lo = -5\nmodel.region.hi = 5\nmodel.region.points = 41\n"
      "simulation.t = 0.2\nsimulation.h = 0.01\nsimulation.n = 3000\nsimulation.seed = 9\nsimulation.paths = 3\n"
      "verify.functions = sin(x)\nverify.phi = x\nverify.phi_times = 0.1\nverify.phi_n = 200\n"
      "tasks = bound; simulate; intertwine; verify\n";
  const auto p = parse_config(text);
  const auto a = run(p.config, validate(p));
  setenv("INTERTWINE_WORKERS", "1", 1);
  const auto b = run(p.config, validate(p));
  unsetenv("INTERTWINE_WORKERS");
  EXPECT_EQ(without_timing(a.json).dump(), without_timing(b.json).dump());
  EXPECT_EQ(a.tables, b.tables);
  EXPECT_EQ(a.tables.count("paths.csv"), 1u);
  EXPECT_EQ(a.tables.count("phi.csv"), 1u);
  // The echoed configuration parses back to the same run.
  std::string echo;
  for (const auto& [k, v] : a.json["config"].items()) echo += k + " = " + v.get<std::string>() + "\n";
  EXPECT_EQ(parse_config(echo).config, p.config);
}

TEST(Run, WritesReportAndTables) {
  const auto dir = std::filesystem::temp_directory_path() / "intertwine_test_outputs";
  std::filesystem::remove_all(dir);
  const auto p = parse_config(kOu);
  write_outputs(run(p.config, validate(p)), dir);
  EXPECT_TRUE(std::filesystem::exists(dir / "report.json"));
  EXPECT_TRUE(std::filesystem::exists(dir / "spectrum.csv"));
  std::ifstream in(dir / "report.json");
  const auto j = Json::parse(in);
  EXPECT_EQ(j["summary"]["exit_code"], 0);
  std::filesystem::remove_all(dir);
}
