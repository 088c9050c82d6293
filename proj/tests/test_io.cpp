#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "pdemee/error.hpp"
#include "pdemee/io.hpp"
#include "support.hpp"

using namespace pdemee;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("pdemee_io_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::vector<std::string>> rows;
  for (std::string line; std::getline(in, line);) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

int run_cli(const fs::path& config, const std::string& extra = "") {
  const std::string cmd = std::string(PDEMEE_CLI) + " --config " + config.string() + " " + extra + " > " +
                          (config.parent_path() / "stdout.json").string() + " 2> " +
                          (config.parent_path() / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void write_json(const fs::path& p, const nlohmann::json& j) { std::ofstream(p) << j.dump(2); }

IngestResult ingest_text(const std::string& text, int delta, const IngestOptions& options = {}) {
  std::istringstream in(text);
  return ingest_csv(in, delta, options);
}

const char* kHeader = "id,decision_point,available,treatment,rand_prob,sub_outcome\n";

}  // namespace

TEST_CASE("ingesting the fixture panel") {
  const auto result = ingest_csv(testing::data_path("ingest_fixture.csv"), 2);
  const auto& data = result.dataset;
  REQUIRE(data.n() == 2);
  CHECK(data.id(0) == "a");
  CHECK(data.length(0) == 3);
  CHECK(data.moderator_names() == std::vector<std::string>{"intercept", "day"});
  CHECK(data.control_names() == std::vector<std::string>{"intercept"});
  CHECK(data.rand_prob(data.row(0, 2)) == 0.0);
  CHECK(data.moderators()(static_cast<Eigen::Index>(data.row(1, 2)), 1) == 2.0);
  CHECK(data.constant_rand_prob());
  CHECK(result.warnings.size() == 1);

  const auto o = build_proximal_outcomes(data);
  CHECK(o.y == std::vector<std::uint8_t>{1, 1, 0, 0, 1, 1});
  CHECK(o.first_hit == std::vector<int>{2, 1, 0, 0, 2, 1});
  const auto w = compute_weights(data, o, NumeratorPolicy::default_for(data), 1);
  const std::vector<double> pd{2.5, 1, 1, 0, 2.5, 1};
  const std::vector<double> m{1, 1, 0, 1, 1, 1};
  for (Eigen::Index r = 0; r < 6; ++r) {
    CHECK(w.w_pd[r] == doctest::Approx(pd[r]).epsilon(1e-15));
    CHECK(w.w_full[r] == doctest::Approx(pd[r]).epsilon(1e-15));
    CHECK(w.m[r] == doctest::Approx(m[r]).epsilon(1e-15));
  }
}

TEST_CASE("covariate transforms") {
  IngestOptions opt;
  opt.moderators = {{"mod_day", Transform::Center, ""}, {"", Transform::DayIndex, "t"}};
  opt.controls = {{"mod_day", Transform::Identity, "raw"}};
  const auto data = ingest_csv(testing::data_path("ingest_fixture.csv"), 2, opt).dataset;
  CHECK(data.moderator_names() == std::vector<std::string>{"intercept", "day", "t"});
  CHECK(data.control_names() == std::vector<std::string>{"intercept", "raw"});
  for (Eigen::Index r = 0; r < 6; ++r) {
    const double day = static_cast<double>(r % 3);
    CHECK(data.moderators()(r, 1) == doctest::Approx(day - 1.0));
    CHECK(data.moderators()(r, 2) == day);
    CHECK(data.controls()(r, 1) == day);
  }
}

TEST_CASE("ingest errors") {
  SUBCASE("missing follow-up names the individual") {
    const std::string text = std::string(kHeader) + "u7,1,1,1,0.5,0\nu7,2,,,,1\n";
    try {
      ingest_text(text, 2);
      FAIL("expected a structural error");
    } catch (const StructuralError& e) {
      CHECK(std::string(e.what()).find("u7") != std::string::npos);
    }
  }
  SUBCASE("non-binary treatment carries the line") {
    const std::string text = std::string(kHeader) + "u,1,1,2,0.5,0\nu,2,,,,0\n";
    try {
      ingest_text(text, 1);
      FAIL("expected a data error");
    } catch (const DataError& e) {
      CHECK(e.line() == 2);
    }
  }
  SUBCASE("gaps in decision points") {
    const std::string text = std::string(kHeader) + "u,1,1,0,0.5,0\nu,3,,,,0\n";
    CHECK_THROWS_AS(ingest_text(text, 1), DataError);
  }
  SUBCASE("missing required column") {
    CHECK_THROWS_AS(ingest_text("id,decision_point,available\nu,1,1\n", 1), DataError);
  }
  SUBCASE("positivity") {
    const std::string text = std::string(kHeader) + "u,1,1,1,1.0,0\nu,2,,,,0\n";
    CHECK_THROWS_AS(ingest_text(text, 1), DataError);
  }
  SUBCASE("extra follow-up rows are dropped with a warning") {
    const std::string text = std::string(kHeader) + "u,1,1,1,0.5,0\nu,2,,,,1\nu,3,,,,0\nv,1,1,0,0.5,1\nv,2,,,,0\n";
    const auto r = ingest_text(text, 1);
    CHECK(r.dataset.length(0) == 1);
    CHECK(r.dataset.sub_outcomes(0).size() == 2);
    CHECK(r.warnings.size() == 2);
  }
}

TEST_CASE("write and re-read round trip") {
  const auto data = testing::random_dataset(81, 7, 5, 3);
  const auto dir = scratch("roundtrip");
  write_csv(data, dir / "panel.csv");
  const auto back = ingest_csv(dir / "panel.csv", 3).dataset;
  CHECK(back.columns().lengths == data.columns().lengths);
  CHECK(back.columns().available == data.columns().available);
  CHECK(back.columns().treatment == data.columns().treatment);
  CHECK(back.columns().rand_prob == data.columns().rand_prob);
  CHECK(back.columns().sub_outcome == data.columns().sub_outcome);
  CHECK(back.moderators() == data.moderators());
  CHECK(back.controls() == data.controls());
  CHECK(back.moderator_names() == data.moderator_names());
  CHECK(back.control_names() == data.control_names());
}

TEST_CASE("number formatting reads back exactly") {
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int i = 0; i < 1000; ++i) {
    const double x = u(gen) * std::pow(10.0, static_cast<double>(i % 21) - 10.0);
    CHECK(std::stod(format_number(x)) == x);
  }
  CHECK(format_number(0.5) == "0.5");
  CHECK(format_number(std::nan("")) == "NA");
}

TEST_CASE("atomic writes leave no temporary files") {
  const auto dir = scratch("atomic");
  write_file_atomic(dir / "sub" / "x.txt", "one");
  write_file_atomic(dir / "sub" / "x.txt", "two");
  CHECK(slurp(dir / "sub" / "x.txt") == "two");
  int files = 0;
  for (const auto& entry : fs::directory_iterator(dir / "sub")) files += entry.is_regular_file();
  CHECK(files == 1);
}

TEST_CASE("run configuration parsing") {
  CHECK_THROWS_AS(parse_run_config({{"mode", "fit"}, {"bogus", 1}}), ConfigError);
  CHECK_THROWS_AS(parse_run_config({{"mode", "dance"}}), ConfigError);
  CHECK_THROWS_AS(
      parse_run_config({{"mode", "sweep"}, {"sweep", {{"axis", "delta"}, {"grid", nlohmann::json::array()}}}}).validate(),
      ConfigError);
  const auto c = parse_run_config({{"mode", "simulate"},
                                   {"reps", 10},
                                   {"generative", {{"n", 30}, {"delta", 2}}},
                                   {"estimators", {{{"kind", "gee-exch"}}}}});
  CHECK(c.mode == RunMode::Simulate);
  CHECK(c.generative.n == 30);
  CHECK(c.estimators.at(0).label == "gee-exch");
  CHECK(exit_code_for(ConfigError("x")) == 2);
  CHECK(exit_code_for(DataError("x")) == 3);
  CHECK(exit_code_for(StructuralError("x")) == 3);
  CHECK(exit_code_for(NumericError("x")) == 4);
  CHECK(exit_code_for(NonConvergence("x", Vector(), 1.0)) == 5);
}

TEST_CASE("fit mode writes the golden coefficients") {
  const auto dir = scratch("fit");
  write_json(dir / "run.json",
             {{"mode", "fit"},
              {"out_dir", dir.string()},
              {"input", {{"path", testing::data_path("fit_fixture.csv").string()}, {"delta", 2}}},
              {"estimators",
               {{{"label", "pd"}, {"kind", "pd-emee"}, {"moderators", {"intercept", "x"}}, {"numerator", "logistic"}},
                {{"label", "full"}, {"kind", "emee"}, {"moderators", {"intercept", "x"}}, {"numerator", "logistic"}}}}});
  REQUIRE(run_cli(dir / "run.json") == 0);
  std::ifstream in(testing::data_path("fit_fixture_golden.json"));
  const auto golden = nlohmann::json::parse(in);
  const auto rows = read_csv(dir / "coefficients.csv");
  REQUIRE(rows.size() == 5);
  CHECK(rows[0] == std::vector<std::string>{"estimator", "parameter", "estimate", "se", "ci_low", "ci_high", "p_value",
                                            "df", "degenerate"});
  for (int r = 1; r <= 4; ++r) {
    const auto& g = golden.at(r <= 2 ? "pd-emee" : "emee");
    const int j = (r - 1) % 2;
    CHECK(rows[r][0] == (r <= 2 ? "pd" : "full"));
    CHECK(rows[r][1] == (j == 0 ? "intercept" : "x"));
    CHECK(std::stod(rows[r][2]) == doctest::Approx(g.at("beta")[j].get<double>()).epsilon(1e-8));
    CHECK(std::stod(rows[r][3]) == doctest::Approx(g.at("se")[j].get<double>()).epsilon(1e-7));
    CHECK(std::stod(rows[r][6]) == doctest::Approx(g.at("p_value")[j].get<double>()).epsilon(1e-7));
    CHECK(rows[r][7] == "4");
  }
  const auto summary = nlohmann::json::parse(slurp(dir / "stdout.json"));
  CHECK(summary.at("fits").size() == 2);
}

TEST_CASE("simulate and sweep modes") {
  const auto dir = scratch("sim");
  write_json(dir / "run.json", {{"mode", "simulate"},
                                {"seed", 4},
                                {"out_dir", dir.string()},
                                {"reps", 4},
                                {"generative", {{"n", 25}, {"T", 15}, {"delta", 2}}},
                                {"estimators",
                                 {{{"kind", "pd-emee"}},
                                  {{"kind", "emee"}, {"moderators", {"intercept", "Z"}}},
                                  {{"kind", "gee-ind"}}}}});
  REQUIRE(run_cli(dir / "run.json") == 0);
  const auto rows = read_csv(dir / "report.csv");
  REQUIRE(rows.size() == 5);
  CHECK(rows[0] == std::vector<std::string>{"estimator", "parameter", "truth", "n", "reps_used", "failed", "Bias", "SD",
                                            "RMSE", "CP.unadj", "CP.adj", "mean_SE", "median_SE"});
  CHECK(rows[2][0] == "emee");
  CHECK(rows[2][1] == "intercept");
  CHECK(rows[2][2] == "0.10000000000000001");
  const auto report = nlohmann::json::parse(slurp(dir / "report.json"));
  CHECK(report.at("replications") == 4);
  const std::string first = slurp(dir / "report.csv");
  REQUIRE(run_cli(dir / "run.json", "--threads 1") == 0);
  CHECK(slurp(dir / "report.csv") == first);

  write_json(dir / "sweep.json", {{"mode", "sweep"},
                                  {"out_dir", dir.string()},
                                  {"reps", 4},
                                  {"generative", {{"n", 25}, {"T", 15}}},
                                  {"sweep", {{"axis", "delta"}, {"grid", {1, 2}}}}});
  REQUIRE(run_cli(dir / "sweep.json") == 0);
  const auto curve = read_csv(dir / "curve.csv");
  REQUIRE(curve.size() == 3);
  CHECK(curve[0] == std::vector<std::string>{"axis", "x", "rel_eff", "mc_se", "reps_used"});
  CHECK(std::stod(curve[1][2]) == doctest::Approx(1.0));
}

TEST_CASE("exit codes of the command line tool") {
  const auto dir = scratch("codes");
  write_json(dir / "empty.json", {{"mode", "sweep"}, {"sweep", {{"axis", "delta"}, {"grid", nlohmann::json::array()}}}});
  CHECK(run_cli(dir / "empty.json") == 2);
  CHECK(run_cli(dir / "missing.json") == 2);
  std::ofstream(dir / "bad.csv") << kHeader << "u,1,1,7,0.5,0\nu,2,,,,0\n";
  write_json(dir / "bad.json", {{"mode", "fit"},
                                {"out_dir", dir.string()},
                                {"input", {{"path", (dir / "bad.csv").string()}, {"delta", 1}}},
                                {"estimators", {{{"kind", "pd-emee"}}}}});
  CHECK(run_cli(dir / "bad.json") == 3);
  CHECK(run_cli(dir / "bad.json", "--mode nonsense") == 2);
  CHECK(run_cli(dir / "bad.json", "--no-such-flag") == 2);
}
