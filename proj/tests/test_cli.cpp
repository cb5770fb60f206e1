#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "caldpm/calibrate.hpp"
#include "caldpm/commands.hpp"
#include "caldpm/config.hpp"
#include "caldpm/errors.hpp"
#include "caldpm/evaluate.hpp"

using namespace caldpm;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "caldpm");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

json small_config() {
  return json::parse(R"({
    "seed": 3,
    "schedule": {"kind": "vp-linear"},
    "mixture": {"dim": 2, "components": [
      {"weight": 0.6, "mean": [-1.5, 0.5], "cov": [0.4, 0.15, 0.15, 0.3]},
      {"weight": 0.4, "mean": [1.5, -0.5], "cov": [0.25, -0.1, -0.1, 0.5]}]},
    "net": {"hidden": [16], "activation": "tanh"},
    "train": {"lr": 0.001, "batch": 64, "steps": 100},
    "calibration": {"source": "training-data", "n": 4000, "grid": "sampler"},
    "sampler": {"kind": "dpm-solver", "order": 2, "nfe": 10, "n": 300},
    "evaluate": {"n": 2000, "times": 5, "quadrature_points": 32, "martingale_outer": 4,
                 "martingale_inner": 2000, "concentration_n": 500, "concentration_steps": 10, "loglik_n": 10}
  })");
}

struct Workspace {
  fs::path dir;
  explicit Workspace(const std::string& name) : dir(fs::temp_directory_path() / ("caldpm_cli_" + name)) {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Workspace() { fs::remove_all(dir); }

  std::string config(const json& j, const std::string& name = "config.json") const {
    std::ofstream(dir / name) << j.dump(2);
    return (dir / name).string();
  }
  std::string out(const std::string& name) const { return (dir / name).string(); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("usage errors exit with 2") {
  Workspace w("usage");
  const auto cfg = w.config(small_config());
  CHECK(run({}).code == kExitUsage);
  CHECK(run({"--config", cfg}).code == kExitUsage);
  CHECK(run({"sample"}).code == kExitUsage);
  CHECK(run({"sample", "--config", cfg, "--frobnicate"}).code == kExitUsage);
  CHECK(run({"sample", "--config", cfg, "--workers", "0"}).code == kExitUsage);
  CHECK(run({"resample", "--config", cfg}).code == kExitUsage);

  const auto missing = run({"sample", "--config", w.out("nope.json")});
  CHECK(missing.code == kExitUsage);
  CHECK(missing.err.find("--config") != std::string::npos);

  std::ofstream(w.dir / "bad.json") << "{ not json";
  CHECK(run({"sample", "--config", w.out("bad.json")}).code == kExitUsage);

  CHECK(run({"--help"}).code == kExitOk);
}

TEST_CASE("config errors name the key") {
  Workspace w("keys");
  auto j = small_config();
  j["net"]["activation"] = "swishy";
  auto r = run({"train", "--config", w.config(j)});
  CHECK(r.code == kExitUsage);
  CHECK(r.err.find("net.activation") != std::string::npos);

  j = small_config();
  j["sampler"]["ordr"] = 2;
  r = run({"sample", "--config", w.config(j)});
  CHECK(r.code == kExitUsage);
  CHECK(r.err.find("sampler.ordr") != std::string::npos);

  j = small_config();
  j["mixture"]["components"][1]["cov"] = {1.0, 0.0, 0.0};
  r = run({"sample", "--config", w.config(j)});
  CHECK(r.code == kExitUsage);
  CHECK(r.err.find("mixture.components[1].cov") != std::string::npos);

  j = small_config();
  j["sampler"]["order"] = 3;
  j["sampler"]["nfe"] = 2;
  CHECK(run({"sample", "--config", w.config(j)}).code == kExitUsage);

  j = small_config();
  j["calibration"]["source"] = "test-data";
  r = run({"calibrate", "--config", w.config(j)});
  CHECK(r.err.find("calibration.source") != std::string::npos);

  // Parsing is complete before any work: nothing is written.
  j = small_config();
  j["evaluate"]["bogus"] = 1;
  CHECK(run({"train", "--config", w.config(j), "--out", w.out("never")}).code == kExitUsage);
  CHECK_FALSE(fs::exists(w.out("never")));
}

TEST_CASE("train is reproducible") {
  Workspace w("train");
  const auto cfg = w.config(small_config());
  REQUIRE(run({"train", "--config", cfg, "--out", w.out("a")}).code == kExitOk);
  REQUIRE(run({"train", "--config", cfg, "--out", w.out("b")}).code == kExitOk);
  REQUIRE(run({"train", "--config", cfg, "--out", w.out("c"), "--seed", "4"}).code == kExitOk);
  const auto a = slurp(fs::path(w.out("a")) / "checkpoint.bin");
  CHECK(a == slurp(fs::path(w.out("b")) / "checkpoint.bin"));
  CHECK(a != slurp(fs::path(w.out("c")) / "checkpoint.bin"));
  const auto loss = slurp(fs::path(w.out("a")) / "loss.csv");
  CHECK(loss.rfind("# config_hash ", 0) == 0);
  CHECK(loss == slurp(fs::path(w.out("b")) / "loss.csv"));

  // The checkpoint drives a net model downstream.
  const auto ck = (fs::path(w.out("a")) / "checkpoint.bin").string();
  CHECK(run({"sample", "--config", cfg, "--out", w.out("a"), "--checkpoint", ck}).code == kExitOk);
  CHECK(run({"sample", "--config", cfg, "--checkpoint", w.out("missing.bin")}).code != kExitOk);
}

TEST_CASE("calibrate") {
  Workspace w("calibrate");
  SUBCASE("oracle gives a near-zero table") {
    const auto cfg = w.config(small_config());
    REQUIRE(run({"calibrate", "--config", cfg, "--out", w.out("o")}).code == kExitOk);
    const auto table = load_table(fs::path(w.out("o")) / "table.csv");
    CHECK(table.provenance.find("training-data") != std::string::npos);
    CHECK(table.entries.size() > 1);
    for (const auto& e : table.entries) CHECK(e.value.norm() <= 4 * e.se);
  }
  SUBCASE("bias is recovered") {
    auto j = small_config();
    j["model"] = {{"kind", "oracle"}, {"parametrization", "noise"}, {"bias", {0.3, -0.2}}};
    REQUIRE(run({"calibrate", "--config", w.config(j), "--out", w.out("b")}).code == kExitOk);
    for (const auto& e : load_table(fs::path(w.out("b")) / "table.csv").entries)
      CHECK((e.value - Eigen::Vector2d(0.3, -0.2)).norm() <= 4 * e.se);
  }
  SUBCASE("generated data runs the sampler first") {
    auto j = small_config();
    j["calibration"]["source"] = "generated-data";
    j["calibration"]["n"] = 500;
    REQUIRE(run({"calibrate", "--config", w.config(j), "--out", w.out("g")}).code == kExitOk);
    const auto table = load_table(fs::path(w.out("g")) / "table.csv");
    CHECK(table.provenance.find("generated-data") != std::string::npos);
    for (const auto& e : table.entries) CHECK(e.se > 0);
  }
  SUBCASE("partial data limits the training set") {
    auto j = small_config();
    j["calibration"]["partial"] = 100;
    j["calibration"]["grid"] = "quadrature";
    REQUIRE(run({"calibrate", "--config", w.config(j), "--out", w.out("p")}).code == kExitOk);
    const auto table = load_table(fs::path(w.out("p")) / "table.csv");
    CHECK(table.provenance.find("n=100") != std::string::npos);
    CHECK(table.times().front() == doctest::Approx(table.schedule.t_min()));
  }
}

TEST_CASE("sample with and without tables") {
  Workspace w("sample");
  const auto j = small_config();
  const auto cfg = w.config(j);
  const RunConfig parsed = parse_config(j);
  save_table(zero_table(parsed.schedule, Parametrization::noise, 2, {parsed.schedule.t_min(), 1.0}),
             w.dir / "zero.csv");

  REQUIRE(run({"sample", "--config", cfg, "--out", w.out("base")}).code == kExitOk);
  REQUIRE(run({"sample", "--config", cfg, "--out", w.out("zero"), "--table", w.out("zero.csv")}).code == kExitOk);
  CHECK(slurp(fs::path(w.out("base")) / "samples.csv") == slurp(fs::path(w.out("zero")) / "samples.csv"));

  const auto manifest = json::parse(slurp(fs::path(w.out("zero")) / "manifest.json"));
  CHECK(manifest["nfe"] == 10);
  CHECK(manifest["evaluations"] == 10);
  CHECK(manifest["config_hash"] == parsed.hash());
  CHECK_FALSE(manifest["table_hash"].get<std::string>().empty());
  CHECK(read_samples_csv(fs::path(w.out("base")) / "samples.csv").cols() == 300);

  auto odd = j;
  odd["sampler"]["order"] = 3;
  odd["sampler"]["nfe"] = 10;
  REQUIRE(run({"sample", "--config", w.config(odd, "odd.json"), "--out", w.out("odd")}).code == kExitOk);
  const auto m3 = json::parse(slurp(fs::path(w.out("odd")) / "manifest.json"));
  CHECK(m3["nfe"] == 10);
  CHECK(m3["evaluations"] == 9);

  const auto missing = run({"sample", "--config", cfg, "--table", w.out("absent.csv")});
  CHECK(missing.code == kExitUsage);
  CHECK(missing.err.find("--table") != std::string::npos);
  CHECK(missing.err.find("absent.csv") != std::string::npos);
}

TEST_CASE("tables from another schedule are refused") {
  Workspace w("mismatch");
  const auto cfg = w.config(small_config());
  save_table(zero_table(NoiseSchedule::ve_geometric(), Parametrization::noise, 2, {1e-5, 1.0}), w.dir / "ve.csv");
  for (const char* cmd : {"verify", "sample", "evaluate"}) {
    const auto r = run({cmd, "--config", cfg, "--out", w.out("x"), "--table", w.out("ve.csv")});
    CAPTURE(cmd);
    CHECK(r.code == kExitUsage);
    CHECK(r.err.find("schedule") != std::string::npos);
  }
}

TEST_CASE("outputs do not depend on the worker count") {
  Workspace w("workers");
  auto j = small_config();
  j["sampler"]["n"] = 5000;  // more than one chunk
  j["calibration"]["n"] = 5000;
  const auto cfg = w.config(j);
  for (const char* workers : {"1", "3"}) {
    const std::string out = w.out(std::string("w") + workers);
    REQUIRE(run({"sample", "--config", cfg, "--out", out, "--workers", workers}).code == kExitOk);
    REQUIRE(run({"calibrate", "--config", cfg, "--out", out, "--workers", workers}).code == kExitOk);
  }
  CHECK(slurp(fs::path(w.out("w1")) / "samples.csv") == slurp(fs::path(w.out("w3")) / "samples.csv"));
  CHECK(slurp(fs::path(w.out("w1")) / "table.csv") == slurp(fs::path(w.out("w3")) / "table.csv"));
}

TEST_CASE("verify and evaluate") {
  Workspace w("verify");
  auto j = small_config();
  j["model"] = {{"kind", "oracle"}, {"parametrization", "noise"}, {"bias", {0.3, -0.2}}};
  const auto cfg = w.config(j);
  const auto ok = run({"verify", "--config", cfg, "--out", w.out("v")});
  CHECK(ok.code == kExitOk);
  CHECK(ok.out.find("PASS gap_identity_max_rel") != std::string::npos);
  CHECK(ok.out.find("FAIL") == std::string::npos);
  CHECK(fs::exists(fs::path(w.out("v")) / "verify" / "report.jsonl"));

  // Two chains are too few for the empirical Doob check; with this seed it breaks.
  auto thin = j;
  thin["evaluate"]["concentration_n"] = 2;
  const auto bad = run({"verify", "--config", w.config(thin, "thin.json"), "--out", w.out("v2"), "--seed", "1"});
  CHECK(bad.code == kExitCheckFailed);
  CHECK(bad.out.find("FAIL doob") != std::string::npos);

  REQUIRE(run({"calibrate", "--config", cfg, "--out", w.out("e")}).code == kExitOk);
  const auto table = (fs::path(w.out("e")) / "table.csv").string();
  const auto ev = run({"evaluate", "--config", cfg, "--out", w.out("e"), "--table", table});
  CHECK(ev.code == kExitOk);
  const auto report = slurp(fs::path(w.out("e")) / "evaluate" / "report.jsonl");
  CHECK(report.find("likelihood_gain") != std::string::npos);
  CHECK(report.find("frechet") != std::string::npos);
}

#ifdef CALDPM_CLI_PATH
TEST_CASE("the binary maps errors to exit codes") {
  Workspace w("binary");
  const auto cfg = w.config(small_config());
  const std::string bin = CALDPM_CLI_PATH;
  auto status = [&](const std::string& args) {
    const int s = std::system((bin + " " + args + " >/dev/null 2>&1").c_str());
    return WEXITSTATUS(s);
  };
  CHECK(status("") == kExitUsage);
  CHECK(status("sample --config " + cfg + " --out " + w.out("s")) == kExitOk);
  CHECK(status("sample --config " + w.out("none.json")) == kExitUsage);
}
#endif
