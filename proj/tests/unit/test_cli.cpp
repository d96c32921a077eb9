#include <fstream>
#include <json.hpp>

#include "cli.hpp"
#include "speedmode/util.hpp"
#include "unit/support.hpp"

using namespace speedmode;
using speedmode::testing::TempDir;
using speedmode::testing::data_path;
using nlohmann::json;

namespace {

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "speedmode");
  return cli::run(args);
}

json read_json(const std::string& p) { return json::parse(read_file(p)); }

std::size_t count_lines(const std::string& p) {
  const auto s = read_file(p);
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

/// synth -> windows into dir/<tag>_windows.
std::string make_windows(const TempDir& dir, const std::string& tag, int trips, int seed,
                         const std::string& scale = "1.0") {
  REQUIRE(run({"synth", "--n-trips", std::to_string(trips), "--seed", std::to_string(seed), "--speed-scale", scale,
               "--output", dir.str(tag + "_synth")}) == cli::kExitOk);
  REQUIRE(run({"windows", "--input", dir.str(tag + "_synth/speeds.csv"), "--T", "40", "--stride", "20",
               "--output", dir.str(tag + "_windows")}) == cli::kExitOk);
  return dir.str(tag + "_windows/windows.csv");
}

std::vector<std::string> tiny_train(const std::string& windows, const std::string& out) {
  return {"train",   "--windows", windows, "--d-model", "16",  "--layers", "1",  "--heads", "4",
          "--kv-heads", "2",     "--lr",    "3e-3",   "--batch-size", "32", "--epochs", "12", "--dropout",
          "0",       "--output",  out};
}

}  // namespace

TEST_CASE("exit codes") {
  TempDir dir("cli_exit");
  CHECK(run({"--help"}) == cli::kExitOk);
  CHECK(run({}) == cli::kExitUsage);
  CHECK(run({"no-such-command"}) == cli::kExitUsage);
  CHECK(run({"synth"}) == cli::kExitUsage);  // --output missing
  CHECK(run({"windows", "--input", dir.str("absent.csv"), "--output", dir.str("w")}) == cli::kExitUsage);
  CHECK(run({"windows", "--input", data_path("trips.csv").string(), "--T", "10", "--stride", "20", "--output",
             dir.str("w")}) == cli::kExitUsage);
  CHECK(run({"preprocess", "--input", data_path("trips_missing_column.csv").string(), "--output",
             dir.str("p")}) == cli::kExitData);
  // A point file is not a speed file.
  CHECK(run({"windows", "--input", data_path("trips.csv").string(), "--output", dir.str("w2")}) ==
        cli::kExitData);
  CHECK(run({"privacy-entropy", "--area-km2", "-5", "--output", dir.str("pe")}) == cli::kExitUsage);
}

TEST_CASE("preprocess on the Geolife fixture") {
  TempDir dir("cli_geolife");
  REQUIRE(run({"preprocess", "--input", data_path("geolife").string(), "--format", "geolife", "--output",
               dir.str("out")}) == cli::kExitOk);
  CHECK(count_lines(dir.str("out/speeds.csv")) == 1 + 5);
  const auto audit = read_json(dir.str("out/audit.json"));
  CHECK(audit["qc_drops"] == 1);
  CHECK(audit["label_drops"] == 1);
  CHECK(audit["label_drops_by_label"]["airplane"] == 1);
  CHECK(audit["rejected_rows"] == 1);
  const auto m = read_json(dir.str("out/manifest.json"));
  CHECK(m["command"] == "preprocess");
  CHECK(m["outputs"] == json::array({"speeds.csv", "audit.json"}));
}

TEST_CASE("windows on a 260-sample trip") {
  TempDir dir("cli_windows");
  std::string csv = "trip_id,mode,timestamp,interval_s,speed_kmh\n";
  for (int i = 1; i <= 260; ++i) csv += "t1,Car," + std::to_string(i) + ",1,40\n";
  write_file_atomic(dir.path() / "speeds.csv", csv);
  REQUIRE(run({"windows", "--input", dir.str("speeds.csv"), "--output", dir.str("out")}) == cli::kExitOk);
  CHECK(count_lines(dir.str("out/windows.csv")) == 1 + 3);
  REQUIRE(run({"windows", "--input", dir.str("speeds.csv"), "--T", "20", "--stride", "10", "--binary", "--output",
               dir.str("bin")}) == cli::kExitOk);
  CHECK(std::filesystem::exists(dir.path() / "bin/windows.spmt"));
  CHECK(read_json(dir.str("bin/manifest.json"))["config"]["T"] == 20);
}

TEST_CASE("privacy entropy command") {
  TempDir dir("cli_privacy");
  REQUIRE(run({"privacy-entropy", "--output", dir.str("out")}) == cli::kExitOk);
  const auto j = read_json(dir.str("out/privacy.json"));
  CHECK(j["speed_bits"].get<double>() == doctest::Approx(6.919).epsilon(1e-4));
  CHECK(j["spatial_states"].get<double>() == 1e7);
  CHECK(read_json(dir.str("out/manifest.json"))["seed"] == 42);
}

TEST_CASE("end-to-end pipeline") {
  TempDir dir("cli_e2e");
  const auto windows = make_windows(dir, "src", 150, 1);
  const auto heldout = make_windows(dir, "val", 60, 2);

  REQUIRE(run(tiny_train(windows, dir.str("model"))) == cli::kExitOk);
  const auto model = dir.str("model/model.spmt");
  for (const char* f : {"model.spmt", "history.csv", "history.json", "split.json", "test_metrics.json",
                        "manifest.json"})
    CHECK(std::filesystem::exists(dir.path() / "model" / f));

  REQUIRE(run({"predict", "--checkpoint", model, "--windows", heldout, "--output", dir.str("pred")}) ==
          cli::kExitOk);
  const auto preds = read_file(dir.str("pred/predictions.csv"));
  CHECK(preds.starts_with("trip_id,window_index,pred,proba_bike,proba_bus,proba_car,proba_train,proba_walk\n"));

  REQUIRE(run({"evaluate", "--predictions", dir.str("pred/predictions.csv"), "--windows", heldout, "--output",
               dir.str("eval")}) == cli::kExitOk);
  const auto metrics = read_json(dir.str("eval/metrics.json"));
  CHECK(metrics["accuracy"].get<double>() >= 0.95);
  CHECK(std::filesystem::exists(dir.path() / "eval/per_class.csv"));
  CHECK(std::filesystem::exists(dir.path() / "eval/confusion.csv"));
  REQUIRE(run({"evaluate", "--predictions", dir.str("pred/predictions.csv"), "--windows", heldout, "--level",
               "trip", "--output", dir.str("eval_trip")}) == cli::kExitOk);
  CHECK(read_json(dir.str("eval_trip/metrics.json"))["total"] == 60);

  SUBCASE("identical seeds reproduce the checkpoint and reports byte for byte") {
    REQUIRE(run(tiny_train(windows, dir.str("again"))) == cli::kExitOk);
    CHECK(read_file(dir.str("again/model.spmt")) == read_file(model));
    CHECK(read_file(dir.str("again/history.csv")) == read_file(dir.str("model/history.csv")));
    REQUIRE(run({"predict", "--checkpoint", dir.str("again/model.spmt"), "--windows", heldout, "--output",
                 dir.str("pred2")}) == cli::kExitOk);
    CHECK(read_file(dir.str("pred2/predictions.csv")) == preds);
  }
  SUBCASE("fine-tuning records the policy string as given") {
    const auto target = make_windows(dir, "tgt", 40, 3, "0.7");
    REQUIRE(run({"finetune", "--checkpoint", model, "--windows", target, "--freeze", "reinit-last", "--epochs",
                 "2", "--output", dir.str("ft")}) == cli::kExitOk);
    const auto m = read_json(dir.str("ft/manifest.json"));
    CHECK(m["config"]["freeze"] == "reinit-last");
    CHECK(m["config"]["policy"] == "reinit_last_block");
    const auto tm = read_json(dir.str("ft/test_metrics.json"));
    CHECK(tm.contains("zero_shot_accuracy"));
    CHECK(run({"finetune", "--checkpoint", model, "--windows", target, "--freeze", "everything", "--output",
               dir.str("ft2")}) == cli::kExitUsage);
  }
  SUBCASE("baseline, report and cross-validation") {
    REQUIRE(run({"baseline", "--windows", heldout, "--output", dir.str("rules")}) == cli::kExitOk);
    CHECK(read_json(dir.str("rules/thresholds.json"))["walk_p95_max"] == 3.0);
    REQUIRE(run({"baseline", "--windows", windows, "--calibrate", "--output", dir.str("cal")}) == cli::kExitOk);
    CHECK(read_json(dir.str("cal/metrics.json")).contains("calibration"));
    REQUIRE(run({"report", "--metrics", dir.str("eval/metrics.json"), "--metrics", dir.str("rules/metrics.json"),
                 "--history", dir.str("model/history.json"), "--output", dir.str("report")}) == cli::kExitOk);
    CHECK(read_file(dir.str("report/report.md")).find("Accuracy: ") != std::string::npos);
    REQUIRE(run({"crossval", "--windows", heldout, "--k", "3", "--d-model", "16", "--layers", "1", "--heads", "4",
                 "--kv-heads", "2", "--epochs", "1", "--output", dir.str("cv")}) == cli::kExitOk);
    CHECK(read_json(dir.str("cv/crossval.json"))["accuracy"]["values"].size() == 3);
  }
  SUBCASE("config file values apply unless a flag overrides them") {
    write_file_atomic(dir.path() / "cfg.json", R"({"lr": 0.5, "max_epochs": 1, "dropout": 0.0})");
    auto args = tiny_train(heldout, dir.str("cfg_a"));
    args.insert(args.end(), {"--config", dir.str("cfg.json")});
    REQUIRE(run(args) == cli::kExitOk);  // --lr and --epochs given explicitly
    auto m = read_json(dir.str("cfg_a/manifest.json"));
    CHECK(m["config"]["train"]["lr"] == 3e-3);
    CHECK(m["config"]["train"]["max_epochs"] == 12);
    REQUIRE(run({"train", "--windows", heldout, "--d-model", "16", "--layers", "1", "--heads", "4", "--kv-heads",
                 "2", "--config", dir.str("cfg.json"), "--output", dir.str("cfg_b")}) == cli::kExitOk);
    m = read_json(dir.str("cfg_b/manifest.json"));
    CHECK(m["config"]["train"]["lr"] == 0.5);
    CHECK(m["config"]["train"]["max_epochs"] == 1);
  }
}

TEST_CASE("profile command") {
  TempDir dir("cli_profile");
  REQUIRE(run({"profile", "--input", data_path("trips.csv").string(), "--output", dir.str("out")}) ==
          cli::kExitOk);
  const auto j = read_json(dir.str("out/profile.json"));
  CHECK(j["trips"] == 2);
}
