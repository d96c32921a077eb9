#include "cli.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "speedmode/container.hpp"
#include "speedmode/dataset.hpp"
#include "speedmode/dataset_io.hpp"
#include "speedmode/error.hpp"
#include "speedmode/metrics.hpp"
#include "speedmode/model.hpp"
#include "speedmode/rules.hpp"
#include "speedmode/synth.hpp"
#include "speedmode/trainer.hpp"
#include "speedmode/util.hpp"

namespace speedmode::cli {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
  std::string output;
  std::uint64_t seed = 42;
  int threads = 1;
  std::string config;
};

void add_common(CLI::App* cmd, Common& c, bool needs_output = true) {
  auto* o = cmd->add_option("--output,-o", c.output, "Output directory");
  if (needs_output) o->required();
  cmd->add_option("--seed", c.seed, "Random seed")->capture_default_str();
  cmd->add_option("--threads", c.threads, "Worker cap (computation is single-threaded)")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--config", c.config, "JSON config file; explicit flags take precedence")
      ->check(CLI::ExistingFile);
}

json load_config(const Common& c) {
  if (c.config.empty()) return json::object();
  try {
    return json::parse(read_file(c.config));
  } catch (const json::parse_error& e) {
    throw FormatError(c.config + ": " + e.what());
  }
}

/// Collects outputs and writes manifest.json last.
class Run {
 public:
  Run(std::string command, const Common& common)
      : command_(std::move(command)), common_(common), start_(std::chrono::steady_clock::now()) {
    fs::create_directories(common_.output);
  }

  fs::path path(const std::string& name) const { return fs::path(common_.output) / name; }

  void write(const std::string& name, std::string_view bytes) {
    write_file_atomic(path(name), bytes);
    outputs_.push_back(name);
  }
  void write_json(const std::string& name, const json& j) { write(name, j.dump(2) + "\n"); }

  void input(const std::string& role, const std::string& p) { inputs_[role] = p; }
  json& config() { return config_; }

  void finish() {
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    json m{{"command", command_},
           {"config", config_},
           {"inputs", inputs_},
           {"outputs", outputs_},
           {"output_dir", common_.output},
           {"seed", common_.seed},
           {"threads", common_.threads},
           {"version", SPEEDMODE_VERSION},
           {"duration_seconds", seconds}};
    write_file_atomic(path("manifest.json"), m.dump(2) + "\n");
  }

 private:
  std::string command_;
  Common common_;
  std::chrono::steady_clock::time_point start_;
  json config_ = json::object();
  std::map<std::string, std::string> inputs_;
  std::vector<std::string> outputs_;
};

template <typename T>
T pick(const CLI::App* cmd, const char* flag, const T& flag_value, const json& cfg,
       const char* key) {
  if (cmd->count(flag) > 0 || !cfg.contains(key)) return flag_value;
  return cfg.at(key).get<T>();
}

// ---- preprocess ----------------------------------------------------------

struct PreprocessArgs {
  Common common;
  std::string input;
  std::string format = "csv";
  std::string thresholds;
};

geo::ThresholdTable read_threshold_table(const std::string& file) {
  json j;
  try {
    j = json::parse(read_file(file));
  } catch (const json::parse_error& e) {
    throw FormatError(file + ": " + e.what());
  }
  auto table = geo::ThresholdTable::defaults();
  std::array<geo::ThresholdTable::Bounds, kNumModes> bounds{};
  for (auto m : kAllModes) {
    bounds[static_cast<std::size_t>(ordinal(m))] = table.bounds(m);
    const std::string name(mode_name(m));
    for (const auto& key : {name, std::string(1, static_cast<char>(std::tolower(name[0]))) + name.substr(1)}) {
      if (!j.contains(key)) continue;
      const auto& e = j.at(key);
      bounds[static_cast<std::size_t>(ordinal(m))] = {e.at("min").get<double>(), e.at("max").get<double>()};
    }
  }
  try {
    return geo::ThresholdTable(bounds);
  } catch (const std::invalid_argument& e) {
    throw FormatError(file + ": " + e.what());
  }
}

json audit_json(const data::PreprocessAudit& a, std::size_t rejected_rows) {
  return {{"trips_in", a.trips_in},
          {"trips_out", a.trips_out},
          {"label_drops", a.label_drops},
          {"label_drops_by_label", a.label_drops_by_label},
          {"qc_drops", a.qc_drops},
          {"threshold_sample_drops", a.threshold_sample_drops},
          {"zero_dt_drops", a.zero_dt_drops},
          {"rejected_rows", rejected_rows}};
}

int cmd_preprocess(const PreprocessArgs& a) {
  Run run("preprocess", a.common);
  run.input("input", a.input);
  data::ParseReport parsed;
  if (a.format == "geolife") parsed = data::parse_geolife(a.input);
  else parsed = data::parse_trip_csv(a.input);
  for (const auto& w : parsed.warnings) spdlog::warn("{}", w);
  geo::ThresholdTable table = geo::ThresholdTable::defaults();
  if (!a.thresholds.empty()) {
    table = read_threshold_table(a.thresholds);
    run.input("thresholds", a.thresholds);
  }
  const auto result = data::preprocess(parsed.trips, table);
  run.config() = {{"format", a.format}};
  run.write("speeds.csv", data::format_speed_csv(result.trips));
  run.write_json("audit.json", audit_json(result.audit, parsed.rejected_rows));
  spdlog::info("preprocess: {} of {} trips kept ({} label drops, {} QC drops, {} samples out of range)",
               result.audit.trips_out, result.audit.trips_in, result.audit.label_drops,
               result.audit.qc_drops, result.audit.threshold_sample_drops);
  run.finish();
  return kExitOk;
}

// ---- windows -------------------------------------------------------------

struct WindowArgs {
  Common common;
  std::string input;
  std::size_t T = data::kDefaultWindow;
  std::size_t stride = data::kDefaultStride;
  std::size_t min_tail = data::kDefaultMinTail;
  bool binary = false;
};

int cmd_windows(const WindowArgs& a) {
  if (a.T == 0 || a.stride == 0 || a.stride > a.T)
    throw std::invalid_argument("windows: need T >= 1 and 1 <= stride <= T");
  Run run("windows", a.common);
  run.input("input", a.input);
  const auto trips = data::read_speed_csv(a.input);
  const auto windows = data::segment_all(trips, a.T, a.stride, a.min_tail);
  run.config() = {{"T", a.T}, {"stride", a.stride}, {"min_tail", a.min_tail}, {"binary", a.binary}};
  if (a.binary) run.write("windows.spmt", container::encode_windows(windows));
  else run.write("windows.csv", data::format_window_csv(windows));
  spdlog::info("windows: {} trips -> {} windows", trips.size(), windows.size());
  run.finish();
  return kExitOk;
}

// ---- synth ---------------------------------------------------------------

struct SynthArgs {
  Common common;
  std::size_t n_trips = 1000;
  double speed_scale = 1.0;
  bool points = false;
};

int cmd_synth(const SynthArgs& a) {
  Run run("synth", a.common);
  auto spec = data::SynthSpec::defaults();
  spec.speed_scale = a.speed_scale;
  run.config() = {{"n_trips", a.n_trips}, {"speed_scale", a.speed_scale}, {"points", a.points}};
  if (a.points) {
    const auto raw = data::synth_raw_trips(spec, a.n_trips, a.common.seed);
    run.write("points.csv", data::format_trip_csv(raw));
  } else {
    const auto trips = data::synth_dataset(spec, a.n_trips, a.common.seed);
    run.write("speeds.csv", data::format_speed_csv(trips));
  }
  run.finish();
  return kExitOk;
}

// ---- train / finetune ----------------------------------------------------

struct ModelArgs {
  std::size_t d_model = 128;
  std::size_t layers = 4;
  std::size_t heads = 8;
  std::size_t kv_heads = 4;
  std::size_t ffn_width = 0;
  bool legacy = false;
};

struct TrainArgs {
  Common common;
  std::string windows;
  ModelArgs model;
  double lr = 2e-4;
  std::size_t batch_size = 0;
  std::size_t epochs = 50;
  std::size_t patience = 7;
  std::size_t warmup = 0;
  double weight_decay = 1e-4;
  double dropout = 0.1;
  double clip = 1.0;
};

train::TrainConfig resolve_train_config(const CLI::App* cmd, const TrainArgs& a, const json& cfg) {
  train::TrainConfig tc;
  tc.lr = pick(cmd, "--lr", a.lr, cfg, "lr");
  tc.batch_size = pick(cmd, "--batch-size", a.batch_size, cfg, "batch_size");
  tc.max_epochs = pick(cmd, "--epochs", a.epochs, cfg, "max_epochs");
  tc.patience = std::min(pick(cmd, "--patience", a.patience, cfg, "patience"), tc.max_epochs);
  tc.warmup_steps = pick(cmd, "--warmup", a.warmup, cfg, "warmup_steps");
  tc.weight_decay = pick(cmd, "--weight-decay", a.weight_decay, cfg, "weight_decay");
  tc.dropout = pick(cmd, "--dropout", a.dropout, cfg, "dropout");
  tc.clip_norm = pick(cmd, "--clip", a.clip, cfg, "clip_norm");
  tc.seed = a.common.seed;
  tc.validate();
  return tc;
}

model::ModelConfig resolve_model_config(const CLI::App* cmd, const ModelArgs& a, const json& cfg,
                                        std::size_t window) {
  const json mc = cfg.contains("model") ? cfg.at("model") : json::object();
  const bool legacy = pick(cmd, "--legacy", a.legacy, mc, "legacy");
  const std::size_t d = pick(cmd, "--d-model", a.d_model, mc, "d_model");
  const std::size_t L = pick(cmd, "--layers", a.layers, mc, "n_layers");
  auto c = legacy ? model::ModelConfig::legacy(d, L) : model::ModelConfig::base(d, L);
  c.n_heads = pick(cmd, "--heads", a.heads, mc, "n_heads");
  c.n_kv_heads = legacy ? c.n_heads : pick(cmd, "--kv-heads", a.kv_heads, mc, "n_kv_heads");
  const std::size_t ffn = pick(cmd, "--ffn-width", a.ffn_width, mc, "d_ff");
  if (ffn > 0) c.d_ff = ffn;
  c.window = window;
  c.validate();
  return c;
}

void add_model_options(CLI::App* cmd, ModelArgs& m) {
  cmd->add_option("--d-model", m.d_model, "Model width")->capture_default_str();
  cmd->add_option("--layers", m.layers, "Encoder blocks")->capture_default_str();
  cmd->add_option("--heads", m.heads, "Query heads")->capture_default_str();
  cmd->add_option("--kv-heads", m.kv_heads, "Key/value heads")->capture_default_str();
  cmd->add_option("--ffn-width", m.ffn_width, "FFN width (0 = default for the width)");
  cmd->add_flag("--legacy", m.legacy, "Sinusoidal positions, MHA, ReLU embedding and FFN");
}

void add_train_options(CLI::App* cmd, TrainArgs& a) {
  cmd->add_option("--lr", a.lr, "Peak learning rate")->capture_default_str();
  cmd->add_option("--batch-size", a.batch_size, "Batch size (0 = auto)")->capture_default_str();
  cmd->add_option("--epochs", a.epochs, "Maximum epochs")->capture_default_str();
  cmd->add_option("--patience", a.patience, "Early-stopping patience")->capture_default_str();
  cmd->add_option("--warmup", a.warmup, "Warmup steps")->capture_default_str();
  cmd->add_option("--weight-decay", a.weight_decay, "AdamW weight decay")->capture_default_str();
  cmd->add_option("--dropout", a.dropout, "Dropout rate")->capture_default_str();
  cmd->add_option("--clip", a.clip, "Gradient clipping max norm")->capture_default_str();
}

std::size_t window_length(std::span<const data::SpeedWindow> windows) {
  if (windows.empty()) throw DataError("window archive is empty");
  return windows.front().length();
}

json split_json(const data::DatasetSplit& s) {
  return {{"train", s.train}, {"val", s.val}, {"test", s.test}};
}

void write_training_outputs(Run& run, const container::Checkpoint& ckpt,
                            const train::TrainHistory& h) {
  run.write("model.spmt", container::encode_checkpoint(ckpt));
  run.write("history.csv", train::history_csv(h));
  run.write_json("history.json", train::to_json(h));
}

int cmd_train(const CLI::App* cmd, const TrainArgs& a) {
  const json cfg = load_config(a.common);
  const auto tc = resolve_train_config(cmd, a, cfg);
  Run run("train", a.common);
  run.input("windows", a.windows);
  const auto windows = data::read_windows(a.windows);
  const auto mc = resolve_model_config(cmd, a.model, cfg, window_length(windows));
  const auto split = data::split_by_trip(data::unique_trip_ids(windows), {}, a.common.seed);
  const auto train_w = data::select_trips(windows, split.train);
  const auto val_w = data::select_trips(windows, split.val);
  const auto test_w = data::select_trips(windows, split.test);
  run.config() = {{"model", model::config_to_json(mc)}, {"train", train::to_json(tc)}};

  auto result = train::train(model::init_model(mc, derive_seed(a.common.seed, "init")), mc,
                             train_w, val_w, tc);
  const auto test = train::evaluate_windows(result.params, mc, test_w);
  container::Checkpoint ckpt{mc, std::move(result.params),
                             {{"command", "train"}, {"best_epoch", result.history.best_epoch}}};
  write_training_outputs(run, ckpt, result.history);
  run.write_json("split.json", split_json(split));
  run.write_json("test_metrics.json", {{"test_accuracy", test.accuracy}, {"test_loss", test.loss},
                                       {"test_windows", test_w.size()}});
  spdlog::info("train: best epoch {}, test accuracy {:.4f}", result.history.best_epoch, test.accuracy);
  run.finish();
  return kExitOk;
}

struct FinetuneArgs {
  TrainArgs train;
  std::string checkpoint;
  std::string freeze = "none";
  std::size_t subset_trips = 0;
};

std::optional<model::FreezePolicy> parse_policy(const std::string& s) {
  std::string key = s;
  std::replace(key.begin(), key.end(), '-', '_');
  if (key == "reinit_last") key = "reinit_last_block";
  if (key == "embeddings") key = "freeze_embeddings";
  if (key == "attention") key = "freeze_attention";
  return model::freeze_policy_from_name(key);
}

int cmd_finetune(const CLI::App* cmd, const FinetuneArgs& a) {
  const auto policy = parse_policy(a.freeze);
  if (!policy) throw std::invalid_argument("unknown freeze policy '" + a.freeze + "'");
  const json cfg = load_config(a.train.common);
  auto tc = resolve_train_config(cmd, a.train, cfg);
  if (cmd->count("--epochs") == 0 && !cfg.contains("max_epochs")) {
    tc.max_epochs = train::finetune_defaults().max_epochs;
    tc.patience = std::min(tc.patience, tc.max_epochs);
  }
  Run run("finetune", a.train.common);
  run.input("checkpoint", a.checkpoint);
  run.input("windows", a.train.windows);
  auto ckpt = container::load_checkpoint(a.checkpoint);
  const auto windows = data::read_windows(a.train.windows);
  if (window_length(windows) != ckpt.config.window)
    throw DataError("checkpoint expects windows of length " + std::to_string(ckpt.config.window) +
                    ", archive has " + std::to_string(window_length(windows)));

  auto ids = data::unique_trip_ids(windows);
  data::DatasetSplit split;
  if (a.subset_trips > 0) {
    if (a.subset_trips >= ids.size())
      throw DataError("--subset-trips must leave trips for evaluation");
    Rng rng(derive_seed(a.train.common.seed, "finetune.subset"));
    rng.shuffle(ids.begin(), ids.end());
    std::vector<std::string> subset(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(a.subset_trips));
    split.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(a.subset_trips), ids.end());
    const std::size_t n_val = std::max<std::size_t>(1, (subset.size() + 5) / 10);
    if (n_val >= subset.size()) throw DataError("fine-tuning subset is too small to hold out validation trips");
    split.val.assign(subset.begin(), subset.begin() + static_cast<std::ptrdiff_t>(n_val));
    split.train.assign(subset.begin() + static_cast<std::ptrdiff_t>(n_val), subset.end());
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.val.begin(), split.val.end());
    std::sort(split.test.begin(), split.test.end());
  } else {
    split = data::split_by_trip(ids, {}, a.train.common.seed);
  }
  const auto train_w = data::select_trips(windows, split.train);
  const auto val_w = data::select_trips(windows, split.val);
  const auto test_w = data::select_trips(windows, split.test);
  run.config() = {{"freeze", a.freeze},
                  {"policy", model::freeze_policy_name(*policy)},
                  {"subset_trips", a.subset_trips},
                  {"train", train::to_json(tc)}};

  const auto zero_shot = train::evaluate_windows(ckpt.params, ckpt.config, test_w);
  auto result = train::finetune(ckpt.params, ckpt.config, train_w, val_w, *policy, tc);
  const auto test = train::evaluate_windows(result.params, ckpt.config, test_w);
  container::Checkpoint out{ckpt.config, std::move(result.params),
                            {{"command", "finetune"}, {"freeze", a.freeze},
                             {"best_epoch", result.history.best_epoch}}};
  write_training_outputs(run, out, result.history);
  run.write_json("split.json", split_json(split));
  run.write_json("test_metrics.json", {{"zero_shot_accuracy", zero_shot.accuracy},
                                       {"test_accuracy", test.accuracy},
                                       {"test_windows", test_w.size()}});
  spdlog::info("finetune: zero-shot {:.4f} -> fine-tuned {:.4f}", zero_shot.accuracy, test.accuracy);
  run.finish();
  return kExitOk;
}

// ---- predict / baseline / evaluate ----------------------------------------

std::string predictions_header() {
  return "trip_id,window_index,pred,proba_bike,proba_bus,proba_car,proba_train,proba_walk\n";
}

struct PredictArgs {
  Common common;
  std::string checkpoint;
  std::string windows;
};

int cmd_predict(const PredictArgs& a) {
  Run run("predict", a.common);
  run.input("checkpoint", a.checkpoint);
  run.input("windows", a.windows);
  const auto ckpt = container::load_checkpoint(a.checkpoint);
  const auto windows = data::read_windows(a.windows);
  const auto probs = model::predict_proba(ckpt.params, ckpt.config, windows);
  std::string out = predictions_header();
  for (std::size_t i = 0; i < windows.size(); ++i) {
    std::vector<double> row(probs.data() + i * kNumModes, probs.data() + (i + 1) * kNumModes);
    out += windows[i].trip_id + "," + std::to_string(windows[i].index) + "," +
           std::string(mode_name(*mode_from_ordinal(model::argmax(row))));
    for (double p : row) out += "," + format_double(p);
    out += "\n";
  }
  run.write("predictions.csv", out);
  run.finish();
  return kExitOk;
}

struct BaselineArgs {
  Common common;
  std::string windows;
  std::string preset = "default";
  std::string thresholds;
  bool calibrate = false;
};

int cmd_baseline(const BaselineArgs& a) {
  Run run("baseline", a.common);
  run.input("windows", a.windows);
  const auto windows = data::read_windows(a.windows);
  rules::RuleThresholds t =
      a.preset == "geolife" ? rules::RuleThresholds::geolife() : rules::RuleThresholds::defaults();
  if (!a.thresholds.empty()) {
    t = rules::read_thresholds(a.thresholds);
    run.input("thresholds", a.thresholds);
  }
  std::vector<data::SpeedWindow> eval_windows = windows;
  json calibration = nullptr;
  if (a.calibrate) {
    const auto split = data::split_by_trip(data::unique_trip_ids(windows), {}, a.common.seed);
    std::vector<std::string> fit_ids = split.train;
    fit_ids.insert(fit_ids.end(), split.val.begin(), split.val.end());
    std::vector<rules::RuleSample> fit;
    for (const auto& w : data::select_trips(windows, fit_ids)) fit.push_back(rules::to_rule_sample(w));
    const auto cal = rules::calibrate(fit, rules::CandidateGrid::around(t));
    t = cal.thresholds;
    calibration = {{"train_macro_f1", cal.macro_f1}, {"lattice_points", cal.evaluated},
                   {"fit_trips", fit_ids.size()}};
    eval_windows = data::select_trips(windows, split.test);
    run.write_json("split.json", split_json(split));
  }
  run.config() = {{"preset", a.preset}, {"calibrate", a.calibrate}, {"thresholds", rules::to_json(t)}};
  std::string out = predictions_header();
  std::vector<Mode> truth, pred;
  for (const auto& w : eval_windows) {
    const Mode m = rules::classify_window(rules::window_features(w, t.stop_thresh), t);
    truth.push_back(w.label);
    pred.push_back(m);
    out += w.trip_id + "," + std::to_string(w.index) + "," + std::string(mode_name(m));
    for (auto c : kAllModes) out += c == m ? ",1" : ",0";
    out += "\n";
  }
  const auto report = eval::metrics_from_confusion(eval::confusion_matrix(truth, pred));
  run.write("predictions.csv", out);
  run.write_json("thresholds.json", rules::to_json(t));
  json metrics = eval::to_json(report);
  if (!calibration.is_null()) metrics["calibration"] = calibration;
  run.write_json("metrics.json", metrics);
  spdlog::info("baseline: accuracy {:.4f} on {} windows", report.accuracy, eval_windows.size());
  run.finish();
  return kExitOk;
}

struct EvaluateArgs {
  Common common;
  std::string predictions;
  std::string windows;
  std::string level = "window";
};

int cmd_evaluate(const EvaluateArgs& a) {
  Run run("evaluate", a.common);
  run.input("predictions", a.predictions);
  run.input("windows", a.windows);
  const auto windows = data::read_windows(a.windows);
  std::map<std::pair<std::string, std::size_t>, Mode> truth_of;
  for (const auto& w : windows) truth_of[{w.trip_id, w.index}] = w.label;

  const std::string text = read_file(a.predictions);
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || trim(line).rfind("trip_id,window_index,pred", 0) != 0)
    throw FormatError(a.predictions + ": missing predictions header");
  std::vector<Mode> truth, pred;
  std::map<std::string, std::vector<std::array<double, kNumModes>>> trip_probs;
  std::map<std::string, Mode> trip_truth;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto f = split_csv_line(trim(line));
    if (f.size() != 3 + kNumModes) throw FormatError("predictions row " + std::to_string(row) + ": expected 8 fields");
    std::size_t index = 0;
    std::array<double, kNumModes> p{};
    try {
      index = std::stoull(f[1]);
      for (std::size_t c = 0; c < kNumModes; ++c) p[c] = std::stod(f[3 + c]);
    } catch (const std::exception&) {
      throw FormatError("predictions row " + std::to_string(row) + ": non-numeric field");
    }
    const auto m = mode_from_name(f[2]);
    if (!m) throw FormatError("predictions row " + std::to_string(row) + ": unknown mode " + f[2]);
    auto it = truth_of.find({f[0], index});
    if (it == truth_of.end())
      throw DataError("prediction for " + f[0] + " window " + f[1] + " has no labeled window");
    truth.push_back(it->second);
    pred.push_back(*m);
    trip_probs[f[0]].push_back(p);
    trip_truth[f[0]] = it->second;
  }
  if (a.level == "trip") {
    truth.clear();
    pred.clear();
    for (const auto& [trip, probs] : trip_probs) {
      truth.push_back(trip_truth.at(trip));
      pred.push_back(model::aggregate_trip(probs));
    }
  }
  const auto report = eval::metrics_from_confusion(eval::confusion_matrix(truth, pred));
  run.config() = {{"level", a.level}};
  json j = eval::to_json(report);
  j["level"] = a.level;
  run.write_json("metrics.json", j);
  run.write("per_class.csv", eval::per_class_csv(report));
  run.write("confusion.csv", eval::confusion_csv(report.confusion));
  spdlog::info("evaluate: {}-level accuracy {:.4f} over {} samples", a.level, report.accuracy, truth.size());
  run.finish();
  return kExitOk;
}

// ---- report / privacy / crossval / profile --------------------------------

struct ReportArgs {
  Common common;
  std::vector<std::string> metrics;
  std::string history;
};

int cmd_report(const ReportArgs& a) {
  Run run("report", a.common);
  std::string md = "# Evaluation report\n";
  json combined = json::object();
  for (const auto& file : a.metrics) {
    run.input("metrics:" + file, file);
    json m;
    try {
      m = json::parse(read_file(file));
    } catch (const json::parse_error& e) {
      throw FormatError(file + ": " + e.what());
    }
    combined[file] = m;
    md += "\n## " + file + "\n\n";
    md += "Accuracy: " + format_double(m.value("accuracy", 0.0)) + "\n\n";
    md += "| class | precision | recall | f1 | support |\n|---|---|---|---|---|\n";
    for (const auto& [name, c] : m.at("per_class").items())
      md += "| " + name + " | " + format_double(c.at("precision").get<double>()) + " | " +
            format_double(c.at("recall").get<double>()) + " | " +
            format_double(c.at("f1").get<double>()) + " | " +
            std::to_string(c.at("support").get<std::uint64_t>()) + " |\n";
    for (const char* agg : {"macro", "weighted"}) {
      const auto& g = m.at(agg);
      md += "| " + std::string(agg) + " | " + format_double(g.at("precision").get<double>()) +
            " | " + format_double(g.at("recall").get<double>()) + " | " +
            format_double(g.at("f1").get<double>()) + " | |\n";
    }
  }
  if (!a.history.empty()) {
    run.input("history", a.history);
    const std::string h = read_file(a.history);
    md += "\n## Training history\n\n```\n" + h + "```\n";
  }
  run.write("report.md", md);
  run.write_json("report.json", combined);
  run.finish();
  return kExitOk;
}

struct PrivacyArgs {
  Common common;
  double area_km2 = 1000.0;
  double resolution_m = 10.0;
  double speed_states = 121.0;
};

int cmd_privacy(const PrivacyArgs& a) {
  Run run("privacy-entropy", a.common);
  const auto r = eval::location_speed_report(a.area_km2, a.resolution_m, a.speed_states);
  run.config() = eval::to_json(r);
  run.write_json("privacy.json", eval::to_json(r));
  spdlog::info("location {:.2f} bits vs speed {:.2f} bits", r.location_bits, r.speed_bits);
  run.finish();
  return kExitOk;
}

struct CrossvalArgs {
  TrainArgs train;
  std::size_t k = 5;
};

int cmd_crossval(const CLI::App* cmd, const CrossvalArgs& a) {
  const json cfg = load_config(a.train.common);
  const auto tc = resolve_train_config(cmd, a.train, cfg);
  Run run("crossval", a.train.common);
  run.input("windows", a.train.windows);
  const auto windows = data::read_windows(a.train.windows);
  const auto mc = resolve_model_config(cmd, a.train.model, cfg, window_length(windows));
  run.config() = {{"k", a.k}, {"model", model::config_to_json(mc)}, {"train", train::to_json(tc)}};
  const auto cv = train::cross_validate(windows, a.k, mc, tc);
  json folds = json::array();
  for (const auto& f : cv.folds)
    folds.push_back({{"test_trips", f.test_trips}, {"metrics", eval::to_json(f.metrics)},
                     {"best_epoch", f.history.best_epoch}});
  run.write_json("crossval.json", {{"folds", folds}, {"accuracy", eval::to_json(cv.accuracy)}});
  spdlog::info("crossval: accuracy {:.4f} +/- {:.4f}", cv.accuracy.mean, cv.accuracy.stddev);
  run.finish();
  return kExitOk;
}

struct ProfileArgs {
  Common common;
  std::string input;
  std::string format = "csv";
  double bin_width = 1.0;
};

int cmd_profile(const ProfileArgs& a) {
  Run run("profile", a.common);
  run.input("input", a.input);
  const auto parsed = a.format == "geolife" ? data::parse_geolife(a.input) : data::parse_trip_csv(a.input);
  std::vector<double> all;
  for (const auto& t : parsed.trips) {
    std::vector<double> ts;
    for (const auto& p : t.points) ts.push_back(p.timestamp);
    const auto prof = data::sampling_profile(ts, a.bin_width);
    all.insert(all.end(), prof.intervals.begin(), prof.intervals.end());
  }
  // Pool the per-trip intervals into one distribution.
  std::vector<double> cumulative{0.0};
  for (double dt : all) cumulative.push_back(cumulative.back() + dt);
  const auto pooled = data::sampling_profile(cumulative, a.bin_width);
  run.config() = {{"format", a.format}, {"bin_width", a.bin_width}};
  run.write_json("profile.json", {{"trips", parsed.trips.size()},
                                  {"intervals", pooled.intervals.size()},
                                  {"median", pooled.median},
                                  {"p5", pooled.p5},
                                  {"p95", pooled.p95},
                                  {"bin_width", pooled.bin_width},
                                  {"histogram", pooled.histogram}});
  run.finish();
  return kExitOk;
}

void configure_logging() {
  if (const char* level = std::getenv("SPEEDMODE_LOG_LEVEL"))
    spdlog::set_level(spdlog::level::from_str(level));
}

}  // namespace

int run(const std::vector<std::string>& args) {
  configure_logging();
  CLI::App app{"Speed-only transportation mode detection"};
  app.require_subcommand(1);
  app.set_version_flag("--version", SPEEDMODE_VERSION);

  PreprocessArgs pre;
  auto* c_pre = app.add_subcommand("preprocess", "GPS points -> harmonized, filtered speed series");
  add_common(c_pre, pre.common);
  c_pre->add_option("--input,-i", pre.input, "Point CSV file or Geolife directory")->required();
  c_pre->add_option("--format", pre.format)->check(CLI::IsMember({"csv", "geolife"}))->capture_default_str();
  c_pre->add_option("--thresholds", pre.thresholds, "JSON per-mode speed bounds (km/h)")->check(CLI::ExistingFile);

  WindowArgs win;
  auto* c_win = app.add_subcommand("windows", "Speed series -> fixed-length windows");
  add_common(c_win, win.common);
  c_win->add_option("--input,-i", win.input, "Speed CSV")->required()->check(CLI::ExistingFile);
  c_win->add_option("--T", win.T, "Window length")->capture_default_str();
  c_win->add_option("--stride", win.stride, "Stride between window starts")->capture_default_str();
  c_win->add_option("--min-tail", win.min_tail, "Minimum samples for a padded tail window")->capture_default_str();
  c_win->add_flag("--binary", win.binary, "Write the binary container instead of CSV");

  SynthArgs syn;
  auto* c_syn = app.add_subcommand("synth", "Generate a seeded synthetic corpus");
  add_common(c_syn, syn.common);
  c_syn->add_option("--n-trips", syn.n_trips)->capture_default_str();
  c_syn->add_option("--speed-scale", syn.speed_scale, "Scale applied to every mode's speeds")->capture_default_str();
  c_syn->add_flag("--points", syn.points, "Emit GPS points instead of speed series");

  TrainArgs tr;
  auto* c_tr = app.add_subcommand("train", "Train a model on a window archive");
  add_common(c_tr, tr.common);
  c_tr->add_option("--windows,-w", tr.windows)->required()->check(CLI::ExistingFile);
  add_model_options(c_tr, tr.model);
  add_train_options(c_tr, tr);

  FinetuneArgs ft;
  auto* c_ft = app.add_subcommand("finetune", "Fine-tune a checkpoint on target windows");
  add_common(c_ft, ft.train.common);
  c_ft->add_option("--checkpoint,-c", ft.checkpoint)->required()->check(CLI::ExistingFile);
  c_ft->add_option("--windows,-w", ft.train.windows)->required()->check(CLI::ExistingFile);
  c_ft->add_option("--freeze", ft.freeze,
                   "none | freeze-embeddings | freeze-attention | reinit-last")->capture_default_str();
  c_ft->add_option("--subset-trips", ft.subset_trips,
                   "Fine-tune on this many trips and evaluate on the rest (0 = 80/10/10 split)");
  add_train_options(c_ft, ft.train);

  PredictArgs pr;
  auto* c_pr = app.add_subcommand("predict", "Per-window class probabilities");
  add_common(c_pr, pr.common);
  c_pr->add_option("--checkpoint,-c", pr.checkpoint)->required()->check(CLI::ExistingFile);
  c_pr->add_option("--windows,-w", pr.windows)->required()->check(CLI::ExistingFile);

  BaselineArgs bl;
  auto* c_bl = app.add_subcommand("baseline", "Rule-based speed classifier");
  add_common(c_bl, bl.common);
  c_bl->add_option("--windows,-w", bl.windows)->required()->check(CLI::ExistingFile);
  c_bl->add_option("--preset", bl.preset)->check(CLI::IsMember({"default", "geolife"}))->capture_default_str();
  c_bl->add_option("--thresholds", bl.thresholds, "JSON thresholds file")->check(CLI::ExistingFile);
  c_bl->add_flag("--calibrate", bl.calibrate, "Grid-calibrate on the train/val trips, evaluate on test");

  EvaluateArgs ev;
  auto* c_ev = app.add_subcommand("evaluate", "Metrics for a predictions file");
  add_common(c_ev, ev.common);
  c_ev->add_option("--predictions,-p", ev.predictions)->required()->check(CLI::ExistingFile);
  c_ev->add_option("--windows,-w", ev.windows, "Labeled windows")->required()->check(CLI::ExistingFile);
  c_ev->add_option("--level", ev.level)->check(CLI::IsMember({"window", "trip"}))->capture_default_str();

  ReportArgs rp;
  auto* c_rp = app.add_subcommand("report", "Markdown/JSON summary of metrics files");
  add_common(c_rp, rp.common);
  c_rp->add_option("--metrics,-m", rp.metrics)->required()->check(CLI::ExistingFile);
  c_rp->add_option("--history", rp.history)->check(CLI::ExistingFile);

  PrivacyArgs pv;
  auto* c_pv = app.add_subcommand("privacy-entropy", "Location vs speed entropy");
  add_common(c_pv, pv.common);
  c_pv->add_option("--area-km2", pv.area_km2)->capture_default_str()->check(CLI::PositiveNumber);
  c_pv->add_option("--resolution-m", pv.resolution_m)->capture_default_str()->check(CLI::PositiveNumber);
  c_pv->add_option("--speed-states", pv.speed_states)->capture_default_str()->check(CLI::Range(1.0, 1e18));

  CrossvalArgs cv;
  auto* c_cv = app.add_subcommand("crossval", "k-fold cross-validation by trip");
  add_common(c_cv, cv.train.common);
  c_cv->add_option("--windows,-w", cv.train.windows)->required()->check(CLI::ExistingFile);
  c_cv->add_option("--k", cv.k)->capture_default_str()->check(CLI::Range(2, 1000));
  add_model_options(c_cv, cv.train.model);
  add_train_options(c_cv, cv.train);

  ProfileArgs pf;
  auto* c_pf = app.add_subcommand("profile", "Sampling-interval statistics");
  add_common(c_pf, pf.common);
  c_pf->add_option("--input,-i", pf.input)->required();
  c_pf->add_option("--format", pf.format)->check(CLI::IsMember({"csv", "geolife"}))->capture_default_str();
  c_pf->add_option("--bin-width", pf.bin_width)->capture_default_str()->check(CLI::PositiveNumber);

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*c_pre) return cmd_preprocess(pre);
    if (*c_win) return cmd_windows(win);
    if (*c_syn) return cmd_synth(syn);
    if (*c_tr) return cmd_train(c_tr, tr);
    if (*c_ft) return cmd_finetune(c_ft, ft);
    if (*c_pr) return cmd_predict(pr);
    if (*c_bl) return cmd_baseline(bl);
    if (*c_ev) return cmd_evaluate(ev);
    if (*c_rp) return cmd_report(rp);
    if (*c_pv) return cmd_privacy(pv);
    if (*c_cv) return cmd_crossval(c_cv, cv);
    if (*c_pf) return cmd_profile(pf);
  } catch (const DataError& e) {
    spdlog::error("{}", e.what());
    return kExitData;
  } catch (const std::invalid_argument& e) {
    spdlog::error("{}", e.what());
    return kExitUsage;
  } catch (const nlohmann::json::exception& e) {
    spdlog::error("config: {}", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace speedmode::cli
