// Acceptance checks. Prints one line per criterion and exits nonzero when a
// criterion fails unexpectedly (any failure with --strict).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "cli.hpp"
#include "gradcheck_cases.hpp"
#include "oracles.hpp"
#include "planted_rules.hpp"
#include "speedmode/container.hpp"
#include "speedmode/dataset.hpp"
#include "speedmode/dataset_io.hpp"
#include "speedmode/metrics.hpp"
#include "speedmode/model.hpp"
#include "speedmode/rules.hpp"
#include "speedmode/synth.hpp"
#include "speedmode/trainer.hpp"
#include "speedmode/util.hpp"

namespace fs = std::filesystem;
using namespace speedmode;

namespace {

enum class Status { Pass, Fail, KnownFail, Skipped };

struct Outcome {
  Status status;
  std::string detail;
};

Outcome pass(std::string d) { return {Status::Pass, std::move(d)}; }
Outcome fail(std::string d) { return {Status::Fail, std::move(d)}; }
Outcome check(bool ok, std::string d) { return {ok ? Status::Pass : Status::Fail, std::move(d)}; }

nn::Tensor<double> random_tensor(nn::Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  return gradcases::normal(std::move(shape), rng, scale);
}

std::vector<double> flat(const nn::Tensor<double>& t) { return {t.values().begin(), t.values().end()}; }

oracle::Mat rows_of(const nn::Tensor<double>& t, std::size_t b) {
  const std::size_t T = t.shape()[1], C = t.shape()[2];
  oracle::Mat m(T, std::vector<double>(C));
  for (std::size_t i = 0; i < T; ++i)
    for (std::size_t j = 0; j < C; ++j) m[i][j] = t[(b * T + i) * C + j];
  return m;
}

// ---- 1 -------------------------------------------------------------------

Outcome parameter_budget() {
  const auto n = model::count_parameters(model::ModelConfig::base());
  return check(n >= 700000 && n <= 760000, fmt::format("{} parameters", n));
}

// ---- 2 -------------------------------------------------------------------

Outcome gradients() {
  double worst_primitive = 0.0, worst_model = 0.0;
  std::string failures;
  for (auto& c : gradcases::primitive_cases(101)) {
    const auto r = nn::gradient_check(c.fragment, c.inputs);
    worst_primitive = std::max(worst_primitive, r.max_rel_error);
    if (r.max_rel_error > c.tolerance || r.checked == 0)
      failures += fmt::format(" {}={:.2e}", c.name, r.max_rel_error);
  }
  for (bool legacy : {false, true}) {
    auto c = gradcases::tiny_model_case(legacy, 7);
    const auto r = nn::gradient_check(c.fragment, c.inputs);
    worst_model = std::max(worst_model, r.max_rel_error);
    if (r.max_rel_error > c.tolerance) failures += fmt::format(" {}={:.2e}", c.name, r.max_rel_error);
  }
  return check(failures.empty(), fmt::format("worst primitive {:.2e}, tiny model {:.2e}{}", worst_primitive,
                                             worst_model, failures.empty() ? "" : "; over tolerance:" + failures));
}

// ---- 3 -------------------------------------------------------------------

Outcome gqa_equals_mha() {
  std::mt19937_64 rng(303);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t B = 1 + rng() % 2, T = 1 + rng() % 8, h = std::size_t{1} << (rng() % 4),
                      dk = 2 * (1 + rng() % 3), d = 4 + rng() % 9;
    std::vector<std::uint8_t> mask(B * T, 0);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t t = 0; t < T; ++t) mask[b * T + t] = rng() % 4 != 0;
      mask[b * T + rng() % T] = 1;
    }
    const auto x = random_tensor({B, T, d}, rng);
    const auto wq = random_tensor({d, h * dk}, rng, 0.5), wk = random_tensor({d, h * dk}, rng, 0.5),
               wv = random_tensor({d, h * dk}, rng, 0.5), wo = random_tensor({h * dk, d}, rng, 0.5);
    nn::Tape<double> tape;
    const auto& y = tape.value(nn::gqa_attention(
        tape, tape.leaf(x), {tape.leaf(wq), tape.leaf(wk), tape.leaf(wv), tape.leaf(wo)}, h, h, mask, false));
    for (std::size_t b = 0; b < B; ++b) {
      const auto xb = rows_of(x, b);
      const std::vector<std::uint8_t> m(mask.begin() + b * T, mask.begin() + (b + 1) * T);
      const auto q = oracle::matmul(xb, flat(wq), d, h * dk);
      const auto k = oracle::matmul(xb, flat(wk), d, h * dk);
      const auto v = oracle::matmul(xb, flat(wv), d, h * dk);
      const auto want = oracle::matmul(oracle::attention(q, k, v, h, h, dk, m), flat(wo), h * dk, d);
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t j = 0; j < d; ++j) worst = std::max(worst, std::abs(y[(b * T + t) * d + j] - want[t][j]));
    }
  }
  return check(worst <= 1e-6, fmt::format("50 cases, max abs diff {:.2e}", worst));
}

// ---- 4 -------------------------------------------------------------------

Outcome rope_relativity() {
  std::mt19937_64 rng(404);
  double worst = 0.0;
  bool identity = true;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t T = 2 + rng() % 10, h = 1 + rng() % 4, dk = 2 * (1 + rng() % 4);
    const double offset = static_cast<double>(1 + rng() % 1000);
    const auto q = random_tensor({1, T, h * dk}, rng), k = random_tensor({1, T, h * dk}, rng);
    std::vector<double> pos(T), shifted(T), zeros(T, 0.0);
    for (std::size_t t = 0; t < T; ++t) {
      pos[t] = static_cast<double>(t);
      shifted[t] = pos[t] + offset;
    }
    nn::Tape<double> tape;
    const auto Q = tape.leaf(q), K = tape.leaf(k);
    identity = identity && tape.value(nn::rope(tape, Q, h, zeros)) == q;
    const auto& q0 = tape.value(nn::rope(tape, Q, h, pos));
    const auto& k0 = tape.value(nn::rope(tape, K, h, pos));
    const auto& q1 = tape.value(nn::rope(tape, Q, h, shifted));
    const auto& k1 = tape.value(nn::rope(tape, K, h, shifted));
    for (std::size_t head = 0; head < h; ++head)
      for (std::size_t i = 0; i < T; ++i)
        for (std::size_t j = 0; j < T; ++j) {
          double s0 = 0, s1 = 0;
          for (std::size_t c = 0; c < dk; ++c) {
            const std::size_t a = i * h * dk + head * dk + c, b = j * h * dk + head * dk + c;
            s0 += q0[a] * k0[b];
            s1 += q1[a] * k1[b];
          }
          worst = std::max(worst, std::abs(s0 - s1));
        }
  }
  return check(worst <= 1e-5 && identity,
               fmt::format("50 cases, max score drift {:.2e}, position-0 identity {}", worst,
                           identity ? "exact" : "BROKEN"));
}

// ---- 5 -------------------------------------------------------------------

Outcome mask_invariance() {
  const auto c = model::ModelConfig::base();
  const auto params = model::init_model(c, 505);
  std::mt19937_64 rng(505);
  std::uniform_real_distribution<float> speed(0.0f, 120.0f), junk(-1e4f, 1e4f);
  std::vector<data::SpeedWindow> clean, noisy;
  for (int i = 0; i < 100; ++i) {
    data::SpeedWindow w;
    w.trip_id = fmt::format("w{}", i);
    w.valid_count = 1 + rng() % (c.window - 1);
    w.speeds.assign(c.window, 0.0f);
    for (std::size_t t = 0; t < w.valid_count; ++t) w.speeds[t] = speed(rng);
    auto n = w;
    for (std::size_t t = w.valid_count; t < c.window; ++t) n.speeds[t] = junk(rng);
    clean.push_back(std::move(w));
    noisy.push_back(std::move(n));
  }
  const auto a = model::forward(params, c, clean), b = model::forward(params, c, noisy);
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, double(std::abs(a[i] - b[i])));
  return check(worst <= 1e-6, fmt::format("100 windows, max logit change {:.2e}", worst));
}

// ---- 6 / 7 ---------------------------------------------------------------

struct SourceModel {
  model::ModelConfig config;
  model::ParameterSet params;
};
std::optional<SourceModel> g_source;

train::TrainConfig desk_config() {
  train::TrainConfig tc;
  tc.max_epochs = 20;
  tc.seed = 42;
  return tc;
}

Outcome desk_learning() {
  const auto start = std::chrono::steady_clock::now();
  const auto trips = data::synth_dataset(data::SynthSpec::defaults(), 1000, 42);
  const auto windows = data::segment_all(trips, 200, 50, 10);
  const auto split = data::split_by_trip(data::unique_trip_ids(windows), {}, 42);
  const auto tr = data::select_trips(windows, split.train), va = data::select_trips(windows, split.val);
  auto c = model::ModelConfig::base(64, 2);
  c.window = 200;
  const auto tc = desk_config();
  auto result = train::train(model::init_model(c, derive_seed(42, "init")), c, tr, va, tc);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const double acc = train::evaluate_windows(result.params, c, va).accuracy;
  g_source = SourceModel{c, std::move(result.params)};
  return check(acc >= 0.95 && result.history.epochs.size() <= 20 && seconds <= 600.0,
               fmt::format("val accuracy {:.4f} (best epoch {} of {}), {} train / {} val windows, {:.0f} s", acc,
                           result.history.best_epoch, result.history.epochs.size(), tr.size(), va.size(), seconds));
}

Outcome transfer() {
  if (!g_source) return fail("no source model (desk-scale training did not finish)");
  const auto& src = *g_source;
  auto spec = data::SynthSpec::defaults();
  spec.speed_scale = 0.6;
  const auto windows = data::segment_all(data::synth_dataset(spec, 200, 77), 200, 50, 10);
  const auto split = data::split_by_trip(data::unique_trip_ids(windows), {}, 42);
  const auto tr = data::select_trips(windows, split.train), va = data::select_trips(windows, split.val),
             te = data::select_trips(windows, split.test);
  auto tc = train::finetune_defaults();
  tc.seed = 42;
  const double zero_shot = train::evaluate_windows(src.params, src.config, te).accuracy;
  const auto tuned = train::finetune(src.params, src.config, tr, va, model::FreezePolicy::None, tc);
  const double after = train::evaluate_windows(tuned.params, src.config, te).accuracy;

  auto short_tc = tc;
  short_tc.max_epochs = 3;
  short_tc.patience = 3;
  const auto frozen = train::finetune(src.params, src.config, tr, va, model::FreezePolicy::FreezeEmbeddings, short_tc);
  const bool embed_same = frozen.params.at("embed.W") == src.params.at("embed.W") &&
                          frozen.params.at("embed.b") == src.params.at("embed.b");
  const bool others_moved = frozen.params.at("classifier.W") != src.params.at("classifier.W");
  return check(after > zero_shot && embed_same && others_moved,
               fmt::format("target test accuracy zero-shot {:.4f} -> fine-tuned {:.4f}; frozen embeddings {}", zero_shot,
                           after, embed_same ? "bitwise unchanged" : "CHANGED"));
}

// ---- 8 -------------------------------------------------------------------

Outcome rule_baseline() {
  using rules::WindowFeatures;
  const auto t = rules::RuleThresholds::defaults();
  struct Row {
    WindowFeatures f;
    Mode want;
  };
  const Row rows[] = {{{2.5, 0.0, 0.0}, Mode::Walk},
                      {{30.0, 0.0, 0.0}, Mode::Train},
                      {{12.0, 0.10, 1.5}, Mode::Bus},
                      {{12.0, 0.02, 1.5}, Mode::Car},
                      {{5.0, 0.0, 0.0}, Mode::Bike}};
  int right = 0;
  for (const auto& r : rows) right += rules::classify_window(r.f, t) == r.want ? 1 : 0;
  const auto corpus = planted::corpus();
  const auto cal = rules::calibrate(corpus, rules::CandidateGrid::around(t));
  const bool recovered = cal.thresholds == t;
  return check(right == 5 && recovered,
               fmt::format("{}/5 boundary examples, planted thresholds {} (macro-F1 {:.3f}, {} lattice points)", right,
                           recovered ? "recovered" : "NOT recovered", cal.macro_f1, cal.evaluated));
}

// ---- 9 -------------------------------------------------------------------

Outcome privacy() {
  const auto r = eval::location_speed_report(1000.0, 10.0, 121.0);
  const bool speed_ok = std::abs(r.speed_bits - 6.92) <= 0.01;
  const bool self_consistent = r.spatial_states == 1e7 && r.location_bits == std::log2(1e7);
  const bool location_ok = std::abs(r.location_bits - 26.57) <= 0.01;
  const std::string detail =
      fmt::format("speed {:.3f} bits (target 6.92), location {:.3f} bits for {:.0e} states (target 26.57)", r.speed_bits,
                  r.location_bits, r.spatial_states);
  if (!speed_ok || !self_consistent) return fail(detail);
  if (!location_ok)
    return {Status::KnownFail, detail + "; the 26.57 target is log2(1e8), inconsistent with A/r^2 = 1e7"};
  return pass(detail);
}

// ---- 10 ------------------------------------------------------------------

Outcome metric_identities() {
  std::mt19937_64 rng(1010);
  int bad = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng() % 200;
    std::vector<Mode> truth(n), pred(n);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
      truth[i] = kAllModes[rng() % kNumModes];
      pred[i] = rng() % 3 == 0 ? truth[i] : kAllModes[rng() % kNumModes];
      hits += truth[i] == pred[i] ? 1 : 0;
    }
    const auto r = eval::metrics_from_confusion(eval::confusion_matrix(truth, pred));
    const double direct = static_cast<double>(hits) / static_cast<double>(n);
    if (r.accuracy != direct || r.weighted.recall != r.accuracy || r.micro.recall != r.accuracy) ++bad;
  }
  return check(bad == 0, fmt::format("1000 random prediction sets, {} mismatches", bad));
}

// ---- 11 ------------------------------------------------------------------

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "speedmode");
  return cli::run(args);
}

/// synth -> windows -> train -> predict -> evaluate -> report under root.
bool pipeline(const fs::path& root) {
  const auto p = [&](const char* s) { return (root / s).string(); };
  return cli({"synth", "--n-trips", "100", "--output", p("synth")}) == 0 &&
         cli({"windows", "--input", p("synth/speeds.csv"), "--T", "40", "--stride", "20", "--output", p("win")}) == 0 &&
         cli({"train", "--windows", p("win/windows.csv"), "--d-model", "16", "--layers", "1", "--heads", "4",
              "--kv-heads", "2", "--epochs", "3", "--lr", "3e-3", "--output", p("model")}) == 0 &&
         cli({"predict", "--checkpoint", p("model/model.spmt"), "--windows", p("win/windows.csv"), "--output",
              p("pred")}) == 0 &&
         cli({"evaluate", "--predictions", p("pred/predictions.csv"), "--windows", p("win/windows.csv"), "--output",
              p("eval")}) == 0 &&
         cli({"report", "--metrics", p("eval/metrics.json"), "--output", p("report")}) == 0;
}

Outcome determinism() {
  const auto base = fs::temp_directory_path() / fmt::format("speedmode_acceptance_{}", std::random_device{}());
  struct Cleanup {
    fs::path p;
    ~Cleanup() {
      std::error_code ec;
      fs::remove_all(p, ec);
    }
  } cleanup{base};
  if (!pipeline(base / "a") || !pipeline(base / "b")) return fail("pipeline run failed");
  std::vector<std::string> differing;
  std::size_t compared = 0;
  for (const auto& e : fs::recursive_directory_iterator(base / "a")) {
    if (!e.is_regular_file() || e.path().filename() == "manifest.json") continue;
    const auto rel = fs::relative(e.path(), base / "a");
    ++compared;
    if (read_file(e.path()) != read_file(base / "b" / rel)) differing.push_back(rel.string());
  }
  // Reports name their input paths, which differ between the two roots.
  const auto strip = [&](std::string s, const fs::path& root) {
    for (auto at = s.find(root.string()); at != std::string::npos; at = s.find(root.string()))
      s.replace(at, root.string().size(), "<root>");
    return s;
  };
  std::erase_if(differing, [&](const std::string& rel) {
    return rel.starts_with("report") &&
           strip(read_file(base / "a" / rel), base / "a") == strip(read_file(base / "b" / rel), base / "b");
  });

  const auto bytes = read_file(base / "a/model/model.spmt");
  const auto ckpt = container::decode_checkpoint(bytes);
  const bool roundtrip = container::encode_checkpoint(ckpt) == bytes &&
                         container::decode_checkpoint(container::encode_checkpoint(ckpt)).params == ckpt.params;
  std::string diff;
  for (const auto& d : differing) diff += " " + d;
  return check(differing.empty() && roundtrip && compared > 0,
               fmt::format("{} output files compared, {} differ{}; checkpoint round-trip {}", compared,
                           differing.size(), diff, roundtrip ? "bitwise exact" : "MISMATCH"));
}

// ---- 12 ------------------------------------------------------------------

Outcome segmentation() {
  std::mt19937_64 rng(1212);
  int bad = 0;
  std::size_t windows = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = rng() % 1200, T = 1 + rng() % 300, stride = 1 + rng() % T, min_tail = 1 + rng() % T;
    std::vector<double> series(n);
    for (std::size_t i = 0; i < n; ++i) series[i] = static_cast<double>(i % 97) + 0.5;
    const auto want = oracle::window_spans(n, T, stride, min_tail);
    const auto got = data::segment_windows(series, T, stride, min_tail);
    windows += got.size();
    bool ok = data::window_spans(n, T, stride, min_tail) == want && got.size() == want.size();
    for (std::size_t w = 0; ok && w < got.size(); ++w) {
      ok = got[w].start == want[w].start && got[w].valid_count == want[w].valid && got[w].length() == T;
      for (std::size_t t = 0; ok && t < T; ++t)
        ok = got[w].speeds[t] == (t < want[w].valid ? static_cast<float>(series[want[w].start + t]) : 0.0f);
    }
    bad += ok ? 0 : 1;
  }
  return check(bad == 0, fmt::format("1000 random cases ({} windows), {} mismatches", windows, bad));
}

// ---- 13 ------------------------------------------------------------------

Outcome geolife() {
  const char* dir = std::getenv("SPEEDMODE_GEOLIFE_DIR");
  if (dir == nullptr || !fs::is_directory(dir))
    return {Status::Skipped, "optional; set SPEEDMODE_GEOLIFE_DIR to the Geolife Data/ directory"};
  const auto parsed = data::parse_geolife(dir);
  const auto result = data::preprocess(parsed.trips);
  std::set<Mode> classes;
  for (const auto& t : result.trips) classes.insert(t.mode);
  const double n = static_cast<double>(result.trips.size());
  const bool ok = classes.size() == kNumModes && std::abs(n - 9427.0) <= 0.02 * 9427.0;
  return {ok ? Status::Pass : Status::Fail,
          fmt::format("{} trips over {} classes after preprocessing (target 9427 +/- 2%); full training not run",
                      result.trips.size(), classes.size())};
}

}  // namespace

int main(int argc, char** argv) {
  retain_heap_memory();
  bool strict = false;
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--strict") strict = true;
    else if (a == "--help") {
      std::puts("usage: acceptance [--strict] [criterion ...]");
      return 0;
    } else only.insert(std::atoi(a.c_str()));
  }
  if (std::getenv("SPEEDMODE_LOG_LEVEL") == nullptr) spdlog::set_level(spdlog::level::warn);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"parameter budget", parameter_budget},
      {"gradient correctness", gradients},
      {"GQA equals MHA when h_kv = h", gqa_equals_mha},
      {"RoPE relative positions", rope_relativity},
      {"padding mask invariance", mask_invariance},
      {"desk-scale learning", desk_learning},
      {"transfer protocol", transfer},
      {"rule baseline", rule_baseline},
      {"privacy entropy", privacy},
      {"metric identities", metric_identities},
      {"determinism and persistence", determinism},
      {"segmentation oracle", segmentation},
      {"Geolife end to end", geolife},
  };

  int unexpected = 0, known = 0, passed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.contains(id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = fail(std::string("exception: ") + e.what());
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const char* tag = "PASS";
    switch (o.status) {
      case Status::Pass: ++passed; break;
      case Status::Fail: tag = "FAIL"; ++unexpected; break;
      case Status::KnownFail: tag = "FAIL"; ++known; break;
      case Status::Skipped: tag = "SKIPPED"; break;
    }
    std::printf("%-7s %2d %-30s %s [%.1fs]%s\n", tag, id, criteria[i].first.c_str(), o.detail.c_str(), s,
                o.status == Status::KnownFail ? " (known, not attainable as stated)" : "");
    std::fflush(stdout);
  }
  std::printf("summary: %d passed, %d failed (%d known)\n", passed, unexpected + known, known);
  return unexpected > 0 || (strict && known > 0) ? 1 : 0;
}
