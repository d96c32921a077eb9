#include "speedmode/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include <spdlog/spdlog.h>

#include "speedmode/error.hpp"
#include "speedmode/nn/optim.hpp"
#include "speedmode/util.hpp"

namespace speedmode::train {

using model::ModelConfig;
using model::ParameterSet;

std::size_t TrainConfig::resolved_batch_size(std::size_t n_windows) const {
  if (batch_size > 0) return batch_size;
  return n_windows < 10'000 ? 64 : 512;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("train config: " + m); };
  if (!(lr >= 0.0) || !std::isfinite(lr)) fail("lr must be >= 0");
  if (max_epochs == 0) fail("max_epochs must be positive");
  if (patience == 0 || patience > max_epochs) fail("patience must be in [1, max_epochs]");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
  if (dropout && !(*dropout >= 0.0 && *dropout < 1.0)) fail("dropout must be in [0, 1)");
  if (!(clip_norm > 0.0)) fail("clip_norm must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) fail("betas must be in [0, 1)");
  if (!(eps > 0.0)) fail("eps must be positive");
}

nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json j{{"lr", c.lr},
                   {"batch_size", c.batch_size},
                   {"max_epochs", c.max_epochs},
                   {"patience", c.patience},
                   {"weight_decay", c.weight_decay},
                   {"warmup_steps", c.warmup_steps},
                   {"clip_norm", c.clip_norm},
                   {"beta1", c.beta1},
                   {"beta2", c.beta2},
                   {"eps", c.eps},
                   {"seed", c.seed}};
  j["dropout"] = c.dropout ? nlohmann::json(*c.dropout) : nlohmann::json(nullptr);
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.lr = j.value("lr", c.lr);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.patience = j.value("patience", c.patience);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.eps = j.value("eps", c.eps);
    c.seed = j.value("seed", c.seed);
    if (j.contains("dropout"))
      c.dropout = j["dropout"].is_null() ? std::nullopt : std::optional(j["dropout"].get<double>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

double lr_schedule(std::size_t step, std::size_t total_steps, std::size_t warmup, double peak_lr) {
  if (warmup > 0 && step < warmup)
    return peak_lr * static_cast<double>(step) / static_cast<double>(warmup);
  const double floor = 0.1 * peak_lr;
  if (step >= total_steps || total_steps <= warmup) return step >= total_steps ? floor : peak_lr;
  const double progress =
      static_cast<double>(step - warmup) / static_cast<double>(total_steps - warmup);
  return floor + (peak_lr - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

std::string history_csv(const TrainHistory& h) {
  std::string out = "epoch,train_loss,val_loss,val_acc\n";
  for (const auto& e : h.epochs)
    out += std::to_string(e.epoch) + "," + format_double(e.train_loss) + "," +
           format_double(e.val_loss) + "," + format_double(e.val_accuracy) + "\n";
  return out;
}

nlohmann::json to_json(const TrainHistory& h) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : h.epochs)
    epochs.push_back({{"epoch", e.epoch},
                      {"train_loss", e.train_loss},
                      {"val_loss", e.val_loss},
                      {"val_acc", e.val_accuracy}});
  return {{"epochs", epochs},
          {"best_epoch", h.best_epoch},
          {"stop_reason", h.stop_reason},
          {"steps", h.steps},
          {"max_clipped_norm", h.max_clipped_norm}};
}

WindowEvaluation evaluate_windows(const ParameterSet& params, const ModelConfig& config,
                                  std::span<const data::SpeedWindow> windows) {
  WindowEvaluation ev;
  if (windows.empty()) return ev;
  const auto batch = model::make_batch(windows, config.window);
  const auto logits = model::forward(params, config, batch, false, 0);
  const auto probs = nn::softmax_rows(logits);
  const std::size_t C = config.n_classes;
  std::size_t correct = 0;
  double loss = 0.0;
  for (std::size_t i = 0; i < batch.size; ++i) {
    std::vector<double> row(probs.data() + i * C, probs.data() + (i + 1) * C);
    const int pred = model::argmax(row);
    ev.predictions.push_back(*mode_from_ordinal(pred));
    correct += pred == batch.labels[i] ? 1 : 0;
    loss -= std::log(std::max(row[static_cast<std::size_t>(batch.labels[i])], 1e-30));
  }
  ev.accuracy = static_cast<double>(correct) / static_cast<double>(batch.size);
  ev.loss = loss / static_cast<double>(batch.size);
  return ev;
}

TrainResult train(ParameterSet params, const ModelConfig& base_config,
                  std::span<const data::SpeedWindow> train_windows,
                  std::span<const data::SpeedWindow> val_windows, const TrainConfig& tc,
                  const std::set<std::string>& trainable_in) {
  tc.validate();
  if (train_windows.empty()) throw DataError("train: no training windows");
  if (val_windows.empty()) throw DataError("train: no validation windows");
  ModelConfig config = base_config;
  if (tc.dropout) config.dropout = *tc.dropout;
  model::check_parameters(params, config);

  std::set<std::string> trainable = trainable_in;
  if (trainable.empty())
    for (const auto& [name, _] : params) trainable.insert(name);
  for (const auto& name : trainable)
    if (!params.contains(name)) throw std::invalid_argument("train: unknown parameter " + name);

  const std::size_t n = train_windows.size();
  const std::size_t bs = std::min(tc.resolved_batch_size(n), n);
  const std::size_t steps_per_epoch = (n + bs - 1) / bs;
  const std::size_t total_steps = steps_per_epoch * tc.max_epochs;
  spdlog::info("training on {} windows (validation {}), batch {}, {} steps/epoch", n,
               val_windows.size(), bs, steps_per_epoch);

  std::map<std::string, nn::AdamState> states;
  nn::AdamWConfig opt{tc.lr, tc.beta1, tc.beta2, tc.eps, tc.weight_decay};
  const auto all = model::make_batch(train_windows, config.window);

  TrainResult result;
  result.params = params;
  double best_acc = -1.0;
  std::size_t since_best = 0;
  std::size_t step = 0;
  std::vector<std::size_t> order(n);

  for (std::size_t epoch = 1; epoch <= tc.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(derive_seed(tc.seed, "shuffle"), static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order.begin(), order.end());

    double loss_sum = 0.0;
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      const std::size_t begin = s * bs, end = std::min(n, begin + bs);
      const std::size_t B = end - begin, T = config.window;
      double loss = 0.0;
      try {
        nn::Tape<float> tape;
        std::map<std::string, nn::Var> vars;
        for (const auto& [name, value] : params)
          vars.emplace(name, tape.leaf(value, trainable.contains(name)));
        nn::Tensor<float> input({B, T, 1});
        std::vector<std::uint8_t> mask(B * T);
        std::vector<int> labels(B);
        for (std::size_t i = 0; i < B; ++i) {
          const std::size_t w = order[begin + i];
          std::copy_n(all.speeds.begin() + w * T, T, input.data() + i * T);
          std::copy_n(all.mask.begin() + w * T, T, mask.begin() + i * T);
          labels[i] = all.labels[w];
        }
        const auto g = model::forward_graph(tape, vars, config, tape.constant(std::move(input)), mask,
                                            true, derive_seed(derive_seed(tc.seed, "dropout"), step));
        const nn::Var l = nn::cross_entropy(tape, g.logits, labels);
        loss = tape.value(l)[0];
        tape.backward(l);

        std::vector<std::span<float>> grads;
        std::vector<std::string> names;
        for (const auto& name : trainable) {
          grads.push_back(tape.grad(vars.at(name)).values());
          names.push_back(name);
        }
        nn::clip_gradients<float>(grads, tc.clip_norm);
        result.history.max_clipped_norm =
            std::max(result.history.max_clipped_norm, nn::global_norm<float>(grads));
        opt.lr = lr_schedule(step, total_steps, tc.warmup_steps, tc.lr);
        for (std::size_t k = 0; k < names.size(); ++k)
          nn::adamw_step<float>(params.at(names[k]).values(), grads[k], states[names[k]], opt);
      } catch (const NumericError& e) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(step) + ": " + e.what());
      }
      loss_sum += loss * static_cast<double>(B);
      ++step;
    }

    const auto val = evaluate_windows(params, config, val_windows);
    EpochRecord rec{epoch, loss_sum / static_cast<double>(n), val.loss, val.accuracy};
    result.history.epochs.push_back(rec);
    spdlog::info("epoch {:>3}  train_loss {:.4f}  val_loss {:.4f}  val_acc {:.4f}", epoch,
                 rec.train_loss, rec.val_loss, rec.val_accuracy);
    if (val.accuracy > best_acc) {
      best_acc = val.accuracy;
      result.history.best_epoch = epoch;
      result.params = params;
      since_best = 0;
    } else if (++since_best >= tc.patience) {
      result.history.stop_reason = "early_stop";
      break;
    }
  }
  if (result.history.stop_reason.empty()) result.history.stop_reason = "max_epochs";
  result.history.steps = step;
  return result;
}

TrainConfig finetune_defaults() {
  TrainConfig c;
  c.max_epochs = 20;
  return c;
}

TrainResult finetune(ParameterSet params, const ModelConfig& config,
                     std::span<const data::SpeedWindow> train_windows,
                     std::span<const data::SpeedWindow> val_windows, model::FreezePolicy policy,
                     const TrainConfig& tc) {
  for (auto set : {train_windows, val_windows})
    for (const auto& w : set)
      if (w.length() != config.window)
        throw ShapeError("finetune: checkpoint expects windows of length " +
                         std::to_string(config.window) + ", data has " +
                         std::to_string(w.length()));
  const auto trainable = model::set_freeze_policy(params, config, policy, tc.seed);
  return train(std::move(params), config, train_windows, val_windows, tc, trainable);
}

CrossValidation cross_validate(std::span<const data::SpeedWindow> windows, std::size_t k,
                               const ModelConfig& config, const TrainConfig& tc) {
  if (k < 2) throw std::invalid_argument("cross_validate: k must be >= 2");
  const auto ids = data::unique_trip_ids(windows);
  const auto folds = data::kfold_by_trip(ids, k, tc.seed);
  CrossValidation cv;
  std::vector<double> accuracies;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    std::vector<std::string> rest;
    for (std::size_t g = 0; g < folds.size(); ++g)
      if (g != f) rest.insert(rest.end(), folds[g].begin(), folds[g].end());
    std::sort(rest.begin(), rest.end());
    Rng rng(derive_seed(derive_seed(tc.seed, "cv.val"), static_cast<std::uint64_t>(f)));
    rng.shuffle(rest.begin(), rest.end());
    const std::size_t n_val = std::max<std::size_t>(1, (rest.size() + 5) / 10);
    if (rest.size() <= n_val) throw DataError("cross_validate: too few trips for a validation slice");
    std::vector<std::string> val_ids(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::vector<std::string> train_ids(rest.begin() + static_cast<std::ptrdiff_t>(n_val), rest.end());

    const auto train_w = data::select_trips(windows, train_ids);
    const auto val_w = data::select_trips(windows, val_ids);
    const auto test_w = data::select_trips(windows, folds[f]);
    TrainConfig fold_tc = tc;
    fold_tc.seed = derive_seed(derive_seed(tc.seed, "cv.fold"), static_cast<std::uint64_t>(f));
    spdlog::info("fold {}/{}: {} train, {} val, {} test windows", f + 1, folds.size(),
                 train_w.size(), val_w.size(), test_w.size());
    auto trained =
        train(model::init_model(config, fold_tc.seed), config, train_w, val_w, fold_tc);
    const auto ev = evaluate_windows(trained.params, config, test_w);
    std::vector<Mode> truth;
    for (const auto& w : test_w) truth.push_back(w.label);
    FoldResult fr{folds[f], eval::metrics_from_confusion(eval::confusion_matrix(truth, ev.predictions)),
                  std::move(trained.history)};
    accuracies.push_back(fr.metrics.accuracy);
    cv.folds.push_back(std::move(fr));
  }
  cv.accuracy = eval::cv_summary(accuracies);
  return cv;
}

}  // namespace speedmode::train
