#include "speedmode/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "speedmode/error.hpp"
#include "speedmode/util.hpp"

namespace speedmode::model {

using nn::Shape;
using nn::Tape;
using nn::Tensor;
using nn::Var;

namespace {

constexpr std::size_t kInferenceChunk = 64;

std::string block_prefix(std::size_t l) { return "block" + std::to_string(l) + "."; }

std::string_view positional_name(PositionalScheme s) {
  return s == PositionalScheme::Rope ? "rope" : "sinusoidal";
}
std::string_view ffn_name(FfnScheme s) { return s == FfnScheme::SwiGLU ? "swiglu" : "relu"; }
std::string_view activation_name(EmbedActivation a) {
  return a == EmbedActivation::None ? "none" : "relu";
}

}  // namespace

std::size_t default_ffn_width(std::size_t d_model) {
  const double target = 8.0 * static_cast<double>(d_model) / 3.0;
  return static_cast<std::size_t>(std::llround(target / 8.0)) * 8;
}

ModelConfig ModelConfig::base(std::size_t d_model, std::size_t n_layers) {
  ModelConfig c;
  c.d_model = d_model;
  c.n_layers = n_layers;
  c.d_ff = default_ffn_width(d_model);
  return c;
}

ModelConfig ModelConfig::legacy(std::size_t d_model, std::size_t n_layers) {
  ModelConfig c = base(d_model, n_layers);
  c.n_kv_heads = c.n_heads;
  c.d_ff = 4 * d_model;
  c.positional = PositionalScheme::Sinusoidal;
  c.ffn = FfnScheme::ReLU;
  c.embed_activation = EmbedActivation::ReLU;
  return c;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("model config: " + msg); };
  if (d_model == 0 || n_layers == 0 || n_heads == 0 || n_kv_heads == 0 || d_ff == 0)
    fail("dimensions must be positive");
  if (d_model % n_heads != 0) fail("d_model must be divisible by n_heads");
  if (n_heads % n_kv_heads != 0) fail("n_heads must be divisible by n_kv_heads");
  if (window == 0) fail("window must be >= 1");
  if (n_classes != kNumModes) fail("n_classes must be " + std::to_string(kNumModes));
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must be in [0, 1)");
  if (positional == PositionalScheme::Rope && head_dim() % 2 != 0)
    fail("rotary embedding needs an even head dimension");
}

nlohmann::json config_to_json(const ModelConfig& c) {
  return nlohmann::json{{"d_model", c.d_model},
                        {"n_layers", c.n_layers},
                        {"n_heads", c.n_heads},
                        {"n_kv_heads", c.n_kv_heads},
                        {"d_ff", c.d_ff},
                        {"window", c.window},
                        {"n_classes", c.n_classes},
                        {"dropout", c.dropout},
                        {"positional", positional_name(c.positional)},
                        {"ffn", ffn_name(c.ffn)},
                        {"embed_activation", activation_name(c.embed_activation)}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.d_model = j.value("d_model", c.d_model);
    c.n_layers = j.value("n_layers", c.n_layers);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.n_kv_heads = j.value("n_kv_heads", c.n_kv_heads);
    c.d_ff = j.contains("d_ff") ? j.at("d_ff").get<std::size_t>() : default_ffn_width(c.d_model);
    c.window = j.value("window", c.window);
    c.n_classes = j.value("n_classes", c.n_classes);
    c.dropout = j.value("dropout", c.dropout);
    const auto pos = j.value("positional", std::string("rope"));
    const auto ffn = j.value("ffn", std::string("swiglu"));
    const auto act = j.value("embed_activation", std::string("none"));
    if (pos == "rope") c.positional = PositionalScheme::Rope;
    else if (pos == "sinusoidal") c.positional = PositionalScheme::Sinusoidal;
    else throw FormatError("unknown positional scheme '" + pos + "'");
    if (ffn == "swiglu") c.ffn = FfnScheme::SwiGLU;
    else if (ffn == "relu") c.ffn = FfnScheme::ReLU;
    else throw FormatError("unknown ffn scheme '" + ffn + "'");
    if (act == "none") c.embed_activation = EmbedActivation::None;
    else if (act == "relu") c.embed_activation = EmbedActivation::ReLU;
    else throw FormatError("unknown embedding activation '" + act + "'");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

std::vector<ParameterSpec> parameter_specs(const ModelConfig& c) {
  c.validate();
  using Init = ParameterSpec::Init;
  const std::size_t d = c.d_model, dk = c.head_dim();
  const std::size_t dq = c.n_heads * dk, dkv = c.n_kv_heads * dk;
  std::vector<ParameterSpec> specs;
  auto add = [&](std::string name, Shape shape, Init init, std::size_t fan_in) {
    specs.push_back({std::move(name), std::move(shape), init, fan_in});
  };
  add("embed.W", {1, d}, Init::Uniform, 1);
  add("embed.b", {d}, Init::Uniform, 1);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::string p = block_prefix(l);
    add(p + "ln1.g", {d}, Init::One, d);
    add(p + "ln1.b", {d}, Init::Zero, d);
    add(p + "attn.Wq", {d, dq}, Init::Uniform, d);
    add(p + "attn.Wk", {d, dkv}, Init::Uniform, d);
    add(p + "attn.Wv", {d, dkv}, Init::Uniform, d);
    add(p + "attn.Wo", {dq, d}, Init::Uniform, dq);
    add(p + "ln2.g", {d}, Init::One, d);
    add(p + "ln2.b", {d}, Init::Zero, d);
    if (c.ffn == FfnScheme::SwiGLU) {
      add(p + "ffn.W1", {d, c.d_ff}, Init::Uniform, d);
      add(p + "ffn.W2", {d, c.d_ff}, Init::Uniform, d);
      add(p + "ffn.W3", {c.d_ff, d}, Init::Uniform, c.d_ff);
    } else {
      add(p + "ffn.W1", {d, c.d_ff}, Init::Uniform, d);
      add(p + "ffn.b1", {c.d_ff}, Init::Uniform, d);
      add(p + "ffn.W2", {c.d_ff, d}, Init::Uniform, c.d_ff);
      add(p + "ffn.b2", {d}, Init::Uniform, c.d_ff);
    }
  }
  add("final_ln.g", {d}, Init::One, d);
  add("final_ln.b", {d}, Init::Zero, d);
  add("pool.w", {d, 1}, Init::Uniform, d);
  add("pool.b", {1}, Init::Uniform, d);
  add("classifier.W", {d, c.n_classes}, Init::Uniform, d);
  add("classifier.b", {c.n_classes}, Init::Zero, d);
  return specs;
}

std::size_t count_parameters(const ModelConfig& config) {
  std::size_t n = 0;
  for (const auto& s : parameter_specs(config)) n += nn::shape_size(s.shape);
  return n;
}

namespace {

Tensor<float> init_array(const ParameterSpec& spec, std::uint64_t seed) {
  Tensor<float> t(spec.shape);
  switch (spec.init) {
    case ParameterSpec::Init::One:
      t.fill(1.0f);
      break;
    case ParameterSpec::Init::Zero:
      break;
    case ParameterSpec::Init::Uniform: {
      Rng rng(derive_seed(seed, spec.name));
      const double bound = 1.0 / std::sqrt(static_cast<double>(spec.fan_in));
      for (auto& v : t.values()) v = static_cast<float>(rng.uniform(-bound, bound));
      break;
    }
  }
  return t;
}

}  // namespace

ParameterSet init_model(const ModelConfig& config, std::uint64_t seed) {
  ParameterSet params;
  for (const auto& spec : parameter_specs(config)) params.emplace(spec.name, init_array(spec, seed));
  return params;
}

void check_parameters(const ParameterSet& params, const ModelConfig& config) {
  const auto specs = parameter_specs(config);
  if (specs.size() != params.size())
    throw ShapeError("parameter set has " + std::to_string(params.size()) + " arrays, config needs " +
                     std::to_string(specs.size()));
  for (const auto& s : specs) {
    auto it = params.find(s.name);
    if (it == params.end()) throw ShapeError("missing parameter " + s.name);
    if (it->second.shape() != s.shape)
      throw ShapeError("parameter " + s.name + " has shape " + nn::shape_str(it->second.shape()) +
                       ", expected " + nn::shape_str(s.shape));
  }
}

WindowBatch make_batch(std::span<const data::SpeedWindow> windows, std::size_t length,
                       std::span<const std::size_t> indices) {
  WindowBatch b;
  b.size = indices.empty() ? windows.size() : indices.size();
  b.length = length;
  b.speeds.resize(b.size * length);
  b.mask.resize(b.size * length);
  b.labels.resize(b.size);
  for (std::size_t i = 0; i < b.size; ++i) {
    const auto& w = windows[indices.empty() ? i : indices[i]];
    if (w.length() != length)
      throw ShapeError("window of " + w.trip_id + " has length " + std::to_string(w.length()) +
                       ", model expects " + std::to_string(length));
    if (w.valid_count == 0 || w.valid_count > length)
      throw std::invalid_argument("window of " + w.trip_id + " has no valid samples");
    std::copy(w.speeds.begin(), w.speeds.end(), b.speeds.begin() + i * length);
    std::fill_n(b.mask.begin() + i * length, w.valid_count, std::uint8_t{1});
    b.labels[i] = ordinal(w.label);
  }
  return b;
}

template <typename T>
std::map<std::string, Var> place_parameters(Tape<T>& tape, const ParameterSet& params,
                                            bool requires_grad) {
  std::map<std::string, Var> vars;
  for (const auto& [name, value] : params) {
    if constexpr (std::is_same_v<T, float>) vars.emplace(name, tape.leaf(value, requires_grad));
    else vars.emplace(name, tape.leaf(value.template cast<T>(), requires_grad));
  }
  return vars;
}

template <typename T>
ForwardGraph<T> forward_graph(Tape<T>& tape, const std::map<std::string, Var>& p,
                              const ModelConfig& c, Var input, std::span<const std::uint8_t> mask,
                              bool training, std::uint64_t seed) {
  const auto& in_shape = tape.shape(input);
  if (in_shape.size() != 3 || in_shape[2] != 1)
    throw ShapeError("forward: input must be [B, T, 1], got " + nn::shape_str(in_shape));
  const std::size_t B = in_shape[0], T_len = in_shape[1], d = c.d_model;
  if (T_len != c.window)
    throw ShapeError("forward: window length " + std::to_string(T_len) + " but model expects " +
                     std::to_string(c.window));
  auto param = [&](const std::string& name) {
    auto it = p.find(name);
    if (it == p.end()) throw ShapeError("forward: missing parameter " + name);
    return it->second;
  };
  auto drop = [&](Var x, std::string_view site) {
    return nn::dropout(tape, x, c.dropout, training, derive_seed(seed, site));
  };

  Var x = nn::linear(tape, input, param("embed.W"), param("embed.b"));
  if (c.embed_activation == EmbedActivation::ReLU) x = nn::relu(tape, x);
  if (c.positional == PositionalScheme::Sinusoidal)
    x = nn::add_broadcast(tape, x, tape.constant(nn::sinusoidal_pe<T>(T_len, d)));

  const bool use_rope = c.positional == PositionalScheme::Rope;
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::string pre = block_prefix(l);
    Var h = nn::layer_norm(tape, x, param(pre + "ln1.g"), param(pre + "ln1.b"));
    nn::AttentionWeights w{param(pre + "attn.Wq"), param(pre + "attn.Wk"), param(pre + "attn.Wv"),
                           param(pre + "attn.Wo")};
    h = nn::gqa_attention(tape, h, w, c.n_heads, c.n_kv_heads, mask, use_rope);
    x = nn::add(tape, x, drop(h, pre + "attn.dropout"));

    h = nn::layer_norm(tape, x, param(pre + "ln2.g"), param(pre + "ln2.b"));
    if (c.ffn == FfnScheme::SwiGLU)
      h = nn::swiglu_ffn(tape, h, param(pre + "ffn.W1"), param(pre + "ffn.W2"),
                         param(pre + "ffn.W3"));
    else
      h = nn::relu_ffn(tape, h, param(pre + "ffn.W1"), param(pre + "ffn.b1"),
                       param(pre + "ffn.W2"), param(pre + "ffn.b2"));
    x = nn::add(tape, x, drop(h, pre + "ffn.dropout"));
  }

  ForwardGraph<T> g;
  g.encoded = nn::layer_norm(tape, x, param("final_ln.g"), param("final_ln.b"));
  Var scores = nn::linear(tape, g.encoded, param("pool.w"), param("pool.b"));
  scores = nn::reshape(tape, scores, Shape{B, T_len});
  g.pool_weights = nn::masked_softmax(tape, scores, mask);
  g.pooled = nn::weighted_sum(tape, g.pool_weights, g.encoded);
  Var c_vec = drop(g.pooled, "pool.dropout");
  g.logits = nn::linear(tape, c_vec, param("classifier.W"), param("classifier.b"));
  return g;
}

nn::Tensor<float> forward(const ParameterSet& params, const ModelConfig& config,
                          const WindowBatch& batch, bool training, std::uint64_t seed) {
  check_parameters(params, config);
  const std::size_t C = config.n_classes, L = batch.length;
  Tensor<float> logits({batch.size, C});
  for (std::size_t start = 0; start < batch.size; start += kInferenceChunk) {
    const std::size_t n = std::min(kInferenceChunk, batch.size - start);
    Tape<float> tape;
    auto vars = place_parameters(tape, params, false);
    Tensor<float> in({n, L, 1}, std::vector<float>(batch.speeds.begin() + start * L,
                                                   batch.speeds.begin() + (start + n) * L));
    Var x = tape.constant(std::move(in));
    std::span<const std::uint8_t> mask(batch.mask.data() + start * L, n * L);
    auto g = forward_graph(tape, vars, config, x, mask, training, derive_seed(seed, start));
    const auto& out = tape.value(g.logits);
    std::copy(out.data(), out.data() + n * C, logits.data() + start * C);
  }
  return logits;
}

nn::Tensor<float> forward(const ParameterSet& params, const ModelConfig& config,
                          std::span<const data::SpeedWindow> windows, bool training,
                          std::uint64_t seed) {
  return forward(params, config, make_batch(windows, config.window), training, seed);
}

nn::Tensor<float> predict_proba(const ParameterSet& params, const ModelConfig& config,
                                std::span<const data::SpeedWindow> windows) {
  return nn::softmax_rows(forward(params, config, windows, false, 0));
}

std::array<double, kNumModes> predict_window(const ParameterSet& params, const ModelConfig& config,
                                             const data::SpeedWindow& window) {
  const auto probs = predict_proba(params, config, std::span(&window, 1));
  std::array<double, kNumModes> out{};
  for (std::size_t c = 0; c < kNumModes; ++c) out[c] = probs[c];
  return out;
}

int argmax(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("argmax of empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return static_cast<int>(best);
}

Mode aggregate_trip(std::span<const std::array<double, kNumModes>> window_probs) {
  if (window_probs.empty()) throw std::invalid_argument("trip has no windows");
  std::array<double, kNumModes> mean{};
  for (const auto& p : window_probs)
    for (std::size_t c = 0; c < kNumModes; ++c) mean[c] += p[c];
  for (auto& m : mean) m /= static_cast<double>(window_probs.size());
  return *mode_from_ordinal(argmax(mean));
}

Mode predict_trip(const ParameterSet& params, const ModelConfig& config,
                  std::span<const data::SpeedWindow> trip_windows) {
  const auto probs = predict_proba(params, config, trip_windows);
  std::vector<std::array<double, kNumModes>> rows(trip_windows.size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t c = 0; c < kNumModes; ++c) rows[i][c] = probs[i * kNumModes + c];
  return aggregate_trip(rows);
}

std::string_view freeze_policy_name(FreezePolicy policy) {
  switch (policy) {
    case FreezePolicy::None: return "none";
    case FreezePolicy::FreezeEmbeddings: return "freeze_embeddings";
    case FreezePolicy::FreezeAttention: return "freeze_attention";
    case FreezePolicy::ReinitLastBlock: return "reinit_last_block";
  }
  return "none";
}

std::optional<FreezePolicy> freeze_policy_from_name(std::string_view name) {
  for (auto p : {FreezePolicy::None, FreezePolicy::FreezeEmbeddings, FreezePolicy::FreezeAttention,
                 FreezePolicy::ReinitLastBlock})
    if (freeze_policy_name(p) == name) return p;
  return std::nullopt;
}

std::set<std::string> set_freeze_policy(ParameterSet& params, const ModelConfig& config,
                                        FreezePolicy policy, std::uint64_t seed) {
  check_parameters(params, config);
  std::set<std::string> trainable;
  for (const auto& [name, _] : params) {
    if (policy == FreezePolicy::FreezeEmbeddings && name.starts_with("embed.")) continue;
    if (policy == FreezePolicy::FreezeAttention && name.find(".attn.") != std::string::npos)
      continue;
    trainable.insert(name);
  }
  if (policy == FreezePolicy::ReinitLastBlock) {
    const std::string last = block_prefix(config.n_layers - 1);
    const std::uint64_t fresh = derive_seed(seed, "reinit");
    for (const auto& spec : parameter_specs(config))
      if (spec.name.starts_with(last)) params[spec.name] = init_array(spec, fresh);
  }
  return trainable;
}

template std::map<std::string, Var> place_parameters<float>(Tape<float>&, const ParameterSet&,
                                                            bool);
template std::map<std::string, Var> place_parameters<double>(Tape<double>&, const ParameterSet&,
                                                             bool);
template ForwardGraph<float> forward_graph<float>(Tape<float>&, const std::map<std::string, Var>&,
                                                  const ModelConfig&, Var,
                                                  std::span<const std::uint8_t>, bool,
                                                  std::uint64_t);
template ForwardGraph<double> forward_graph<double>(Tape<double>&,
                                                    const std::map<std::string, Var>&,
                                                    const ModelConfig&, Var,
                                                    std::span<const std::uint8_t>, bool,
                                                    std::uint64_t);

}  // namespace speedmode::model
