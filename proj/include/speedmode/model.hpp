#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "speedmode/dataset.hpp"
#include "speedmode/modes.hpp"
#include "speedmode/nn/ops.hpp"

namespace speedmode::model {

enum class PositionalScheme { Rope, Sinusoidal };
enum class FfnScheme { SwiGLU, ReLU };
enum class EmbedActivation { None, ReLU };

/// Rounds 8d/3 to the nearest multiple of 8.
std::size_t default_ffn_width(std::size_t d_model);

struct ModelConfig {
  std::size_t d_model = 128;
  std::size_t n_layers = 4;
  std::size_t n_heads = 8;
  std::size_t n_kv_heads = 4;
  std::size_t d_ff = 344;
  std::size_t window = data::kDefaultWindow;
  std::size_t n_classes = kNumModes;
  double dropout = 0.1;
  PositionalScheme positional = PositionalScheme::Rope;
  FfnScheme ffn = FfnScheme::SwiGLU;
  EmbedActivation embed_activation = EmbedActivation::None;

  /// Base architecture at a given width/depth with the default FFN width.
  static ModelConfig base(std::size_t d_model = 128, std::size_t n_layers = 4);
  /// Sinusoidal positions, standard multi-head attention, ReLU embedding
  /// and ReLU FFN (d_ff = 4d).
  static ModelConfig legacy(std::size_t d_model = 128, std::size_t n_layers = 4);

  std::size_t head_dim() const { return d_model / n_heads; }
  /// Throws std::invalid_argument on divisibility or range violations.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

nlohmann::json config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const nlohmann::json& j);

using ParameterSet = std::map<std::string, nn::Tensor<float>>;

struct ParameterSpec {
  std::string name;
  nn::Shape shape;
  enum class Init { Uniform, One, Zero } init = Init::Uniform;
  std::size_t fan_in = 1;
};

/// Every parameter array of the configuration, in a fixed order.
std::vector<ParameterSpec> parameter_specs(const ModelConfig& config);
std::size_t count_parameters(const ModelConfig& config);

/// Weights and non-classifier biases ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
/// each array seeded from (seed, name). Layer-norm gains 1, their biases 0;
/// classifier bias 0.
ParameterSet init_model(const ModelConfig& config, std::uint64_t seed);

/// Throws ShapeError when params do not match the configuration.
void check_parameters(const ParameterSet& params, const ModelConfig& config);

/// Dense batch: speeds [size, length] with the validity mask alongside.
struct WindowBatch {
  std::size_t size = 0;
  std::size_t length = 0;
  std::vector<float> speeds;
  std::vector<std::uint8_t> mask;
  std::vector<int> labels;
};

/// Gathers windows (all of them when indices is empty). Every window must
/// have the given length and at least one valid sample.
WindowBatch make_batch(std::span<const data::SpeedWindow> windows, std::size_t length,
                       std::span<const std::size_t> indices = {});

template <typename T>
struct ForwardGraph {
  nn::Var logits;        // [B, C]
  nn::Var pool_weights;  // [B, T]
  nn::Var pooled;        // [B, d]
  nn::Var encoded;       // [B, T, d] after the final layer norm
};

/// Records the full network on the tape. params maps parameter names to
/// tape variables; input is [B, T, 1] in km/h; mask is [B*T].
template <typename T>
ForwardGraph<T> forward_graph(nn::Tape<T>& tape, const std::map<std::string, nn::Var>& params,
                              const ModelConfig& config, nn::Var input,
                              std::span<const std::uint8_t> mask, bool training,
                              std::uint64_t seed);

/// Places params on the tape, as trainable leaves when requires_grad.
template <typename T>
std::map<std::string, nn::Var> place_parameters(nn::Tape<T>& tape, const ParameterSet& params,
                                                bool requires_grad);

/// Logits [B, C] for a batch, evaluated in chunks.
nn::Tensor<float> forward(const ParameterSet& params, const ModelConfig& config,
                          const WindowBatch& batch, bool training = false,
                          std::uint64_t seed = 0);
nn::Tensor<float> forward(const ParameterSet& params, const ModelConfig& config,
                          std::span<const data::SpeedWindow> windows, bool training = false,
                          std::uint64_t seed = 0);

std::array<double, kNumModes> predict_window(const ParameterSet& params, const ModelConfig& config,
                                             const data::SpeedWindow& window);
/// Probabilities [B, C] for many windows.
nn::Tensor<float> predict_proba(const ParameterSet& params, const ModelConfig& config,
                                std::span<const data::SpeedWindow> windows);

/// Argmax of the mean window probability; ties go to the lowest ordinal.
Mode aggregate_trip(std::span<const std::array<double, kNumModes>> window_probs);
Mode predict_trip(const ParameterSet& params, const ModelConfig& config,
                  std::span<const data::SpeedWindow> trip_windows);

/// Lowest ordinal among maximal entries.
int argmax(std::span<const double> values);

enum class FreezePolicy { None, FreezeEmbeddings, FreezeAttention, ReinitLastBlock };
std::string_view freeze_policy_name(FreezePolicy policy);
std::optional<FreezePolicy> freeze_policy_from_name(std::string_view name);

/// Applies the policy and returns the names the optimizer may update.
/// ReinitLastBlock re-initializes block L-1 from `seed` and leaves every
/// parameter trainable.
std::set<std::string> set_freeze_policy(ParameterSet& params, const ModelConfig& config,
                                        FreezePolicy policy, std::uint64_t seed);

}  // namespace speedmode::model
