#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "plcmos/features.hpp"

namespace plcmos {

enum class Activation
{
  relu,
  identity, // test mode: makes the network piecewise-free for closed-form checks
};

enum class OutputTransform
{
  sigmoid,  // score = lo + (hi - lo) * sigmoid(x)
  identity, // test mode: score = x
};

/// Architecture hyperparameters. Defaults are the release architecture.
struct ModelConfig
{
  std::size_t input_bins = spectrum_bins;
  std::vector<std::size_t> conv_channels{32, 64, 64};
  std::size_t conv_kernel = 3;
  std::size_t time_dilation = 2;
  /// Total frequency reduction; 2x max pools after the first log2(n) conv layers.
  std::size_t freq_pool_total = 4;
  std::size_t proj_dim = 512;
  std::size_t proj_kernel_w = 1;
  std::size_t gru_hidden = 128;
  bool gru_bidirectional = true;
  std::size_t id_dim = 64;
  std::vector<std::size_t> id_mlp_sizes{128, 128, 128, 128, 64};
  std::vector<std::size_t> head_sizes{32, 32, 32, 32, 1};
  double dropout = 0.1;
  std::size_t n_virtual_raters = 25;
  double score_lo = 1.0;
  double score_hi = 5.0;
  Activation hidden_activation = Activation::relu;
  OutputTransform output_transform = OutputTransform::sigmoid;

  /// Small architecture for gradient checks and overfit tests.
  static ModelConfig tiny();

  void validate() const;
  std::size_t pool_layers() const noexcept;
  /// Frequency bins left after time-frequency pooling.
  std::size_t pooled_bins() const noexcept;
  /// Per-frame feature size entering the projection.
  std::size_t flattened_dim() const noexcept;
  std::size_t embedding_dim() const noexcept;
  /// Spectrogram frames needed for at least one projected frame.
  std::size_t min_frames() const noexcept;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

nlohmann::json to_json(const ModelConfig& config);
/// Reads a config; keys absent from `j` keep the values from `base`.
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {});
/// Stable hash of the canonical JSON form.
std::uint64_t config_hash(const ModelConfig& config);

struct TensorSpec
{
  std::string name;
  std::vector<std::size_t> shape;

  std::size_t size() const noexcept;
};

/// Every trainable tensor in canonical order.
std::vector<TensorSpec> tensor_specs(const ModelConfig& config);

struct ParamCount
{
  std::vector<TensorSpec> tensors;
  std::size_t total = 0;

  /// Sum over tensors whose name starts with prefix.
  std::size_t subtotal(std::string_view prefix) const noexcept;
};

/// Parameter count of the release model as published; kept as a reference.
inline constexpr std::size_t reference_param_count = 299'265;

ParamCount count_params(const ModelConfig& config);

template <class T>
struct Tensor
{
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<T> values;

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// Named tensors for a ModelConfig, in tensor_specs order.
template <class T>
class ModelWeights
{
public:
  ModelWeights() = default;

  static ModelWeights zeros(const ModelConfig& config);
  /// Fan-in scaled uniform init; biases start at zero.
  static ModelWeights random(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return m_config; }
  std::vector<Tensor<T>>& tensors() noexcept { return m_tensors; }
  const std::vector<Tensor<T>>& tensors() const noexcept { return m_tensors; }

  Tensor<T>& at(std::string_view name);
  const Tensor<T>& at(std::string_view name) const;

  std::size_t parameter_count() const noexcept;
  bool all_finite() const noexcept;

  template <class U>
  ModelWeights<U> cast() const
  {
    ModelWeights<U> out = ModelWeights<U>::zeros(m_config);
    for (std::size_t i = 0; i < m_tensors.size(); ++i)
      for (std::size_t k = 0; k < m_tensors[i].values.size(); ++k)
        out.tensors()[i].values[k] = static_cast<U>(m_tensors[i].values[k]);
    return out;
  }

  friend bool operator==(const ModelWeights&, const ModelWeights&) = default;

private:
  ModelConfig m_config;
  std::vector<Tensor<T>> m_tensors;
};

extern template class ModelWeights<float>;
extern template class ModelWeights<double>;

/// Rater embedding input; standard normal entries.
using RaterVector = std::vector<double>;

/// Hash-seeded standard normal draw; constant per id.
RaterVector id_to_vector(std::string_view id, std::size_t dim = 64);

/// Audio embedding: final GRU hidden states (forward, then backward).
template <class T>
std::vector<T> encode_audio(const Spectrogram& spec, const ModelWeights<T>& weights);

/// Vote score for one rater. Dropout is active only in train mode.
template <class T>
double predict_vote(const Spectrogram& spec,
                    const RaterVector& rater,
                    const ModelWeights<T>& weights,
                    bool train_mode = false,
                    std::uint64_t rng_seed = 0);

struct MosResult
{
  double mos = 0.0;
  std::vector<double> per_rater;

  double per_rater_stddev() const noexcept;
};

/// Averages the scores of n_virtual_raters standard-normal rater vectors.
template <class T>
MosResult infer_mos(const Spectrogram& spec, const ModelWeights<T>& weights, std::uint64_t inference_seed = 0);

inline constexpr std::string_view weight_magic = "PLCW1";
inline constexpr int weight_format_version = 1;

/// PLCW1 magic, one-line JSON header, little-endian float32 payload.
std::vector<std::uint8_t> save_weights(const ModelWeights<float>& weights);
ModelWeights<float> load_weights(std::span<const std::uint8_t> bytes);

} // namespace plcmos
