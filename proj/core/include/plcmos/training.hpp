#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "plcmos/audio.hpp"
#include "plcmos/features.hpp"
#include "plcmos/metrics.hpp"
#include "plcmos/model.hpp"

namespace plcmos {

enum class Split
{
  train,
  eval,
};

/// One rating of one clip. `id` is a rater id, or a unique vote id when the
/// rater is unknown.
struct VoteRecord
{
  std::string clip_path;
  double rating = 3.0;
  std::string id;
  std::string model_tag;
  Split split = Split::train;
};

/// Parses `clip_path,rating,id,model_tag,split` CSV with a header row.
std::vector<VoteRecord> parse_dataset_manifest(std::string_view csv);
std::vector<VoteRecord> read_dataset_manifest(const std::filesystem::path& path);

enum class Precision
{
  f32,
  f64,
};

enum class LrSchedule
{
  constant,
  cosine,
};

struct TrainConfig
{
  std::size_t epochs = 250;
  std::size_t batch_size = 16;
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.01;
  double eps = 1e-8;
  std::uint64_t rng_seed = 0;
  bool augment = true;
  Precision precision = Precision::f32;
  /// Off by default; for experiments only.
  LrSchedule schedule = LrSchedule::constant;
  double grad_clip_norm = 0.0;
  /// Evaluate the eval split every n epochs (0 disables).
  std::size_t eval_every = 1;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

double mse_loss(std::span<const double> predicted, std::span<const double> target);

/// One vote as the network sees it.
struct VoteExample
{
  const Spectrogram* spec = nullptr;
  RaterVector rater;
  double target = 3.0;
  std::uint64_t dropout_seed = 0;
};

template <class T>
struct BatchGradients
{
  double loss = 0.0;
  std::vector<double> scores;
  /// Head output before the score transform, and d(loss)/d(that).
  std::vector<double> logits;
  std::vector<double> dloss_dlogit;
  /// Input to the first head layer, per example.
  std::vector<std::vector<double>> head_inputs;
  ModelWeights<T> grads;
};

/// Mean squared error of the batch; dropout only in train mode.
template <class T>
double batch_loss(std::span<const VoteExample> batch, const ModelWeights<T>& weights, bool train_mode);

/// Reverse-mode gradients of batch_loss. Dropout masks follow each
/// example's dropout_seed, so a forward-only pass sees the same masks.
template <class T>
BatchGradients<T> backward(std::span<const VoteExample> batch, const ModelWeights<T>& weights, bool train_mode);

template <class T>
struct AdamState
{
  ModelWeights<T> m;
  ModelWeights<T> v;
  std::size_t step = 0;

  static AdamState init(const ModelConfig& config);
};

/// One AdamW step with decoupled weight decay and bias correction.
template <class T>
void adamw_update(ModelWeights<T>& weights, const ModelWeights<T>& grads, AdamState<T>& state, const TrainConfig& config, double lr);

template <class T>
double gradient_norm(const ModelWeights<T>& grads);

/// Clips and votes in memory. Votes reference clips by index.
struct TrainingSet
{
  struct Vote
  {
    std::size_t clip = 0;
    std::string id;
    double rating = 3.0;
  };

  std::vector<std::string> clip_names;
  std::vector<std::string> model_tags;
  std::vector<AudioClip> clips;
  std::vector<Vote> votes;

  std::size_t add_clip(std::string name, std::string model_tag, AudioClip clip);
};

/// Loads the clips of one split; relative clip paths resolve against base_dir.
TrainingSet load_training_set(const std::vector<VoteRecord>& records, Split split, const std::filesystem::path& base_dir);

struct EpochStats
{
  std::size_t epoch = 0;
  double train_mse = 0.0;
  std::optional<CorrelationReport> eval;
};

struct TrainCallbacks
{
  std::function<void(const EpochStats&)> on_epoch;
};

struct TrainResult
{
  ModelWeights<float> weights;
  std::vector<EpochStats> history;
};

TrainResult train(const TrainingSet& train_set,
                  const TrainingSet* eval_set,
                  const ModelConfig& model_config,
                  const TrainConfig& train_config,
                  const TrainCallbacks& callbacks = {});

/// Filewise agreement of model MOS with per-clip mean ratings.
CorrelationReport evaluate_training_set(const TrainingSet& set, const ModelWeights<float>& weights, std::uint64_t seed);

/// `epoch,train_mse[,eval_pcc,eval_srcc,eval_mae]`
std::string loss_history_csv(const std::vector<EpochStats>& history);

struct TensorCheck
{
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  bool pass = true;
};

struct GradcheckReport
{
  std::vector<TensorCheck> tensors;
  double tolerance = 0.0;
  bool pass = true;
  std::string worst_tensor;
  double max_rel_error = 0.0;
  double seconds = 0.0;
};

struct GradcheckOptions
{
  ModelConfig config = ModelConfig::tiny();
  double tolerance = 1e-3;
  double step = 1e-5;
  std::size_t frames = 8;
  std::size_t batch = 2;
  std::uint64_t seed = 0;
  bool train_mode = true;
  /// Applied to the analytic gradients before comparison; test hook.
  std::function<void(ModelWeights<double>&)> tamper;
};

/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8) per element,
/// central differences in double precision.
GradcheckReport gradcheck(const GradcheckOptions& options = {});

nlohmann::json to_json(const GradcheckReport& report);

} // namespace plcmos
