#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "plcmos/audio.hpp"
#include "plcmos/error.hpp"

namespace plcmos {

/// Correlation requested for a constant input vector.
class UndefinedCorrelation : public Error
{
public:
  using Error::Error;
};

double pearson(std::span<const double> x, std::span<const double> y);
/// Pearson correlation of average ranks.
double spearman(std::span<const double> x, std::span<const double> y);
double mae(std::span<const double> x, std::span<const double> y);

/// 1-based ranks; tied values share the mean of their rank span.
std::vector<double> average_ranks(std::span<const double> x);

struct ScorePair
{
  std::string file_id;
  std::string model_tag;
  double predicted = 0.0;
  double reference_mos = 0.0;
};

enum class AggregationLevel
{
  filewise,
  modelwise,
};

struct Aggregated
{
  std::vector<std::string> labels;
  std::vector<double> predicted;
  std::vector<double> reference;
};

/// Filewise: one point per pair. Modelwise: unweighted per-model means,
/// ordered by model tag.
Aggregated aggregate(const std::vector<ScorePair>& pairs, AggregationLevel level);

enum class Statistic
{
  pcc,
  srcc,
};

struct ConfidenceInterval
{
  double low = 0.0;
  double high = 0.0;
  std::size_t skipped = 0;
};

inline constexpr std::size_t default_bootstrap_resamples = 1000;

/// Percentile bootstrap over paired resamples, 95% two-sided.
ConfidenceInterval bootstrap_ci(std::span<const double> x,
                                std::span<const double> y,
                                Statistic statistic,
                                std::size_t n_resamples = default_bootstrap_resamples,
                                std::uint64_t seed = 0);

struct CorrelationReport
{
  double pcc = 0.0;
  double srcc = 0.0;
  double mae = 0.0;
  std::size_t n = 0;
  std::optional<ConfidenceInterval> pcc_ci;
  std::optional<ConfidenceInterval> srcc_ci;
};

/// Bootstrap CIs are attached when there are at least 10 points and
/// n_resamples is non-zero.
CorrelationReport correlation_report(std::span<const double> predicted,
                                     std::span<const double> reference,
                                     std::uint64_t bootstrap_seed = 0,
                                     std::size_t n_resamples = default_bootstrap_resamples);

nlohmann::json to_json(const CorrelationReport& r);

struct MelCepstrumOptions
{
  std::size_t mel_bands = 40;
  std::size_t coefficients = 13; // c0 included here, excluded from the distance
  double low_hz = 0.0;
  double high_hz = 8000.0;
};

/// Per-frame mel cepstra (frames x coefficients) on the model's STFT framing.
std::vector<std::vector<double>> mel_cepstra(const AudioClip& clip, const MelCepstrumOptions& options = {});

/// Mel-cepstral distortion in dB between aligned clips of equal length.
double mcd(const AudioClip& reference, const AudioClip& degraded, const MelCepstrumOptions& options = {});

} // namespace plcmos
