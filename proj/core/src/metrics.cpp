#include "plcmos/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>

#include <nlohmann/json.hpp>

#include "plcmos/features.hpp"
#include "plcmos/random.hpp"

namespace plcmos {

namespace {

void require_pairs(std::span<const double> x, std::span<const double> y, std::size_t min_len, const char* op)
{
  if (x.size() != y.size())
    throw InvalidArgument(std::string{op} + ": length mismatch (" + std::to_string(x.size()) + " vs " +
                          std::to_string(y.size()) + ")");
  if (x.size() < min_len)
    throw InvalidArgument(std::string{op} + ": needs at least " + std::to_string(min_len) + " points");
}

double mean(std::span<const double> v)
{
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Linear interpolation between order statistics (R type 7).
double percentile(const std::vector<double>& sorted, double q)
{
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

double hz_to_mel(double hz)
{
  return 2595.0 * std::log10(1.0 + hz / 700.0);
}

double mel_to_hz(double mel)
{
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

// bands x spectrum_bins triangular weights, evenly spaced on the mel scale.
std::vector<std::vector<double>> mel_filterbank(const MelCepstrumOptions& o)
{
  const double lo = hz_to_mel(o.low_hz);
  const double hi = hz_to_mel(o.high_hz);
  std::vector<double> edges(o.mel_bands + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(o.mel_bands + 1));

  std::vector<std::vector<double>> bank(o.mel_bands, std::vector<double>(spectrum_bins, 0.0));
  for (std::size_t m = 0; m < o.mel_bands; ++m)
    for (std::size_t k = 0; k < spectrum_bins; ++k)
    {
      const double f = static_cast<double>(k) * sample_rate_hz / static_cast<double>(fft_size);
      if (f > edges[m] && f < edges[m + 1])
        bank[m][k] = (f - edges[m]) / (edges[m + 1] - edges[m]);
      else if (f >= edges[m + 1] && f < edges[m + 2])
        bank[m][k] = (edges[m + 2] - f) / (edges[m + 2] - edges[m + 1]);
    }
  return bank;
}

} // namespace

double pearson(std::span<const double> x, std::span<const double> y)
{
  require_pairs(x, y, 2, "pearson");
  const double mx = mean(x);
  const double my = mean(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
  {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0)
    throw UndefinedCorrelation("correlation is undefined for a constant vector");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<double> average_ranks(std::span<const double> x)
{
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < order.size();)
  {
    std::size_t j = i + 1;
    while (j < order.size() && x[order[j]] == x[order[i]])
      ++j;
    // Positions i..j-1 hold ranks i+1..j.
    const double rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      ranks[order[k]] = rank;
    i = j;
  }
  return ranks;
}

double spearman(std::span<const double> x, std::span<const double> y)
{
  require_pairs(x, y, 2, "spearman");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson(rx, ry);
}

double mae(std::span<const double> x, std::span<const double> y)
{
  require_pairs(x, y, 1, "mae");
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    sum += std::abs(x[i] - y[i]);
  return sum / static_cast<double>(x.size());
}

Aggregated aggregate(const std::vector<ScorePair>& pairs, AggregationLevel level)
{
  if (pairs.empty())
    throw InvalidArgument("aggregate needs at least one score pair");
  Aggregated out;
  if (level == AggregationLevel::filewise)
  {
    for (const auto& p : pairs)
    {
      out.labels.push_back(p.file_id);
      out.predicted.push_back(p.predicted);
      out.reference.push_back(p.reference_mos);
    }
    return out;
  }

  struct Sums
  {
    double predicted = 0.0, reference = 0.0;
    std::size_t n = 0;
  };
  std::map<std::string, Sums> models;
  for (const auto& p : pairs)
  {
    auto& s = models[p.model_tag];
    s.predicted += p.predicted;
    s.reference += p.reference_mos;
    ++s.n;
  }
  for (const auto& [tag, s] : models)
  {
    out.labels.push_back(tag);
    out.predicted.push_back(s.predicted / static_cast<double>(s.n));
    out.reference.push_back(s.reference / static_cast<double>(s.n));
  }
  return out;
}

ConfidenceInterval bootstrap_ci(std::span<const double> x,
                                std::span<const double> y,
                                Statistic statistic,
                                std::size_t n_resamples,
                                std::uint64_t seed)
{
  require_pairs(x, y, 10, "bootstrap_ci");
  if (n_resamples < 1)
    throw InvalidArgument("bootstrap_ci needs at least one resample");

  const std::size_t n = x.size();
  std::vector<double> stats;
  stats.reserve(n_resamples);
  std::vector<double> rx(n), ry(n);
  ConfidenceInterval ci;
  for (std::size_t b = 0; b < n_resamples; ++b)
  {
    Rng rng{derive_seed(seed, {b})};
    for (std::size_t i = 0; i < n; ++i)
    {
      const auto j = static_cast<std::size_t>(uniform_index(rng, n));
      rx[i] = x[j];
      ry[i] = y[j];
    }
    try
    {
      stats.push_back(statistic == Statistic::pcc ? pearson(rx, ry) : spearman(rx, ry));
    }
    catch (const UndefinedCorrelation&)
    {
      ++ci.skipped;
    }
  }
  if (ci.skipped * 10 > n_resamples)
    throw Error("bootstrap: " + std::to_string(ci.skipped) + " of " + std::to_string(n_resamples) +
                " resamples were degenerate");
  std::sort(stats.begin(), stats.end());
  ci.low = percentile(stats, 0.025);
  ci.high = percentile(stats, 0.975);
  return ci;
}

CorrelationReport correlation_report(std::span<const double> predicted,
                                     std::span<const double> reference,
                                     std::uint64_t bootstrap_seed,
                                     std::size_t n_resamples)
{
  CorrelationReport r;
  r.n = predicted.size();
  r.pcc = pearson(predicted, reference);
  r.srcc = spearman(predicted, reference);
  r.mae = mae(predicted, reference);
  if (r.n >= 10 && n_resamples > 0)
  {
    r.pcc_ci = bootstrap_ci(predicted, reference, Statistic::pcc, n_resamples, derive_seed(bootstrap_seed, {0}));
    r.srcc_ci = bootstrap_ci(predicted, reference, Statistic::srcc, n_resamples, derive_seed(bootstrap_seed, {1}));
  }
  return r;
}

nlohmann::json to_json(const CorrelationReport& r)
{
  nlohmann::json j = {{"pcc", r.pcc}, {"srcc", r.srcc}, {"mae", r.mae}, {"n", r.n}};
  if (r.pcc_ci)
    j["pcc_ci95"] = {r.pcc_ci->low, r.pcc_ci->high};
  if (r.srcc_ci)
    j["srcc_ci95"] = {r.srcc_ci->low, r.srcc_ci->high};
  return j;
}

std::vector<std::vector<double>> mel_cepstra(const AudioClip& clip, const MelCepstrumOptions& o)
{
  const auto frames = frame_count(clip.size());
  if (frames == 0)
    throw InvalidArgument("mel_cepstra needs at least one 512-sample frame");
  if (o.mel_bands < 1 || o.coefficients < 1 || o.coefficients > o.mel_bands)
    throw InvalidArgument("invalid mel cepstrum options");

  const auto bank = mel_filterbank(o);
  const auto M = static_cast<double>(o.mel_bands);
  std::vector<std::vector<double>> dct(o.coefficients, std::vector<double>(o.mel_bands));
  for (std::size_t k = 0; k < o.coefficients; ++k)
  {
    const double scale = std::sqrt((k == 0 ? 1.0 : 2.0) / M);
    for (std::size_t m = 0; m < o.mel_bands; ++m)
      dct[k][m] = scale * std::cos(std::numbers::pi * static_cast<double>(k) * (static_cast<double>(m) + 0.5) / M);
  }

  std::vector<std::vector<double>> out(frames, std::vector<double>(o.coefficients));
  std::vector<double> log_mel(o.mel_bands);
  for (std::size_t t = 0; t < frames; ++t)
  {
    const auto power = power_spectrum(clip.samples().subspan(t * frame_shift, fft_size));
    for (std::size_t m = 0; m < o.mel_bands; ++m)
    {
      const double e = std::inner_product(bank[m].begin(), bank[m].end(), power.begin(), 0.0);
      log_mel[m] = std::log(std::max(e, log_floor));
    }
    for (std::size_t k = 0; k < o.coefficients; ++k)
      out[t][k] = std::inner_product(dct[k].begin(), dct[k].end(), log_mel.begin(), 0.0);
  }
  return out;
}

double mcd(const AudioClip& reference, const AudioClip& degraded, const MelCepstrumOptions& options)
{
  if (reference.size() != degraded.size())
    throw InvalidArgument("mcd needs aligned clips of equal length (" + std::to_string(reference.size()) + " vs " +
                          std::to_string(degraded.size()) + ")");
  const auto a = mel_cepstra(reference, options);
  const auto b = mel_cepstra(degraded, options);
  const double db = 10.0 / std::numbers::ln10;
  double total = 0.0;
  for (std::size_t t = 0; t < a.size(); ++t)
  {
    double ss = 0.0;
    for (std::size_t k = 1; k < a[t].size(); ++k)
      ss += (a[t][k] - b[t][k]) * (a[t][k] - b[t][k]);
    total += db * std::sqrt(2.0 * ss);
  }
  return total / static_cast<double>(a.size());
}

} // namespace plcmos
