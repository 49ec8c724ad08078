#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include <unistd.h>

#include "plcmos/audio.hpp"
#include "plcmos/features.hpp"
#include "plcmos/random.hpp"
#include "plcmos/traces.hpp"
#include "plcmos/training.hpp"

namespace plcmos::test {

inline AudioClip sine(double hz, std::size_t n, double amplitude = 0.5)
{
  std::vector<double> s(n);
  for (std::size_t i = 0; i < n; ++i)
    s[i] = amplitude * std::sin(2.0 * std::numbers::pi * hz * static_cast<double>(i) / sample_rate_hz);
  return AudioClip{std::move(s)};
}

/// Uniform noise on a 16-bit grid so WAV round trips are exact.
inline AudioClip noise(std::size_t n, std::uint64_t seed, double amplitude = 0.5)
{
  Rng rng{seed};
  std::vector<double> s(n);
  for (auto& x : s)
    x = std::round(uniform_real(rng, -amplitude, amplitude) * 32768.0) / 32768.0;
  return AudioClip{std::move(s)};
}

/// Harmonic-rich test signal standing in for speech.
inline AudioClip voiced(std::size_t n, double f0, std::uint64_t seed)
{
  Rng rng{seed};
  std::vector<double> s(n);
  for (std::size_t i = 0; i < n; ++i)
  {
    const double t = static_cast<double>(i) / sample_rate_hz;
    double v = 0.0;
    for (int h = 1; h <= 8; ++h)
      v += std::sin(2.0 * std::numbers::pi * f0 * h * t) / h;
    const double envelope = 0.6 + 0.4 * std::sin(2.0 * std::numbers::pi * 3.0 * t);
    s[i] = 0.25 * envelope * v + 0.01 * uniform_real(rng, -1.0, 1.0);
  }
  return AudioClip{std::move(s)};
}

inline Spectrogram random_spectrogram(std::size_t frames, std::uint64_t seed, std::size_t bins = spectrum_bins)
{
  Rng rng{seed};
  Spectrogram s;
  s.frames = frames;
  s.bins = bins;
  s.values.resize(frames * bins);
  for (auto& v : s.values)
    v = standard_normal(rng);
  return s;
}

inline PacketTrace trace_with_losses(std::size_t n, const std::vector<std::size_t>& lost, double packet_ms = 20.0)
{
  std::vector<bool> flags(n, false);
  for (auto i : lost)
    flags.at(i) = true;
  return PacketTrace::from_flags(flags, packet_ms);
}

inline TraceSegment whole(const PacketTrace& t, std::string id = "t")
{
  return {std::move(id), 0, t};
}

/// Segments cut from Gilbert traces with spread-out loss parameters.
inline std::vector<TraceSegment> gilbert_pool(std::size_t traces, std::size_t per_trace, std::uint64_t seed)
{
  std::vector<TraceSegment> pool;
  for (std::size_t i = 0; i < traces; ++i)
  {
    Rng rng{derive_seed(seed, {i})};
    GilbertParams g{uniform_real(rng, 0.002, 0.12), uniform_real(rng, 0.1, 0.9), 1.0, 0.0, derive_seed(seed, {i, 1})};
    const auto t = synth_gilbert(g, 3000);
    SegmentOptions opt;
    opt.source_id = "g" + std::to_string(i);
    opt.target_count = per_trace;
    auto segs = segment_trace(t, 10'000, derive_seed(seed, {i, 2}), opt);
    pool.insert(pool.end(), segs.begin(), segs.end());
  }
  return pool;
}

/// Tone clips with two independent votes each from distinct raters.
inline TrainingSet overfit_set(std::size_t clips = 20, std::size_t votes_per_clip = 2, std::uint64_t seed = 42)
{
  TrainingSet set;
  Rng rng{seed};
  for (std::size_t c = 0; c < clips; ++c)
  {
    std::vector<double> s(4000);
    const double f = 200.0 + 150.0 * static_cast<double>(c);
    for (std::size_t i = 0; i < s.size(); ++i)
      s[i] = 0.3 * std::sin(2.0 * std::numbers::pi * f * static_cast<double>(i) / sample_rate_hz) + 0.05 * (uniform01(rng) - 0.5);
    set.add_clip("c" + std::to_string(c), "m" + std::to_string(c % 4), AudioClip{std::move(s)});
    for (std::size_t v = 0; v < votes_per_clip; ++v)
      set.votes.push_back({c, "r" + std::to_string(c) + "_" + std::to_string(v), static_cast<double>(1 + uniform_index(rng, 5))});
  }
  return set;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir
{
public:
  explicit TempDir(const std::string& tag)
  {
    static std::uint64_t counter = 0;
    m_path = std::filesystem::temp_directory_path() /
             ("plcmos_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(m_path);
    std::filesystem::create_directories(m_path);
  }
  ~TempDir() { std::filesystem::remove_all(m_path); }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const noexcept { return m_path; }
  std::filesystem::path operator/(const std::string& name) const { return m_path / name; }

private:
  std::filesystem::path m_path;
};

} // namespace plcmos::test
