#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "plcmos/audio.hpp"

namespace plcmos {

inline constexpr std::size_t fft_size = 512;
inline constexpr std::size_t frame_shift = 256;
inline constexpr std::size_t spectrum_bins = fft_size / 2 + 1;
inline constexpr double log_floor = 1e-12;

/// Time-major T x F matrix of log-power STFT values.
struct Spectrogram
{
  std::size_t frames = 0;
  std::size_t bins = spectrum_bins;
  std::vector<double> values;

  double at(std::size_t t, std::size_t f) const { return values[t * bins + f]; }
  std::span<const double> frame(std::size_t t) const { return {values.data() + t * bins, bins}; }
};

/// Frames produced for a clip of n samples (no padding).
constexpr std::size_t frame_count(std::size_t n_samples) noexcept
{
  return n_samples < fft_size ? 0 : (n_samples - fft_size) / frame_shift + 1;
}

/// Periodic Hamming window of length fft_size.
const std::vector<double>& hamming_window();

/// |X_k|^2 for one frame of fft_size samples, window applied.
std::vector<double> power_spectrum(std::span<const double> frame);

Spectrogram logpow_spectrogram(const AudioClip& clip);

struct Microaugmentation
{
  std::size_t trim = 0;
  double gain_db = 0.0;
};

inline constexpr std::size_t max_trim_samples = 10;
inline constexpr double max_attenuation_db = 3.0;

Microaugmentation draw_microaugmentation(std::uint64_t rng_seed);
AudioClip microaugment(const AudioClip& clip, const Microaugmentation& aug);
AudioClip microaugment(const AudioClip& clip, std::uint64_t rng_seed);

/// One-line JSON header, newline, then little-endian float32 values.
std::vector<std::uint8_t> dump_features(const Spectrogram& spec);
Spectrogram load_feature_dump(std::span<const std::uint8_t> bytes);

} // namespace plcmos
