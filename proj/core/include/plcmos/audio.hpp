#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace plcmos {

inline constexpr int sample_rate_hz = 16'000;

/// Mono audio at 16 kHz, samples nominally in [-1, 1].
class AudioClip
{
public:
  AudioClip() = default;
  explicit AudioClip(std::vector<double> samples, int rate_hz = sample_rate_hz);

  std::span<const double> samples() const noexcept { return m_samples; }
  std::size_t size() const noexcept { return m_samples.size(); }
  int sample_rate() const noexcept { return m_rate; }
  double energy() const noexcept;

  friend bool operator==(const AudioClip&, const AudioClip&) = default;

private:
  std::vector<double> m_samples;
  int m_rate = sample_rate_hz;
};

// Canonical 44-byte RIFF header, PCM, mono, 16-bit, 16 kHz only.
AudioClip decode_wav(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_wav(const AudioClip& clip);

AudioClip read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const AudioClip& clip);

} // namespace plcmos
