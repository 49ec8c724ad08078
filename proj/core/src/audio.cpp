#include "plcmos/audio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <string_view>

#include "plcmos/error.hpp"

namespace plcmos {

namespace {

std::uint32_t read_u32(std::span<const std::uint8_t> b, std::size_t at)
{
  return static_cast<std::uint32_t>(b[at]) | (static_cast<std::uint32_t>(b[at + 1]) << 8) |
         (static_cast<std::uint32_t>(b[at + 2]) << 16) | (static_cast<std::uint32_t>(b[at + 3]) << 24);
}

std::uint16_t read_u16(std::span<const std::uint8_t> b, std::size_t at)
{
  return static_cast<std::uint16_t>(b[at] | (b[at + 1] << 8));
}

bool tag_is(std::span<const std::uint8_t> b, std::size_t at, std::string_view tag)
{
  return std::equal(tag.begin(), tag.end(), b.begin() + static_cast<std::ptrdiff_t>(at),
                    [](char c, std::uint8_t u) { return static_cast<std::uint8_t>(c) == u; });
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v)
{
  for (int i = 0; i < 4; ++i)
    out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v)
{
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_tag(std::vector<std::uint8_t>& out, std::string_view tag)
{
  out.insert(out.end(), tag.begin(), tag.end());
}

} // namespace

AudioClip::AudioClip(std::vector<double> samples, int rate_hz)
  : m_samples(std::move(samples))
  , m_rate{rate_hz}
{
  if (rate_hz != sample_rate_hz)
    throw InvalidArgument("audio must be sampled at 16000 Hz, got " + std::to_string(rate_hz));
  if (!std::all_of(m_samples.begin(), m_samples.end(), [](double x) { return std::isfinite(x); }))
    throw InvalidArgument("audio contains non-finite samples");
}

double AudioClip::energy() const noexcept
{
  return std::inner_product(m_samples.begin(), m_samples.end(), m_samples.begin(), 0.0);
}

AudioClip decode_wav(std::span<const std::uint8_t> bytes)
{
  if (bytes.size() < 12 || !tag_is(bytes, 0, "RIFF") || !tag_is(bytes, 8, "WAVE"))
    throw Error("not a RIFF/WAVE file");

  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size())
  {
    const auto size = read_u32(bytes, pos + 4);
    const auto body = pos + 8;
    if (tag_is(bytes, pos, "fmt "))
    {
      if (size < 16 || body + 16 > bytes.size())
        throw Error("truncated fmt chunk");
      const auto format = read_u16(bytes, body);
      const auto channels = read_u16(bytes, body + 2);
      const auto rate = read_u32(bytes, body + 4);
      const auto bits = read_u16(bytes, body + 14);
      if (format != 1)
        throw Error("unsupported WAV encoding " + std::to_string(format) + " (PCM required)");
      if (channels != 1)
        throw Error("expected mono audio, got " + std::to_string(channels) + " channels");
      if (rate != static_cast<std::uint32_t>(sample_rate_hz))
        throw Error("expected 16000 Hz audio, got " + std::to_string(rate) + " Hz (no resampling)");
      if (bits != 16)
        throw Error("expected 16-bit samples, got " + std::to_string(bits));
      have_fmt = true;
    }
    else if (tag_is(bytes, pos, "data"))
    {
      if (!have_fmt)
        throw Error("data chunk before fmt chunk");
      if (size > bytes.size() - body)
        throw Error("truncated data chunk");
      if (size % 2 != 0)
        throw Error("odd data chunk size for 16-bit audio");
      std::vector<double> samples(size / 2);
      for (std::size_t i = 0; i < samples.size(); ++i)
        samples[i] = static_cast<std::int16_t>(read_u16(bytes, body + 2 * i)) / 32768.0;
      return AudioClip{std::move(samples)};
    }
    pos = body + size + (size & 1);
  }
  throw Error(have_fmt ? "missing data chunk" : "missing fmt chunk");
}

std::vector<std::uint8_t> encode_wav(const AudioClip& clip)
{
  const auto data_bytes = static_cast<std::uint32_t>(clip.size() * 2);
  std::vector<std::uint8_t> out;
  out.reserve(44 + data_bytes);
  put_tag(out, "RIFF");
  put_u32(out, 36 + data_bytes);
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put_u32(out, 16);
  put_u16(out, 1);
  put_u16(out, 1);
  put_u32(out, sample_rate_hz);
  put_u32(out, sample_rate_hz * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  put_tag(out, "data");
  put_u32(out, data_bytes);
  for (double x : clip.samples())
  {
    const double scaled = std::round(std::clamp(x, -1.0, 1.0) * 32768.0);
    put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0))));
  }
  return out;
}

AudioClip read_wav(const std::filesystem::path& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw Error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try
  {
    return decode_wav(bytes);
  }
  catch (const Error& e)
  {
    throw Error(path.string() + ": " + e.what());
  }
}

void write_wav(const std::filesystem::path& path, const AudioClip& clip)
{
  const auto bytes = encode_wav(clip);
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out)
    throw Error("short write to " + path.string());
}

} // namespace plcmos
