#include "plcmos/degrade.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "plcmos/error.hpp"
#include "plcmos/random.hpp"

namespace plcmos {

std::string_view to_string(FillMode mode) noexcept
{
  return mode == FillMode::zero ? "zero" : "oracle";
}

FillMode fill_mode_from_string(std::string_view name)
{
  if (name == "zero")
    return FillMode::zero;
  if (name == "oracle")
    return FillMode::oracle;
  throw InvalidArgument("unknown fill mode '" + std::string{name} + "'");
}

std::size_t samples_per_packet(double packet_ms)
{
  const double exact = packet_ms * sample_rate_hz / 1000.0;
  const double rounded = std::round(exact);
  if (rounded < 1.0 || std::abs(exact - rounded) > 1e-9)
    throw InvalidArgument("packet duration " + std::to_string(packet_ms) + " ms is not a whole number of samples");
  return static_cast<std::size_t>(rounded);
}

AudioClip cut_segment(const AudioClip& clip, std::size_t target_samples, std::uint64_t rng_seed)
{
  if (target_samples < 1)
    throw InvalidArgument("target_samples must be positive");
  if (clip.size() < target_samples)
    throw InvalidArgument("clip of " + std::to_string(clip.size()) + " samples is shorter than " +
                          std::to_string(target_samples));
  Rng rng{rng_seed};
  const auto offset = static_cast<std::size_t>(uniform_index(rng, clip.size() - target_samples + 1));
  const auto first = clip.samples().begin() + static_cast<std::ptrdiff_t>(offset);
  return AudioClip{std::vector<double>(first, first + static_cast<std::ptrdiff_t>(target_samples))};
}

DegradedClip apply_trace(const AudioClip& clip, const TraceSegment& trace, FillMode mode)
{
  const auto span = samples_per_packet(trace.packets.packet_ms());
  const auto expected = trace.packets.size() * span;
  if (clip.size() != expected)
    throw InvalidArgument("clip has " + std::to_string(clip.size()) + " samples but trace covers " +
                          std::to_string(expected));

  if (mode == FillMode::oracle)
    return {clip, trace, mode};

  std::vector<double> out(clip.samples().begin(), clip.samples().end());
  const auto& packets = trace.packets.packets();
  for (std::size_t i = 0; i < packets.size(); ++i)
    if (packets[i].lost)
      std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(i * span), span, 0.0);
  return {AudioClip{std::move(out)}, trace, mode};
}

} // namespace plcmos
