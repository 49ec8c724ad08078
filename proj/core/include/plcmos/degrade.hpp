#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>

#include "plcmos/audio.hpp"
#include "plcmos/traces.hpp"

namespace plcmos {

enum class FillMode
{
  zero,
  oracle,
};

std::string_view to_string(FillMode mode) noexcept;
FillMode fill_mode_from_string(std::string_view name);

struct DegradedClip
{
  AudioClip audio;
  TraceSegment trace;
  FillMode fill_mode = FillMode::zero;
};

/// Samples covered by one packet at 16 kHz; throws unless integral.
std::size_t samples_per_packet(double packet_ms);

/// Contiguous slice of target_samples at a seeded random offset.
AudioClip cut_segment(const AudioClip& clip, std::size_t target_samples, std::uint64_t rng_seed);

DegradedClip apply_trace(const AudioClip& clip, const TraceSegment& trace, FillMode mode);

} // namespace plcmos
