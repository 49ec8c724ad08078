#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace plcmos {

inline constexpr double default_packet_ms = 20.0;

struct Packet
{
  std::uint32_t seq = 0;
  bool lost = false;
};

/// Per-packet loss flags for one audio stream. seq runs 0..N-1.
class PacketTrace
{
public:
  PacketTrace() = default;
  PacketTrace(std::vector<Packet> packets, double packet_ms);

  /// Builds a trace from loss flags, numbering packets from 0.
  static PacketTrace from_flags(const std::vector<bool>& lost, double packet_ms);

  const std::vector<Packet>& packets() const noexcept { return m_packets; }
  std::size_t size() const noexcept { return m_packets.size(); }
  bool empty() const noexcept { return m_packets.empty(); }
  double packet_ms() const noexcept { return m_packet_ms; }
  double duration_ms() const noexcept { return static_cast<double>(size()) * m_packet_ms; }
  bool lost(std::size_t i) const { return m_packets.at(i).lost; }
  std::size_t lost_count() const noexcept;

  /// Packets [start, start + count), renumbered from 0.
  PacketTrace slice(std::size_t start, std::size_t count) const;

  friend bool operator==(const PacketTrace& a, const PacketTrace& b) noexcept;

private:
  std::vector<Packet> m_packets;
  double m_packet_ms = default_packet_ms;
};

/// A fixed-duration window of a source trace.
struct TraceSegment
{
  std::string source_id;
  std::size_t start_packet = 0;
  PacketTrace packets;

  double duration_ms() const noexcept { return packets.duration_ms(); }
};

struct BurstStats
{
  double loss_percent = 0.0;
  double max_burst_ms = 0.0;
  double median_burst_ms = 0.0;
  std::size_t burst_count = 0;
};

struct GilbertParams
{
  double p_good_to_bad = 0.0;
  double p_bad_to_good = 1.0;
  double loss_in_bad = 1.0;
  double loss_in_good = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
  /// Long-run loss probability of the chain.
  double stationary_loss_rate() const;
};

enum class SamplingMode
{
  basic,
  heavy_loss,
  long_bursts,
};

std::string_view to_string(SamplingMode mode) noexcept;
SamplingMode sampling_mode_from_string(std::string_view name);

struct SamplingSpec
{
  SamplingMode mode = SamplingMode::basic;
  double segment_ms = 10'000.0;
  std::size_t bucket_count = 14;
  std::size_t per_bucket = 100;
  std::array<std::size_t, 3> heavy_per_bucket{100, 50, 25};
  std::size_t long_burst_total = 500;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

struct SampledSegment
{
  TraceSegment segment;
  BurstStats stats;
  std::string bucket;
};

struct BucketShortfall
{
  std::string bucket;
  std::size_t requested = 0;
  std::size_t available = 0;
};

struct SampleResult
{
  std::vector<SampledSegment> selected;
  std::vector<BucketShortfall> shortfalls;
};

struct SegmentOptions
{
  std::string source_id = "trace";
  /// Number of segments to extract; 0 means one per non-overlapping window.
  std::size_t target_count = 0;
  /// Offset draws allowed per requested segment.
  std::size_t retry_factor = 10;
};

/// Parses the `#plctrace v1` text format.
PacketTrace parse_trace(std::string_view text);
std::string format_trace(const PacketTrace& trace);

PacketTrace synth_gilbert(const GilbertParams& params, std::size_t n_packets, double packet_ms = default_packet_ms);

/// Random windows of exactly segment_ms containing at least one loss.
std::vector<TraceSegment> segment_trace(const PacketTrace& trace,
                                        double segment_ms,
                                        std::uint64_t rng_seed,
                                        const SegmentOptions& options = {});

BurstStats burst_stats(const PacketTrace& trace);
BurstStats burst_stats(const TraceSegment& segment);

/// Burst run lengths in packets, in order of occurrence.
std::vector<std::size_t> burst_runs(const PacketTrace& trace);

/// Mode filter predicates, exposed so callers can re-verify sampler output.
bool passes_basic(const BurstStats& s) noexcept;
/// Index of the heavy-loss subset (0..2), or nullopt when discarded.
std::optional<std::size_t> heavy_subset(const BurstStats& s) noexcept;
bool passes_long_bursts(const BurstStats& s) noexcept;
bool satisfies_mode(SamplingMode mode, const BurstStats& s) noexcept;

/// Interior quantile edges splitting `values` into bucket_count buckets.
std::vector<double> quantile_edges(std::vector<double> values, std::size_t bucket_count);
/// Bucket of x given edges; values on an edge go to the lower bucket.
std::size_t bucket_of(double x, const std::vector<double>& edges) noexcept;

SampleResult stratified_sample(const std::vector<TraceSegment>& candidates, const SamplingSpec& spec);

nlohmann::json to_json(const BurstStats& s);
nlohmann::json sample_manifest(const SampleResult& result, const SamplingSpec& spec);

nlohmann::json to_json(const SamplingSpec& spec);
SamplingSpec sampling_spec_from_json(const nlohmann::json& j, SamplingSpec base = {});
nlohmann::json to_json(const GilbertParams& params);
GilbertParams gilbert_params_from_json(const nlohmann::json& j, GilbertParams base = {});

} // namespace plcmos
