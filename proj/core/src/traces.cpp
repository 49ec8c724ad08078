#include "plcmos/traces.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "plcmos/error.hpp"
#include "plcmos/random.hpp"

namespace plcmos {

namespace {

constexpr std::string_view trace_magic = "#plctrace v1";

// Burst-length interval bounds in ms; intervals are half-open (lo, hi].
constexpr double basic_max_burst_ms = 120.0;
constexpr std::array<double, 4> heavy_edges_ms{0.0, 120.0, 320.0, 1000.0};
constexpr double long_min_max_burst_ms = 120.0;
constexpr double long_max_max_burst_ms = 300.0;
constexpr double long_min_median_ms = 80.0;
constexpr double long_min_loss_percent = 10.0;
constexpr double long_max_loss_percent = 70.0;

std::string_view trim(std::string_view s) noexcept
{
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r'))
    s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

template <class Int>
bool parse_int(std::string_view s, Int& out) noexcept
{
  s = trim(s);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size();
}

bool parse_real(std::string_view s, double& out) noexcept
{
  s = trim(s);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size();
}

std::size_t packets_for(double duration_ms, double packet_ms)
{
  const double exact = duration_ms / packet_ms;
  const double rounded = std::round(exact);
  if (rounded < 1.0 || std::abs(exact - rounded) > 1e-9 * std::max(1.0, exact))
    throw InvalidArgument("segment duration " + std::to_string(duration_ms) +
                          " ms is not a whole number of " + std::to_string(packet_ms) + " ms packets");
  return static_cast<std::size_t>(rounded);
}

bool in_interval(double x, double lo, double hi) noexcept
{
  return x > lo && x <= hi;
}

std::string bucket_label(std::string_view prefix, std::size_t bucket)
{
  std::string label{prefix};
  label += "/q";
  if (bucket < 10)
    label += '0';
  label += std::to_string(bucket);
  return label;
}

struct Candidate
{
  std::size_t index;
  BurstStats stats;
};

// Quantile-buckets `pool` and draws up to `per_bucket` from each bucket.
void sample_buckets(const std::vector<TraceSegment>& segments,
                    const std::vector<Candidate>& pool,
                    std::size_t bucket_count,
                    std::size_t per_bucket,
                    std::string_view prefix,
                    std::uint64_t seed,
                    SampleResult& result)
{
  std::vector<double> losses;
  losses.reserve(pool.size());
  for (const auto& c : pool)
    losses.push_back(c.stats.loss_percent);
  const auto edges = pool.empty() ? std::vector<double>{} : quantile_edges(losses, bucket_count);

  std::vector<std::vector<std::size_t>> members(bucket_count);
  for (std::size_t i = 0; i < pool.size(); ++i)
    members[bucket_of(pool[i].stats.loss_percent, edges)].push_back(i);

  for (std::size_t b = 0; b < bucket_count; ++b)
  {
    auto& ids = members[b];
    Rng rng{derive_seed(seed, {b})};
    shuffle(std::span{ids}, rng);
    const auto label = bucket_label(prefix, b);
    const auto take = std::min(per_bucket, ids.size());
    if (take < per_bucket)
      result.shortfalls.push_back({label, per_bucket, ids.size()});
    for (std::size_t k = 0; k < take; ++k)
    {
      const auto& c = pool[ids[k]];
      result.selected.push_back({segments[c.index], c.stats, label});
    }
  }
}

} // namespace

PacketTrace::PacketTrace(std::vector<Packet> packets, double packet_ms)
  : m_packets(std::move(packets))
  , m_packet_ms{packet_ms}
{
  if (!(packet_ms > 0.0) || !std::isfinite(packet_ms))
    throw InvalidArgument("packet duration must be positive");
  for (std::size_t i = 0; i < m_packets.size(); ++i)
    if (m_packets[i].seq != i)
      throw StructureError("packet " + std::to_string(i) + " has seq " + std::to_string(m_packets[i].seq));
}

PacketTrace PacketTrace::from_flags(const std::vector<bool>& lost, double packet_ms)
{
  std::vector<Packet> packets(lost.size());
  for (std::size_t i = 0; i < lost.size(); ++i)
    packets[i] = {static_cast<std::uint32_t>(i), lost[i]};
  return PacketTrace{std::move(packets), packet_ms};
}

std::size_t PacketTrace::lost_count() const noexcept
{
  return static_cast<std::size_t>(
    std::count_if(m_packets.begin(), m_packets.end(), [](const Packet& p) { return p.lost; }));
}

PacketTrace PacketTrace::slice(std::size_t start, std::size_t count) const
{
  if (start > size() || count > size() - start)
    throw InvalidArgument("slice outside trace");
  std::vector<Packet> out(count);
  for (std::size_t i = 0; i < count; ++i)
    out[i] = {static_cast<std::uint32_t>(i), m_packets[start + i].lost};
  return PacketTrace{std::move(out), m_packet_ms};
}

bool operator==(const PacketTrace& a, const PacketTrace& b) noexcept
{
  if (a.m_packet_ms != b.m_packet_ms || a.size() != b.size())
    return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a.m_packets[i].lost != b.m_packets[i].lost)
      return false;
  return true;
}

void GilbertParams::validate() const
{
  for (double p : {p_good_to_bad, p_bad_to_good, loss_in_bad, loss_in_good})
    if (!(p >= 0.0 && p <= 1.0))
      throw InvalidArgument("Gilbert probabilities must lie in [0, 1]");
  if (!(p_good_to_bad + p_bad_to_good > 0.0))
    throw InvalidArgument("Gilbert chain needs p_good_to_bad + p_bad_to_good > 0");
}

double GilbertParams::stationary_loss_rate() const
{
  const double pi_bad = p_good_to_bad / (p_good_to_bad + p_bad_to_good);
  return pi_bad * loss_in_bad + (1.0 - pi_bad) * loss_in_good;
}

std::string_view to_string(SamplingMode mode) noexcept
{
  switch (mode)
  {
    case SamplingMode::basic: return "basic";
    case SamplingMode::heavy_loss: return "heavy_loss";
    case SamplingMode::long_bursts: return "long_bursts";
  }
  return "unknown";
}

SamplingMode sampling_mode_from_string(std::string_view name)
{
  if (name == "basic")
    return SamplingMode::basic;
  if (name == "heavy_loss")
    return SamplingMode::heavy_loss;
  if (name == "long_bursts")
    return SamplingMode::long_bursts;
  throw InvalidArgument("unknown sampling mode '" + std::string{name} + "'");
}

void SamplingSpec::validate() const
{
  if (!(segment_ms > 0.0))
    throw InvalidArgument("segment_ms must be positive");
  if (bucket_count < 1 || per_bucket < 1 || long_burst_total < 1)
    throw InvalidArgument("sampling counts must be at least 1");
  for (auto n : heavy_per_bucket)
    if (n < 1)
      throw InvalidArgument("heavy_per_bucket counts must be at least 1");
}

PacketTrace parse_trace(std::string_view text)
{
  std::size_t line_no = 0;
  std::size_t pos = 0;
  std::optional<double> packet_ms;
  std::vector<Packet> packets;
  std::optional<std::uint64_t> first_seq;

  while (pos < text.size())
  {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos)
      end = text.size();
    const auto line = trim(text.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;

    if (!packet_ms)
    {
      if (line.substr(0, trace_magic.size()) != trace_magic)
        throw ParseError(line_no, "expected header '#plctrace v1 packet_ms=<real>'");
      auto rest = trim(line.substr(trace_magic.size()));
      constexpr std::string_view key = "packet_ms=";
      double ms = 0.0;
      if (rest.substr(0, key.size()) != key || !parse_real(rest.substr(key.size()), ms))
        throw ParseError(line_no, "header is missing packet_ms=<real>");
      if (!(ms > 0.0) || !std::isfinite(ms))
        throw ParseError(line_no, "packet_ms must be positive");
      packet_ms = ms;
      continue;
    }
    if (line.empty())
      continue;

    const auto comma = line.find(',');
    if (comma == std::string_view::npos)
      throw ParseError(line_no, "expected 'seq,lost'");
    std::uint64_t seq = 0;
    int lost = 0;
    if (!parse_int(line.substr(0, comma), seq))
      throw ParseError(line_no, "invalid sequence number");
    if (!parse_int(line.substr(comma + 1), lost) || (lost != 0 && lost != 1))
      throw ParseError(line_no, "loss flag must be 0 or 1");

    if (!first_seq)
      first_seq = seq;
    const auto expected = *first_seq + packets.size();
    if (seq != expected)
      throw StructureError("line " + std::to_string(line_no) + ": sequence " + std::to_string(seq) +
                           (seq < expected ? " is duplicated or out of order" : " leaves a gap") +
                           " (expected " + std::to_string(expected) + ")");
    packets.push_back({static_cast<std::uint32_t>(packets.size()), lost == 1});
  }

  if (!packet_ms)
    throw ParseError(1, "empty trace file");
  if (packets.empty())
    throw StructureError("trace contains no packets");
  return PacketTrace{std::move(packets), *packet_ms};
}

std::string format_trace(const PacketTrace& trace)
{
  std::ostringstream out;
  out.precision(17);
  out << trace_magic << " packet_ms=" << trace.packet_ms() << '\n';
  for (const auto& p : trace.packets())
    out << p.seq << ',' << (p.lost ? 1 : 0) << '\n';
  return out.str();
}

PacketTrace synth_gilbert(const GilbertParams& params, std::size_t n_packets, double packet_ms)
{
  params.validate();
  if (n_packets < 1)
    throw InvalidArgument("n_packets must be at least 1");

  Rng rng{params.seed};
  bool bad = false;
  std::vector<Packet> packets(n_packets);
  for (std::size_t i = 0; i < n_packets; ++i)
  {
    const double p_loss = bad ? params.loss_in_bad : params.loss_in_good;
    packets[i] = {static_cast<std::uint32_t>(i), uniform01(rng) < p_loss};
    const double p_switch = bad ? params.p_bad_to_good : params.p_good_to_bad;
    if (uniform01(rng) < p_switch)
      bad = !bad;
  }
  return PacketTrace{std::move(packets), packet_ms};
}

std::vector<TraceSegment> segment_trace(const PacketTrace& trace,
                                        double segment_ms,
                                        std::uint64_t rng_seed,
                                        const SegmentOptions& options)
{
  const auto length = packets_for(segment_ms, trace.packet_ms());
  if (trace.size() < length)
    throw InvalidArgument("trace of " + std::to_string(trace.duration_ms()) + " ms is shorter than segment");

  std::vector<std::size_t> prefix(trace.size() + 1, 0);
  for (std::size_t i = 0; i < trace.size(); ++i)
    prefix[i + 1] = prefix[i] + (trace.packets()[i].lost ? 1 : 0);

  std::vector<TraceSegment> out;
  if (prefix.back() == 0)
    return out;

  const std::size_t placements = trace.size() - length + 1;
  const std::size_t target = options.target_count > 0 ? options.target_count : std::max<std::size_t>(1, trace.size() / length);
  const std::size_t budget = target * std::max<std::size_t>(1, options.retry_factor);

  Rng rng{rng_seed};
  std::unordered_set<std::size_t> used;
  for (std::size_t attempt = 0; attempt < budget && out.size() < target && used.size() < placements; ++attempt)
  {
    const auto start = static_cast<std::size_t>(uniform_index(rng, placements));
    if (prefix[start + length] == prefix[start] || !used.insert(start).second)
      continue;
    out.push_back({options.source_id, start, trace.slice(start, length)});
  }
  return out;
}

std::vector<std::size_t> burst_runs(const PacketTrace& trace)
{
  std::vector<std::size_t> runs;
  std::size_t run = 0;
  for (const auto& p : trace.packets())
  {
    if (p.lost)
    {
      ++run;
    }
    else if (run > 0)
    {
      runs.push_back(run);
      run = 0;
    }
  }
  if (run > 0)
    runs.push_back(run);
  return runs;
}

BurstStats burst_stats(const PacketTrace& trace)
{
  if (trace.empty())
    throw InvalidArgument("burst_stats of an empty trace");
  auto runs = burst_runs(trace);
  BurstStats s;
  s.burst_count = runs.size();
  const std::size_t lost = std::accumulate(runs.begin(), runs.end(), std::size_t{0});
  s.loss_percent = 100.0 * static_cast<double>(lost) / static_cast<double>(trace.size());
  if (!runs.empty())
  {
    std::sort(runs.begin(), runs.end());
    s.max_burst_ms = static_cast<double>(runs.back()) * trace.packet_ms();
    s.median_burst_ms = static_cast<double>(runs[(runs.size() - 1) / 2]) * trace.packet_ms();
  }
  return s;
}

BurstStats burst_stats(const TraceSegment& segment)
{
  return burst_stats(segment.packets);
}

bool passes_basic(const BurstStats& s) noexcept
{
  return in_interval(s.max_burst_ms, 0.0, basic_max_burst_ms);
}

std::optional<std::size_t> heavy_subset(const BurstStats& s) noexcept
{
  for (std::size_t i = 0; i + 1 < heavy_edges_ms.size(); ++i)
    if (in_interval(s.max_burst_ms, heavy_edges_ms[i], heavy_edges_ms[i + 1]))
      return i;
  return std::nullopt;
}

bool passes_long_bursts(const BurstStats& s) noexcept
{
  return in_interval(s.max_burst_ms, long_min_max_burst_ms, long_max_max_burst_ms) &&
         s.median_burst_ms >= long_min_median_ms && s.loss_percent >= long_min_loss_percent &&
         s.loss_percent <= long_max_loss_percent;
}

bool satisfies_mode(SamplingMode mode, const BurstStats& s) noexcept
{
  switch (mode)
  {
    case SamplingMode::basic: return passes_basic(s);
    case SamplingMode::heavy_loss: return heavy_subset(s).has_value();
    case SamplingMode::long_bursts: return passes_long_bursts(s);
  }
  return false;
}

std::vector<double> quantile_edges(std::vector<double> values, std::size_t bucket_count)
{
  if (values.empty() || bucket_count < 1)
    throw InvalidArgument("quantile_edges needs values and at least one bucket");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  std::vector<double> edges;
  edges.reserve(bucket_count - 1);
  for (std::size_t j = 1; j < bucket_count; ++j)
  {
    // Lower empirical quantile at j / bucket_count.
    const std::size_t rank = (j * n + bucket_count - 1) / bucket_count;
    edges.push_back(values[std::max<std::size_t>(rank, 1) - 1]);
  }
  return edges;
}

std::size_t bucket_of(double x, const std::vector<double>& edges) noexcept
{
  return static_cast<std::size_t>(std::lower_bound(edges.begin(), edges.end(), x) - edges.begin());
}

SampleResult stratified_sample(const std::vector<TraceSegment>& candidates, const SamplingSpec& spec)
{
  spec.validate();
  if (candidates.empty())
    throw InvalidArgument("stratified_sample needs at least one candidate");

  std::vector<Candidate> all;
  all.reserve(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i)
    all.push_back({i, burst_stats(candidates[i])});

  SampleResult result;
  switch (spec.mode)
  {
    case SamplingMode::basic:
    {
      std::vector<Candidate> pool;
      std::copy_if(all.begin(), all.end(), std::back_inserter(pool), [](const Candidate& c) { return passes_basic(c.stats); });
      sample_buckets(candidates, pool, spec.bucket_count, spec.per_bucket, "basic", derive_seed(spec.rng_seed, {0}), result);
      break;
    }
    case SamplingMode::heavy_loss:
    {
      constexpr std::array<std::string_view, 3> names{"heavy_loss/b0-120", "heavy_loss/b120-320", "heavy_loss/b320-1000"};
      std::array<std::vector<Candidate>, 3> subsets;
      for (const auto& c : all)
        if (auto k = heavy_subset(c.stats))
          subsets[*k].push_back(c);
      for (std::size_t k = 0; k < subsets.size(); ++k)
        sample_buckets(candidates, subsets[k], spec.bucket_count, spec.heavy_per_bucket[k], names[k],
                       derive_seed(spec.rng_seed, {1, k}), result);
      break;
    }
    case SamplingMode::long_bursts:
    {
      std::vector<Candidate> pool;
      std::copy_if(all.begin(), all.end(), std::back_inserter(pool), [](const Candidate& c) { return passes_long_bursts(c.stats); });
      Rng rng{derive_seed(spec.rng_seed, {2})};
      shuffle(std::span{pool}, rng);
      const auto take = std::min(spec.long_burst_total, pool.size());
      if (take < spec.long_burst_total)
        result.shortfalls.push_back({"long_bursts", spec.long_burst_total, pool.size()});
      for (std::size_t k = 0; k < take; ++k)
        result.selected.push_back({candidates[pool[k].index], pool[k].stats, "long_bursts"});
      break;
    }
  }
  return result;
}

nlohmann::json to_json(const BurstStats& s)
{
  return {
    {"loss_percent", s.loss_percent},
    {"max_burst_ms", s.max_burst_ms},
    {"median_burst_ms", s.median_burst_ms},
    {"burst_count", s.burst_count},
  };
}

nlohmann::json sample_manifest(const SampleResult& result, const SamplingSpec& spec)
{
  nlohmann::json segments = nlohmann::json::array();
  for (const auto& s : result.selected)
  {
    auto entry = to_json(s.stats);
    entry["source_id"] = s.segment.source_id;
    entry["start_packet"] = s.segment.start_packet;
    entry["packet_count"] = s.segment.packets.size();
    entry["packet_ms"] = s.segment.packets.packet_ms();
    entry["bucket"] = s.bucket;
    segments.push_back(std::move(entry));
  }
  nlohmann::json shortfalls = nlohmann::json::array();
  for (const auto& s : result.shortfalls)
    shortfalls.push_back({{"bucket", s.bucket}, {"requested", s.requested}, {"available", s.available}});

  auto j = to_json(spec);
  j["format"] = "plcmos-sample-manifest";
  j["version"] = 1;
  j["segments"] = std::move(segments);
  j["shortfalls"] = std::move(shortfalls);
  return j;
}

nlohmann::json to_json(const SamplingSpec& spec)
{
  return {
    {"mode", to_string(spec.mode)},
    {"segment_ms", spec.segment_ms},
    {"bucket_count", spec.bucket_count},
    {"per_bucket", spec.per_bucket},
    {"heavy_per_bucket", spec.heavy_per_bucket},
    {"long_burst_total", spec.long_burst_total},
    {"rng_seed", spec.rng_seed},
  };
}

SamplingSpec sampling_spec_from_json(const nlohmann::json& j, SamplingSpec s)
{
  try
  {
    if (j.contains("mode"))
      s.mode = sampling_mode_from_string(j.at("mode").get<std::string>());
    auto take = [&](const char* key, auto& field) {
      if (j.contains(key))
        j.at(key).get_to(field);
    };
    take("segment_ms", s.segment_ms);
    take("bucket_count", s.bucket_count);
    take("per_bucket", s.per_bucket);
    take("heavy_per_bucket", s.heavy_per_bucket);
    take("long_burst_total", s.long_burst_total);
    take("rng_seed", s.rng_seed);
  }
  catch (const nlohmann::json::exception& e)
  {
    throw InvalidArgument(std::string{"invalid sampling config: "} + e.what());
  }
  s.validate();
  return s;
}

nlohmann::json to_json(const GilbertParams& p)
{
  return {
    {"p_good_to_bad", p.p_good_to_bad},
    {"p_bad_to_good", p.p_bad_to_good},
    {"loss_in_bad", p.loss_in_bad},
    {"loss_in_good", p.loss_in_good},
    {"seed", p.seed},
  };
}

GilbertParams gilbert_params_from_json(const nlohmann::json& j, GilbertParams p)
{
  try
  {
    auto take = [&](const char* key, auto& field) {
      if (j.contains(key))
        j.at(key).get_to(field);
    };
    take("p_good_to_bad", p.p_good_to_bad);
    take("p_bad_to_good", p.p_bad_to_good);
    take("loss_in_bad", p.loss_in_bad);
    take("loss_in_good", p.loss_in_good);
    take("seed", p.seed);
  }
  catch (const nlohmann::json::exception& e)
  {
    throw InvalidArgument(std::string{"invalid Gilbert config: "} + e.what());
  }
  p.validate();
  return p;
}

} // namespace plcmos
