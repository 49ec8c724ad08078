#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "plcmos/error.hpp"
#include "plcmos/traces.hpp"
#include "support/fixtures.hpp"

using namespace plcmos;
using plcmos::test::trace_with_losses;
using plcmos::test::whole;
using plcmos::test::gilbert_pool;

TEST(ParseTrace, ThreeLineFile)
{
  const auto t = parse_trace("#plctrace v1 packet_ms=20\n0,0\n1,1\n2,0\n");
  ASSERT_EQ(t.size(), 3u);
  EXPECT_DOUBLE_EQ(t.packet_ms(), 20.0);
  EXPECT_FALSE(t.packets()[0].lost);
  EXPECT_TRUE(t.packets()[1].lost);
  EXPECT_FALSE(t.packets()[2].lost);
  for (std::size_t i = 0; i < t.size(); ++i)
    EXPECT_EQ(t.packets()[i].seq, i);
}

TEST(ParseTrace, HeaderOnlyIsStructureError)
{
  EXPECT_THROW(parse_trace("#plctrace v1 packet_ms=20\n"), StructureError);
}

TEST(ParseTrace, GapIsStructureError)
{
  EXPECT_THROW(parse_trace("#plctrace v1 packet_ms=20\n0,0\n2,0\n"), StructureError);
}

TEST(ParseTrace, DuplicateIsStructureError)
{
  EXPECT_THROW(parse_trace("#plctrace v1 packet_ms=20\n0,0\n1,0\n1,1\n"), StructureError);
}

TEST(ParseTrace, MalformedLineReportsLineNumber)
{
  try
  {
    parse_trace("#plctrace v1 packet_ms=20\n0,0\n1;1\n");
    FAIL() << "expected ParseError";
  }
  catch (const ParseError& e)
  {
    EXPECT_EQ(e.line(), 3u);
  }
  EXPECT_THROW(parse_trace("#plctrace v1 packet_ms=20\n0,2\n"), ParseError);
  EXPECT_THROW(parse_trace("#plctrace v1 packet_ms=20\nx,0\n"), ParseError);
}

TEST(ParseTrace, HeaderRequired)
{
  EXPECT_THROW(parse_trace(""), ParseError);
  EXPECT_THROW(parse_trace("0,0\n1,1\n"), ParseError);
  EXPECT_THROW(parse_trace("#plctrace v1\n0,0\n"), ParseError);
  EXPECT_THROW(parse_trace("#plctrace v1 packet_ms=0\n0,0\n"), ParseError);
  EXPECT_THROW(parse_trace("#plctrace v2 packet_ms=20\n0,0\n"), ParseError);
}

TEST(ParseTrace, RenumbersFromNonZeroStart)
{
  const auto t = parse_trace("#plctrace v1 packet_ms=10\n7,1\n8,0\n");
  ASSERT_EQ(t.size(), 2u);
  EXPECT_EQ(t.packets()[0].seq, 0u);
  EXPECT_TRUE(t.packets()[0].lost);
  EXPECT_DOUBLE_EQ(t.packet_ms(), 10.0);
}

TEST(ParseTrace, FormatRoundTrip)
{
  GilbertParams g{0.1, 0.3, 1.0, 0.0, 9};
  const auto t = synth_gilbert(g, 777, 12.5);
  EXPECT_EQ(parse_trace(format_trace(t)), t);
}

TEST(PacketTrace, RejectsBadInvariants)
{
  EXPECT_THROW(PacketTrace({{0, false}, {2, false}}, 20.0), StructureError);
  EXPECT_THROW(PacketTrace({{0, false}}, 0.0), InvalidArgument);
}

TEST(Gilbert, AbsorbingGoodState)
{
  GilbertParams g{0.0, 0.5, 1.0, 0.0, 3};
  EXPECT_EQ(synth_gilbert(g, 10000).lost_count(), 0u);
}

TEST(Gilbert, AbsorbingBadState)
{
  GilbertParams g{1.0, 0.0, 1.0, 0.0, 3};
  const auto t = synth_gilbert(g, 1000);
  EXPECT_FALSE(t.packets()[0].lost);
  for (std::size_t i = 1; i < t.size(); ++i)
    ASSERT_TRUE(t.packets()[i].lost) << i;
}

TEST(Gilbert, StationaryLossRate)
{
  GilbertParams g{0.1, 0.3, 1.0, 0.0, 11};
  const auto t = synth_gilbert(g, 1'000'000);
  const double rate = static_cast<double>(t.lost_count()) / static_cast<double>(t.size());
  EXPECT_NEAR(rate, 0.25, 0.01);
  EXPECT_DOUBLE_EQ(g.stationary_loss_rate(), 0.25);
}

TEST(Gilbert, Reproducible)
{
  GilbertParams g{0.05, 0.4, 0.9, 0.01, 1234};
  EXPECT_EQ(synth_gilbert(g, 5000), synth_gilbert(g, 5000));
  auto other = g;
  other.seed = 1235;
  EXPECT_NE(synth_gilbert(g, 5000), synth_gilbert(other, 5000));
}

TEST(Gilbert, RejectsInvalidParams)
{
  EXPECT_THROW(synth_gilbert({0.0, 0.0, 1.0, 0.0, 0}, 10), InvalidArgument);
  EXPECT_THROW(synth_gilbert({1.5, 0.1, 1.0, 0.0, 0}, 10), InvalidArgument);
  EXPECT_THROW(synth_gilbert({0.1, 0.1, 1.0, 0.0, 0}, 0), InvalidArgument);
}

TEST(SegmentTrace, LossFreeGivesEmpty)
{
  const auto t = trace_with_losses(1500, {});
  EXPECT_TRUE(segment_trace(t, 10'000, 1).empty());
}

TEST(SegmentTrace, SinglePlacement)
{
  const auto t = trace_with_losses(500, {123});
  const auto segs = segment_trace(t, 10'000, 1);
  ASSERT_EQ(segs.size(), 1u);
  EXPECT_EQ(segs[0].start_packet, 0u);
  EXPECT_EQ(segs[0].packets, t);
}

TEST(SegmentTrace, TooShortIsError)
{
  EXPECT_THROW(segment_trace(trace_with_losses(499, {1}), 10'000, 1), InvalidArgument);
}

TEST(SegmentTrace, IidLossInvariants)
{
  Rng rng{77};
  std::vector<bool> flags(3000);
  for (std::size_t i = 0; i < flags.size(); ++i)
    flags[i] = uniform01(rng) < 0.1;
  const auto t = PacketTrace::from_flags(flags, 20.0);
  SegmentOptions opt;
  opt.target_count = 40;
  const auto segs = segment_trace(t, 10'000, 5, opt);
  EXPECT_EQ(segs.size(), 40u);
  std::set<std::size_t> starts;
  for (const auto& s : segs)
  {
    EXPECT_DOUBLE_EQ(s.packets.duration_ms(), 10'000.0);
    EXPECT_GE(s.packets.lost_count(), 1u);
    EXPECT_LE(s.start_packet + s.packets.size(), t.size());
    EXPECT_EQ(s.packets, t.slice(s.start_packet, s.packets.size()));
    starts.insert(s.start_packet);
  }
  EXPECT_EQ(starts.size(), segs.size());
  EXPECT_EQ(segment_trace(t, 10'000, 5, opt).size(), segs.size());
}

TEST(SegmentTrace, DeterministicPerSeed)
{
  GilbertParams g{0.05, 0.3, 1.0, 0.0, 2};
  const auto t = synth_gilbert(g, 6000);
  const auto a = segment_trace(t, 10'000, 99);
  const auto b = segment_trace(t, 10'000, 99);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    EXPECT_EQ(a[i].start_packet, b[i].start_packet);
}

TEST(SegmentTrace, OnlyLossySegmentsWhenLossIsSparse)
{
  // One loss in a long trace: many placements exclude it.
  const auto t = trace_with_losses(5000, {4000});
  SegmentOptions opt;
  opt.target_count = 50;
  for (const auto& s : segment_trace(t, 10'000, 3, opt))
  {
    EXPECT_LE(s.start_packet, 4000u);
    EXPECT_GT(s.start_packet + s.packets.size(), 4000u);
  }
}

TEST(BurstStats, SingleRun)
{
  const auto s = burst_stats(trace_with_losses(500, {5, 6, 7}));
  EXPECT_DOUBLE_EQ(s.loss_percent, 0.6);
  EXPECT_DOUBLE_EQ(s.max_burst_ms, 60.0);
  EXPECT_DOUBLE_EQ(s.median_burst_ms, 60.0);
  EXPECT_EQ(s.burst_count, 1u);
}

TEST(BurstStats, NoLosses)
{
  const auto s = burst_stats(trace_with_losses(100, {}));
  EXPECT_EQ(s.loss_percent, 0.0);
  EXPECT_EQ(s.max_burst_ms, 0.0);
  EXPECT_EQ(s.median_burst_ms, 0.0);
  EXPECT_EQ(s.burst_count, 0u);
}

TEST(BurstStats, ThreeRuns)
{
  const auto s = burst_stats(trace_with_losses(100, {1, 10, 11, 20, 21, 22, 23}));
  EXPECT_DOUBLE_EQ(s.max_burst_ms, 80.0);
  EXPECT_DOUBLE_EQ(s.median_burst_ms, 40.0);
  EXPECT_EQ(s.burst_count, 3u);
}

TEST(BurstStats, LowerMedianForEvenCounts)
{
  // runs of 1 and 3 packets: lower median is 1 packet
  const auto s = burst_stats(trace_with_losses(50, {2, 10, 11, 12}));
  EXPECT_DOUBLE_EQ(s.median_burst_ms, 20.0);
  EXPECT_DOUBLE_EQ(s.max_burst_ms, 60.0);
}

TEST(BurstStats, RunsAtTraceEdges)
{
  const auto runs = burst_runs(trace_with_losses(10, {0, 1, 8, 9}));
  EXPECT_EQ(runs, (std::vector<std::size_t>{2, 2}));
}

TEST(BurstStats, PropertiesOnRandomTraces)
{
  for (std::uint64_t seed = 0; seed < 200; ++seed)
  {
    Rng rng{seed};
    GilbertParams g{uniform_real(rng, 0.0, 0.3), uniform_real(rng, 0.05, 1.0), uniform_real(rng, 0.5, 1.0),
                    uniform_real(rng, 0.0, 0.05), seed};
    const auto t = synth_gilbert(g, 1 + uniform_index(rng, 800), 20.0);
    const auto runs = burst_runs(t);
    std::size_t sum = 0;
    for (auto r : runs)
      sum += r;
    ASSERT_EQ(sum, t.lost_count());
    const auto s = burst_stats(t);
    ASSERT_EQ(s.burst_count, runs.size());
    ASSERT_GE(s.max_burst_ms, s.median_burst_ms);
    ASSERT_EQ(s.max_burst_ms == 0.0, t.lost_count() == 0);
    ASSERT_EQ(s.median_burst_ms == 0.0, t.lost_count() == 0);
    ASSERT_GE(s.loss_percent, 0.0);
    ASSERT_LE(s.loss_percent, 100.0);
    ASSERT_DOUBLE_EQ(s.loss_percent, 100.0 * static_cast<double>(t.lost_count()) / static_cast<double>(t.size()));
  }
}

TEST(Predicates, HalfOpenIntervals)
{
  BurstStats s;
  s.max_burst_ms = 120.0;
  EXPECT_TRUE(passes_basic(s));
  EXPECT_EQ(heavy_subset(s), 0u);
  s.max_burst_ms = 140.0;
  EXPECT_FALSE(passes_basic(s));
  EXPECT_EQ(heavy_subset(s), 1u);
  s.max_burst_ms = 320.0;
  EXPECT_EQ(heavy_subset(s), 1u);
  s.max_burst_ms = 340.0;
  EXPECT_EQ(heavy_subset(s), 2u);
  s.max_burst_ms = 1000.0;
  EXPECT_EQ(heavy_subset(s), 2u);
  s.max_burst_ms = 1020.0;
  EXPECT_FALSE(heavy_subset(s).has_value());
  s.max_burst_ms = 0.0;
  EXPECT_FALSE(passes_basic(s));
  EXPECT_FALSE(heavy_subset(s).has_value());

  BurstStats lb{20.0, 300.0, 80.0, 3};
  EXPECT_TRUE(passes_long_bursts(lb));
  lb.max_burst_ms = 120.0;
  EXPECT_FALSE(passes_long_bursts(lb));
  lb = {20.0, 200.0, 60.0, 3};
  EXPECT_FALSE(passes_long_bursts(lb));
  lb = {9.0, 200.0, 100.0, 3};
  EXPECT_FALSE(passes_long_bursts(lb));
  lb = {70.0, 200.0, 100.0, 3};
  EXPECT_TRUE(passes_long_bursts(lb));
}

TEST(Quantiles, EdgesAndLowerBucketOnEdge)
{
  std::vector<double> v;
  for (int i = 1; i <= 14; ++i)
    v.push_back(i);
  const auto edges = quantile_edges(v, 14);
  ASSERT_EQ(edges.size(), 13u);
  for (int j = 0; j < 13; ++j)
    EXPECT_DOUBLE_EQ(edges[j], j + 1);
  EXPECT_EQ(bucket_of(1.0, edges), 0u);
  EXPECT_EQ(bucket_of(1.5, edges), 1u);
  EXPECT_EQ(bucket_of(2.0, edges), 1u);
  EXPECT_EQ(bucket_of(14.0, edges), 13u);
}

TEST(Quantiles, DistinctValuesGiveBalancedBuckets)
{
  for (std::size_t n : {14u, 100u, 1000u, 1401u})
    for (std::size_t b : {1u, 3u, 14u})
    {
      Rng rng{n * 31 + b};
      std::vector<double> v(n);
      for (auto& x : v)
        x = uniform01(rng);
      const auto edges = quantile_edges(v, b);
      std::vector<std::size_t> pop(b, 0);
      for (double x : v)
        ++pop.at(bucket_of(x, edges));
      const auto [lo, hi] = std::minmax_element(pop.begin(), pop.end());
      EXPECT_LE(*hi - *lo, 1u) << "n=" << n << " b=" << b;
    }
}

TEST(StratifiedSample, BasicDefaultsGive1400)
{
  const auto pool = gilbert_pool(300, 20, 1);
  SamplingSpec spec;
  const auto r = stratified_sample(pool, spec);
  EXPECT_EQ(r.selected.size(), 1400u);
  EXPECT_TRUE(r.shortfalls.empty());
  std::map<std::string, std::size_t> per;
  for (const auto& s : r.selected)
  {
    ++per[s.bucket];
    ASSERT_TRUE(passes_basic(burst_stats(s.segment)));
  }
  EXPECT_EQ(per.size(), 14u);
  for (const auto& [bucket, n] : per)
    EXPECT_EQ(n, 100u) << bucket;
}

TEST(StratifiedSample, NoDuplicatesWithinBucketDraw)
{
  const auto pool = gilbert_pool(60, 20, 2);
  SamplingSpec spec;
  spec.per_bucket = 20;
  const auto r = stratified_sample(pool, spec);
  std::set<std::pair<std::string, std::size_t>> seen;
  for (const auto& s : r.selected)
    EXPECT_TRUE(seen.insert({s.segment.source_id, s.segment.start_packet}).second);
}

TEST(StratifiedSample, FilterRemovesAll)
{
  std::vector<TraceSegment> pool;
  for (std::size_t i = 0; i < 30; ++i)
    pool.push_back(whole(trace_with_losses(500, {i, i + 1, i + 2, i + 3, i + 4, i + 5, i + 6, i + 7, i + 8, i + 9})));
  ASSERT_DOUBLE_EQ(burst_stats(pool[0]).max_burst_ms, 200.0);
  const auto r = stratified_sample(pool, SamplingSpec{});
  EXPECT_TRUE(r.selected.empty());
  EXPECT_FALSE(r.shortfalls.empty());
}

TEST(StratifiedSample, ShortfallTakesAll)
{
  const auto pool = gilbert_pool(5, 4, 3);
  SamplingSpec spec;
  spec.bucket_count = 2;
  spec.per_bucket = 1000;
  const auto r = stratified_sample(pool, spec);
  std::size_t survivors = 0;
  for (const auto& s : pool)
    survivors += passes_basic(burst_stats(s)) ? 1 : 0;
  EXPECT_EQ(r.selected.size(), survivors);
  EXPECT_EQ(r.shortfalls.size(), 2u);
}

TEST(StratifiedSample, HeavyLossSubsetsSatisfyPredicates)
{
  const auto pool = gilbert_pool(300, 20, 4);
  SamplingSpec spec;
  spec.mode = SamplingMode::heavy_loss;
  spec.heavy_per_bucket = {10, 5, 2};
  const auto r = stratified_sample(pool, spec);
  ASSERT_FALSE(r.selected.empty());
  const std::array<std::string, 3> prefixes{"heavy_loss/b0-120/", "heavy_loss/b120-320/", "heavy_loss/b320-1000/"};
  for (const auto& s : r.selected)
  {
    const auto k = heavy_subset(burst_stats(s.segment));
    ASSERT_TRUE(k.has_value());
    EXPECT_EQ(s.bucket.rfind(prefixes[*k], 0), 0u) << s.bucket;
  }
}

TEST(StratifiedSample, LongBurstsSatisfyPredicates)
{
  std::vector<TraceSegment> pool;
  for (std::size_t i = 0; i < 500; ++i)
  {
    GilbertParams g{0.03, 0.12, 1.0, 0.0, 1000 + i};
    SegmentOptions opt;
    opt.target_count = 20;
    opt.source_id = std::to_string(i);
    auto segs = segment_trace(synth_gilbert(g, 1500), 10'000, i, opt);
    pool.insert(pool.end(), segs.begin(), segs.end());
  }
  ASSERT_GE(pool.size(), 5000u);
  SamplingSpec spec;
  spec.mode = SamplingMode::long_bursts;
  spec.long_burst_total = 50;
  const auto r = stratified_sample(pool, spec);
  ASSERT_FALSE(r.selected.empty());
  for (const auto& s : r.selected)
  {
    ASSERT_TRUE(passes_long_bursts(burst_stats(s.segment)));
    EXPECT_EQ(s.bucket, "long_bursts");
  }
}

TEST(StratifiedSample, DeterministicPerSeed)
{
  const auto pool = gilbert_pool(40, 20, 5);
  SamplingSpec spec;
  spec.per_bucket = 5;
  spec.rng_seed = 17;
  const auto a = stratified_sample(pool, spec);
  const auto b = stratified_sample(pool, spec);
  EXPECT_EQ(sample_manifest(a, spec), sample_manifest(b, spec));
  spec.rng_seed = 18;
  EXPECT_NE(sample_manifest(a, spec)["segments"], sample_manifest(stratified_sample(pool, spec), spec)["segments"]);
}

TEST(StratifiedSample, EmptyCandidatesIsError)
{
  EXPECT_THROW(stratified_sample({}, SamplingSpec{}), InvalidArgument);
}

TEST(SampleManifest, Fields)
{
  const auto pool = gilbert_pool(20, 10, 6);
  SamplingSpec spec;
  spec.per_bucket = 2;
  spec.bucket_count = 3;
  const auto j = sample_manifest(stratified_sample(pool, spec), spec);
  EXPECT_EQ(j["format"], "plcmos-sample-manifest");
  EXPECT_EQ(j["mode"], "basic");
  ASSERT_EQ(j["segments"].size(), 6u);
  for (const auto& s : j["segments"])
    for (const char* key : {"source_id", "start_packet", "packet_count", "bucket", "loss_percent", "max_burst_ms",
                            "median_burst_ms", "burst_count"})
      EXPECT_TRUE(s.contains(key)) << key;
  EXPECT_EQ(sampling_spec_from_json(j).per_bucket, 2u);
}

TEST(SamplingSpec, Validation)
{
  SamplingSpec s;
  s.bucket_count = 0;
  EXPECT_THROW(s.validate(), InvalidArgument);
  EXPECT_THROW(sampling_spec_from_json(nlohmann::json{{"mode", "nope"}}), InvalidArgument);
  EXPECT_EQ(sampling_spec_from_json(nlohmann::json{{"mode", "long_bursts"}}).mode, SamplingMode::long_bursts);
}
