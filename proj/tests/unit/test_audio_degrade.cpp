#include <gtest/gtest.h>

#include <cstring>
#include <limits>

#include "plcmos/degrade.hpp"
#include "plcmos/error.hpp"
#include "plcmos/pipeline.hpp"
#include "support/fixtures.hpp"

using namespace plcmos;
using plcmos::test::noise;
using plcmos::test::trace_with_losses;
using plcmos::test::whole;

namespace {

void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v)
{
  for (int i = 0; i < 4; ++i)
    b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v)
{
  b.push_back(static_cast<std::uint8_t>(v));
  b.push_back(static_cast<std::uint8_t>(v >> 8));
}

std::vector<std::uint8_t> wav_bytes(std::uint32_t rate, std::uint16_t channels, std::uint16_t bits, std::uint16_t format,
                                    const std::vector<std::int16_t>& samples, bool extra_chunk = false)
{
  std::vector<std::uint8_t> b{'R', 'I', 'F', 'F'};
  put_u32(b, 0);
  b.insert(b.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put_u32(b, 16);
  put_u16(b, format);
  put_u16(b, channels);
  put_u32(b, rate);
  put_u32(b, rate * channels * bits / 8);
  put_u16(b, static_cast<std::uint16_t>(channels * bits / 8));
  put_u16(b, bits);
  if (extra_chunk)
  {
    b.insert(b.end(), {'L', 'I', 'S', 'T'});
    put_u32(b, 3);
    b.insert(b.end(), {'a', 'b', 'c', 0});
  }
  b.insert(b.end(), {'d', 'a', 't', 'a'});
  put_u32(b, static_cast<std::uint32_t>(samples.size() * 2));
  for (auto s : samples)
    put_u16(b, static_cast<std::uint16_t>(s));
  const auto riff = static_cast<std::uint32_t>(b.size() - 8);
  std::memcpy(b.data() + 4, &riff, 4);
  return b;
}

double energy(const AudioClip& c)
{
  double e = 0.0;
  for (double x : c.samples())
    e += x * x;
  return e;
}

} // namespace

TEST(AudioClip, Invariants)
{
  EXPECT_THROW(AudioClip({0.0}, 8000), InvalidArgument);
  EXPECT_THROW(AudioClip({0.0, std::numeric_limits<double>::quiet_NaN()}), InvalidArgument);
  EXPECT_THROW(AudioClip({std::numeric_limits<double>::infinity()}), InvalidArgument);
  EXPECT_EQ(AudioClip({0.1, 0.2}).size(), 2u);
}

TEST(Wav, DecodesPcm16)
{
  const auto clip = decode_wav(wav_bytes(16000, 1, 16, 1, {0, 16384, -32768, 32767}));
  ASSERT_EQ(clip.size(), 4u);
  EXPECT_EQ(clip.samples()[0], 0.0);
  EXPECT_EQ(clip.samples()[1], 0.5);
  EXPECT_EQ(clip.samples()[2], -1.0);
  EXPECT_EQ(clip.samples()[3], 32767.0 / 32768.0);
}

TEST(Wav, SkipsUnknownChunks)
{
  EXPECT_EQ(decode_wav(wav_bytes(16000, 1, 16, 1, {1, 2, 3}, true)).size(), 3u);
}

TEST(Wav, RejectsUnsupportedFormats)
{
  EXPECT_THROW(decode_wav(wav_bytes(44100, 1, 16, 1, {0})), Error);
  EXPECT_THROW(decode_wav(wav_bytes(16000, 2, 16, 1, {0, 0})), Error);
  EXPECT_THROW(decode_wav(wav_bytes(16000, 1, 16, 3, {0})), Error);
  EXPECT_THROW(decode_wav(wav_bytes(16000, 1, 8, 1, {0})), Error);
  const std::vector<std::uint8_t> junk{'n', 'o', 'p', 'e'};
  EXPECT_THROW(decode_wav(junk), Error);
}

TEST(Wav, TruncatedDataIsError)
{
  auto b = wav_bytes(16000, 1, 16, 1, {1, 2, 3, 4});
  b.resize(b.size() - 3);
  EXPECT_THROW(decode_wav(b), Error);
}

TEST(Wav, RoundTripIsExactOnPcmGrid)
{
  const auto clip = noise(1234, 5);
  const auto bytes = encode_wav(clip);
  EXPECT_EQ(bytes.size(), 44u + 2u * clip.size());
  EXPECT_EQ(decode_wav(bytes), clip);
}

TEST(Wav, EncodeClampsOutOfRange)
{
  const auto back = decode_wav(encode_wav(AudioClip({2.0, -2.0})));
  EXPECT_EQ(back.samples()[0], 32767.0 / 32768.0);
  EXPECT_EQ(back.samples()[1], -1.0);
}

TEST(Wav, FileRoundTripAndMissingFile)
{
  test::TempDir dir{"wav"};
  const auto clip = noise(500, 6);
  write_wav(dir / "a.wav", clip);
  EXPECT_EQ(read_wav(dir / "a.wav"), clip);
  EXPECT_THROW(read_wav(dir / "missing.wav"), Error);
}

TEST(SamplesPerPacket, WholeSamplesOnly)
{
  EXPECT_EQ(samples_per_packet(20.0), 320u);
  EXPECT_EQ(samples_per_packet(10.0), 160u);
  EXPECT_THROW(samples_per_packet(0.01), InvalidArgument);
  EXPECT_THROW(samples_per_packet(12.34), InvalidArgument);
}

TEST(CutSegment, OnlyPlacement)
{
  const auto clip = noise(16000, 1);
  EXPECT_EQ(cut_segment(clip, 16000, 42), clip);
}

TEST(CutSegment, OffsetWithinBounds)
{
  const auto clip = noise(32000, 2);
  for (std::uint64_t seed = 0; seed < 50; ++seed)
  {
    const auto cut = cut_segment(clip, 16000, seed);
    ASSERT_EQ(cut.size(), 16000u);
    const auto it = std::search(clip.samples().begin(), clip.samples().end(), cut.samples().begin(), cut.samples().end());
    ASSERT_NE(it, clip.samples().end());
    const auto offset = static_cast<std::size_t>(it - clip.samples().begin());
    EXPECT_LE(offset, 16000u);
  }
}

TEST(CutSegment, DeterministicAndErrors)
{
  const auto clip = noise(20000, 3);
  EXPECT_EQ(cut_segment(clip, 1000, 9), cut_segment(clip, 1000, 9));
  EXPECT_THROW(cut_segment(clip, 20001, 9), InvalidArgument);
}

TEST(ApplyTrace, AllReceivedIsIdentity)
{
  const auto clip = noise(3200, 4);
  const auto seg = whole(trace_with_losses(10, {}));
  EXPECT_EQ(apply_trace(clip, seg, FillMode::zero).audio, clip);
  EXPECT_EQ(apply_trace(clip, seg, FillMode::oracle).audio, clip);
}

TEST(ApplyTrace, OracleIsIdentity)
{
  const auto clip = noise(3200, 5);
  const auto seg = whole(trace_with_losses(10, {0, 3, 4, 9}));
  const auto d = apply_trace(clip, seg, FillMode::oracle);
  EXPECT_EQ(d.audio, clip);
  EXPECT_EQ(d.fill_mode, FillMode::oracle);
  EXPECT_EQ(d.trace.packets, seg.packets);
}

TEST(ApplyTrace, ZeroFillSpan)
{
  const auto clip = noise(960, 6);
  const auto d = apply_trace(clip, whole(trace_with_losses(3, {1})), FillMode::zero);
  for (std::size_t i = 0; i < 960; ++i)
  {
    if (i >= 320 && i < 640)
      ASSERT_EQ(d.audio.samples()[i], 0.0) << i;
    else
      ASSERT_EQ(d.audio.samples()[i], clip.samples()[i]) << i;
  }
}

TEST(ApplyTrace, LengthMismatch)
{
  EXPECT_THROW(apply_trace(noise(959, 7), whole(trace_with_losses(3, {1})), FillMode::zero), InvalidArgument);
}

TEST(ApplyTrace, ZeroFillProperties)
{
  for (std::uint64_t seed = 0; seed < 30; ++seed)
  {
    GilbertParams g{0.1, 0.3, 1.0, 0.0, seed};
    const auto seg = whole(synth_gilbert(g, 50, 10.0));
    const auto clip = noise(50 * 160, seed + 100);
    const auto once = apply_trace(clip, seg, FillMode::zero).audio;
    EXPECT_EQ(apply_trace(once, seg, FillMode::zero).audio, once);
    EXPECT_LE(energy(once), energy(clip));
    if (seg.packets.lost_count() > 0)
      EXPECT_LT(energy(once), energy(clip));
    for (std::size_t p = 0; p < 50; ++p)
      if (!seg.packets.packets()[p].lost)
        for (std::size_t k = p * 160; k < (p + 1) * 160; ++k)
          ASSERT_EQ(once.samples()[k], clip.samples()[k]);
  }
}

TEST(DegradeClip, CutsToTraceLength)
{
  const auto clean = noise(40000, 8);
  const auto seg = whole(trace_with_losses(100, {10, 11}));
  const auto d = degrade_clip(clean, seg, FillMode::zero, 3);
  EXPECT_EQ(d.audio.size(), 32000u);
  EXPECT_EQ(d.audio.samples()[3200], 0.0);
  EXPECT_EQ(degrade_clip(clean, seg, FillMode::zero, 3).audio, d.audio);
}

TEST(FillMode, Names)
{
  EXPECT_EQ(fill_mode_from_string("zero"), FillMode::zero);
  EXPECT_EQ(to_string(FillMode::oracle), "oracle");
  EXPECT_THROW(fill_mode_from_string("plc"), InvalidArgument);
}
