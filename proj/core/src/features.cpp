#include "plcmos/features.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <memory>
#include <mutex>
#include <numbers>

#include <fftw3.h>
#include <nlohmann/json.hpp>

#include "plcmos/error.hpp"
#include "plcmos/random.hpp"

namespace plcmos {

namespace {

struct FftwDeleter
{
  void operator()(void* p) const noexcept { fftw_free(p); }
};

template <class T>
using FftwBuffer = std::unique_ptr<T[], FftwDeleter>;

// FFTW planning is not thread-safe; executing a plan on new arrays is.
class RealFft
{
public:
  RealFft()
  {
    FftwBuffer<double> in{fftw_alloc_real(fft_size)};
    FftwBuffer<fftw_complex> out{fftw_alloc_complex(spectrum_bins)};
    std::lock_guard lock{planner_mutex()};
    m_plan = fftw_plan_dft_r2c_1d(static_cast<int>(fft_size), in.get(), out.get(), FFTW_ESTIMATE | FFTW_UNALIGNED);
  }

  ~RealFft()
  {
    std::lock_guard lock{planner_mutex()};
    fftw_destroy_plan(m_plan);
  }

  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  void execute(double* in, fftw_complex* out) const { fftw_execute_dft_r2c(m_plan, in, out); }

  static const RealFft& instance()
  {
    static const RealFft fft;
    return fft;
  }

private:
  static std::mutex& planner_mutex()
  {
    static std::mutex m;
    return m;
  }

  fftw_plan m_plan;
};

void power_spectrum_into(std::span<const double> frame, double* in, fftw_complex* out, std::span<double> power)
{
  const auto& window = hamming_window();
  for (std::size_t i = 0; i < fft_size; ++i)
    in[i] = frame[i] * window[i];
  RealFft::instance().execute(in, out);
  for (std::size_t k = 0; k < spectrum_bins; ++k)
    power[k] = out[k][0] * out[k][0] + out[k][1] * out[k][1];
}

} // namespace

const std::vector<double>& hamming_window()
{
  static const std::vector<double> window = [] {
    std::vector<double> w(fft_size);
    for (std::size_t n = 0; n < fft_size; ++n)
      w[n] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) / static_cast<double>(fft_size));
    return w;
  }();
  return window;
}

std::vector<double> power_spectrum(std::span<const double> frame)
{
  if (frame.size() != fft_size)
    throw InvalidArgument("power_spectrum needs exactly 512 samples");
  FftwBuffer<double> in{fftw_alloc_real(fft_size)};
  FftwBuffer<fftw_complex> out{fftw_alloc_complex(spectrum_bins)};
  std::vector<double> power(spectrum_bins);
  power_spectrum_into(frame, in.get(), out.get(), power);
  return power;
}

Spectrogram logpow_spectrogram(const AudioClip& clip)
{
  const auto frames = frame_count(clip.size());
  if (frames == 0)
    throw InvalidArgument("clip of " + std::to_string(clip.size()) + " samples is shorter than one 512-sample window");

  Spectrogram spec;
  spec.frames = frames;
  spec.values.resize(frames * spectrum_bins);

  FftwBuffer<double> in{fftw_alloc_real(fft_size)};
  FftwBuffer<fftw_complex> out{fftw_alloc_complex(spectrum_bins)};
  const auto samples = clip.samples();
  for (std::size_t t = 0; t < frames; ++t)
  {
    std::span<double> row{spec.values.data() + t * spectrum_bins, spectrum_bins};
    power_spectrum_into(samples.subspan(t * frame_shift, fft_size), in.get(), out.get(), row);
    for (auto& v : row)
      v = std::log(v + log_floor);
  }
  return spec;
}

Microaugmentation draw_microaugmentation(std::uint64_t rng_seed)
{
  Rng rng{rng_seed};
  Microaugmentation aug;
  aug.trim = static_cast<std::size_t>(uniform_index(rng, max_trim_samples + 1));
  aug.gain_db = -max_attenuation_db * uniform01(rng);
  return aug;
}

AudioClip microaugment(const AudioClip& clip, const Microaugmentation& aug)
{
  if (clip.size() <= max_trim_samples)
    throw InvalidArgument("microaugment needs more than 10 samples");
  if (aug.trim > max_trim_samples || aug.gain_db > 0.0 || aug.gain_db < -max_attenuation_db)
    throw InvalidArgument("microaugmentation parameters out of range");
  const double gain = std::pow(10.0, aug.gain_db / 20.0);
  const auto samples = clip.samples().subspan(aug.trim);
  std::vector<double> out(samples.size());
  std::transform(samples.begin(), samples.end(), out.begin(), [gain](double x) { return x * gain; });
  return AudioClip{std::move(out)};
}

AudioClip microaugment(const AudioClip& clip, std::uint64_t rng_seed)
{
  return microaugment(clip, draw_microaugmentation(rng_seed));
}

std::vector<std::uint8_t> dump_features(const Spectrogram& spec)
{
  static_assert(std::endian::native == std::endian::little, "feature dumps assume a little-endian host");
  const nlohmann::json header = {
    {"format", "plcmos-features"}, {"T", spec.frames}, {"F", spec.bins}, {"dtype", "float32"},
    {"window", "hamming-periodic"}, {"window_samples", fft_size}, {"shift_samples", frame_shift},
    {"log_floor", log_floor}, {"sample_rate_hz", sample_rate_hz},
  };
  const auto text = header.dump() + "\n";
  std::vector<std::uint8_t> out(text.begin(), text.end());
  const auto offset = out.size();
  out.resize(offset + spec.values.size() * sizeof(float));
  for (std::size_t i = 0; i < spec.values.size(); ++i)
  {
    const auto v = static_cast<float>(spec.values[i]);
    std::memcpy(out.data() + offset + i * sizeof(float), &v, sizeof(float));
  }
  return out;
}

Spectrogram load_feature_dump(std::span<const std::uint8_t> bytes)
{
  const auto newline = std::find(bytes.begin(), bytes.end(), std::uint8_t{'\n'});
  if (newline == bytes.end())
    throw Error("feature dump has no header line");
  const auto header = nlohmann::json::parse(bytes.begin(), newline, nullptr, false);
  if (header.is_discarded() || !header.contains("T") || !header.contains("F"))
    throw Error("feature dump header is not valid JSON");
  Spectrogram spec;
  spec.frames = header["T"].get<std::size_t>();
  spec.bins = header["F"].get<std::size_t>();
  const auto body = static_cast<std::size_t>(bytes.end() - newline - 1);
  if (body != spec.frames * spec.bins * sizeof(float))
    throw Error("feature dump payload size does not match header");
  spec.values.resize(spec.frames * spec.bins);
  const auto* data = bytes.data() + (newline - bytes.begin()) + 1;
  for (std::size_t i = 0; i < spec.values.size(); ++i)
  {
    float v;
    std::memcpy(&v, data + i * sizeof(float), sizeof(float));
    spec.values[i] = v;
  }
  return spec;
}

} // namespace plcmos
