#include "plcmos/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <numeric>

#include <nlohmann/json.hpp>

#include "network.hpp"
#include "plcmos/error.hpp"
#include "plcmos/random.hpp"

namespace plcmos {

namespace {

std::string hex64(std::uint64_t v)
{
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string_view to_string(Activation a) noexcept
{
  return a == Activation::relu ? "relu" : "identity";
}

std::string_view to_string(OutputTransform o) noexcept
{
  return o == OutputTransform::sigmoid ? "sigmoid" : "identity";
}

Activation activation_from_string(const std::string& s)
{
  if (s == "relu")
    return Activation::relu;
  if (s == "identity")
    return Activation::identity;
  throw InvalidArgument("unknown activation '" + s + "'");
}

OutputTransform output_transform_from_string(const std::string& s)
{
  if (s == "sigmoid")
    return OutputTransform::sigmoid;
  if (s == "identity")
    return OutputTransform::identity;
  throw InvalidArgument("unknown output transform '" + s + "'");
}

std::size_t head_input_dim(const ModelConfig& c) noexcept
{
  return c.embedding_dim() + (c.id_mlp_sizes.empty() ? c.id_dim : c.id_mlp_sizes.back());
}

// Uniform init bound for a weight tensor; ReLU-fed layers get the He gain.
double init_bound(const ModelConfig& c, const TensorSpec& spec)
{
  const auto& n = spec.name;
  if (n.starts_with("gru."))
    return 1.0 / std::sqrt(static_cast<double>(c.gru_hidden));
  std::size_t fan_in = 1;
  for (std::size_t i = 1; i < spec.shape.size(); ++i)
    fan_in *= spec.shape[i];
  const bool linear_out = n == "proj.weight" ||
                          n == "id_mlp." + std::to_string(c.id_mlp_sizes.size() - 1) + ".weight" ||
                          n == "head." + std::to_string(c.head_sizes.size() - 1) + ".weight";
  const bool relu = c.hidden_activation == Activation::relu && !linear_out;
  return std::sqrt((relu ? 6.0 : 3.0) / static_cast<double>(std::max<std::size_t>(fan_in, 1)));
}

} // namespace

ModelConfig ModelConfig::tiny()
{
  ModelConfig c;
  c.conv_channels = {2, 2, 2};
  c.proj_dim = 8;
  c.gru_hidden = 4;
  c.id_dim = 8;
  c.id_mlp_sizes = {16, 16, 8};
  c.head_sizes = {16, 16, 1};
  c.n_virtual_raters = 25;
  return c;
}

std::size_t ModelConfig::pool_layers() const noexcept
{
  std::size_t layers = 0;
  for (std::size_t f = freq_pool_total; f > 1; f /= 2)
    ++layers;
  return layers;
}

std::size_t ModelConfig::pooled_bins() const noexcept
{
  std::size_t bins = input_bins;
  for (std::size_t l = 0; l < std::min(pool_layers(), conv_channels.size()); ++l)
    bins = (bins + 1) / 2;
  return bins;
}

std::size_t ModelConfig::flattened_dim() const noexcept
{
  return (conv_channels.empty() ? 1 : conv_channels.back()) * pooled_bins();
}

std::size_t ModelConfig::embedding_dim() const noexcept
{
  return (gru_bidirectional ? 2 : 1) * gru_hidden;
}

std::size_t ModelConfig::min_frames() const noexcept
{
  return std::max<std::size_t>(1, proj_kernel_w);
}

void ModelConfig::validate() const
{
  auto require = [](bool ok, const char* what) {
    if (!ok)
      throw InvalidArgument(std::string{"invalid model config: "} + what);
  };
  require(input_bins >= 1, "input_bins must be positive");
  require(std::all_of(conv_channels.begin(), conv_channels.end(), [](auto c) { return c >= 1; }), "conv channels must be positive");
  require(conv_kernel >= 1 && conv_kernel % 2 == 1, "conv_kernel must be odd");
  require(time_dilation >= 1, "time_dilation must be positive");
  require(freq_pool_total >= 1 && std::has_single_bit(freq_pool_total), "freq_pool_total must be a power of two");
  require(pool_layers() <= conv_channels.size(), "more pooling stages than conv layers");
  require(proj_dim >= 1 && proj_kernel_w >= 1 && gru_hidden >= 1 && id_dim >= 1, "dimensions must be positive");
  require(std::all_of(id_mlp_sizes.begin(), id_mlp_sizes.end(), [](auto c) { return c >= 1; }), "id_mlp sizes must be positive");
  require(id_mlp_sizes.empty() || id_mlp_sizes.back() == id_dim, "id_mlp final size must equal id_dim");
  require(!head_sizes.empty() && head_sizes.back() == 1, "head final size must be 1");
  require(std::all_of(head_sizes.begin(), head_sizes.end(), [](auto c) { return c >= 1; }), "head sizes must be positive");
  require(dropout >= 0.0 && dropout < 1.0, "dropout must be in [0, 1)");
  require(n_virtual_raters >= 1, "n_virtual_raters must be positive");
  require(score_lo < score_hi, "score_lo must be below score_hi");
}

nlohmann::json to_json(const ModelConfig& c)
{
  return {
    {"input_bins", c.input_bins},
    {"conv_channels", c.conv_channels},
    {"conv_kernel", c.conv_kernel},
    {"time_dilation", c.time_dilation},
    {"freq_pool_total", c.freq_pool_total},
    {"proj_dim", c.proj_dim},
    {"proj_kernel_w", c.proj_kernel_w},
    {"gru_hidden", c.gru_hidden},
    {"gru_bidirectional", c.gru_bidirectional},
    {"id_dim", c.id_dim},
    {"id_mlp_sizes", c.id_mlp_sizes},
    {"head_sizes", c.head_sizes},
    {"dropout", c.dropout},
    {"n_virtual_raters", c.n_virtual_raters},
    {"score_lo", c.score_lo},
    {"score_hi", c.score_hi},
    {"hidden_activation", to_string(c.hidden_activation)},
    {"output_transform", to_string(c.output_transform)},
  };
}

ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig c)
{
  try
  {
    auto take = [&](const char* key, auto& field) {
      if (j.contains(key))
        j.at(key).get_to(field);
    };
    take("input_bins", c.input_bins);
    take("conv_channels", c.conv_channels);
    take("conv_kernel", c.conv_kernel);
    take("time_dilation", c.time_dilation);
    take("freq_pool_total", c.freq_pool_total);
    take("proj_dim", c.proj_dim);
    take("proj_kernel_w", c.proj_kernel_w);
    take("gru_hidden", c.gru_hidden);
    take("gru_bidirectional", c.gru_bidirectional);
    take("id_dim", c.id_dim);
    take("id_mlp_sizes", c.id_mlp_sizes);
    take("head_sizes", c.head_sizes);
    take("dropout", c.dropout);
    take("n_virtual_raters", c.n_virtual_raters);
    take("score_lo", c.score_lo);
    take("score_hi", c.score_hi);
    if (j.contains("hidden_activation"))
      c.hidden_activation = activation_from_string(j.at("hidden_activation").get<std::string>());
    if (j.contains("output_transform"))
      c.output_transform = output_transform_from_string(j.at("output_transform").get<std::string>());
  }
  catch (const nlohmann::json::exception& e)
  {
    throw InvalidArgument(std::string{"invalid model config JSON: "} + e.what());
  }
  return c;
}

std::uint64_t config_hash(const ModelConfig& config)
{
  return fnv1a64(to_json(config).dump());
}

std::size_t TensorSpec::size() const noexcept
{
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

std::vector<TensorSpec> tensor_specs(const ModelConfig& c)
{
  std::vector<TensorSpec> specs;
  std::size_t channels = 1;
  for (std::size_t l = 0; l < c.conv_channels.size(); ++l)
  {
    const auto name = "conv" + std::to_string(l);
    specs.push_back({name + ".weight", {c.conv_channels[l], channels, c.conv_kernel, c.conv_kernel}});
    specs.push_back({name + ".bias", {c.conv_channels[l]}});
    channels = c.conv_channels[l];
  }
  specs.push_back({"proj.weight", {c.proj_dim, c.proj_kernel_w, c.flattened_dim()}});
  specs.push_back({"proj.bias", {c.proj_dim}});
  for (const char* dir : {"fwd", "bwd"})
  {
    if (std::string_view{dir} == "bwd" && !c.gru_bidirectional)
      break;
    const auto p = std::string{"gru."} + dir + ".";
    specs.push_back({p + "w_ih", {3 * c.gru_hidden, c.proj_dim}});
    specs.push_back({p + "w_hh", {3 * c.gru_hidden, c.gru_hidden}});
    specs.push_back({p + "b_ih", {3 * c.gru_hidden}});
    specs.push_back({p + "b_hh", {3 * c.gru_hidden}});
  }
  auto dense = [&](const std::string& prefix, const std::vector<std::size_t>& sizes, std::size_t in) {
    for (std::size_t l = 0; l < sizes.size(); ++l)
    {
      const auto name = prefix + "." + std::to_string(l);
      specs.push_back({name + ".weight", {sizes[l], in}});
      specs.push_back({name + ".bias", {sizes[l]}});
      in = sizes[l];
    }
  };
  dense("id_mlp", c.id_mlp_sizes, c.id_dim);
  dense("head", c.head_sizes, head_input_dim(c));
  return specs;
}

std::size_t ParamCount::subtotal(std::string_view prefix) const noexcept
{
  std::size_t sum = 0;
  for (const auto& t : tensors)
    if (t.name.starts_with(prefix))
      sum += t.size();
  return sum;
}

ParamCount count_params(const ModelConfig& config)
{
  ParamCount out;
  out.tensors = tensor_specs(config);
  for (const auto& t : out.tensors)
    out.total += t.size();
  return out;
}

template <class T>
ModelWeights<T> ModelWeights<T>::zeros(const ModelConfig& config)
{
  config.validate();
  ModelWeights w;
  w.m_config = config;
  for (auto& spec : tensor_specs(config))
    w.m_tensors.push_back({spec.name, spec.shape, std::vector<T>(spec.size(), T(0))});
  return w;
}

template <class T>
ModelWeights<T> ModelWeights<T>::random(const ModelConfig& config, std::uint64_t seed)
{
  auto w = zeros(config);
  const auto specs = tensor_specs(config);
  for (std::size_t i = 0; i < specs.size(); ++i)
  {
    const auto& name = specs[i].name;
    if (name.ends_with(".bias") || name.find(".b_") != std::string::npos)
      continue;
    const double bound = init_bound(config, specs[i]);
    Rng rng{derive_seed(seed, {i})};
    for (auto& v : w.m_tensors[i].values)
      v = static_cast<T>(uniform_real(rng, -bound, bound));
  }
  return w;
}

template <class T>
Tensor<T>& ModelWeights<T>::at(std::string_view name)
{
  for (auto& t : m_tensors)
    if (t.name == name)
      return t;
  throw InvalidArgument("no tensor named " + std::string{name});
}

template <class T>
const Tensor<T>& ModelWeights<T>::at(std::string_view name) const
{
  return const_cast<ModelWeights*>(this)->at(name);
}

template <class T>
std::size_t ModelWeights<T>::parameter_count() const noexcept
{
  std::size_t n = 0;
  for (const auto& t : m_tensors)
    n += t.values.size();
  return n;
}

template <class T>
bool ModelWeights<T>::all_finite() const noexcept
{
  for (const auto& t : m_tensors)
    for (T v : t.values)
      if (!std::isfinite(v))
        return false;
  return true;
}

template class ModelWeights<float>;
template class ModelWeights<double>;

RaterVector id_to_vector(std::string_view id, std::size_t dim)
{
  if (id.empty())
    throw InvalidArgument("rater/vote id must be non-empty");
  Rng rng{fnv1a64(id)};
  RaterVector v(dim);
  for (auto& x : v)
    x = standard_normal(rng);
  return v;
}

template <class T>
std::vector<T> encode_audio(const Spectrogram& spec, const ModelWeights<T>& weights)
{
  const detail::Layout layout{weights.config()};
  const auto c = detail::encoder_forward(spec, weights, layout, false);
  return {c.embedding.data(), c.embedding.data() + c.embedding.size()};
}

template <class T>
double predict_vote(const Spectrogram& spec, const RaterVector& rater, const ModelWeights<T>& weights, bool train_mode, std::uint64_t rng_seed)
{
  const detail::Layout layout{weights.config()};
  const auto enc = detail::encoder_forward(spec, weights, layout, false);
  Rng rng{rng_seed};
  return static_cast<double>(detail::head_forward(enc.embedding, rater, weights, layout, train_mode ? &rng : nullptr, false).score);
}

double MosResult::per_rater_stddev() const noexcept
{
  if (per_rater.empty())
    return 0.0;
  double ss = 0.0;
  for (double s : per_rater)
    ss += (s - mos) * (s - mos);
  return std::sqrt(ss / static_cast<double>(per_rater.size()));
}

template <class T>
MosResult infer_mos(const Spectrogram& spec, const ModelWeights<T>& weights, std::uint64_t inference_seed)
{
  const auto& cfg = weights.config();
  const detail::Layout layout{cfg};
  const auto enc = detail::encoder_forward(spec, weights, layout, false);

  Rng rng{inference_seed};
  MosResult out;
  out.per_rater.reserve(cfg.n_virtual_raters);
  double sum = 0.0;
  for (std::size_t r = 0; r < cfg.n_virtual_raters; ++r)
  {
    RaterVector rater(cfg.id_dim);
    for (auto& x : rater)
      x = standard_normal(rng);
    const auto score = static_cast<double>(detail::head_forward(enc.embedding, rater, weights, layout, nullptr, false).score);
    out.per_rater.push_back(score);
    sum += score;
  }
  out.mos = sum / static_cast<double>(out.per_rater.size());
  return out;
}

template std::vector<float> encode_audio(const Spectrogram&, const ModelWeights<float>&);
template std::vector<double> encode_audio(const Spectrogram&, const ModelWeights<double>&);
template double predict_vote(const Spectrogram&, const RaterVector&, const ModelWeights<float>&, bool, std::uint64_t);
template double predict_vote(const Spectrogram&, const RaterVector&, const ModelWeights<double>&, bool, std::uint64_t);
template MosResult infer_mos(const Spectrogram&, const ModelWeights<float>&, std::uint64_t);
template MosResult infer_mos(const Spectrogram&, const ModelWeights<double>&, std::uint64_t);

std::vector<std::uint8_t> save_weights(const ModelWeights<float>& weights)
{
  static_assert(std::endian::native == std::endian::little, "weight files assume a little-endian host");
  nlohmann::json tensors = nlohmann::json::array();
  std::vector<std::uint8_t> payload;
  payload.reserve(weights.parameter_count() * sizeof(float));
  for (const auto& t : weights.tensors())
  {
    tensors.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", payload.size()}, {"count", t.values.size()}});
    const auto* bytes = reinterpret_cast<const std::uint8_t*>(t.values.data());
    payload.insert(payload.end(), bytes, bytes + t.values.size() * sizeof(float));
  }
  const nlohmann::json header = {
    {"format_version", weight_format_version},
    {"dtype", "float32"},
    {"endianness", "little"},
    {"config", to_json(weights.config())},
    {"config_hash", hex64(config_hash(weights.config()))},
    {"tensors", std::move(tensors)},
    {"payload_bytes", payload.size()},
    {"checksum", hex64(fnv1a64({reinterpret_cast<const char*>(payload.data()), payload.size()}))},
  };
  const auto text = header.dump();
  std::vector<std::uint8_t> out(weight_magic.begin(), weight_magic.end());
  out.insert(out.end(), text.begin(), text.end());
  out.push_back('\n');
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

ModelWeights<float> load_weights(std::span<const std::uint8_t> bytes)
{
  if (bytes.size() < weight_magic.size() ||
      !std::equal(weight_magic.begin(), weight_magic.end(), bytes.begin(), [](char c, std::uint8_t u) { return static_cast<std::uint8_t>(c) == u; }))
    throw Error("not a PLCW1 weight file");
  const auto body = bytes.subspan(weight_magic.size());
  const auto newline = std::find(body.begin(), body.end(), std::uint8_t{'\n'});
  if (newline == body.end())
    throw Error("weight file truncated inside header");
  const auto header = nlohmann::json::parse(body.begin(), newline, nullptr, false);
  if (header.is_discarded() || !header.is_object())
    throw Error("weight file header is not valid JSON");

  try
  {
    if (header.value("format_version", -1) != weight_format_version)
      throw VersionError("unsupported weight format version " + header.value("format_version", nlohmann::json{}).dump());
    const auto config = model_config_from_json(header.at("config"));
    if (header.at("config_hash").get<std::string>() != hex64(config_hash(config)))
      throw VersionError("weight file config hash does not match its config; file was written by an incompatible version");

    auto weights = ModelWeights<float>::zeros(config);
    const auto& listed = header.at("tensors");
    if (listed.size() != weights.tensors().size())
      throw StructureError("weight file lists " + std::to_string(listed.size()) + " tensors, config needs " +
                           std::to_string(weights.tensors().size()));

    const auto payload = body.subspan(static_cast<std::size_t>(newline - body.begin()) + 1);
    if (payload.size() != header.at("payload_bytes").get<std::size_t>() || payload.size() != weights.parameter_count() * sizeof(float))
      throw Error("weight file payload is truncated or oversized");
    if (header.at("checksum").get<std::string>() !=
        hex64(fnv1a64({reinterpret_cast<const char*>(payload.data()), payload.size()})))
      throw Error("weight file checksum mismatch");

    for (std::size_t i = 0; i < listed.size(); ++i)
    {
      auto& t = weights.tensors()[i];
      if (listed[i].at("name").get<std::string>() != t.name || listed[i].at("shape").get<std::vector<std::size_t>>() != t.shape)
        throw StructureError("tensor " + std::to_string(i) + " does not match the config (expected " + t.name + ")");
      const auto offset = listed[i].at("offset").get<std::size_t>();
      if (offset > payload.size() || payload.size() - offset < t.values.size() * sizeof(float))
        throw StructureError("tensor " + t.name + " lies outside the payload");
      std::memcpy(t.values.data(), payload.data() + offset, t.values.size() * sizeof(float));
    }
    if (!weights.all_finite())
      throw StructureError("weight file contains non-finite values");
    return weights;
  }
  catch (const nlohmann::json::exception& e)
  {
    throw Error(std::string{"malformed weight file header: "} + e.what());
  }
}

} // namespace plcmos
