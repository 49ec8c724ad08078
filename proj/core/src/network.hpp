#pragma once

// Forward and reverse-mode passes of the scoring network. Internal to the
// core library; model.cpp and training.cpp build on these.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "plcmos/error.hpp"
#include "plcmos/model.hpp"
#include "plcmos/random.hpp"

namespace plcmos::detail {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <class T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using ConstRowMap = Eigen::Map<const RowMat<T>>;
template <class T>
using RowMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstVecMap = Eigen::Map<const Vec<T>>;
template <class T>
using VecMap = Eigen::Map<Vec<T>>;

using Index = Eigen::Index;

/// Tensor indices by role, resolved from tensor_specs names.
struct Layout
{
  struct Gru
  {
    std::size_t w_ih, w_hh, b_ih, b_hh;
  };

  std::vector<std::size_t> conv_w, conv_b;
  std::size_t proj_w = 0, proj_b = 0;
  std::vector<Gru> gru;
  std::vector<std::size_t> id_w, id_b, head_w, head_b;

  explicit Layout(const ModelConfig& config)
  {
    std::map<std::string, std::size_t> index;
    const auto specs = tensor_specs(config);
    for (std::size_t i = 0; i < specs.size(); ++i)
      index[specs[i].name] = i;
    auto get = [&](const std::string& name) { return index.at(name); };

    for (std::size_t l = 0; l < config.conv_channels.size(); ++l)
    {
      conv_w.push_back(get("conv" + std::to_string(l) + ".weight"));
      conv_b.push_back(get("conv" + std::to_string(l) + ".bias"));
    }
    proj_w = get("proj.weight");
    proj_b = get("proj.bias");
    for (const char* dir : {"fwd", "bwd"})
    {
      if (std::string{dir} == "bwd" && !config.gru_bidirectional)
        break;
      const std::string p = std::string{"gru."} + dir + ".";
      gru.push_back({get(p + "w_ih"), get(p + "w_hh"), get(p + "b_ih"), get(p + "b_hh")});
    }
    for (std::size_t l = 0; l < config.id_mlp_sizes.size(); ++l)
    {
      id_w.push_back(get("id_mlp." + std::to_string(l) + ".weight"));
      id_b.push_back(get("id_mlp." + std::to_string(l) + ".bias"));
    }
    for (std::size_t l = 0; l < config.head_sizes.size(); ++l)
    {
      head_w.push_back(get("head." + std::to_string(l) + ".weight"));
      head_b.push_back(get("head." + std::to_string(l) + ".bias"));
    }
  }
};

template <class T>
T sigmoid(T x)
{
  if (x >= T(0))
    return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <class T>
ConstRowMap<T> matrix(const Tensor<T>& t, std::size_t rows)
{
  return {t.values.data(), static_cast<Index>(rows), static_cast<Index>(t.values.size() / rows)};
}

template <class T>
RowMap<T> matrix(Tensor<T>& t, std::size_t rows)
{
  return {t.values.data(), static_cast<Index>(rows), static_cast<Index>(t.values.size() / rows)};
}

template <class T>
ConstVecMap<T> vector(const Tensor<T>& t)
{
  return {t.values.data(), static_cast<Index>(t.values.size())};
}

template <class T>
VecMap<T> vector(Tensor<T>& t)
{
  return {t.values.data(), static_cast<Index>(t.values.size())};
}

// ---------------------------------------------------------------------------
// 2D convolution over (time, frequency) with time dilation and zero padding.
// Feature maps are C x (T * F) column-major; column index is t * F + f.

struct ConvGeometry
{
  std::size_t c_in, c_out, bins_in, bins_out, kernel, dilation;
  bool pooled;
};

inline std::vector<ConvGeometry> conv_geometry(const ModelConfig& config)
{
  std::vector<ConvGeometry> out;
  std::size_t bins = config.input_bins;
  std::size_t channels = 1;
  for (std::size_t l = 0; l < config.conv_channels.size(); ++l)
  {
    const bool pooled = l < config.pool_layers();
    const std::size_t next = pooled ? (bins + 1) / 2 : bins;
    out.push_back({channels, config.conv_channels[l], bins, next, config.conv_kernel, config.time_dilation, pooled});
    bins = next;
    channels = config.conv_channels[l];
  }
  return out;
}

template <class T>
struct ConvCache
{
  Mat<T> cols;
  Mat<T> pre;
  std::vector<Index> argmax;
};

// Kernel-major weight matrix: column (kt * k + kf) * c_in + ci.
template <class T>
Mat<T> kernel_major(const Tensor<T>& w, const ConvGeometry& g)
{
  const auto kk = g.kernel * g.kernel;
  Mat<T> out(static_cast<Index>(g.c_out), static_cast<Index>(kk * g.c_in));
  for (std::size_t co = 0; co < g.c_out; ++co)
    for (std::size_t ci = 0; ci < g.c_in; ++ci)
      for (std::size_t k = 0; k < kk; ++k)
        out(static_cast<Index>(co), static_cast<Index>(k * g.c_in + ci)) = w.values[(co * g.c_in + ci) * kk + k];
  return out;
}

template <class T>
void add_kernel_major_grad(const Mat<T>& dw, const ConvGeometry& g, Tensor<T>& grad)
{
  const auto kk = g.kernel * g.kernel;
  for (std::size_t co = 0; co < g.c_out; ++co)
    for (std::size_t ci = 0; ci < g.c_in; ++ci)
      for (std::size_t k = 0; k < kk; ++k)
        grad.values[(co * g.c_in + ci) * kk + k] += dw(static_cast<Index>(co), static_cast<Index>(k * g.c_in + ci));
}

template <class T>
Mat<T> im2col(const Mat<T>& x, std::size_t frames, const ConvGeometry& g)
{
  const auto k = static_cast<std::ptrdiff_t>(g.kernel);
  const auto half = k / 2;
  const auto bins = static_cast<std::ptrdiff_t>(g.bins_in);
  const auto len = static_cast<std::ptrdiff_t>(frames);
  const auto dil = static_cast<std::ptrdiff_t>(g.dilation);
  const auto cin = static_cast<Index>(g.c_in);
  Mat<T> cols = Mat<T>::Zero(static_cast<Index>(g.kernel * g.kernel * g.c_in), static_cast<Index>(frames * g.bins_in));
  for (std::ptrdiff_t t = 0; t < len; ++t)
    for (std::ptrdiff_t f = 0; f < bins; ++f)
    {
      T* dst = cols.col(t * bins + f).data();
      for (std::ptrdiff_t kt = 0; kt < k; ++kt)
      {
        const auto ts = t + (kt - half) * dil;
        if (ts < 0 || ts >= len)
          continue;
        for (std::ptrdiff_t kf = 0; kf < k; ++kf)
        {
          const auto fs = f + kf - half;
          if (fs < 0 || fs >= bins)
            continue;
          const T* src = x.col(ts * bins + fs).data();
          std::copy(src, src + cin, dst + (kt * k + kf) * cin);
        }
      }
    }
  return cols;
}

template <class T>
Mat<T> col2im(const Mat<T>& dcols, std::size_t frames, const ConvGeometry& g)
{
  const auto k = static_cast<std::ptrdiff_t>(g.kernel);
  const auto half = k / 2;
  const auto bins = static_cast<std::ptrdiff_t>(g.bins_in);
  const auto len = static_cast<std::ptrdiff_t>(frames);
  const auto dil = static_cast<std::ptrdiff_t>(g.dilation);
  const auto cin = static_cast<Index>(g.c_in);
  Mat<T> dx = Mat<T>::Zero(cin, static_cast<Index>(frames * g.bins_in));
  for (std::ptrdiff_t t = 0; t < len; ++t)
    for (std::ptrdiff_t f = 0; f < bins; ++f)
    {
      const T* src = dcols.col(t * bins + f).data();
      for (std::ptrdiff_t kt = 0; kt < k; ++kt)
      {
        const auto ts = t + (kt - half) * dil;
        if (ts < 0 || ts >= len)
          continue;
        for (std::ptrdiff_t kf = 0; kf < k; ++kf)
        {
          const auto fs = f + kf - half;
          if (fs < 0 || fs >= bins)
            continue;
          T* dst = dx.col(ts * bins + fs).data();
          const T* s = src + (kt * k + kf) * cin;
          for (Index c = 0; c < cin; ++c)
            dst[c] += s[c];
        }
      }
    }
  return dx;
}

template <class T>
Mat<T> activate(const Mat<T>& pre, Activation act)
{
  return act == Activation::relu ? Mat<T>(pre.cwiseMax(T(0))) : pre;
}

template <class T>
Mat<T> activation_grad(const Mat<T>& dout, const Mat<T>& pre, Activation act)
{
  if (act == Activation::identity)
    return dout;
  return dout.cwiseProduct((pre.array() > T(0)).template cast<T>().matrix());
}

// 2x max pool along frequency; the last window is partial for odd bins.
template <class T>
Mat<T> pool_frequency(const Mat<T>& x, std::size_t frames, std::size_t bins, std::vector<Index>& argmax)
{
  const std::size_t out_bins = (bins + 1) / 2;
  const Index channels = x.rows();
  Mat<T> out(channels, static_cast<Index>(frames * out_bins));
  argmax.assign(static_cast<std::size_t>(out.size()), 0);
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t p = 0; p < out_bins; ++p)
    {
      const auto j = static_cast<Index>(t * out_bins + p);
      const auto a = static_cast<Index>(t * bins + 2 * p);
      const bool pair = 2 * p + 1 < bins;
      for (Index c = 0; c < channels; ++c)
      {
        Index best = a;
        if (pair && x(c, a + 1) > x(c, a))
          best = a + 1;
        out(c, j) = x(c, best);
        argmax[static_cast<std::size_t>(j * channels + c)] = best;
      }
    }
  return out;
}

template <class T>
Mat<T> unpool_frequency(const Mat<T>& dout, std::size_t frames, std::size_t bins, const std::vector<Index>& argmax)
{
  const Index channels = dout.rows();
  Mat<T> dx = Mat<T>::Zero(channels, static_cast<Index>(frames * bins));
  for (Index j = 0; j < dout.cols(); ++j)
    for (Index c = 0; c < channels; ++c)
      dx(c, argmax[static_cast<std::size_t>(j * channels + c)]) += dout(c, j);
  return dx;
}

// ---------------------------------------------------------------------------
// GRU over the projected frames. Gate order in the stacked tensors: r, z, n.

template <class T>
struct GruCache
{
  std::vector<Index> order; // time index processed at each step
  Mat<T> r, z, n, ghn, hprev;
  Vec<T> h;
};

template <class T>
GruCache<T> gru_forward(const Mat<T>& input, const ModelWeights<T>& w, const Layout::Gru& idx, std::size_t hidden, bool reverse)
{
  const auto H = static_cast<Index>(hidden);
  const Index steps = input.cols();
  const auto w_ih = matrix(w.tensors()[idx.w_ih], 3 * hidden);
  const auto w_hh = matrix(w.tensors()[idx.w_hh], 3 * hidden);
  const auto b_ih = vector(w.tensors()[idx.b_ih]);
  const auto b_hh = vector(w.tensors()[idx.b_hh]);

  Mat<T> gi = w_ih * input;
  gi.colwise() += b_ih;

  GruCache<T> c;
  c.r.resize(H, steps);
  c.z.resize(H, steps);
  c.n.resize(H, steps);
  c.ghn.resize(H, steps);
  c.hprev.resize(H, steps);
  c.h = Vec<T>::Zero(H);
  for (Index s = 0; s < steps; ++s)
  {
    const Index t = reverse ? steps - 1 - s : s;
    c.order.push_back(t);
    const Vec<T> gh = w_hh * c.h + b_hh;
    c.hprev.col(s) = c.h;
    for (Index i = 0; i < H; ++i)
    {
      const T r = sigmoid(gi(i, t) + gh(i));
      const T z = sigmoid(gi(H + i, t) + gh(H + i));
      const T n = std::tanh(gi(2 * H + i, t) + r * gh(2 * H + i));
      c.r(i, s) = r;
      c.z(i, s) = z;
      c.n(i, s) = n;
      c.ghn(i, s) = gh(2 * H + i);
      c.h(i) = (T(1) - z) * n + z * c.h(i);
    }
  }
  return c;
}

// Accumulates parameter gradients and returns d(loss)/d(input).
template <class T>
Mat<T> gru_backward(const GruCache<T>& c,
                    const Mat<T>& input,
                    const Vec<T>& dh_final,
                    const ModelWeights<T>& w,
                    const Layout::Gru& idx,
                    std::size_t hidden,
                    ModelWeights<T>& grads)
{
  const auto H = static_cast<Index>(hidden);
  const Index steps = input.cols();
  const auto w_ih = matrix(w.tensors()[idx.w_ih], 3 * hidden);
  const auto w_hh = matrix(w.tensors()[idx.w_hh], 3 * hidden);
  auto dw_ih = matrix(grads.tensors()[idx.w_ih], 3 * hidden);
  auto dw_hh = matrix(grads.tensors()[idx.w_hh], 3 * hidden);
  auto db_ih = vector(grads.tensors()[idx.b_ih]);
  auto db_hh = vector(grads.tensors()[idx.b_hh]);

  Mat<T> dgi = Mat<T>::Zero(3 * H, steps);
  Vec<T> dh = dh_final;
  Vec<T> dgh(3 * H);
  for (Index s = steps - 1; s >= 0; --s)
  {
    const Index t = c.order[static_cast<std::size_t>(s)];
    Vec<T> dhprev(H);
    for (Index i = 0; i < H; ++i)
    {
      const T r = c.r(i, s), z = c.z(i, s), n = c.n(i, s);
      const T dn = dh(i) * (T(1) - z);
      const T dz = dh(i) * (c.hprev(i, s) - n);
      dhprev(i) = dh(i) * z;
      const T dan = dn * (T(1) - n * n);
      const T dr = dan * c.ghn(i, s);
      const T daz = dz * z * (T(1) - z);
      const T dar = dr * r * (T(1) - r);
      dgi(i, t) = dar;
      dgi(H + i, t) = daz;
      dgi(2 * H + i, t) = dan;
      dgh(i) = dar;
      dgh(H + i) = daz;
      dgh(2 * H + i) = dan * r;
    }
    dw_hh.noalias() += dgh * c.hprev.col(s).transpose();
    db_hh += dgh;
    dhprev.noalias() += w_hh.transpose() * dgh;
    dh = dhprev;
  }
  dw_ih.noalias() += dgi * input.transpose();
  db_ih += dgi.rowwise().sum();
  return w_ih.transpose() * dgi;
}

// ---------------------------------------------------------------------------
// Audio encoder: conv stack -> per-frame flatten -> 1D projection -> GRU.

template <class T>
struct EncoderCache
{
  std::size_t frames = 0;
  std::vector<ConvCache<T>> conv;
  Mat<T> stacked; // projection input, (kernel_w * D) x T'
  Mat<T> projected;
  std::vector<GruCache<T>> gru;
  Vec<T> embedding;
};

template <class T>
EncoderCache<T> encoder_forward(const Spectrogram& spec, const ModelWeights<T>& w, const Layout& layout, bool keep)
{
  const auto& cfg = w.config();
  if (spec.bins != cfg.input_bins)
    throw InvalidArgument("spectrogram has " + std::to_string(spec.bins) + " bins, model expects " +
                          std::to_string(cfg.input_bins));
  if (spec.frames < cfg.min_frames())
    throw InvalidArgument("spectrogram has " + std::to_string(spec.frames) + " frames, model needs at least " +
                          std::to_string(cfg.min_frames()));

  EncoderCache<T> c;
  c.frames = spec.frames;
  const auto geometry = conv_geometry(cfg);

  Mat<T> x(1, static_cast<Index>(spec.frames * spec.bins));
  for (std::size_t i = 0; i < spec.values.size(); ++i)
    x(0, static_cast<Index>(i)) = static_cast<T>(spec.values[i]);

  for (std::size_t l = 0; l < geometry.size(); ++l)
  {
    const auto& g = geometry[l];
    ConvCache<T> cc;
    cc.cols = im2col(x, spec.frames, g);
    cc.pre = kernel_major(w.tensors()[layout.conv_w[l]], g) * cc.cols;
    cc.pre.colwise() += vector(w.tensors()[layout.conv_b[l]]);
    Mat<T> act = activate(cc.pre, cfg.hidden_activation);
    x = g.pooled ? pool_frequency(act, spec.frames, g.bins_in, cc.argmax) : std::move(act);
    if (!keep)
    {
      cc.cols.resize(0, 0);
      cc.pre.resize(0, 0);
    }
    c.conv.push_back(std::move(cc));
  }

  // Flatten over (channel, pooled bin): d = c * bins + f.
  const std::size_t bins = geometry.empty() ? cfg.input_bins : geometry.back().bins_out;
  const auto channels = static_cast<std::size_t>(x.rows());
  const std::size_t dim = channels * bins;
  const std::size_t kw = cfg.proj_kernel_w;
  const std::size_t out_frames = spec.frames - kw + 1;
  c.stacked.resize(static_cast<Index>(kw * dim), static_cast<Index>(out_frames));
  for (std::size_t t = 0; t < out_frames; ++t)
    for (std::size_t j = 0; j < kw; ++j)
      for (std::size_t ch = 0; ch < channels; ++ch)
        for (std::size_t f = 0; f < bins; ++f)
          c.stacked(static_cast<Index>(j * dim + ch * bins + f), static_cast<Index>(t)) =
            x(static_cast<Index>(ch), static_cast<Index>((t + j) * bins + f));

  c.projected = matrix(w.tensors()[layout.proj_w], cfg.proj_dim) * c.stacked;
  c.projected.colwise() += vector(w.tensors()[layout.proj_b]);

  c.embedding.resize(static_cast<Index>(cfg.embedding_dim()));
  for (std::size_t d = 0; d < layout.gru.size(); ++d)
  {
    c.gru.push_back(gru_forward(c.projected, w, layout.gru[d], cfg.gru_hidden, d == 1));
    c.embedding.segment(static_cast<Index>(d * cfg.gru_hidden), static_cast<Index>(cfg.gru_hidden)) = c.gru.back().h;
  }
  return c;
}

template <class T>
void encoder_backward(const EncoderCache<T>& c,
                      const Vec<T>& dembedding,
                      const ModelWeights<T>& w,
                      const Layout& layout,
                      ModelWeights<T>& grads)
{
  const auto& cfg = w.config();
  const auto geometry = conv_geometry(cfg);

  Mat<T> dproj = Mat<T>::Zero(c.projected.rows(), c.projected.cols());
  for (std::size_t d = 0; d < layout.gru.size(); ++d)
  {
    const Vec<T> dh = dembedding.segment(static_cast<Index>(d * cfg.gru_hidden), static_cast<Index>(cfg.gru_hidden));
    dproj += gru_backward(c.gru[d], c.projected, dh, w, layout.gru[d], cfg.gru_hidden, grads);
  }

  const auto pw = matrix(w.tensors()[layout.proj_w], cfg.proj_dim);
  matrix(grads.tensors()[layout.proj_w], cfg.proj_dim).noalias() += dproj * c.stacked.transpose();
  vector(grads.tensors()[layout.proj_b]) += dproj.rowwise().sum();
  const Mat<T> dstacked = pw.transpose() * dproj;

  if (geometry.empty())
    return;

  const std::size_t bins = geometry.back().bins_out;
  const std::size_t channels = geometry.back().c_out;
  const std::size_t dim = channels * bins;
  const std::size_t kw = cfg.proj_kernel_w;
  Mat<T> dx = Mat<T>::Zero(static_cast<Index>(channels), static_cast<Index>(c.frames * bins));
  for (Index t = 0; t < dstacked.cols(); ++t)
    for (std::size_t j = 0; j < kw; ++j)
      for (std::size_t ch = 0; ch < channels; ++ch)
        for (std::size_t f = 0; f < bins; ++f)
          dx(static_cast<Index>(ch), static_cast<Index>((static_cast<std::size_t>(t) + j) * bins + f)) +=
            dstacked(static_cast<Index>(j * dim + ch * bins + f), t);

  for (std::size_t l = geometry.size(); l-- > 0;)
  {
    const auto& g = geometry[l];
    const auto& cc = c.conv[l];
    Mat<T> dact = g.pooled ? unpool_frequency(dx, c.frames, g.bins_in, cc.argmax) : std::move(dx);
    const Mat<T> dpre = activation_grad(dact, cc.pre, cfg.hidden_activation);
    add_kernel_major_grad(Mat<T>(dpre * cc.cols.transpose()), g, grads.tensors()[layout.conv_w[l]]);
    vector(grads.tensors()[layout.conv_b[l]]) += dpre.rowwise().sum();
    if (l > 0)
      dx = col2im(Mat<T>(kernel_major(w.tensors()[layout.conv_w[l]], g).transpose() * dpre), c.frames, g);
  }
}

// ---------------------------------------------------------------------------
// Fully connected stacks. Hidden layers: activation then dropout; the last
// layer is linear.

template <class T>
struct MlpCache
{
  std::vector<Vec<T>> input, pre, mask;
};

template <class T>
Vec<T> mlp_forward(Vec<T> x,
                   const ModelWeights<T>& w,
                   const std::vector<std::size_t>& wi,
                   const std::vector<std::size_t>& bi,
                   Rng* dropout_rng,
                   MlpCache<T>* cache)
{
  const auto& cfg = w.config();
  for (std::size_t l = 0; l < wi.size(); ++l)
  {
    const auto& bias = w.tensors()[bi[l]];
    Vec<T> pre = matrix(w.tensors()[wi[l]], bias.values.size()) * x + vector(bias);
    if (cache)
    {
      cache->input.push_back(x);
      cache->pre.push_back(pre);
    }
    if (l + 1 == wi.size())
      return pre;
    Vec<T> a = cfg.hidden_activation == Activation::relu ? Vec<T>(pre.cwiseMax(T(0))) : pre;
    Vec<T> mask = Vec<T>::Ones(a.size());
    if (dropout_rng && cfg.dropout > 0.0)
    {
      const T keep = T(1) / static_cast<T>(1.0 - cfg.dropout);
      for (Index i = 0; i < mask.size(); ++i)
        mask(i) = uniform01(*dropout_rng) < cfg.dropout ? T(0) : keep;
      a = a.cwiseProduct(mask);
    }
    if (cache)
      cache->mask.push_back(mask);
    x = std::move(a);
  }
  return x;
}

template <class T>
Vec<T> mlp_backward(const MlpCache<T>& c,
                    Vec<T> dout,
                    const ModelWeights<T>& w,
                    const std::vector<std::size_t>& wi,
                    const std::vector<std::size_t>& bi,
                    ModelWeights<T>& grads)
{
  const auto& cfg = w.config();
  for (std::size_t l = wi.size(); l-- > 0;)
  {
    Vec<T> dpre = dout;
    if (l + 1 < wi.size())
    {
      dpre = dpre.cwiseProduct(c.mask[l]);
      if (cfg.hidden_activation == Activation::relu)
        dpre = dpre.cwiseProduct((c.pre[l].array() > T(0)).template cast<T>().matrix());
    }
    const auto rows = grads.tensors()[bi[l]].values.size();
    matrix(grads.tensors()[wi[l]], rows).noalias() += dpre * c.input[l].transpose();
    vector(grads.tensors()[bi[l]]) += dpre;
    dout = matrix(w.tensors()[wi[l]], rows).transpose() * dpre;
  }
  return dout;
}

// ---------------------------------------------------------------------------
// Rater pathway and head on top of a precomputed audio embedding.

template <class T>
struct HeadCache
{
  MlpCache<T> id, head;
  Vec<T> head_input;
  T logit{};
  T score{};
};

template <class T>
T score_from_logit(T logit, const ModelConfig& cfg)
{
  if (cfg.output_transform == OutputTransform::identity)
    return logit;
  return static_cast<T>(cfg.score_lo) + static_cast<T>(cfg.score_hi - cfg.score_lo) * sigmoid(logit);
}

template <class T>
T dscore_dlogit(T logit, const ModelConfig& cfg)
{
  if (cfg.output_transform == OutputTransform::identity)
    return T(1);
  const T s = sigmoid(logit);
  return static_cast<T>(cfg.score_hi - cfg.score_lo) * s * (T(1) - s);
}

template <class T>
HeadCache<T> head_forward(const Vec<T>& embedding,
                          const RaterVector& rater,
                          const ModelWeights<T>& w,
                          const Layout& layout,
                          Rng* dropout_rng,
                          bool keep)
{
  const auto& cfg = w.config();
  if (rater.size() != cfg.id_dim)
    throw InvalidArgument("rater vector has " + std::to_string(rater.size()) + " entries, model expects " +
                          std::to_string(cfg.id_dim));
  Vec<T> v(static_cast<Index>(rater.size()));
  for (std::size_t i = 0; i < rater.size(); ++i)
    v(static_cast<Index>(i)) = static_cast<T>(rater[i]);

  HeadCache<T> c;
  const Vec<T> id_out = mlp_forward(std::move(v), w, layout.id_w, layout.id_b, dropout_rng, keep ? &c.id : nullptr);
  c.head_input.resize(embedding.size() + id_out.size());
  c.head_input << embedding, id_out;
  const Vec<T> out = mlp_forward(c.head_input, w, layout.head_w, layout.head_b, dropout_rng, keep ? &c.head : nullptr);
  c.logit = out(0);
  c.score = score_from_logit(c.logit, cfg);
  return c;
}

// Returns d(loss)/d(embedding) given d(loss)/d(logit).
template <class T>
Vec<T> head_backward(const HeadCache<T>& c, T dlogit, const ModelWeights<T>& w, const Layout& layout, ModelWeights<T>& grads)
{
  const auto& cfg = w.config();
  Vec<T> dout(1);
  dout(0) = dlogit;
  const Vec<T> dinput = mlp_backward(c.head, std::move(dout), w, layout.head_w, layout.head_b, grads);
  const auto emb = static_cast<Index>(cfg.embedding_dim());
  if (!layout.id_w.empty())
    mlp_backward(c.id, Vec<T>(dinput.tail(dinput.size() - emb)), w, layout.id_w, layout.id_b, grads);
  return dinput.head(emb);
}

} // namespace plcmos::detail
