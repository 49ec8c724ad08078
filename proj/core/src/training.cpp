#include "plcmos/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "network.hpp"
#include "plcmos/error.hpp"
#include "plcmos/random.hpp"

namespace plcmos {

namespace {

std::vector<std::string_view> split_csv_line(std::string_view line)
{
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true)
  {
    const auto comma = line.find(',', start);
    fields.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos)
      break;
    start = comma + 1;
  }
  return fields;
}

std::string_view strip_cr(std::string_view s)
{
  if (!s.empty() && s.back() == '\r')
    s.remove_suffix(1);
  return s;
}

std::string_view to_string(Precision p) noexcept
{
  return p == Precision::f32 ? "f32" : "f64";
}

std::string_view to_string(LrSchedule s) noexcept
{
  return s == LrSchedule::constant ? "constant" : "cosine";
}

template <class T>
TrainResult train_impl(const TrainingSet& train_set,
                       const TrainingSet* eval_set,
                       const ModelConfig& model_config,
                       const TrainConfig& tc,
                       const TrainCallbacks& callbacks)
{
  auto weights = ModelWeights<T>::random(model_config, derive_seed(tc.rng_seed, {0}));
  auto state = AdamState<T>::init(model_config);

  std::vector<Spectrogram> fixed;
  if (!tc.augment)
    for (const auto& clip : train_set.clips)
      fixed.push_back(logpow_spectrogram(clip));

  std::vector<RaterVector> raters;
  raters.reserve(train_set.votes.size());
  for (const auto& v : train_set.votes)
    raters.push_back(id_to_vector(v.id, model_config.id_dim));

  const std::size_t n = train_set.votes.size();
  const std::size_t steps_per_epoch = (n + tc.batch_size - 1) / tc.batch_size;
  const std::size_t total_steps = steps_per_epoch * tc.epochs;

  TrainResult result;
  std::vector<std::size_t> order(n);
  std::vector<Spectrogram> specs;
  std::vector<VoteExample> batch;
  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch)
  {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng{derive_seed(tc.rng_seed, {1, epoch})};
    shuffle(std::span{order}, shuffle_rng);

    double sse = 0.0;
    for (std::size_t first = 0; first < n; first += tc.batch_size)
    {
      const std::size_t last = std::min(n, first + tc.batch_size);
      specs.clear();
      specs.reserve(last - first);
      batch.clear();
      for (std::size_t k = first; k < last; ++k)
      {
        const auto vi = order[k];
        const auto& vote = train_set.votes[vi];
        if (tc.augment)
          specs.push_back(logpow_spectrogram(microaugment(train_set.clips[vote.clip], derive_seed(tc.rng_seed, {2, epoch, vi}))));
        const Spectrogram* spec = tc.augment ? &specs.back() : &fixed[vote.clip];
        batch.push_back({spec, raters[vi], vote.rating, derive_seed(tc.rng_seed, {3, epoch, vi})});
      }

      auto g = backward<T>(batch, weights, true);
      sse += g.loss * static_cast<double>(batch.size());
      if (tc.grad_clip_norm > 0.0)
      {
        const double norm = gradient_norm(g.grads);
        if (norm > tc.grad_clip_norm)
        {
          const auto scale = static_cast<T>(tc.grad_clip_norm / norm);
          for (auto& t : g.grads.tensors())
            for (auto& v : t.values)
              v *= scale;
        }
      }
      double lr = tc.lr;
      if (tc.schedule == LrSchedule::cosine && total_steps > 0)
        lr *= 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(state.step) / static_cast<double>(total_steps)));
      adamw_update(weights, g.grads, state, tc, lr);
    }

    EpochStats stats;
    stats.epoch = epoch + 1;
    stats.train_mse = sse / static_cast<double>(n);
    if (eval_set && tc.eval_every > 0 && (epoch + 1) % tc.eval_every == 0)
    {
      try
      {
        stats.eval = evaluate_training_set(*eval_set, weights.template cast<float>(), derive_seed(tc.rng_seed, {4}));
      }
      catch (const UndefinedCorrelation&)
      {
      }
    }
    if (callbacks.on_epoch)
      callbacks.on_epoch(stats);
    result.history.push_back(stats);
  }
  result.weights = weights.template cast<float>();
  return result;
}

} // namespace

std::vector<VoteRecord> parse_dataset_manifest(std::string_view csv)
{
  std::vector<VoteRecord> records;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  bool header = false;
  while (pos < csv.size())
  {
    auto end = csv.find('\n', pos);
    if (end == std::string_view::npos)
      end = csv.size();
    const auto line = strip_cr(csv.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (line.empty())
      continue;
    if (!header)
    {
      if (line != "clip_path,rating,id,model_tag,split")
        throw ParseError(line_no, "expected header 'clip_path,rating,id,model_tag,split'");
      header = true;
      continue;
    }
    const auto f = split_csv_line(line);
    if (f.size() != 5)
      throw ParseError(line_no, "expected 5 fields, got " + std::to_string(f.size()));
    VoteRecord r;
    r.clip_path = std::string{f[0]};
    try
    {
      std::size_t used = 0;
      r.rating = std::stod(std::string{f[1]}, &used);
      if (used != f[1].size())
        throw std::invalid_argument("trailing characters");
    }
    catch (const std::exception&)
    {
      throw ParseError(line_no, "invalid rating '" + std::string{f[1]} + "'");
    }
    if (!(r.rating >= 1.0 && r.rating <= 5.0))
      throw ParseError(line_no, "rating must lie in [1, 5]");
    r.id = std::string{f[2]};
    r.model_tag = std::string{f[3]};
    if (r.clip_path.empty() || r.id.empty())
      throw ParseError(line_no, "clip_path and id must be non-empty");
    if (f[4] == "train")
      r.split = Split::train;
    else if (f[4] == "eval")
      r.split = Split::eval;
    else
      throw ParseError(line_no, "split must be 'train' or 'eval'");
    records.push_back(std::move(r));
  }
  if (!header)
    throw ParseError(1, "empty dataset manifest");
  return records;
}

std::vector<VoteRecord> read_dataset_manifest(const std::filesystem::path& path)
{
  std::ifstream in(path);
  if (!in)
    throw Error("cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  try
  {
    return parse_dataset_manifest(buf.str());
  }
  catch (const ParseError& e)
  {
    throw ParseError(e.line(), path.string() + ": " + e.what());
  }
}

void TrainConfig::validate() const
{
  if (epochs < 1 || batch_size < 1)
    throw InvalidArgument("epochs and batch_size must be positive");
  if (!(lr > 0.0))
    throw InvalidArgument("lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
    throw InvalidArgument("betas must lie in [0, 1)");
  if (!(weight_decay >= 0.0) || !(eps >= 0.0) || !(grad_clip_norm >= 0.0))
    throw InvalidArgument("weight_decay, eps and grad_clip_norm must be non-negative");
}

nlohmann::json to_json(const TrainConfig& c)
{
  return {
    {"epochs", c.epochs},
    {"batch_size", c.batch_size},
    {"lr", c.lr},
    {"betas", {c.beta1, c.beta2}},
    {"weight_decay", c.weight_decay},
    {"eps", c.eps},
    {"rng_seed", c.rng_seed},
    {"augment", c.augment},
    {"precision", to_string(c.precision)},
    {"schedule", to_string(c.schedule)},
    {"grad_clip_norm", c.grad_clip_norm},
    {"eval_every", c.eval_every},
  };
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c)
{
  try
  {
    auto take = [&](const char* key, auto& field) {
      if (j.contains(key))
        j.at(key).get_to(field);
    };
    take("epochs", c.epochs);
    take("batch_size", c.batch_size);
    take("lr", c.lr);
    if (j.contains("betas"))
    {
      c.beta1 = j.at("betas").at(0).get<double>();
      c.beta2 = j.at("betas").at(1).get<double>();
    }
    take("weight_decay", c.weight_decay);
    take("eps", c.eps);
    take("rng_seed", c.rng_seed);
    take("augment", c.augment);
    take("grad_clip_norm", c.grad_clip_norm);
    take("eval_every", c.eval_every);
    if (j.contains("precision"))
    {
      const auto p = j.at("precision").get<std::string>();
      if (p != "f32" && p != "f64")
        throw InvalidArgument("precision must be f32 or f64");
      c.precision = p == "f32" ? Precision::f32 : Precision::f64;
    }
    if (j.contains("schedule"))
    {
      const auto s = j.at("schedule").get<std::string>();
      if (s != "constant" && s != "cosine")
        throw InvalidArgument("schedule must be constant or cosine");
      c.schedule = s == "constant" ? LrSchedule::constant : LrSchedule::cosine;
    }
  }
  catch (const nlohmann::json::exception& e)
  {
    throw InvalidArgument(std::string{"invalid train config JSON: "} + e.what());
  }
  return c;
}

double mse_loss(std::span<const double> predicted, std::span<const double> target)
{
  if (predicted.size() != target.size())
    throw InvalidArgument("mse_loss: length mismatch");
  if (predicted.empty())
    throw InvalidArgument("mse_loss: empty batch");
  double sum = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i)
    sum += (predicted[i] - target[i]) * (predicted[i] - target[i]);
  return sum / static_cast<double>(predicted.size());
}

template <class T>
double batch_loss(std::span<const VoteExample> batch, const ModelWeights<T>& weights, bool train_mode)
{
  if (batch.empty())
    throw InvalidArgument("empty batch");
  const detail::Layout layout{weights.config()};
  std::vector<double> scores, targets;
  for (const auto& ex : batch)
  {
    const auto enc = detail::encoder_forward(*ex.spec, weights, layout, false);
    Rng rng{ex.dropout_seed};
    const auto head = detail::head_forward(enc.embedding, ex.rater, weights, layout, train_mode ? &rng : nullptr, false);
    scores.push_back(static_cast<double>(head.score));
    targets.push_back(ex.target);
  }
  return mse_loss(scores, targets);
}

template <class T>
BatchGradients<T> backward(std::span<const VoteExample> batch, const ModelWeights<T>& weights, bool train_mode)
{
  if (batch.empty())
    throw InvalidArgument("empty batch");
  const auto& cfg = weights.config();
  const detail::Layout layout{cfg};
  BatchGradients<T> out;
  out.grads = ModelWeights<T>::zeros(cfg);
  const auto scale = T(2) / static_cast<T>(batch.size());

  double sse = 0.0;
  for (const auto& ex : batch)
  {
    const auto enc = detail::encoder_forward(*ex.spec, weights, layout, true);
    Rng rng{ex.dropout_seed};
    const auto head = detail::head_forward(enc.embedding, ex.rater, weights, layout, train_mode ? &rng : nullptr, true);
    const T diff = head.score - static_cast<T>(ex.target);
    sse += static_cast<double>(diff) * static_cast<double>(diff);
    const T dlogit = scale * diff * detail::dscore_dlogit(head.logit, cfg);

    out.scores.push_back(static_cast<double>(head.score));
    out.logits.push_back(static_cast<double>(head.logit));
    out.dloss_dlogit.push_back(static_cast<double>(dlogit));
    out.head_inputs.emplace_back(head.head_input.data(), head.head_input.data() + head.head_input.size());

    const auto demb = detail::head_backward(head, dlogit, weights, layout, out.grads);
    detail::encoder_backward(enc, demb, weights, layout, out.grads);
  }
  out.loss = sse / static_cast<double>(batch.size());
  if (!std::isfinite(out.loss))
  {
    std::ostringstream msg;
    msg << "non-finite loss " << out.loss << "; scores:";
    for (double s : out.scores)
      msg << ' ' << s;
    msg << "; weights finite: " << (weights.all_finite() ? "yes" : "no");
    throw Error(msg.str());
  }
  return out;
}

template <class T>
AdamState<T> AdamState<T>::init(const ModelConfig& config)
{
  return {ModelWeights<T>::zeros(config), ModelWeights<T>::zeros(config), 0};
}

template <class T>
void adamw_update(ModelWeights<T>& weights, const ModelWeights<T>& grads, AdamState<T>& state, const TrainConfig& c, double lr)
{
  auto& wt = weights.tensors();
  const auto& gt = grads.tensors();
  if (gt.size() != wt.size() || state.m.tensors().size() != wt.size())
    throw InvalidArgument("adamw_update: tensor sets differ");
  for (std::size_t i = 0; i < wt.size(); ++i)
    if (gt[i].values.size() != wt[i].values.size() || state.m.tensors()[i].values.size() != wt[i].values.size())
      throw InvalidArgument("adamw_update: shape mismatch for " + wt[i].name);

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correct1 = 1.0 - std::pow(c.beta1, t);
  const double correct2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < wt.size(); ++i)
  {
    auto& w = wt[i].values;
    const auto& g = gt[i].values;
    auto& m = state.m.tensors()[i].values;
    auto& v = state.v.tensors()[i].values;
    for (std::size_t k = 0; k < w.size(); ++k)
    {
      const double gk = static_cast<double>(g[k]);
      double wk = static_cast<double>(w[k]);
      wk -= lr * c.weight_decay * wk;
      const double mk = c.beta1 * static_cast<double>(m[k]) + (1.0 - c.beta1) * gk;
      const double vk = c.beta2 * static_cast<double>(v[k]) + (1.0 - c.beta2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      wk -= lr * (mk / correct1) / (std::sqrt(vk / correct2) + c.eps);
      w[k] = static_cast<T>(wk);
    }
  }
}

template <class T>
double gradient_norm(const ModelWeights<T>& grads)
{
  double ss = 0.0;
  for (const auto& t : grads.tensors())
    for (T v : t.values)
      ss += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(ss);
}

template double batch_loss(std::span<const VoteExample>, const ModelWeights<float>&, bool);
template double batch_loss(std::span<const VoteExample>, const ModelWeights<double>&, bool);
template BatchGradients<float> backward(std::span<const VoteExample>, const ModelWeights<float>&, bool);
template BatchGradients<double> backward(std::span<const VoteExample>, const ModelWeights<double>&, bool);
template struct AdamState<float>;
template struct AdamState<double>;
template void adamw_update(ModelWeights<float>&, const ModelWeights<float>&, AdamState<float>&, const TrainConfig&, double);
template void adamw_update(ModelWeights<double>&, const ModelWeights<double>&, AdamState<double>&, const TrainConfig&, double);
template double gradient_norm(const ModelWeights<float>&);
template double gradient_norm(const ModelWeights<double>&);

std::size_t TrainingSet::add_clip(std::string name, std::string model_tag, AudioClip clip)
{
  clip_names.push_back(std::move(name));
  model_tags.push_back(std::move(model_tag));
  clips.push_back(std::move(clip));
  return clips.size() - 1;
}

TrainingSet load_training_set(const std::vector<VoteRecord>& records, Split split, const std::filesystem::path& base_dir)
{
  TrainingSet set;
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < records.size(); ++i)
  {
    const auto& r = records[i];
    if (r.split != split)
      continue;
    auto it = index.find(r.clip_path);
    if (it == index.end())
    {
      std::filesystem::path path{r.clip_path};
      if (path.is_relative())
        path = base_dir / path;
      try
      {
        it = index.emplace(r.clip_path, set.add_clip(r.clip_path, r.model_tag, read_wav(path))).first;
      }
      catch (const Error& e)
      {
        throw Error("record " + std::to_string(i + 1) + " (" + r.clip_path + ", id " + r.id + "): " + e.what());
      }
    }
    else if (set.model_tags[it->second] != r.model_tag)
    {
      throw StructureError("record " + std::to_string(i + 1) + ": clip " + r.clip_path + " appears under two model tags");
    }
    set.votes.push_back({it->second, r.id, r.rating});
  }
  return set;
}

TrainResult train(const TrainingSet& train_set,
                  const TrainingSet* eval_set,
                  const ModelConfig& model_config,
                  const TrainConfig& train_config,
                  const TrainCallbacks& callbacks)
{
  model_config.validate();
  train_config.validate();
  if (train_set.votes.empty())
    throw InvalidArgument("training set has no votes");
  if (train_config.precision == Precision::f64)
    return train_impl<double>(train_set, eval_set, model_config, train_config, callbacks);
  return train_impl<float>(train_set, eval_set, model_config, train_config, callbacks);
}

CorrelationReport evaluate_training_set(const TrainingSet& set, const ModelWeights<float>& weights, std::uint64_t seed)
{
  std::vector<double> sum(set.clips.size(), 0.0);
  std::vector<std::size_t> count(set.clips.size(), 0);
  for (const auto& v : set.votes)
  {
    sum[v.clip] += v.rating;
    ++count[v.clip];
  }
  std::vector<double> predicted, reference;
  for (std::size_t c = 0; c < set.clips.size(); ++c)
  {
    if (count[c] == 0)
      continue;
    predicted.push_back(infer_mos(logpow_spectrogram(set.clips[c]), weights, derive_seed(seed, {c})).mos);
    reference.push_back(sum[c] / static_cast<double>(count[c]));
  }
  return correlation_report(predicted, reference, seed, 0);
}

std::string loss_history_csv(const std::vector<EpochStats>& history)
{
  const bool with_eval = std::any_of(history.begin(), history.end(), [](const auto& e) { return e.eval.has_value(); });
  std::ostringstream out;
  out.precision(9);
  out << "epoch,train_mse";
  if (with_eval)
    out << ",eval_pcc,eval_srcc,eval_mae";
  out << '\n';
  for (const auto& e : history)
  {
    out << e.epoch << ',' << e.train_mse;
    if (with_eval)
    {
      if (e.eval)
        out << ',' << e.eval->pcc << ',' << e.eval->srcc << ',' << e.eval->mae;
      else
        out << ",,,";
    }
    out << '\n';
  }
  return out.str();
}

GradcheckReport gradcheck(const GradcheckOptions& o)
{
  const auto started = std::chrono::steady_clock::now();
  o.config.validate();
  auto weights = ModelWeights<double>::random(o.config, derive_seed(o.seed, {0}));

  Rng rng{derive_seed(o.seed, {1})};
  std::vector<Spectrogram> specs(o.batch);
  std::vector<VoteExample> batch;
  for (std::size_t b = 0; b < o.batch; ++b)
  {
    specs[b].frames = o.frames;
    specs[b].bins = o.config.input_bins;
    specs[b].values.resize(o.frames * o.config.input_bins);
    for (auto& v : specs[b].values)
      v = standard_normal(rng);
    batch.push_back({&specs[b], id_to_vector("gradcheck_rater_" + std::to_string(b), o.config.id_dim),
                     uniform_real(rng, 1.0, 5.0), derive_seed(o.seed, {2, b})});
  }

  auto analytic = backward<double>(batch, weights, o.train_mode).grads;
  if (o.tamper)
    o.tamper(analytic);

  GradcheckReport report;
  report.tolerance = o.tolerance;
  for (std::size_t i = 0; i < weights.tensors().size(); ++i)
  {
    auto& values = weights.tensors()[i].values;
    TensorCheck check;
    check.name = weights.tensors()[i].name;
    for (std::size_t k = 0; k < values.size(); ++k)
    {
      const double saved = values[k];
      values[k] = saved + o.step;
      const double up = batch_loss<double>(batch, weights, o.train_mode);
      values[k] = saved - o.step;
      const double down = batch_loss<double>(batch, weights, o.train_mode);
      values[k] = saved;

      const double numeric = (up - down) / (2.0 * o.step);
      const double a = analytic.tensors()[i].values[k];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      ++check.checked;
      if (rel > check.max_rel_error || k == 0)
      {
        check.max_rel_error = rel;
        check.worst_index = k;
        check.analytic = a;
        check.numeric = numeric;
      }
    }
    check.pass = check.max_rel_error < o.tolerance;
    report.pass = report.pass && check.pass;
    if (check.max_rel_error >= report.max_rel_error)
    {
      report.max_rel_error = check.max_rel_error;
      report.worst_tensor = check.name;
    }
    report.tensors.push_back(std::move(check));
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

nlohmann::json to_json(const GradcheckReport& r)
{
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& t : r.tensors)
    tensors.push_back({{"name", t.name}, {"checked", t.checked}, {"max_rel_error", t.max_rel_error},
                       {"worst_index", t.worst_index}, {"analytic", t.analytic}, {"numeric", t.numeric}, {"pass", t.pass}});
  return {{"pass", r.pass}, {"tolerance", r.tolerance}, {"max_rel_error", r.max_rel_error},
          {"worst_tensor", r.worst_tensor}, {"seconds", r.seconds}, {"tensors", std::move(tensors)}};
}

} // namespace plcmos
