#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

#include "plcmos/error.hpp"
#include "plcmos/training.hpp"
#include "support/fixtures.hpp"

using namespace plcmos;
using plcmos::test::random_spectrogram;

namespace {

ModelConfig overfit_config()
{
  auto c = ModelConfig::tiny();
  c.dropout = 0.0;
  return c;
}

TrainConfig quick_train(std::size_t epochs, std::size_t batch)
{
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = batch;
  t.lr = 3e-3;
  t.eval_every = 0;
  return t;
}

TrainingSet one_clip_set(const std::vector<std::pair<std::string, double>>& votes)
{
  TrainingSet set;
  set.add_clip("c0", "m0", test::voiced(4000, 180.0, 1));
  for (const auto& [id, rating] : votes)
    set.votes.push_back({0, id, rating});
  return set;
}

} // namespace

TEST(MseLoss, Examples)
{
  const std::vector<double> a{1.0, 2.0}, b{2.0, 4.0};
  EXPECT_EQ(mse_loss(a, a), 0.0);
  EXPECT_EQ(mse_loss(std::vector<double>{3.0}, std::vector<double>{5.0}), 4.0);
  EXPECT_EQ(mse_loss(a, b), 2.5);
  EXPECT_THROW(mse_loss(a, std::vector<double>{1.0}), InvalidArgument);
  EXPECT_THROW(mse_loss(std::vector<double>{}, std::vector<double>{}), InvalidArgument);
}

TEST(Backward, LossMatchesForwardWithSharedMasks)
{
  const auto w = ModelWeights<double>::random(ModelConfig::tiny(), 1);
  const auto s1 = random_spectrogram(8, 1), s2 = random_spectrogram(11, 2);
  const std::vector<VoteExample> batch{{&s1, id_to_vector("a", 8), 2.0, 10}, {&s2, id_to_vector("b", 8), 4.5, 11}};
  for (bool train_mode : {false, true})
  {
    const auto g = backward<double>(batch, w, train_mode);
    EXPECT_DOUBLE_EQ(g.loss, batch_loss<double>(batch, w, train_mode));
    ASSERT_EQ(g.scores.size(), 2u);
    EXPECT_DOUBLE_EQ(g.loss, mse_loss(g.scores, std::vector<double>{2.0, 4.5}));
  }
}

TEST(Backward, StationaryPointHasZeroGradient)
{
  auto w = ModelWeights<double>::random(ModelConfig::tiny(), 2);
  auto& last = w.at("head.2.weight").values;
  std::fill(last.begin(), last.end(), 0.0);
  w.at("head.2.bias").values[0] = 0.0;
  const auto s = random_spectrogram(8, 3);
  const std::vector<VoteExample> batch{{&s, id_to_vector("a", 8), 3.0, 1}, {&s, id_to_vector("b", 8), 3.0, 2}};
  const auto g = backward<double>(batch, w, true);
  EXPECT_EQ(g.loss, 0.0);
  for (const auto& t : g.grads.tensors())
    for (double v : t.values)
      ASSERT_EQ(v, 0.0) << t.name;
}

TEST(Backward, HeadLogitGradientClosedForm)
{
  const auto w = ModelWeights<double>::random(ModelConfig::tiny(), 4);
  const auto s1 = random_spectrogram(8, 4), s2 = random_spectrogram(9, 5), s3 = random_spectrogram(10, 6);
  const std::vector<VoteExample> batch{
    {&s1, id_to_vector("a", 8), 1.0, 1}, {&s2, id_to_vector("b", 8), 5.0, 2}, {&s3, id_to_vector("c", 8), 2.5, 3}};
  const auto g = backward<double>(batch, w, false);
  double bias_grad = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i)
  {
    const double x = g.logits[i];
    const double sig = 1.0 / (1.0 + std::exp(-x));
    const double expected = 2.0 * (g.scores[i] - batch[i].target) * 4.0 * sig * (1.0 - sig) / 3.0;
    EXPECT_NEAR(g.dloss_dlogit[i], expected, 1e-14);
    EXPECT_NEAR(g.scores[i], 1.0 + 4.0 * sig, 1e-14);
    bias_grad += expected;
  }
  EXPECT_NEAR(g.grads.at("head.2.bias").values[0], bias_grad, 1e-14);

  // the same derivative by central differences on the last bias
  auto wp = w, wm = w;
  const double h = 1e-6;
  wp.at("head.2.bias").values[0] += h;
  wm.at("head.2.bias").values[0] -= h;
  const double fd = (batch_loss<double>(batch, wp, false) - batch_loss<double>(batch, wm, false)) / (2 * h);
  EXPECT_NEAR(fd, bias_grad, 1e-8);
}

TEST(Backward, LinearOnlyMatchesLeastSquaresGradient)
{
  auto c = ModelConfig::tiny();
  c.head_sizes = {1};
  c.hidden_activation = Activation::identity;
  c.output_transform = OutputTransform::identity;
  c.dropout = 0.0;
  const auto w = ModelWeights<double>::random(c, 7);
  std::vector<Spectrogram> specs;
  for (int i = 0; i < 4; ++i)
    specs.push_back(random_spectrogram(6 + i, 20 + i));
  std::vector<VoteExample> batch;
  const std::vector<double> y{1.0, 2.0, 4.0, 5.0};
  for (int i = 0; i < 4; ++i)
    batch.push_back({&specs[i], id_to_vector("r" + std::to_string(i), 8), y[i], 0});
  const auto g = backward<double>(batch, w, true);

  // s_i = w.x_i + b, L = mean (s_i - y_i)^2, dL/dw = (2/B) sum (s_i - y_i) x_i
  const auto& wt = w.at("head.0.weight").values;
  const double b = w.at("head.0.bias").values[0];
  std::vector<double> dw(wt.size(), 0.0);
  double db = 0.0;
  for (std::size_t i = 0; i < 4; ++i)
  {
    const auto& x = g.head_inputs[i];
    ASSERT_EQ(x.size(), wt.size());
    double s = b;
    for (std::size_t k = 0; k < x.size(); ++k)
      s += wt[k] * x[k];
    EXPECT_NEAR(s, g.scores[i], 1e-12);
    const double r = 2.0 * (s - y[i]) / 4.0;
    for (std::size_t k = 0; k < x.size(); ++k)
      dw[k] += r * x[k];
    db += r;
  }
  const auto& gw = g.grads.at("head.0.weight").values;
  for (std::size_t k = 0; k < dw.size(); ++k)
    EXPECT_NEAR(gw[k], dw[k], 1e-10) << k;
  EXPECT_NEAR(g.grads.at("head.0.bias").values[0], db, 1e-10);
}

TEST(Backward, NonFiniteLossIsError)
{
  auto w = ModelWeights<double>::random(ModelConfig::tiny(), 8);
  w.at("head.2.bias").values[0] = std::numeric_limits<double>::quiet_NaN();
  const auto s = random_spectrogram(8, 8);
  const std::vector<VoteExample> batch{{&s, id_to_vector("a", 8), 3.0, 0}};
  EXPECT_THROW(backward<double>(batch, w, false), Error);
}

TEST(Gradcheck, TinyConfigPasses)
{
  const auto r = gradcheck();
  EXPECT_TRUE(r.pass) << r.worst_tensor << " " << r.max_rel_error;
  EXPECT_LT(r.max_rel_error, 1e-3);
  EXPECT_EQ(r.tensors.size(), tensor_specs(ModelConfig::tiny()).size());
  for (const auto& t : r.tensors)
  {
    EXPECT_TRUE(t.pass) << t.name;
    EXPECT_GT(t.checked, 0u);
  }
}

TEST(Gradcheck, InferenceModeAndLongerProjection)
{
  GradcheckOptions o;
  o.train_mode = false;
  o.config.proj_kernel_w = 3;
  o.seed = 5;
  const auto r = gradcheck(o);
  EXPECT_TRUE(r.pass) << r.worst_tensor << " " << r.max_rel_error;
}

TEST(Gradcheck, CorruptedGruGradientFails)
{
  GradcheckOptions o;
  o.tamper = [](ModelWeights<double>& g) { g.at("gru.fwd.w_hh").values[3] += 0.5; };
  const auto r = gradcheck(o);
  EXPECT_FALSE(r.pass);
  EXPECT_EQ(r.worst_tensor, "gru.fwd.w_hh");
  for (const auto& t : r.tensors)
    EXPECT_EQ(t.pass, t.name != "gru.fwd.w_hh") << t.name;
  EXPECT_EQ(to_json(r)["pass"], false);
}

TEST(AdamW, ZeroGradientNoDecayIsIdentity)
{
  auto w = ModelWeights<double>::random(ModelConfig::tiny(), 9);
  const auto before = w;
  auto state = AdamState<double>::init(ModelConfig::tiny());
  TrainConfig tc;
  tc.weight_decay = 0.0;
  const auto zero = ModelWeights<double>::zeros(ModelConfig::tiny());
  for (int i = 0; i < 3; ++i)
    adamw_update(w, zero, state, tc, tc.lr);
  EXPECT_EQ(w, before);
  EXPECT_EQ(state.step, 3u);
}

TEST(AdamW, FirstStepUnitGradient)
{
  auto w = ModelWeights<double>::zeros(ModelConfig::tiny());
  auto g = w;
  for (auto& t : w.tensors())
    std::fill(t.values.begin(), t.values.end(), 1.0);
  for (auto& t : g.tensors())
    std::fill(t.values.begin(), t.values.end(), 1.0);
  auto state = AdamState<double>::init(ModelConfig::tiny());
  TrainConfig tc;
  tc.weight_decay = 0.0;
  tc.eps = 0.0;
  adamw_update(w, g, state, tc, 3e-4);
  for (const auto& t : w.tensors())
    for (double v : t.values)
      ASSERT_NEAR(v, 0.9997, 1e-15);
}

TEST(AdamW, DecoupledDecay)
{
  auto w = ModelWeights<double>::random(ModelConfig::tiny(), 10);
  const auto before = w;
  auto state = AdamState<double>::init(ModelConfig::tiny());
  TrainConfig tc;
  tc.weight_decay = 0.01;
  adamw_update(w, ModelWeights<double>::zeros(ModelConfig::tiny()), state, tc, 3e-4);
  for (std::size_t i = 0; i < w.tensors().size(); ++i)
    for (std::size_t k = 0; k < w.tensors()[i].values.size(); ++k)
      ASSERT_NEAR(w.tensors()[i].values[k], before.tensors()[i].values[k] * (1.0 - 3e-4 * 0.01), 1e-15);
}

TEST(AdamW, ShapeMismatchIsError)
{
  auto w = ModelWeights<double>::random(ModelConfig::tiny(), 11);
  auto state = AdamState<double>::init(ModelConfig::tiny());
  const auto other = ModelWeights<double>::zeros(ModelConfig{});
  EXPECT_THROW(adamw_update(w, other, state, TrainConfig{}, 1e-3), Error);
}

TEST(GradientNorm, Euclidean)
{
  auto g = ModelWeights<double>::zeros(ModelConfig::tiny());
  g.at("conv0.bias").values[0] = 3.0;
  g.at("head.2.bias").values[0] = 4.0;
  EXPECT_DOUBLE_EQ(gradient_norm(g), 5.0);
}

TEST(TrainConfig, ValidationAndJson)
{
  TrainConfig t;
  t.lr = 0.0;
  EXPECT_THROW(t.validate(), InvalidArgument);
  t = {};
  t.beta1 = 1.0;
  EXPECT_THROW(t.validate(), InvalidArgument);
  t = {};
  t.epochs = 7;
  t.precision = Precision::f64;
  t.schedule = LrSchedule::cosine;
  const auto back = train_config_from_json(to_json(t));
  EXPECT_EQ(back.epochs, 7u);
  EXPECT_EQ(back.precision, Precision::f64);
  EXPECT_EQ(back.schedule, LrSchedule::cosine);
  EXPECT_EQ(back.beta2, 0.999);
  EXPECT_THROW(train_config_from_json(nlohmann::json{{"precision", "f16"}}), InvalidArgument);
}

TEST(DatasetManifest, Parses)
{
  const auto r = parse_dataset_manifest("clip_path,rating,id,model_tag,split\na.wav,4,r1,m1,train\nb.wav,2.5,v9,m2,eval\n");
  ASSERT_EQ(r.size(), 2u);
  EXPECT_EQ(r[0].clip_path, "a.wav");
  EXPECT_EQ(r[0].rating, 4.0);
  EXPECT_EQ(r[1].split, Split::eval);
  EXPECT_EQ(r[1].model_tag, "m2");
}

TEST(DatasetManifest, ErrorsCarryLineNumbers)
{
  auto line_of = [](const std::string& text) -> std::size_t {
    try
    {
      parse_dataset_manifest(text);
    }
    catch (const ParseError& e)
    {
      return e.line();
    }
    return 0;
  };
  const std::string h = "clip_path,rating,id,model_tag,split\n";
  EXPECT_EQ(line_of("bad header\n"), 1u);
  EXPECT_EQ(line_of(h + "a.wav,4,r1,m1,train\na.wav,6,r2,m1,train\n"), 3u);
  EXPECT_EQ(line_of(h + "a.wav,0,r2,m1,train\n"), 2u);
  EXPECT_EQ(line_of(h + "a.wav,x,r2,m1,train\n"), 2u);
  EXPECT_EQ(line_of(h + "a.wav,3,,m1,train\n"), 2u);
  EXPECT_EQ(line_of(h + "a.wav,3,r,m1,test\n"), 2u);
  EXPECT_EQ(line_of(h + "a.wav,3,r,m1\n"), 2u);
}

TEST(LoadTrainingSet, ResolvesAndNamesFailingRecord)
{
  test::TempDir dir{"trainset"};
  write_wav(dir / "a.wav", test::noise(2000, 1));
  const auto records = parse_dataset_manifest(
    "clip_path,rating,id,model_tag,split\na.wav,4,r1,m1,train\na.wav,2,r2,m1,train\nmissing.wav,3,r3,m1,eval\n");
  const auto set = load_training_set(records, Split::train, dir.path());
  EXPECT_EQ(set.clips.size(), 1u);
  EXPECT_EQ(set.votes.size(), 2u);
  try
  {
    load_training_set(records, Split::eval, dir.path());
    FAIL() << "expected error";
  }
  catch (const Error& e)
  {
    EXPECT_NE(std::string{e.what()}.find("missing.wav"), std::string::npos);
  }
  const auto conflicting =
    parse_dataset_manifest("clip_path,rating,id,model_tag,split\na.wav,4,r1,m1,train\na.wav,2,r2,m2,train\n");
  EXPECT_THROW(load_training_set(conflicting, Split::train, dir.path()), StructureError);
}

TEST(Train, EmptySetIsError)
{
  EXPECT_THROW(train(TrainingSet{}, nullptr, overfit_config(), quick_train(1, 1)), InvalidArgument);
}

TEST(Train, SingleVoteMemorization)
{
  const auto set = one_clip_set({{"r1", 4.0}});
  auto tc = quick_train(1000, 1);
  tc.augment = false;
  const auto r = train(set, nullptr, overfit_config(), tc);
  ASSERT_EQ(r.history.size(), 1000u);
  EXPECT_LT(r.history.back().train_mse, 1e-3);
}

TEST(Train, FullBatchMemorizationSmoothedLossNonIncreasing)
{
  const auto set = test::overfit_set(20, 2);
  auto tc = quick_train(500, set.votes.size());
  tc.lr = 1e-3;
  tc.augment = false;
  const auto r = train(set, nullptr, overfit_config(), tc);
  std::vector<double> windows;
  for (std::size_t i = 0; i + 10 <= r.history.size(); i += 10)
  {
    double m = 0.0;
    for (std::size_t k = i; k < i + 10; ++k)
      m += r.history[k].train_mse;
    windows.push_back(m / 10.0);
  }
  ASSERT_EQ(windows.size(), 50u);
  for (std::size_t i = 1; i < windows.size(); ++i)
    EXPECT_LE(windows[i], windows[i - 1]) << "window " << i;
  EXPECT_LT(windows.back(), 0.05);
}

TEST(Train, TwoIdsDisambiguateOneClip)
{
  const auto set = one_clip_set({{"rater_a", 2.0}, {"rater_b", 4.0}});
  const auto r = train(set, nullptr, overfit_config(), quick_train(500, 2));
  EXPECT_LT(r.history.back().train_mse, 0.05);
  const auto spec = logpow_spectrogram(set.clips[0]);
  EXPECT_NEAR(predict_vote(spec, id_to_vector("rater_a", 8), r.weights), 2.0, 0.3);
  EXPECT_NEAR(predict_vote(spec, id_to_vector("rater_b", 8), r.weights), 4.0, 0.3);
}

TEST(Train, DeterministicHistoryAndWeights)
{
  TrainingSet set;
  for (int c = 0; c < 3; ++c)
  {
    set.add_clip("c" + std::to_string(c), "m", test::voiced(3000, 150.0 + 50 * c, c));
    set.votes.push_back({static_cast<std::size_t>(c), "v" + std::to_string(c), 1.0 + c});
  }
  auto tc = quick_train(4, 2);
  tc.rng_seed = 77;
  const auto a = train(set, &set, ModelConfig::tiny(), tc);
  const auto b = train(set, &set, ModelConfig::tiny(), tc);
  ASSERT_EQ(a.history.size(), b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i)
    EXPECT_EQ(a.history[i].train_mse, b.history[i].train_mse);
  EXPECT_EQ(a.weights, b.weights);
  EXPECT_EQ(loss_history_csv(a.history), loss_history_csv(b.history));
  tc.rng_seed = 78;
  EXPECT_NE(train(set, nullptr, ModelConfig::tiny(), tc).weights, a.weights);
}

TEST(Train, Float64PathAndCallbacks)
{
  const auto set = one_clip_set({{"r1", 3.0}, {"r2", 5.0}});
  auto tc = quick_train(3, 2);
  tc.precision = Precision::f64;
  tc.grad_clip_norm = 1.0;
  tc.schedule = LrSchedule::cosine;
  std::size_t calls = 0;
  TrainCallbacks cb;
  cb.on_epoch = [&](const EpochStats& e) { EXPECT_EQ(e.epoch, ++calls); };
  const auto r = train(set, nullptr, ModelConfig::tiny(), tc, cb);
  EXPECT_EQ(calls, 3u);
  EXPECT_TRUE(r.weights.all_finite());
}

TEST(LossHistory, CsvLayout)
{
  std::vector<EpochStats> h(2);
  h[0].epoch = 1;
  h[0].train_mse = 0.5;
  h[1].epoch = 2;
  h[1].train_mse = 0.25;
  EXPECT_EQ(loss_history_csv(h), "epoch,train_mse\n1,0.5\n2,0.25\n");
  h[1].eval = CorrelationReport{0.9, 0.8, 0.1, 5};
  const auto csv = loss_history_csv(h);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,train_mse,eval_pcc,eval_srcc,eval_mae");
}
