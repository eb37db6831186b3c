#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "sfafnet/trainer.hpp"

using namespace sfafnet;

namespace {

TrainConfig small_config(Index steps) {
  TrainConfig tc;
  tc.total_steps = steps;
  tc.batch_size = 2;
  tc.patch_size = 16;
  tc.seed = 3;
  return tc;
}

ArchConfig small_arch() { return ArchConfig{8, 1, 2, 3, std::nullopt}; }

std::vector<ImagePair> small_corpus() { return synth_corpus(4, 0, GaussianBlur{1.5}, 32); }

std::vector<std::uint8_t> model_bytes(const Trainer<float>& tr) { return encode_checkpoint(tr.model().to_checkpoint()); }

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

// One scalar parameter whose gradient after backward() is g.
ParamList<double> scalar_param_with_grad(double w, double g) {
  auto p = Tensor<double>::scalar(w, true);
  scale(p, g).backward();
  return {{"w", p}};
}

}  // namespace

TEST(CosineLr, Endpoints) {
  TrainConfig c;
  c.total_steps = 2000;
  EXPECT_DOUBLE_EQ(cosine_lr(0, c), 2e-4);
  EXPECT_NEAR(cosine_lr(2000, c), 1e-6, 1e-18);
  EXPECT_NEAR(cosine_lr(1000, c), 1.005e-4, 1e-15);
  EXPECT_THROW(cosine_lr(-1, c), ContractError);
  EXPECT_THROW(cosine_lr(2001, c), ContractError);
}

TEST(CosineLr, MonotoneNonIncreasing) {
  TrainConfig c;
  c.total_steps = 137;
  for (Index t = 1; t <= c.total_steps; ++t) EXPECT_LE(cosine_lr(t, c), cosine_lr(t - 1, c));
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  auto bad = [](auto mutate) {
    TrainConfig t;
    mutate(t);
    return t;
  };
  EXPECT_THROW(bad([](TrainConfig& t) { t.lr_final = 1e-3; }).validate(), ConfigError);
  EXPECT_THROW(bad([](TrainConfig& t) { t.lr_final = -1; }).validate(), ConfigError);
  EXPECT_THROW(bad([](TrainConfig& t) { t.beta1 = 1.0; }).validate(), ConfigError);
  EXPECT_THROW(bad([](TrainConfig& t) { t.beta2 = -0.1; }).validate(), ConfigError);
  EXPECT_THROW(bad([](TrainConfig& t) { t.batch_size = 0; }).validate(), ConfigError);
  EXPECT_THROW(bad([](TrainConfig& t) { t.patch_size = 30; }).validate(), ConfigError);
  EXPECT_THROW(bad([](TrainConfig& t) { t.total_steps = 0; }).validate(), ConfigError);
}

TEST(Adam, FirstStepIsSignedLearningRate) {
  TrainConfig c;
  for (double g : {3.7, -0.02, 1e-3}) {
    auto ps = scalar_param_with_grad(1.0, g);
    OptimState<double> st;
    adam_step(ps, st, 1e-3, c);
    // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
    EXPECT_NEAR(ps[0].second.item(), 1.0 - 1e-3 * g / (std::abs(g) + 1e-8), 1e-15);
    EXPECT_NEAR(ps[0].second.item(), 1.0 - 1e-3 * (g > 0 ? 1 : -1), 1e-8);
    EXPECT_EQ(st.t, 1);
    EXPECT_NEAR(st.m[0][0], 0.1 * g, 1e-15);
    EXPECT_NEAR(st.v[0][0], 0.001 * g * g, 1e-15);
  }
}

TEST(Adam, SecondStepMatchesClosedForm) {
  TrainConfig c;
  auto ps = scalar_param_with_grad(0.5, 2.0);
  OptimState<double> st;
  adam_step(ps, st, 1e-2, c);
  Tensor<double> p = ps[0].second;
  p.zero_grad();
  scale(p, -1.0).backward();
  adam_step(ps, st, 1e-2, c);
  const double m = 0.9 * 0.2 + 0.1 * -1.0, v = 0.999 * 0.004 + 0.001 * 1.0;
  const double mh = m / (1 - 0.81), vh = v / (1 - 0.999 * 0.999);
  const double after_first = 0.5 - 1e-2 * 2.0 / (2.0 + 1e-8);
  EXPECT_NEAR(p.item(), after_first - 1e-2 * mh / (std::sqrt(vh) + 1e-8), 1e-12);
}

TEST(Adam, ZeroGradientLeavesParametersAndDecaysMoments) {
  TrainConfig c;
  auto ps = scalar_param_with_grad(2.0, 1.0);
  OptimState<double> st;
  adam_step(ps, st, 1e-3, c);
  const double w = ps[0].second.item(), m = st.m[0][0], v = st.v[0][0];
  // A parameter with no gradient buffer at all behaves like a zero gradient.
  auto fresh = Tensor<double>::full({3}, 1.5, true);
  ParamList<double> none{{"u", fresh}};
  OptimState<double> st2;
  adam_step(none, st2, 1e-3, c);
  for (double x : fresh.data()) EXPECT_EQ(x, 1.5);

  Tensor<double> p = ps[0].second;
  p.zero_grad();
  scale(p, 0.0).backward();
  adam_step(ps, st, 1e-3, c);
  EXPECT_NE(ps[0].second.item(), w);  // momentum still moves it
  EXPECT_DOUBLE_EQ(st.m[0][0], 0.9 * m);
  EXPECT_DOUBLE_EQ(st.v[0][0], 0.999 * v);

  OptimState<double> zero_state;
  auto q = Tensor<double>::scalar(4.0, true);
  scale(q, 0.0).backward();
  ParamList<double> qs{{"q", q}};
  for (int i = 0; i < 3; ++i) adam_step(qs, zero_state, 1e-3, c);
  EXPECT_EQ(q.item(), 4.0);
}

TEST(Adam, StateMismatchRejected) {
  TrainConfig c;
  auto ps = scalar_param_with_grad(1.0, 1.0);
  OptimState<double> st;
  st.m.resize(2);
  st.v.resize(2);
  EXPECT_THROW(adam_step(ps, st, 1e-3, c), ContractError);
}

TEST(Trainer, RejectsBadData) {
  EXPECT_THROW(Trainer<float>(SFAFNet<float>::make(small_arch(), 0), {}, small_config(5)), ContractError);
  auto tiny = synth_corpus(1, 0, GaussianBlur{1.5}, 8);
  EXPECT_THROW(Trainer<float>(SFAFNet<float>::make(small_arch(), 0), tiny, small_config(5)), ConfigError);
}

TEST(Trainer, BatchesDependOnlyOnSeedAndStep) {
  Trainer<float> a(SFAFNet<float>::make(small_arch(), 0), small_corpus(), small_config(10));
  Trainer<float> b(SFAFNet<float>::make(small_arch(), 1), small_corpus(), small_config(10));
  for (Index s : {0, 4, 9}) {
    auto x = a.batch_for_step(s), y = b.batch_for_step(s);
    ASSERT_EQ(x.size(), 2u);
    for (std::size_t i = 0; i < x.size(); ++i) {
      EXPECT_EQ(x[i].sharp, y[i].sharp);
      EXPECT_EQ(x[i].degraded, y[i].degraded);
      EXPECT_EQ(x[i].sharp.height, 16);
    }
  }
  EXPECT_NE(a.batch_for_step(0)[0].sharp, a.batch_for_step(1)[0].sharp);
}

TEST(Trainer, LossDescends) {
  TrainConfig tc = small_config(50);
  tc.batch_size = 4;
  Trainer<float> tr(SFAFNet<float>::make(small_arch(), 0), small_corpus(), tc);
  std::vector<double> losses;
  for (int i = 0; i < 50; ++i) losses.push_back(tr.step().loss_total);
  auto window = [&](std::size_t end) {
    double s = 0;
    for (std::size_t i = end - 10; i < end; ++i) s += losses[i];
    return s / 10;
  };
  EXPECT_LT(window(50), window(10));
  EXPECT_THROW(tr.step(), ContractError);
}

TEST(Trainer, RepeatedRunsAreBitIdentical) {
  auto run = [] {
    Trainer<float> tr(SFAFNet<float>::make(small_arch(), 5), small_corpus(), small_config(6));
    std::ostringstream log;
    tr.run(&log);
    return std::make_pair(encode_checkpoint(tr.to_checkpoint()), log.str());
  };
  auto a = run(), b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

TEST(Trainer, ResumeReproducesUnbrokenRun) {
  const TrainConfig tc = small_config(20);
  Trainer<float> full(SFAFNet<float>::make(small_arch(), 7), small_corpus(), tc);
  for (int i = 0; i < 20; ++i) full.step();

  Trainer<float> first(SFAFNet<float>::make(small_arch(), 7), small_corpus(), tc);
  for (int i = 0; i < 10; ++i) first.step();
  const auto path = (std::filesystem::temp_directory_path() / "sfafnet_resume_test.ckpt").string();
  first.save(path);
  auto resumed = Trainer<float>::resume(read_checkpoint(path), small_corpus(), tc);
  std::filesystem::remove(path);
  EXPECT_EQ(resumed.steps_done(), 10);
  for (int i = 0; i < 10; ++i) resumed.step();
  EXPECT_EQ(model_bytes(resumed), model_bytes(full));
  EXPECT_EQ(encode_checkpoint(resumed.to_checkpoint()), encode_checkpoint(full.to_checkpoint()));
}

TEST(Trainer, CheckpointCarriesOptimizerState) {
  Trainer<float> tr(SFAFNet<float>::make(small_arch(), 0), small_corpus(), small_config(3));
  tr.step();
  auto ck = tr.to_checkpoint();
  ASSERT_NE(ck.find("optim.step"), nullptr);
  EXPECT_EQ(record_values<std::int64_t>(*ck.find("optim.step")).at(0), 1);
  EXPECT_NE(ck.find("optim.m.stem.weight"), nullptr);
  EXPECT_NE(ck.find("optim.v.head0.bias"), nullptr);
  // The model loader ignores optimizer records.
  EXPECT_EQ(encode_checkpoint(SFAFNet<float>::from_checkpoint(ck).to_checkpoint()), model_bytes(tr));

  auto broken = ck;
  std::erase_if(broken.records, [](const Record& r) { return r.name == "optim.m.stem.weight"; });
  EXPECT_THROW(Trainer<float>::resume(broken, small_corpus(), small_config(3)), DecodeError);
}

TEST(Trainer, LogColumnsAndValidation) {
  TrainConfig tc = small_config(6);
  tc.val_every = 4;
  Trainer<float> tr(SFAFNet<float>::make(small_arch(), 0), small_corpus(), tc);
  const auto val = synth_corpus(2, 9, GaussianBlur{1.5}, 16);
  std::ostringstream log;
  const auto path = (std::filesystem::temp_directory_path() / "sfafnet_log_test.ckpt").string();
  std::filesystem::remove(path);
  tr.run(&log, &val, path);
  EXPECT_TRUE(std::filesystem::exists(path));
  std::filesystem::remove(path);
  const auto rows = lines(log.str());
  ASSERT_EQ(rows.size(), 7u);
  EXPECT_EQ(rows[0], "step,lr,loss_total,loss_char,loss_edge,loss_freq,val_psnr");
  for (std::size_t i = 1; i < rows.size(); ++i) {
    EXPECT_EQ(std::count(rows[i].begin(), rows[i].end(), ','), 6) << rows[i];
    EXPECT_EQ(rows[i].substr(0, rows[i].find(',')), std::to_string(i));
    const bool has_val = rows[i].back() != ',';
    EXPECT_EQ(has_val, i == 4 || i == 6) << rows[i];
  }
}

TEST(Trainer, SavesPeriodically) {
  TrainConfig tc = small_config(4);
  tc.save_every = 2;
  Trainer<float> tr(SFAFNet<float>::make(small_arch(), 0), small_corpus(), tc);
  const auto path = (std::filesystem::temp_directory_path() / "sfafnet_periodic.ckpt").string();
  std::filesystem::remove(path);
  tr.step();
  tr.step();
  EXPECT_FALSE(std::filesystem::exists(path));
  // run() picks up after step 2, so its periodic save lands on step 4.
  tr.run(nullptr, nullptr, path);
  auto ck = read_checkpoint(path);
  std::filesystem::remove(path);
  EXPECT_EQ(record_values<std::int64_t>(*ck.find("optim.step")).at(0), 4);
}

TEST(Trainer, NonFiniteLossNamesTensor) {
  auto model = SFAFNet<float>::make(small_arch(), 0);
  Tensor<float> w = model.enc2.nafs[0].norm1.gamma;
  w.mutable_data()[0] = std::numeric_limits<float>::quiet_NaN();
  Trainer<float> tr(model, small_corpus(), small_config(3));
  try {
    tr.step();
    FAIL() << "expected NonFiniteError";
  } catch (const NonFiniteError& e) {
    EXPECT_NE(std::string(e.what()).find("enc2.naf0.norm1.gamma"), std::string::npos) << e.what();
  }
}

TEST(Restore, HandlesSizesNotDivisibleByFour) {
  auto model = SFAFNet<float>::make(small_arch(), 0);
  model.zero_heads();
  auto pair = synth_corpus(1, 4, GaussianBlur{1.5}, 18)[0];
  Image restored = restore(model, pair.degraded);
  EXPECT_EQ(restored, pair.degraded);
  auto rows = evaluate(model, {pair});
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_DOUBLE_EQ(rows[0].psnr, rows[0].psnr_degraded);
  EXPECT_DOUBLE_EQ(mean_psnr(rows), mean_psnr(rows, true));
}

TEST(Restore, HandlesImagesSmallerThanTheQuarterScaleWindow) {
  auto model = SFAFNet<float>::make(small_arch(), 1);
  model.zero_heads();
  Rng rng(6);
  for (auto [h, w] : {std::pair<Index, Index>{1, 1}, {5, 40}, {33, 7}, {2, 13}}) {
    Image img(3, h, w);
    for (float& v : img.pixels) v = static_cast<float>(rng.uniform(0.0, 1.0));
    EXPECT_EQ(restore(model, img), img) << h << "x" << w;
  }
  auto fan_in = SFAFNet<float>::make(small_arch(), 2);
  Image tiny(3, 3, 3, 0.4f);
  const Image out = restore(fan_in, tiny);
  EXPECT_EQ(out.height, 3);
  EXPECT_EQ(out.width, 3);
}
