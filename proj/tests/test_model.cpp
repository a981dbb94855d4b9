#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "checks.hpp"
#include "gipad/data.hpp"
#include "gipad/error.hpp"
#include "gipad/model.hpp"
#include "test_util.hpp"

using namespace gipad;
using test::random_tensor;

namespace {

ModelConfig tiny(Placement p = Placement::End, int input = 32) {
  ModelConfig c;
  c.width_multiplier = 0.25;
  c.input_size = input;
  c.placement = p;
  return c;
}

std::int64_t params_of(const ModelConfig& cfg) {
  Rng rng(0);
  Model m(cfg, rng);
  return m.param_count();
}

std::int64_t flops_of(const ModelConfig& cfg, int size) {
  Rng rng(0);
  Model m(cfg, rng);
  return model_flops(m, size);
}

// --- scalar reference evaluation -----------------------------------------------

double act_ref(double t, Activation a) {
  const double hs = std::min(1.0, std::max(0.0, (t + 3.0) / 6.0));
  switch (a) {
    case Activation::Identity: return t;
    case Activation::Relu: return t > 0 ? t : 0.0;
    case Activation::Hardsigmoid: return hs;
    case Activation::Hardswish: return t * hs;
    case Activation::Sigmoid: return 1.0 / (1.0 + std::exp(-t));
  }
  return t;
}

Tensor4 bn_ref(const Tensor4& x, const Tensor4& gamma, const Tensor4& beta, const Tensor4& mean,
               const Tensor4& var) {
  Tensor4 y(x.shape());
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c)
      for (int i = 0; i < x.h(); ++i)
        for (int j = 0; j < x.w(); ++j)
          y(n, c, i, j) = gamma[c] * (x(n, c, i, j) - mean[c]) / std::sqrt(var[c] + 1e-5) + beta[c];
  return y;
}

Tensor4 dense_ref(const Tensor4& x, const Tensor4& w, const Tensor4* b) {
  std::vector<double> bias;
  if (b) bias.assign(b->data().begin(), b->data().end());
  return test::naive_conv(x, w, bias, 1, 1, 0);
}

Tensor4 ref_eval(Layer& layer, const Tensor4& x);

Tensor4 ref_sequence(Sequential& s, Tensor4 x) {
  for (std::size_t i = 0; i < s.size(); ++i) x = ref_eval(s.at(i), x);
  return x;
}

Tensor4 ref_eval(Layer& layer, const Tensor4& x) {
  if (auto* conv = dynamic_cast<Conv2d*>(&layer)) {
    std::vector<double> bias;
    if (conv->has_bias()) bias.assign(conv->bias().value.data().begin(), conv->bias().value.data().end());
    return test::naive_conv(x, conv->weight().value, bias, conv->spec().groups, conv->spec().stride,
                            conv->kernel_size() / 2);
  }
  if (auto* bn = dynamic_cast<BatchNorm2d*>(&layer)) {
    return bn_ref(x, bn->gamma().value, bn->beta().value, bn->running_mean(), bn->running_var());
  }
  if (auto* act = dynamic_cast<Act*>(&layer)) {
    const Activation a = parse_activation(act->kind());
    Tensor4 y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = act_ref(x[i], a);
    return y;
  }
  if (auto* seq = dynamic_cast<Sequential*>(&layer)) return ref_sequence(*seq, x);
  if (auto* ir = dynamic_cast<InvertedResidual*>(&layer)) {
    Tensor4 y = ref_sequence(ir->body(), x);
    if (ir->residual()) y += x;
    return y;
  }
  if (auto* se = dynamic_cast<SqueezeExcite*>(&layer)) {
    Tensor4 pooled(x.n(), x.c(), 1, 1);
    for (int n = 0; n < x.n(); ++n)
      for (int c = 0; c < x.c(); ++c) {
        double s = 0;
        for (int i = 0; i < x.h() * x.w(); ++i) s += x.plane(n, c)[i];
        pooled(n, c, 0, 0) = s / (x.h() * x.w());
      }
    Tensor4 hidden = dense_ref(pooled, se->fc1_weight().value, &se->fc1_bias().value);
    for (double& v : hidden.data()) v = act_ref(v, Activation::Relu);
    Tensor4 gate = dense_ref(hidden, se->fc2_weight().value, &se->fc2_bias().value);
    Tensor4 y(x.shape());
    for (int n = 0; n < x.n(); ++n)
      for (int c = 0; c < x.c(); ++c) {
        const double g = act_ref(gate(n, c, 0, 0), Activation::Hardsigmoid);
        for (int i = 0; i < x.h() * x.w(); ++i) y.plane(n, c)[i] = g * x.plane(n, c)[i];
      }
    return y;
  }
  if (auto* gi = dynamic_cast<GroupInvolutionBlock*>(&layer)) {
    GeneratorParams& g = gi->generator();
    Tensor4 h = dense_ref(x, g.squeeze.value, nullptr);
    h = bn_ref(h, g.bn_gamma.value, g.bn_beta.value, g.running_mean, g.running_var);
    for (double& v : h.data()) v = act_ref(v, Activation::Relu);
    const KernelField field(g.groups, g.k, dense_ref(h, g.expand.value, &g.expand_bias.value));
    Tensor4 y = test::naive_gi(x, field);
    BatchNorm2d& bn = gi->bn();
    y = bn_ref(y, bn.gamma().value, bn.beta().value, bn.running_mean(), bn.running_var());
    for (double& v : y.data()) v = act_ref(v, Activation::Hardswish);
    return y;
  }
  if (dynamic_cast<GlobalAvgPool*>(&layer)) {
    Tensor4 y(x.n(), x.c(), 1, 1);
    for (int n = 0; n < x.n(); ++n)
      for (int c = 0; c < x.c(); ++c) {
        double s = 0;
        for (int i = 0; i < x.h() * x.w(); ++i) s += x.plane(n, c)[i];
        y(n, c, 0, 0) = s / (x.h() * x.w());
      }
    return y;
  }
  if (auto* lin = dynamic_cast<Linear*>(&layer)) return dense_ref(x, lin->weight().value, &lin->bias().value);
  ADD_FAILURE() << "reference evaluator does not know layer kind " << layer.kind();
  return x;
}

void randomize(Model& m, Rng& rng) {
  for (NamedBuffer& b : m.buffers()) {
    const bool var = b.name.find("running_var") != std::string::npos;
    for (double& v : b.tensor->data()) v = var ? rng.uniform(0.5, 1.5) : rng.uniform(-0.2, 0.2);
  }
  for (Param* p : m.params()) {
    if (p->name.find("generator.expand.weight") != std::string::npos) {
      for (double& v : p->value.data()) v = rng.uniform(-0.05, 0.05);
    } else if (p->name.find("gamma") != std::string::npos || p->name.find("beta") != std::string::npos) {
      for (double& v : p->value.data()) v += rng.uniform(-0.2, 0.2);
    }
  }
}

}  // namespace

TEST(MakeDivisible, TorchvisionRounding) {
  EXPECT_EQ(make_divisible(16), 16);
  EXPECT_EQ(make_divisible(960 * 0.25), 240);
  EXPECT_EQ(make_divisible(16 * 0.25), 8);
  EXPECT_EQ(make_divisible(72 * 0.25), 24);  // 18 rounds to 16, below 90%, bumps to 24
  EXPECT_EQ(make_divisible(120 * 0.25), 32);
}

TEST(Params, LinearHeadClosedForm) {
  Rng rng(0);
  Linear head("head", 960, 2, rng);
  std::vector<Param*> ps;
  head.collect_params(ps);
  std::int64_t n = 0;
  for (Param* p : ps) n += static_cast<std::int64_t>(p->value.size());
  EXPECT_EQ(n, 1922);
}

TEST(Params, GiBlockDeltaMatchesFormula) {
  for (double width : {1.0, 0.25}) {
    ModelConfig end, none;
    end.width_multiplier = none.width_multiplier = width;
    none.placement = Placement::None;
    const int c = last_channels(end);
    EXPECT_EQ(params_of(end) - params_of(none), gi_block_params(c, 4, 120, 5)) << width;
  }
  // Hand expansion for C = 960, r = 4, G = 120, k = 5.
  EXPECT_EQ(gi_block_params(960, 4, 120, 5),
            960LL * 240 + 2 * 240 + 240LL * 3000 + 3000 + 2 * 960);
}

TEST(Params, GiBlockFormulaMatchesLayerCount) {
  Rng rng(1);
  GroupInvolutionBlock b("gi", 48, 6, 4, 3, rng);
  std::vector<Param*> ps;
  b.collect_params(ps);
  std::int64_t n = 0;
  for (Param* p : ps) n += static_cast<std::int64_t>(p->value.size());
  EXPECT_EQ(n, gi_block_params(48, 4, 6, 3));
}

TEST(Params, InvariantToInputSize) {
  ModelConfig a, b;
  b.input_size = 64;
  EXPECT_EQ(params_of(a), params_of(b));
}

TEST(Params, DecreaseWithReduce) {
  ModelConfig r1, r4, r8;
  r1.reduce = 1;
  r8.reduce = 8;
  EXPECT_GT(params_of(r1), params_of(r4));
  EXPECT_GT(params_of(r4), params_of(r8));
}

TEST(Params, IncreaseWithGroups) {
  std::int64_t prev = 0;
  for (int g : {16, 30, 60, 120, 240}) {
    ModelConfig c;
    c.groups = g;
    const std::int64_t p = params_of(c);
    EXPECT_GT(p, prev) << g;
    prev = p;
  }
}

TEST(Params, BeginBelowEnd) {
  ModelConfig begin, end, both;
  begin.placement = Placement::Begin;
  both.placement = Placement::Both;
  EXPECT_LT(params_of(begin), params_of(end));
  EXPECT_GT(params_of(both), params_of(end));
  EXPECT_EQ(begin_groups(begin), 16);
}

TEST(Params, DefaultCountReported) {
  const std::int64_t p = params_of(ModelConfig{});
  const double gflops = flops_of(ModelConfig{}, 256) / 1e9;
  std::printf("default model: %.3f M params (reference 3.635), %.3f GFLOPs (reference 0.643)\n",
              p / 1e6, gflops);
  EXPECT_GT(p, 0);
}

TEST(Flops, ResolutionRatios) {
  const ModelConfig c;
  const double f64 = flops_of(c, 64), f128 = flops_of(c, 128), f256 = flops_of(c, 256),
               f512 = flops_of(c, 512);
  for (double r : {f512 / f256, f256 / f128, f128 / f64}) {
    EXPECT_GE(r, 3.7);
    EXPECT_LE(r, 4.0);
  }
}

TEST(Flops, QuadraticInResolutionExceptLinearLayers) {
  for (Placement p : {Placement::None, Placement::End, Placement::Both}) {
    ModelConfig c;
    c.placement = p;
    Rng rng(0);
    Model m(c, rng);
    for (int s : {64, 128, 256}) {
      const std::int64_t lin = linear_flops(m, s);
      EXPECT_EQ(linear_flops(m, 2 * s), lin);
      EXPECT_EQ(model_flops(m, 2 * s) - 4 * model_flops(m, s), -3 * lin) << s;
    }
  }
}

TEST(Flops, IncreaseWithGroups) {
  std::int64_t prev = 0;
  for (int g : {16, 30, 60, 120, 240}) {
    ModelConfig c;
    c.groups = g;
    const std::int64_t f = flops_of(c, 256);
    EXPECT_GT(f, prev);
    prev = f;
  }
}

TEST(Flops, SinglePointwiseLayerClosedForm) {
  Rng rng(0);
  Sequential s;
  s.add(std::make_unique<Conv2d>("pw", 24, 40, 1, 1, 1, false, rng));
  std::vector<CostEntry> entries;
  s.describe({1, 24, 14, 14}, entries);
  ASSERT_EQ(entries.size(), 1u);
  EXPECT_EQ(entries[0].desc.kind, LayerKind::Pointwise);
  EXPECT_EQ(layer_flops(entries[0].desc, entries[0].input), 2LL * 24 * 40 * 14 * 14);
}

TEST(Model, TinyForwardShape) {
  Rng rng(1);
  Model m(tiny(Placement::End, 64), rng);
  const Tensor4 x = random_tensor({3, 3, 64, 64}, rng);
  const Tensor4 y = m.forward(x, Mode::Train);
  EXPECT_EQ(y.shape(), (Shape4{3, 2, 1, 1}));
  EXPECT_EQ(m.infer(x).shape(), (Shape4{3, 2, 1, 1}));
}

TEST(Model, WrongInputSizeIsConfigError) {
  Rng rng(2);
  Model m(tiny(), rng);
  EXPECT_THROW(m.infer(Tensor4(1, 3, 40, 40)), ConfigError);
  EXPECT_THROW(m.forward(Tensor4(1, 1, 32, 32), Mode::Train), ConfigError);
}

TEST(Model, DivisibilityErrorNamesChannelsAndGroups) {
  ModelConfig c;
  c.groups = 7;
  Rng rng(0);
  try {
    Model m(c, rng);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("960"), std::string::npos) << msg;
    EXPECT_NE(msg.find("7"), std::string::npos) << msg;
  }
}

TEST(Model, IdenticalInputsGiveIdenticalRows) {
  Rng rng(3);
  Model m(tiny(), rng);
  randomize(m, rng);
  const Tensor4 one = random_tensor({1, 3, 32, 32}, rng);
  Tensor4 two(2, 3, 32, 32);
  std::copy(one.data().begin(), one.data().end(), two.data().begin());
  std::copy(one.data().begin(), one.data().end(), two.data().begin() + one.size());
  const Tensor4 y = m.infer(two);
  EXPECT_EQ(y(0, 0, 0, 0), y(1, 0, 0, 0));
  EXPECT_EQ(y(0, 1, 0, 0), y(1, 1, 0, 0));
}

TEST(Model, BatchPermutationPermutesRows) {
  Rng rng(4);
  Model m(tiny(), rng);
  randomize(m, rng);
  const Tensor4 x = random_tensor({3, 3, 32, 32}, rng);
  const int perm[3] = {2, 0, 1};
  Tensor4 xp(x.shape());
  const std::size_t per = x.size() / 3;
  for (int i = 0; i < 3; ++i)
    std::copy_n(x.data().begin() + perm[i] * per, per, xp.data().begin() + i * per);
  const Tensor4 y = m.infer(x), yp = m.infer(xp);
  for (int i = 0; i < 3; ++i)
    for (int c = 0; c < 2; ++c) EXPECT_EQ(yp(i, c, 0, 0), y(perm[i], c, 0, 0));
}

TEST(Model, LogitsMatchScalarReference) {
  for (Placement p : {Placement::End, Placement::Both}) {
    Rng rng(5);
    Model m(tiny(p), rng);
    randomize(m, rng);
    const Tensor4 x = random_tensor({2, 3, 32, 32}, rng);
    const Tensor4 ref = ref_eval(m.classifier(), ref_eval(m.trunk(), x));
    EXPECT_LT(max_abs_diff(m.infer(x), ref), 1e-10) << placement_name(p);
  }
}

TEST(Model, WiringPermutationInvariance) {
  Rng rng(6);
  Model m(tiny(Placement::None), rng);
  randomize(m, rng);
  const Tensor4 x = random_tensor({2, 3, 32, 32}, rng);
  const Tensor4 before = m.infer(x);

  Sequential& trunk = m.trunk();
  auto& conv = dynamic_cast<Conv2d&>(trunk.at(trunk.size() - 3));
  auto& bn = dynamic_cast<BatchNorm2d&>(trunk.at(trunk.size() - 2));
  Linear& head = m.head();
  const int c = conv.weight().value.n();
  std::vector<int> perm(c);
  for (int i = 0; i < c; ++i) perm[i] = i;
  rng.shuffle(std::span<int>(perm));

  auto permute_rows = [&](Tensor4& t) {
    const Tensor4 src = t;
    const std::size_t row = t.size() / t.n();
    for (int i = 0; i < c; ++i)
      std::copy_n(src.data().begin() + perm[i] * row, row, t.data().begin() + i * row);
  };
  permute_rows(conv.weight().value);
  permute_rows(bn.gamma().value);
  permute_rows(bn.beta().value);
  permute_rows(bn.running_mean());
  permute_rows(bn.running_var());
  const Tensor4 w = head.weight().value;
  for (int o = 0; o < head.out_features(); ++o)
    for (int i = 0; i < c; ++i) head.weight().value(o, i, 0, 0) = w(o, perm[i], 0, 0);

  EXPECT_LT(max_abs_diff(m.infer(x), before), 1e-12);
}

TEST(Model, TrainModeUpdatesRunningStatsInferDoesNot) {
  Rng rng(7);
  Model m(tiny(), rng);
  const Tensor4 x = random_tensor({2, 3, 32, 32}, rng);
  const Tensor4 before = *m.buffers().front().tensor;
  m.infer(x);
  EXPECT_EQ(m.buffers().front().tensor->values(), before.values());
  m.forward(x, Mode::Train);
  EXPECT_NE(m.buffers().front().tensor->values(), before.values());
}

TEST(SqueezeExcite, GateInUnitIntervalAndShape) {
  Rng rng(8);
  SqueezeExcite se("se", 16, 8, rng);
  const Tensor4 x = random_tensor({2, 16, 5, 5}, rng, -5, 5);
  EXPECT_EQ(se.forward(x, Mode::Train).shape(), x.shape());
  for (double g : se.last_gate().data()) {
    EXPECT_GE(g, 0.0);
    EXPECT_LE(g, 1.0);
  }
}

TEST(Gradients, SqueezeExciteFiniteDifferences) {
  for (std::uint64_t s = 0; s < 5; ++s) EXPECT_LT(checks::se_grad_err(s), 1e-4) << s;
}

TEST(Gradients, EndToEndFiniteDifferences) {
  for (std::uint64_t s = 0; s < 2; ++s) EXPECT_LT(checks::model_grad_err(s), 1e-3) << s;
}

TEST(GradCam, ConstantFeaturesPositiveWeightsUniform) {
  const Tensor4 a(1, 3, 4, 5, 2.0);
  const Tensor4 g(1, 3, 4, 5, 0.3);
  const Tensor4 cam = gradcam_map(a, g);
  for (double v : cam.values()) EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST(GradCam, ModelHeatmapContract) {
  Rng rng(9);
  Model m(tiny(), rng);
  randomize(m, rng);
  for (int t = 0; t < 3; ++t) {
    const Tensor4 x = random_tensor({1, 3, 32, 32}, rng);
    const Tensor4 h = gradcam(m, x, kBonafide);
    EXPECT_EQ(h.shape(), (Shape4{1, 1, 32, 32}));
    for (double v : h.data()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    EXPECT_EQ(gradcam(m, x, kBonafide).values(), h.values());
  }
  EXPECT_THROW(gradcam(m, Tensor4(2, 3, 32, 32), 1), ConfigError);
}

TEST(GradCam, ManualChainRule) {
  for (std::uint64_t s = 0; s < 10; ++s) EXPECT_LE(checks::gradcam_manual_err(s), 1e-10) << s;
}

TEST(LiveProbability, SoftmaxOfTwoLogits) {
  const Tensor4 l(Shape4{2, 2, 1, 1}, std::vector<double>{0.0, 0.0, -1.0, 2.0});
  const std::vector<double> p = live_probability(l);
  EXPECT_DOUBLE_EQ(p[0], 0.5);
  EXPECT_NEAR(p[1], std::exp(2.0) / (std::exp(2.0) + std::exp(-1.0)), 1e-15);
}

TEST(Checkpoint, RoundTripReproducesInference) {
  Rng rng(10);
  Model m(tiny(Placement::Both), rng);
  randomize(m, rng);
  const auto path = std::filesystem::temp_directory_path() / "gipad_ckpt_test.bin";
  save_checkpoint(path, m);
  Model back = load_checkpoint(path);
  const Tensor4 x = random_tensor({2, 3, 32, 32}, rng);
  EXPECT_EQ(back.infer(x).values(), m.infer(x).values());
  EXPECT_EQ(back.config().to_map(), m.config().to_map());
  std::filesystem::remove(path);
}

TEST(Checkpoint, CorruptionIsDataError) {
  Rng rng(11);
  Model m(tiny(), rng);
  const auto path = std::filesystem::temp_directory_path() / "gipad_ckpt_corrupt.bin";
  save_checkpoint(path, m);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(-100, std::ios::end);
    char c = 0;
    f.read(&c, 1);
    f.seekp(-100, std::ios::end);
    c = static_cast<char>(c ^ 0x5a);
    f.write(&c, 1);
  }
  EXPECT_THROW(load_checkpoint(path), DataError);
  std::filesystem::resize_file(path, 50);
  EXPECT_THROW(load_checkpoint(path), DataError);
  std::filesystem::remove(path);
  EXPECT_THROW(load_checkpoint(path), DataError);
}

TEST(Checkpoint, FnvKnownValues) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
}
