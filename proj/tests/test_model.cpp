#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "test_util.hpp"

using namespace stocktime;
using namespace stocktime::testing;

namespace {

void zero_out(const Linear& lin) {
  for (Tensor t : {lin.weight, lin.bias}) std::fill(t.mutable_values().begin(), t.mutable_values().end(), 0.0);
}

Window constant_window(std::size_t d, double price) {
  Window w;
  w.ticker = "SYNA";
  w.input.assign(d, price);
  Timestamp t = Timestamp::from_civil(2024, 1, 2);
  for (std::size_t i = 0; i < d; ++i) {
    w.input_ts.push_back(t);
    t = next_timestamp(t, Frequency::daily);
  }
  return w;
}

Window wave_window(std::size_t d, double phase) {
  Window w = constant_window(d, 1.0);
  for (std::size_t i = 0; i < d; ++i) w.input[i] = 50.0 + 3.0 * std::sin(phase + 0.4 * static_cast<double>(i));
  return w;
}

bool bitwise_equal(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

Tensor random_tokens(std::size_t n, std::size_t d, Rng& rng) {
  std::vector<double> v(n * d);
  for (auto& x : v) x = rng.normal();
  return Tensor::from({1, n, d}, std::move(v));
}

}  // namespace

TEST(ShapeChain, EveryAblationConfiguration) {
  const ModelConfig base = tiny_model_config(8, 16, 8);
  std::vector<ModelConfig> grid;
  for (auto v : {AblationVariant::full, AblationVariant::mlp_encoder, AblationVariant::no_encoder,
                 AblationVariant::no_fusion, AblationVariant::backbone_swap}) {
    grid.push_back(apply_variant(base, v));
  }
  ModelConfig cp = base;
  cp.fusion = FusionMode::concat_project;
  grid.push_back(cp);
  Rng rng(1);
  for (const auto& mc : grid) {
    const ModelBundle m = ModelBundle::create(mc);
    std::vector<double> patch(8);
    for (auto& v : patch) v = rng.normal();
    const auto pe = encode_patch(patch, m);
    ASSERT_EQ(pe.size(), 16u);
    const auto o = backbone_forward({pe, pe}, m);
    ASSERT_EQ(o.size(), 2u);
    ASSERT_EQ(o[1].size(), 16u);
    EXPECT_EQ(project(o[1], m).size(), 8u);
  }
}

TEST(Encoder, WrongPatchLengthRejected) {
  const ModelBundle m = ModelBundle::create(tiny_model_config(4));
  EXPECT_THROW(encode_patch(std::vector<double>(5, 0.0), m), ShapeError);
}

TEST(Encoder, NanRejected) {
  const ModelBundle m = ModelBundle::create(tiny_model_config(4));
  std::vector<double> p = {0.0, std::numeric_limits<double>::quiet_NaN(), 1.0, 2.0};
  EXPECT_THROW(encode_patch(p, m), NumericError);
}

TEST(Encoder, KindNoneRejected) {
  ModelConfig mc = tiny_model_config(4);
  mc.encoder.kind = EncoderKind::none;
  EXPECT_THROW(ModelBundle::create(mc), std::invalid_argument);
  mc.encoder.kind = EncoderKind::lstm;
  mc.encoder.num_layers = 0;
  EXPECT_THROW(ModelBundle::create(mc), std::invalid_argument);
}

TEST(Encoder, ZeroLinearMapsZeroPatchToZero) {
  ModelConfig mc = tiny_model_config(4);
  mc.encoder.kind = EncoderKind::linear;
  const ModelBundle m = ModelBundle::create(mc);
  for (const auto& p : m.encoder().parameters()) {
    Tensor t = p.tensor;
    std::fill(t.mutable_values().begin(), t.mutable_values().end(), 0.0);
  }
  EXPECT_EQ(encode_patch(std::vector<double>(4, 0.0), m), std::vector<double>(16, 0.0));
}

TEST(Encoder, LstmIsOrderSensitive) {
  const ModelBundle m = ModelBundle::create(tiny_model_config(4));
  const std::vector<double> p = {0.1, -0.5, 1.2, 0.3};
  const std::vector<double> q = {0.3, 1.2, -0.5, 0.1};
  EXPECT_NE(encode_patch(p, m), encode_patch(q, m));
}

TEST(Fuse, Examples) {
  EXPECT_EQ(fuse(std::vector<double>{1, 2}, std::vector<double>{0, 0}, true), (std::vector<double>{1, 2}));
  EXPECT_EQ(fuse(std::vector<double>{1, -1}, std::vector<double>{-1, 1}, true), (std::vector<double>{0, 0}));
  const std::vector<double> pe = {0.1, 0.2, 0.3};
  const auto off = fuse(pe, std::vector<double>{9, 9, 9}, false);
  EXPECT_TRUE(bitwise_equal(off, pe));
  EXPECT_THROW(fuse(pe, std::vector<double>{1, 2}, true), ShapeError);
}

TEST(Fuse, BatchedTokensAreExactSum) {
  const ModelBundle m = ModelBundle::create(tiny_model_config(4));
  Rng rng(3);
  std::vector<double> pv(2 * 3 * 4), cv(2 * 3 * 16);
  for (auto& v : pv) v = rng.normal();
  for (auto& v : cv) v = rng.normal();
  const Tensor patches = Tensor::from({2, 3, 4}, pv);
  const Tensor ctx = Tensor::from({2, 3, 16}, cv);
  NoGradScope ng;
  const Tensor e = fused_tokens(m, patches, ctx);
  const Tensor pe = m.encoder().forward(Tensor::from({6, 4}, pv));
  for (std::size_t i = 0; i < e.size(); ++i) {
    const double want = pe[i] + cv[i];
    ASSERT_EQ(std::memcmp(&e.values()[i], &want, sizeof(double)), 0) << i;
  }
}

TEST(Fuse, DisabledPassesPriceEmbeddingThrough) {
  ModelConfig mc = tiny_model_config(4);
  mc.fusion_enabled = false;
  const ModelBundle m = ModelBundle::create(mc);
  Rng rng(4);
  std::vector<double> pv(3 * 4);
  for (auto& v : pv) v = rng.normal();
  NoGradScope ng;
  const Tensor e = fused_tokens(m, Tensor::from({1, 3, 4}, pv), Tensor::zeros({1, 3, 16}));
  const Tensor pe = m.encoder().forward(Tensor::from({3, 4}, pv));
  EXPECT_TRUE(bitwise_equal(e.values(), pe.values()));
}

TEST(Backbone, CausalityIsBitwise) {
  const ModelBundle m = ModelBundle::create(tiny_model_config(4));
  Rng rng(5);
  const std::size_t n = 6;
  const Tensor base = random_tokens(n, 16, rng);
  NoGradScope ng;
  const Tensor out = m.backbone().forward(base);
  for (std::size_t j = 0; j < n; ++j) {
    std::vector<double> v = base.to_vector();
    for (std::size_t k = 0; k < 16; ++k) v[j * 16 + k] += 0.5 + rng.normal();
    const Tensor pert = m.backbone().forward(Tensor::from({1, n, 16}, std::move(v)));
    EXPECT_TRUE(bitwise_equal(out.values().first(j * 16), pert.values().first(j * 16))) << "token " << j;
    EXPECT_FALSE(bitwise_equal(out.values().subspan(j * 16, 16), pert.values().subspan(j * 16, 16)));
  }
}

TEST(Backbone, SingleTokenAndDeterminism) {
  const ModelBundle m = ModelBundle::create(tiny_model_config(4));
  Rng rng(6);
  const Tensor one = random_tokens(1, 16, rng);
  NoGradScope ng;
  const Tensor a = m.backbone().forward(one);
  EXPECT_EQ(a.shape(), (Shape{1, 1, 16}));
  for (double v : a.values()) EXPECT_TRUE(std::isfinite(v));
  EXPECT_TRUE(bitwise_equal(a.values(), m.backbone().forward(one).values()));
  const ModelBundle m2 = ModelBundle::create(tiny_model_config(4));
  EXPECT_TRUE(bitwise_equal(a.values(), m2.backbone().forward(one).values()));
  EXPECT_EQ(m.backbone_checksum(), m2.backbone_checksum());
}

TEST(Backbone, TooLongSequence) {
  const ModelBundle m = ModelBundle::create(tiny_model_config(4));
  Rng rng(7);
  EXPECT_THROW(m.backbone().forward(random_tokens(97, 16, rng)), SequenceTooLong);
}

TEST(Backbone, ParametersAreFrozen) {
  const ModelBundle m = ModelBundle::create(tiny_model_config(4));
  for (const auto& p : m.backbone_parameters()) EXPECT_FALSE(p.tensor.requires_grad()) << p.name;
  for (const auto& p : m.trainable_parameters()) EXPECT_TRUE(p.tensor.requires_grad()) << p.name;
}

TEST(Backbone, HeadsMustDivideWidth) {
  BackboneConfig cfg;
  cfg.d_llm = 10;
  cfg.num_heads = 4;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(Backbone, GradientsFlowThroughToUpstream) {
  const ModelBundle m = ModelBundle::create(tiny_model_config(4));
  Rng rng(8);
  Tensor x = Tensor::from({1, 3, 16}, random_tokens(3, 16, rng).to_vector(), true);
  Tape tape;
  TapeScope scope(&tape);
  backward(reduce_sum(m.backbone().forward(x)));
  ASSERT_EQ(x.grad().size(), x.size());
  for (const auto& p : m.backbone_parameters()) EXPECT_TRUE(p.tensor.grad().empty());
}

TEST(Projection, ZeroInitGivesZeroPatch) {
  const ModelBundle m = ModelBundle::create(tiny_model_config(4));
  zero_out(m.projection());
  EXPECT_EQ(project(std::vector<double>(16, 0.7), m), std::vector<double>(4, 0.0));
}

TEST(Projection, GradientCheck) {
  const ModelBundle m = ModelBundle::create(tiny_model_config(4));
  Rng rng(9);
  const Tensor o = random_tokens(3, 16, rng);
  const auto rep = finite_difference_check(
      [&] { return reduce_sum(mul(m.projection()(o), m.projection()(o))); },
      {m.projection().weight, m.projection().bias}, 1e-5, 1e-4);
  EXPECT_TRUE(rep.all_passed()) << rep.worst();
}

TEST(Forecast, RolloutStepCounts) {
  const ModelBundle m = ModelBundle::create(tiny_model_config(4));
  auto emb = m.make_embedder(Vocabulary(256));
  const Window w = wave_window(8, 0.3);
  const auto r1 = forecast_batch({&w}, 4, m, &emb).front();
  EXPECT_EQ(r1.rollout_steps, 1u);
  EXPECT_EQ(r1.prices.size(), 4u);
  const auto r3 = forecast_batch({&w}, 9, m, &emb).front();
  EXPECT_EQ(r3.rollout_steps, 3u);
  EXPECT_EQ(r3.prices.size(), 9u);
  EXPECT_EQ(r3.timestamps.size(), 9u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(r3.normalized[i], r1.normalized[i]);
  EXPECT_LT(w.input_ts.back(), r3.timestamps.front());
  for (std::size_t i = 1; i < r3.timestamps.size(); ++i) {
    EXPECT_LT(r3.timestamps[i - 1], r3.timestamps[i]);
    EXPECT_LT(r3.timestamps[i].weekday(), 5);
  }
  const auto r2 = forecast_batch({&w}, 1, m, &emb).front();
  EXPECT_EQ(r2.prices.size(), 1u);
}

TEST(Forecast, HorizonZeroRejected) {
  const ModelBundle m = ModelBundle::create(tiny_model_config(4));
  auto emb = m.make_embedder(Vocabulary(256));
  const Window w = wave_window(8, 0.0);
  EXPECT_THROW(forecast_batch({&w}, 0, m, &emb), std::invalid_argument);
}

TEST(Forecast, RolloutBeyondPositionsRejected) {
  const ModelBundle m = ModelBundle::create(tiny_model_config(4));
  auto emb = m.make_embedder(Vocabulary(256));
  const Window w = wave_window(8, 0.0);
  EXPECT_THROW(forecast_batch({&w}, 4 * 96, m, &emb), SequenceTooLong);
}

TEST(Forecast, ConstantWindowZeroProjectionGivesMean) {
  const ModelBundle m = ModelBundle::create(tiny_model_config(4));
  zero_out(m.projection());
  auto emb = m.make_embedder(Vocabulary(256));
  const Window w = constant_window(8, 42.5);
  const auto r = forecast_batch({&w}, 6, m, &emb).front();
  EXPECT_TRUE(r.stats.degenerate);
  for (double p : r.prices) EXPECT_EQ(p, 42.5);
}

TEST(Forecast, DenormalizesWithOriginalStats) {
  const ModelBundle m = ModelBundle::create(tiny_model_config(4));
  auto emb = m.make_embedder(Vocabulary(256));
  const Window w = wave_window(8, 1.0);
  const auto r = forecast_batch({&w}, 7, m, &emb).front();
  const auto st = revin_normalize(w.input).stats;
  for (std::size_t i = 0; i < r.prices.size(); ++i) {
    EXPECT_DOUBLE_EQ(r.prices[i], r.normalized[i] * (st.std + st.eps) + st.mean);
  }
}

TEST(Forecast, BatchMatchesSingle) {
  const ModelBundle m = ModelBundle::create(tiny_model_config(4));
  auto emb = m.make_embedder(Vocabulary(256));
  const Window a = wave_window(8, 0.2), b = wave_window(8, 2.0);
  const auto both = forecast_batch({&a, &b}, 6, m, &emb);
  const auto only_b = forecast_batch({&b}, 6, m, &emb).front();
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(both[1].normalized[i], only_b.normalized[i], 1e-12);
}

TEST(Forecast, FusionChangesOutput) {
  ModelConfig mc = tiny_model_config(4);
  const ModelBundle with = ModelBundle::create(mc);
  mc.fusion_enabled = false;
  const ModelBundle without = ModelBundle::create(mc);
  auto emb = with.make_embedder(Vocabulary(256));
  const Window w = wave_window(8, 0.5);
  const auto a = forecast_batch({&w}, 4, with, &emb).front();
  const auto b = forecast_batch({&w}, 4, without, nullptr).front();
  EXPECT_NE(a.normalized, b.normalized);
}

TEST(Forecast, ConcatProjectRollout) {
  ModelConfig mc = tiny_model_config(4);
  mc.fusion = FusionMode::concat_project;
  const ModelBundle m = ModelBundle::create(mc);
  auto emb = m.make_embedder(Vocabulary(256));
  const Window w = wave_window(8, 0.5);
  const auto r = forecast_batch({&w}, 10, m, &emb).front();
  EXPECT_EQ(r.prices.size(), 10u);
  bool has_fuse = false;
  for (const auto& p : m.trainable_parameters()) has_fuse |= p.name.rfind("encoder.fuse", 0) == 0;
  EXPECT_TRUE(has_fuse);
}

TEST(Bundle, TrainableSetIsEncoderAndProjection) {
  const ModelBundle m = ModelBundle::create(tiny_model_config(4));
  for (const auto& p : m.trainable_parameters()) {
    EXPECT_TRUE(p.name.rfind("encoder.", 0) == 0 || p.name.rfind("proj.", 0) == 0) << p.name;
  }
  for (const auto& p : m.backbone_parameters()) EXPECT_EQ(p.name.rfind("backbone.", 0), 0u) << p.name;
}

TEST(Checkpoint, RoundTripIsExact) {
  const ModelBundle m = ModelBundle::create(tiny_model_config(4));
  const std::string bytes = encode_checkpoint(m.all_parameters());
  EXPECT_EQ(bytes.substr(0, 8), "STKTIME1");
  const ParamList back = decode_checkpoint(bytes);
  const auto all = m.all_parameters();
  ASSERT_EQ(back.size(), all.size());
  for (std::size_t i = 0; i < all.size(); ++i) {
    EXPECT_EQ(back[i].name, all[i].name);
    EXPECT_EQ(back[i].tensor.shape(), all[i].tensor.shape());
    EXPECT_TRUE(bitwise_equal(back[i].tensor.values(), all[i].tensor.values()));
  }
  ModelConfig other = tiny_model_config(4);
  other.seed = 999;
  const ModelBundle m2 = ModelBundle::create(other);
  assign_parameters(m2.all_parameters(), back);
  EXPECT_EQ(snapshot(m2.all_parameters()), snapshot(all));
}

TEST(Checkpoint, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "stocktime_test_ckpt.bin";
  const ModelBundle m = ModelBundle::create(tiny_model_config(4));
  write_checkpoint(path, m.all_parameters());
  EXPECT_EQ(snapshot(read_checkpoint(path)), snapshot(m.all_parameters()));
  std::filesystem::remove(path);
}

TEST(Checkpoint, CorruptionDetected) {
  const ModelBundle m = ModelBundle::create(tiny_model_config(4));
  std::string bytes = encode_checkpoint(m.trainable_parameters());
  std::string flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x01;
  EXPECT_THROW(decode_checkpoint(flipped), CheckpointError);
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad_magic), CheckpointError);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, 10)), CheckpointError);
}

TEST(Checkpoint, ShapeMismatchRejected) {
  const ModelBundle a = ModelBundle::create(tiny_model_config(4, 16, 8));
  const ModelBundle b = ModelBundle::create(tiny_model_config(4, 16, 6));
  EXPECT_THROW(assign_parameters(b.trainable_parameters(), decode_checkpoint(encode_checkpoint(a.trainable_parameters()))),
               CheckpointError);
}

TEST(Bundle, BackboneWeightsHook) {
  const auto path = std::filesystem::temp_directory_path() / "stocktime_test_backbone.bin";
  ModelConfig donor_cfg = tiny_model_config(4);
  donor_cfg.backbone.seed = 77;
  const ModelBundle donor = ModelBundle::create(donor_cfg);
  write_checkpoint(path, donor.backbone_parameters());
  ModelConfig mc = tiny_model_config(4);
  mc.backbone.weights_path = path.string();
  const ModelBundle m = ModelBundle::create(mc);
  EXPECT_EQ(m.backbone_checksum(), donor.backbone_checksum());
  std::filesystem::remove(path);
}
