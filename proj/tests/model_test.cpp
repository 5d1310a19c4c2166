#include <gtest/gtest.h>

#include "dream/model.hpp"
#include "test_support.hpp"

namespace dream {
namespace {

using M = Matrix<double>;

TEST(Model, ParameterNamesAreUniqueAndDecayOnlyOnMatrices) {
  Model<double> m(testing::tiny_model(), 1);
  std::set<std::string> names;
  for (const auto& p : m.params().all()) {
    EXPECT_TRUE(names.insert(p.name).second) << p.name;
    const bool weight = p.name.size() > 2 && p.name.substr(p.name.size() - 2) == ".w";
    EXPECT_EQ(p.decay, weight) << p.name;
  }
  EXPECT_TRUE(names.count("enc.buffers"));
  EXPECT_TRUE(names.count("dec.mask_token"));
  EXPECT_TRUE(names.count("cond.null"));
  EXPECT_FALSE(m.cross_attention_parameter_names().empty());
}

TEST(Model, SeedDeterminesInitialization) {
  Model<double> a(testing::tiny_model(), 4), b(testing::tiny_model(), 4), c(testing::tiny_model(), 5);
  EXPECT_EQ(a.params().snapshot(), b.params().snapshot());
  EXPECT_NE(a.params().snapshot(), c.params().snapshot());
}

TEST(Model, EncoderPrependsBuffersToVisibleTokens) {
  const auto cfg = testing::tiny_model();
  Model<double> m(cfg, 1);
  const auto data = testing::tiny_batch(2);
  Rng r(1);
  const std::vector<MaskState> masks{make_mask(0.25, 16, r), MaskState::none(16)};
  const auto enc = m.encode_masked({&data.grids[0], &data.grids[1]}, masks);
  EXPECT_EQ(enc.rows_of(0), cfg.buffer_tokens + 12);
  EXPECT_EQ(enc.rows_of(1), cfg.buffer_tokens + 16);
  EXPECT_EQ(enc.pooled.rows(), 2);
  for (Index i = 0; i < 2; ++i) EXPECT_NEAR(enc.pooled.value().row(i).norm(), 1.0, 1e-12);
}

TEST(Model, SamplesDoNotInteractWithinABatch) {
  Model<double> m(testing::tiny_model(), 2);
  const auto data = testing::tiny_batch(3);
  Rng r(3);
  std::vector<MaskState> masks{make_mask(0.5, 16, r), make_mask(0.1, 16, r), make_mask(0.9, 16, r)};
  std::vector<const M*> grids{&data.grids[0], &data.grids[1], &data.grids[2]};
  const auto together = m.encode_masked(grids, masks);
  const auto z = m.decode(together, masks, m.encode_cond({data.samples[0].caption, data.samples[1].caption,
                                                           data.samples[2].caption}));
  const auto alone = m.encode_masked({grids[1]}, {masks[1]});
  const auto z1 = m.decode(alone, {masks[1]}, m.encode_cond({data.samples[1].caption}));
  EXPECT_TRUE(together.pooled.value().row(1).isApprox(alone.pooled.value().row(0), 1e-12));
  EXPECT_TRUE(z.value().middleRows(16, 16).isApprox(z1.value(), 1e-12));
}

TEST(Model, PooledEmbeddingIgnoresVisibleTokenOrder) {
  Model<double> m(testing::tiny_model(), 2);
  const auto data = testing::tiny_batch(1);
  EncoderInput<double> in;
  for (int p : {3, 7, 1, 12}) {
    in.positions.push_back(p);
    in.tokens.conservativeResize(in.tokens.rows() + 1, 48);
    in.tokens.row(in.tokens.rows() - 1) = data.grids[0].row(p);
  }
  EncoderInput<double> rev = in;
  std::reverse(rev.positions.begin(), rev.positions.end());
  rev.tokens = in.tokens.colwise().reverse();
  const auto a = m.encode({in}), b = m.encode({rev});
  EXPECT_TRUE(a.pooled.value().isApprox(b.pooled.value(), 1e-12));
}

TEST(Model, DecoderUsesConditioning) {
  Model<double> m(testing::tiny_model(), 2);
  const auto data = testing::tiny_batch(2);
  Rng r(4);
  const std::vector<MaskState> masks{make_mask(0.8, 16, r)};
  const auto enc = m.encode_masked({&data.grids[0]}, masks);
  const auto za = m.decode(enc, masks, m.encode_cond({data.samples[0].caption}));
  const auto zb = m.decode(enc, masks, m.encode_cond({data.samples[1].caption}));
  const auto zn = m.decode(enc, masks, m.encode_cond({CaptionTokens::null_prompt()}));
  EXPECT_EQ(za.rows(), 16);
  EXPECT_FALSE(za.value().isApprox(zb.value(), 1e-9));
  EXPECT_FALSE(za.value().isApprox(zn.value(), 1e-9));
}

TEST(Model, NullPromptsMapToLearnedSequence) {
  Model<double> m(testing::tiny_model(), 2);
  const auto data = testing::tiny_batch(1);
  const auto mixed = m.encode_cond({CaptionTokens::null_prompt(), data.samples[0].caption});
  const auto real = m.encode_cond({data.samples[0].caption});
  EXPECT_EQ(mixed.value().topRows(kCaptionLength), m.params().at("cond.null").tensor.value());
  EXPECT_EQ(mixed.value().bottomRows(kCaptionLength), real.value());
}

TEST(Model, ZeroInitializedHeadPredictsZero) {
  Model<double> m(testing::tiny_model(), 2);
  const Tensor<double> x(M::Ones(3, 48)), z(M::Ones(3, 16));
  EXPECT_TRUE(m.head(x, {1, 500, 1000}, z).value().isZero(0.0));
  auto cfg = testing::tiny_model();
  cfg.zero_init_head_output = false;
  Model<double> live(cfg, 2);
  EXPECT_FALSE(live.head(x, {1, 500, 1000}, z).value().isZero(0.0));
}

TEST(Model, ClipTapAndTokenSelectionChangeThePooledEmbedding) {
  const auto data = testing::tiny_batch(1);
  const std::vector<MaskState> masks{MaskState::none(16)};
  auto cfg = testing::tiny_model();
  Model<double> base(cfg, 2);
  cfg.clip_tokens = ClipTokens::buffer;
  Model<double> buf(cfg, 2);
  cfg.clip_tokens = ClipTokens::all;
  cfg.clip_loss_layer = 1;
  Model<double> early(cfg, 2);
  const M a = base.encode_masked({&data.grids[0]}, masks).pooled.value();
  EXPECT_FALSE(a.isApprox(buf.encode_masked({&data.grids[0]}, masks).pooled.value(), 1e-9));
  EXPECT_FALSE(a.isApprox(early.encode_masked({&data.grids[0]}, masks).pooled.value(), 1e-9));
}

TEST(Model, TextEmbeddingsAreUnitNorm) {
  Model<double> m(testing::tiny_model(), 2);
  const auto data = testing::tiny_batch(3);
  const auto t = m.encode_text({data.samples[0].caption, data.samples[1].caption, data.samples[2].caption});
  for (Index i = 0; i < 3; ++i) EXPECT_NEAR(t.value().row(i).norm(), 1.0, 1e-12);
}

TEST(Model, RejectsInconsistentConfig) {
  auto cfg = testing::tiny_model();
  cfg.heads = 3;
  EXPECT_THROW(Model<double>(cfg, 0), std::invalid_argument);
  cfg = testing::tiny_model();
  cfg.buffer_tokens = 0;
  cfg.clip_tokens = ClipTokens::buffer;
  EXPECT_THROW(Model<double>(cfg, 0), std::invalid_argument);
}

TEST(Model, JointLossGradientsMatchFiniteDifferences) {
  auto cfg = testing::tiny_model();
  cfg.zero_init_head_output = false;
  cfg.init_std = 0.2;
  Model<double> m(cfg, 8);
  const auto data = testing::tiny_batch(4);
  const auto batch = testing::batch_with_ratios<double>(data, {0.6, 0.7, 0.55, 0.75});
  const NoiseSchedule schedule = build_cosine_schedule(1000);
  const LossSettings settings{0.5, 1.0, 2, 0.5, 0.75};
  auto loss = [&]() { return forward_batch(m, batch, schedule, settings).loss.total; };
  const auto rep = testing::finite_difference_check(m.params(), loss, 2);
  EXPECT_LT(rep.max_rel, 1e-4) << rep.worst;
  EXPECT_GT(rep.nonzero, rep.checked / 2);
}

}  // namespace
}  // namespace dream
