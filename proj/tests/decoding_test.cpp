#include <gtest/gtest.h>

#include <numeric>

#include "dream/decoding.hpp"
#include "test_support.hpp"

namespace dream {
namespace {

using M = Matrix<double>;

struct DecodeFixture {
  Model<double> model;
  NoiseSchedule schedule = build_cosine_schedule(1000);
  testing::TinyBatch data = testing::tiny_batch(4);

  DecodeFixture() : model(live_config(), 3) {}
  static ModelConfig live_config() {
    auto c = testing::tiny_model();
    c.zero_init_head_output = false;
    c.init_std = 0.1;
    return c;
  }
  DecodeConfig config(int steps = 8) const {
    DecodeConfig d;
    d.steps = steps;
    d.inference_steps = 4;
    d.seed = 21;
    return d;
  }
  CaptionTokens prompt() const { return data.samples[0].caption; }
};

TEST(Decoding, CfgCombinationIsExactAtEndpoints) {
  M u(2, 3), c(2, 3);
  u << 0.1, -2.5, 3e-7, 1e10, 0.3, -0.7;
  c << 9.1, 2.25, -1.0, 4.0, 0.0, 1.0 / 3.0;
  EXPECT_EQ(cfg_eps(u, c, 0.0), u);
  EXPECT_EQ(cfg_eps(u, c, 1.0), c);
  EXPECT_TRUE(cfg_eps(u, c, 3.0).isApprox(u + 3.0 * (c - u), 1e-14));
}

TEST(Decoding, GuidanceWeightZeroIsTheUnconditionalPath) {
  DecodeFixture f;
  DecodeConfig guided = f.config();
  guided.cfg = 0.0;
  const auto a = Decoder<double>(f.model, f.schedule, guided).run(f.prompt());
  const auto b = Decoder<double>(f.model, f.schedule, f.config()).run(CaptionTokens::null_prompt());
  EXPECT_EQ(a.grid, b.grid);
  EXPECT_EQ(a.ledger.decoder, 2 * b.ledger.decoder);
}

TEST(Decoding, GuidanceWeightOneIsTheConditionalPath) {
  DecodeFixture f;
  const auto data = f.data;
  Rng r(1);
  const std::vector<MaskState> masks{make_mask(0.75, 16, r)};
  const auto enc = f.model.encode_masked({&data.grids[0]}, masks);
  const Tensor<double> zc = f.model.decode(enc, masks, f.model.encode_cond({f.prompt()}));
  const Tensor<double> zu = f.model.decode(enc, masks, f.model.encode_cond({CaptionTokens::null_prompt()}));
  EpsFn<double> eps = [&](const M& x, int t, bool conditional) {
    return f.model.head(Tensor<double>(x), std::vector<int>(static_cast<std::size_t>(x.rows()), t),
                        conditional ? zc : zu).value();
  };
  const auto steps = respace(f.schedule, resample_timesteps(1000, 6));
  Rng r1(5), r2(5);
  const M x0 = M::Constant(16, 48, 0.3);
  const M guided = sample_tokens(eps, x0, steps, r1, 1.0, 1.0, true);
  const M plain = sample_tokens(eps, x0, steps, r2, 1.0, 1.0, false);
  EXPECT_EQ(guided, plain);
}

TEST(Decoding, OneStepLinearRampIsTheConditionalPath) {
  // The only step of a linear ramp runs both branches at weight exactly 1.
  DecodeFixture f;
  DecodeConfig ramp = f.config(1);
  ramp.cfg_schedule = CfgSchedule::linear;
  const auto a = Decoder<double>(f.model, f.schedule, ramp).run(f.prompt());
  const auto b = Decoder<double>(f.model, f.schedule, f.config(1)).run(f.prompt());
  EXPECT_EQ(a.grid, b.grid);
  EXPECT_EQ(a.ledger.decoder, 2 * b.ledger.decoder);
}

TEST(Decoding, RevealFollowsPlanAndFinishesFinite) {
  DecodeFixture f;
  for (int S : {1, 3, 8, 16}) {
    const auto res = Decoder<double>(f.model, f.schedule, f.config(S)).run(f.prompt());
    const auto plan = unmask_plan(S, 16);
    std::vector<int> cumulative(plan.size());
    std::partial_sum(plan.begin(), plan.end(), cumulative.begin());
    EXPECT_EQ(res.reveal_counts, cumulative) << "S=" << S;
    EXPECT_TRUE(res.grid.allFinite());
    EXPECT_EQ(res.grid.rows(), 16);
    EXPECT_EQ(res.ledger, NfeLedger::expected(f.config(S)));
  }
}

TEST(Decoding, FixedSeedIsReproducible) {
  DecodeFixture f;
  const auto a = Decoder<double>(f.model, f.schedule, f.config()).run(f.prompt());
  const auto b = Decoder<double>(f.model, f.schedule, f.config()).run(f.prompt());
  EXPECT_EQ(a.grid, b.grid);
  DecodeConfig other = f.config();
  other.seed = 22;
  EXPECT_NE(Decoder<double>(f.model, f.schedule, other).run(f.prompt()).grid, a.grid);
}

TEST(Decoding, ZeroTemperatureUsesTheSameStream) {
  // Noise is still drawn when it is not used, so the token order is unchanged.
  DecodeFixture f;
  DecodeConfig cold = f.config();
  cold.temperature = 0.0;
  const auto a = Decoder<double>(f.model, f.schedule, cold).run(f.prompt());
  const auto b = Decoder<double>(f.model, f.schedule, f.config()).run(f.prompt());
  EXPECT_EQ(a.reveal_counts, b.reveal_counts);
  EXPECT_TRUE(a.grid.allFinite());
}

TEST(Decoding, ClippedPredictionsStayWithinBounds) {
  DecodeFixture f;
  const M lo = M::Constant(1, 48, -0.05), hi = M::Constant(1, 48, 0.05);
  DecodeConfig cold = f.config();
  cold.temperature = 0.0;
  const auto res = Decoder<double>(f.model, f.schedule, cold, std::make_pair(lo, hi)).run(f.prompt());
  // With no injected noise the final step returns the clamped x0 prediction.
  EXPECT_LE(res.grid.maxCoeff(), 0.05 + 1e-12);
  EXPECT_GE(res.grid.minCoeff(), -0.05 - 1e-12);
}

TEST(Decoding, SingleCandidateSelectionEqualsPlainDecode) {
  DecodeFixture f;
  DecodeConfig sad = f.config();
  sad.nfe_budget = sad.steps;  // K = 1
  const auto a = Decoder<double>(f.model, f.schedule, sad).run(f.prompt());
  const auto b = Decoder<double>(f.model, f.schedule, f.config()).run(f.prompt());
  EXPECT_EQ(a.grid, b.grid);
  EXPECT_EQ(a.ledger, b.ledger);
}

TEST(Decoding, SurvivorIsTheScorerArgmax) {
  DecodeFixture f;
  for (int K : {2, 5, 9, 17}) {
    DecodeConfig c = f.config(8);
    c.k = K;
    c.t_switch = 3;
    std::vector<double> seen;
    std::vector<M> partial;
    const M w = M::Random(16, 48);
    CandidateScorer mock = [&](const Candidate& cand) {
      partial.push_back(cand.grid);
      const double s = (cand.grid.array() * w.array()).sum();
      seen.push_back(s);
      return s;
    };
    const auto res = Decoder<double>(f.model, f.schedule, c).run(f.prompt(), mock);
    ASSERT_EQ(static_cast<int>(seen.size()), K);
    const int best = static_cast<int>(std::max_element(seen.begin(), seen.end()) - seen.begin());
    EXPECT_EQ(res.selected, best) << "K=" << K;
    EXPECT_EQ(res.scores, seen);
    // Positions revealed before the switch keep their values in the final grid.
    const M& p = partial[static_cast<std::size_t>(best)];
    for (Index r = 0; r < 16; ++r) {
      if (!p.row(r).isZero(0.0)) {
        EXPECT_EQ(res.grid.row(r), p.row(r));
      }
    }
    EXPECT_EQ(res.ledger, NfeLedger::expected(c)) << "K=" << K;
  }
}

TEST(Decoding, CandidatesDoNotDependOnCandidateCount) {
  DecodeFixture f;
  auto scores = [&](int K) {
    DecodeConfig c = f.config(8);
    c.k = K;
    c.t_switch = 3;
    return Decoder<double>(f.model, f.schedule, c).run(f.prompt()).scores;
  };
  const auto five = scores(5), nine = scores(9);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(five[i], nine[i], 1e-9);
}

TEST(Decoding, TiesGoToTheLowestIndex) {
  DecodeFixture f;
  DecodeConfig c = f.config(8);
  c.k = 4;
  c.t_switch = 2;
  const auto res = Decoder<double>(f.model, f.schedule, c).run(f.prompt(), [](const Candidate&) { return 1.0; });
  EXPECT_EQ(res.selected, 0);
}

TEST(Decoding, LedgerCountsGuidanceAndBudget) {
  DecodeConfig c;
  c.steps = 64;
  c.k = 5;
  c.nfe_budget = 128;
  c.inference_steps = 10;
  c.cfg = 3.0;
  const NfeLedger l = NfeLedger::expected(c);
  EXPECT_EQ(l.trajectory_steps, 128);
  EXPECT_EQ(l.encoder, 133);
  EXPECT_EQ(l.decoder, 256);
  EXPECT_EQ(l.head, 2560);
}

TEST(Decoding, LinearGuidanceRamp) {
  DecodeConfig c;
  c.steps = 5;
  c.cfg = 4.0;
  c.cfg_schedule = CfgSchedule::linear;
  EXPECT_EQ(cfg_weight_at(c, 0), 0.0);
  EXPECT_EQ(cfg_weight_at(c, 2), 2.0);
  EXPECT_EQ(cfg_weight_at(c, 4), 4.0);
  EXPECT_TRUE(cfg_active(c));
}

TEST(Decoding, LatentBoundsCoverThePixelRange) {
  const RowVector<double> mean = RowVector<double>::Constant(48, 0.2), scale = RowVector<double>::Constant(48, 0.5);
  const auto [lo, hi] = latent_bounds(mean, scale);
  EXPECT_DOUBLE_EQ(lo(0, 0), -2.4);
  EXPECT_DOUBLE_EQ(hi(0, 0), 1.6);
}

TEST(Decoding, RejectsBadConfigs) {
  DecodeFixture f;
  DecodeConfig c = f.config(17);
  EXPECT_THROW(Decoder<double>(f.model, f.schedule, c), std::invalid_argument);
  c = f.config();
  c.k = 3;
  EXPECT_THROW(c.validate(), std::invalid_argument);  // no switch step
  c.nfe_budget = 13;
  EXPECT_THROW(c.validate(), InfeasibleBudget);
}

}  // namespace
}  // namespace dream
