#include <gtest/gtest.h>

#include <cmath>

#include "dream/losses.hpp"
#include "test_support.hpp"

namespace dream {
namespace {

using T = Tensor<double>;
using M = Matrix<double>;

T log_scale(double v) { return T(M::Constant(1, 1, v), true); }

TEST(InfoNce, IdenticalEmbeddingsGiveLogN) {
  for (int n : {2, 5, 16}) {
    M e = M::Zero(n, 4);
    e.col(1).setConstant(1.0);
    const auto r = info_nce(T(e), T(e), log_scale(std::log(14.3)));
    EXPECT_NEAR(r.loss.item(), std::log(n), 1e-9);
    EXPECT_NEAR(r.image_term, std::log(n), 1e-9);
  }
}

TEST(InfoNce, OrthogonalPairsAtUnitTemperature) {
  const M e = M::Identity(2, 2);
  const auto r = info_nce(T(e), T(e), log_scale(0.0));
  EXPECT_NEAR(r.loss.item(), 0.3132616875182228340489955, 1e-9);  // ln(1 + e^-1)
}

TEST(InfoNce, SymmetricSimilarityGivesEqualTerms) {
  Rng rng(4);
  M e(6, 5);
  for (Index i = 0; i < e.size(); ++i) e.data()[i] = rng.normal();
  e.rowwise().normalize();
  const auto r = info_nce(T(e), T(e), log_scale(2.0));
  EXPECT_EQ(r.image_term, r.text_term);
}

TEST(InfoNce, ScaleIsClampedAtOneHundred) {
  const M e = M::Identity(3, 3);
  T ls = log_scale(std::log(1000.0));
  const auto big = info_nce(T(e), T(e), ls);
  const auto capped = info_nce(T(e), T(e), log_scale(std::log(100.0)));
  EXPECT_NEAR(big.loss.item(), capped.loss.item(), 1e-12);
  backward(big.loss);
  EXPECT_EQ(ls.grad()(0, 0), 0.0);
}

TEST(InfoNce, EmptyBatchIsZero) {
  const auto r = info_nce(T(M(0, 3)), T(M(0, 3)), log_scale(1.0));
  EXPECT_EQ(r.loss.item(), 0.0);
}

// -- diffusion loss ---------------------------------------------------------

struct DiffFixture {
  testing::TinyBatch data = testing::tiny_batch(4);
  NoiseSchedule schedule = build_cosine_schedule(1000);
  std::vector<const M*> x0;
  std::vector<MaskState> masks;
  T z;

  explicit DiffFixture(const std::vector<double>& ratios) {
    for (std::size_t i = 0; i < ratios.size(); ++i) {
      x0.push_back(&data.grids[i % data.grids.size()]);
      Rng r(1, {i});
      masks.push_back(make_mask(ratios[i], 16, r));
    }
    z = T(M::Zero(static_cast<Index>(ratios.size()) * 16, 3));
  }
  std::vector<Rng> rngs() const {
    std::vector<Rng> out;
    for (std::size_t i = 0; i < x0.size(); ++i) out.emplace_back(77, std::initializer_list<std::uint64_t>{i});
    return out;
  }
};

TEST(DiffusionLoss, PerfectPredictorScoresZero) {
  DiffFixture f({0.6, 0.9, 1.0});
  auto rngs = f.rngs();
  HeadFn<double> oracle = [](const HeadQuery<double>& q) { return T(*q.eps); };
  const auto r = diffusion_loss<double>(f.x0, f.masks, f.z, f.schedule, rngs, oracle, 4, 0.5);
  EXPECT_EQ(r.loss.item(), 0.0);
  EXPECT_EQ(r.count, 3);
}

TEST(DiffusionLoss, NoisyInputsFollowTheSchedule) {
  // Recover eps from x_t, x0 and t alone; matches to rounding error.
  DiffFixture f({0.7, 0.8});
  auto rngs = f.rngs();
  const NoiseSchedule& s = f.schedule;
  HeadFn<double> recover = [&s](const HeadQuery<double>& q) {
    M e(q.x_t.rows(), q.x_t.cols());
    for (Index r = 0; r < e.rows(); ++r) {
      const int t = q.timesteps[static_cast<std::size_t>(r)];
      e.row(r) = (q.x_t.value().row(r) - s.sqrt_alpha_bar(t) * q.x0->row(r)) / s.sqrt_one_minus_alpha_bar(t);
    }
    return T(e);
  };
  const auto r = diffusion_loss<double>(f.x0, f.masks, f.z, f.schedule, rngs, recover, 4, 0.5);
  EXPECT_LT(r.loss.item(), 1e-10);
}

TEST(DiffusionLoss, ZeroPredictorAveragesNoiseEnergy) {
  DiffFixture f({0.6, 1.0});
  auto rngs = f.rngs();
  double energy = 0.0;
  Index rows = 0;
  HeadFn<double> zero = [&](const HeadQuery<double>& q) {
    energy = q.eps->squaredNorm();
    rows = q.eps->rows();
    return T(M::Zero(q.x_t.rows(), q.x_t.cols()));
  };
  const auto r = diffusion_loss<double>(f.x0, f.masks, f.z, f.schedule, rngs, zero, 3, 0.5);
  EXPECT_EQ(rows, (10 + 16) * 3);  // ceil(0.6 * 16) + 16 masked tokens, three draws each
  EXPECT_NEAR(r.loss.item(), energy / rows, 1e-12);
}

TEST(DiffusionLoss, TimestepSharedWithinDrawOnly) {
  DiffFixture f({1.0});
  auto rngs = f.rngs();
  std::vector<int> ts;
  HeadFn<double> spy = [&](const HeadQuery<double>& q) {
    ts = q.timesteps;
    return T(M::Zero(q.x_t.rows(), q.x_t.cols()));
  };
  diffusion_loss<double>(f.x0, f.masks, f.z, f.schedule, rngs, spy, 4, 0.5);
  ASSERT_EQ(ts.size(), 64u);
  std::set<int> distinct;
  for (int d = 0; d < 4; ++d) {
    for (int j = 0; j < 16; ++j) EXPECT_EQ(ts[static_cast<std::size_t>(d * 16 + j)], ts[static_cast<std::size_t>(d * 16)]);
    distinct.insert(ts[static_cast<std::size_t>(d * 16)]);
    EXPECT_GE(ts[static_cast<std::size_t>(d * 16)], 1);
    EXPECT_LE(ts[static_cast<std::size_t>(d * 16)], 1000);
  }
  EXPECT_GT(distinct.size(), 1u);
}

TEST(DiffusionLoss, GateExcludesSamplesAtOrBelowGamma) {
  DiffFixture f({0.3, 0.5, 0.6, 0.75, 0.8});
  auto rngs = f.rngs();
  HeadFn<double> zero = [](const HeadQuery<double>& q) { return T(M::Zero(q.x_t.rows(), q.x_t.cols())); };
  const auto r = diffusion_loss<double>(f.x0, f.masks, f.z, f.schedule, rngs, zero, 2, 0.5);
  EXPECT_EQ(r.contributed, (std::vector<bool>{false, false, true, true, true}));
  EXPECT_EQ(r.per_sample[0], 0.0);
  EXPECT_EQ(r.per_sample[1], 0.0);
  EXPECT_GT(r.per_sample[2], 0.0);
  EXPECT_EQ(r.count, 3);
}

TEST(DiffusionLoss, PerSampleValuesIndependentOfBatchCompanions) {
  DiffFixture f({0.9, 0.6});
  HeadFn<double> zero = [](const HeadQuery<double>& q) { return T(M::Zero(q.x_t.rows(), q.x_t.cols())); };
  auto rngs = f.rngs();
  const auto both = diffusion_loss<double>(f.x0, f.masks, f.z, f.schedule, rngs, zero, 2, 0.5);
  std::vector<Rng> second{f.rngs()[1]};
  const auto alone = diffusion_loss<double>({f.x0[1]}, {f.masks[1]}, T(M::Zero(16, 3)), f.schedule, second, zero, 2,
                                            0.5);
  EXPECT_NEAR(both.per_sample[1], alone.per_sample[0], 1e-12 * alone.per_sample[0]);
}

TEST(DiffusionLoss, NothingPassingGivesZeroAndCountZero) {
  DiffFixture f({0.1, 0.2});
  auto rngs = f.rngs();
  HeadFn<double> never = [](const HeadQuery<double>&) -> T { throw std::logic_error("head must not run"); };
  const auto r = diffusion_loss<double>(f.x0, f.masks, f.z, f.schedule, rngs, never, 4, 0.5);
  EXPECT_EQ(r.count, 0);
  EXPECT_EQ(r.loss.item(), 0.0);
}

TEST(JointLoss, WeightedSum) {
  const auto j = joint_loss(T(M::Constant(1, 1, 2.0)), 3, T(M::Constant(1, 1, 0.6931)), 5, 0.005);
  EXPECT_NEAR(j.joint, 2.0034655, 1e-12);
  EXPECT_NEAR(j.total.item(), 2.0034655, 1e-12);
}

TEST(JointLoss, EmptyClipSetLeavesDiffusionTerm) {
  const auto j = joint_loss(T(M::Constant(1, 1, 2.0)), 3, T(M::Constant(1, 1, 9.0)), 0, 0.005);
  EXPECT_EQ(j.joint, 2.0);
  EXPECT_EQ(j.contrastive_count, 0);
  EXPECT_EQ(j.contrastive, 0.0);
}

TEST(JointLoss, DiffusionWeightZeroGivesContrastiveOnly) {
  const auto j = joint_loss(T(M::Constant(1, 1, 2.0)), 3, T(M::Constant(1, 1, 1.5)), 2, 0.5, 0.0);
  EXPECT_EQ(j.total.item(), 0.75);
}

}  // namespace
}  // namespace dream
