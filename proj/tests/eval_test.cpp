#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "dream/eval.hpp"
#include "test_support.hpp"

namespace dream {
namespace {

using M = Matrix<double>;

struct Clusters {
  M x;
  std::vector<int> y;
};

Clusters clusters(int n, int dims, int classes, double spread, std::uint64_t seed) {
  Rng rng(seed);
  M centers(classes, dims);
  for (Index i = 0; i < centers.size(); ++i) centers.data()[i] = 3.0 * rng.normal();
  Clusters c{M(n, dims), {}};
  for (int i = 0; i < n; ++i) {
    const int k = i % classes;
    c.y.push_back(k);
    for (int d = 0; d < dims; ++d) c.x(i, d) = centers(k, d) + spread * rng.normal();
  }
  return c;
}

TEST(LinearProbe, SeparatesWellSeparatedClusters) {
  const auto tr = clusters(400, 8, 4, 0.5, 1), te = clusters(200, 8, 4, 0.5, 1);
  const auto r = linear_probe(tr.x, tr.y, te.x, te.y, 4);
  EXPECT_GT(r.accuracy, 0.95);
  EXPECT_GT(r.train_accuracy, 0.95);
}

TEST(LinearProbe, LabelsIndependentOfFeaturesGiveChance) {
  Rng rng(9);
  auto noise = [&](int n) {
    Clusters c{M(n, 8), {}};
    for (Index i = 0; i < c.x.size(); ++i) c.x.data()[i] = rng.normal();
    for (int i = 0; i < n; ++i) c.y.push_back(static_cast<int>(rng.uniform_int(4)));
    return c;
  };
  const auto tr = noise(400), te = noise(1000);
  const auto r = linear_probe(tr.x, tr.y, te.x, te.y, 4);
  EXPECT_NEAR(r.accuracy, 0.25, 0.05);
}

TEST(LinearProbe, DuplicatedFeaturesKeepAccuracy) {
  const auto tr = clusters(300, 6, 4, 2.0, 3), te = clusters(300, 6, 4, 2.0, 4);
  M tr2(tr.x.rows(), 12), te2(te.x.rows(), 12);
  tr2 << tr.x, tr.x;
  te2 << te.x, te.x;
  const auto a = linear_probe(tr.x, tr.y, te.x, te.y, 4);
  const auto b = linear_probe(tr2, tr.y, te2, te.y, 4);
  EXPECT_NEAR(a.accuracy, b.accuracy, 0.02);
}

TEST(LinearProbe, ConstantFeatureIsHarmless) {
  auto tr = clusters(200, 4, 4, 0.5, 5), te = clusters(200, 4, 4, 0.5, 5);
  tr.x.col(0).setConstant(2.0);
  te.x.col(0).setConstant(2.0);
  const auto r = linear_probe(tr.x, tr.y, te.x, te.y, 4);
  EXPECT_TRUE(std::isfinite(r.accuracy));
  EXPECT_GT(r.accuracy, 0.9);
}

std::vector<CaptionTokens> captions_for(const std::vector<int>& scenes) {
  std::vector<CaptionTokens> out;
  for (int s : scenes) out.push_back(caption_of(SceneSpec::from_index(s)));
  return out;
}

TEST(Retrieval, PerfectEmbeddingsRetrieveEverything) {
  const auto caps = captions_for({0, 5, 9, 5});
  const auto cand = distinct_captions(caps);
  ASSERT_EQ(cand.size(), 3u);
  M text = M::Identity(3, 3);
  M img(4, 3);
  img << 1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 1, 0;
  const auto r = retrieval_top1(img, caps, text, cand);
  EXPECT_EQ(r.image_to_text, 1.0);
  EXPECT_EQ(r.text_to_image, 1.0);
  EXPECT_EQ(r.candidates, 3);
}

TEST(Retrieval, InvariantToPositiveScaling) {
  Rng rng(4);
  const auto caps = captions_for({1, 2, 3, 4, 5, 6, 1, 2});
  const auto cand = distinct_captions(caps);
  M img(8, 5), text(6, 5);
  for (Index i = 0; i < img.size(); ++i) img.data()[i] = rng.normal();
  for (Index i = 0; i < text.size(); ++i) text.data()[i] = rng.normal();
  const auto a = retrieval_top1(img, caps, text, cand);
  const auto b = retrieval_top1(7.5 * img, caps, 0.01 * text, cand);
  EXPECT_EQ(a.image_to_text, b.image_to_text);
  EXPECT_EQ(a.text_to_image, b.text_to_image);
}

TEST(Retrieval, TiesGoToTheLowestIndex) {
  const auto caps = captions_for({3, 7});
  const auto cand = distinct_captions(caps);
  const M img = M::Ones(2, 2), text = M::Ones(2, 2);
  const auto r = retrieval_top1(img, caps, text, cand);
  EXPECT_EQ(r.image_to_text, 0.5);  // both images pick scene 3
  EXPECT_EQ(r.text_to_image, 0.5);  // both captions pick image 0
}

TEST(Retrieval, DistinctCaptionsAreInSceneOrder) {
  const auto cand = distinct_captions(captions_for({9, 2, 9, 4, 2}));
  ASSERT_EQ(cand.size(), 3u);
  EXPECT_EQ(spec_of(cand[0]).index(), 2);
  EXPECT_EQ(spec_of(cand[1]).index(), 4);
  EXPECT_EQ(spec_of(cand[2]).index(), 9);
}

TEST(Retrieval, RejectsMismatchedShapes) {
  const auto caps = captions_for({1, 2});
  EXPECT_THROW(retrieval_top1(M::Ones(3, 2), caps, M::Ones(2, 2), caps), std::invalid_argument);
  EXPECT_THROW(retrieval_top1(M::Ones(2, 3), caps, M::Ones(2, 2), caps), std::invalid_argument);
}

struct EvalFixture {
  TrainConfig train = testing::tiny_train();
  testing::TinyBatch data = testing::tiny_batch(32);
  EvalConfig config;
  EvalFixture() {
    config.probe_train_samples = 64;
    config.probe_test_samples = 48;
    config.retrieval_samples = 48;
    config.mask_grid = {0.0, 0.9};
    config.probe_iterations = 200;
  }
};

TEST(Evaluate, FreshModelIsNearChanceAndDeterministic) {
  EvalFixture f;
  const Model<float> model(f.train.model, 4);
  const auto a = evaluate(model, f.data.stats, f.train, Split::val, f.config);
  const auto b = evaluate(model, f.data.stats, f.train, Split::val, f.config);
  ASSERT_EQ(a.rows.size(), b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    EXPECT_EQ(a.rows[i].metric, b.rows[i].metric);
    EXPECT_EQ(a.rows[i].value, b.rows[i].value) << a.rows[i].metric;
  }
  EXPECT_GT(a.chance, 0.0);
  EXPECT_LE(a.at_ratio(0.0).image_to_text, 0.25);
  EXPECT_TRUE(std::isfinite(a.diffusion_loss));
  EXPECT_THROW(a.at_ratio(0.5), std::out_of_range);
  // probe, chance, two rows per ratio, diffusion loss
  EXPECT_EQ(a.rows.size(), 1u + 1u + 2u * f.config.mask_grid.size() + 1u);
}

TEST(Evaluate, ValSplitHasItsOwnCandidates) {
  EvalFixture f;
  const auto set = make_eval_set(0, Split::val, 200, f.train.image_side, f.data.stats);
  for (const auto& s : set.samples) EXPECT_TRUE(in_split(s.spec.index(), Split::val));
  EXPECT_LE(distinct_captions(set.captions).size(), 48u);
}

TEST(EvalConfig, Validation) {
  EvalConfig c;
  c.mask_grid = {1.5};
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = EvalConfig{};
  c.retrieval_samples = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(EvalCsv, WritesHeaderAndRows) {
  const auto p = std::filesystem::temp_directory_path() / "dream_eval_test.csv";
  write_eval_csv(p, {{"retrieval_i2t", "val", 0.9, 0.5, 3}});
  std::ifstream in(p);
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  EXPECT_EQ(header, "metric,split,mask_ratio,value,seed");
  EXPECT_EQ(row, "retrieval_i2t,val,0.9,0.5,3");
  std::filesystem::remove(p);
}

}  // namespace
}  // namespace dream
