#include "dream/eval.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>

namespace dream {

void EvalConfig::validate() const {
  if (probe_train_samples < 1 || probe_test_samples < 1 || retrieval_samples < 1) {
    throw std::invalid_argument("eval: sample counts must be positive");
  }
  if (probe_iterations < 1 || probe_l2 < 0.0) throw std::invalid_argument("eval: probe settings");
  for (double r : mask_grid) {
    if (!(r >= 0.0 && r <= 1.0)) throw std::invalid_argument("eval: mask ratios must lie in [0, 1]");
  }
}

ProbeResult linear_probe(const Matrix<double>& train_x, const std::vector<int>& train_y, const Matrix<double>& test_x,
                         const std::vector<int>& test_y, int classes, const ProbeOptions& options) {
  const Index N = train_x.rows(), F = train_x.cols();
  if (N == 0 || static_cast<Index>(train_y.size()) != N || static_cast<Index>(test_y.size()) != test_x.rows() ||
      test_x.cols() != F || classes < 2) {
    throw std::invalid_argument("linear_probe: inconsistent inputs");
  }
  for (int y : train_y) {
    if (y < 0 || y >= classes) throw std::invalid_argument("linear_probe: label out of range");
  }

  const RowVector<double> mean = train_x.colwise().mean();
  RowVector<double> sd = ((train_x.rowwise() - mean).array().square().colwise().sum() / static_cast<double>(N)).sqrt();
  sd = sd.cwiseMax(1e-8);
  auto standardize = [&](const Matrix<double>& x) {
    Matrix<double> s = (x.rowwise() - mean).array().rowwise() / sd.array();
    Matrix<double> with_bias(x.rows(), F + 1);
    with_bias << s, Matrix<double>::Ones(x.rows(), 1);
    return with_bias;
  };
  const Matrix<double> X = standardize(train_x);
  const Matrix<double> Xt = standardize(test_x);

  // Softmax cross-entropy curvature is bounded by 0.5 * lambda_max(X^T X / N).
  const Matrix<double> gram = X.transpose() * X / static_cast<double>(N);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(Eigen::MatrixXd(gram), Eigen::EigenvaluesOnly);
  const double L = 0.5 * eig.eigenvalues().maxCoeff() + options.l2;
  const double lr = 1.0 / L;

  Matrix<double> Y = Matrix<double>::Zero(N, classes);
  for (Index i = 0; i < N; ++i) Y(i, train_y[static_cast<std::size_t>(i)]) = 1.0;
  Matrix<double> W = Matrix<double>::Zero(F + 1, classes);
  ProbeResult result;
  for (int it = 0; it < options.iterations; ++it) {
    Matrix<double> P = X * W;
    for (Index i = 0; i < N; ++i) {
      auto row = P.row(i);
      row.array() -= row.maxCoeff();
      row = row.array().exp().matrix();
      row /= row.sum();
    }
    Matrix<double> G = X.transpose() * (P - Y) / static_cast<double>(N);
    G.topRows(F) += options.l2 * W.topRows(F);
    W -= lr * G;
    result.iterations = it + 1;
    if (G.cwiseAbs().maxCoeff() < options.tolerance) break;
  }

  auto accuracy = [&](const Matrix<double>& x, const std::vector<int>& y) {
    const Matrix<double> logits = x * W;
    int correct = 0;
    for (Index i = 0; i < logits.rows(); ++i) {
      Index best = 0;
      logits.row(i).maxCoeff(&best);
      correct += best == y[static_cast<std::size_t>(i)] ? 1 : 0;
    }
    return logits.rows() ? static_cast<double>(correct) / static_cast<double>(logits.rows()) : 0.0;
  };
  result.accuracy = accuracy(Xt, test_y);
  result.train_accuracy = accuracy(X, train_y);
  return result;
}

std::vector<CaptionTokens> distinct_captions(const std::vector<CaptionTokens>& captions) {
  std::map<int, CaptionTokens> by_scene;
  for (const auto& c : captions) by_scene.emplace(spec_of(c).index(), c);
  std::vector<CaptionTokens> out;
  for (const auto& [_, c] : by_scene) out.push_back(c);
  return out;
}

RetrievalResult retrieval_top1(const Matrix<double>& image_emb, const std::vector<CaptionTokens>& image_captions,
                               const Matrix<double>& caption_emb, const std::vector<CaptionTokens>& candidates) {
  if (image_emb.rows() != static_cast<Index>(image_captions.size()) ||
      caption_emb.rows() != static_cast<Index>(candidates.size()) || image_emb.cols() != caption_emb.cols()) {
    throw std::invalid_argument("retrieval_top1: inconsistent inputs");
  }
  RetrievalResult r;
  r.candidates = static_cast<int>(candidates.size());
  if (image_emb.rows() == 0 || caption_emb.rows() == 0) return r;
  const Matrix<double> sim = image_emb * caption_emb.transpose();
  int i2t = 0;
  for (Index i = 0; i < sim.rows(); ++i) {
    Index best = 0;
    sim.row(i).maxCoeff(&best);
    i2t += candidates[static_cast<std::size_t>(best)] == image_captions[static_cast<std::size_t>(i)] ? 1 : 0;
  }
  int t2i = 0;
  for (Index j = 0; j < sim.cols(); ++j) {
    Index best = 0;
    sim.col(j).maxCoeff(&best);
    t2i += image_captions[static_cast<std::size_t>(best)] == candidates[static_cast<std::size_t>(j)] ? 1 : 0;
  }
  r.image_to_text = static_cast<double>(i2t) / static_cast<double>(sim.rows());
  r.text_to_image = static_cast<double>(t2i) / static_cast<double>(sim.cols());
  return r;
}

EvalSet make_eval_set(std::uint64_t seed, Split split, std::size_t count, int image_side,
                      const NormalizationStats& stats) {
  EvalSet set;
  set.samples = dataset(seed, count, split, image_side);
  for (const auto& s : set.samples) {
    set.grids.push_back(tokenize(s.image, stats).values);
    set.captions.push_back(s.caption);
  }
  return set;
}

const RetrievalResult& EvalReport::at_ratio(double ratio) const {
  for (const auto& [r, res] : retrieval) {
    if (r == ratio) return res;
  }
  throw std::out_of_range("no retrieval result at mask ratio " + std::to_string(ratio));
}

EvalReport evaluate(const Model<float>& model, const NormalizationStats& stats, const TrainConfig& train,
                    Split split, const EvalConfig& config) {
  config.validate();
  const std::string split_name = split == Split::train ? "train" : "val";
  const EvalSet probe_train = make_eval_set(config.seed, Split::train,
                                            static_cast<std::size_t>(config.probe_train_samples), train.image_side, stats);
  const EvalSet test = make_eval_set(config.seed, split, static_cast<std::size_t>(config.probe_test_samples),
                                     train.image_side, stats);
  auto shapes = [](const EvalSet& s) {
    std::vector<int> y;
    for (const auto& x : s.samples) y.push_back(static_cast<int>(x.spec.shape));
    return y;
  };
  EvalReport report;
  const ProbeResult probe =
      linear_probe(pooled_features(model, probe_train.grids), shapes(probe_train), pooled_features(model, test.grids),
                   shapes(test), kShapeCount, {config.probe_iterations, config.probe_l2});
  report.probe_accuracy = probe.accuracy;
  report.rows.push_back({"probe_shape_accuracy", split_name, 0.0, probe.accuracy, config.seed});

  const EvalSet ret = make_eval_set(config.seed, split, static_cast<std::size_t>(config.retrieval_samples),
                                    train.image_side, stats);
  const std::vector<CaptionTokens> candidates = distinct_captions(ret.captions);
  const Matrix<double> text = caption_embeddings(model, candidates);
  report.chance = 1.0 / static_cast<double>(candidates.size());
  report.rows.push_back({"retrieval_chance", split_name, 0.0, report.chance, config.seed});
  for (double ratio : config.mask_grid) {
    const RetrievalResult r = retrieval_top1(image_embeddings(model, ret.grids, ratio, config.seed), ret.captions,
                                             text, candidates);
    report.retrieval.emplace_back(ratio, r);
    report.rows.push_back({"retrieval_i2t", split_name, ratio, r.image_to_text, config.seed});
    report.rows.push_back({"retrieval_t2i", split_name, ratio, r.text_to_image, config.seed});
  }

  report.diffusion_loss =
      validation_loss(model, ret.grids, ret.captions, training_schedule(train), config.seed, train.n_noise);
  report.rows.push_back({"diffusion_loss", split_name, 1.0, report.diffusion_loss, config.seed});
  return report;
}

void write_eval_csv(const std::filesystem::path& path, const std::vector<EvalRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "metric,split,mask_ratio,value,seed\n";
  out << std::setprecision(10);
  for (const auto& r : rows) out << r.metric << ',' << r.split << ',' << r.mask_ratio << ',' << r.value << ',' << r.seed << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::string eval_summary(const std::vector<EvalRow>& rows) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(4);
  for (const auto& r : rows) {
    s << r.metric << " [" << r.split << ", mask " << std::setprecision(2) << r.mask_ratio << std::setprecision(4)
      << "] = " << r.value << '\n';
  }
  return s.str();
}

}  // namespace dream
