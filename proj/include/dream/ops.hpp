#pragma once

// Differentiable primitives on rank-2 tensors. Reductions run in a fixed loop
// order, so results are bit-reproducible for a fixed worker count.

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "dream/parallel.hpp"
#include "dream/tensor.hpp"

namespace dream {

namespace detail {

inline void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

template <typename Scalar>
bool is_row_of(const Tensor<Scalar>& row, const Tensor<Scalar>& full) {
  return row.rows() == 1 && row.cols() == full.cols();
}

template <typename Scalar>
void accumulate(const Tensor<Scalar>& t, const auto& g) {
  if (t.requires_grad()) t.node()->grad_buffer() += g;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic. The second operand may be a 1 x cols row that is
// broadcast over every row of the first.

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  using Mat = Matrix<Scalar>;
  if (a.shape() == b.shape()) {
    return make_op<Scalar>(a.value() + b.value(), {&a, &b}, [a, b](const Mat& g) {
      detail::accumulate(a, g);
      detail::accumulate(b, g);
    });
  }
  detail::require(detail::is_row_of(b, a), "add: shape mismatch");
  Mat v = a.value().rowwise() + b.value().row(0);
  return make_op<Scalar>(std::move(v), {&a, &b}, [a, b](const Mat& g) {
    detail::accumulate(a, g);
    if (b.requires_grad()) b.node()->grad_buffer().row(0) += g.colwise().sum();
  });
}

template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  using Mat = Matrix<Scalar>;
  if (a.shape() == b.shape()) {
    return make_op<Scalar>(a.value() - b.value(), {&a, &b}, [a, b](const Mat& g) {
      detail::accumulate(a, g);
      if (b.requires_grad()) b.node()->grad_buffer() -= g;
    });
  }
  detail::require(detail::is_row_of(b, a), "sub: shape mismatch");
  Mat v = a.value().rowwise() - b.value().row(0);
  return make_op<Scalar>(std::move(v), {&a, &b}, [a, b](const Mat& g) {
    detail::accumulate(a, g);
    if (b.requires_grad()) b.node()->grad_buffer().row(0) -= g.colwise().sum();
  });
}

/// Elementwise product; `b` may also be a 1x1 scalar tensor.
template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  using Mat = Matrix<Scalar>;
  if (a.shape() == b.shape()) {
    Mat v = a.value().cwiseProduct(b.value());
    return make_op<Scalar>(std::move(v), {&a, &b}, [a, b](const Mat& g) {
      if (a.requires_grad()) a.node()->grad_buffer() += g.cwiseProduct(b.value());
      if (b.requires_grad()) b.node()->grad_buffer() += g.cwiseProduct(a.value());
    });
  }
  if (b.rows() == 1 && b.cols() == 1) {
    Mat v = a.value() * b.value()(0, 0);
    return make_op<Scalar>(std::move(v), {&a, &b}, [a, b](const Mat& g) {
      if (a.requires_grad()) a.node()->grad_buffer() += g * b.value()(0, 0);
      if (b.requires_grad()) b.node()->grad_buffer()(0, 0) += g.cwiseProduct(a.value()).sum();
    });
  }
  detail::require(detail::is_row_of(b, a), "mul: shape mismatch");
  Mat v = (a.value().array().rowwise() * b.value().row(0).array()).matrix();
  return make_op<Scalar>(std::move(v), {&a, &b}, [a, b](const Mat& g) {
    if (a.requires_grad()) {
      a.node()->grad_buffer() += (g.array().rowwise() * b.value().row(0).array()).matrix();
    }
    if (b.requires_grad()) b.node()->grad_buffer().row(0) += g.cwiseProduct(a.value()).colwise().sum();
  });
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar factor) {
  using Mat = Matrix<Scalar>;
  return make_op<Scalar>(a.value() * factor, {&a},
                         [a, factor](const Mat& g) { detail::accumulate(a, g * factor); });
}

template <typename Scalar>
Tensor<Scalar> square(const Tensor<Scalar>& a) {
  return mul(a, a);
}

// ---------------------------------------------------------------------------
// Linear algebra and layout.

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  using Mat = Matrix<Scalar>;
  detail::require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  Mat v(a.rows(), b.cols());
  v.noalias() = a.value() * b.value();
  return make_op<Scalar>(std::move(v), {&a, &b}, [a, b](const Mat& g) {
    if (a.requires_grad()) a.node()->grad_buffer().noalias() += g * b.value().transpose();
    if (b.requires_grad()) b.node()->grad_buffer().noalias() += a.value().transpose() * g;
  });
}

/// a * b^T without materializing the transpose.
template <typename Scalar>
Tensor<Scalar> matmul_nt(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  using Mat = Matrix<Scalar>;
  detail::require(a.cols() == b.cols(), "matmul_nt: inner dimensions differ");
  Mat v(a.rows(), b.rows());
  v.noalias() = a.value() * b.value().transpose();
  return make_op<Scalar>(std::move(v), {&a, &b}, [a, b](const Mat& g) {
    if (a.requires_grad()) a.node()->grad_buffer().noalias() += g * b.value();
    if (b.requires_grad()) b.node()->grad_buffer().noalias() += g.transpose() * a.value();
  });
}

/// x * W + b with a row bias; equivalent to add(matmul(x, W), b).
template <typename Scalar>
Tensor<Scalar> affine(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& b) {
  using Mat = Matrix<Scalar>;
  detail::require(x.cols() == w.rows(), "affine: inner dimensions differ");
  detail::require(b.rows() == 1 && b.cols() == w.cols(), "affine: bias shape");
  Mat v(x.rows(), w.cols());
  v.noalias() = x.value() * w.value();
  v.rowwise() += b.value().row(0);
  return make_op<Scalar>(std::move(v), {&x, &w, &b}, [x, w, b](const Mat& g) {
    if (x.requires_grad()) x.node()->grad_buffer().noalias() += g * w.value().transpose();
    if (w.requires_grad()) w.node()->grad_buffer().noalias() += x.value().transpose() * g;
    if (b.requires_grad()) b.node()->grad_buffer().row(0) += g.colwise().sum();
  });
}

template <typename Scalar>
Tensor<Scalar> transpose(const Tensor<Scalar>& a) {
  using Mat = Matrix<Scalar>;
  Mat v = a.value().transpose();
  return make_op<Scalar>(std::move(v), {&a},
                         [a](const Mat& g) { detail::accumulate(a, g.transpose()); });
}

/// Row-major reinterpretation of the values with a new shape.
template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& a, Index rows, Index cols) {
  using Mat = Matrix<Scalar>;
  detail::require(rows * cols == a.size(), "reshape: element count changes");
  Mat v = Eigen::Map<const Mat>(a.value().data(), rows, cols);
  return make_op<Scalar>(std::move(v), {&a}, [a](const Mat& g) {
    detail::accumulate(a, Eigen::Map<const Mat>(g.data(), a.rows(), a.cols()));
  });
}

template <typename Scalar>
Tensor<Scalar> concat_rows(const std::vector<Tensor<Scalar>>& parts) {
  using Mat = Matrix<Scalar>;
  detail::require(!parts.empty(), "concat_rows: no inputs");
  const Index cols = parts.front().cols();
  Index rows = 0;
  for (const auto& p : parts) {
    detail::require(p.cols() == cols, "concat_rows: column counts differ");
    rows += p.rows();
  }
  Mat v(rows, cols);
  Index at = 0;
  std::vector<const Tensor<Scalar>*> inputs;
  for (const auto& p : parts) {
    v.middleRows(at, p.rows()) = p.value();
    at += p.rows();
    inputs.push_back(&p);
  }
  return make_op<Scalar>(std::move(v), inputs, [parts](const Mat& g) {
    Index offset = 0;
    for (const auto& p : parts) {
      if (p.requires_grad()) p.node()->grad_buffer() += g.middleRows(offset, p.rows());
      offset += p.rows();
    }
  });
}

template <typename Scalar>
Tensor<Scalar> slice_rows(const Tensor<Scalar>& a, Index begin, Index count) {
  using Mat = Matrix<Scalar>;
  detail::require(begin >= 0 && count >= 0 && begin + count <= a.rows(), "slice_rows: out of range");
  Mat v = a.value().middleRows(begin, count);
  return make_op<Scalar>(std::move(v), {&a}, [a, begin, count](const Mat& g) {
    if (a.requires_grad()) a.node()->grad_buffer().middleRows(begin, count) += g;
  });
}

/// out.row(i) = a.row(index[i]); repeated indices accumulate gradient.
template <typename Scalar>
Tensor<Scalar> gather_rows(const Tensor<Scalar>& a, std::vector<Index> index) {
  using Mat = Matrix<Scalar>;
  Mat v(static_cast<Index>(index.size()), a.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    detail::require(index[i] >= 0 && index[i] < a.rows(), "gather_rows: index out of range");
    v.row(static_cast<Index>(i)) = a.value().row(index[i]);
  }
  return make_op<Scalar>(std::move(v), {&a}, [a, index = std::move(index)](const Mat& g) {
    if (!a.requires_grad()) return;
    auto& ga = a.node()->grad_buffer();
    for (std::size_t i = 0; i < index.size(); ++i) ga.row(index[i]) += g.row(static_cast<Index>(i));
  });
}

/// out(i, 0) = a(i, column[i]).
template <typename Scalar>
Tensor<Scalar> pick_cols(const Tensor<Scalar>& a, std::vector<Index> column) {
  using Mat = Matrix<Scalar>;
  detail::require(static_cast<Index>(column.size()) == a.rows(), "pick_cols: one column per row");
  Mat v(a.rows(), 1);
  for (Index i = 0; i < a.rows(); ++i) {
    detail::require(column[i] >= 0 && column[i] < a.cols(), "pick_cols: column out of range");
    v(i, 0) = a.value()(i, column[i]);
  }
  return make_op<Scalar>(std::move(v), {&a}, [a, column = std::move(column)](const Mat& g) {
    if (!a.requires_grad()) return;
    auto& ga = a.node()->grad_buffer();
    for (Index i = 0; i < ga.rows(); ++i) ga(i, column[i]) += g(i, 0);
  });
}

// ---------------------------------------------------------------------------
// Nonlinearities.

template <typename Scalar>
Tensor<Scalar> exp(const Tensor<Scalar>& a) {
  using Mat = Matrix<Scalar>;
  Mat v = a.value().array().exp().matrix();
  return make_op<Scalar>(Mat(v), {&a}, [a, v](const Mat& g) { detail::accumulate(a, g.cwiseProduct(v)); });
}

/// min(a, hi); the gradient is blocked where the clamp is active.
template <typename Scalar>
Tensor<Scalar> clamp_max(const Tensor<Scalar>& a, Scalar hi) {
  using Mat = Matrix<Scalar>;
  Mat v = a.value().cwiseMin(hi);
  return make_op<Scalar>(std::move(v), {&a}, [a, hi](const Mat& g) {
    if (!a.requires_grad()) return;
    a.node()->grad_buffer() += (a.value().array() <= hi).select(g.array(), Scalar(0)).matrix();
  });
}

/// tanh-approximated GELU.
template <typename Scalar>
Tensor<Scalar> gelu(const Tensor<Scalar>& a) {
  using Mat = Matrix<Scalar>;
  const Scalar c = Scalar(0.7978845608028654);  // sqrt(2/pi)
  const Scalar k = Scalar(0.044715);
  auto x = a.value().array();
  Mat inner = (c * (x + k * x.cube())).matrix();
  Mat th = inner.array().tanh().matrix();
  Mat v = (Scalar(0.5) * x * (Scalar(1) + th.array())).matrix();
  return make_op<Scalar>(std::move(v), {&a}, [a, th, c, k](const Mat& g) {
    if (!a.requires_grad()) return;
    auto x = a.value().array();
    auto t = th.array();
    auto d = Scalar(0.5) * (Scalar(1) + t) +
             Scalar(0.5) * x * (Scalar(1) - t.square()) * c * (Scalar(1) + Scalar(3) * k * x.square());
    a.node()->grad_buffer().array() += g.array() * d;
  });
}

template <typename Scalar>
Tensor<Scalar> silu(const Tensor<Scalar>& a) {
  using Mat = Matrix<Scalar>;
  Mat sig = (Scalar(1) / (Scalar(1) + (-a.value().array()).exp())).matrix();
  Mat v = a.value().cwiseProduct(sig);
  return make_op<Scalar>(std::move(v), {&a}, [a, sig](const Mat& g) {
    if (!a.requires_grad()) return;
    auto s = sig.array();
    a.node()->grad_buffer().array() += g.array() * s * (Scalar(1) + a.value().array() * (Scalar(1) - s));
  });
}

template <typename Scalar>
Tensor<Scalar> softmax_rows(const Tensor<Scalar>& a) {
  using Mat = Matrix<Scalar>;
  Mat v = a.value();
  for (Index i = 0; i < v.rows(); ++i) {
    auto row = v.row(i);
    row.array() -= row.maxCoeff();
    row = row.array().exp().matrix();
    row /= row.sum();
  }
  return make_op<Scalar>(Mat(v), {&a}, [a, v](const Mat& g) {
    if (!a.requires_grad()) return;
    Mat dot = g.cwiseProduct(v).rowwise().sum();
    a.node()->grad_buffer().array() += v.array() * (g.array().colwise() - dot.col(0).array());
  });
}

template <typename Scalar>
Tensor<Scalar> log_softmax_rows(const Tensor<Scalar>& a) {
  using Mat = Matrix<Scalar>;
  Mat v = a.value();
  for (Index i = 0; i < v.rows(); ++i) {
    auto row = v.row(i);
    const Scalar m = row.maxCoeff();
    const Scalar lse = m + std::log((row.array() - m).exp().sum());
    row.array() -= lse;
  }
  return make_op<Scalar>(Mat(v), {&a}, [a, v](const Mat& g) {
    if (!a.requires_grad()) return;
    Mat total = g.rowwise().sum();
    a.node()->grad_buffer().array() -= v.array().exp().colwise() * total.col(0).array();
    a.node()->grad_buffer() += g;
  });
}

/// Row-wise layer normalization with learned gain and bias rows.
template <typename Scalar>
Tensor<Scalar> layer_norm(const Tensor<Scalar>& a, const Tensor<Scalar>& gamma, const Tensor<Scalar>& beta,
                          Scalar eps = Scalar(1e-6)) {
  using Mat = Matrix<Scalar>;
  detail::require(detail::is_row_of(gamma, a) && detail::is_row_of(beta, a), "layer_norm: affine shape");
  const Index n = a.cols();
  Mat xhat(a.rows(), n);
  Matrix<Scalar> rstd(a.rows(), 1);
  for (Index i = 0; i < a.rows(); ++i) {
    auto row = a.value().row(i);
    const Scalar mean = row.sum() / Scalar(n);
    auto centered = (row.array() - mean).matrix();
    const Scalar var = centered.squaredNorm() / Scalar(n);
    rstd(i, 0) = Scalar(1) / std::sqrt(var + eps);
    xhat.row(i) = centered * rstd(i, 0);
  }
  Mat v = (xhat.array().rowwise() * gamma.value().row(0).array()).matrix();
  v.rowwise() += beta.value().row(0);
  return make_op<Scalar>(std::move(v), {&a, &gamma, &beta}, [a, gamma, beta, xhat, rstd, n](const Mat& g) {
    if (gamma.requires_grad()) gamma.node()->grad_buffer().row(0) += g.cwiseProduct(xhat).colwise().sum();
    if (beta.requires_grad()) beta.node()->grad_buffer().row(0) += g.colwise().sum();
    if (!a.requires_grad()) return;
    Mat dxhat = (g.array().rowwise() * gamma.value().row(0).array()).matrix();
    auto& ga = a.node()->grad_buffer();
    for (Index i = 0; i < ga.rows(); ++i) {
      const Scalar mean_d = dxhat.row(i).sum() / Scalar(n);
      const Scalar mean_dx = dxhat.row(i).dot(xhat.row(i)) / Scalar(n);
      ga.row(i).array() += rstd(i, 0) * (dxhat.row(i).array() - mean_d - xhat.row(i).array() * mean_dx);
    }
  });
}

/// Each row divided by its Euclidean norm.
template <typename Scalar>
Tensor<Scalar> l2_normalize_rows(const Tensor<Scalar>& a, Scalar eps = Scalar(1e-12)) {
  using Mat = Matrix<Scalar>;
  Matrix<Scalar> norm = a.value().rowwise().norm().cwiseMax(eps);
  Mat v = (a.value().array().colwise() / norm.col(0).array()).matrix();
  return make_op<Scalar>(Mat(v), {&a}, [a, v, norm](const Mat& g) {
    if (!a.requires_grad()) return;
    Mat dot = g.cwiseProduct(v).rowwise().sum();
    Mat d = g - (v.array().colwise() * dot.col(0).array()).matrix();
    a.node()->grad_buffer().array() += d.array().colwise() / norm.col(0).array();
  });
}

// ---------------------------------------------------------------------------
// Reductions.

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a) {
  using Mat = Matrix<Scalar>;
  Mat v(1, 1);
  v(0, 0) = a.value().sum();
  return make_op<Scalar>(std::move(v), {&a}, [a](const Mat& g) {
    if (a.requires_grad()) a.node()->grad_buffer().array() += g(0, 0);
  });
}

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& a) {
  detail::require(a.size() > 0, "mean: empty tensor");
  return scale(sum(a), Scalar(1) / Scalar(a.size()));
}

/// Per-row sums as a column (rows x 1).
template <typename Scalar>
Tensor<Scalar> row_sums(const Tensor<Scalar>& a) {
  using Mat = Matrix<Scalar>;
  Mat v = a.value().rowwise().sum();
  return make_op<Scalar>(std::move(v), {&a}, [a](const Mat& g) {
    if (a.requires_grad()) a.node()->grad_buffer().colwise() += g.col(0);
  });
}

/// Column means over all rows (1 x cols).
template <typename Scalar>
Tensor<Scalar> mean_rows(const Tensor<Scalar>& a) {
  using Mat = Matrix<Scalar>;
  detail::require(a.rows() > 0, "mean_rows: no rows");
  const Scalar inv = Scalar(1) / Scalar(a.rows());
  Mat v = a.value().colwise().sum() * inv;
  return make_op<Scalar>(std::move(v), {&a}, [a, inv](const Mat& g) {
    if (a.requires_grad()) a.node()->grad_buffer().rowwise() += g.row(0) * inv;
  });
}

/// Means over consecutive row segments [offsets[s], offsets[s+1]).
template <typename Scalar>
Tensor<Scalar> segment_mean(const Tensor<Scalar>& a, std::vector<Index> offsets) {
  using Mat = Matrix<Scalar>;
  detail::require(offsets.size() >= 2 && offsets.front() == 0 && offsets.back() == a.rows(),
                  "segment_mean: offsets must span all rows");
  const Index segments = static_cast<Index>(offsets.size()) - 1;
  Mat v(segments, a.cols());
  for (Index s = 0; s < segments; ++s) {
    const Index len = offsets[s + 1] - offsets[s];
    detail::require(len > 0, "segment_mean: empty segment");
    v.row(s) = a.value().middleRows(offsets[s], len).colwise().sum() / Scalar(len);
  }
  return make_op<Scalar>(std::move(v), {&a}, [a, offsets = std::move(offsets)](const Mat& g) {
    if (!a.requires_grad()) return;
    auto& ga = a.node()->grad_buffer();
    for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
      const Index len = offsets[s + 1] - offsets[s];
      ga.middleRows(offsets[s], len).rowwise() += g.row(static_cast<Index>(s)) / Scalar(len);
    }
  });
}

// ---------------------------------------------------------------------------
// Multi-head scaled dot-product attention over ragged segments: queries in
// segment s attend only to keys/values of segment s. Softmax, matmul and
// transpose fused; no masking inside a segment (bidirectional).

template <typename Scalar>
Tensor<Scalar> segmented_attention(const Tensor<Scalar>& q, const Tensor<Scalar>& k, const Tensor<Scalar>& v,
                                   std::vector<Index> q_offsets, std::vector<Index> kv_offsets, int heads) {
  using Mat = Matrix<Scalar>;
  detail::require(q.cols() == k.cols() && k.shape() == v.shape(), "attention: width mismatch");
  detail::require(heads > 0 && q.cols() % heads == 0, "attention: width not divisible by heads");
  detail::require(q_offsets.size() == kv_offsets.size() && q_offsets.size() >= 2, "attention: segment count");
  detail::require(q_offsets.back() == q.rows() && kv_offsets.back() == k.rows(), "attention: offsets span");
  const Index segments = static_cast<Index>(q_offsets.size()) - 1;
  const Index dh = q.cols() / heads;
  const Scalar inv_sqrt = Scalar(1) / std::sqrt(Scalar(dh));

  Mat out(q.rows(), q.cols());
  // probs[s * heads + h] holds the attention weights of one segment and head.
  auto probs = std::make_shared<std::vector<Mat>>(static_cast<std::size_t>(segments * heads));
  parallel_for(static_cast<std::size_t>(segments), [&](std::size_t si) {
    const Index s = static_cast<Index>(si);
    const Index q0 = q_offsets[s], qn = q_offsets[s + 1] - q0;
    const Index k0 = kv_offsets[s], kn = kv_offsets[s + 1] - k0;
    if (qn == 0) return;
    if (kn == 0) throw std::invalid_argument("attention: queries without keys");
    for (int h = 0; h < heads; ++h) {
      const Index c0 = h * dh;
      Mat scores(qn, kn);
      scores.noalias() = q.value().block(q0, c0, qn, dh) * k.value().block(k0, c0, kn, dh).transpose();
      scores *= inv_sqrt;
      for (Index i = 0; i < qn; ++i) {
        auto row = scores.row(i);
        row.array() -= row.maxCoeff();
        row = row.array().exp().matrix();
        row /= row.sum();
      }
      out.block(q0, c0, qn, dh).noalias() = scores * v.value().block(k0, c0, kn, dh);
      (*probs)[static_cast<std::size_t>(s * heads + h)] = std::move(scores);
    }
  });

  return make_op<Scalar>(
      std::move(out), {&q, &k, &v},
      [q, k, v, probs, q_offsets = std::move(q_offsets), kv_offsets = std::move(kv_offsets), heads, dh,
       inv_sqrt](const Mat& g) {
        const Index segments = static_cast<Index>(q_offsets.size()) - 1;
        Mat* gq = q.requires_grad() ? &q.node()->grad_buffer() : nullptr;
        Mat* gk = k.requires_grad() ? &k.node()->grad_buffer() : nullptr;
        Mat* gv = v.requires_grad() ? &v.node()->grad_buffer() : nullptr;
        // Segments own disjoint row blocks, so workers never write the same rows.
        parallel_for(static_cast<std::size_t>(segments), [&](std::size_t si) {
          const Index s = static_cast<Index>(si);
          const Index q0 = q_offsets[s], qn = q_offsets[s + 1] - q0;
          const Index k0 = kv_offsets[s], kn = kv_offsets[s + 1] - k0;
          if (qn == 0) return;
          for (int h = 0; h < heads; ++h) {
            const Index c0 = h * dh;
            const Mat& p = (*probs)[static_cast<std::size_t>(s * heads + h)];
            auto go = g.block(q0, c0, qn, dh);
            if (gv) gv->block(k0, c0, kn, dh).noalias() += p.transpose() * go;
            Mat dp(qn, kn);
            dp.noalias() = go * v.value().block(k0, c0, kn, dh).transpose();
            Mat rowdot = dp.cwiseProduct(p).rowwise().sum();
            Mat ds = (p.array() * (dp.array().colwise() - rowdot.col(0).array())).matrix() * inv_sqrt;
            if (gq) gq->block(q0, c0, qn, dh).noalias() += ds * k.value().block(k0, c0, kn, dh);
            if (gk) gk->block(k0, c0, kn, dh).noalias() += ds.transpose() * q.value().block(q0, c0, qn, dh);
          }
        });
      });
}

}  // namespace dream
