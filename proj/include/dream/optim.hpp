#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "dream/rng.hpp"
#include "dream/tensor.hpp"

namespace dream {

template <typename Scalar>
struct Parameter {
  std::string name;
  Tensor<Scalar> tensor;
  bool decay = true;  // subject to decoupled weight decay
};

/// Named, ordered parameter set. Registration order is the serialization
/// and optimizer order.
template <typename Scalar>
class ParamStore {
 public:
  Tensor<Scalar> add(const std::string& name, Matrix<Scalar> init, bool decay) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
    index_[name] = params_.size();
    params_.push_back({name, Tensor<Scalar>(std::move(init), /*requires_grad=*/true), decay});
    return params_.back().tensor;
  }

  Tensor<Scalar> normal(const std::string& name, Index rows, Index cols, double stddev, Rng& rng, bool decay = true) {
    Matrix<Scalar> m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(stddev * rng.normal());
    return add(name, std::move(m), decay);
  }

  Tensor<Scalar> constant(const std::string& name, Index rows, Index cols, double value, bool decay = false) {
    return add(name, Matrix<Scalar>::Constant(rows, cols, static_cast<Scalar>(value)), decay);
  }

  std::vector<Parameter<Scalar>>& all() { return params_; }
  const std::vector<Parameter<Scalar>>& all() const { return params_; }
  std::size_t size() const { return params_.size(); }

  const Parameter<Scalar>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return params_[it->second];
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Index element_count() const {
    Index n = 0;
    for (const auto& p : params_) n += p.tensor.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  std::vector<Matrix<Scalar>> snapshot() const {
    std::vector<Matrix<Scalar>> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.tensor.value());
    return out;
  }

  void assign(const std::vector<Matrix<Scalar>>& values) {
    if (values.size() != params_.size()) throw std::invalid_argument("assign: parameter count mismatch");
    for (std::size_t i = 0; i < values.size(); ++i) {
      auto& dst = params_[i].tensor.mutable_value();
      if (dst.rows() != values[i].rows() || dst.cols() != values[i].cols()) {
        throw std::invalid_argument("assign: shape mismatch for " + params_[i].name);
      }
      dst = values[i];
    }
  }

 private:
  std::vector<Parameter<Scalar>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.04;
  double clip_norm = 3.0;  // global gradient norm cap; <= 0 disables

  bool operator==(const AdamWConfig&) const = default;
};

class NonFiniteGradient : public std::runtime_error {
 public:
  explicit NonFiniteGradient(const std::string& parameter)
      : std::runtime_error("non-finite gradient in parameter " + parameter), parameter_(parameter) {}
  const std::string& parameter() const { return parameter_; }

 private:
  std::string parameter_;
};

template <typename Scalar>
struct OptimState {
  std::vector<Matrix<Scalar>> first_moment;
  std::vector<Matrix<Scalar>> second_moment;
  std::int64_t step = 0;
  AdamWConfig config;

  static OptimState zeros_like(const ParamStore<Scalar>& params, AdamWConfig config) {
    OptimState s;
    s.config = config;
    for (const auto& p : params.all()) {
      s.first_moment.push_back(Matrix<Scalar>::Zero(p.tensor.rows(), p.tensor.cols()));
      s.second_moment.push_back(Matrix<Scalar>::Zero(p.tensor.rows(), p.tensor.cols()));
    }
    return s;
  }
};

/// Global L2 norm over all parameter gradients (accumulated in double).
template <typename Scalar>
double global_grad_norm(const ParamStore<Scalar>& params) {
  double sq = 0.0;
  for (const auto& p : params.all()) {
    if (p.tensor.has_grad()) sq += p.tensor.grad().template cast<double>().squaredNorm();
  }
  return std::sqrt(sq);
}

/// One AdamW update with bias-corrected moments, decoupled weight decay and an
/// optional global-norm clip. Returns the pre-clip gradient norm. A non-finite
/// gradient aborts before any parameter or moment is touched.
template <typename Scalar>
double adamw_step(ParamStore<Scalar>& params, OptimState<Scalar>& state, double lr) {
  auto& ps = params.all();
  if (state.first_moment.size() != ps.size()) throw std::invalid_argument("adamw_step: state/parameter mismatch");
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const auto& value = ps[i].tensor.value();
    if (state.first_moment[i].rows() != value.rows() || state.first_moment[i].cols() != value.cols()) {
      throw std::invalid_argument("adamw_step: moment shape mismatch for " + ps[i].name);
    }
    if (ps[i].tensor.has_grad() && !ps[i].tensor.grad().allFinite()) throw NonFiniteGradient(ps[i].name);
  }

  const AdamWConfig& c = state.config;
  const double norm = global_grad_norm(params);
  const double clip = (c.clip_norm > 0.0 && norm > c.clip_norm) ? c.clip_norm / (norm + 1e-6) : 1.0;

  state.step += 1;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  const auto b1 = static_cast<Scalar>(c.beta1);
  const auto b2 = static_cast<Scalar>(c.beta2);

  for (std::size_t i = 0; i < ps.size(); ++i) {
    auto& theta = ps[i].tensor.mutable_value();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    if (ps[i].tensor.has_grad()) {
      auto g = (ps[i].tensor.grad().array() * static_cast<Scalar>(clip));
      m.array() = b1 * m.array() + (Scalar(1) - b1) * g;
      v.array() = b2 * v.array() + (Scalar(1) - b2) * g.square();
    } else {
      m.array() *= b1;
      v.array() *= b2;
    }
    if (ps[i].decay && c.weight_decay != 0.0) theta *= static_cast<Scalar>(1.0 - lr * c.weight_decay);
    const auto step_size = static_cast<Scalar>(lr / bc1);
    const auto denom_scale = static_cast<Scalar>(1.0 / std::sqrt(bc2));
    theta.array() -= step_size * m.array() / (v.array().sqrt() * denom_scale + static_cast<Scalar>(c.eps));
  }
  return norm;
}

/// ema <- decay * ema + (1 - decay) * params, elementwise.
template <typename Scalar>
void ema_update(std::vector<Matrix<Scalar>>& ema, const ParamStore<Scalar>& params, double decay) {
  if (!(decay >= 0.0 && decay <= 1.0)) throw std::invalid_argument("ema_update: decay must lie in [0, 1]");
  const auto& ps = params.all();
  if (ema.size() != ps.size()) throw std::invalid_argument("ema_update: parameter count mismatch");
  const auto d = static_cast<Scalar>(decay);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const auto& value = ps[i].tensor.value();
    if (ema[i].rows() != value.rows() || ema[i].cols() != value.cols()) {
      throw std::invalid_argument("ema_update: shape mismatch for " + ps[i].name);
    }
    if (decay == 1.0) continue;
    if (decay == 0.0) {
      ema[i] = value;
      continue;
    }
    ema[i] = d * ema[i] + (Scalar(1) - d) * value;
  }
}

}  // namespace dream
