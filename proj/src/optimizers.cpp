#include "nst/optimizers.hpp"

#include <cmath>
#include <limits>

namespace nst {

const char* to_string(OptimizerKind kind) {
  return kind == OptimizerKind::Adam ? "adam" : "lbfgs";
}

const char* to_string(StepStatus status) {
  switch (status) {
    case StepStatus::Progress: return "progress";
    case StepStatus::Converged: return "converged";
    case StepStatus::NoProgress: return "no-progress";
  }
  return "unknown";
}

double OptimizerConfig::lr() const {
  if (learning_rate) return *learning_rate;
  return kind == OptimizerKind::Adam ? 0.02 : 1.0;
}

std::vector<std::string> OptimizerConfig::validate() const {
  std::vector<std::string> out;
  if (!(lr() > 0) || !std::isfinite(lr())) out.push_back("optimizer.learning_rate must be positive");
  if (!(beta1 >= 0 && beta1 < 1)) out.push_back("optimizer.beta1 must lie in [0, 1)");
  if (!(beta2 >= 0 && beta2 < 1)) out.push_back("optimizer.beta2 must lie in [0, 1)");
  if (!(adam_epsilon > 0)) out.push_back("optimizer.adam_epsilon must be positive");
  if (history < 1) out.push_back("optimizer.history must be at least 1");
  if (max_line_search < 1) out.push_back("optimizer.max_line_search must be at least 1");
  if (!(armijo > 0 && armijo < 1)) out.push_back("optimizer.armijo must lie in (0, 1)");
  if (!(backtrack > 0 && backtrack < 1)) out.push_back("optimizer.backtrack must lie in (0, 1)");
  if (max_iterations < 0) out.push_back("optimizer.max_iterations must be non-negative");
  if (!(tolerance >= 0)) out.push_back("optimizer.tolerance must be non-negative");
  return out;
}

template <typename Scalar>
void adam_step(AdamState<Scalar>& state, Eigen::Ref<Vec<Scalar>> params,
               const Eigen::Ref<const Vec<Scalar>>& grad, const OptimizerConfig& config) {
  if (params.size() != grad.size()) {
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " parameters but " +
                     std::to_string(grad.size()) + " gradient values");
  }
  if (state.t == 0) {
    state.m = Vec<Scalar>::Zero(params.size());
    state.v = Vec<Scalar>::Zero(params.size());
  } else if (state.m.size() != params.size()) {
    throw ShapeError("adam_step: state was created for a different parameter count");
  }
  const Scalar b1 = Scalar(config.beta1), b2 = Scalar(config.beta2);
  state.t += 1;
  state.m = b1 * state.m + (Scalar(1) - b1) * grad;
  state.v = b2 * state.v + (Scalar(1) - b2) * grad.cwiseProduct(grad);
  const Scalar c1 = Scalar(1) - Scalar(std::pow(config.beta1, double(state.t)));
  const Scalar c2 = Scalar(1) - Scalar(std::pow(config.beta2, double(state.t)));
  const Scalar lr = Scalar(config.lr()), eps = Scalar(config.adam_epsilon);
  for (Index i = 0; i < params.size(); ++i) {
    const Scalar m_hat = state.m[i] / c1;
    const Scalar v_hat = state.v[i] / c2;
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
  }
}

template <typename Scalar>
void adam_step(AdamState<Scalar>& state, BasicTensor<Scalar>& params,
               const BasicTensor<Scalar>& grad, const OptimizerConfig& config) {
  if (!(params.shape() == grad.shape())) {
    throw ShapeError("adam_step: parameter shape " + params.shape().str() +
                     " differs from gradient shape " + grad.shape().str());
  }
  Eigen::Map<Vec<Scalar>> p(params.data(), params.size());
  Eigen::Map<const Vec<Scalar>> g(grad.data(), grad.size());
  adam_step<Scalar>(state, p, g, config);
}

namespace {

template <typename Scalar>
bool finite(Scalar v) {
  return std::isfinite(v);
}

template <typename Scalar>
bool all_zero(const Vec<Scalar>& v) {
  return (v.array() == Scalar(0)).all();
}

// Sums in index order so results do not depend on vectorization.
template <typename Scalar>
Scalar dot(const Vec<Scalar>& a, const Vec<Scalar>& b) {
  Scalar acc = 0;
  for (Index i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace

template <typename Scalar>
StepStatus lbfgs_step(LbfgsState<Scalar>& state, Vec<Scalar>& x, const LossGradFn<Scalar>& f,
                      const OptimizerConfig& config) {
  if (!state.evaluated) {
    state.grad = Vec<Scalar>::Zero(x.size());
    state.loss = f(x, state.grad);
    ++state.evaluations;
    if (!finite(state.loss) || !state.grad.allFinite()) {
      throw NumericError("L-BFGS: non-finite loss or gradient at the current point");
    }
    state.evaluated = true;
  }
  const Vec<Scalar>& g = state.grad;
  if (all_zero(g)) return StepStatus::Converged;

  // Two-loop recursion.
  const std::size_t k = state.s.size();
  Vec<Scalar> q = g;
  std::vector<Scalar> rho(k), alpha(k);
  for (std::size_t i = k; i-- > 0;) {
    rho[i] = Scalar(1) / dot(state.y[i], state.s[i]);
    alpha[i] = rho[i] * dot(state.s[i], q);
    q -= alpha[i] * state.y[i];
  }
  if (k > 0) q *= dot(state.s[k - 1], state.y[k - 1]) / dot(state.y[k - 1], state.y[k - 1]);
  for (std::size_t i = 0; i < k; ++i) {
    const Scalar beta = rho[i] * dot(state.y[i], q);
    q += (alpha[i] - beta) * state.s[i];
  }
  Vec<Scalar> d = -q;
  Scalar slope = dot(g, d);
  if (!(slope < 0) || !finite(slope)) {
    state.s.clear();
    state.y.clear();
    d = -g;
    slope = dot(g, d);
  }

  Scalar t = Scalar(config.lr());
  if (state.s.empty()) t *= std::min(Scalar(1), Scalar(1) / g.template lpNorm<1>());

  Vec<Scalar> xn(x.size()), gn(x.size());
  for (int trial = 0; trial < config.max_line_search; ++trial, t *= Scalar(config.backtrack)) {
    xn = x + t * d;
    gn.setZero();
    Scalar fn;
    try {
      fn = f(xn, gn);
    } catch (const NumericError&) {
      fn = std::numeric_limits<Scalar>::quiet_NaN();
    }
    ++state.evaluations;
    if (!finite(fn) || !gn.allFinite()) continue;
    if (fn <= state.loss + Scalar(config.armijo) * t * slope && fn < state.loss) {
      Vec<Scalar> s = xn - x, y = gn - g;
      const Scalar sy = dot(s, y);
      if (sy > std::numeric_limits<Scalar>::epsilon() * std::sqrt(dot(s, s) * dot(y, y))) {
        state.s.push_back(std::move(s));
        state.y.push_back(std::move(y));
        if (int(state.s.size()) > config.history) {
          state.s.pop_front();
          state.y.pop_front();
        }
      }
      x = xn;
      state.loss = fn;
      state.grad = gn;
      return all_zero(state.grad) ? StepStatus::Converged : StepStatus::Progress;
    }
  }
  return StepStatus::NoProgress;
}

template <typename Scalar>
OptimizeResult<Scalar> optimize_pixels(const BasicTensor<Scalar>& initial,
                                       const PixelObjective<Scalar>& objective,
                                       const OptimizerConfig& config,
                                       const IterationCallback& on_iteration) {
  if (auto v = config.validate(); !v.empty()) throw ValidationError(std::move(v));
  OptimizeResult<Scalar> result{initial, {}, {}, false, "max-iterations", 0};
  if (config.max_iterations == 0) {
    result.stop_reason = "zero-iterations";
    return result;
  }
  const Shape shape = initial.shape();
  int iteration = 0;
  LossParts last{};

  // Evaluates at a flat point; remembers the parts of the most recent call.
  auto evaluate = [&](const Vec<Scalar>& x, Vec<Scalar>& grad) -> Scalar {
    BasicTensor<Scalar> image(shape, x.array());
    BasicTensor<Scalar> g(shape);
    last = objective(image, g);
    ++result.evaluations;
    grad = g.array().matrix();
    return Scalar(last.total);
  };

  try {
    Vec<Scalar> x = initial.array().matrix();
    Vec<Scalar> grad = Vec<Scalar>::Zero(x.size());
    const Scalar f0 = evaluate(x, grad);
    if (!finite(f0) || !grad.allFinite()) throw NumericError("non-finite initial loss");
    result.initial = last;
    double previous = last.total;

    if (config.kind == OptimizerKind::Lbfgs) {
      LbfgsState<Scalar> state;
      state.evaluated = true;
      state.loss = f0;
      state.grad = grad;
      if (all_zero(grad)) {
        result.converged = true;
        result.stop_reason = "zero-gradient";
      }
      for (iteration = 1; !result.converged && iteration <= config.max_iterations; ++iteration) {
        const StepStatus status = lbfgs_step<Scalar>(state, x, evaluate, config);
        if (status == StepStatus::NoProgress) {
          result.stop_reason = "line-search-exhausted";
          break;
        }
        result.trajectory.push_back(last);
        if (on_iteration) on_iteration(iteration, last);
        if (status == StepStatus::Converged) {
          result.converged = true;
          result.stop_reason = "zero-gradient";
          break;
        }
        const double change = std::abs(previous - last.total) / std::max(std::abs(previous), 1e-30);
        previous = last.total;
        if (change < config.tolerance) {
          result.converged = true;
          result.stop_reason = "tolerance";
          break;
        }
      }
    } else {
      AdamState<Scalar> state;
      for (iteration = 1; iteration <= config.max_iterations; ++iteration) {
        if (all_zero(grad)) {
          result.converged = true;
          result.stop_reason = "zero-gradient";
          break;
        }
        adam_step<Scalar>(state, x, grad, config);
        const Scalar f = evaluate(x, grad);
        if (!finite(f) || !grad.allFinite()) throw NumericError("non-finite loss");
        result.trajectory.push_back(last);
        if (on_iteration) on_iteration(iteration, last);
        const double change = std::abs(previous - last.total) / std::max(std::abs(previous), 1e-30);
        previous = last.total;
        if (change < config.tolerance) {
          result.converged = true;
          result.stop_reason = "tolerance";
          break;
        }
      }
    }
    result.image = BasicTensor<Scalar>(shape, x.array());
  } catch (const NumericError& e) {
    throw NumericError("iteration " + std::to_string(iteration) + ": " + e.what());
  }
  return result;
}

#define NST_INSTANTIATE_OPTIMIZERS(S)                                                          \
  template void adam_step(AdamState<S>&, Eigen::Ref<Vec<S>>, const Eigen::Ref<const Vec<S>>&, \
                          const OptimizerConfig&);                                            \
  template void adam_step(AdamState<S>&, BasicTensor<S>&, const BasicTensor<S>&,              \
                          const OptimizerConfig&);                                            \
  template StepStatus lbfgs_step(LbfgsState<S>&, Vec<S>&, const LossGradFn<S>&,               \
                                 const OptimizerConfig&);                                     \
  template OptimizeResult<S> optimize_pixels(const BasicTensor<S>&, const PixelObjective<S>&, \
                                             const OptimizerConfig&, const IterationCallback&);

NST_INSTANTIATE_OPTIMIZERS(float)
NST_INSTANTIATE_OPTIMIZERS(double)

#undef NST_INSTANTIATE_OPTIMIZERS

}  // namespace nst
