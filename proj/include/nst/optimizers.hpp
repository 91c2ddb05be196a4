#pragma once

#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "nst/error.hpp"
#include "nst/tensor.hpp"

namespace nst {

enum class OptimizerKind { Adam, Lbfgs };

const char* to_string(OptimizerKind kind);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Lbfgs;
  /// Unset means the kind's default: 1.0 for L-BFGS (initial line-search
  /// step), 0.02 for Adam.
  std::optional<double> learning_rate;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  int history = 10;
  int max_line_search = 20;
  double armijo = 1e-4;
  double backtrack = 0.5;
  int max_iterations = 400;
  /// Stop when |Δloss| / |loss| falls below this; 0 disables the test.
  double tolerance = 0.0;

  double lr() const;
  std::vector<std::string> validate() const;
};

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

template <typename Scalar>
struct AdamState {
  Vec<Scalar> m;
  Vec<Scalar> v;
  long t = 0;
};

/// One bias-corrected Adam update of `params` in place.
template <typename Scalar>
void adam_step(AdamState<Scalar>& state, Eigen::Ref<Vec<Scalar>> params,
               const Eigen::Ref<const Vec<Scalar>>& grad, const OptimizerConfig& config);

template <typename Scalar>
void adam_step(AdamState<Scalar>& state, BasicTensor<Scalar>& params,
               const BasicTensor<Scalar>& grad, const OptimizerConfig& config);

// ---------------------------------------------------------------------------
// L-BFGS
// ---------------------------------------------------------------------------

/// Loss at x, writing ∂loss/∂x into `grad` (already sized like x).
template <typename Scalar>
using LossGradFn = std::function<Scalar(const Vec<Scalar>& x, Vec<Scalar>& grad)>;

template <typename Scalar>
struct LbfgsState {
  std::deque<Vec<Scalar>> s;
  std::deque<Vec<Scalar>> y;
  bool evaluated = false;
  Scalar loss = 0;
  Vec<Scalar> grad;
  int evaluations = 0;
};

enum class StepStatus { Progress, Converged, NoProgress };

const char* to_string(StepStatus status);

/// Two-loop direction from the stored pairs, then Armijo backtracking from
/// step = learning rate (scaled by min(1, 1/‖g‖₁) while no pairs exist). A
/// non-finite loss at a trial point shrinks the step; at the current point
/// it throws NumericError. `x` moves only on Progress.
template <typename Scalar>
StepStatus lbfgs_step(LbfgsState<Scalar>& state, Vec<Scalar>& x, const LossGradFn<Scalar>& f,
                      const OptimizerConfig& config);

// ---------------------------------------------------------------------------
// Pixel optimization
// ---------------------------------------------------------------------------

struct LossParts {
  double total = 0;
  double content = 0;
  double style = 0;
  friend bool operator==(const LossParts&, const LossParts&) = default;
};

/// Loss parts at an image, writing ∂total/∂image into `grad`.
template <typename Scalar>
using PixelObjective =
    std::function<LossParts(const BasicTensor<Scalar>& image, BasicTensor<Scalar>& grad)>;

template <typename Scalar>
struct OptimizeResult {
  BasicTensor<Scalar> image;
  LossParts initial;
  /// Loss after each executed iteration.
  std::vector<LossParts> trajectory;
  bool converged = false;
  std::string stop_reason;
  int evaluations = 0;
};

using IterationCallback = std::function<void(int iteration, const LossParts& loss)>;

/// Runs up to config.max_iterations steps from `initial`. Numeric failures
/// are rethrown as NumericError carrying the iteration index.
template <typename Scalar>
OptimizeResult<Scalar> optimize_pixels(const BasicTensor<Scalar>& initial,
                                       const PixelObjective<Scalar>& objective,
                                       const OptimizerConfig& config,
                                       const IterationCallback& on_iteration = {});

}  // namespace nst
