#pragma once

#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nst/ops.hpp"
#include "nst/tape.hpp"

namespace nst {

enum class SmoothingKind { None, Softmax, Scale, Tanh, Softsign };
enum class SoftmaxAxis { Channel, Spatial };

struct Smoothing {
  SmoothingKind kind = SmoothingKind::None;
  double constant = 0.001;  // scale(c)
  SoftmaxAxis axis = SoftmaxAxis::Channel;

  static Smoothing none() { return {}; }
  static Smoothing softmax(SoftmaxAxis axis = SoftmaxAxis::Channel) {
    return {SmoothingKind::Softmax, 0.001, axis};
  }
  static Smoothing scale(double c = 0.001) { return {SmoothingKind::Scale, c, SoftmaxAxis::Channel}; }
  static Smoothing tanh() { return {SmoothingKind::Tanh, 0.001, SoftmaxAxis::Channel}; }
  static Smoothing softsign() { return {SmoothingKind::Softsign, 0.001, SoftmaxAxis::Channel}; }

  /// "none", "softmax", "softmax-spatial", "scale(0.001)", "tanh", "softsign".
  std::string str() const;
  /// Inverse of str(); throws ContractError.
  static Smoothing parse(const std::string& text);

  friend bool operator==(const Smoothing&, const Smoothing&) = default;
};

enum class GramNormalization { None, PerElement, Swag };
enum class ContentNormalization { None, Half, PerElement };
enum class AdainMetric { Mse, L2 };

const char* to_string(GramNormalization n);
const char* to_string(ContentNormalization n);
const char* to_string(AdainMetric m);

struct StyleTap {
  std::string name;
  double weight = 1.0;
  friend bool operator==(const StyleTap&, const StyleTap&) = default;
};

struct LossConfig {
  double alpha = 1.0;
  double beta = 1000.0;
  double lambda = 1.0;
  std::string content_tap = "conv4_1";
  std::vector<StyleTap> style_taps = {
      {"conv1_1", 1.0}, {"conv2_1", 1.0}, {"conv3_1", 1.0}, {"conv4_1", 1.0}, {"conv5_1", 1.0}};
  Smoothing smoothing;
  /// Taps the smoothing applies to; empty means every tap.
  std::vector<std::string> smoothing_taps;
  GramNormalization gram_normalization = GramNormalization::None;
  ContentNormalization content_normalization = ContentNormalization::None;
  // AdaIN objective
  std::string adain_content_tap = "relu4_1";
  AdainMetric adain_content_metric = AdainMetric::Mse;
  AdainMetric adain_style_metric = AdainMetric::L2;
  double epsilon = 1e-5;

  /// Smoothing applied at `tap` (none when the tap is not listed).
  Smoothing smoothing_at(const std::string& tap) const;
  std::vector<std::string> validate() const;
};

// ---------------------------------------------------------------------------
// Feature transforms
// ---------------------------------------------------------------------------

template <typename Scalar>
BasicVar<Scalar> smooth(BasicVar<Scalar> feature, const Smoothing& s);

template <typename Scalar>
BasicTensor<Scalar> smooth(const BasicTensor<Scalar>& feature, const Smoothing& s);

/// F′F′ᵀ over the C×(H·W) reshape of a batch-1 feature, as a 1×1×C×C tensor;
/// divided by C·H·W when `normalized`. Each entry is summed in row-major
/// spatial order.
template <typename Scalar>
BasicVar<Scalar> gram(BasicVar<Scalar> feature, bool normalized);

template <typename Scalar>
struct GramMatrix {
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> values;
  std::string tap;
  bool normalized = false;
};

template <typename Scalar>
GramMatrix<Scalar> gram_matrix(const BasicTensor<Scalar>& feature, bool normalized,
                               std::string tap = {});

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// ‖σ(fx) − σ(fc)‖², times ½ (Half) or 1/numel (PerElement).
template <typename Scalar>
BasicVar<Scalar> content_loss(BasicVar<Scalar> fx, BasicVar<Scalar> fc, const Smoothing& s,
                              ContentNormalization normalization);

template <typename Scalar>
using StyleTargets = std::map<std::string, BasicTensor<Scalar>>;

/// Gram targets of the style features, smoothed and normalized per `config`.
template <typename Scalar>
StyleTargets<Scalar> style_targets(const std::map<std::string, BasicTensor<Scalar>>& fs,
                                   const LossConfig& config);

/// Σ_ℓ k_ℓ·‖G(σ(F^ℓ(x))) − target_ℓ‖²_F, with k_ℓ = w_ℓ for the raw and
/// per-element Grams and w_ℓ/(4·D²·M²) (D channels, M = H·W) for Swag.
template <typename Scalar>
BasicVar<Scalar> style_loss(const std::map<std::string, BasicVar<Scalar>>& fx,
                            const StyleTargets<Scalar>& targets, const LossConfig& config);

template <typename Scalar>
BasicVar<Scalar> style_loss(const std::map<std::string, BasicVar<Scalar>>& fx,
                            const std::map<std::string, BasicVar<Scalar>>& fs,
                            const LossConfig& config);

template <typename Scalar>
BasicVar<Scalar> combine_losses(BasicVar<Scalar> lc, BasicVar<Scalar> ls, double alpha,
                                double beta);

inline double combine_losses(double lc, double ls, double alpha, double beta) {
  return alpha * lc + beta * ls;
}

// ---------------------------------------------------------------------------
// AdaIN
// ---------------------------------------------------------------------------

template <typename Scalar>
struct ChannelStats {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> mean;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> std;
};

/// Population mean and sqrt(variance + ε²) of each channel of a batch-1
/// feature.
template <typename Scalar>
ChannelStats<Scalar> channel_stats(const BasicTensor<Scalar>& feature, double epsilon = 1e-5);

/// σ(fs)·(fc − μ(fc))/σ(fc) + μ(fs) per channel.
template <typename Scalar>
BasicVar<Scalar> adain(BasicVar<Scalar> fc, BasicVar<Scalar> fs, double epsilon = 1e-5);

template <typename Scalar>
BasicTensor<Scalar> adain(const BasicTensor<Scalar>& fc, const BasicTensor<Scalar>& fs,
                          double epsilon = 1e-5);

template <typename Scalar>
struct AdainLoss {
  BasicVar<Scalar> content;
  BasicVar<Scalar> style;
  BasicVar<Scalar> total;
};

/// lc compares the decoded features at `adain_content_tap` with t; ls sums
/// the mean and std gaps over the style taps; total = lc + λ·ls.
template <typename Scalar>
AdainLoss<Scalar> adain_loss(const std::map<std::string, BasicVar<Scalar>>& decoded,
                             BasicVar<Scalar> t,
                             const std::map<std::string, BasicTensor<Scalar>>& style,
                             const LossConfig& config);

/// (1−α)·fc + α·adain(fc, fs), α ∈ [0, 1].
template <typename Scalar>
BasicTensor<Scalar> interpolate_features(const BasicTensor<Scalar>& fc,
                                         const BasicTensor<Scalar>& fs, double alpha,
                                         double epsilon = 1e-5);

template <typename Scalar>
BasicVar<Scalar> interpolate_features(BasicVar<Scalar> fc, BasicVar<Scalar> fs, double alpha,
                                      double epsilon = 1e-5);

/// Mean over positions of the normalized Shannon entropy of the channel
/// distribution p_c = |a_c| / Σ|a|, in [0, 1]. All-zero positions count as 0.
double mean_channel_entropy(const Tensor& feature);

}  // namespace nst
