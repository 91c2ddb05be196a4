#include "nst/losses.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

namespace nst {

std::string Smoothing::str() const {
  switch (kind) {
    case SmoothingKind::None: return "none";
    case SmoothingKind::Softmax: return axis == SoftmaxAxis::Channel ? "softmax" : "softmax-spatial";
    case SmoothingKind::Scale: {
      char buf[64];
      std::snprintf(buf, sizeof buf, "scale(%.17g)", constant);
      return buf;
    }
    case SmoothingKind::Tanh: return "tanh";
    case SmoothingKind::Softsign: return "softsign";
  }
  return "none";
}

Smoothing Smoothing::parse(const std::string& text) {
  if (text == "none") return none();
  if (text == "softmax" || text == "softmax-channel") return softmax(SoftmaxAxis::Channel);
  if (text == "softmax-spatial") return softmax(SoftmaxAxis::Spatial);
  if (text == "tanh") return tanh();
  if (text == "softsign") return softsign();
  if (text == "scale") return scale();
  if (text.starts_with("scale(") && text.ends_with(")")) {
    const std::string inner = text.substr(6, text.size() - 7);
    std::size_t used = 0;
    double c = 0;
    try {
      c = std::stod(inner, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == inner.size() && used > 0 && c > 0 && std::isfinite(c)) return scale(c);
    throw ContractError("smoothing '" + text + "': scale constant must be a positive number");
  }
  throw ContractError("unknown smoothing kind '" + text +
                      "' (expected none, softmax, softmax-spatial, scale(c), tanh, softsign)");
}

const char* to_string(GramNormalization n) {
  switch (n) {
    case GramNormalization::None: return "none";
    case GramNormalization::PerElement: return "per-element";
    case GramNormalization::Swag: return "swag";
  }
  return "none";
}

const char* to_string(ContentNormalization n) {
  switch (n) {
    case ContentNormalization::None: return "none";
    case ContentNormalization::Half: return "half";
    case ContentNormalization::PerElement: return "per-element";
  }
  return "none";
}

const char* to_string(AdainMetric m) { return m == AdainMetric::Mse ? "mse" : "l2"; }

Smoothing LossConfig::smoothing_at(const std::string& tap) const {
  if (smoothing.kind == SmoothingKind::None) return smoothing;
  if (smoothing_taps.empty()) return smoothing;
  for (const auto& t : smoothing_taps)
    if (t == tap) return smoothing;
  return Smoothing::none();
}

std::vector<std::string> LossConfig::validate() const {
  std::vector<std::string> out;
  auto non_negative = [&](double v, const char* field) {
    if (!(v >= 0) || !std::isfinite(v)) {
      out.push_back(std::string("loss.") + field + " must be a finite non-negative number");
    }
  };
  non_negative(alpha, "alpha");
  non_negative(beta, "beta");
  non_negative(lambda, "lambda");
  if (content_tap.empty()) out.push_back("loss.content_tap must name a tap");
  for (const auto& t : style_taps) {
    if (t.name.empty()) out.push_back("loss.style_taps has an entry without a name");
    if (!(t.weight >= 0) || !std::isfinite(t.weight)) {
      out.push_back("loss.style_taps weight of '" + t.name + "' must be non-negative");
    }
  }
  if (smoothing.kind == SmoothingKind::Scale &&
      (!(smoothing.constant > 0) || !std::isfinite(smoothing.constant))) {
    out.push_back("loss.smoothing scale constant must be positive");
  }
  if (!(epsilon > 0)) out.push_back("loss.epsilon must be positive");
  return out;
}

namespace {

template <typename Scalar>
using TensorT = BasicTensor<Scalar>;

template <typename Scalar>
BasicVar<Scalar> zero_on(Tape<Scalar>& tape) {
  return tape.constant(TensorT<Scalar>::scalar(Scalar(0)));
}

void require_batch_one(const Shape& s, const char* what) {
  if (s.n != 1) throw ShapeError(std::string(what) + " expects batch 1, got " + s.str());
  if (s.count() == 0) throw ShapeError(std::string(what) + " of an empty tensor " + s.str());
}

}  // namespace

template <typename Scalar>
BasicVar<Scalar> smooth(BasicVar<Scalar> feature, const Smoothing& s) {
  switch (s.kind) {
    case SmoothingKind::None: return feature;
    case SmoothingKind::Softmax:
      return s.axis == SoftmaxAxis::Channel ? softmax_channels(feature) : softmax_spatial(feature);
    case SmoothingKind::Scale:
      if (!(s.constant > 0)) throw ContractError("scale smoothing requires c > 0");
      return scale(feature, Scalar(s.constant));
    case SmoothingKind::Tanh: return tanh(feature);
    case SmoothingKind::Softsign: return softsign(feature);
  }
  return feature;
}

template <typename Scalar>
BasicTensor<Scalar> smooth(const BasicTensor<Scalar>& feature, const Smoothing& s) {
  if (s.kind == SmoothingKind::None) return feature;
  Tape<Scalar> tape;
  return smooth(tape.constant(feature), s).value();
}

template <typename Scalar>
BasicVar<Scalar> gram(BasicVar<Scalar> feature, bool normalized) {
  const Shape s = feature.shape();
  require_batch_one(s, "gram");
  const TensorT<Scalar>& f = feature.value();
  const Index C = s.c, P = s.plane();
  const Scalar norm = normalized ? Scalar(s.count()) : Scalar(1);
  TensorT<Scalar> out(Shape{1, 1, C, C});
  for (Index i = 0; i < C; ++i) {
    const Scalar* fi = f.plane(0, i);
    for (Index j = i; j < C; ++j) {
      const Scalar* fj = f.plane(0, j);
      Scalar acc = 0;
      for (Index p = 0; p < P; ++p) acc += fi[p] * fj[p];
      if (normalized) acc /= norm;
      out(0, 0, i, j) = acc;
      out(0, 0, j, i) = acc;
    }
  }
  const NodeId in = feature.id();
  return feature.tape().record(
      OpKind::Gram, {in}, std::move(out),
      [in, C, P, norm](const Tape<Scalar>& t, const TensorT<Scalar>& g,
                       std::span<TensorT<Scalar>* const> grads) {
        using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
        Eigen::Map<const Mat> F(t.value(in).data(), C, P);
        Eigen::Map<const Mat> G(g.data(), C, C);
        Eigen::Map<Mat> dF(grads[0]->data(), C, P);
        const Mat sym = (G + G.transpose()) / norm;
        dF.noalias() += sym * F;
      });
}

template <typename Scalar>
GramMatrix<Scalar> gram_matrix(const BasicTensor<Scalar>& feature, bool normalized,
                               std::string tap) {
  Tape<Scalar> tape;
  const TensorT<Scalar> g = gram(tape.constant(feature), normalized).value();
  const Index C = feature.shape().c;
  GramMatrix<Scalar> out{Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>(C, C),
                         std::move(tap), normalized};
  for (Index i = 0; i < C; ++i)
    for (Index j = 0; j < C; ++j) out.values(i, j) = g(0, 0, i, j);
  return out;
}

template <typename Scalar>
BasicVar<Scalar> content_loss(BasicVar<Scalar> fx, BasicVar<Scalar> fc, const Smoothing& s,
                              ContentNormalization normalization) {
  if (!(fx.shape() == fc.shape())) {
    throw ShapeError("content_loss: shape mismatch " + fx.shape().str() + " vs " +
                     fc.shape().str());
  }
  BasicVar<Scalar> loss = sum(square(smooth(fx, s) - smooth(fc, s)));
  switch (normalization) {
    case ContentNormalization::None: return loss;
    case ContentNormalization::Half: return scale(loss, Scalar(0.5));
    case ContentNormalization::PerElement:
      return scale(loss, Scalar(1) / Scalar(fx.shape().count()));
  }
  return loss;
}

template <typename Scalar>
StyleTargets<Scalar> style_targets(const std::map<std::string, BasicTensor<Scalar>>& fs,
                                   const LossConfig& config) {
  const bool per_element = config.gram_normalization == GramNormalization::PerElement;
  StyleTargets<Scalar> out;
  Tape<Scalar> tape;
  for (const StyleTap& tap : config.style_taps) {
    auto it = fs.find(tap.name);
    if (it == fs.end()) throw LookupError("style features lack tap '" + tap.name + "'");
    tape.clear();
    out.emplace(tap.name,
                gram(smooth(tape.constant(it->second), config.smoothing_at(tap.name)), per_element)
                    .value());
  }
  return out;
}

namespace {

template <typename Scalar>
Scalar style_factor(const StyleTap& tap, const Shape& s, GramNormalization n) {
  if (n != GramNormalization::Swag) return Scalar(tap.weight);
  const double D = double(s.c), M = double(s.plane());
  return Scalar(tap.weight / (4.0 * D * D * M * M));
}

template <typename Scalar>
const BasicVar<Scalar>& find_tap(const std::map<std::string, BasicVar<Scalar>>& bundle,
                                 const std::string& name, const char* which) {
  auto it = bundle.find(name);
  if (it == bundle.end()) {
    throw LookupError(std::string(which) + " features lack tap '" + name + "'");
  }
  return it->second;
}

template <typename Scalar>
Tape<Scalar>& tape_of(const std::map<std::string, BasicVar<Scalar>>& bundle, const char* what) {
  if (bundle.empty()) throw ContractError(std::string(what) + ": empty feature bundle");
  return bundle.begin()->second.tape();
}

}  // namespace

template <typename Scalar>
BasicVar<Scalar> style_loss(const std::map<std::string, BasicVar<Scalar>>& fx,
                            const StyleTargets<Scalar>& targets, const LossConfig& config) {
  Tape<Scalar>& tape = tape_of(fx, "style_loss");
  const bool per_element = config.gram_normalization == GramNormalization::PerElement;
  BasicVar<Scalar> total = zero_on(tape);
  bool first = true;
  for (const StyleTap& tap : config.style_taps) {
    const BasicVar<Scalar>& x = find_tap(fx, tap.name, "generated");
    auto it = targets.find(tap.name);
    if (it == targets.end()) throw LookupError("style targets lack tap '" + tap.name + "'");
    BasicVar<Scalar> gx = gram(smooth(x, config.smoothing_at(tap.name)), per_element);
    if (!(gx.shape() == it->second.shape())) {
      throw ShapeError("style tap '" + tap.name + "': Gram " + gx.shape().str() +
                       " vs target " + it->second.shape().str());
    }
    BasicVar<Scalar> term =
        scale(sum(square(gx - tape.constant(it->second))),
              style_factor<Scalar>(tap, x.shape(), config.gram_normalization));
    total = first ? term : total + term;
    first = false;
  }
  return total;
}

template <typename Scalar>
BasicVar<Scalar> style_loss(const std::map<std::string, BasicVar<Scalar>>& fx,
                            const std::map<std::string, BasicVar<Scalar>>& fs,
                            const LossConfig& config) {
  Tape<Scalar>& tape = tape_of(fx, "style_loss");
  const bool per_element = config.gram_normalization == GramNormalization::PerElement;
  BasicVar<Scalar> total = zero_on(tape);
  bool first = true;
  for (const StyleTap& tap : config.style_taps) {
    const BasicVar<Scalar>& x = find_tap(fx, tap.name, "generated");
    const BasicVar<Scalar>& s = find_tap(fs, tap.name, "style");
    if (!(x.shape() == s.shape())) {
      throw ShapeError("style tap '" + tap.name + "': shape mismatch " + x.shape().str() +
                       " vs " + s.shape().str());
    }
    const Smoothing sm = config.smoothing_at(tap.name);
    BasicVar<Scalar> term =
        scale(sum(square(gram(smooth(x, sm), per_element) - gram(smooth(s, sm), per_element))),
              style_factor<Scalar>(tap, x.shape(), config.gram_normalization));
    total = first ? term : total + term;
    first = false;
  }
  return total;
}

template <typename Scalar>
BasicVar<Scalar> combine_losses(BasicVar<Scalar> lc, BasicVar<Scalar> ls, double alpha,
                                double beta) {
  return scale(lc, Scalar(alpha)) + scale(ls, Scalar(beta));
}

template <typename Scalar>
ChannelStats<Scalar> channel_stats(const BasicTensor<Scalar>& feature, double epsilon) {
  require_batch_one(feature.shape(), "channel_stats");
  Tape<Scalar> tape;
  auto x = tape.constant(feature);
  const TensorT<Scalar>& m = channel_mean(x).value();
  const TensorT<Scalar>& s = channel_std(x, Scalar(epsilon)).value();
  const Index C = feature.shape().c;
  ChannelStats<Scalar> out{Eigen::Matrix<Scalar, Eigen::Dynamic, 1>(C),
                           Eigen::Matrix<Scalar, Eigen::Dynamic, 1>(C)};
  for (Index c = 0; c < C; ++c) {
    out.mean(c) = m[c];
    out.std(c) = s[c];
  }
  return out;
}

template <typename Scalar>
BasicVar<Scalar> adain(BasicVar<Scalar> fc, BasicVar<Scalar> fs, double epsilon) {
  const Shape sc = fc.shape(), ss = fs.shape();
  if (sc.c != ss.c || sc.n != ss.n) {
    throw ShapeError("adain: content " + sc.str() + " and style " + ss.str() +
                     " differ in batch or channel count");
  }
  const Scalar eps = Scalar(epsilon);
  BasicVar<Scalar> normalized = (fc - broadcast_to(channel_mean(fc), sc)) /
                                broadcast_to(channel_std(fc, eps), sc);
  return normalized * broadcast_to(channel_std(fs, eps), sc) +
         broadcast_to(channel_mean(fs), sc);
}

template <typename Scalar>
BasicTensor<Scalar> adain(const BasicTensor<Scalar>& fc, const BasicTensor<Scalar>& fs,
                          double epsilon) {
  Tape<Scalar> tape;
  return adain(tape.constant(fc), tape.constant(fs), epsilon).value();
}

template <typename Scalar>
AdainLoss<Scalar> adain_loss(const std::map<std::string, BasicVar<Scalar>>& decoded,
                             BasicVar<Scalar> t,
                             const std::map<std::string, BasicTensor<Scalar>>& style,
                             const LossConfig& config) {
  Tape<Scalar>& tape = t.tape();
  const BasicVar<Scalar>& fd = find_tap(decoded, config.adain_content_tap, "decoded");
  if (!(fd.shape() == t.shape())) {
    throw ShapeError("adain_loss: decoded tap '" + config.adain_content_tap + "' is " +
                     fd.shape().str() + " but t is " + t.shape().str());
  }
  auto distance = [](BasicVar<Scalar> a, BasicVar<Scalar> b, AdainMetric m) {
    return m == AdainMetric::Mse ? mean(square(a - b)) : l2_norm(a - b);
  };
  BasicVar<Scalar> lc = distance(fd, t, config.adain_content_metric);

  const Scalar eps = Scalar(config.epsilon);
  BasicVar<Scalar> ls = zero_on(tape);
  bool first = true;
  for (const StyleTap& tap : config.style_taps) {
    const BasicVar<Scalar>& x = find_tap(decoded, tap.name, "decoded");
    auto it = style.find(tap.name);
    if (it == style.end()) throw LookupError("style features lack tap '" + tap.name + "'");
    BasicVar<Scalar> s = tape.constant(it->second);
    if (x.shape().c != s.shape().c) {
      throw ShapeError("adain_loss: tap '" + tap.name + "' channel counts differ");
    }
    BasicVar<Scalar> term =
        distance(channel_mean(x), channel_mean(s), config.adain_style_metric) +
        distance(channel_std(x, eps), channel_std(s, eps), config.adain_style_metric);
    if (tap.weight != 1.0) term = scale(term, Scalar(tap.weight));
    ls = first ? term : ls + term;
    first = false;
  }
  BasicVar<Scalar> total = lc + scale(ls, Scalar(config.lambda));
  return {lc, ls, total};
}

namespace {

void require_unit_interval(double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw ContractError("interpolation alpha must lie in [0, 1], got " + std::to_string(alpha));
  }
}

}  // namespace

template <typename Scalar>
BasicTensor<Scalar> interpolate_features(const BasicTensor<Scalar>& fc,
                                         const BasicTensor<Scalar>& fs, double alpha,
                                         double epsilon) {
  require_unit_interval(alpha);
  const TensorT<Scalar> t = adain(fc, fs, epsilon);
  if (alpha == 0.0) return fc;
  if (alpha == 1.0) return t;
  const Scalar a = Scalar(alpha);
  TensorT<Scalar> out(fc.shape());
  out.array() = (Scalar(1) - a) * fc.array() + a * t.array();
  return out;
}

template <typename Scalar>
BasicVar<Scalar> interpolate_features(BasicVar<Scalar> fc, BasicVar<Scalar> fs, double alpha,
                                      double epsilon) {
  require_unit_interval(alpha);
  BasicVar<Scalar> t = adain(fc, fs, epsilon);
  if (alpha == 0.0) return fc;
  if (alpha == 1.0) return t;
  return scale(fc, Scalar(1.0 - alpha)) + scale(t, Scalar(alpha));
}

double mean_channel_entropy(const Tensor& feature) {
  const Shape s = feature.shape();
  const Index positions = s.n * s.plane();
  if (positions == 0 || s.c < 2) return 0.0;
  const double log_c = std::log(double(s.c));
  double total = 0;
  for (Index n = 0; n < s.n; ++n)
    for (Index p = 0; p < s.plane(); ++p) {
      double mass = 0;
      for (Index c = 0; c < s.c; ++c) mass += std::abs(double(feature.plane(n, c)[p]));
      if (mass == 0) continue;
      double h = 0;
      for (Index c = 0; c < s.c; ++c) {
        const double q = std::abs(double(feature.plane(n, c)[p])) / mass;
        if (q > 0) h -= q * std::log(q);
      }
      total += h / log_c;
    }
  return total / double(positions);
}

#define NST_INSTANTIATE_LOSSES(S)                                                            \
  template BasicVar<S> smooth(BasicVar<S>, const Smoothing&);                                \
  template BasicTensor<S> smooth(const BasicTensor<S>&, const Smoothing&);                   \
  template BasicVar<S> gram(BasicVar<S>, bool);                                              \
  template GramMatrix<S> gram_matrix(const BasicTensor<S>&, bool, std::string);              \
  template BasicVar<S> content_loss(BasicVar<S>, BasicVar<S>, const Smoothing&,              \
                                    ContentNormalization);                                   \
  template StyleTargets<S> style_targets(const std::map<std::string, BasicTensor<S>>&,       \
                                         const LossConfig&);                                 \
  template BasicVar<S> style_loss(const std::map<std::string, BasicVar<S>>&,                 \
                                  const StyleTargets<S>&, const LossConfig&);                \
  template BasicVar<S> style_loss(const std::map<std::string, BasicVar<S>>&,                 \
                                  const std::map<std::string, BasicVar<S>>&,                 \
                                  const LossConfig&);                                        \
  template BasicVar<S> combine_losses(BasicVar<S>, BasicVar<S>, double, double);             \
  template ChannelStats<S> channel_stats(const BasicTensor<S>&, double);                     \
  template BasicVar<S> adain(BasicVar<S>, BasicVar<S>, double);                              \
  template BasicTensor<S> adain(const BasicTensor<S>&, const BasicTensor<S>&, double);       \
  template AdainLoss<S> adain_loss(const std::map<std::string, BasicVar<S>>&, BasicVar<S>,   \
                                   const std::map<std::string, BasicTensor<S>>&,             \
                                   const LossConfig&);                                       \
  template BasicTensor<S> interpolate_features(const BasicTensor<S>&, const BasicTensor<S>&, \
                                               double, double);                              \
  template BasicVar<S> interpolate_features(BasicVar<S>, BasicVar<S>, double, double);

NST_INSTANTIATE_LOSSES(float)
NST_INSTANTIATE_LOSSES(double)

#undef NST_INSTANTIATE_LOSSES

}  // namespace nst
