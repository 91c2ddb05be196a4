#include "nst/pipelines.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <future>
#include <memory>
#include <random>
#include <sstream>

#include "nst/fileio.hpp"

namespace nst {

const char* to_string(InitMode mode) { return mode == InitMode::Noise ? "noise" : "content"; }

const char* to_string(TrainKind kind) {
  return kind == TrainKind::AdainDecoder ? "adain-decoder" : "fast";
}

std::string tensor_checksum(const Tensor& t) {
  const Shape s = t.shape();
  const std::int64_t dims[4] = {s.n, s.c, s.h, s.w};
  std::string bytes(sizeof(dims) + sizeof(float) * std::size_t(t.size()), '\0');
  std::memcpy(bytes.data(), dims, sizeof(dims));
  std::memcpy(bytes.data() + sizeof(dims), t.data(), sizeof(float) * std::size_t(t.size()));
  return fnv1a_hex(bytes);
}

Tensor noise_image(Shape shape, const PixelRange& range, std::uint64_t seed) {
  if (shape.c > 3) throw ShapeError("noise_image: at most 3 channels, got " + shape.str());
  std::mt19937_64 rng(seed);
  Tensor out(shape);
  float* p = out.data();
  for (Index n = 0; n < shape.n; ++n) {
    for (Index c = 0; c < shape.c; ++c) {
      const double lo = range.lo[c], hi = range.hi[c];
      for (Index i = 0; i < shape.plane(); ++i) {
        const double u = double(rng() >> 11) * 0x1.0p-53;
        *p++ = float(lo + (hi - lo) * u);
      }
    }
  }
  return out;
}

namespace {

std::vector<std::string> unique_taps(const std::string& first, const std::vector<StyleTap>& rest) {
  std::vector<std::string> out;
  if (!first.empty()) out.push_back(first);
  for (const auto& t : rest) {
    if (std::find(out.begin(), out.end(), t.name) == out.end()) out.push_back(t.name);
  }
  return out;
}

void require_valid(const LossConfig& loss) {
  if (auto v = loss.validate(); !v.empty()) throw ValidationError(std::move(v));
}

void require_input(const Network& net, const Tensor& image, const std::string& what) {
  if (image.shape().n != 1) {
    throw ShapeError(what + " must have batch 1, got " + image.shape().str());
  }
  if (net.input_channels() != 0 && image.shape().c != net.input_channels()) {
    throw ShapeError(what + " has " + std::to_string(image.shape().c) + " channels, network '" +
                     net.id() + "' expects " + std::to_string(net.input_channels()));
  }
}

double scalar_of(const Var& v) { return double(v.value()[0]); }

// α·Lc + β·Ls for one image with cached targets; one tape per evaluation.
class ImageObjective {
 public:
  ImageObjective(const Network& net, const WeightStore& weights, const Tensor& content,
                 const std::vector<Tensor>& styles, const LossConfig& loss)
      : net_(net.with_taps(unique_taps(loss.content_tap, loss.style_taps))),
        weights_(weights),
        loss_(loss) {
    require_valid(loss);
    if (styles.empty()) throw ContractError("image-based stylization needs at least one style");
    require_input(net_, content, "content image");
    const FeatureBundle fc = forward_with_taps(net_, weights_, content);
    content_ = std::make_shared<const Tensor>(fc.at(loss.content_tap));
    for (std::size_t k = 0; k < styles.size(); ++k) {
      require_input(net_, styles[k], "style image " + std::to_string(k));
      targets_.push_back(style_targets(forward_with_taps(net_, weights_, styles[k]), loss));
    }
  }

  LossParts operator()(const Tensor& image, Tensor* grad) {
    tape_.clear();
    const ParamBinding params = bind_constants(tape_, net_, weights_);
    Var x = tape_.variable(image);
    const VarBundle fx = forward(net_, params, x, true).taps;
    Var lc = content_loss(fx.at(loss_.content_tap), tape_.constant(content_),
                          loss_.smoothing_at(loss_.content_tap), loss_.content_normalization);
    Var ls = style_loss(fx, targets_.front(), loss_);
    for (std::size_t k = 1; k < targets_.size(); ++k) ls = ls + style_loss(fx, targets_[k], loss_);
    if (targets_.size() > 1) ls = scale(ls, 1.f / float(targets_.size()));
    Var total = combine_losses(lc, ls, loss_.alpha, loss_.beta);
    if (grad != nullptr) {
      auto g = tape_.backprop(total.id(), {x.id()});
      *grad = std::move(g.at(x.id()));
    }
    return {scalar_of(total), scalar_of(lc), scalar_of(ls)};
  }

 private:
  Network net_;
  const WeightStore& weights_;
  LossConfig loss_;
  std::shared_ptr<const Tensor> content_;
  std::vector<StyleTargets<float>> targets_;
  Tape<float> tape_;
};

}  // namespace

StylizeOutcome stylize_image_based(const Network& net, const WeightStore& weights,
                                   const Tensor& content, const std::vector<Tensor>& styles,
                                   const ImageBasedOptions& options,
                                   const IterationCallback& on_iteration) {
  if (auto v = options.optimizer.validate(); !v.empty()) throw ValidationError(std::move(v));
  ImageObjective objective(net, weights, content, styles, options.loss);
  const Tensor init = options.init == InitMode::Noise
                          ? noise_image(content.shape(), options.range, options.seed)
                          : content;
  PixelObjective<float> fn = [&](const Tensor& image, Tensor& grad) {
    return objective(image, &grad);
  };
  StylizeOutcome out;
  out.init_checksum = tensor_checksum(init);
  out.run = optimize_pixels(init, fn, options.optimizer, on_iteration);
  out.image = out.run.image;
  return out;
}

LossParts evaluate_image_loss(const Network& net, const WeightStore& weights, const Tensor& image,
                              const Tensor& content, const std::vector<Tensor>& styles,
                              const LossConfig& loss) {
  ImageObjective objective(net, weights, content, styles, loss);
  return objective(image, nullptr);
}

// ---------------------------------------------------------------------------
// AdaIN
// ---------------------------------------------------------------------------

AdainModel make_adain_model(const std::string& encoder_id, const std::string& last_layer,
                            const std::vector<std::string>& style_taps, std::uint64_t seed,
                            const WeightStore* encoder_weights) {
  NetworkSpec enc = truncate_spec(builtin_spec(encoder_id), last_layer);
  NetworkSpec dec = mirror_decoder_spec(enc);
  std::vector<std::string> taps;
  for (const auto& t : style_taps) {
    const bool present = std::any_of(enc.layers.begin(), enc.layers.end(),
                                     [&](const LayerSpec& l) { return l.name == t; });
    if (present && std::find(taps.begin(), taps.end(), t) == taps.end()) taps.push_back(t);
  }
  if (std::find(taps.begin(), taps.end(), last_layer) == taps.end()) taps.push_back(last_layer);
  enc.taps = taps;
  Network encoder = build_network(std::move(enc));
  Network decoder = build_network(std::move(dec));
  WeightStore ew = encoder_weights ? *encoder_weights : init_weights(encoder, seed + 1000);
  if (auto v = validate_weights(encoder, ew); !v.empty()) throw ValidationError(std::move(v));
  WeightStore dw = init_weights(decoder, seed);
  return {std::move(encoder), std::move(ew), std::move(decoder), std::move(dw)};
}

namespace {

const std::string& deepest_tap(const AdainModel& model) {
  return model.encoder.spec().layers.back().name;
}

}  // namespace

Tensor stylize_adain(const AdainModel& model, const Tensor& content, const Tensor& style,
                     double alpha, double epsilon) {
  require_input(model.encoder, content, "content image");
  require_input(model.encoder, style, "style image");
  const std::string& last = deepest_tap(model);
  const Tensor fc = forward_with_taps(model.encoder, model.encoder_weights, content).at(last);
  const Tensor fs = forward_with_taps(model.encoder, model.encoder_weights, style).at(last);
  const Tensor t = interpolate_features(fc, fs, alpha, epsilon);
  return forward_output(model.decoder, model.decoder_weights, t);
}

// ---------------------------------------------------------------------------
// Toy training
// ---------------------------------------------------------------------------

TrainOptions default_train_options(TrainKind kind) {
  TrainOptions o;
  o.kind = kind;
  o.optimizer.kind = OptimizerKind::Adam;
  o.loss.style_taps = {{"relu1_1", 1.0}, {"relu2_1", 1.0}, {"relu3_1", 1.0}, {"relu4_1", 1.0}};
  if (kind == TrainKind::Fast) {
    o.optimizer.learning_rate = 1e-3;
    o.loss.content_tap = "relu2_1";
    o.loss.alpha = 1.0;
    o.loss.beta = 10.0;
    o.loss.gram_normalization = GramNormalization::PerElement;
    o.loss.content_normalization = ContentNormalization::PerElement;
  } else {
    o.optimizer.learning_rate = 1e-3;
    o.loss.lambda = 1.0;
    o.loss.adain_content_tap = o.encoder_last;
  }
  return o;
}

namespace {

using Grads = std::map<std::string, Tensor>;

// Shared state for the training loss of either kind.
class Trainer {
 public:
  Trainer(const std::vector<Tensor>& corpus, const Tensor* style, const TrainOptions& o)
      : corpus_(corpus), options_(o), loss_(o.loss) {
    if (corpus.empty()) throw ContractError("training needs a non-empty corpus");
    if (o.steps < 0) throw ContractError("training steps must be non-negative");
    if (auto v = o.optimizer.validate(); !v.empty()) throw ValidationError(std::move(v));
    if (o.kind == TrainKind::Fast) {
      if (style == nullptr) throw ContractError("fast training needs a style image");
      require_valid(loss_);
      loss_net_.emplace(build_network(builtin_spec(o.loss_network))
                            .with_taps(unique_taps(loss_.content_tap, loss_.style_taps)));
      loss_weights_ = o.loss_weights ? *o.loss_weights : init_weights(*loss_net_, o.seed + 1000);
      if (auto v = validate_weights(*loss_net_, loss_weights_); !v.empty()) {
        throw ValidationError(std::move(v));
      }
      model_.emplace(build_network(builtin_spec(o.transform_network)));
      weights_ = init_weights(*model_, o.seed);
      require_input(*loss_net_, *style, "style image");
      targets_ = style_targets(forward_with_taps(*loss_net_, loss_weights_, *style), loss_);
      for (const auto& x : corpus) {
        require_input(*model_, x, "corpus image");
        content_.push_back(std::make_shared<const Tensor>(
            forward_with_taps(*loss_net_, loss_weights_, x).at(loss_.content_tap)));
      }
    } else {
      std::vector<std::string> names;
      for (const auto& t : loss_.style_taps) names.push_back(t.name);
      adain_.emplace(make_adain_model(o.loss_network, o.encoder_last, names, o.seed,
                                      o.loss_weights ? &*o.loss_weights : nullptr));
      // Only taps the encoder reaches take part in the style term.
      std::vector<StyleTap> kept;
      for (const auto& t : loss_.style_taps) {
        if (adain_->encoder.has_layer(t.name)) kept.push_back(t);
      }
      loss_.style_taps = kept;
      loss_.adain_content_tap = o.encoder_last;
      require_valid(loss_);
      model_.emplace(adain_->decoder);
      weights_ = adain_->decoder_weights;
      for (const auto& x : corpus) {
        require_input(adain_->encoder, x, "corpus image");
        features_.push_back(forward_with_taps(adain_->encoder, adain_->encoder_weights, x));
      }
      if (style != nullptr && !o.identity_style) {
        require_input(adain_->encoder, *style, "style image");
        fixed_style_ = forward_with_taps(adain_->encoder, adain_->encoder_weights, *style);
      }
    }
  }

  const Network& model() const { return *model_; }
  WeightStore& weights() { return weights_; }
  const std::optional<AdainModel>& adain() const { return adain_; }

  void set_weights(const WeightStore& w) {
    if (auto v = validate_weights(*model_, w); !v.empty()) throw ValidationError(std::move(v));
    weights_ = w;
  }

  // Loss on corpus image i; fills `grads` (per weight entry) when given.
  LossParts loss(std::size_t i, Grads* grads) {
    tape_.clear();
    const ParamBinding params = grads ? bind_variables(tape_, *model_, weights_)
                                      : bind_constants(tape_, *model_, weights_);
    Var total, lc, ls;
    if (options_.kind == TrainKind::Fast) {
      Var y = forward(*model_, params, tape_.constant(corpus_[i])).output;
      const ParamBinding phi = bind_constants(tape_, *loss_net_, loss_weights_);
      const VarBundle fy = forward(*loss_net_, phi, y, true).taps;
      lc = content_loss(fy.at(loss_.content_tap), tape_.constant(content_[i]),
                        loss_.smoothing_at(loss_.content_tap), loss_.content_normalization);
      ls = style_loss(fy, targets_, loss_);
      total = combine_losses(lc, ls, loss_.alpha, loss_.beta);
    } else {
      const std::string& last = deepest_tap(*adain_);
      const FeatureBundle& style = style_features(i);
      const Tensor t = nst::adain(features_[i].at(last), style.at(last), loss_.epsilon);
      Var tv = tape_.constant(t);
      Var out = forward(*model_, params, tv).output;
      const ParamBinding enc = bind_constants(tape_, adain_->encoder, adain_->encoder_weights);
      const VarBundle fo = forward(adain_->encoder, enc, out, true).taps;
      const AdainLoss<float> l = adain_loss(fo, tv, style, loss_);
      total = l.total;
      lc = l.content;
      ls = l.style;
    }
    if (grads != nullptr) {
      std::vector<NodeId> leaves;
      std::vector<std::string> names;
      for (const auto& [layer, p] : params) {
        leaves.push_back(p.weight.id());
        names.push_back(layer);
        leaves.push_back(p.bias.id());
        names.push_back(bias_entry_name(layer));
      }
      auto g = tape_.backprop(total.id(), leaves);
      grads->clear();
      for (std::size_t k = 0; k < leaves.size(); ++k) grads->emplace(names[k], std::move(g.at(leaves[k])));
    }
    return {scalar_of(total), scalar_of(lc), scalar_of(ls)};
  }

  LossParts mean_loss() {
    LossParts sum{};
    for (std::size_t i = 0; i < corpus_.size(); ++i) {
      const LossParts l = loss(i, nullptr);
      sum.total += l.total;
      sum.content += l.content;
      sum.style += l.style;
    }
    const double n = double(corpus_.size());
    return {sum.total / n, sum.content / n, sum.style / n};
  }

 private:
  const FeatureBundle& style_features(std::size_t i) const {
    if (options_.identity_style) return features_[i];
    if (fixed_style_) return *fixed_style_;
    return features_[(i + 1) % features_.size()];
  }

  const std::vector<Tensor>& corpus_;
  const TrainOptions& options_;
  LossConfig loss_;
  std::optional<Network> model_;
  WeightStore weights_;
  // fast
  std::optional<Network> loss_net_;
  WeightStore loss_weights_;
  StyleTargets<float> targets_;
  std::vector<std::shared_ptr<const Tensor>> content_;
  // adain-decoder
  std::optional<AdainModel> adain_;
  std::vector<FeatureBundle> features_;
  std::optional<FeatureBundle> fixed_style_;
  Tape<float> tape_;
};

}  // namespace

TrainResult train_feedforward(const std::vector<Tensor>& corpus, const Tensor* style,
                              const TrainOptions& options, const StepCallback& on_step) {
  Trainer trainer(corpus, style, options);
  TrainResult result{trainer.model(), trainer.weights(), std::nullopt, {}, {}, {}};
  result.initial_corpus = trainer.mean_loss();
  std::map<std::string, AdamState<float>> states;
  Grads grads;
  for (int step = 0; step < options.steps; ++step) {
    LossParts l;
    try {
      l = trainer.loss(std::size_t(step) % corpus.size(), &grads);
    } catch (const NumericError& e) {
      throw NumericError("training step " + std::to_string(step) + ": " + e.what());
    }
    const double limit = 1e3 * result.initial_corpus.total;
    if (!std::isfinite(l.total) || l.total > limit) {
      std::ostringstream msg;
      msg << "training diverged at step " << step << ": loss " << l.total
          << " exceeds 1000 x the initial corpus loss " << result.initial_corpus.total;
      throw NumericError(msg.str());
    }
    result.curve.push_back(l);
    if (on_step) on_step(step, l);
    WeightStore& w = trainer.weights();
    for (auto& [name, g] : grads) {
      const WeightEntry* e = w.find(name);
      Tensor values = *e->tensor;
      adam_step(states[name], values, g, options.optimizer);
      w.put(name, e->extents, std::move(values));
    }
  }
  result.weights = trainer.weights();
  result.final_corpus = options.steps == 0 ? result.initial_corpus : trainer.mean_loss();
  if (trainer.adain()) {
    result.adain = trainer.adain();
    result.adain->decoder_weights = result.weights;
  }
  return result;
}

LossParts corpus_loss(const std::vector<Tensor>& corpus, const Tensor* style,
                      const TrainOptions& options, const WeightStore& weights) {
  Trainer trainer(corpus, style, options);
  trainer.set_weights(weights);
  return trainer.mean_loss();
}

// ---------------------------------------------------------------------------
// SWAG A/B
// ---------------------------------------------------------------------------

CompareOptions default_compare_options() {
  CompareOptions o;
  LossConfig& l = o.base.loss;
  l.alpha = 1.0;
  l.beta = 1e12;
  l.content_tap = "conv3_2";
  l.style_taps = {{"relu1", 1.0}, {"conv2_2", 1.0}, {"conv3_2", 1.0}, {"conv4_2", 1.0}};
  l.smoothing_taps = {"conv3_2", "conv4_2"};
  l.gram_normalization = GramNormalization::Swag;
  l.content_normalization = ContentNormalization::Half;
  o.base.optimizer.kind = OptimizerKind::Lbfgs;
  o.base.optimizer.max_iterations = 400;
  return o;
}

CompareResult swag_ab_compare(const Network& net, const WeightStore& weights, const Tensor& content,
                              const Tensor& style, const CompareOptions& options) {
  CompareResult result;
  LossConfig unsmoothed = options.base.loss;
  unsmoothed.smoothing = Smoothing::none();

  std::vector<std::string> smoothed = options.base.loss.smoothing_taps;
  if (smoothed.empty()) smoothed = unique_taps(options.base.loss.content_tap, options.base.loss.style_taps);
  const FeatureBundle raw = forward_with_taps(net.with_taps(smoothed), weights, content);
  for (const auto& tap : smoothed) result.raw_entropy[tap] = mean_channel_entropy(raw.at(tap));

  auto run_kind = [&](const Smoothing& kind) {
    KindOutcome k;
    k.kind = kind;
    try {
      ImageBasedOptions o = options.base;
      o.loss.smoothing = kind;
      double sum = 0;
      for (const auto& tap : smoothed) {
        const Tensor s = smooth(raw.at(tap), kind);
        k.entropy[tap] = mean_channel_entropy(s);
        sum += k.entropy[tap];
      }
      k.mean_entropy = smoothed.empty() ? 0 : sum / double(smoothed.size());
      StylizeOutcome run = stylize_image_based(net, weights, content, {style}, o);
      k.init_checksum = run.init_checksum;
      k.image = run.image;
      k.run = std::move(run.run);
      k.unsmoothed_style =
          evaluate_image_loss(net, weights, k.image, content, {style}, unsmoothed).style;
      k.ok = true;
    } catch (const Error& e) {
      k.error = e.what();
      k.failure = std::current_exception();
    }
    return k;
  };

  result.kinds.resize(options.kinds.size());
  const std::size_t jobs = std::size_t(std::max(options.jobs, 1));
  for (std::size_t first = 0; first < options.kinds.size(); first += jobs) {
    const std::size_t last = std::min(first + jobs, options.kinds.size());
    std::vector<std::future<KindOutcome>> batch;
    for (std::size_t i = first + 1; i < last; ++i) {
      batch.push_back(std::async(std::launch::async, run_kind, std::cref(options.kinds[i])));
    }
    result.kinds[first] = run_kind(options.kinds[first]);
    for (std::size_t i = first + 1; i < last; ++i) result.kinds[i] = batch[i - first - 1].get();
  }
  return result;
}

}  // namespace nst
