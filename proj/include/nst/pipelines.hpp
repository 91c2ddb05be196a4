#pragma once

#include <array>
#include <cstdint>
#include <exception>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "nst/losses.hpp"
#include "nst/network.hpp"
#include "nst/optimizers.hpp"

namespace nst {

/// Per-channel bounds of valid pixels in network input space.
struct PixelRange {
  std::array<float, 3> lo{0.f, 0.f, 0.f};
  std::array<float, 3> hi{1.f, 1.f, 1.f};
};

enum class InitMode { Content, Noise };

const char* to_string(InitMode mode);

/// 16 hex digits over the little-endian float bytes and the shape.
std::string tensor_checksum(const Tensor& t);

/// Uniform noise inside `range`, drawn from `seed`.
Tensor noise_image(Shape shape, const PixelRange& range, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Image-based NST
// ---------------------------------------------------------------------------

struct ImageBasedOptions {
  LossConfig loss;
  OptimizerConfig optimizer;
  InitMode init = InitMode::Content;
  std::uint64_t seed = 0;
  PixelRange range;
};

struct StylizeOutcome {
  Tensor image;
  OptimizeResult<float> run;
  std::string init_checksum;
};

/// Caches content and style taps once, then optimizes the image against
/// α·Lc + β·Ls, with Ls averaged over the style images. Tap and shape errors
/// are raised before the first iteration.
StylizeOutcome stylize_image_based(const Network& net, const WeightStore& weights,
                                   const Tensor& content, const std::vector<Tensor>& styles,
                                   const ImageBasedOptions& options,
                                   const IterationCallback& on_iteration = {});

/// Content and style parts of the image-based objective at `image`.
LossParts evaluate_image_loss(const Network& net, const WeightStore& weights, const Tensor& image,
                              const Tensor& content, const std::vector<Tensor>& styles,
                              const LossConfig& loss);

// ---------------------------------------------------------------------------
// AdaIN
// ---------------------------------------------------------------------------

struct AdainModel {
  Network encoder;  // taps: every style tap and the content tap
  WeightStore encoder_weights;
  Network decoder;
  WeightStore decoder_weights;
};

/// Encoder = `encoder_id` truncated at `last_layer`, tapping the style taps
/// it contains and `last_layer`; decoder = its mirror. Encoder weights come
/// from `encoder_weights` when given, else from `seed + 1000`; decoder
/// weights from `seed`.
AdainModel make_adain_model(const std::string& encoder_id, const std::string& last_layer,
                            const std::vector<std::string>& style_taps, std::uint64_t seed,
                            const WeightStore* encoder_weights = nullptr);

/// g(interpolate_features(f(content), f(style), alpha)) in one pass.
Tensor stylize_adain(const AdainModel& model, const Tensor& content, const Tensor& style,
                     double alpha, double epsilon = 1e-5);

// ---------------------------------------------------------------------------
// Toy feed-forward training
// ---------------------------------------------------------------------------

enum class TrainKind { Fast, AdainDecoder };

const char* to_string(TrainKind kind);

struct TrainOptions {
  TrainKind kind = TrainKind::Fast;
  int steps = 200;
  std::uint64_t seed = 0;
  OptimizerConfig optimizer;  // Adam is used; learning rate from here
  LossConfig loss;
  std::string loss_network = "vgg-tiny";      // fast: φ; adain: encoder source
  std::string transform_network = "transform-toy";
  std::string encoder_last = "relu4_1";       // adain: deepest encoder layer
  bool identity_style = false;                // adain: style = content
  std::optional<WeightStore> loss_weights;    // otherwise drawn from seed + 1000
};

/// Defaults for each kind: fast uses per-element losses at relu2_1 (content)
/// and relu1_1..relu4_1 (style); adain uses relu1_1..relu4_1 with λ = 1.
TrainOptions default_train_options(TrainKind kind);

struct TrainResult {
  Network model;  // transform network or decoder
  WeightStore weights;
  std::optional<AdainModel> adain;  // adain-decoder only, with trained decoder
  std::vector<LossParts> curve;     // per step, on that step's image
  LossParts initial_corpus;         // mean over the corpus before training
  LossParts final_corpus;           // and after
};

using StepCallback = std::function<void(int step, const LossParts& loss)>;

/// Adam over the model weights, one corpus image per step in order. Aborts
/// with NumericError when a step loss exceeds 1e3 × the initial corpus loss.
TrainResult train_feedforward(const std::vector<Tensor>& corpus, const Tensor* style,
                              const TrainOptions& options, const StepCallback& on_step = {});

/// Mean training loss over `corpus` with the model weights replaced by
/// `weights`; the fixed networks are rebuilt from `options`.
LossParts corpus_loss(const std::vector<Tensor>& corpus, const Tensor* style,
                      const TrainOptions& options, const WeightStore& weights);

// ---------------------------------------------------------------------------
// SWAG A/B comparison
// ---------------------------------------------------------------------------

struct CompareOptions {
  std::vector<Smoothing> kinds = {Smoothing::none(), Smoothing::softmax(), Smoothing::scale(0.001),
                                  Smoothing::tanh(), Smoothing::softsign()};
  ImageBasedOptions base;  // smoothing in base.loss is replaced per kind
  int jobs = 1;            // kinds run concurrently; results keep kind order
};

/// SWAG defaults on resnet-small: content weight 1, style weight 1e12,
/// Swag Gram normalization, half content normalization, smoothing at the
/// conv3_x and conv4_x stage outputs.
CompareOptions default_compare_options();

struct KindOutcome {
  Smoothing kind;
  bool ok = false;
  std::string error;
  std::exception_ptr failure;
  Tensor image;
  OptimizeResult<float> run;
  std::string init_checksum;
  /// Style loss of the final image with smoothing none, same normalization.
  double unsmoothed_style = 0;
  /// Mean channel entropy of σ(F) at each smoothed tap on the content image.
  std::map<std::string, double> entropy;
  double mean_entropy = 0;
};

struct CompareResult {
  std::vector<KindOutcome> kinds;
  std::map<std::string, double> raw_entropy;  // smoothing none, same taps
};

/// One stylize_image_based run per kind with identical initialization. A
/// failing kind is recorded and does not stop the others.
CompareResult swag_ab_compare(const Network& net, const WeightStore& weights, const Tensor& content,
                              const Tensor& style, const CompareOptions& options);

}  // namespace nst
