#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "nst/ops.hpp"
#include "nst/tape.hpp"
#include "nst/weights.hpp"

namespace nst {

enum class LayerKind { Conv, Relu, MaxPool, AvgPool, Upsample, Residual };

const char* layer_kind_name(LayerKind kind);

struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::Relu;
  int in_channels = 0;   // conv
  int out_channels = 0;  // conv
  int kernel = 1;        // conv kernel or pool window
  int stride = 1;        // conv / pool
  int padding = 0;       // conv
  int factor = 2;        // upsample
  std::vector<LayerSpec> body;        // residual
  std::vector<LayerSpec> projection;  // residual: empty or a single 1×1 conv
  bool post_relu = true;              // residual: relu after the sum

  static LayerSpec conv(std::string name, int in, int out, int kernel, int stride = 1,
                        int padding = -1);
  static LayerSpec relu(std::string name);
  static LayerSpec max_pool(std::string name, int window, int stride);
  static LayerSpec avg_pool(std::string name, int window, int stride);
  static LayerSpec upsample(std::string name, int factor);
  static LayerSpec residual(std::string name, std::vector<LayerSpec> body,
                            std::optional<LayerSpec> projection = std::nullopt,
                            bool post_relu = true);
};

enum class NetworkRole { Encoder, Decoder, Transformer };

struct NetworkSpec {
  std::string id;
  NetworkRole role = NetworkRole::Encoder;
  std::vector<LayerSpec> layers;
  std::vector<std::string> taps;
};

/// Every violation in `spec`, in discovery order; empty when valid.
std::vector<std::string> validate(const NetworkSpec& spec);

/// A NetworkSpec that has passed validation.
class Network {
 public:
  const NetworkSpec& spec() const { return spec_; }
  const std::string& id() const { return spec_.id; }
  const std::vector<std::string>& taps() const { return spec_.taps; }

  /// Channels expected at the input (the first conv's in_channels), or 0
  /// when the network has no conv layer.
  int input_channels() const { return input_channels_; }
  int output_channels() const { return output_channels_; }

  /// Every conv layer, including residual bodies and projections, in
  /// execution order.
  const std::vector<const LayerSpec*>& conv_layers() const { return convs_; }
  bool has_layer(const std::string& name) const;

  /// Copy of this network capturing `taps` instead (validated again).
  Network with_taps(std::vector<std::string> taps) const;

  /// Shape of every tap for an input of `input` shape.
  std::map<std::string, Shape> tap_shapes(Shape input) const;

  Network(const Network& other) : Network(other.spec_) {}
  Network& operator=(const Network& other) {
    if (this != &other) *this = Network(other.spec_);
    return *this;
  }
  Network(Network&&) = default;
  Network& operator=(Network&&) = default;

 private:
  explicit Network(NetworkSpec spec);
  friend Network build_network(NetworkSpec spec);

  NetworkSpec spec_;
  int input_channels_ = 0;
  int output_channels_ = 0;
  std::vector<const LayerSpec*> convs_;
  std::vector<std::string> names_;
};

/// Validates and returns an executable network; throws ValidationError
/// listing every violation.
Network build_network(NetworkSpec spec);

using FeatureBundle = std::map<std::string, Tensor>;
using VarBundle = std::map<std::string, Var>;

struct LayerParams {
  Var weight;
  Var bias;
};
using ParamBinding = std::map<std::string, LayerParams>;

/// Puts each conv layer's weight and bias on `tape`, as constants or as
/// differentiable leaves. Missing entries throw LookupError.
ParamBinding bind_constants(Tape<float>& tape, const Network& net, const WeightStore& weights);
ParamBinding bind_variables(Tape<float>& tape, const Network& net, const WeightStore& weights);

struct ForwardResult {
  Var output;
  VarBundle taps;
};

/// Runs the network on `input`, recording every op. When `stop_after_taps`
/// is set, execution ends once the last tap has been captured and `output`
/// is that tap.
ForwardResult forward(const Network& net, const ParamBinding& params, Var input,
                      bool stop_after_taps = false);

/// Tapped activations with the tape recorded, so every tap is
/// differentiable back to `input`.
VarBundle forward_with_taps(const Network& net, const ParamBinding& params, Var input);

/// Tapped activations as plain values.
FeatureBundle forward_with_taps(const Network& net, const WeightStore& weights,
                                const Tensor& input);

/// Final-layer output as a plain value.
Tensor forward_output(const Network& net, const WeightStore& weights, const Tensor& input);

/// He-normal conv weights and zero biases drawn from `seed`.
WeightStore init_weights(const Network& net, std::uint64_t seed);

/// Mismatches between `net` and `weights`: missing entries and wrong shapes.
std::vector<std::string> validate_weights(const Network& net, const WeightStore& weights);

// ---------------------------------------------------------------------------
// Built-in architectures
// ---------------------------------------------------------------------------

/// "vgg19-features", "vgg-tiny", "resnet-small", "transform-toy",
/// "fixture-2layer". Throws LookupError for anything else.
NetworkSpec builtin_spec(const std::string& id);
std::vector<std::string> builtin_ids();

/// Top-level layers of `spec` up to and including `last_layer`, tapping it.
NetworkSpec truncate_spec(const NetworkSpec& spec, const std::string& last_layer);

/// Mirror image of an encoder: convs reversed with channels swapped, pools
/// replaced by nearest upsampling, relu after every conv but the last.
NetworkSpec mirror_decoder_spec(const NetworkSpec& encoder);

}  // namespace nst
