#include "nst/network.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <set>

namespace nst {

const char* layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv: return "conv";
    case LayerKind::Relu: return "relu";
    case LayerKind::MaxPool: return "pool-max";
    case LayerKind::AvgPool: return "pool-avg";
    case LayerKind::Upsample: return "upsample";
    case LayerKind::Residual: return "residual-block";
  }
  return "unknown";
}

LayerSpec LayerSpec::conv(std::string name, int in, int out, int kernel, int stride,
                          int padding) {
  LayerSpec l;
  l.name = std::move(name);
  l.kind = LayerKind::Conv;
  l.in_channels = in;
  l.out_channels = out;
  l.kernel = kernel;
  l.stride = stride;
  l.padding = padding < 0 ? kernel / 2 : padding;
  return l;
}

LayerSpec LayerSpec::relu(std::string name) {
  LayerSpec l;
  l.name = std::move(name);
  l.kind = LayerKind::Relu;
  return l;
}

LayerSpec LayerSpec::max_pool(std::string name, int window, int stride) {
  LayerSpec l;
  l.name = std::move(name);
  l.kind = LayerKind::MaxPool;
  l.kernel = window;
  l.stride = stride;
  return l;
}

LayerSpec LayerSpec::avg_pool(std::string name, int window, int stride) {
  LayerSpec l = max_pool(std::move(name), window, stride);
  l.kind = LayerKind::AvgPool;
  return l;
}

LayerSpec LayerSpec::upsample(std::string name, int factor) {
  LayerSpec l;
  l.name = std::move(name);
  l.kind = LayerKind::Upsample;
  l.factor = factor;
  return l;
}

LayerSpec LayerSpec::residual(std::string name, std::vector<LayerSpec> body,
                              std::optional<LayerSpec> projection, bool post_relu) {
  LayerSpec l;
  l.name = std::move(name);
  l.kind = LayerKind::Residual;
  l.body = std::move(body);
  if (projection) l.projection.push_back(std::move(*projection));
  l.post_relu = post_relu;
  return l;
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

namespace {

// Net spatial scaling of a layer sequence as down/up integer factors.
struct Scaling {
  long down = 1;
  long up = 1;
  bool operator==(const Scaling& o) const { return down * o.up == o.down * up; }
};

struct Validator {
  std::vector<std::string> violations;
  std::set<std::string> names;
  int first_input = 0;

  void add(std::string v) { violations.push_back(std::move(v)); }

  // `channels` is 0 while unknown (before the first conv).
  void walk(const std::vector<LayerSpec>& layers, int& channels, Scaling& scaling) {
    for (const LayerSpec& l : layers) layer(l, channels, scaling);
  }

  void layer(const LayerSpec& l, int& channels, Scaling& scaling) {
    if (l.name.empty()) add("layer of kind " + std::string(layer_kind_name(l.kind)) +
                            " has an empty name");
    else if (!names.insert(l.name).second) add("duplicate layer name '" + l.name + "'");

    switch (l.kind) {
      case LayerKind::Conv:
        if (l.in_channels <= 0 || l.out_channels <= 0) {
          add("conv '" + l.name + "': channel counts must be positive");
        }
        if (l.kernel <= 0 || l.stride <= 0 || l.padding < 0) {
          add("conv '" + l.name + "': invalid geometry (kernel " + std::to_string(l.kernel) +
              ", stride " + std::to_string(l.stride) + ", padding " +
              std::to_string(l.padding) + ")");
        }
        if (channels == 0 && first_input == 0) first_input = l.in_channels;
        if (channels != 0 && channels != l.in_channels) {
          add("conv '" + l.name + "': expects " + std::to_string(l.in_channels) +
              " input channels but receives " + std::to_string(channels));
        }
        channels = l.out_channels;
        scaling.down *= std::max(l.stride, 1);
        break;
      case LayerKind::Relu:
        break;
      case LayerKind::MaxPool:
      case LayerKind::AvgPool:
        if (l.kernel <= 0 || l.stride <= 0) {
          add("pool '" + l.name + "': window and stride must be positive");
        }
        scaling.down *= std::max(l.stride, 1);
        break;
      case LayerKind::Upsample:
        if (l.factor <= 0) add("upsample '" + l.name + "': factor must be positive");
        scaling.up *= std::max(l.factor, 1);
        break;
      case LayerKind::Residual: {
        if (l.body.empty()) add("residual block '" + l.name + "' has an empty body");
        if (channels == 0) {
          add("residual block '" + l.name + "' must follow a conv so its input channels are known");
        }
        const int in = channels;
        int body_channels = channels;
        Scaling body_scaling;
        walk(l.body, body_channels, body_scaling);
        if (l.projection.size() > 1) {
          add("residual block '" + l.name + "' has more than one projection");
        }
        if (l.projection.empty()) {
          if (body_channels != in) {
            add("residual block '" + l.name + "': body outputs " + std::to_string(body_channels) +
                " channels but the identity skip carries " + std::to_string(in));
          }
          if (!(body_scaling == Scaling{})) {
            add("residual block '" + l.name + "': body changes spatial size but the skip is "
                "an identity");
          }
        } else {
          const LayerSpec& p = l.projection.front();
          if (p.kind != LayerKind::Conv) {
            add("residual block '" + l.name + "': projection '" + p.name + "' must be a conv");
          }
          int skip_channels = in;
          Scaling skip_scaling;
          layer(p, skip_channels, skip_scaling);
          if (skip_channels != body_channels) {
            add("residual block '" + l.name + "': projection outputs " +
                std::to_string(skip_channels) + " channels, body outputs " +
                std::to_string(body_channels));
          }
          if (!(skip_scaling == body_scaling)) {
            add("residual block '" + l.name + "': projection and body scale space differently");
          }
        }
        channels = body_channels;
        scaling.down *= body_scaling.down;
        scaling.up *= body_scaling.up;
        break;
      }
    }
  }
};

void collect_convs(const std::vector<LayerSpec>& layers, std::vector<const LayerSpec*>& out) {
  for (const LayerSpec& l : layers) {
    if (l.kind == LayerKind::Conv) out.push_back(&l);
    if (l.kind == LayerKind::Residual) {
      collect_convs(l.body, out);
      collect_convs(l.projection, out);
    }
  }
}

void collect_names(const std::vector<LayerSpec>& layers, std::vector<std::string>& out) {
  for (const LayerSpec& l : layers) {
    out.push_back(l.name);
    collect_names(l.body, out);
    collect_names(l.projection, out);
  }
}

}  // namespace

std::vector<std::string> validate(const NetworkSpec& spec) {
  Validator v;
  int channels = 0;
  Scaling scaling;
  v.walk(spec.layers, channels, scaling);
  for (const std::string& tap : spec.taps) {
    if (!v.names.count(tap)) v.add("tap '" + tap + "' names no layer in network '" + spec.id + "'");
  }
  return v.violations;
}

Network::Network(NetworkSpec spec) : spec_(std::move(spec)) {
  collect_convs(spec_.layers, convs_);
  collect_names(spec_.layers, names_);
  if (!convs_.empty()) input_channels_ = convs_.front()->in_channels;
  int channels = 0;
  Scaling scaling;
  Validator v;
  v.walk(spec_.layers, channels, scaling);
  output_channels_ = channels;
}

Network build_network(NetworkSpec spec) {
  auto violations = validate(spec);
  if (!violations.empty()) throw ValidationError(std::move(violations));
  return Network(std::move(spec));
}

bool Network::has_layer(const std::string& name) const {
  return std::find(names_.begin(), names_.end(), name) != names_.end();
}

Network Network::with_taps(std::vector<std::string> taps) const {
  NetworkSpec copy = spec_;
  copy.taps = std::move(taps);
  return build_network(std::move(copy));
}

namespace {

Shape layer_shape(const LayerSpec& l, Shape s, const std::set<std::string>& taps,
                  std::map<std::string, Shape>& out);

Shape sequence_shape(const std::vector<LayerSpec>& layers, Shape s,
                     const std::set<std::string>& taps, std::map<std::string, Shape>& out) {
  for (const LayerSpec& l : layers) s = layer_shape(l, s, taps, out);
  return s;
}

Shape layer_shape(const LayerSpec& l, Shape s, const std::set<std::string>& taps,
                  std::map<std::string, Shape>& out) {
  switch (l.kind) {
    case LayerKind::Conv:
      s = Shape{s.n, l.out_channels, window_extent(s.h, l.kernel, l.stride, l.padding, l.name.c_str()),
                window_extent(s.w, l.kernel, l.stride, l.padding, l.name.c_str())};
      break;
    case LayerKind::Relu:
      break;
    case LayerKind::MaxPool:
    case LayerKind::AvgPool:
      s = Shape{s.n, s.c, window_extent(s.h, l.kernel, l.stride, 0, l.name.c_str()),
                window_extent(s.w, l.kernel, l.stride, 0, l.name.c_str())};
      break;
    case LayerKind::Upsample:
      s = Shape{s.n, s.c, s.h * l.factor, s.w * l.factor};
      break;
    case LayerKind::Residual: {
      const Shape body = sequence_shape(l.body, s, taps, out);
      const Shape skip = l.projection.empty() ? s : sequence_shape(l.projection, s, taps, out);
      if (!(body == skip)) {
        throw ShapeError("residual block '" + l.name + "': body output " + body.str() +
                         " differs from skip output " + skip.str());
      }
      s = body;
      break;
    }
  }
  if (taps.count(l.name)) out[l.name] = s;
  return s;
}

}  // namespace

std::map<std::string, Shape> Network::tap_shapes(Shape input) const {
  const std::set<std::string> taps(spec_.taps.begin(), spec_.taps.end());
  std::map<std::string, Shape> out;
  sequence_shape(spec_.layers, input, taps, out);
  return out;
}

// ---------------------------------------------------------------------------
// Forward execution
// ---------------------------------------------------------------------------

namespace {

LayerParams bind_one(Tape<float>& tape, const LayerSpec& conv, const WeightStore& weights,
                     bool trainable) {
  const WeightEntry* w = weights.find(conv.name);
  const WeightEntry* b = weights.find(bias_entry_name(conv.name));
  if (!w) throw LookupError("conv layer '" + conv.name + "' has no weight entry");
  if (!b) throw LookupError("conv layer '" + conv.name + "' has no bias entry");
  const Shape expect{conv.out_channels, conv.in_channels, conv.kernel, conv.kernel};
  if (!(w->tensor->shape() == expect) || w->extents.size() != 4) {
    throw ShapeError("conv layer '" + conv.name + "': weight entry has shape " +
                     w->tensor->shape().str() + ", expected " + expect.str());
  }
  if (b->tensor->size() != conv.out_channels) {
    throw ShapeError("conv layer '" + conv.name + "': bias entry has " +
                     std::to_string(b->tensor->size()) + " values, expected " +
                     std::to_string(conv.out_channels));
  }
  if (trainable) return {tape.variable(*w->tensor), tape.variable(*b->tensor)};
  return {tape.constant(w->tensor), tape.constant(b->tensor)};
}

ParamBinding bind(Tape<float>& tape, const Network& net, const WeightStore& weights,
                  bool trainable) {
  ParamBinding out;
  for (const LayerSpec* conv : net.conv_layers()) {
    out.emplace(conv->name, bind_one(tape, *conv, weights, trainable));
  }
  return out;
}

class Executor {
 public:
  Executor(const ParamBinding& params, const std::vector<std::string>& taps, bool stop)
      : params_(params), taps_(taps.begin(), taps.end()), stop_(stop) {}

  Var run(const std::vector<LayerSpec>& layers, Var x, bool top_level) {
    for (const LayerSpec& l : layers) {
      x = apply(l, x);
      if (taps_.count(l.name)) captured_[l.name] = x;
      if (top_level && stop_ && captured_.size() == taps_.size()) break;
    }
    return x;
  }

  VarBundle take_taps() { return std::move(captured_); }

 private:
  Var apply(const LayerSpec& l, Var x) {
    if (l.kind == LayerKind::Residual) {
      Var body = run(l.body, x, false);
      Var skip = l.projection.empty() ? x : run(l.projection, x, false);
      if (!(body.shape() == skip.shape())) {
        throw ShapeError("layer '" + l.name + "': body output " + body.shape().str() +
                         " differs from skip output " + skip.shape().str());
      }
      Var sum = residual_add(body, skip);
      return l.post_relu ? relu(sum) : sum;
    }
    try {
      switch (l.kind) {
        case LayerKind::Conv: {
          auto it = params_.find(l.name);
          if (it == params_.end()) {
            throw LookupError("conv layer '" + l.name + "' has no bound weights");
          }
          return conv2d(x, it->second.weight, it->second.bias, l.stride, l.padding);
        }
        case LayerKind::Relu: return relu(x);
        case LayerKind::MaxPool: return pool2d(x, PoolKind::Max, l.kernel, l.stride);
        case LayerKind::AvgPool: return pool2d(x, PoolKind::Average, l.kernel, l.stride);
        case LayerKind::Upsample: return upsample_nearest(x, l.factor);
        case LayerKind::Residual: break;
      }
    } catch (const ShapeError& e) {
      throw ShapeError("layer '" + l.name + "': " + e.what());
    } catch (const GeometryError& e) {
      throw GeometryError("layer '" + l.name + "': " + e.what());
    }
    return x;
  }

  const ParamBinding& params_;
  std::set<std::string> taps_;
  bool stop_;
  VarBundle captured_;
};

}  // namespace

ParamBinding bind_constants(Tape<float>& tape, const Network& net, const WeightStore& weights) {
  return bind(tape, net, weights, false);
}

ParamBinding bind_variables(Tape<float>& tape, const Network& net, const WeightStore& weights) {
  return bind(tape, net, weights, true);
}

ForwardResult forward(const Network& net, const ParamBinding& params, Var input,
                      bool stop_after_taps) {
  if (net.input_channels() != 0 && input.shape().c != net.input_channels()) {
    throw ShapeError("network '" + net.id() + "' expects " +
                     std::to_string(net.input_channels()) + " input channels, got " +
                     input.shape().str());
  }
  Executor exec(params, net.taps(), stop_after_taps && !net.taps().empty());
  Var out = exec.run(net.spec().layers, input, true);
  return {out, exec.take_taps()};
}

VarBundle forward_with_taps(const Network& net, const ParamBinding& params, Var input) {
  return forward(net, params, input, true).taps;
}

FeatureBundle forward_with_taps(const Network& net, const WeightStore& weights,
                                const Tensor& input) {
  Tape<float> tape;
  const ParamBinding params = bind_constants(tape, net, weights);
  FeatureBundle out;
  for (auto& [name, var] : forward_with_taps(net, params, tape.constant(input))) {
    out.emplace(name, var.value());
  }
  return out;
}

Tensor forward_output(const Network& net, const WeightStore& weights, const Tensor& input) {
  Tape<float> tape;
  const ParamBinding params = bind_constants(tape, net, weights);
  return forward(net, params, tape.constant(input)).output.value();
}

WeightStore init_weights(const Network& net, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  WeightStore store;
  store.set_meta("source", "builtin-random");
  store.set_meta("network", net.id());
  store.set_meta("seed", std::to_string(seed));
  store.set_meta("preprocess", "imagenet");
  store.set_meta("scale", "unit");
  store.set_meta("mean", "0.485,0.456,0.406");
  store.set_meta("std", "0.229,0.224,0.225");
  for (const LayerSpec* conv : net.conv_layers()) {
    const int fan_in = conv->in_channels * conv->kernel * conv->kernel;
    std::normal_distribution<float> dist(0.f, std::sqrt(2.f / float(fan_in)));
    Tensor w(Shape{conv->out_channels, conv->in_channels, conv->kernel, conv->kernel});
    for (Index i = 0; i < w.size(); ++i) w[i] = dist(rng);
    store.put_conv(conv->name, std::move(w), Tensor(Shape{1, 1, 1, conv->out_channels}));
  }
  return store;
}

std::vector<std::string> validate_weights(const Network& net, const WeightStore& weights) {
  std::vector<std::string> out;
  for (const LayerSpec* conv : net.conv_layers()) {
    const std::vector<std::uint32_t> kernel{std::uint32_t(conv->out_channels),
                                            std::uint32_t(conv->in_channels),
                                            std::uint32_t(conv->kernel),
                                            std::uint32_t(conv->kernel)};
    const std::vector<std::uint32_t> bias{std::uint32_t(conv->out_channels)};
    auto check = [&](const std::string& name, const std::vector<std::uint32_t>& expect) {
      const WeightEntry* e = weights.find(name);
      if (!e) {
        out.push_back("missing weight entry '" + name + "'");
      } else if (e->extents != expect) {
        std::string got, want;
        for (auto x : e->extents) got += (got.empty() ? "" : "x") + std::to_string(x);
        for (auto x : expect) want += (want.empty() ? "" : "x") + std::to_string(x);
        out.push_back("weight entry '" + name + "' has extents [" + got + "], expected [" +
                      want + "]");
      }
    };
    check(conv->name, kernel);
    check(bias_entry_name(conv->name), bias);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Built-in architectures
// ---------------------------------------------------------------------------

namespace {

NetworkSpec vgg19_features() {
  NetworkSpec spec{"vgg19-features", NetworkRole::Encoder, {}, {}};
  const int blocks[5] = {2, 2, 4, 4, 4};
  const int widths[5] = {64, 128, 256, 512, 512};
  int in = 3;
  for (int b = 0; b < 5; ++b) {
    for (int i = 1; i <= blocks[b]; ++i) {
      const std::string suffix = std::to_string(b + 1) + "_" + std::to_string(i);
      spec.layers.push_back(LayerSpec::conv("conv" + suffix, in, widths[b], 3, 1, 1));
      spec.layers.push_back(LayerSpec::relu("relu" + suffix));
      in = widths[b];
    }
    spec.layers.push_back(LayerSpec::max_pool("pool" + std::to_string(b + 1), 2, 2));
  }
  spec.taps = {"conv1_1", "conv2_1", "conv3_1", "conv4_1", "conv4_2", "conv5_1",
               "relu1_1", "relu2_1", "relu3_1", "relu4_1"};
  return spec;
}

// Four-stage VGG-shaped fixture at desk scale; same layer vocabulary as VGG-19.
NetworkSpec vgg_tiny() {
  NetworkSpec spec{"vgg-tiny", NetworkRole::Encoder, {}, {}};
  auto& L = spec.layers;
  L.push_back(LayerSpec::conv("conv1_1", 3, 8, 3));
  L.push_back(LayerSpec::relu("relu1_1"));
  L.push_back(LayerSpec::conv("conv1_2", 8, 8, 3));
  L.push_back(LayerSpec::relu("relu1_2"));
  L.push_back(LayerSpec::max_pool("pool1", 2, 2));
  L.push_back(LayerSpec::conv("conv2_1", 8, 16, 3));
  L.push_back(LayerSpec::relu("relu2_1"));
  L.push_back(LayerSpec::conv("conv2_2", 16, 16, 3));
  L.push_back(LayerSpec::relu("relu2_2"));
  L.push_back(LayerSpec::max_pool("pool2", 2, 2));
  L.push_back(LayerSpec::conv("conv3_1", 16, 32, 3));
  L.push_back(LayerSpec::relu("relu3_1"));
  L.push_back(LayerSpec::max_pool("pool3", 2, 2));
  L.push_back(LayerSpec::conv("conv4_1", 32, 32, 3));
  L.push_back(LayerSpec::relu("relu4_1"));
  spec.taps = {"conv1_1", "conv2_1", "conv3_1", "conv4_1",
               "relu1_1", "relu2_1", "relu3_1", "relu4_1"};
  return spec;
}

LayerSpec basic_block(const std::string& name, int in, int out, int stride) {
  std::vector<LayerSpec> body{LayerSpec::conv(name + "a", in, out, 3, stride, 1),
                              LayerSpec::relu(name + "a_relu"),
                              LayerSpec::conv(name + "b", out, out, 3, 1, 1)};
  std::optional<LayerSpec> projection;
  if (stride != 1 || in != out) projection = LayerSpec::conv(name + "p", in, out, 1, stride, 0);
  return LayerSpec::residual(name, std::move(body), std::move(projection), true);
}

// Stem plus stages conv2_x, conv3_x, conv4_x of two basic blocks each; the
// block named convS_2 is the final activation of stage S.
NetworkSpec resnet_small() {
  NetworkSpec spec{"resnet-small", NetworkRole::Encoder, {}, {}};
  auto& L = spec.layers;
  L.push_back(LayerSpec::conv("conv1", 3, 8, 3, 1, 1));
  L.push_back(LayerSpec::relu("relu1"));
  L.push_back(basic_block("conv2_1", 8, 8, 1));
  L.push_back(basic_block("conv2_2", 8, 8, 1));
  L.push_back(basic_block("conv3_1", 8, 16, 2));
  L.push_back(basic_block("conv3_2", 16, 16, 1));
  L.push_back(basic_block("conv4_1", 16, 32, 2));
  L.push_back(basic_block("conv4_2", 32, 32, 1));
  spec.taps = {"relu1", "conv2_2", "conv3_2", "conv4_2"};
  return spec;
}

// Three convs, two residual blocks, then upsampling and an output conv.
NetworkSpec transform_toy() {
  NetworkSpec spec{"transform-toy", NetworkRole::Transformer, {}, {}};
  auto& L = spec.layers;
  L.push_back(LayerSpec::conv("conv1", 3, 8, 3, 1, 1));
  L.push_back(LayerSpec::relu("relu1"));
  L.push_back(LayerSpec::conv("conv2", 8, 16, 3, 2, 1));
  L.push_back(LayerSpec::relu("relu2"));
  L.push_back(LayerSpec::conv("conv3", 16, 16, 3, 1, 1));
  L.push_back(LayerSpec::relu("relu3"));
  for (const char* name : {"res1", "res2"}) {
    std::vector<LayerSpec> body{LayerSpec::conv(std::string(name) + "a", 16, 16, 3, 1, 1),
                                LayerSpec::relu(std::string(name) + "a_relu"),
                                LayerSpec::conv(std::string(name) + "b", 16, 16, 3, 1, 1)};
    L.push_back(LayerSpec::residual(name, std::move(body), std::nullopt, false));
  }
  L.push_back(LayerSpec::upsample("up", 2));
  L.push_back(LayerSpec::conv("conv_out", 16, 3, 3, 1, 1));
  return spec;
}

NetworkSpec fixture_2layer() {
  NetworkSpec spec{"fixture-2layer", NetworkRole::Encoder, {}, {}};
  spec.layers.push_back(LayerSpec::conv("conv1", 3, 4, 3, 1, 1));
  spec.layers.push_back(LayerSpec::relu("relu1"));
  spec.taps = {"relu1"};
  return spec;
}

}  // namespace

std::vector<std::string> builtin_ids() {
  return {"vgg19-features", "vgg-tiny", "resnet-small", "transform-toy", "fixture-2layer"};
}

NetworkSpec builtin_spec(const std::string& id) {
  if (id == "vgg19-features") return vgg19_features();
  if (id == "vgg-tiny") return vgg_tiny();
  if (id == "resnet-small") return resnet_small();
  if (id == "transform-toy") return transform_toy();
  if (id == "fixture-2layer") return fixture_2layer();
  throw LookupError("unknown network id '" + id + "'");
}

NetworkSpec truncate_spec(const NetworkSpec& spec, const std::string& last_layer) {
  NetworkSpec out{spec.id + ":" + last_layer, spec.role, {}, {last_layer}};
  for (const LayerSpec& l : spec.layers) {
    out.layers.push_back(l);
    if (l.name == last_layer) return out;
  }
  throw LookupError("network '" + spec.id + "' has no top-level layer '" + last_layer + "'");
}

NetworkSpec mirror_decoder_spec(const NetworkSpec& encoder) {
  NetworkSpec out{encoder.id + ":decoder", NetworkRole::Decoder, {}, {}};
  std::vector<const LayerSpec*> reversed;
  for (const LayerSpec& l : encoder.layers) reversed.insert(reversed.begin(), &l);
  std::size_t convs_left = 0;
  for (const LayerSpec* l : reversed) convs_left += l->kind == LayerKind::Conv;
  for (const LayerSpec* l : reversed) {
    switch (l->kind) {
      case LayerKind::Conv:
        out.layers.push_back(LayerSpec::conv("dec_" + l->name, l->out_channels, l->in_channels,
                                             l->kernel, 1, l->kernel / 2));
        if (--convs_left > 0) out.layers.push_back(LayerSpec::relu("dec_" + l->name + "_relu"));
        break;
      case LayerKind::MaxPool:
      case LayerKind::AvgPool:
        out.layers.push_back(LayerSpec::upsample("dec_" + l->name, l->stride));
        break;
      case LayerKind::Relu:
        break;
      case LayerKind::Upsample:
      case LayerKind::Residual:
        throw ContractError("mirror_decoder_spec supports conv/relu/pool encoders only; '" +
                            l->name + "' is " + layer_kind_name(l->kind));
    }
  }
  return out;
}

}  // namespace nst
