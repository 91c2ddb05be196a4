#include "doctest.h"

#include <filesystem>
#include <random>

#include "nst/fileio.hpp"
#include "nst/network.hpp"
#include "support/oracles.hpp"
#include "support/stores.hpp"

using namespace nst;
using nst::testing::random_tensor;

namespace {

bool mentions(const std::vector<std::string>& violations, const std::string& needle) {
  for (const auto& v : violations)
    if (v.find(needle) != std::string::npos) return true;
  return false;
}

WeightStore zero_weights(const Network& net) {
  WeightStore store;
  for (const LayerSpec* c : net.conv_layers()) {
    store.put_conv(c->name, Tensor(Shape{c->out_channels, c->in_channels, c->kernel, c->kernel}),
                   Tensor(Shape{1, 1, 1, c->out_channels}));
  }
  return store;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("nst_test_" + name);
}

}  // namespace

TEST_CASE("vgg19-features validates with 16 convs and the standard VGG-19 geometry") {
  const Network net = build_network(builtin_spec("vgg19-features"));
  CHECK(net.conv_layers().size() == 16);
  for (const char* name : {"conv1_1", "conv2_1", "conv3_1", "conv4_1", "conv5_1", "relu4_1"}) {
    CHECK(net.has_layer(name));
  }
  const auto shapes = net.tap_shapes({1, 3, 256, 256});
  CHECK(shapes.at("conv1_1") == Shape{1, 64, 256, 256});
  CHECK(shapes.at("conv2_1") == Shape{1, 128, 128, 128});
  CHECK(shapes.at("conv3_1") == Shape{1, 256, 64, 64});
  CHECK(shapes.at("conv4_1") == Shape{1, 512, 32, 32});
  CHECK(shapes.at("conv5_1") == Shape{1, 512, 16, 16});
}

TEST_CASE("every built-in spec validates") {
  for (const auto& id : builtin_ids()) {
    CAPTURE(id);
    CHECK(validate(builtin_spec(id)).empty());
  }
  CHECK_THROWS_AS(builtin_spec("vgg16"), LookupError);
}

TEST_CASE("resnet-small has three residual stages of two blocks") {
  const Network net = build_network(builtin_spec("resnet-small"));
  for (const char* block : {"conv2_1", "conv2_2", "conv3_1", "conv3_2", "conv4_1", "conv4_2"}) {
    CHECK(net.has_layer(block));
  }
  const auto shapes = net.tap_shapes({1, 3, 64, 64});
  CHECK(shapes.at("conv2_2") == Shape{1, 8, 64, 64});
  CHECK(shapes.at("conv3_2") == Shape{1, 16, 32, 32});
  CHECK(shapes.at("conv4_2") == Shape{1, 32, 16, 16});
}

TEST_CASE("validation") {
  SUBCASE("empty spec is valid with no taps") {
    const Network net = build_network(NetworkSpec{"empty", NetworkRole::Encoder, {}, {}});
    CHECK(net.conv_layers().empty());
    Tensor x({1, 3, 4, 4});
    CHECK(forward_with_taps(net, WeightStore{}, x).empty());
  }
  SUBCASE("unknown tap is named") {
    NetworkSpec spec = builtin_spec("fixture-2layer");
    spec.taps.push_back("relu9");
    CHECK(mentions(validate(spec), "relu9"));
    CHECK_THROWS_AS(build_network(spec), ValidationError);
  }
  SUBCASE("every violation is reported") {
    NetworkSpec spec{"bad", NetworkRole::Encoder, {}, {"nowhere"}};
    spec.layers = {LayerSpec::conv("a", 3, 4, 3), LayerSpec::relu("a"),
                   LayerSpec::conv("b", 5, 4, 3)};
    const auto v = validate(spec);
    CHECK(v.size() == 3);
    CHECK(mentions(v, "duplicate layer name 'a'"));
    CHECK(mentions(v, "conv 'b': expects 5 input channels but receives 4"));
    CHECK(mentions(v, "nowhere"));
    try {
      build_network(spec);
      FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
      CHECK(e.violations() == v);
    }
  }
  SUBCASE("residual skip must match the body") {
    NetworkSpec spec{"res", NetworkRole::Encoder, {}, {}};
    spec.layers = {LayerSpec::conv("c", 3, 4, 3),
                   LayerSpec::residual("r", {LayerSpec::conv("r_a", 4, 8, 3)})};
    CHECK(mentions(validate(spec), "identity skip"));
    spec.layers[1] = LayerSpec::residual("r", {LayerSpec::conv("r_a", 4, 4, 3, 2)});
    CHECK(mentions(validate(spec), "spatial"));
    spec.layers[1] = LayerSpec::residual("r", {LayerSpec::conv("r_a", 4, 8, 3, 2)},
                                         LayerSpec::conv("r_p", 4, 8, 1, 2, 0));
    CHECK(validate(spec).empty());
    spec.layers[1] = LayerSpec::residual("r", {LayerSpec::conv("r_a", 4, 8, 3, 2)},
                                         LayerSpec::conv("r_p", 4, 8, 1, 1, 0));
    CHECK(mentions(validate(spec), "scale space differently"));
  }
  SUBCASE("bad geometry") {
    NetworkSpec spec{"geo", NetworkRole::Encoder, {}, {}};
    spec.layers = {LayerSpec::conv("c", 3, 4, 0), LayerSpec::max_pool("p", 2, 0)};
    CHECK(validate(spec).size() == 2);
  }
}

TEST_CASE("forward through the 2-layer fixture") {
  const Network net = build_network(builtin_spec("fixture-2layer"));
  std::mt19937_64 rng(11);
  const Tensor x = random_tensor<float>({1, 3, 8, 8}, rng);

  SUBCASE("one tap of the computed shape") {
    const auto bundle = forward_with_taps(net, init_weights(net, 1), x);
    REQUIRE(bundle.size() == 1);
    CHECK(bundle.at("relu1").shape() == Shape{1, 4, 8, 8});
    for (float v : bundle.at("relu1").values()) CHECK(v >= 0.f);
  }
  SUBCASE("zero weights give zero activations") {
    const auto bundle = forward_with_taps(net, zero_weights(net), x);
    CHECK(bundle.at("relu1") == Tensor({1, 4, 8, 8}));
  }
  SUBCASE("missing weight entry is a lookup error naming the layer") {
    WeightStore empty;
    CHECK_THROWS_WITH_AS(forward_with_taps(net, empty, x), doctest::Contains("conv1"),
                         LookupError);
    CHECK(mentions(validate_weights(net, empty), "conv1"));
  }
  SUBCASE("wrong weight shape") {
    WeightStore w;
    w.put_conv("conv1", Tensor({4, 3, 1, 1}), Tensor({1, 1, 1, 4}));
    CHECK(mentions(validate_weights(net, w), "expected [4x3x3x3]"));
    CHECK_THROWS_AS(forward_with_taps(net, w, x), ShapeError);
  }
  SUBCASE("input channel mismatch") {
    CHECK_THROWS_AS(forward_with_taps(net, init_weights(net, 1), Tensor({1, 2, 8, 8})),
                    ShapeError);
  }
  SUBCASE("too small an input names the layer") {
    NetworkSpec spec{"pool", NetworkRole::Encoder,
                     {LayerSpec::conv("c", 3, 2, 3), LayerSpec::max_pool("pool1", 4, 4)}, {}};
    const Network pn = build_network(spec);
    CHECK_THROWS_WITH_AS(forward_output(pn, init_weights(pn, 1), Tensor({1, 3, 2, 2})),
                         doctest::Contains("pool1"), GeometryError);
  }
}

TEST_CASE("identity-kernel network returns its input") {
  NetworkSpec spec{"id", NetworkRole::Encoder, {LayerSpec::conv("conv1", 3, 3, 3)}, {"conv1"}};
  const Network net = build_network(spec);
  Tensor w({3, 3, 3, 3});
  for (Index c = 0; c < 3; ++c) w(c, c, 1, 1) = 1.f;
  WeightStore store;
  store.put_conv("conv1", w, Tensor({1, 1, 1, 3}));
  std::mt19937_64 rng(5);
  const Tensor x = random_tensor<float>({1, 3, 6, 9}, rng);
  CHECK(forward_with_taps(net, store, x).at("conv1") == x);
}

TEST_CASE("forward passes are deterministic") {
  for (const char* id : {"vgg-tiny", "resnet-small", "transform-toy"}) {
    CAPTURE(id);
    const Network net = build_network(builtin_spec(id));
    const WeightStore w = init_weights(net, 42);
    CHECK(w == init_weights(net, 42));
    std::mt19937_64 rng(9);
    const Tensor x = random_tensor<float>({1, 3, 32, 32}, rng);
    CHECK(forward_with_taps(net, w, x) == forward_with_taps(net, w, x));
    CHECK(forward_output(net, w, x) == forward_output(net, w, x));
  }
}

TEST_CASE("stride-1 pad-1 conv tap is translation covariant in the interior") {
  const Network net = build_network(builtin_spec("fixture-2layer"));
  const WeightStore w = init_weights(net, 3);
  std::mt19937_64 rng(17);
  const Tensor x = random_tensor<float>({1, 3, 12, 12}, rng);
  Tensor shifted(x.shape());
  for (Index c = 0; c < 3; ++c)
    for (Index i = 0; i < 12; ++i)
      for (Index j = 0; j < 12; ++j) shifted(0, c, i, j) = x(0, c, i, (j + 11) % 12);
  const Tensor a = forward_with_taps(net, w, x).at("relu1");
  const Tensor b = forward_with_taps(net, w, shifted).at("relu1");
  for (Index c = 0; c < 4; ++c)
    for (Index i = 1; i < 11; ++i)
      for (Index j = 2; j < 11; ++j) CHECK(b(0, c, i, j) == a(0, c, i, j - 1));
}

TEST_CASE("residual block with a zero body is the identity or the projection") {
  std::mt19937_64 rng(23);
  const Tensor x = random_tensor<float>({1, 3, 8, 8}, rng, 0.0, 1.0);

  NetworkSpec spec{"res", NetworkRole::Encoder, {}, {"r"}};
  spec.layers = {LayerSpec::conv("stem", 3, 3, 3),
                 LayerSpec::residual("r", {LayerSpec::conv("r_a", 3, 3, 3), LayerSpec::relu("r_relu"),
                                           LayerSpec::conv("r_b", 3, 3, 3)},
                                     std::nullopt, false)};
  Network net = build_network(spec);
  WeightStore w = zero_weights(net);
  Tensor id({3, 3, 3, 3});
  for (Index c = 0; c < 3; ++c) id(c, c, 1, 1) = 1.f;
  w.put_conv("stem", id, Tensor({1, 1, 1, 3}));
  CHECK(forward_with_taps(net, w, x).at("r") == x);

  spec.layers[1] = LayerSpec::residual("r", {LayerSpec::conv("r_a", 3, 6, 3, 2)},
                                       LayerSpec::conv("r_p", 3, 6, 1, 2, 0), false);
  net = build_network(spec);
  w = zero_weights(net);
  w.put_conv("stem", id, Tensor({1, 1, 1, 3}));
  Tensor proj = random_tensor<float>({6, 3, 1, 1}, rng);
  w.put_conv("r_p", proj, Tensor({1, 1, 1, 6}));
  CHECK(forward_with_taps(net, w, x).at("r") ==
        conv2d(x, proj, Tensor({1, 1, 1, 6}), 2, 0));
}

TEST_CASE("taps are differentiable back to the input") {
  const Network net = build_network(builtin_spec("resnet-small"));
  const WeightStore w = init_weights(net, 8);
  std::mt19937_64 rng(4);
  Tape<float> tape;
  const ParamBinding params = bind_constants(tape, net, w);
  Var x = tape.variable(random_tensor<float>({1, 3, 16, 16}, rng));
  const VarBundle taps = forward_with_taps(net, params, x);
  CHECK(taps.size() == 4);
  const auto grads = tape.backprop(sum(taps.at("conv3_2")).id(), {x.id()});
  CHECK(grads.at(x.id()).shape() == x.shape());
  double norm = 0;
  for (float g : grads.at(x.id()).values()) norm += double(g) * g;
  CHECK(norm > 0);
}

TEST_CASE("stop_after_taps ends at the last tap") {
  const Network net = build_network(builtin_spec("vgg-tiny")).with_taps({"relu2_1"});
  const WeightStore w = init_weights(net, 1);
  Tape<float> tape;
  const ParamBinding params = bind_constants(tape, net, w);
  const auto result = forward(net, params, tape.constant(Tensor({1, 3, 16, 16})), true);
  CHECK(result.output.shape() == Shape{1, 16, 8, 8});
  CHECK_THROWS_AS(net.with_taps({"relu7_1"}), ValidationError);
}

TEST_CASE("truncate and mirror") {
  const NetworkSpec enc = truncate_spec(builtin_spec("vgg-tiny"), "relu2_1");
  const Network encoder = build_network(enc);
  CHECK(encoder.taps() == std::vector<std::string>{"relu2_1"});
  const Network decoder = build_network(mirror_decoder_spec(enc));
  CHECK(decoder.input_channels() == 16);
  CHECK(decoder.output_channels() == 3);
  const Tensor out = forward_output(decoder, init_weights(decoder, 1), Tensor({1, 16, 8, 8}));
  CHECK(out.shape() == Shape{1, 3, 16, 16});
  CHECK_THROWS_AS(truncate_spec(enc, "relu9"), LookupError);
}

TEST_CASE("weight store round trip") {
  std::mt19937_64 rng(2024);
  const auto path = temp_path("roundtrip.nstw");
  for (int trial = 0; trial < 100; ++trial) {
    const WeightStore store = testing::random_store(rng);
    save_weights(store, path);
    const WeightStore loaded = load_weights(path);
    CHECK(loaded == store);
    CHECK(loaded.metadata() == store.metadata());
    CHECK(serialize_weights(loaded) == read_file(path));
  }
  std::filesystem::remove(path);
}

TEST_CASE("three-entry store re-saves byte-identically") {
  const Network net = build_network(builtin_spec("fixture-2layer"));
  WeightStore store = init_weights(net, 7);
  store.put("extra", {2, 3}, Tensor({1, 1, 2, 3}, {1, 2, 3, 4, 5, 6}));
  CHECK(store.entries().size() == 3);
  const auto a = temp_path("a.nstw"), b = temp_path("b.nstw");
  save_weights(store, a);
  save_weights(load_weights(a), b);
  CHECK(read_file(a) == read_file(b));
  CHECK(load_weights(b).meta("mean") == "0.485,0.456,0.406");
  std::filesystem::remove(a);
  std::filesystem::remove(b);
}

TEST_CASE("weight file layout is bit-exact") {
  WeightStore store;
  store.set_meta("k", "v");
  store.put("w", {2}, Tensor({1, 1, 1, 2}, {1.0f, -2.0f}));
  const std::string bytes = serialize_weights(store);
  const std::string expect = std::string("NSTW") + std::string("\x01\x00", 2) +
                             std::string("\x03\x00", 2) + "k=v" +
                             std::string("\x01\x00\x00\x00", 4) + std::string("\x01\x00", 2) +
                             "w" + std::string("\x01", 1) + std::string("\x02\x00\x00\x00", 4) +
                             std::string("\x00\x00\x80\x3f", 4) +
                             std::string("\x00\x00\x00\xc0", 4);
  CHECK(bytes == expect);
}

TEST_CASE("corrupt weight files are rejected by category") {
  WeightStore store;
  store.set_meta("source", "test");
  store.put("conv1", {10}, Tensor({1, 1, 1, 10}));
  const std::string good = serialize_weights(store);
  auto kind_of = [](const std::string& bytes) {
    try {
      parse_weights(bytes);
    } catch (const FormatError& e) {
      return e.kind();
    }
    FAIL("accepted a corrupt file");
    return FormatError::Kind::Malformed;
  };

  std::string bad = good;
  bad[0] = 'X';
  CHECK(kind_of(bad) == FormatError::Kind::BadMagic);

  bad = good;
  bad[4] = 2;
  CHECK(kind_of(bad) == FormatError::Kind::VersionMismatch);

  CHECK(kind_of(good.substr(0, 3)) == FormatError::Kind::Truncated);
  CHECK(kind_of(good.substr(0, 9)) == FormatError::Kind::Truncated);
  CHECK(kind_of(good + "x") == FormatError::Kind::SizeMismatch);

  // 10 values declared, 9 present.
  CHECK_THROWS_WITH_AS(parse_weights(good.substr(0, good.size() - 4)),
                       doctest::Contains("entry 'conv1' truncated"), FormatError);

  bad = good;
  bad[bad.size() - 1] = '\x7f';
  bad[bad.size() - 2] = '\xc0';
  CHECK(kind_of(bad) == FormatError::Kind::Malformed);  // NaN

  CHECK_THROWS_AS(load_weights(temp_path("does_not_exist.nstw")), IoError);
}
