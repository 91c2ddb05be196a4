#include "doctest.h"

#include <cmath>
#include <random>

#include <Eigen/Eigenvalues>

#include "nst/losses.hpp"
#include "support/loss_cases.hpp"
#include "support/oracles.hpp"

using namespace nst;
using nst::testing::random_tensor;
using VarBundle = std::map<std::string, Var>;

namespace {

// ch0 = [1, 2], ch1 = [3, 4] as a 1×2×1×2 feature.
Tensor hand_feature() { return Tensor({1, 2, 1, 2}, {1, 2, 3, 4}); }

float loss_value(const std::function<Var(Tape<float>&)>& f) {
  Tape<float> tape;
  return f(tape).value().item();
}

}  // namespace

TEST_CASE("gram hand case") {
  const auto g = gram_matrix(hand_feature(), false);
  CHECK(g.values(0, 0) == 5.f);
  CHECK(g.values(0, 1) == 11.f);
  CHECK(g.values(1, 0) == 11.f);
  CHECK(g.values(1, 1) == 25.f);
  const auto n = gram_matrix(hand_feature(), true);
  CHECK(n.values(0, 0) == 1.25f);
  CHECK(n.values(0, 1) == 2.75f);
  CHECK(n.values(1, 1) == 6.25f);
  CHECK(gram_matrix(Tensor({1, 3, 4, 4}), false).values.isZero());
  Tape<float> tape;
  CHECK_THROWS_AS(gram(tape.constant(Tensor({1, 0, 2, 2})), false), ShapeError);
  CHECK_THROWS_AS(gram(tape.constant(Tensor({2, 3, 2, 2})), false), ShapeError);
}

TEST_CASE("gram matches the double-loop oracle exactly and is symmetric PSD") {
  std::mt19937_64 rng(31);
  std::uniform_int_distribution<int> c(1, 8), hw(1, 16);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor f = random_tensor<float>({1, c(rng), hw(rng), hw(rng)}, rng, -2.0, 2.0);
    Tape<float> tape;
    const Tensor g = gram(tape.constant(f), false).value();
    CHECK(g == testing::naive_gram(f));
    const auto m = gram_matrix(f, false);
    CHECK(m.values == m.values.transpose());
    const Eigen::MatrixXd md = m.values.cast<double>();
    const double lowest = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(md).eigenvalues().minCoeff();
    CHECK(lowest >= -1e-5 * md.trace());
  }
}

TEST_CASE("smoothing transforms") {
  Tape<float> tape;
  SUBCASE("softmax of a constant 2-channel map is uniform") {
    const Tensor out = smooth(Tensor::constant({1, 2, 3, 3}, 7.f), Smoothing::softmax());
    for (float v : out.values()) CHECK(v == doctest::Approx(0.5f));
  }
  SUBCASE("softmax of [0, 1] across channels") {
    const Tensor out = smooth(Tensor({1, 2, 1, 1}, {0.f, 1.f}), Smoothing::softmax());
    CHECK(std::abs(out[0] - 0.2689f) < 1e-4);
    CHECK(std::abs(out[1] - 0.7311f) < 1e-4);
  }
  SUBCASE("definitions") {
    CHECK(smooth(Tensor::scalar(5.f), Smoothing::scale(0.001))[0] == doctest::Approx(0.005f));
    CHECK(smooth(Tensor::scalar(0.f), Smoothing::tanh())[0] == 0.f);
    CHECK(smooth(Tensor::scalar(1.f), Smoothing::softsign())[0] == 0.5f);
    CHECK(smooth(Tensor::scalar(3.f), Smoothing::none())[0] == 3.f);
  }
  SUBCASE("softmax sums to one per location") {
    std::mt19937_64 rng(2);
    const Tensor out = smooth(random_tensor<float>({1, 6, 4, 5}, rng, -5, 5), Smoothing::softmax());
    for (Index p = 0; p < 20; ++p) {
      float s = 0;
      for (Index c = 0; c < 6; ++c) s += out.plane(0, c)[p];
      CHECK(std::abs(s - 1.f) < 1e-6);
    }
  }
  SUBCASE("softmax raises the entropy of a peaky map") {
    Tensor peaky({1, 8, 4, 4});
    for (Index p = 0; p < 16; ++p) peaky.plane(0, 0)[p] = 10.f;
    const double before = mean_channel_entropy(peaky);
    const double after = mean_channel_entropy(smooth(peaky, Smoothing::softmax()));
    CHECK(before == 0.0);
    CHECK(after > before);
  }
  SUBCASE("bounded and linear transforms") {
    std::mt19937_64 rng(3);
    const Tensor x = random_tensor<float>({1, 3, 6, 6}, rng, -8, 8);
    for (auto s : {Smoothing::tanh(), Smoothing::softsign()}) {
      const Tensor y = smooth(x, s);
      for (float v : y.values()) {
        CHECK(v > -1.f);
        CHECK(v < 1.f);
      }
    }
    const Tensor a = smooth(x, Smoothing::scale(0.25));
    for (Index i = 0; i < x.size(); ++i) CHECK(a[i] == 0.25f * x[i]);
  }
  SUBCASE("names round-trip") {
    for (const auto& s : testing::all_smoothings()) CHECK(Smoothing::parse(s.str()) == s);
    CHECK(Smoothing::parse("scale(0.5)").constant == 0.5);
    CHECK_THROWS_AS(Smoothing::parse("scale(-1)"), ContractError);
    CHECK_THROWS_AS(Smoothing::parse("gelu"), ContractError);
  }
}

TEST_CASE("content loss") {
  const Tensor fx({1, 1, 1, 2}, {1, 2}), fc({1, 1, 1, 2}, {1, 0});
  auto lc = [&](ContentNormalization n) {
    return loss_value([&](Tape<float>& t) {
      return content_loss(t.constant(fx), t.constant(fc), Smoothing::none(), n);
    });
  };
  CHECK(lc(ContentNormalization::None) == 4.f);
  CHECK(lc(ContentNormalization::Half) == 2.f);
  CHECK(lc(ContentNormalization::PerElement) == 2.f);

  std::mt19937_64 rng(4);
  const Tensor x = random_tensor<float>({1, 3, 4, 4}, rng);
  for (const auto& s : testing::all_smoothings())
    for (auto n : {ContentNormalization::None, ContentNormalization::Half,
                   ContentNormalization::PerElement}) {
      CHECK(loss_value([&](Tape<float>& t) {
              return content_loss(t.constant(x), t.constant(x), s, n);
            }) == 0.f);
    }

  SUBCASE("per-element loss scales with k squared") {
    const Tensor y = random_tensor<float>({1, 3, 4, 4}, rng);
    Tensor kx = x, ky = y;
    kx.array() *= 3.f;
    ky.array() *= 3.f;
    auto per = [&](const Tensor& a, const Tensor& b) {
      return loss_value([&](Tape<float>& t) {
        return content_loss(t.constant(a), t.constant(b), Smoothing::none(),
                            ContentNormalization::PerElement);
      });
    };
    CHECK(per(kx, ky) == doctest::Approx(9.f * per(x, y)).epsilon(1e-5));
  }
  Tape<float> tape;
  CHECK_THROWS_AS(content_loss(tape.constant(x), tape.constant(Tensor({1, 3, 4, 5})),
                               Smoothing::none(), ContentNormalization::None),
                  ShapeError);
}

TEST_CASE("style loss") {
  LossConfig cfg;
  cfg.style_taps = {{"t", 1.0}};
  auto ls = [&](const Tensor& x, const Tensor& s) {
    return loss_value([&](Tape<float>& t) {
      return style_loss(VarBundle{{"t", t.constant(x)}}, VarBundle{{"t", t.constant(s)}}, cfg);
    });
  };
  const Tensor zero({1, 2, 1, 2});
  CHECK(ls(hand_feature(), zero) == 892.f);
  cfg.gram_normalization = GramNormalization::Swag;
  CHECK(ls(hand_feature(), zero) == 13.9375f);
  cfg.gram_normalization = GramNormalization::PerElement;
  CHECK(ls(hand_feature(), zero) == doctest::Approx(892.f / 16.f));

  std::mt19937_64 rng(5);
  const Tensor x = random_tensor<float>({1, 4, 5, 5}, rng), y = random_tensor<float>({1, 4, 5, 5}, rng);
  for (auto n : {GramNormalization::None, GramNormalization::PerElement, GramNormalization::Swag}) {
    cfg.gram_normalization = n;
    CHECK(ls(x, x) == 0.f);
    CHECK(ls(x, y) > 0.f);
  }

  SUBCASE("targets agree with the paired form") {
    cfg.gram_normalization = GramNormalization::Swag;
    cfg.smoothing = Smoothing::tanh();
    const auto targets = style_targets<float>({{"t", y}}, cfg);
    const float paired = ls(x, y);
    const float cached =
        loss_value([&](Tape<float>& t) { return style_loss(VarBundle{{"t", t.constant(x)}}, targets, cfg); });
    CHECK(cached == paired);
  }
  SUBCASE("smoothing only where listed") {
    cfg.smoothing = Smoothing::scale(0.001);
    cfg.smoothing_taps = {"other"};
    const float unsmoothed = ls(x, y);
    cfg.smoothing = Smoothing::none();
    CHECK(ls(x, y) == unsmoothed);
  }
  SUBCASE("missing tap") {
    Tape<float> t;
    CHECK_THROWS_AS(style_loss(VarBundle{{"u", t.constant(x)}}, VarBundle{{"t", t.constant(x)}}, cfg),
                    LookupError);
  }
}

TEST_CASE("combine losses") {
  CHECK(combine_losses(2.0, 0.001, 1.0, 1000.0) == doctest::Approx(3.0));
  CHECK(combine_losses(2.0, 5.0, 1.0, 0.0) == 2.0);
  CHECK(combine_losses(0.001, 0.1, 1000.0, 10.0) == doctest::Approx(2.0));
  Tape<float> t;
  CHECK(combine_losses(t.constant(Tensor::scalar(2.f)), t.constant(Tensor::scalar(0.001f)), 1.0,
                       1000.0)
            .value()
            .item() == doctest::Approx(3.f));
}

TEST_CASE("channel statistics") {
  const auto a = channel_stats(Tensor({1, 1, 1, 2}, {0, 2}));
  CHECK(a.mean(0) == 1.f);
  CHECK(a.std(0) == doctest::Approx(1.f));
  const auto b = channel_stats(Tensor({1, 1, 1, 2}, {4, 8}));
  CHECK(b.mean(0) == 6.f);
  CHECK(b.std(0) == doctest::Approx(2.f));
  const auto c = channel_stats(Tensor::constant({1, 1, 3, 3}, 5.f), 1e-5);
  CHECK(c.std(0) == doctest::Approx(1e-5f));
}

TEST_CASE("adain") {
  const Tensor fc({1, 1, 1, 2}, {0, 2}), fs({1, 1, 1, 2}, {4, 8});
  const Tensor out = adain(fc, fs);
  CHECK(out[0] == doctest::Approx(4.f));
  CHECK(out[1] == doctest::Approx(8.f));

  const Tensor flat = adain(Tensor::constant({1, 1, 2, 2}, 3.f), fs);
  for (float v : flat.values()) CHECK(v == doctest::Approx(6.f));

  std::mt19937_64 rng(6);
  const Tensor f = random_tensor<float>({1, 5, 6, 6}, rng, -3, 3);
  const Tensor self = adain(f, f);
  for (Index i = 0; i < f.size(); ++i) CHECK(std::abs(self[i] - f[i]) < 1e-5);

  const Tensor s = random_tensor<float>({1, 5, 3, 9}, rng, 1, 4);
  const auto got = channel_stats(adain(f, s));
  const auto want = channel_stats(s);
  CHECK((got.mean - want.mean).cwiseAbs().maxCoeff() < 1e-5);
  CHECK((got.std - want.std).cwiseAbs().maxCoeff() < 1e-5);

  CHECK_THROWS_AS(adain(f, Tensor({1, 4, 3, 3})), ShapeError);
}

TEST_CASE("adain loss") {
  LossConfig cfg;
  cfg.adain_content_tap = "relu4_1";
  cfg.style_taps = {{"relu1_1", 1}, {"relu2_1", 1}};
  std::mt19937_64 rng(7);
  const Tensor t = random_tensor<float>({1, 3, 4, 4}, rng);
  const Tensor a = random_tensor<float>({1, 1, 4, 4}, rng);
  const Tensor b = random_tensor<float>({1, 2, 2, 2}, rng);

  SUBCASE("matched features give zero") {
    Tape<float> tape;
    const VarBundle dec{{"relu4_1", tape.constant(t)}, {"relu1_1", tape.constant(a)},
                        {"relu2_1", tape.constant(b)}};
    const auto l = adain_loss(dec, tape.constant(t), {{"relu1_1", a}, {"relu2_1", b}}, cfg);
    CHECK(l.content.value().item() == 0.f);
    CHECK(l.style.value().item() == 0.f);
    CHECK(l.total.value().item() == 0.f);
  }
  SUBCASE("a mean shift of 3 on one channel gives ls = 3") {
    Tensor shifted = a;
    shifted.array() += 3.f;
    Tape<float> tape;
    const VarBundle dec{{"relu4_1", tape.constant(t)}, {"relu1_1", tape.constant(shifted)},
                        {"relu2_1", tape.constant(b)}};
    const auto l = adain_loss(dec, tape.constant(t), {{"relu1_1", a}, {"relu2_1", b}}, cfg);
    CHECK(l.style.value().item() == doctest::Approx(3.f).epsilon(1e-5));
    cfg.lambda = 0;
    const auto l0 = adain_loss(dec, tape.constant(t), {{"relu1_1", a}, {"relu2_1", b}}, cfg);
    CHECK(l0.total.value().item() == l0.content.value().item());
  }
  SUBCASE("missing tap") {
    Tape<float> tape;
    const VarBundle dec{{"relu4_1", tape.constant(t)}};
    CHECK_THROWS_AS(adain_loss(dec, tape.constant(t), {{"relu1_1", a}, {"relu2_1", b}}, cfg),
                    LookupError);
  }
}

TEST_CASE("feature interpolation") {
  const Tensor fc({1, 1, 1, 2}, {0, 2}), fs({1, 1, 1, 2}, {4, 8});
  CHECK(interpolate_features(fc, fs, 0.0) == fc);
  CHECK(interpolate_features(fc, fs, 1.0) == adain(fc, fs));
  const Tensor mid = interpolate_features(fc, fs, 0.5);
  CHECK(mid[0] == doctest::Approx(2.f));
  CHECK(mid[1] == doctest::Approx(5.f));
  CHECK_THROWS_AS(interpolate_features(fc, fs, 1.5), ContractError);
  CHECK_THROWS_AS(interpolate_features(fc, fs, -0.1), ContractError);
}

TEST_CASE("every loss is non-negative on random inputs") {
  std::mt19937_64 rng(8);
  LossConfig cfg;
  cfg.style_taps = {{"t", 2.0}};
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = random_tensor<float>({1, 3, 4, 4}, rng, -3, 3);
    const Tensor y = random_tensor<float>({1, 3, 4, 4}, rng, -3, 3);
    for (const auto& s : testing::all_smoothings()) {
      cfg.smoothing = s;
      Tape<float> t;
      CHECK(content_loss(t.constant(x), t.constant(y), s, ContentNormalization::Half).value().item() >= 0.f);
      CHECK(style_loss(VarBundle{{"t", t.constant(x)}}, VarBundle{{"t", t.constant(y)}}, cfg)
                .value()
                .item() >= 0.f);
    }
  }
}

TEST_CASE("loss gradients match finite differences") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 3; ++trial) {
    for (const auto& c : testing::loss_cases(rng)) {
      CAPTURE(c.name);
      const auto x = testing::check_input(testing::kCheckShape, rng);
      CHECK(testing::gradient_error(c.fn, x) < 1e-3);
    }
  }
}

TEST_CASE("mean channel entropy") {
  CHECK(mean_channel_entropy(Tensor({1, 4, 2, 2})) == 0.0);
  CHECK(mean_channel_entropy(Tensor::constant({1, 4, 2, 2}, -1.f)) == doctest::Approx(1.0));
}

TEST_CASE("loss config validation names fields") {
  LossConfig cfg;
  CHECK(cfg.validate().empty());
  cfg.beta = -1;
  cfg.style_taps[0].weight = -2;
  const auto v = cfg.validate();
  CHECK(v.size() == 2);
  CHECK(v[0].find("loss.beta") != std::string::npos);
}
