// One PASS/FAIL line per primary acceptance criterion.
//
//   acceptance [--known-failure <name>]... [--only <name>]...
//
// Exits 0 when every criterion passes, except those named with
// --known-failure, which must still fail (an unexpected pass is reported and
// exits nonzero so the list stays honest).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "nst/fileio.hpp"
#include "nst/pipelines.hpp"
#include "nst/runner.hpp"
#include "nst/weights.hpp"
#include "support/fixtures.hpp"
#include "support/loss_cases.hpp"
#include "support/oracles.hpp"
#include "support/stores.hpp"

using namespace nst;
namespace fs = std::filesystem;
using nst::testing::content_image;
using nst::testing::data_path;
using nst::testing::random_tensor;
using nst::testing::style_image;

namespace {

// Tolerances and budgets.
constexpr int kGradientTrials = 20;
constexpr double kGradientTolerance = 1e-3;
constexpr double kGradientSeconds = 60;
constexpr int kGramInputs = 50;
constexpr int kAdainPairs = 100;
constexpr double kAdainTolerance = 1e-5;
constexpr double kMidpointTolerance = 1e-6;
constexpr int kDescentIterations = 200;
constexpr double kDescentRatio = 0.10;
constexpr double kDescentSeconds = 120;
constexpr double kSwagStyleWeight = 1e12;
constexpr int kSwagPairs = 4;
constexpr int kSwagWinsNeeded = 3;
constexpr double kSwagSeconds = 600;
constexpr int kTrainSteps = 200;
constexpr double kTrainRatio = 0.5;
constexpr double kTrainSeconds = 300;
constexpr int kWeightStores = 100;

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), pattern, v);
  return buf;
}

Outcome gradient_correctness() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  double worst = 0;
  std::string worst_case;
  int checks = 0, failures = 0;
  std::size_t cases = 0;
  for (int trial = 0; trial < kGradientTrials; ++trial) {
    const auto list = testing::loss_cases(rng);
    cases = list.size();
    for (const auto& c : list) {
      const auto x = testing::check_input(testing::kCheckShape, rng);
      const double e = testing::gradient_error(c.fn, x);
      ++checks;
      if (!(e < kGradientTolerance)) ++failures;
      if (!(e <= worst)) {
        worst = e;
        worst_case = c.name;
      }
    }
  }
  const double secs = seconds_since(t0);
  return {failures == 0 && secs < kGradientSeconds,
          std::to_string(cases) + " loss paths x " + std::to_string(kGradientTrials) +
              " trials, max rel err " + fmt("%.2e", worst) + " (" + worst_case + "), " +
              std::to_string(failures) + " over 1e-3, " + fmt("%.1f", secs) + " s"};
}

Outcome gram_oracle() {
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<int> c(1, 8), hw(1, 16);
  int exact = 0;
  for (int i = 0; i < kGramInputs; ++i) {
    const Tensor f = random_tensor<float>({1, c(rng), hw(rng), hw(rng)}, rng, -2.0, 2.0);
    Tape<float> tape;
    if (gram(tape.constant(f), false).value() == testing::naive_gram(f)) ++exact;
  }
  const auto hand = gram_matrix(Tensor({1, 2, 1, 2}, {1, 2, 3, 4}), false).values;
  const bool hand_ok = hand(0, 0) == 5.f && hand(0, 1) == 11.f && hand(1, 0) == 11.f && hand(1, 1) == 25.f;
  return {exact == kGramInputs && hand_ok,
          std::to_string(exact) + "/" + std::to_string(kGramInputs) + " bit-exact, hand case " +
              (hand_ok ? "[[5,11],[11,25]]" : "wrong")};
}

// Population mean and std per channel, in double.
void channel_moments(const Tensor& f, std::vector<double>& mean, std::vector<double>& sd) {
  const Shape s = f.shape();
  mean.assign(std::size_t(s.c), 0.0);
  sd.assign(std::size_t(s.c), 0.0);
  for (Index c = 0; c < s.c; ++c) {
    double m = 0, v = 0;
    for (Index i = 0; i < s.plane(); ++i) m += f.plane(0, c)[i];
    m /= double(s.plane());
    for (Index i = 0; i < s.plane(); ++i) v += (f.plane(0, c)[i] - m) * (f.plane(0, c)[i] - m);
    mean[std::size_t(c)] = m;
    sd[std::size_t(c)] = std::sqrt(v / double(s.plane()));
  }
}

Outcome adain_statistics() {
  std::mt19937_64 rng(505);
  std::uniform_int_distribution<int> c(1, 8), hw(4, 16);
  double worst = 0, worst_self = 0;
  for (int i = 0; i < kAdainPairs; ++i) {
    const int ch = c(rng);
    const Tensor fc = random_tensor<float>({1, ch, hw(rng), hw(rng)}, rng, -3.0, 3.0);
    const Tensor fs = random_tensor<float>({1, ch, hw(rng), hw(rng)}, rng, -2.0, 4.0);
    std::vector<double> om, os, sm, ss;
    channel_moments(adain(fc, fs), om, os);
    channel_moments(fs, sm, ss);
    for (std::size_t k = 0; k < om.size(); ++k) {
      worst = std::max({worst, std::abs(om[k] - sm[k]), std::abs(os[k] - ss[k])});
    }
    const Tensor self = adain(fc, fc);
    worst_self = std::max(worst_self, double((self.array() - fc.array()).abs().maxCoeff()));
  }
  return {worst < kAdainTolerance && worst_self < kAdainTolerance,
          std::to_string(kAdainPairs) + " pairs, max stat err " + fmt("%.2e", worst) +
              ", max |adain(F,F)-F| " + fmt("%.2e", worst_self)};
}

Outcome nst_descent() {
  const auto t0 = Clock::now();
  const Network net = build_network(builtin_spec("vgg-tiny"));
  const WeightStore w = init_weights(net, 0);
  const PreprocessSpec pp = PreprocessSpec::from_metadata(w);
  ImageBasedOptions o;
  o.loss.alpha = 1;
  o.loss.beta = 1000;
  o.loss.content_tap = "conv4_1";
  o.loss.style_taps = {{"conv1_1", 1.0}, {"conv2_1", 1.0}, {"conv3_1", 1.0}, {"conv4_1", 1.0}};
  o.optimizer.kind = OptimizerKind::Lbfgs;
  o.optimizer.max_iterations = kDescentIterations;
  o.range = pp.pixel_range();
  const Tensor content = content_image(0, pp), style = style_image(0, pp);
  const StylizeOutcome r = stylize_image_based(net, w, content, {style}, o);
  bool monotone = true;
  double prev = r.run.initial.total;
  for (const auto& p : r.run.trajectory) {
    if (p.total > prev) monotone = false;
    prev = p.total;
  }
  const double ratio = prev / r.run.initial.total;
  const double secs = seconds_since(t0);
  return {monotone && ratio < kDescentRatio && r.run.trajectory.size() <= std::size_t(kDescentIterations) &&
              secs < kDescentSeconds,
          "vgg-tiny 64x64, " + std::to_string(r.run.trajectory.size()) + " L-BFGS iterations, " +
              (monotone ? "monotone" : "NOT monotone") + ", final/initial " + fmt("%.2e", ratio) + ", " +
              fmt("%.1f", secs) + " s"};
}

Outcome swag_ab() {
  const auto t0 = Clock::now();
  const Network net = build_network(builtin_spec("resnet-small"));
  const WeightStore w = init_weights(net, 0);
  const PreprocessSpec pp = PreprocessSpec::from_metadata(w);
  CompareOptions o = default_compare_options();
  o.kinds = {Smoothing::none(), Smoothing::softmax(), Smoothing::scale(0.001), Smoothing::tanh(),
             Smoothing::softsign()};
  o.base.loss.alpha = 1;
  o.base.loss.beta = kSwagStyleWeight;
  o.base.range = pp.pixel_range();

  bool all_finite = true;
  int entropy_pairs = 0;
  std::vector<int> wins(4, 0);
  std::string entropies;
  for (int k = 0; k < kSwagPairs; ++k) {
    const CompareResult r = swag_ab_compare(net, w, content_image(k, pp), style_image(k, pp), o);
    for (const auto& kind : r.kinds) {
      if (!kind.ok || !std::isfinite(kind.unsmoothed_style)) all_finite = false;
      for (const auto& p : kind.run.trajectory)
        if (!std::isfinite(p.total)) all_finite = false;
    }
    if (!all_finite) continue;
    double raw = 0;
    for (const auto& [tap, v] : r.raw_entropy) raw += v;
    raw /= double(r.raw_entropy.size());
    const double softmax = r.kinds[1].mean_entropy;
    if (softmax > raw) ++entropy_pairs;
    entropies += (entropies.empty() ? "" : " ") + fmt("%.3f", softmax) + "/" + fmt("%.3f", raw);
    const double baseline = r.kinds[0].unsmoothed_style;
    for (std::size_t j = 1; j < r.kinds.size(); ++j) {
      if (r.kinds[j].unsmoothed_style < baseline) ++wins[j - 1];
    }
  }
  bool style_ok = true;
  std::string win_text;
  const char* names[] = {"softmax", "scale", "tanh", "softsign"};
  for (int j = 0; j < 4; ++j) {
    if (wins[std::size_t(j)] < kSwagWinsNeeded) style_ok = false;
    win_text += std::string(j ? " " : "") + names[j] + " " + std::to_string(wins[std::size_t(j)]) + "/" +
                std::to_string(kSwagPairs);
  }
  const double secs = seconds_since(t0);
  return {all_finite && entropy_pairs == kSwagPairs && style_ok && secs < kSwagSeconds,
          std::string(all_finite ? "all 5 kinds finite" : "NON-FINITE run") + "; softmax entropy above none on " +
              std::to_string(entropy_pairs) + "/" + std::to_string(kSwagPairs) + " pairs (softmax/none " +
              entropies + "); lower unsmoothed style loss than none: " + win_text + " (need " +
              std::to_string(kSwagWinsNeeded) + "); " + fmt("%.0f", secs) + " s"};
}

Outcome interpolation_endpoints() {
  std::mt19937_64 rng(15);
  bool zero_ok = true, one_ok = true;
  double worst_mid = 0;
  for (int i = 0; i < 20; ++i) {
    const Tensor fc = random_tensor<float>({1, 6, 7, 5}, rng, -3.0, 3.0);
    const Tensor fs = random_tensor<float>({1, 6, 4, 9}, rng, -1.0, 5.0);
    const Tensor t = adain(fc, fs);
    zero_ok = zero_ok && interpolate_features(fc, fs, 0.0) == fc;
    one_ok = one_ok && interpolate_features(fc, fs, 1.0) == t;
    const Tensor mid = interpolate_features(fc, fs, 0.5);
    for (Index k = 0; k < fc.size(); ++k) {
      const double want = 0.5 * double(fc[k]) + 0.5 * double(t[k]);
      worst_mid = std::max(worst_mid, std::abs(double(mid[k]) - want));
    }
  }
  return {zero_ok && one_ok && worst_mid < kMidpointTolerance,
          std::string("alpha=0 ") + (zero_ok ? "bit-exact" : "differs") + ", alpha=1 " +
              (one_ok ? "bit-exact" : "differs") + ", alpha=0.5 max err " + fmt("%.2e", worst_mid)};
}

struct TrainCheck {
  Outcome outcome;
  std::optional<TrainResult> result;
};

TrainCheck train_mode(TrainKind kind, const std::vector<Tensor>& corpus, const Tensor& style) {
  const auto t0 = Clock::now();
  TrainOptions o = default_train_options(kind);
  o.steps = kTrainSteps;
  o.seed = 3;
  const Tensor* s = kind == TrainKind::Fast ? &style : nullptr;
  TrainResult a = train_feedforward(corpus, s, o);
  const double secs = seconds_since(t0);
  const TrainResult b = train_feedforward(corpus, s, o);
  const double ratio = a.final_corpus.total / a.initial_corpus.total;
  const bool same = a.weights == b.weights;
  TrainCheck out;
  out.outcome = {ratio < kTrainRatio && same && secs < kTrainSeconds,
                 std::string(to_string(kind)) + " final/initial " + fmt("%.3f", ratio) + " after " +
                     std::to_string(kTrainSteps) + " steps, " + (same ? "deterministic" : "NOT deterministic") +
                     ", " + fmt("%.1f", secs) + " s"};
  out.result = std::move(a);
  return out;
}

std::optional<TrainResult> g_fast_model;

Outcome toy_trainers() {
  const Network loss_net = build_network(builtin_spec("vgg-tiny"));
  const PreprocessSpec pp = PreprocessSpec::from_metadata(init_weights(loss_net, 0));
  const auto corpus = testing::corpus(pp);
  const Tensor style = style_image(0, pp);
  TrainCheck fast = train_mode(TrainKind::Fast, corpus, style);
  TrainCheck dec = train_mode(TrainKind::AdainDecoder, corpus, style);
  g_fast_model = std::move(fast.result);
  return {fast.outcome.pass && dec.outcome.pass, fast.outcome.detail + "; " + dec.outcome.detail};
}

Outcome fully_convolutional() {
  if (!g_fast_model) {
    TrainOptions o = default_train_options(TrainKind::Fast);
    o.steps = 20;
    const Tensor style = style_image(0);
    g_fast_model = train_feedforward(testing::corpus(), &style, o);
  }
  std::mt19937_64 rng(96);
  const Tensor x = random_tensor<float>({1, 3, 96, 96}, rng, -2.0, 2.0);
  try {
    const Tensor y = forward_output(g_fast_model->model, g_fast_model->weights, x);
    const bool ok = y.shape() == Shape{1, 3, 96, 96} && y.all_finite();
    return {ok, "trained at 64x64, output " + y.shape().str() + (y.all_finite() ? ", finite" : ", NON-FINITE")};
  } catch (const std::exception& e) {
    return {false, std::string("threw: ") + e.what()};
  }
}

Outcome weight_format() {
  std::mt19937_64 rng(100);
  int identical = 0;
  const fs::path file = fs::temp_directory_path() / "nst_acceptance_store.nstw";
  for (int i = 0; i < kWeightStores; ++i) {
    const WeightStore s = testing::random_store(rng);
    save_weights(s, file);
    const WeightStore back = load_weights(file);
    if (back == s && serialize_weights(back) == serialize_weights(s) && read_file(file) == serialize_weights(s)) {
      ++identical;
    }
  }
  fs::remove(file);

  WeightStore store;
  store.set_meta("source", "acceptance");
  store.put("conv1", {10}, Tensor({1, 1, 1, 10}));
  const std::string good = serialize_weights(store);
  auto kind_of = [](const std::string& bytes) -> std::optional<FormatError::Kind> {
    try {
      parse_weights(bytes);
    } catch (const FormatError& e) {
      return e.kind();
    }
    return std::nullopt;
  };
  using K = FormatError::Kind;
  std::string magic = good, version = good, nan = good;
  magic[0] = 'X';
  version[4] = 2;
  nan[nan.size() - 1] = '\x7f';
  nan[nan.size() - 2] = '\xc0';
  const std::vector<std::pair<std::string, K>> cases = {{magic, K::BadMagic},
                                                        {version, K::VersionMismatch},
                                                        {good.substr(0, 3), K::Truncated},
                                                        {good.substr(0, 9), K::Truncated},
                                                        {good.substr(0, good.size() - 4), K::Truncated},
                                                        {good + "x", K::SizeMismatch},
                                                        {nan, K::Malformed}};
  int rejected = 0;
  for (const auto& [bytes, kind] : cases)
    if (kind_of(bytes) == kind) ++rejected;
  bool io_ok = false;
  try {
    load_weights(fs::temp_directory_path() / "nst_acceptance_missing.nstw");
  } catch (const IoError&) {
    io_ok = true;
  } catch (...) {
  }
  return {identical == kWeightStores && rejected == int(cases.size()) && io_ok,
          std::to_string(identical) + "/" + std::to_string(kWeightStores) + " round trips bit-identical, " +
              std::to_string(rejected) + "/" + std::to_string(cases.size()) +
              " corruptions rejected with their category, missing file " + (io_ok ? "io error" : "WRONG")};
}

Outcome reproducibility() {
  const fs::path dir = fs::temp_directory_path() / "nst_acceptance_repro";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string content = data_path("pairs/content_1.png"), style = data_path("pairs/style_1.png");
  const std::vector<std::pair<Command, nlohmann::json>> jobs = {
      {Command::Stylize,
       {{"job", {{"content", content}, {"style", style}, {"init", "noise"}}},
        {"network", {{"id", "vgg-tiny"}}},
        {"optimizer", {{"max_iterations", 20}}}}},
      {Command::Adain, {{"job", {{"content", content}, {"style", style}, {"alpha_interp", 0.7}}},
                        {"network", {{"id", "vgg-tiny"}}}}},
      {Command::TrainToy, {{"job", {{"corpus", data_path("corpus")}, {"style", style}, {"steps", 10}}}}},
      {Command::Compare,
       {{"job", {{"content", content}, {"style", style}, {"kinds", {"none", "softmax", "tanh"}}}},
        {"optimizer", {{"max_iterations", 5}}}}}};
  int same = 0;
  std::string differing;
  for (const auto& [command, cfg] : jobs) {
    const fs::path config = dir / (std::string(to_string(command)) + ".json");
    write_file_atomic(config, cfg.dump(2));
    std::vector<std::vector<std::pair<std::string, std::string>>> runs;
    bool ok = true;
    for (int run = 0; run < 2; ++run) {
      RunOptions o;
      o.seed = 1234;
      o.out_dir = dir / (std::string(to_string(command)) + "_" + std::to_string(run));
      const RunResult r = run_job(command, config, o);
      ok = ok && r.exit_code == 0;
      std::vector<std::pair<std::string, std::string>> files;
      for (const auto& e : fs::directory_iterator(o.out_dir)) {
        const std::string name = e.path().filename().string();
        if (name == "report.json" || e.path().extension() == ".csv") files.emplace_back(name, read_file(e.path()));
      }
      std::sort(files.begin(), files.end());
      runs.push_back(files);
    }
    if (ok && runs[0] == runs[1] && !runs[0].empty()) {
      ++same;
    } else {
      differing += std::string(differing.empty() ? "" : ", ") + to_string(command);
    }
  }
  fs::remove_all(dir);
  return {same == int(jobs.size()),
          std::to_string(same) + "/" + std::to_string(jobs.size()) +
              " commands byte-identical in report.json and loss CSVs" +
              (differing.empty() ? "" : " (differ: " + differing + ")")};
}

struct Criterion {
  std::string name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  std::set<std::string> known, only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if ((a == "--known-failure" || a == "--only") && i + 1 < argc) {
      (a == "--only" ? only : known).insert(argv[++i]);
    } else {
      std::fprintf(stderr, "usage: acceptance [--known-failure <name>]... [--only <name>]...\n");
      return 2;
    }
  }

  const std::vector<Criterion> criteria = {
      {"gradient-correctness", gradient_correctness},
      {"gram-oracle", gram_oracle},
      {"adain-statistics", adain_statistics},
      {"nst-descent", nst_descent},
      {"swag-ab", swag_ab},
      {"interpolation-endpoints", interpolation_endpoints},
      {"toy-trainers", toy_trainers},
      {"fully-convolutional", fully_convolutional},
      {"weight-format", weight_format},
      {"reproducibility", reproducibility},
  };

  int passed = 0, unexpected = 0, run = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.name)) continue;
    ++run;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const bool is_known = known.count(c.name) > 0;
    std::printf("%s %s: %s%s\n", o.pass ? "PASS" : "FAIL", c.name.c_str(), o.detail.c_str(),
                is_known ? (o.pass ? " [listed as known failure but passed]" : " [known failure]") : "");
    std::fflush(stdout);
    if (o.pass) ++passed;
    if (o.pass == is_known) ++unexpected;
  }
  std::printf("acceptance: %d/%d passed\n", passed, run);
  return unexpected == 0 ? 0 : 1;
}
