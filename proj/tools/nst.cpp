#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "nst/image.hpp"
#include "nst/manifest.hpp"
#include "nst/plot.hpp"
#include "nst/runner.hpp"
#include "nst/weights.hpp"

namespace {

int fail(int code, const std::string& message) {
  std::cerr << "nst: " << nst::category_name(code) << " error: " << message << "\n";
  return code;
}

int validate_weights_cmd(const std::string& weights_path, std::string network_id,
                         const std::string& probe_path) {
  try {
    const nst::WeightStore w = nst::load_weights(weights_path);
    if (network_id.empty()) {
      const auto meta = w.meta("network");
      if (!meta) {
        throw nst::ValidationError({"--network not given and the weight metadata lacks 'network'"});
      }
      network_id = *meta;
    }
    const nst::Network net = nst::build_network(nst::builtin_spec(network_id));
    std::vector<std::string> missing;
    const nst::PreprocessSpec pp = nst::PreprocessSpec::from_metadata(w, &missing);
    const nst::Tensor probe = nst::preprocess(nst::load_image(probe_path), pp);
    const nst::ManifestReport report = nst::verify_manifest(net, w, probe);

    nlohmann::ordered_json out;
    out["network"] = network_id;
    out["ok"] = report.ok();
    out["violations"] = report.violations;
    out["missing_preprocess_keys"] = missing;
    out["taps"] = nlohmann::ordered_json::array();
    for (const auto& t : report.taps) {
      out["taps"].push_back({{"tap", t.tap},
                             {"ok", t.ok},
                             {"expected_mean", t.expected_mean},
                             {"actual_mean", t.actual_mean},
                             {"mean_rel_error", t.mean_rel_error},
                             {"expected_l2", t.expected_l2},
                             {"actual_l2", t.actual_l2},
                             {"l2_rel_error", t.l2_rel_error}});
    }
    std::cout << out.dump(2) << "\n";
    if (!report.ok()) return fail(nst::exit_code::validation, "weights do not match the manifest");
    return nst::exit_code::ok;
  } catch (const std::exception& e) {
    return fail(nst::exit_code_for(std::current_exception()), e.what());
  }
}

int plot_cmd(const std::string& csv, const std::string& out) {
  try {
    nst::emit_plot(csv, out);
    return nst::exit_code::ok;
  } catch (const std::exception& e) {
    return fail(nst::exit_code_for(std::current_exception()), e.what());
  }
}

int run_cmd(nst::Command command, const std::string& config, const nst::RunOptions& options) {
  const nst::RunResult r = nst::run_job(command, config, options);
  if (options.dry_run && r.exit_code == nst::exit_code::ok) {
    std::cout << r.report.dump(2) << "\n";
    return r.exit_code;
  }
  if (r.report.contains("warnings")) {
    for (const auto& w : r.report["warnings"]) std::cerr << "nst: warning: " << w.get<std::string>() << "\n";
  }
  if (r.exit_code != nst::exit_code::ok) return fail(r.exit_code, r.message);
  for (const auto& a : r.artifacts) std::cout << a.string() << "\n";
  return r.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural style transfer engine"};
  app.require_subcommand(1);

  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
  bool dry_run = false;
  int jobs = 1;

  struct RunSub {
    nst::Command command;
    CLI::App* app;
  };
  std::vector<RunSub> runs;
  const std::pair<nst::Command, const char*> commands[] = {
      {nst::Command::Stylize, "Image-based optimization"},
      {nst::Command::Adain, "Arbitrary style transfer with an encoder and decoder"},
      {nst::Command::TrainToy, "Train a small feed-forward model on an image corpus"},
      {nst::Command::Compare, "Compare smoothing kinds on one content and style pair"}};
  for (const auto& [command, help] : commands) {
    CLI::App* sub = app.add_subcommand(nst::to_string(command), help);
    sub->add_option("--config", config, "Job config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "Override job.seed");
    sub->add_option("--out-dir", out_dir, "Directory for outputs");
    sub->add_flag("--dry-run", dry_run, "Validate and print the resolved config");
    sub->add_option("--jobs", jobs, "Parallel comparison kinds")->check(CLI::PositiveNumber);
    runs.push_back({command, sub});
  }

  std::string weights, network, probe;
  CLI::App* vw = app.add_subcommand("validate-weights", "Check a weight file against its manifest");
  vw->add_option("--weights", weights, "NSTW weight file")->required();
  vw->add_option("--network", network, "Network id (default: metadata 'network')");
  vw->add_option("--probe", probe, "Probe image")->required();

  std::string csv, svg;
  CLI::App* plot = app.add_subcommand("plot", "Render a loss CSV as SVG");
  plot->add_option("--csv", csv, "Loss CSV")->required();
  plot->add_option("--out", svg, "Output SVG")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : nst::exit_code::parse;
  }

  if (*vw) return validate_weights_cmd(weights, network, probe);
  if (*plot) return plot_cmd(csv, svg);
  for (const auto& r : runs) {
    if (*r.app) {
      nst::RunOptions options;
      options.seed = seed;
      options.out_dir = out_dir;
      options.dry_run = dry_run;
      options.jobs = jobs;
      return run_cmd(r.command, config, options);
    }
  }
  return nst::exit_code::failure;
}
