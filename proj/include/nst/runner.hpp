#pragma once

#include <array>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "nst/losses.hpp"
#include "nst/optimizers.hpp"
#include "nst/pipelines.hpp"

namespace nst {

enum class Command { Stylize, Adain, TrainToy, Compare };

/// "stylize", "adain", "train-toy", "compare".
const char* to_string(Command command);
Command parse_command(const std::string& name);

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int failure = 1;
inline constexpr int parse = 2;
inline constexpr int validation = 3;
inline constexpr int numeric = 4;
inline constexpr int io = 5;
}  // namespace exit_code

/// Exit code and category name ("parse", "validation", "numeric", "io",
/// "internal") of a failure.
int exit_code_for(std::exception_ptr failure);
const char* category_name(int code);

/// A job with every default resolved.
struct JobConfig {
  Command command = Command::Stylize;

  // job
  std::string content;
  std::vector<std::string> styles;
  std::string output;
  InitMode init = InitMode::Content;
  std::uint64_t seed = 0;
  double alpha_interp = 1.0;
  std::optional<std::array<int, 2>> resize;
  std::string corpus;
  TrainKind train_kind = TrainKind::Fast;
  int steps = 200;
  bool identity_style = false;
  std::vector<Smoothing> kinds;

  // network
  std::string network;
  std::optional<std::string> weights;
  std::string encoder_last = "relu4_1";
  std::optional<std::string> decoder_weights;
  std::string transform = "transform-toy";

  LossConfig loss;
  std::string loss_preset = "none";
  OptimizerConfig optimizer;

  std::vector<std::string> warnings;
  /// Relative input paths resolve against this directory.
  std::filesystem::path base_dir;

  std::filesystem::path resolve(const std::string& path) const;
};

/// Parses config text for `command`. Syntax errors throw ParseError; field
/// problems throw ValidationError listing each by dotted path.
JobConfig parse_job_config(const std::string& text, Command command,
                           const std::filesystem::path& base_dir,
                           std::optional<std::uint64_t> seed_override = std::nullopt);

/// Every resolved field, grouped into job / network / loss / optimizer.
nlohmann::ordered_json config_echo(const JobConfig& config);

struct RunOptions {
  std::optional<std::uint64_t> seed;
  std::filesystem::path out_dir = ".";
  bool dry_run = false;
  int jobs = 1;
};

struct RunResult {
  int exit_code = exit_code::ok;
  std::string message;
  nlohmann::ordered_json report;
  std::vector<std::filesystem::path> artifacts;
};

/// Loads, validates and runs one job. Writes the output image(s) or weights,
/// report.json and loss.csv into out_dir (timings go to timings.json so the
/// report stays reproducible). Failures after parsing still write a report.
RunResult run_job(Command command, const std::filesystem::path& config_path,
                  const RunOptions& options);

}  // namespace nst
