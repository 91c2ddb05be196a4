#include "nst/runner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <set>

#include "nst/fileio.hpp"
#include "nst/image.hpp"
#include "nst/plot.hpp"
#include "nst/weights.hpp"

namespace nst {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;
namespace fs = std::filesystem;

const char* to_string(Command command) {
  switch (command) {
    case Command::Stylize: return "stylize";
    case Command::Adain: return "adain";
    case Command::TrainToy: return "train-toy";
    case Command::Compare: return "compare";
  }
  return "stylize";
}

Command parse_command(const std::string& name) {
  for (Command c : {Command::Stylize, Command::Adain, Command::TrainToy, Command::Compare}) {
    if (name == to_string(c)) return c;
  }
  throw ContractError("unknown command '" + name + "'");
}

int exit_code_for(std::exception_ptr failure) {
  try {
    std::rethrow_exception(failure);
  } catch (const ParseError&) {
    return exit_code::parse;
  } catch (const ValidationError&) {
    return exit_code::validation;
  } catch (const ContractError&) {
    return exit_code::validation;
  } catch (const LookupError&) {
    return exit_code::validation;
  } catch (const ShapeError&) {
    return exit_code::validation;
  } catch (const GeometryError&) {
    return exit_code::validation;
  } catch (const UnsupportedFormatError&) {
    return exit_code::validation;
  } catch (const NumericError&) {
    return exit_code::numeric;
  } catch (const IoError&) {
    return exit_code::io;
  } catch (const CorruptImageError&) {
    return exit_code::io;
  } catch (const FormatError&) {
    return exit_code::io;
  } catch (...) {
    return exit_code::failure;
  }
}

const char* category_name(int code) {
  switch (code) {
    case exit_code::ok: return "ok";
    case exit_code::parse: return "parse";
    case exit_code::validation: return "validation";
    case exit_code::numeric: return "numeric";
    case exit_code::io: return "io";
  }
  return "internal";
}

fs::path JobConfig::resolve(const std::string& path) const {
  const fs::path p(path);
  return p.is_absolute() ? p : base_dir / p;
}

// ---------------------------------------------------------------------------
// Config parsing
// ---------------------------------------------------------------------------

namespace {

// Typed access to one config section; records every problem by dotted path
// and flags keys nobody asked for.
class Section {
 public:
  Section(const json& root, const std::string& name, std::vector<std::string>& errors)
      : name_(name), errors_(errors) {
    if (!root.contains(name)) return;
    const json& v = root.at(name);
    if (!v.is_object()) {
      errors_.push_back(name + " must be an object");
      return;
    }
    obj_ = &v;
  }

  bool has(const std::string& key) const { return obj_ && obj_->contains(key); }
  std::string path(const std::string& key) const { return name_ + "." + key; }

  void reject(const std::string& key, const std::string& why) {
    if (has(key)) {
      used_.insert(key);
      errors_.push_back(path(key) + " " + why);
    }
  }

  const json* raw(const std::string& key) {
    if (!has(key)) return nullptr;
    used_.insert(key);
    const json& v = obj_->at(key);
    return v.is_null() ? nullptr : &v;
  }

  void number(const std::string& key, double& out) {
    if (const json* v = raw(key)) {
      if (v->is_number() && std::isfinite(v->get<double>())) {
        out = v->get<double>();
      } else {
        errors_.push_back(path(key) + " must be a finite number");
      }
    }
  }

  void integer(const std::string& key, int& out) {
    if (const json* v = raw(key)) {
      if (v->is_number_integer() && v->get<std::int64_t>() >= std::numeric_limits<int>::min() &&
          v->get<std::int64_t>() <= std::numeric_limits<int>::max()) {
        out = v->get<int>();
      } else {
        errors_.push_back(path(key) + " must be an integer");
      }
    }
  }

  void unsigned64(const std::string& key, std::uint64_t& out) {
    if (const json* v = raw(key)) {
      if (v->is_number_unsigned()) {
        out = v->get<std::uint64_t>();
      } else if (v->is_number_integer() && v->get<std::int64_t>() >= 0) {
        out = std::uint64_t(v->get<std::int64_t>());
      } else {
        errors_.push_back(path(key) + " must be a non-negative integer");
      }
    }
  }

  void boolean(const std::string& key, bool& out) {
    if (const json* v = raw(key)) {
      if (v->is_boolean()) {
        out = v->get<bool>();
      } else {
        errors_.push_back(path(key) + " must be true or false");
      }
    }
  }

  bool string(const std::string& key, std::string& out) {
    if (const json* v = raw(key)) {
      if (v->is_string()) {
        out = v->get<std::string>();
        return true;
      }
      errors_.push_back(path(key) + " must be a string");
    }
    return false;
  }

  void optional_string(const std::string& key, std::optional<std::string>& out) {
    std::string s;
    if (string(key, s)) out = s;
  }

  bool strings(const std::string& key, std::vector<std::string>& out) {
    if (const json* v = raw(key)) {
      if (!v->is_array()) {
        errors_.push_back(path(key) + " must be an array of strings");
        return false;
      }
      std::vector<std::string> items;
      for (const auto& item : *v) {
        if (!item.is_string()) {
          errors_.push_back(path(key) + " must be an array of strings");
          return false;
        }
        items.push_back(item.get<std::string>());
      }
      out = items;
      return true;
    }
    return false;
  }

  template <typename Enum>
  void choice(const std::string& key, Enum& out,
              const std::vector<std::pair<std::string, Enum>>& options) {
    std::string s;
    if (!string(key, s)) return;
    for (const auto& [name, value] : options) {
      if (s == name) {
        out = value;
        return;
      }
    }
    std::string allowed;
    for (const auto& [name, value] : options) allowed += (allowed.empty() ? "" : ", ") + name;
    errors_.push_back(path(key) + " must be one of " + allowed + ", got '" + s + "'");
  }

  void finish() {
    if (!obj_) return;
    for (const auto& [key, value] : obj_->items()) {
      if (!used_.count(key)) errors_.push_back("unknown key '" + path(key) + "'");
    }
  }

 private:
  std::string name_;
  std::vector<std::string>& errors_;
  const json* obj_ = nullptr;
  std::set<std::string> used_;
};

const std::vector<std::pair<std::string, GramNormalization>> kGramNames = {
    {"none", GramNormalization::None},
    {"per-element", GramNormalization::PerElement},
    {"swag", GramNormalization::Swag}};
const std::vector<std::pair<std::string, ContentNormalization>> kContentNames = {
    {"none", ContentNormalization::None},
    {"half", ContentNormalization::Half},
    {"per-element", ContentNormalization::PerElement}};
const std::vector<std::pair<std::string, AdainMetric>> kMetricNames = {{"mse", AdainMetric::Mse},
                                                                       {"l2", AdainMetric::L2}};

std::string default_network(Command c) {
  switch (c) {
    case Command::Stylize: return "vgg19-features";
    case Command::Adain: return "vgg19-features";
    case Command::TrainToy: return "vgg-tiny";
    case Command::Compare: return "resnet-small";
  }
  return "vgg19-features";
}

std::string tap_list(const std::vector<StyleTap>& taps) {
  std::string out;
  for (const auto& t : taps) out += (out.empty() ? "" : ", ") + t.name;
  return out;
}

// Returns true when style_taps came from defaults rather than the config.
bool parse_loss(Section& s, JobConfig& cfg, std::vector<std::string>& errors) {
  LossConfig& l = cfg.loss;
  bool defaulted = false;
  s.number("alpha", l.alpha);
  s.number("beta", l.beta);
  s.number("lambda", l.lambda);
  s.string("content_tap", l.content_tap);
  s.string("preset", cfg.loss_preset);
  if (cfg.loss_preset != "none" && cfg.loss_preset != "mixture") {
    errors.push_back("loss.preset must be one of none, mixture, got '" + cfg.loss_preset + "'");
  }

  if (const json* v = s.raw("style_taps")) {
    if (cfg.loss_preset == "mixture") {
      errors.push_back("loss.style_taps cannot be combined with loss.preset 'mixture'");
    }
    if (!v->is_array() || v->empty()) {
      errors.push_back("loss.style_taps must be a non-empty array");
    } else {
      std::vector<StyleTap> taps;
      for (std::size_t i = 0; i < v->size(); ++i) {
        const json& item = (*v)[i];
        const std::string where = "loss.style_taps[" + std::to_string(i) + "]";
        if (item.is_string()) {
          taps.push_back({item.get<std::string>(), 1.0});
          cfg.warnings.push_back(where + " '" + item.get<std::string>() +
                                 "' has no weight; using 1");
        } else if (item.is_object() && item.contains("name") && item.at("name").is_string()) {
          StyleTap t{item.at("name").get<std::string>(), 1.0};
          if (item.contains("weight")) {
            if (!item.at("weight").is_number()) {
              errors.push_back(where + ".weight must be a number");
            } else {
              t.weight = item.at("weight").get<double>();
            }
          } else {
            cfg.warnings.push_back(where + " '" + t.name + "' has no weight; using 1");
          }
          for (const auto& [key, value] : item.items()) {
            if (key != "name" && key != "weight") errors.push_back("unknown key '" + where + "." + key + "'");
          }
          taps.push_back(t);
        } else {
          errors.push_back(where + " must be a tap name or {\"name\", \"weight\"}");
        }
      }
      l.style_taps = taps;
    }
  } else if (cfg.loss_preset == "mixture") {
    l.style_taps = {{"conv1_1", 5.0}, {"conv2_1", 1.0}, {"conv3_1", 1.0}, {"conv4_1", 1.0},
                    {"conv5_1", 1.0}};
    cfg.warnings.push_back(
        "loss.preset 'mixture': conv1_1 has weight 5 and the other layers default to 1");
  } else {
    defaulted = true;
  }

  std::string smoothing;
  if (s.string("smoothing", smoothing)) {
    try {
      l.smoothing = Smoothing::parse(smoothing);
    } catch (const ContractError& e) {
      errors.push_back(std::string("loss.smoothing: ") + e.what());
    }
  }
  s.strings("smoothing_taps", l.smoothing_taps);
  s.choice("gram_normalization", l.gram_normalization, kGramNames);
  s.choice("content_normalization", l.content_normalization, kContentNames);
  s.string("adain_content_tap", l.adain_content_tap);
  s.choice("adain_content_metric", l.adain_content_metric, kMetricNames);
  s.choice("adain_style_metric", l.adain_style_metric, kMetricNames);
  s.number("epsilon", l.epsilon);
  return defaulted;
}

void parse_optimizer(Section& s, OptimizerConfig& o) {
  s.choice("kind", o.kind,
           std::vector<std::pair<std::string, OptimizerKind>>{{"lbfgs", OptimizerKind::Lbfgs},
                                                              {"adam", OptimizerKind::Adam}});
  if (s.has("learning_rate")) {
    double lr = 0;
    if (s.raw("learning_rate")) {
      s.number("learning_rate", lr);
      o.learning_rate = lr;
    } else {
      o.learning_rate.reset();
    }
  }
  s.number("beta1", o.beta1);
  s.number("beta2", o.beta2);
  s.number("adam_epsilon", o.adam_epsilon);
  s.integer("history", o.history);
  s.integer("max_line_search", o.max_line_search);
  s.number("armijo", o.armijo);
  s.number("backtrack", o.backtrack);
  s.integer("max_iterations", o.max_iterations);
  s.number("tolerance", o.tolerance);
}

void require_file(const JobConfig& cfg, const std::string& field, const std::string& path,
                  std::vector<std::string>& errors) {
  std::error_code ec;
  if (!fs::is_regular_file(cfg.resolve(path), ec)) {
    errors.push_back(field + ": file not found: " + path);
  }
}

}  // namespace

JobConfig parse_job_config(const std::string& text, Command command, const fs::path& base_dir,
                           std::optional<std::uint64_t> seed_override) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!root.is_object()) throw ParseError("config must be a JSON object");

  JobConfig cfg;
  cfg.command = command;
  cfg.base_dir = base_dir;
  std::vector<std::string> errors;
  for (const auto& [key, value] : root.items()) {
    if (key != "job" && key != "network" && key != "loss" && key != "optimizer") {
      errors.push_back("unknown section '" + key + "'");
    }
  }

  Section job(root, "job", errors);
  Section network(root, "network", errors);
  Section loss(root, "loss", errors);
  Section optimizer(root, "optimizer", errors);

  std::string kind;
  if (job.string("kind", kind) && kind != to_string(command)) {
    errors.push_back("job.kind '" + kind + "' does not match the '" + std::string(to_string(command)) +
                     "' command");
  }

  // Kind-specific defaults come first so the config only overrides them.
  if (command == Command::TrainToy) {
    job.choice("train_kind", cfg.train_kind,
               std::vector<std::pair<std::string, TrainKind>>{
                   {"fast", TrainKind::Fast}, {"adain-decoder", TrainKind::AdainDecoder}});
    const TrainOptions d = default_train_options(cfg.train_kind);
    cfg.loss = d.loss;
    cfg.optimizer = d.optimizer;
    cfg.steps = d.steps;
    cfg.network = d.loss_network;
    cfg.transform = d.transform_network;
    cfg.encoder_last = d.encoder_last;
    cfg.output = "model.nstw";
  } else if (command == Command::Compare) {
    const CompareOptions d = default_compare_options();
    cfg.loss = d.base.loss;
    cfg.optimizer = d.base.optimizer;
    cfg.kinds = d.kinds;
    cfg.network = default_network(command);
    cfg.output = "output.png";
  } else {
    cfg.network = default_network(command);
    cfg.output = "output.png";
  }

  job.unsigned64("seed", cfg.seed);
  if (seed_override) cfg.seed = *seed_override;
  job.string("output", cfg.output);
  if (const json* r = job.raw("resize")) {
    if (r->is_array() && r->size() == 2 && (*r)[0].is_number_integer() &&
        (*r)[1].is_number_integer() && (*r)[0].get<int>() > 0 && (*r)[1].get<int>() > 0) {
      cfg.resize = std::array<int, 2>{(*r)[0].get<int>(), (*r)[1].get<int>()};
    } else {
      errors.push_back("job.resize must be [width, height] with positive integers");
    }
  }

  const bool uses_content = command != Command::TrainToy;
  const bool uses_styles = command != Command::TrainToy || cfg.train_kind == TrainKind::Fast;
  if (uses_content) {
    if (!job.string("content", cfg.content) && cfg.content.empty()) {
      errors.push_back("job.content is required");
    }
  } else {
    job.reject("content", "is not used by '" + std::string(to_string(command)) + "'");
  }
  if (uses_styles || command == Command::TrainToy) {
    std::string single;
    const bool has_list = job.strings("styles", cfg.styles);
    if (job.string("style", single)) {
      if (has_list) errors.push_back("job.style and job.styles are mutually exclusive");
      cfg.styles = {single};
    }
    if (uses_styles && cfg.styles.empty()) {
      errors.push_back("job.styles is required (one or more style image paths)");
    }
    const bool single_style = command == Command::Adain || command == Command::Compare ||
                              command == Command::TrainToy;
    if (single_style && cfg.styles.size() > 1) {
      errors.push_back("job.styles must name exactly one image for '" +
                       std::string(to_string(command)) + "'");
    }
  }

  if (command == Command::Stylize) {
    job.choice("init", cfg.init,
               std::vector<std::pair<std::string, InitMode>>{{"content", InitMode::Content},
                                                             {"noise", InitMode::Noise}});
  } else {
    job.reject("init", "is only used by 'stylize'");
  }
  if (command == Command::Adain) {
    job.number("alpha_interp", cfg.alpha_interp);
    if (!(cfg.alpha_interp >= 0 && cfg.alpha_interp <= 1)) {
      errors.push_back("job.alpha_interp must lie in [0, 1]");
    }
  } else {
    job.reject("alpha_interp", "is only used by 'adain'");
  }
  if (command == Command::TrainToy) {
    if (!job.string("corpus", cfg.corpus)) errors.push_back("job.corpus is required");
    job.integer("steps", cfg.steps);
    if (cfg.steps < 0) errors.push_back("job.steps must be non-negative");
    job.boolean("identity_style", cfg.identity_style);
  } else {
    for (const char* k : {"corpus", "steps", "identity_style", "train_kind"}) {
      job.reject(k, "is only used by 'train-toy'");
    }
  }
  if (command == Command::Compare) {
    std::vector<std::string> names;
    if (job.strings("kinds", names)) {
      cfg.kinds.clear();
      for (std::size_t i = 0; i < names.size(); ++i) {
        try {
          cfg.kinds.push_back(Smoothing::parse(names[i]));
        } catch (const ContractError& e) {
          errors.push_back("job.kinds[" + std::to_string(i) + "]: " + e.what());
        }
      }
      if (names.empty()) errors.push_back("job.kinds must not be empty");
    }
  } else {
    job.reject("kinds", "is only used by 'compare'");
  }

  network.string("id", cfg.network);
  network.optional_string("weights", cfg.weights);
  if (command == Command::Adain || command == Command::TrainToy) {
    network.string("encoder_last", cfg.encoder_last);
  } else {
    network.reject("encoder_last", "is only used by 'adain' and 'train-toy'");
  }
  if (command == Command::Adain) {
    network.optional_string("decoder_weights", cfg.decoder_weights);
  } else {
    network.reject("decoder_weights", "is only used by 'adain'");
  }
  if (command == Command::TrainToy) {
    network.string("transform", cfg.transform);
  } else {
    network.reject("transform", "is only used by 'train-toy'");
  }

  const bool taps_defaulted = parse_loss(loss, cfg, errors);
  if (command == Command::TrainToy && cfg.train_kind == TrainKind::AdainDecoder) {
    cfg.loss.adain_content_tap = cfg.encoder_last;
  }
  parse_optimizer(optimizer, cfg.optimizer);

  job.finish();
  network.finish();
  loss.finish();
  optimizer.finish();

  for (auto& v : cfg.loss.validate()) errors.push_back(v);
  for (auto& v : cfg.optimizer.validate()) errors.push_back(v);
  if (command == Command::TrainToy && cfg.optimizer.kind != OptimizerKind::Adam) {
    errors.push_back("optimizer.kind must be adam for 'train-toy'");
  }

  // Referenced files exist and the output format is known.
  if (!cfg.content.empty()) require_file(cfg, "job.content", cfg.content, errors);
  for (std::size_t i = 0; i < cfg.styles.size(); ++i) {
    require_file(cfg, "job.styles[" + std::to_string(i) + "]", cfg.styles[i], errors);
  }
  if (cfg.weights) require_file(cfg, "network.weights", *cfg.weights, errors);
  if (cfg.decoder_weights) require_file(cfg, "network.decoder_weights", *cfg.decoder_weights, errors);
  if (!cfg.corpus.empty()) {
    std::error_code ec;
    if (!fs::is_directory(cfg.resolve(cfg.corpus), ec)) {
      errors.push_back("job.corpus: directory not found: " + cfg.corpus);
    }
  }
  if (command == Command::TrainToy) {
    if (fs::path(cfg.output).extension() != ".nstw") {
      errors.push_back("job.output must name a .nstw weight file for 'train-toy'");
    }
  } else {
    try {
      format_for_path(cfg.output);
    } catch (const UnsupportedFormatError& e) {
      errors.push_back(std::string("job.output: ") + e.what());
    }
  }
  const auto ids = builtin_ids();
  auto known = [&](const std::string& id) { return std::find(ids.begin(), ids.end(), id) != ids.end(); };
  if (!known(cfg.network)) errors.push_back("network.id: unknown network '" + cfg.network + "'");
  if (command == Command::TrainToy && !known(cfg.transform)) {
    errors.push_back("network.transform: unknown network '" + cfg.transform + "'");
  }

  // Defaulted style taps shrink to the ones the chosen network has.
  if (taps_defaulted && known(cfg.network) && command != Command::TrainToy &&
      command != Command::Adain) {
    const NetworkSpec spec = builtin_spec(cfg.network);
    auto has = [&](const std::string& name) {
      return std::any_of(spec.layers.begin(), spec.layers.end(),
                         [&](const LayerSpec& l) { return l.name == name; });
    };
    std::vector<StyleTap> kept;
    std::string dropped;
    for (const auto& t : cfg.loss.style_taps) {
      if (has(t.name)) {
        kept.push_back(t);
      } else {
        dropped += (dropped.empty() ? "" : ", ") + t.name;
      }
    }
    if (!kept.empty()) cfg.loss.style_taps = kept;
    if (!dropped.empty() && !kept.empty()) {
      cfg.warnings.push_back("default style taps " + dropped + " are not in network '" +
                             cfg.network + "'; dropped");
    }
  }
  if (taps_defaulted) {
    cfg.warnings.push_back("loss.style_taps not given; using " + tap_list(cfg.loss.style_taps) +
                           " with their default weights");
  }

  if (!errors.empty()) throw ValidationError(std::move(errors));
  return cfg;
}

namespace {

ordered_json parts_json(const LossParts& p) {
  return ordered_json{{"total", p.total}, {"content", p.content}, {"style", p.style}};
}

}  // namespace

ordered_json config_echo(const JobConfig& c) {
  ordered_json job;
  job["kind"] = to_string(c.command);
  job["seed"] = c.seed;
  job["output"] = c.output;
  job["resize"] = c.resize ? ordered_json::array({(*c.resize)[0], (*c.resize)[1]}) : ordered_json();
  switch (c.command) {
    case Command::Stylize:
      job["content"] = c.content;
      job["styles"] = c.styles;
      job["init"] = to_string(c.init);
      break;
    case Command::Adain:
      job["content"] = c.content;
      job["styles"] = c.styles;
      job["alpha_interp"] = c.alpha_interp;
      break;
    case Command::Compare: {
      job["content"] = c.content;
      job["styles"] = c.styles;
      ordered_json kinds = ordered_json::array();
      for (const auto& k : c.kinds) kinds.push_back(k.str());
      job["kinds"] = kinds;
      break;
    }
    case Command::TrainToy:
      job["train_kind"] = to_string(c.train_kind);
      job["corpus"] = c.corpus;
      job["styles"] = c.styles;
      job["steps"] = c.steps;
      job["identity_style"] = c.identity_style;
      break;
  }

  ordered_json network;
  network["id"] = c.network;
  network["weights"] = c.weights ? ordered_json(*c.weights) : ordered_json();
  if (c.command == Command::Adain || c.command == Command::TrainToy) {
    network["encoder_last"] = c.encoder_last;
  }
  if (c.command == Command::Adain) {
    network["decoder_weights"] = c.decoder_weights ? ordered_json(*c.decoder_weights) : ordered_json();
  }
  if (c.command == Command::TrainToy) network["transform"] = c.transform;

  const LossConfig& l = c.loss;
  ordered_json taps = ordered_json::array();
  for (const auto& t : l.style_taps) taps.push_back({{"name", t.name}, {"weight", t.weight}});
  ordered_json loss{{"preset", c.loss_preset},
                    {"alpha", l.alpha},
                    {"beta", l.beta},
                    {"lambda", l.lambda},
                    {"content_tap", l.content_tap},
                    {"style_taps", taps},
                    {"smoothing", l.smoothing.str()},
                    {"smoothing_taps", l.smoothing_taps},
                    {"gram_normalization", to_string(l.gram_normalization)},
                    {"content_normalization", to_string(l.content_normalization)},
                    {"adain_content_tap", l.adain_content_tap},
                    {"adain_content_metric", to_string(l.adain_content_metric)},
                    {"adain_style_metric", to_string(l.adain_style_metric)},
                    {"epsilon", l.epsilon}};

  const OptimizerConfig& o = c.optimizer;
  ordered_json optimizer{{"kind", to_string(o.kind)},
                         {"learning_rate", o.lr()},
                         {"beta1", o.beta1},
                         {"beta2", o.beta2},
                         {"adam_epsilon", o.adam_epsilon},
                         {"history", o.history},
                         {"max_line_search", o.max_line_search},
                         {"armijo", o.armijo},
                         {"backtrack", o.backtrack},
                         {"max_iterations", o.max_iterations},
                         {"tolerance", o.tolerance}};

  return ordered_json{{"job", job}, {"network", network}, {"loss", loss}, {"optimizer", optimizer}};
}

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

namespace {

using Clock = std::chrono::steady_clock;

class Timer {
 public:
  void phase(const std::string& name) {
    const auto now = Clock::now();
    if (!current_.empty()) timings_[current_] = std::chrono::duration<double>(now - start_).count();
    current_ = name;
    start_ = now;
  }
  ordered_json finish() {
    phase("");
    ordered_json out;
    for (const auto& [k, v] : timings_) out[k] = v;
    return out;
  }

 private:
  std::string current_;
  Clock::time_point start_;
  std::vector<std::pair<std::string, double>> order_;
  std::map<std::string, double> timings_;
};

struct Context {
  const JobConfig& cfg;
  const RunOptions& options;
  ordered_json report;
  std::vector<fs::path> artifacts;
  std::vector<std::string> warnings;
  Timer timer;

  fs::path out(const std::string& name) const {
    const fs::path p(name);
    return p.is_absolute() ? p : options.out_dir / p;
  }

  std::string rel(const fs::path& p) const {
    return p.lexically_relative(options.out_dir).generic_string();
  }

  void write(const fs::path& path, const std::string& bytes, const std::string& role) {
    write_file_atomic(path, bytes);
    artifacts.push_back(path);
    report["outputs"].push_back(
        ordered_json{{"role", role}, {"path", rel(path)}, {"fnv1a64", fnv1a_hex(bytes)}});
  }

  void write_image(const Tensor& t, const PreprocessSpec& pp, const fs::path& path,
                   const std::string& role) {
    write(path, encode_image(deprocess(t, pp), format_for_path(path)), role);
  }
};

struct Loaded {
  Network net;
  WeightStore weights;
  PreprocessSpec pp;
};

Loaded load_network(Context& ctx, const std::string& id, std::uint64_t seed) {
  Network net = build_network(builtin_spec(id));
  WeightStore w;
  if (ctx.cfg.weights) {
    w = load_weights(ctx.cfg.resolve(*ctx.cfg.weights));
    if (auto v = validate_weights(net, w); !v.empty()) throw ValidationError(std::move(v));
  } else {
    w = init_weights(net, seed);
    ctx.warnings.push_back("network.weights not given; using random He-normal weights from seed " +
                           std::to_string(seed));
  }
  std::vector<std::string> missing;
  PreprocessSpec pp = PreprocessSpec::from_metadata(w, &missing);
  for (const auto& key : missing) {
    ctx.warnings.push_back("weight metadata lacks '" + key + "'; using the identity default");
  }
  pp.resize = ctx.cfg.resize;
  return {std::move(net), std::move(w), pp};
}

Tensor load_input(const Context& ctx, const std::string& path, const PreprocessSpec& pp) {
  return preprocess(load_image(ctx.cfg.resolve(path)), pp);
}

// Styles are resampled to the content size so Gram scales agree.
std::vector<Tensor> load_styles(const Context& ctx, const Tensor& content, PreprocessSpec pp) {
  pp.resize = std::array<int, 2>{int(content.shape().w), int(content.shape().h)};
  std::vector<Tensor> out;
  for (const auto& s : ctx.cfg.styles) out.push_back(load_input(ctx, s, pp));
  return out;
}

void put_losses(ordered_json& report, const std::optional<LossParts>& initial,
                const std::vector<LossParts>& trajectory) {
  ordered_json total = ordered_json::array(), content = ordered_json::array(),
               style = ordered_json::array();
  for (const auto& p : trajectory) {
    total.push_back(p.total);
    content.push_back(p.content);
    style.push_back(p.style);
  }
  report["losses"] = ordered_json{{"initial", initial ? parts_json(*initial) : ordered_json()},
                                  {"iterations", trajectory.size()},
                                  {"total", total},
                                  {"content", content},
                                  {"style", style}};
}

std::string loss_csv(const std::optional<LossParts>& initial, const std::vector<LossParts>& trajectory,
                     long first_iter) {
  LossCurve curve;
  auto add = [&](long i, const LossParts& p) {
    curve.iter.push_back(i);
    curve.total.push_back(p.total);
    curve.content.push_back(p.content);
    curve.style.push_back(p.style);
  };
  if (initial) add(0, *initial);
  for (std::size_t i = 0; i < trajectory.size(); ++i) add(first_iter + long(i), trajectory[i]);
  return format_loss_csv(curve);
}

std::string kind_tag(const Smoothing& s) {
  std::string out;
  for (char c : s.str()) {
    if (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-') {
      out += c;
    } else if (c == '(') {
      out += '-';
    }
  }
  return out;
}

std::string with_suffix(const std::string& path, const std::string& suffix) {
  const fs::path p(path);
  return (p.parent_path() / (p.stem().string() + "_" + suffix + p.extension().string())).string();
}

void run_stylize(Context& ctx, std::vector<LossParts>& trajectory) {
  const JobConfig& cfg = ctx.cfg;
  ctx.timer.phase("load");
  const Loaded m = load_network(ctx, cfg.network, cfg.seed);
  const Tensor content = load_input(ctx, cfg.content, m.pp);
  const std::vector<Tensor> styles = load_styles(ctx, content, m.pp);
  ImageBasedOptions o;
  o.loss = cfg.loss;
  o.optimizer = cfg.optimizer;
  o.init = cfg.init;
  o.seed = cfg.seed;
  o.range = m.pp.pixel_range();
  ctx.timer.phase("optimize");
  const StylizeOutcome r = stylize_image_based(
      m.net, m.weights, content, styles, o,
      [&](int, const LossParts& p) { trajectory.push_back(p); });
  ctx.timer.phase("save");
  put_losses(ctx.report, r.run.initial, r.run.trajectory);
  ctx.report["stop_reason"] = r.run.stop_reason;
  ctx.report["evaluations"] = r.run.evaluations;
  ctx.report["init_checksum"] = r.init_checksum;
  ctx.report["image_checksum"] = tensor_checksum(r.image);
  ctx.write_image(r.image, m.pp, ctx.out(cfg.output), "image");
  ctx.write(ctx.out("loss.csv"), loss_csv(r.run.initial, r.run.trajectory, 1), "loss-csv");
}

void run_adain(Context& ctx) {
  const JobConfig& cfg = ctx.cfg;
  ctx.timer.phase("load");
  std::optional<WeightStore> enc_weights;
  if (cfg.weights) enc_weights = load_weights(cfg.resolve(*cfg.weights));
  std::vector<std::string> style_names;
  for (const auto& t : cfg.loss.style_taps) style_names.push_back(t.name);
  AdainModel model = make_adain_model(cfg.network, cfg.encoder_last, style_names, cfg.seed,
                                      enc_weights ? &*enc_weights : nullptr);
  if (!cfg.weights) {
    ctx.warnings.push_back("network.weights not given; using random He-normal encoder weights from seed " +
                           std::to_string(cfg.seed + 1000));
  }
  if (cfg.decoder_weights) {
    WeightStore d = load_weights(cfg.resolve(*cfg.decoder_weights));
    if (auto v = validate_weights(model.decoder, d); !v.empty()) throw ValidationError(std::move(v));
    model.decoder_weights = std::move(d);
  } else {
    ctx.warnings.push_back("network.decoder_weights not given; using an untrained decoder from seed " +
                           std::to_string(cfg.seed));
  }
  std::vector<std::string> missing;
  PreprocessSpec pp = PreprocessSpec::from_metadata(model.encoder_weights, &missing);
  for (const auto& key : missing) {
    ctx.warnings.push_back("weight metadata lacks '" + key + "'; using the identity default");
  }
  pp.resize = cfg.resize;
  const Tensor content = load_input(ctx, cfg.content, pp);
  const Tensor style = load_styles(ctx, content, pp).front();
  ctx.timer.phase("decode");
  const Tensor out = stylize_adain(model, content, style, cfg.alpha_interp, cfg.loss.epsilon);
  ctx.timer.phase("save");
  put_losses(ctx.report, std::nullopt, {});
  ctx.report["image_checksum"] = tensor_checksum(out);
  ctx.write_image(out, pp, ctx.out(cfg.output), "image");
  ctx.write(ctx.out("loss.csv"), loss_csv(std::nullopt, {}, 1), "loss-csv");
}

std::vector<fs::path> corpus_files(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png" || ext == ".ppm") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

void run_train(Context& ctx, std::vector<LossParts>& curve) {
  const JobConfig& cfg = ctx.cfg;
  ctx.timer.phase("load");
  TrainOptions o = default_train_options(cfg.train_kind);
  o.steps = cfg.steps;
  o.seed = cfg.seed;
  o.optimizer = cfg.optimizer;
  o.loss = cfg.loss;
  o.loss_network = cfg.network;
  o.transform_network = cfg.transform;
  o.encoder_last = cfg.encoder_last;
  o.identity_style = cfg.identity_style;

  const Network loss_net = build_network(builtin_spec(cfg.network));
  WeightStore lw;
  if (cfg.weights) {
    lw = load_weights(cfg.resolve(*cfg.weights));
    o.loss_weights = lw;
  } else {
    lw = init_weights(loss_net, cfg.seed + 1000);
    ctx.warnings.push_back("network.weights not given; using random He-normal loss-network weights from seed " +
                           std::to_string(cfg.seed + 1000));
  }
  std::vector<std::string> missing;
  PreprocessSpec pp = PreprocessSpec::from_metadata(lw, &missing);
  for (const auto& key : missing) {
    ctx.warnings.push_back("weight metadata lacks '" + key + "'; using the identity default");
  }
  pp.resize = cfg.resize;

  const auto files = corpus_files(cfg.resolve(cfg.corpus));
  if (files.size() < 4) {
    throw ValidationError({"job.corpus must hold at least 4 PNG or PPM images, found " +
                           std::to_string(files.size())});
  }
  std::vector<Tensor> corpus;
  ordered_json names = ordered_json::array();
  for (const auto& f : files) {
    corpus.push_back(preprocess(load_image(f), pp));
    names.push_back(f.filename().generic_string());
  }
  std::optional<Tensor> style;
  if (!cfg.styles.empty()) style = load_styles(ctx, corpus.front(), pp).front();

  ctx.timer.phase("train");
  const TrainResult r = train_feedforward(corpus, style ? &*style : nullptr, o,
                                          [&](int, const LossParts& p) { curve.push_back(p); });
  ctx.timer.phase("save");
  WeightStore out = r.weights;
  out.set_meta("source", "train-toy");
  out.set_meta("network", r.model.id());
  out.set_meta("train_kind", to_string(cfg.train_kind));
  out.set_meta("seed", std::to_string(cfg.seed));
  out.set_meta("steps", std::to_string(cfg.steps));
  if (cfg.train_kind == TrainKind::AdainDecoder) {
    out.set_meta("encoder", cfg.network);
    out.set_meta("encoder_last", cfg.encoder_last);
  }
  for (const char* key : {"preprocess", "scale", "mean", "std"}) {
    if (auto v = lw.meta(key)) out.set_meta(key, *v);
  }
  put_losses(ctx.report, std::nullopt, r.curve);
  const double ratio = r.initial_corpus.total > 0 ? r.final_corpus.total / r.initial_corpus.total : 0.0;
  ctx.report["training"] = ordered_json{{"corpus", names},
                                        {"initial_corpus", parts_json(r.initial_corpus)},
                                        {"final_corpus", parts_json(r.final_corpus)},
                                        {"final_over_initial", ratio}};
  ctx.write(ctx.out(cfg.output), serialize_weights(out), "weights");
  ctx.write(ctx.out("loss.csv"), loss_csv(std::nullopt, r.curve, 1), "loss-csv");
}

int run_compare(Context& ctx) {
  const JobConfig& cfg = ctx.cfg;
  ctx.timer.phase("load");
  const Loaded m = load_network(ctx, cfg.network, cfg.seed);
  const Tensor content = load_input(ctx, cfg.content, m.pp);
  const Tensor style = load_styles(ctx, content, m.pp).front();
  CompareOptions o;
  o.kinds = cfg.kinds;
  o.base.loss = cfg.loss;
  o.base.optimizer = cfg.optimizer;
  o.base.seed = cfg.seed;
  o.base.range = m.pp.pixel_range();
  o.jobs = ctx.options.jobs;
  ctx.timer.phase("optimize");
  const CompareResult r = swag_ab_compare(m.net, m.weights, content, style, o);
  ctx.timer.phase("save");

  int code = exit_code::ok;
  ordered_json kinds = ordered_json::array();
  for (const auto& k : r.kinds) {
    ordered_json e;
    e["kind"] = k.kind.str();
    e["status"] = k.ok ? "ok" : "error";
    if (!k.ok) {
      const int c = exit_code_for(k.failure);
      if (code == exit_code::ok) code = c;
      e["error"] = ordered_json{{"category", category_name(c)}, {"message", k.error}};
      kinds.push_back(e);
      continue;
    }
    const std::string tag = kind_tag(k.kind);
    const LossParts last = k.run.trajectory.empty() ? k.run.initial : k.run.trajectory.back();
    e["init_checksum"] = k.init_checksum;
    e["initial"] = parts_json(k.run.initial);
    e["final"] = parts_json(last);
    e["iterations"] = k.run.trajectory.size();
    e["stop_reason"] = k.run.stop_reason;
    e["unsmoothed_style"] = k.unsmoothed_style;
    ordered_json ent;
    for (const auto& [tap, v] : k.entropy) ent[tap] = v;
    e["entropy"] = ent;
    e["mean_entropy"] = k.mean_entropy;
    const fs::path image = ctx.out(with_suffix(cfg.output, tag));
    const fs::path csv = ctx.out("loss_" + tag + ".csv");
    e["image"] = ctx.rel(image);
    e["loss_csv"] = ctx.rel(csv);
    ctx.write_image(k.image, m.pp, image, "image:" + k.kind.str());
    ctx.write(csv, loss_csv(k.run.initial, k.run.trajectory, 1), "loss-csv:" + k.kind.str());
    kinds.push_back(e);
  }
  ordered_json raw;
  for (const auto& [tap, v] : r.raw_entropy) raw[tap] = v;
  ctx.report["raw_entropy"] = raw;
  ctx.report["kinds"] = kinds;
  return code;
}

}  // namespace

RunResult run_job(Command command, const fs::path& config_path, const RunOptions& options) {
  RunResult result;
  JobConfig cfg;
  try {
    const std::string text = read_file(config_path);
    cfg = parse_job_config(text, command, config_path.parent_path(), options.seed);
  } catch (const Error& e) {
    result.exit_code = exit_code_for(std::current_exception());
    result.message = e.what();
    result.report = ordered_json{{"status", "error"},
                                 {"error", {{"category", category_name(result.exit_code)},
                                            {"message", result.message}}}};
    return result;
  }

  if (options.dry_run) {
    result.report = ordered_json{{"dry_run", true}, {"config", config_echo(cfg)}, {"warnings", cfg.warnings}};
    return result;
  }

  Context ctx{cfg, options, {}, {}, cfg.warnings, {}};
  ctx.report["format"] = "nst-run-report/1";
  ctx.report["status"] = "ok";
  ctx.report["config"] = config_echo(cfg);
  ctx.report["outputs"] = ordered_json::array();
  std::vector<LossParts> trajectory;
  try {
    std::error_code ec;
    fs::create_directories(options.out_dir, ec);
    if (ec) throw IoError("cannot create output directory " + options.out_dir.string() + ": " + ec.message());
    switch (command) {
      case Command::Stylize: run_stylize(ctx, trajectory); break;
      case Command::Adain: run_adain(ctx); break;
      case Command::TrainToy: run_train(ctx, trajectory); break;
      case Command::Compare: result.exit_code = run_compare(ctx); break;
    }
    if (result.exit_code != exit_code::ok) {
      ctx.report["status"] = "error";
      result.message = "one or more comparison kinds failed";
    }
  } catch (const std::exception& e) {
    result.exit_code = exit_code_for(std::current_exception());
    result.message = e.what();
    ctx.report["status"] = "error";
    ctx.report["error"] = ordered_json{{"category", category_name(result.exit_code)}, {"message", e.what()}};
    if (!ctx.report.contains("losses")) put_losses(ctx.report, std::nullopt, trajectory);
  }
  ctx.report["warnings"] = ctx.warnings;

  // Timings live apart from the report so the report is reproducible.
  try {
    const ordered_json timings = ctx.timer.finish();
    write_file_atomic(options.out_dir / "timings.json", timings.dump(2) + "\n");
    const std::string bytes = ctx.report.dump(2) + "\n";
    write_file_atomic(options.out_dir / "report.json", bytes);
    ctx.artifacts.push_back(options.out_dir / "report.json");
    if (!ctx.report.contains("outputs") || !trajectory.empty()) {
      if (result.exit_code != exit_code::ok && command != Command::Compare) {
        write_file_atomic(options.out_dir / "loss.csv", loss_csv(std::nullopt, trajectory, 1));
      }
    }
  } catch (const std::exception& e) {
    if (result.exit_code == exit_code::ok) {
      result.exit_code = exit_code::io;
      result.message = e.what();
    }
  }
  result.report = ctx.report;
  result.artifacts = ctx.artifacts;
  return result;
}

}  // namespace nst
