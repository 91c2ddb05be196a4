#include "nst/manifest.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <optional>

namespace nst {

std::vector<TapChecksum> tap_checksums(const Network& net, const WeightStore& weights,
                                       const Tensor& probe) {
  const FeatureBundle taps = forward_with_taps(net, weights, probe);
  std::vector<TapChecksum> out;
  for (const auto& name : net.taps()) {
    const Tensor& t = taps.at(name);
    double sum = 0, sq = 0;
    for (float v : t.values()) {
      sum += double(v);
      sq += double(v) * double(v);
    }
    out.push_back({name, sum / double(t.size()), std::sqrt(sq)});
  }
  return out;
}

namespace {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

double rel_error(double actual, double expected) {
  const double denom = std::max(std::abs(expected), 1e-12);
  return std::abs(actual - expected) / denom;
}

bool parse_double(const std::string& s, double& out) {
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end != s.c_str() && *end == '\0' && std::isfinite(out);
}

}  // namespace

void record_checksums(WeightStore& weights, const std::vector<TapChecksum>& sums) {
  for (const auto& s : sums) {
    weights.set_meta("checksum." + s.tap + ".mean", format_double(s.mean));
    weights.set_meta("checksum." + s.tap + ".l2", format_double(s.l2));
  }
}

bool ManifestReport::ok() const {
  if (!violations.empty()) return false;
  for (const auto& t : taps)
    if (!t.ok) return false;
  return true;
}

ManifestReport verify_manifest(const Network& net, const WeightStore& weights,
                               const Tensor& probe) {
  ManifestReport report;
  report.violations = validate_weights(net, weights);

  std::map<std::string, std::string> mapping;
  std::map<std::string, std::pair<std::optional<double>, std::optional<double>>> expected;
  for (const auto& [key, value] : weights.metadata()) {
    if (key.rfind("map.", 0) == 0) {
      mapping[key.substr(4)] = value;
    } else if (key.rfind("checksum.", 0) == 0) {
      const std::string rest = key.substr(9);
      const auto dot = rest.rfind('.');
      const std::string tap = dot == std::string::npos ? rest : rest.substr(0, dot);
      const std::string field = dot == std::string::npos ? "" : rest.substr(dot + 1);
      double v = 0;
      if ((field != "mean" && field != "l2") || tap.empty()) {
        report.violations.push_back("manifest key '" + key + "' is not checksum.<tap>.mean or .l2");
      } else if (!parse_double(value, v)) {
        report.violations.push_back("manifest key '" + key + "' is not a finite number");
      } else if (field == "mean") {
        expected[tap].first = v;
      } else {
        expected[tap].second = v;
      }
    }
  }

  if (!mapping.empty()) {
    std::map<std::string, std::string> seen;
    for (const LayerSpec* c : net.conv_layers()) {
      const auto it = mapping.find(c->name);
      if (it == mapping.end()) {
        report.violations.push_back("layer '" + c->name + "' has no map entry");
        continue;
      }
      if (auto [pos, fresh] = seen.emplace(it->second, c->name); !fresh) {
        report.violations.push_back("source layer '" + it->second + "' maps to both '" +
                                    pos->second + "' and '" + c->name + "'");
      }
    }
    for (const auto& [engine, source] : mapping) {
      if (!net.has_layer(engine)) {
        report.violations.push_back("map entry '" + engine + "' names no layer in network '" +
                                    net.id() + "'");
      }
    }
  }

  std::vector<std::string> taps;
  for (const auto& [tap, pair] : expected) {
    if (!pair.first || !pair.second) {
      report.violations.push_back("tap '" + tap + "' lacks its " +
                                  std::string(pair.first ? "l2" : "mean") + " checksum");
    } else if (!net.has_layer(tap)) {
      report.violations.push_back("checksum tap '" + tap + "' names no layer in network '" +
                                  net.id() + "'");
    } else {
      taps.push_back(tap);
    }
  }
  if (taps.empty() || !validate_weights(net, weights).empty()) return report;

  const std::vector<TapChecksum> actual = tap_checksums(net.with_taps(taps), weights, probe);
  for (const auto& a : actual) {
    const auto& [mean, l2] = expected.at(a.tap);
    TapCheck c;
    c.tap = a.tap;
    c.expected_mean = *mean;
    c.actual_mean = a.mean;
    c.mean_rel_error = rel_error(a.mean, *mean);
    c.expected_l2 = *l2;
    c.actual_l2 = a.l2;
    c.l2_rel_error = rel_error(a.l2, *l2);
    c.ok = c.mean_rel_error < kChecksumMeanTolerance && c.l2_rel_error < kChecksumL2Tolerance;
    report.taps.push_back(c);
  }
  return report;
}

}  // namespace nst
