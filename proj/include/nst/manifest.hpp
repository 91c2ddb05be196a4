#pragma once

#include <string>
#include <vector>

#include "nst/network.hpp"
#include "nst/weights.hpp"

namespace nst {

// Export manifest keys in the weight metadata blob:
//   source=<model id>            network=<engine network id>
//   scale=unit|byte              mean=r,g,b    std=r,g,b
//   map.<engine layer>=<source layer>
//   checksum.<tap>.mean=<%.9g>   checksum.<tap>.l2=<%.9g>

inline constexpr double kChecksumMeanTolerance = 1e-4;
inline constexpr double kChecksumL2Tolerance = 1e-3;

struct TapChecksum {
  std::string tap;
  double mean = 0;
  double l2 = 0;
};

/// Mean and L2 norm of each tap of `net` on `probe`, accumulated in double.
std::vector<TapChecksum> tap_checksums(const Network& net, const WeightStore& weights,
                                       const Tensor& probe);

/// Writes checksum.<tap>.mean / .l2 for every tap of `net`.
void record_checksums(WeightStore& weights, const std::vector<TapChecksum>& sums);

struct TapCheck {
  std::string tap;
  double expected_mean = 0, actual_mean = 0, mean_rel_error = 0;
  double expected_l2 = 0, actual_l2 = 0, l2_rel_error = 0;
  bool ok = false;
};

struct ManifestReport {
  std::vector<std::string> violations;  // weight shape and mapping problems
  std::vector<TapCheck> taps;           // one per checksum.<tap> pair
  bool ok() const;
};

/// Validates weights against `net`, the map.* entries (each conv mapped from
/// exactly one distinct source layer, when any are present), and every
/// recorded tap checksum against an engine forward pass on `probe`.
ManifestReport verify_manifest(const Network& net, const WeightStore& weights,
                               const Tensor& probe);

}  // namespace nst
