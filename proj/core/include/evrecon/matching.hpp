#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "evrecon/features.hpp"

namespace evrecon {

// Tentative correspondences between an ordered image pair (a < b).
// One-to-one: no feature index appears twice on either side.
struct MatchSet {
  int image_a = -1;
  int image_b = -1;
  std::vector<std::pair<int, int>> matches;  // (index in Fa, index in Fb)
};

struct MatchStats {
  uint64_t distance_evaluations = 0;  // descriptor pairs compared
};

// Brute-force descriptor matching: mutual nearest neighbors by L2 distance
// with Lowe's ratio test applied in both directions. A side with a single
// feature has no second neighbor there, so the ratio test is waived for
// that direction.
MatchSet match_exhaustive(const FeatureSet& fa, const FeatureSet& fb,
                          double ratio = 0.8, MatchStats* stats = nullptr);

// Sidecar serialization for pipeline resume.
void write_match_sets(const std::string& path, const std::vector<MatchSet>& sets);
std::vector<MatchSet> read_match_sets(const std::string& path);

}  // namespace evrecon
