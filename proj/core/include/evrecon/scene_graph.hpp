#pragma once

#include <map>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "evrecon/matching.hpp"
#include "evrecon/two_view.hpp"

namespace evrecon {

// One 2D observation of a track.
struct TrackObservation {
  int image_id = -1;
  int feature_index = -1;
  Eigen::Vector2d xy = Eigen::Vector2d::Zero();
};

struct Track {
  std::vector<TrackObservation> observations;
};

// Verified pair with its inlier correspondences resolved to features and
// pixel coordinates (first of each pair belongs to the lower image id).
struct SceneEdge {
  TwoViewGeometry geometry;
  std::vector<std::pair<int, int>> feature_pairs;
  std::vector<std::pair<Eigen::Vector2d, Eigen::Vector2d>> points;
};

// Images as nodes, verified pairs as edges, plus feature tracks chained
// across the verified inlier correspondences.
struct SceneGraph {
  int num_images = 0;
  std::map<std::pair<int, int>, SceneEdge> edges;  // key a < b
  std::vector<Track> tracks;
  // Per image: feature index -> track index.
  std::vector<std::map<int, int>> feature_to_track;

  const SceneEdge* edge(int a, int b) const {
    const auto it = edges.find(a < b ? std::make_pair(a, b)
                                     : std::make_pair(b, a));
    return it == edges.end() ? nullptr : &it->second;
  }
};

struct VerifiedPair {
  MatchSet matches;
  TwoViewGeometry geometry;
};

// Union-find over inlier correspondences. Tracks observing the same image
// twice are inconsistent and dropped entirely.
SceneGraph build_scene_graph(int num_images,
                             const std::vector<VerifiedPair>& pairs,
                             const std::vector<FeatureSet>& features);

}  // namespace evrecon
