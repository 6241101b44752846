#include "evrecon/scene_graph.hpp"

#include <numeric>
#include <set>
#include <stdexcept>
#include <unordered_map>

namespace evrecon {

namespace {

struct UnionFind {
  std::vector<int> parent;

  explicit UnionFind(size_t n) : parent(n) {
    std::iota(parent.begin(), parent.end(), 0);
  }
  int find(int i) {
    while (parent[i] != i) {
      parent[i] = parent[parent[i]];
      i = parent[i];
    }
    return i;
  }
  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

}  // namespace

SceneGraph build_scene_graph(int num_images,
                             const std::vector<VerifiedPair>& pairs,
                             const std::vector<FeatureSet>& features) {
  SceneGraph graph;
  graph.num_images = num_images;
  graph.feature_to_track.resize(num_images);

  std::unordered_map<int, const FeatureSet*> feature_sets;
  for (const FeatureSet& set : features) feature_sets[set.image_id] = &set;

  // Global key per (image, feature) pair.
  std::vector<int64_t> keys;
  std::unordered_map<int64_t, int> key_to_node;
  const auto node_for = [&](int image, int feature) {
    const int64_t key = int64_t(image) * (1ll << 32) + feature;
    const auto it = key_to_node.find(key);
    if (it != key_to_node.end()) return it->second;
    const int node = int(keys.size());
    keys.push_back(key);
    key_to_node.emplace(key, node);
    return node;
  };

  std::vector<std::pair<int, int>> unions;
  for (const VerifiedPair& pair : pairs) {
    const int a = pair.matches.image_a;
    const int b = pair.matches.image_b;
    if (a >= b) {
      throw std::invalid_argument("match set must be ordered image_a < image_b");
    }
    const auto key = std::make_pair(a, b);
    SceneEdge edge;
    edge.geometry = pair.geometry;
    const FeatureSet* set_a = feature_sets.count(a) ? feature_sets.at(a) : nullptr;
    const FeatureSet* set_b = feature_sets.count(b) ? feature_sets.at(b) : nullptr;
    if (!set_a || !set_b) {
      throw std::invalid_argument("verified pair references unknown image");
    }
    for (int idx : pair.geometry.inliers) {
      const auto& [fa, fb] = pair.matches.matches[idx];
      unions.emplace_back(node_for(a, fa), node_for(b, fb));
      edge.feature_pairs.emplace_back(fa, fb);
      edge.points.emplace_back(
          Eigen::Vector2d(set_a->features[fa].x, set_a->features[fa].y),
          Eigen::Vector2d(set_b->features[fb].x, set_b->features[fb].y));
    }
    graph.edges[key] = std::move(edge);
  }

  UnionFind uf(keys.size());
  for (const auto& [na, nb] : unions) uf.unite(na, nb);

  // Group nodes by root, dropping components that see an image twice.
  // std::map keeps track order deterministic.
  std::map<int, std::vector<int>> components;
  for (size_t i = 0; i < keys.size(); ++i) {
    components[uf.find(int(i))].push_back(int(i));
  }

  for (auto& [root, nodes] : components) {
    if (nodes.size() < 2) continue;
    std::set<int> images_seen;
    bool consistent = true;
    for (int node : nodes) {
      const int image = int(keys[node] >> 32);
      if (!images_seen.insert(image).second) {
        consistent = false;
        break;
      }
    }
    if (!consistent) continue;

    Track track;
    for (int node : nodes) {
      TrackObservation obs;
      obs.image_id = int(keys[node] >> 32);
      obs.feature_index = int(keys[node] & 0xffffffff);
      const auto it = feature_sets.find(obs.image_id);
      if (it == feature_sets.end() ||
          obs.feature_index >= int(it->second->features.size())) {
        throw std::invalid_argument("verified pair references unknown feature");
      }
      const Feature& f = it->second->features[obs.feature_index];
      obs.xy = {f.x, f.y};
      track.observations.push_back(obs);
    }
    std::sort(track.observations.begin(), track.observations.end(),
              [](const TrackObservation& a, const TrackObservation& b) {
                return a.image_id < b.image_id;
              });
    const int track_index = int(graph.tracks.size());
    for (const TrackObservation& obs : track.observations) {
      graph.feature_to_track[obs.image_id][obs.feature_index] = track_index;
    }
    graph.tracks.push_back(std::move(track));
  }
  return graph;
}

}  // namespace evrecon
