#include "evrecon/matching.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include <Eigen/Dense>

#include "evrecon/errors.hpp"

namespace evrecon {

namespace {

using DescriptorMatrix =
    Eigen::Matrix<float, Eigen::Dynamic, 128, Eigen::RowMajor>;

DescriptorMatrix stack_descriptors(const FeatureSet& set) {
  DescriptorMatrix m(set.features.size(), 128);
  for (size_t i = 0; i < set.features.size(); ++i) {
    std::memcpy(m.row(i).data(), set.features[i].descriptor.data(),
                sizeof(float) * 128);
  }
  return m;
}

struct NearestTwo {
  int best = -1;
  float best_d2 = std::numeric_limits<float>::max();
  float second_d2 = std::numeric_limits<float>::max();
};

}  // namespace

MatchSet match_exhaustive(const FeatureSet& fa, const FeatureSet& fb,
                          double ratio, MatchStats* stats) {
  if (ratio <= 0.0 || ratio > 1.0) {
    throw std::invalid_argument("ratio must be in (0, 1]");
  }
  MatchSet out;
  out.image_a = fa.image_id;
  out.image_b = fb.image_id;
  const int na = int(fa.features.size());
  const int nb = int(fb.features.size());
  if (stats) stats->distance_evaluations += uint64_t(na) * uint64_t(nb);
  if (na == 0 || nb == 0) return out;

  // Unit descriptors: d^2 = 2 - 2 a.b, so one matrix product yields every
  // pairwise distance.
  const DescriptorMatrix da = stack_descriptors(fa);
  const DescriptorMatrix db = stack_descriptors(fb);
  const Eigen::MatrixXf dots = da * db.transpose();

  std::vector<NearestTwo> fwd(na);
  std::vector<NearestTwo> rev(nb);
  for (int i = 0; i < na; ++i) {
    for (int j = 0; j < nb; ++j) {
      const float d2 = std::max(0.0f, 2.0f - 2.0f * dots(i, j));
      NearestTwo& f = fwd[i];
      if (d2 < f.best_d2) {
        f.second_d2 = f.best_d2;
        f.best_d2 = d2;
        f.best = j;
      } else if (d2 < f.second_d2) {
        f.second_d2 = d2;
      }
      NearestTwo& r = rev[j];
      if (d2 < r.best_d2) {
        r.second_d2 = r.best_d2;
        r.best_d2 = d2;
        r.best = i;
      } else if (d2 < r.second_d2) {
        r.second_d2 = d2;
      }
    }
  }

  const auto ratio_ok = [&](const NearestTwo& n, int other_count) {
    if (other_count < 2) return true;  // no second neighbor exists
    const double d1 = std::sqrt(double(n.best_d2));
    const double d2 = std::sqrt(double(n.second_d2));
    if (d2 <= 0.0) return false;  // duplicate descriptors, ambiguous
    return d1 / d2 < ratio;
  };

  for (int i = 0; i < na; ++i) {
    const int j = fwd[i].best;
    if (j < 0 || rev[j].best != i) continue;       // cross-check
    if (!ratio_ok(fwd[i], nb)) continue;           // a -> b ratio
    if (!ratio_ok(rev[j], na)) continue;           // b -> a ratio
    out.matches.emplace_back(i, j);
  }
  return out;
}

void write_match_sets(const std::string& path,
                      const std::vector<MatchSet>& sets) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoFailure("cannot open for writing: " + path);
  const char magic[4] = {'E', 'V', 'R', 'M'};
  const uint32_t version = 1;
  const uint32_t count = uint32_t(sets.size());
  out.write(magic, 4);
  out.write(reinterpret_cast<const char*>(&version), 4);
  out.write(reinterpret_cast<const char*>(&count), 4);
  for (const MatchSet& set : sets) {
    const int32_t a = set.image_a, b = set.image_b;
    const uint32_t n = uint32_t(set.matches.size());
    out.write(reinterpret_cast<const char*>(&a), 4);
    out.write(reinterpret_cast<const char*>(&b), 4);
    out.write(reinterpret_cast<const char*>(&n), 4);
    for (const auto& [i, j] : set.matches) {
      const uint32_t ij[2] = {uint32_t(i), uint32_t(j)};
      out.write(reinterpret_cast<const char*>(ij), 8);
    }
  }
  if (!out) throw IoFailure("write failed: " + path);
}

std::vector<MatchSet> read_match_sets(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoFailure("cannot open: " + path);
  char magic[4];
  uint32_t version = 0, count = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&count), 4);
  if (!in || std::memcmp(magic, "EVRM", 4) != 0 || version != 1) {
    throw CorruptHeader("bad match file header: " + path);
  }
  std::vector<MatchSet> sets(count);
  for (MatchSet& set : sets) {
    int32_t a = 0, b = 0;
    uint32_t n = 0;
    in.read(reinterpret_cast<char*>(&a), 4);
    in.read(reinterpret_cast<char*>(&b), 4);
    in.read(reinterpret_cast<char*>(&n), 4);
    if (!in) throw CorruptHeader("truncated match file: " + path);
    set.image_a = a;
    set.image_b = b;
    set.matches.resize(n);
    for (auto& [i, j] : set.matches) {
      uint32_t ij[2];
      in.read(reinterpret_cast<char*>(ij), 8);
      if (!in) throw CorruptHeader("truncated match file: " + path);
      i = int(ij[0]);
      j = int(ij[1]);
    }
  }
  return sets;
}

}  // namespace evrecon
