#include "evrecon/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "evrecon/image_io.hpp"
#include "evrecon/matching.hpp"
#include "evrecon/parallel.hpp"
#include "evrecon/ply.hpp"
#include "evrecon/representations.hpp"
#include "evrecon/scene_graph.hpp"
#include "evrecon/windowing.hpp"

namespace evrecon {

namespace fs = std::filesystem;

uint64_t fnv1a64(const void* data, size_t size, uint64_t seed) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  uint64_t hash = seed;
  for (size_t i = 0; i < size; ++i) {
    hash ^= bytes[i];
    hash *= 0x100000001b3ull;
  }
  return hash;
}

uint64_t fnv1a64_file(const std::string& path, uint64_t seed) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoFailure("cannot hash missing file: " + path);
  char buffer[1 << 16];
  uint64_t hash = seed;
  while (in) {
    in.read(buffer, sizeof(buffer));
    hash = fnv1a64(buffer, size_t(in.gcount()), hash);
  }
  return hash;
}

namespace {

uint64_t hash_string(const std::string& s, uint64_t seed) {
  return fnv1a64(s.data(), s.size(), seed);
}

std::string hex64(uint64_t v) {
  char buffer[17];
  std::snprintf(buffer, sizeof(buffer), "%016llx",
                static_cast<unsigned long long>(v));
  return buffer;
}

// Persisted stage ledger enabling resume.
class Manifest {
 public:
  explicit Manifest(const fs::path& path) : path_(path) {
    std::ifstream in(path_);
    std::string line;
    while (in && std::getline(in, line)) {
      std::istringstream ss(line);
      std::string tag, stage, hash;
      if (!(ss >> tag >> stage >> hash) || tag != "stage") continue;
      Entry entry;
      entry.hash = hash;
      std::string output;
      while (ss >> output) entry.outputs.push_back(output);
      entries_[stage] = entry;
    }
  }

  bool is_current(const std::string& stage, uint64_t hash,
                  const fs::path& base) const {
    const auto it = entries_.find(stage);
    if (it == entries_.end() || it->second.hash != hex64(hash)) return false;
    for (const std::string& output : it->second.outputs) {
      if (!fs::exists(base / output)) return false;
    }
    return true;
  }

  void record(const std::string& stage, uint64_t hash,
              const std::vector<std::string>& outputs) {
    entries_[stage] = Entry{hex64(hash), outputs};
    std::ofstream out(path_);
    for (const auto& [name, entry] : entries_) {
      out << "stage " << name << " " << entry.hash;
      for (const std::string& output : entry.outputs) out << " " << output;
      out << "\n";
    }
  }

  std::vector<std::string> outputs(const std::string& stage) const {
    const auto it = entries_.find(stage);
    return it == entries_.end() ? std::vector<std::string>{}
                                : it->second.outputs;
  }

 private:
  struct Entry {
    std::string hash;
    std::vector<std::string> outputs;
  };
  fs::path path_;
  std::map<std::string, Entry> entries_;
};

struct SelectedImage {
  int64_t t_us;
  std::string relative_path;
};

void write_selected_images(const fs::path& path,
                           const std::vector<SelectedImage>& images) {
  std::ofstream out(path);
  char line[512];
  for (const SelectedImage& image : images) {
    std::snprintf(line, sizeof(line), "%.9f %s\n", image.t_us * 1e-6,
                  image.relative_path.c_str());
    out << line;
  }
}

std::vector<SelectedImage> read_selected_images(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoFailure("cannot open " + path.string());
  std::vector<SelectedImage> images;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    double t = 0.0;
    std::string rel;
    if (!(ss >> t >> rel)) throw CorruptHeader("bad image list line: " + line);
    images.push_back(SelectedImage{std::llround(t * 1e6), rel});
  }
  return images;
}

void write_verified_pairs(const fs::path& path,
                          const std::vector<VerifiedPair>& pairs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoFailure("cannot open for writing: " + path.string());
  const char magic[4] = {'E', 'V', 'R', 'G'};
  const uint32_t version = 1;
  const uint32_t count = uint32_t(pairs.size());
  out.write(magic, 4);
  out.write(reinterpret_cast<const char*>(&version), 4);
  out.write(reinterpret_cast<const char*>(&count), 4);
  for (const VerifiedPair& pair : pairs) {
    const int32_t ids[2] = {pair.matches.image_a, pair.matches.image_b};
    out.write(reinterpret_cast<const char*>(ids), 8);
    const uint32_t num_matches = uint32_t(pair.matches.matches.size());
    out.write(reinterpret_cast<const char*>(&num_matches), 4);
    for (const auto& [a, b] : pair.matches.matches) {
      const uint32_t ab[2] = {uint32_t(a), uint32_t(b)};
      out.write(reinterpret_cast<const char*>(ab), 8);
    }
    const uint8_t model = uint8_t(pair.geometry.model);
    const uint8_t degenerate = pair.geometry.init_degenerate ? 1 : 0;
    out.write(reinterpret_cast<const char*>(&model), 1);
    out.write(reinterpret_cast<const char*>(&degenerate), 1);
    const int32_t counts[2] = {pair.geometry.num_h_inliers,
                               pair.geometry.num_ef_inliers};
    out.write(reinterpret_cast<const char*>(counts), 8);
    out.write(reinterpret_cast<const char*>(pair.geometry.matrix.data()), 72);
    const uint32_t num_inliers = uint32_t(pair.geometry.inliers.size());
    out.write(reinterpret_cast<const char*>(&num_inliers), 4);
    for (const int idx : pair.geometry.inliers) {
      const uint32_t v = uint32_t(idx);
      out.write(reinterpret_cast<const char*>(&v), 4);
    }
  }
}

std::vector<VerifiedPair> read_verified_pairs(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoFailure("cannot open: " + path.string());
  char magic[4];
  uint32_t version = 0, count = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&count), 4);
  if (!in || std::memcmp(magic, "EVRG", 4) != 0 || version != 1) {
    throw CorruptHeader("bad verified-pair file: " + path.string());
  }
  std::vector<VerifiedPair> pairs(count);
  for (VerifiedPair& pair : pairs) {
    int32_t ids[2];
    uint32_t num_matches = 0;
    in.read(reinterpret_cast<char*>(ids), 8);
    in.read(reinterpret_cast<char*>(&num_matches), 4);
    if (!in) throw CorruptHeader("truncated verified-pair file");
    pair.matches.image_a = ids[0];
    pair.matches.image_b = ids[1];
    pair.matches.matches.resize(num_matches);
    for (auto& [a, b] : pair.matches.matches) {
      uint32_t ab[2];
      in.read(reinterpret_cast<char*>(ab), 8);
      a = int(ab[0]);
      b = int(ab[1]);
    }
    uint8_t model = 0, degenerate = 0;
    int32_t counts[2];
    in.read(reinterpret_cast<char*>(&model), 1);
    in.read(reinterpret_cast<char*>(&degenerate), 1);
    in.read(reinterpret_cast<char*>(counts), 8);
    in.read(reinterpret_cast<char*>(pair.geometry.matrix.data()), 72);
    uint32_t num_inliers = 0;
    in.read(reinterpret_cast<char*>(&num_inliers), 4);
    if (!in) throw CorruptHeader("truncated verified-pair file");
    pair.geometry.model = TwoViewModel(model);
    pair.geometry.init_degenerate = degenerate != 0;
    pair.geometry.num_h_inliers = counts[0];
    pair.geometry.num_ef_inliers = counts[1];
    pair.geometry.inliers.resize(num_inliers);
    for (int& idx : pair.geometry.inliers) {
      uint32_t v = 0;
      in.read(reinterpret_cast<char*>(&v), 4);
      idx = int(v);
    }
  }
  return pairs;
}

}  // namespace

PipelineConfig PipelineConfig::from_toml(const TomlTable& table,
                                         const std::string& base_dir) {
  PipelineConfig config;
  const auto resolve = [&](const std::string& path) {
    if (path.empty() || fs::path(path).is_absolute()) return path;
    return (fs::path(base_dir) / path).string();
  };

  config.events_path = resolve(table.get_string("input.events", ""));
  const std::string format = table.get_string("input.format", "text");
  if (format == "text") {
    config.event_format = EventFormat::Text;
  } else if (format == "binary") {
    config.event_format = EventFormat::Binary;
  } else {
    throw ConfigError("input.format must be text or binary, got " + format);
  }
  const std::string unit = table.get_string("input.timestamps", "seconds");
  if (unit == "seconds") {
    config.timestamp_unit = TimestampUnit::Seconds;
  } else if (unit == "microseconds") {
    config.timestamp_unit = TimestampUnit::Microseconds;
  } else {
    throw ConfigError("input.timestamps must be seconds or microseconds");
  }
  config.strict_events = table.get_bool("input.strict", true);
  config.geometry.width = int(table.get_int("input.width", 346));
  config.geometry.height = int(table.get_int("input.height", 260));

  const std::string policy = table.get_string("window.policy", "count");
  if (policy == "count") {
    config.window_policy = WindowPolicy::Count;
  } else if (policy == "duration") {
    config.window_policy = WindowPolicy::Duration;
  } else {
    throw ConfigError("window.policy must be count or duration");
  }
  config.window_count = int(table.get_int("window.count", 0));
  config.window_duration_us = table.get_int("window.duration_us", 0);

  const std::string method = table.get_string("reconstruct.method", "integrator");
  if (method == "integrator") {
    config.reconstructor = Reconstructor::Integrator;
  } else if (method == "external") {
    config.reconstructor = Reconstructor::External;
  } else {
    throw ConfigError("reconstruct.method must be integrator or external");
  }
  config.external_manifest = resolve(table.get_string("reconstruct.manifest", ""));
  config.integrator.contrast = table.get_double("reconstruct.contrast", 0.1);
  config.integrator.decay_per_second = table.get_double("reconstruct.decay", 0.1);
  config.integrator.low_percentile =
      table.get_double("reconstruct.low_percentile", 0.01);
  config.integrator.high_percentile =
      table.get_double("reconstruct.high_percentile", 0.99);
  config.image_skip = int(table.get_int("reconstruct.skip", 0));
  config.image_stride = int(table.get_int("reconstruct.stride", 1));
  config.image_limit = int(table.get_int("reconstruct.limit", 0));

  config.sift.max_features = int(table.get_int("features.max_features", 4000));
  config.sift.contrast_threshold =
      table.get_double("features.contrast_threshold", 0.02);
  config.sift.edge_threshold = table.get_double("features.edge_threshold", 10.0);
  config.sift.num_octaves = int(table.get_int("features.octaves", 0));

  config.match_ratio = table.get_double("matching.ratio", 0.8);
  config.match_max_pair_gap = int(table.get_int("matching.max_pair_gap", 0));

  config.verify.h_threshold_px = table.get_double("verify.h_threshold", 2.0);
  config.verify.ef_threshold_px = table.get_double("verify.ef_threshold", 1.5);
  config.verify.min_inliers = int(table.get_int("verify.min_inliers", 15));
  config.verify.max_iterations = int(table.get_int("verify.max_iterations", 10000));

  if (table.get_bool("intrinsics.known", false)) {
    CameraIntrinsics k;
    k.fx = table.get_double("intrinsics.fx", 0.0);
    k.fy = table.get_double("intrinsics.fy", 0.0);
    k.cx = table.get_double("intrinsics.cx", 0.0);
    k.cy = table.get_double("intrinsics.cy", 0.0);
    k.k1 = table.get_double("intrinsics.k1", 0.0);
    config.intrinsics = k;
  }

  config.sfm.min_2d3d = int(table.get_int("sfm.min_2d3d", 12));
  config.sfm.max_reproj_px = table.get_double("sfm.max_reproj", 4.0);
  config.sfm.min_angle_deg = table.get_double("sfm.min_angle", 1.5);
  config.sfm.init_min_median_angle_deg =
      table.get_double("sfm.init_min_angle", 3.0);
  config.sfm.local_ba_cameras = int(table.get_int("sfm.local_ba_cameras", 5));

  config.stereo.window_radius = int(table.get_int("mvs.window_radius", 5));
  config.stereo.iterations = int(table.get_int("mvs.iterations", 3));
  config.stereo.cost_gate = table.get_double("mvs.cost_gate", 0.6);
  config.stereo_neighbors = int(table.get_int("mvs.neighbors", 4));
  config.fusion.min_support = int(table.get_int("mvs.min_support", 2));
  config.fusion.max_reproj_px = table.get_double("mvs.max_reproj", 1.0);
  config.fusion.max_rel_depth_diff =
      table.get_double("mvs.max_rel_depth_diff", 0.01);
  config.binary_ply = table.get_bool("output.binary_ply", true);

  config.output_dir = resolve(table.get_string("output.dir", "out"));
  config.seed = uint64_t(table.get_int("output.seed", 0));
  return config;
}

void PipelineConfig::validate() const {
  if (events_path.empty() || !fs::exists(events_path)) {
    throw ConfigError("input.events does not exist: " + events_path);
  }
  if (!geometry.valid()) throw ConfigError("sensor geometry must be positive");
  if (window_policy == WindowPolicy::Duration && window_duration_us < 1) {
    throw ConfigError("window.duration_us must be >= 1");
  }
  if (window_count < 0) throw ConfigError("window.count must be >= 0");
  if (reconstructor == Reconstructor::External &&
      (external_manifest.empty() || !fs::exists(external_manifest))) {
    throw ConfigError("reconstruct.manifest does not exist: " +
                      external_manifest);
  }
  if (integrator.contrast <= 0.0) throw ConfigError("contrast must be > 0");
  if (integrator.decay_per_second < 0.0) throw ConfigError("decay must be >= 0");
  if (image_stride < 1) throw ConfigError("reconstruct.stride must be >= 1");
  if (image_skip < 0 || image_limit < 0) {
    throw ConfigError("reconstruct.skip/limit must be >= 0");
  }
  if (match_ratio <= 0.0 || match_ratio > 1.0) {
    throw ConfigError("matching.ratio must be in (0, 1]");
  }
  if (match_max_pair_gap < 0) {
    throw ConfigError("matching.max_pair_gap must be >= 0");
  }
  if (intrinsics && (intrinsics->fx <= 0.0 || intrinsics->fy <= 0.0)) {
    throw ConfigError("intrinsics focal lengths must be positive");
  }
  if (stereo.window_radius < 1) throw ConfigError("mvs.window_radius >= 1");
  if (stereo_neighbors < 1) throw ConfigError("mvs.neighbors >= 1");
}

namespace {

std::string config_fingerprint(const PipelineConfig& c,
                               const std::string& section) {
  std::ostringstream out;
  if (section == "input") {
    out << int(c.event_format) << "," << int(c.timestamp_unit) << ","
        << c.strict_events << "," << c.geometry.width << ","
        << c.geometry.height;
  } else if (section == "images") {
    out << int(c.window_policy) << "," << c.window_count << ","
        << c.window_duration_us << "," << int(c.reconstructor) << ","
        << c.integrator.contrast << "," << c.integrator.decay_per_second << ","
        << c.integrator.low_percentile << "," << c.integrator.high_percentile;
  } else if (section == "features") {
    out << c.image_skip << "," << c.image_stride << "," << c.image_limit << ","
        << c.sift.max_features << "," << c.sift.contrast_threshold << ","
        << c.sift.edge_threshold << "," << c.sift.num_octaves;
  } else if (section == "matches") {
    out << c.match_ratio << "," << c.match_max_pair_gap << ","
        << c.verify.h_threshold_px << "," << c.verify.ef_threshold_px << ","
        << c.verify.min_inliers << "," << c.seed << "," << bool(c.intrinsics);
    if (c.intrinsics) {
      out << "," << c.intrinsics->fx << "," << c.intrinsics->fy << ","
          << c.intrinsics->cx << "," << c.intrinsics->cy << ","
          << c.intrinsics->k1;
    }
  } else if (section == "sfm") {
    out << c.sfm.min_2d3d << "," << c.sfm.max_reproj_px << ","
        << c.sfm.min_angle_deg << "," << c.sfm.init_min_median_angle_deg << ","
        << c.sfm.local_ba_cameras << "," << c.seed << "," << c.binary_ply;
  } else if (section == "mvs") {
    out << c.stereo.window_radius << "," << c.stereo.iterations << ","
        << c.stereo.cost_gate << "," << c.stereo_neighbors << ","
        << c.fusion.min_support << "," << c.fusion.max_reproj_px << ","
        << c.fusion.max_rel_depth_diff << "," << c.seed << "," << c.binary_ply;
  }
  return out.str();
}

}  // namespace

PipelineResult run_pipeline(const PipelineConfig& config,
                            const std::string& stage_only,
                            const std::string& run_through) {
  config.validate();
  for (const std::string& requested : {stage_only, run_through}) {
    if (requested.empty()) continue;
    bool known = false;
    for (const char* name : kStageNames) known = known || requested == name;
    if (!known) throw ConfigError("unknown stage: " + requested);
  }
  if (!stage_only.empty() && !run_through.empty()) {
    throw ConfigError("stage_only and run_through are mutually exclusive");
  }

  const fs::path out_dir(config.output_dir);
  fs::create_directories(out_dir);
  fs::create_directories(out_dir / "images");
  fs::create_directories(out_dir / "sparse");
  fs::create_directories(out_dir / "depth");

  Manifest manifest(out_dir / "pipeline_manifest.txt");
  PipelineResult result;

  bool stopped = false;
  const auto run_stage = [&](const char* stage, uint64_t hash,
                             const std::vector<std::string>& outputs,
                             const auto& body) {
    if (stopped) return;
    StageArtifact artifact;
    artifact.stage = stage;
    artifact.input_hash = hash;
    artifact.outputs = outputs;
    if (manifest.is_current(stage, hash, out_dir)) {
      artifact.skipped = true;
      result.artifacts.push_back(artifact);
    } else {
      if (!stage_only.empty() && stage_only != stage) {
        throw StageFailure(std::string("stage ") + stage +
                           ": artifacts missing or stale but --stage-only "
                           "requested " +
                           stage_only);
      }
      try {
        body();
      } catch (const StageFailure&) {
        throw;
      } catch (const std::exception& e) {
        throw StageFailure(std::string("stage ") + stage + ": " + e.what());
      }
      manifest.record(stage, hash, outputs);
      result.artifacts.push_back(artifact);
    }
    if (stage_only == stage || run_through == stage) stopped = true;
  };

  // Stage 1: events -> normalized binary stream.
  const uint64_t events_hash =
      hash_string(config_fingerprint(config, "input"),
                  fnv1a64_file(config.events_path));
  run_stage("events", events_hash, {"events.bin"}, [&] {
    EventParseOptions options;
    options.format = config.event_format;
    options.unit = config.timestamp_unit;
    options.strict = config.strict_events;
    const EventStream stream =
        parse_events_file(config.events_path, config.geometry, options);
    write_events_file((out_dir / "events.bin").string(), stream,
                      EventFormat::Binary);
  });

  // Stage 2: windows -> intensity images.
  const uint64_t images_hash =
      hash_string(config_fingerprint(config, "images"), events_hash);
  run_stage("images", images_hash, {"images/manifest.txt"}, [&] {
    std::vector<IntensityImage> images;
    if (config.reconstructor == PipelineConfig::Reconstructor::External) {
      images = load_external_frames(config.external_manifest);
    } else {
      EventParseOptions options;
      options.format = EventFormat::Binary;
      options.unit = TimestampUnit::Microseconds;
      const EventStream stream = parse_events_file(
          (out_dir / "events.bin").string(), config.geometry, options);
      std::vector<EventWindow> windows;
      if (config.window_policy == PipelineConfig::WindowPolicy::Count) {
        const int n = config.window_count > 0
                          ? config.window_count
                          : default_window_event_count(config.geometry);
        windows = window_by_count(stream, n);
      } else {
        windows = window_by_duration(stream, config.window_duration_us);
      }
      ReconState state = init_state(config.geometry);
      for (const EventWindow& window : windows) {
        auto [image, next] = reconstruct_window(window, state, config.integrator);
        state = std::move(next);
        images.push_back(std::move(image));
      }
    }
    std::vector<SelectedImage> listed;
    for (const IntensityImage& image : images) {
      char name[64];
      std::snprintf(name, sizeof(name), "images/frame_%05d.pgm", image.index);
      write_pgm((out_dir / name).string(), image.values);
      listed.push_back(SelectedImage{image.t_mid, name});
    }
    write_selected_images(out_dir / "images" / "manifest.txt", listed);
  });

  // Stage 3: features over the selected image subsequence.
  const uint64_t features_hash = hash_string(
      config_fingerprint(config, "features"), images_hash);
  run_stage("features", features_hash,
            {"features.bin", "selected_images.txt"}, [&] {
    const auto all = read_selected_images(out_dir / "images" / "manifest.txt");
    std::vector<SelectedImage> selected;
    for (size_t i = config.image_skip; i < all.size();
         i += config.image_stride) {
      if (config.image_limit > 0 &&
          int(selected.size()) >= config.image_limit) {
        break;
      }
      selected.push_back(all[i]);
    }
    if (selected.empty()) {
      throw StageFailure("no images selected for reconstruction");
    }
    write_selected_images(out_dir / "selected_images.txt", selected);

    std::vector<FeatureSet> sets(selected.size());
    parallel_for(0, int(selected.size()), [&](int i) {
      const ImageF image =
          read_pgm((out_dir / selected[i].relative_path).string());
      sets[i] = detect_features(image, i, config.sift);
    });
    write_feature_sets((out_dir / "features.bin").string(), sets);
  });

  // Stage 4: exhaustive matching + geometric verification.
  const uint64_t matches_hash = hash_string(
      config_fingerprint(config, "matches"), features_hash);
  run_stage("matches", matches_hash, {"matches.bin", "verified.bin"}, [&] {
    const auto sets = read_feature_sets((out_dir / "features.bin").string());
    const int n = int(sets.size());
    std::vector<std::pair<int, int>> pairs;
    for (int a = 0; a < n; ++a) {
      for (int b = a + 1; b < n; ++b) {
        if (config.match_max_pair_gap > 0 &&
            b - a > config.match_max_pair_gap) {
          continue;
        }
        pairs.emplace_back(a, b);
      }
    }
    std::vector<MatchSet> match_sets(pairs.size());
    std::vector<std::optional<TwoViewGeometry>> geometries(pairs.size());
    parallel_for(0, int(pairs.size()), [&](int i) {
      const auto [a, b] = pairs[i];
      match_sets[i] = match_exhaustive(sets[a], sets[b], config.match_ratio);
      VerifyParams verify = config.verify;
      verify.seed =
          config.seed ^ (uint64_t(a) * 0x9e3779b97f4a7c15ull + uint64_t(b));
      if (int(match_sets[i].matches.size()) >= (config.intrinsics ? 5 : 8)) {
        try {
          geometries[i] = verify_pair(match_sets[i], sets[a], sets[b],
                                      config.intrinsics, verify);
        } catch (const DegenerateConfiguration&) {
          geometries[i] = std::nullopt;
        }
      }
    });
    write_match_sets((out_dir / "matches.bin").string(), match_sets);
    std::vector<VerifiedPair> verified;
    for (size_t i = 0; i < pairs.size(); ++i) {
      if (!geometries[i]) continue;
      VerifiedPair pair;
      pair.matches = std::move(match_sets[i]);
      pair.geometry = std::move(*geometries[i]);
      verified.push_back(std::move(pair));
    }
    write_verified_pairs(out_dir / "verified.bin", verified);
  });

  // Stage 5: incremental reconstruction.
  const uint64_t sfm_hash =
      hash_string(config_fingerprint(config, "sfm"), matches_hash);
  run_stage("sfm", sfm_hash,
            {"sparse/cameras.txt", "sparse/images.txt", "sparse/points3D.txt",
             "sparse.ply"},
            [&] {
    const auto sets = read_feature_sets((out_dir / "features.bin").string());
    const auto verified = read_verified_pairs(out_dir / "verified.bin");
    const SceneGraph graph =
        build_scene_graph(int(sets.size()), verified, sets);
    SfmOptions options = config.sfm;
    options.seed = config.seed;
    const Reconstruction recon =
        run_incremental(graph, config.intrinsics, config.geometry, options);
    write_reconstruction_text((out_dir / "sparse").string(), recon,
                              config.geometry.width, config.geometry.height);
    write_ply(to_ply_cloud(recon), (out_dir / "sparse.ply").string(),
              config.binary_ply);
  });

  // Stage 6: dense reconstruction.
  const uint64_t mvs_hash =
      hash_string(config_fingerprint(config, "mvs"), sfm_hash);
  run_stage("mvs", mvs_hash, {"dense.ply"}, [&] {
    const Reconstruction recon =
        read_reconstruction_text((out_dir / "sparse").string());
    const auto selected = read_selected_images(out_dir / "selected_images.txt");

    std::vector<ImageF> images(selected.size());
    for (size_t i = 0; i < selected.size(); ++i) {
      images[i] = read_pgm((out_dir / selected[i].relative_path).string());
    }

    std::vector<int> registered;
    for (const auto& [id, pose] : recon.images) {
      if (id >= 0 && id < int(images.size())) registered.push_back(id);
    }
    if (registered.size() < 2) {
      throw StageFailure("fewer than two registered views for stereo");
    }

    std::vector<StereoView> views;
    for (const int id : registered) {
      views.push_back(StereoView{id, &images[id], recon.images.at(id)});
    }
    const auto view_of = [&](int id) -> const StereoView& {
      for (const StereoView& view : views) {
        if (view.image_id == id) return view;
      }
      throw StageFailure("view lookup failed");
    };

    std::vector<DepthMap> depth_maps(views.size());
    std::vector<uint8_t> usable(views.size(), 0);
    parallel_for(0, int(views.size()), [&](int i) {
      const int ref_id = views[i].image_id;
      std::vector<int> neighbor_ids;
      try {
        neighbor_ids =
            select_stereo_neighbors(recon, ref_id, config.stereo_neighbors);
      } catch (const NoUsableNeighbors&) {
        return;
      }
      std::vector<StereoView> neighbors;
      for (const int id : neighbor_ids) neighbors.push_back(view_of(id));
      StereoParams params = config.stereo;
      std::tie(params.d_min, params.d_max) = sparse_depth_range(recon, ref_id);
      params.seed = config.seed;
      depth_maps[i] = patchmatch_depth(views[i], neighbors,
                                       recon.intrinsics, params);
      usable[i] = 1;
    });

    std::vector<DepthMap> valid_maps;
    std::vector<StereoView> valid_views;
    for (size_t i = 0; i < views.size(); ++i) {
      if (!usable[i]) continue;
      char name[64];
      std::snprintf(name, sizeof(name), "depth/depth_%05d.pfm",
                    views[i].image_id);
      write_pfm((out_dir / name).string(), depth_maps[i].depth);
      std::snprintf(name, sizeof(name), "depth/normal_%05d.pfm",
                    views[i].image_id);
      const int w = depth_maps[i].normal.width();
      const int h = depth_maps[i].normal.height();
      ImageF nx(w, h), ny(w, h), nz(w, h);
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const Eigen::Vector3f& normal = depth_maps[i].normal(x, y);
          nx(x, y) = normal.x();
          ny(x, y) = normal.y();
          nz(x, y) = normal.z();
        }
      }
      write_pfm_color((out_dir / name).string(), nx, ny, nz);
      valid_maps.push_back(std::move(depth_maps[i]));
      valid_views.push_back(views[i]);
    }

    const DensePointCloud dense =
        fuse_depth_maps(valid_maps, valid_views, recon.intrinsics,
                        config.fusion);
    write_ply(to_ply_cloud(dense), (out_dir / "dense.ply").string(),
              config.binary_ply);
    result.dense_points = dense.points.size();
  });

  // Populate the summary counts from the artifacts on disk.
  if (fs::exists(out_dir / "selected_images.txt")) {
    result.images_total =
        int(read_selected_images(out_dir / "selected_images.txt").size());
  }
  if (fs::exists(out_dir / "sparse" / "points3D.txt")) {
    const Reconstruction recon =
        read_reconstruction_text((out_dir / "sparse").string());
    result.images_registered = int(recon.images.size());
    result.sparse_points = recon.points.size();
  }
  if (result.dense_points == 0 && fs::exists(out_dir / "dense.ply")) {
    result.dense_points = read_ply((out_dir / "dense.ply").string()).points.size();
  }
  return result;
}

}  // namespace evrecon
