#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "evrecon/errors.hpp"
#include "evrecon/event_io.hpp"
#include "evrecon/features.hpp"
#include "evrecon/incremental_sfm.hpp"
#include "evrecon/integrator.hpp"
#include "evrecon/mvs.hpp"
#include "evrecon/toml.hpp"
#include "evrecon/two_view.hpp"

namespace evrecon {

class ConfigError : public Error {
 public:
  using Error::Error;
};
class StageFailure : public Error {
 public:
  using Error::Error;
};

struct PipelineConfig {
  // input
  std::string events_path;
  EventFormat event_format = EventFormat::Text;
  TimestampUnit timestamp_unit = TimestampUnit::Seconds;
  bool strict_events = true;
  SensorGeometry geometry{346, 260};

  // windowing
  enum class WindowPolicy { Count, Duration };
  WindowPolicy window_policy = WindowPolicy::Count;
  int window_count = 0;  // 0 derives 0.35 * w * h
  int64_t window_duration_us = 0;

  // intensity reconstruction
  enum class Reconstructor { Integrator, External };
  Reconstructor reconstructor = Reconstructor::Integrator;
  std::string external_manifest;
  IntegratorConfig integrator;
  // image subsequence handed to SfM: drop the first `skip`, then take
  // every `stride`-th, up to `limit` (0 = unlimited)
  int image_skip = 0;
  int image_stride = 1;
  int image_limit = 0;

  // correspondence search
  SiftParams sift;
  double match_ratio = 0.8;
  // 0 matches every pair exhaustively; otherwise only pairs whose image
  // indices differ by at most this much.
  int match_max_pair_gap = 0;
  VerifyParams verify;

  // intrinsics (optional: SfM self-calibrates when absent)
  std::optional<CameraIntrinsics> intrinsics;

  // reconstruction + dense stage
  SfmOptions sfm;
  StereoParams stereo;
  int stereo_neighbors = 4;
  FusionParams fusion;
  bool binary_ply = true;

  std::string output_dir = "out";
  uint64_t seed = 0;

  static PipelineConfig from_toml(const TomlTable& table,
                                  const std::string& base_dir);
  // Throws ConfigError on missing inputs or out-of-range parameters.
  void validate() const;
};

struct StageArtifact {
  std::string stage;
  uint64_t input_hash = 0;
  std::vector<std::string> outputs;
  bool skipped = false;  // inputs unchanged, outputs reused
};

struct PipelineResult {
  std::vector<StageArtifact> artifacts;
  int images_total = 0;
  int images_registered = 0;
  size_t sparse_points = 0;
  size_t dense_points = 0;
};

// Stage names accepted by --stage-only.
inline constexpr const char* kStageNames[] = {"events", "images", "features",
                                              "matches", "sfm", "mvs"};

// Runs events -> windows -> images -> features/matches -> SfM -> MVS with
// per-stage artifacts and hash-based resume. Throws ConfigError before any
// stage runs, StageFailure (with the stage name) afterwards.
// stage_only executes exactly one stage (upstream artifacts must be
// current); run_through executes the normal sequence but stops after the
// named stage.
PipelineResult run_pipeline(const PipelineConfig& config,
                            const std::string& stage_only = "",
                            const std::string& run_through = "");

// 64-bit FNV-1a, the pipeline's artifact hash.
uint64_t fnv1a64(const void* data, size_t size, uint64_t seed = 0xcbf29ce484222325ull);
uint64_t fnv1a64_file(const std::string& path, uint64_t seed = 0xcbf29ce484222325ull);

}  // namespace evrecon
