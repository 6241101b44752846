// Command line front end: full pipeline plus per-stage and simulation
// subcommands.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <string>

#include <CLI11.hpp>

#include "evrecon/event_io.hpp"
#include "evrecon/image_io.hpp"
#include "evrecon/pipeline.hpp"
#include "evrecon/representations.hpp"
#include "evrecon/simulator.hpp"
#include "evrecon/windowing.hpp"

namespace {

using namespace evrecon;
namespace fs = std::filesystem;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;

struct CommonArgs {
  std::string config_path;
  std::string output_dir;
  int64_t seed = -1;
  int match_gap = -1;

  PipelineConfig load() const {
    const TomlTable table = TomlTable::parse_file(config_path);
    const std::string base = fs::path(config_path).parent_path().string();
    PipelineConfig config = PipelineConfig::from_toml(table, base);
    if (!output_dir.empty()) config.output_dir = output_dir;
    if (seed >= 0) config.seed = uint64_t(seed);
    if (match_gap >= 0) config.match_max_pair_gap = match_gap;
    return config;
  }
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "Pipeline TOML config file")
      ->required();
  cmd->add_option("--out", args.output_dir, "Output directory override");
  cmd->add_option("--seed", args.seed, "RNG seed override");
  cmd->add_option("--match-gap", args.match_gap,
                  "Match only image pairs at most this far apart "
                  "(0 = exhaustive)");
}

void print_result(const PipelineResult& result) {
  for (const StageArtifact& artifact : result.artifacts) {
    std::printf("stage %-8s %s hash %016llx\n", artifact.stage.c_str(),
                artifact.skipped ? "skipped" : "done   ",
                static_cast<unsigned long long>(artifact.input_hash));
  }
  std::printf("images: %d total, %d registered\n", result.images_total,
              result.images_registered);
  std::printf("points: %zu sparse, %zu dense\n", result.sparse_points,
              result.dense_points);
}

int run_guarded(const CommonArgs& args, const std::string& stage_only,
                const std::string& run_through = "") {
  PipelineConfig config;
  try {
    config = args.load();
    config.validate();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  }
  try {
    print_result(run_pipeline(config, stage_only, run_through));
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "pipeline failed: %s\n", e.what());
    return kExitStage;
  }
  return kExitOk;
}

// Synthetic scene capture: events, trajectory, ground-truth depth and the
// rendered frames.
struct SimulateArgs {
  std::string out_dir = "sim";
  std::string scene = "box";
  int frames = 120;
  double rate_hz = 60.0;
  double arc_deg = 60.0;
  double arc_start_deg = 25.0;  // corner-on by default: avoids single-plane pairs
  double radius = 6.0;
  double height = 2.0;
  double contrast = 0.1;
  uint64_t seed = 1;
  int width = 346;
  int height_px = 260;
  bool binary_events = false;
  bool write_frames = false;
};

int run_simulate(const SimulateArgs& args) {
  try {
    SyntheticScene scene;
    scene.texture_seed = args.seed;
    scene.geometry = {args.width, args.height_px};
    const double f = 0.9 * std::max(args.width, args.height_px);
    scene.intrinsics = {f, f, 0.5 * (args.width - 1), 0.5 * (args.height_px - 1),
                        0.0};
    if (args.scene == "plane") {
      scene.kind = SyntheticScene::Kind::Plane;
      scene.plane_depth = 5.0;
    } else if (args.scene == "box") {
      scene.kind = SyntheticScene::Kind::Box;
      scene.box_min = Eigen::Vector3d(-2.0, -2.0, -2.0);
      scene.box_max = Eigen::Vector3d(2.0, 2.0, 2.0);
    } else {
      std::fprintf(stderr, "config error: unknown scene '%s'\n",
                   args.scene.c_str());
      return kExitConfig;
    }
    const int64_t duration_us =
        std::llround(double(args.frames - 1) / args.rate_hz * 1e6);
    scene.trajectory = orbit_trajectory(Eigen::Vector3d::Zero(), args.radius,
                                        args.height, args.arc_deg, 64,
                                        duration_us, args.arc_start_deg);

    const RenderedSequence seq =
        render_sequence(scene, args.frames, args.rate_hz);
    SimulatorConfig sim;
    sim.contrast = args.contrast;
    const EventStream events = generate_events(seq.frames, sim);

    fs::create_directories(args.out_dir);
    const fs::path out(args.out_dir);
    write_events_file((out / (args.binary_events ? "events.bin" : "events.txt"))
                          .string(),
                      events,
                      args.binary_events ? EventFormat::Binary
                                         : EventFormat::Text);
    write_trajectory((out / "trajectory.txt").string(), seq.poses);
    std::ofstream frames_manifest;
    if (args.write_frames) {
      frames_manifest.open(out / "frames_manifest.txt");
    }
    for (size_t i = 0; i < seq.depth_maps.size(); ++i) {
      char name[64];
      std::snprintf(name, sizeof(name), "depth_%05zu.pfm", i);
      write_pfm((out / name).string(), seq.depth_maps[i]);
      if (args.write_frames) {
        ImageF frame(seq.frames[i].values.width(),
                     seq.frames[i].values.height());
        for (int y = 0; y < frame.height(); ++y) {
          for (int x = 0; x < frame.width(); ++x) {
            frame(x, y) = float(std::exp(seq.frames[i].values(x, y)));
          }
        }
        std::snprintf(name, sizeof(name), "frame_%05zu.pgm", i);
        write_pgm((out / name).string(), frame);
        char line[96];
        std::snprintf(line, sizeof(line), "%.9f %s\n",
                      seq.frames[i].t_us * 1e-6, name);
        frames_manifest << line;
      }
    }
    std::printf("simulated %zu events over %d frames into %s\n",
                events.size(), args.frames, args.out_dir.c_str());
    return kExitOk;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "simulation failed: %s\n", e.what());
    return kExitStage;
  }
}

// Debug helpers: dump event frames / voxel grids for inspection.
int run_events_to_frames(const CommonArgs& args, int64_t max_windows) {
  try {
    const PipelineConfig config = args.load();
    config.validate();
    EventParseOptions options;
    options.format = config.event_format;
    options.unit = config.timestamp_unit;
    options.strict = config.strict_events;
    const EventStream stream =
        parse_events_file(config.events_path, config.geometry, options);
    const int n = config.window_count > 0
                      ? config.window_count
                      : default_window_event_count(config.geometry);
    const auto windows =
        config.window_policy == PipelineConfig::WindowPolicy::Duration
            ? window_by_duration(stream, config.window_duration_us)
            : window_by_count(stream, n);
    fs::create_directories(fs::path(config.output_dir) / "event_frames");
    int64_t written = 0;
    for (const EventWindow& window : windows) {
      if (max_windows > 0 && written >= max_windows) break;
      const EventFrame frame = accumulate_frame(window, config.geometry);
      int32_t peak = 1;
      for (const int32_t v : frame.values) peak = std::max(peak, std::abs(v));
      ImageF image(frame.values.width(), frame.values.height());
      for (int y = 0; y < image.height(); ++y) {
        for (int x = 0; x < image.width(); ++x) {
          image(x, y) = 0.5f + 0.5f * float(frame.values(x, y)) / float(peak);
        }
      }
      char name[64];
      std::snprintf(name, sizeof(name), "event_frames/frame_%05d.pgm",
                    window.index);
      write_pgm((fs::path(config.output_dir) / name).string(), image);
      ++written;
    }
    std::printf("wrote %lld event frames\n",
                static_cast<long long>(written));
    return kExitOk;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "failed: %s\n", e.what());
    return kExitStage;
  }
}

int run_events_to_voxel(const CommonArgs& args, int window_index, int bins) {
  try {
    const PipelineConfig config = args.load();
    config.validate();
    EventParseOptions options;
    options.format = config.event_format;
    options.unit = config.timestamp_unit;
    options.strict = config.strict_events;
    const EventStream stream =
        parse_events_file(config.events_path, config.geometry, options);
    const int n = config.window_count > 0
                      ? config.window_count
                      : default_window_event_count(config.geometry);
    const auto windows =
        config.window_policy == PipelineConfig::WindowPolicy::Duration
            ? window_by_duration(stream, config.window_duration_us)
            : window_by_count(stream, n);
    if (window_index < 0 || window_index >= int(windows.size())) {
      std::fprintf(stderr, "config error: window %d out of range (%zu)\n",
                   window_index, windows.size());
      return kExitConfig;
    }
    const VoxelGrid grid =
        encode_voxel_grid(windows[window_index], config.geometry, bins);
    fs::create_directories(fs::path(config.output_dir) / "voxel");
    for (int b = 0; b < grid.bins; ++b) {
      ImageF slice(grid.width, grid.height);
      for (int y = 0; y < grid.height; ++y) {
        for (int x = 0; x < grid.width; ++x) {
          slice(x, y) = float(grid.at(b, x, y));
        }
      }
      char name[64];
      std::snprintf(name, sizeof(name), "voxel/window%05d_bin%02d.pfm",
                    window_index, b);
      write_pfm((fs::path(config.output_dir) / name).string(), slice);
    }
    std::printf("wrote %d voxel slices for window %d\n", grid.bins,
                window_index);
    return kExitOk;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "failed: %s\n", e.what());
    return kExitStage;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Event-stream to dense point cloud reconstruction"};
  app.require_subcommand(1);

  CommonArgs pipeline_args;
  std::string stage_only;
  CLI::App* pipeline = app.add_subcommand("pipeline", "Run every stage");
  add_common(pipeline, pipeline_args);
  pipeline->add_option("--stage-only", stage_only,
                       "Run a single stage (events, images, features, "
                       "matches, sfm, mvs)");

  SimulateArgs sim_args;
  CLI::App* simulate =
      app.add_subcommand("simulate", "Generate a synthetic event capture");
  simulate->add_option("--out", sim_args.out_dir, "Output directory");
  simulate->add_option("--scene", sim_args.scene, "plane or box");
  simulate->add_option("--frames", sim_args.frames, "Rendered frame count")
      ->check(CLI::Range(2, 100000));
  simulate->add_option("--rate", sim_args.rate_hz, "Frame rate (Hz)");
  simulate->add_option("--arc", sim_args.arc_deg, "Orbit arc (degrees)");
  simulate->add_option("--arc-start", sim_args.arc_start_deg,
                       "Orbit start angle (degrees)");
  simulate->add_option("--radius", sim_args.radius, "Orbit radius");
  simulate->add_option("--orbit-height", sim_args.height, "Orbit height");
  simulate->add_option("--contrast", sim_args.contrast, "Threshold C");
  simulate->add_option("--seed", sim_args.seed, "Texture seed");
  simulate->add_option("--width", sim_args.width, "Sensor width");
  simulate->add_option("--height", sim_args.height_px, "Sensor height");
  simulate->add_flag("--binary", sim_args.binary_events,
                     "Write packed binary events");
  simulate->add_flag("--frames-out", sim_args.write_frames,
                     "Also write rendered intensity frames");

  CommonArgs recon_args;
  CLI::App* reconstruct = app.add_subcommand(
      "reconstruct", "Events through intensity reconstruction only");
  add_common(reconstruct, recon_args);

  CommonArgs sfm_args;
  CLI::App* sfm = app.add_subcommand("sfm", "Sparse reconstruction stage only");
  add_common(sfm, sfm_args);

  CommonArgs mvs_args;
  CLI::App* mvs = app.add_subcommand("mvs", "Dense reconstruction stage only");
  add_common(mvs, mvs_args);

  CommonArgs frames_args;
  int64_t max_windows = 0;
  CLI::App* to_frames =
      app.add_subcommand("events-to-frames", "Dump accumulated event frames");
  add_common(to_frames, frames_args);
  to_frames->add_option("--max-windows", max_windows, "Stop after N windows");

  CommonArgs voxel_args;
  int voxel_window = 0;
  int voxel_bins = kDefaultVoxelBins;
  CLI::App* to_voxel =
      app.add_subcommand("events-to-voxel", "Dump one window's voxel grid");
  add_common(to_voxel, voxel_args);
  to_voxel->add_option("--window", voxel_window, "Window index");
  to_voxel->add_option("--bins", voxel_bins, "Temporal bins");

  CLI11_PARSE(app, argc, argv);

  if (pipeline->parsed()) return run_guarded(pipeline_args, stage_only);
  if (simulate->parsed()) return run_simulate(sim_args);
  if (reconstruct->parsed()) return run_guarded(recon_args, "", "images");
  if (sfm->parsed()) return run_guarded(sfm_args, "", "sfm");
  if (mvs->parsed()) return run_guarded(mvs_args, "", "mvs");
  if (to_frames->parsed()) return run_events_to_frames(frames_args, max_windows);
  if (to_voxel->parsed()) return run_events_to_voxel(voxel_args, voxel_window,
                                                     voxel_bins);
  return kExitOk;
}
