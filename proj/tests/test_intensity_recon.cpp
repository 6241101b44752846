#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "evrecon/errors.hpp"
#include "evrecon/image_io.hpp"
#include "evrecon/integrator.hpp"
#include "evrecon/simulator.hpp"
#include "evrecon/windowing.hpp"

using namespace evrecon;

namespace {

EventWindow make_window(std::initializer_list<Event> events, int index = 0) {
  EventWindow window;
  window.events = events;
  window.index = index;
  return window;
}

}  // namespace

TEST_CASE("init_state is a zero surface and deterministic") {
  const ReconState a = init_state({4, 4});
  const ReconState b = init_state({4, 4});
  CHECK(a.log_surface.width() == 4);
  CHECK(a.log_surface.height() == 4);
  for (double v : a.log_surface) CHECK(v == 0.0);
  CHECK(a.log_surface == b.log_surface);
  CHECK(a.last_update == b.last_update);
  CHECK(a.stream_time == b.stream_time);
}

TEST_CASE("fresh state reconstruction is defined and uniform") {
  // A single window with one +1 and one -1 event at distinct pixels still
  // normalizes; a constant surface would map to 0.5 everywhere.
  const ReconState state = init_state({4, 4});
  IntegratorConfig config;
  config.decay_per_second = 0.0;
  const auto [image, next] =
      reconstruct_window(make_window({{0, 0, 0, 1}}), state, config);
  for (float v : image.values) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
  CHECK(image.values(0, 0) > image.values(1, 1));
}

TEST_CASE("single event pixel dominates the normalized image") {
  const ReconState state = init_state({6, 6});
  IntegratorConfig config;
  config.decay_per_second = 0.0;
  const auto [image, next] =
      reconstruct_window(make_window({{5, 2, 3, 1}}), state, config);
  for (int y = 0; y < 6; ++y) {
    for (int x = 0; x < 6; ++x) {
      if (x == 2 && y == 3) continue;
      CHECK(image.values(2, 3) > image.values(x, y));
    }
  }
  CHECK(image.t_mid == 5);
  CHECK(image.index == 0);
}

TEST_CASE("pixels without events are unchanged before normalization") {
  ReconState state = init_state({4, 4});
  state.log_surface(3, 3) = 0.42;
  state.surface_sum = 0.42;
  IntegratorConfig config;
  config.decay_per_second = 0.0;
  const auto [image, next] =
      reconstruct_window(make_window({{10, 0, 0, 1}}), state, config);
  CHECK(next.log_surface(3, 3) == 0.42);
  CHECK(next.log_surface(1, 1) == 0.0);
}

TEST_CASE("recurrence is pure") {
  const ReconState state = init_state({4, 4});
  const EventWindow window =
      make_window({{0, 0, 0, 1}, {3, 1, 2, -1}, {9, 0, 0, 1}});
  const auto [image_a, next_a] = reconstruct_window(window, state);
  const auto [image_b, next_b] = reconstruct_window(window, state);
  CHECK(image_a.values == image_b.values);
  CHECK(next_a.log_surface == next_b.log_surface);
  // Input state untouched.
  for (double v : state.log_surface) CHECK(v == 0.0);
  CHECK(state.stream_time == 0);
}

TEST_CASE("out-of-order windows are rejected") {
  const ReconState state = init_state({4, 4});
  const auto [image, next] =
      reconstruct_window(make_window({{100, 0, 0, 1}}), state);
  CHECK_THROWS_AS(
      reconstruct_window(make_window({{50, 0, 0, 1}}, 1), next),
      OutOfOrderWindow);
  SUBCASE("unsorted events inside a window are rejected") {
    CHECK_THROWS_AS(
        reconstruct_window(make_window({{200, 0, 0, 1}, {150, 0, 0, 1}}, 1),
                           next),
        OutOfOrderWindow);
  }
}

TEST_CASE("integrator with zero decay equals C times signed counts") {
  // Simulator round trip: events from a rendered plane sequence.
  SyntheticScene scene;
  scene.kind = SyntheticScene::Kind::Plane;
  scene.plane_depth = 5.0;
  scene.geometry = {48, 36};
  scene.intrinsics = {45.0, 45.0, 23.5, 17.5, 0.0};
  Pose a, b;
  b.t = Eigen::Vector3d(0.25, 0.1, 0.0);
  scene.trajectory = {{0, a}, {1'000'000, b}};
  const RenderedSequence seq = render_sequence(scene, 25, 25.0);

  SimulatorConfig sim_config;
  sim_config.contrast = 0.1;
  const EventStream stream = generate_events(seq.frames, sim_config);
  REQUIRE(stream.size() > 500);

  IntegratorConfig config;
  config.contrast = sim_config.contrast;
  config.decay_per_second = 0.0;

  ReconState state = init_state(scene.geometry);
  Grid<int64_t> signed_count(scene.geometry.width, scene.geometry.height, 0);
  for (const EventWindow& window : window_by_count(stream, 200)) {
    auto [image, next] = reconstruct_window(window, state, config);
    state = std::move(next);
    for (const Event& e : window.events) signed_count(e.x, e.y) += e.p;
    for (float v : image.values) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }
  for (int y = 0; y < scene.geometry.height; ++y) {
    for (int x = 0; x < scene.geometry.width; ++x) {
      const double expected = config.contrast * double(signed_count(x, y));
      CHECK(std::abs(state.log_surface(x, y) - expected) <= 1e-9);
    }
  }

  // And the integrated surface tracks the true log-intensity change up to
  // one contrast step (events consumed up to the last full window).
  const int64_t consumed = state.stream_time;
  Grid<int64_t> full_count(scene.geometry.width, scene.geometry.height, 0);
  for (const Event& e : stream.events) {
    if (e.t <= consumed) full_count(e.x, e.y) += e.p;
  }
  for (int y = 0; y < scene.geometry.height; ++y) {
    for (int x = 0; x < scene.geometry.width; ++x) {
      if (full_count(x, y) != signed_count(x, y)) continue;  // tail events
      const double true_dl =
          seq.frames.back().values(x, y) - seq.frames.front().values(x, y);
      const double est = state.log_surface(x, y);
      // Whatever happened after the last consumed event is bounded too, so
      // allow two contrast steps of slack.
      CHECK(std::abs(est - true_dl) <= 2.0 * config.contrast);
    }
  }
}

TEST_CASE("normalize_image endpoint behavior") {
  SUBCASE("min/max percentiles keep endpoints") {
    ImageD surface(2, 1, 0.0);
    surface(1, 0) = 1.0;
    const IntensityImage image = normalize_image(surface, 0.0, 1.0);
    CHECK(image.values(0, 0) == 0.0f);
    CHECK(image.values(1, 0) == 1.0f);
  }
  SUBCASE("constant surface maps to 0.5") {
    ImageD surface(3, 3, 0.7);
    const IntensityImage image = normalize_image(surface, 0.01, 0.99);
    for (float v : image.values) CHECK(v == 0.5f);
  }
  SUBCASE("1/99 percentiles on 0..99") {
    ImageD surface(10, 10, 0.0);
    for (int i = 0; i < 100; ++i) surface(i % 10, i / 10) = double(i);
    const IntensityImage image = normalize_image(surface, 0.01, 0.99);
    // values 1 and 98 map to the endpoints; 0 and 99 clamp.
    CHECK(image.values(1, 0) == doctest::Approx(0.0f));
    CHECK(image.values(8, 9) == doctest::Approx(1.0f));
    CHECK(image.values(0, 0) == 0.0f);
    CHECK(image.values(9, 9) == 1.0f);
    CHECK(image.values(5, 5) ==
          doctest::Approx(float((55.0 - 1.0) / 97.0)).epsilon(1e-6));
  }
}

TEST_CASE("normalization preserves pixel ordering") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> value(-3.0, 3.0);
  ImageD surface(12, 9, 0.0);
  for (double& v : surface) v = value(rng);
  const IntensityImage image = normalize_image(surface, 0.05, 0.95);
  for (int i = 0; i < 500; ++i) {
    const int xa = int(rng() % 12), ya = int(rng() % 9);
    const int xb = int(rng() % 12), yb = int(rng() % 9);
    if (surface(xa, ya) <= surface(xb, yb)) {
      CHECK(image.values(xa, ya) <= image.values(xb, yb));
    }
  }
}

TEST_CASE("load_external_frames reads a PGM manifest") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "evrecon_manifest_test";
  fs::create_directories(dir);

  for (int i = 0; i < 3; ++i) {
    ImageF image(8, 8, float(i) / 4.0f);
    image(3, 3) = 1.0f;
    write_pgm((dir / ("frame" + std::to_string(i) + ".pgm")).string(), image);
  }
  {
    std::ofstream manifest(dir / "manifest.txt");
    manifest << "0.0 frame0.pgm\n0.1 frame1.pgm\n0.2 frame2.pgm\n";
  }

  const auto images = load_external_frames((dir / "manifest.txt").string());
  REQUIRE(images.size() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(images[i].index == i);
    CHECK(images[i].t_mid == int64_t(i) * 100000);
    CHECK(images[i].values(3, 3) == 1.0f);
    // 8-bit quantization: stored value is round(v*255)/255.
    const float expected = std::round(float(i) / 4.0f * 255.0f) / 255.0f;
    CHECK(images[i].values(0, 0) == doctest::Approx(expected).epsilon(1e-6));
  }

  SUBCASE("decreasing timestamps rejected") {
    std::ofstream manifest(dir / "bad.txt");
    manifest << "0.2 frame0.pgm\n0.1 frame1.pgm\n";
    manifest.close();
    CHECK_THROWS_AS(load_external_frames((dir / "bad.txt").string()),
                    NonMonotoneManifest);
  }
  SUBCASE("missing file rejected") {
    std::ofstream manifest(dir / "missing.txt");
    manifest << "0.0 nothere.pgm\n";
    manifest.close();
    CHECK_THROWS_AS(load_external_frames((dir / "missing.txt").string()),
                    MissingFile);
  }
  fs::remove_all(dir);
}
