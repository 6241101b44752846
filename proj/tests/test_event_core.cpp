#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "evrecon/errors.hpp"
#include "evrecon/event_io.hpp"
#include "evrecon/representations.hpp"
#include "evrecon/windowing.hpp"

using namespace evrecon;

namespace {

EventStream make_stream(const SensorGeometry& geometry,
                        std::initializer_list<Event> events) {
  EventStream stream;
  stream.geometry = geometry;
  stream.events = events;
  return stream;
}

EventWindow make_window(std::initializer_list<Event> events) {
  EventWindow window;
  window.events = events;
  return window;
}

// Literal evaluation of the voxel formula: for every bin, pixel and event,
// accumulate p * max(0, 1 - |bin - t*|). Independent of the encoder path.
std::vector<double> brute_force_voxels(const EventWindow& window,
                                       const SensorGeometry& geometry,
                                       int bins) {
  std::vector<double> grid(size_t(bins) * geometry.width * geometry.height, 0.0);
  const int64_t t0 = window.events.front().t;
  const int64_t dt = window.events.back().t - t0;
  const double scale = dt > 0 ? double(bins - 1) / double(dt) : 0.0;
  for (int bin = 0; bin < bins; ++bin) {
    for (int y = 0; y < geometry.height; ++y) {
      for (int x = 0; x < geometry.width; ++x) {
        double sum = 0.0;
        for (const Event& e : window.events) {
          if (e.x != x || e.y != y) continue;
          const double t_star = scale * double(e.t - t0);
          sum += e.p * std::max(0.0, 1.0 - std::abs(double(bin) - t_star));
        }
        grid[(size_t(bin) * geometry.height + y) * geometry.width + x] = sum;
      }
    }
  }
  return grid;
}

EventWindow random_window(std::mt19937_64& rng, const SensorGeometry& geometry,
                          int max_events) {
  std::uniform_int_distribution<int> count_dist(1, max_events);
  std::uniform_int_distribution<int> x_dist(0, geometry.width - 1);
  std::uniform_int_distribution<int> y_dist(0, geometry.height - 1);
  std::uniform_int_distribution<int64_t> dt_dist(0, 50);
  std::bernoulli_distribution p_dist(0.5);

  EventWindow window;
  int64_t t = 0;
  const int n = count_dist(rng);
  for (int i = 0; i < n; ++i) {
    t += dt_dist(rng);
    Event e;
    e.t = t;
    e.x = uint16_t(x_dist(rng));
    e.y = uint16_t(y_dist(rng));
    e.p = p_dist(rng) ? 1 : -1;
    window.events.push_back(e);
  }
  return window;
}

}  // namespace

TEST_CASE("parse text events maps fields") {
  std::istringstream in("0.000001 10 20 1\n");
  const EventStream stream = parse_events(in, {346, 260});
  REQUIRE(stream.size() == 1);
  CHECK(stream.events[0] == Event{1, 10, 20, 1});
}

TEST_CASE("parse rejects out-of-range coordinates") {
  std::istringstream in("0.5 400 10 1\n");
  CHECK_THROWS_AS(parse_events(in, {346, 260}), CoordinateOutOfRange);
}

TEST_CASE("empty input gives empty stream") {
  std::istringstream in("");
  const EventStream stream = parse_events(in, {346, 260});
  CHECK(stream.empty());
}

TEST_CASE("polarity 0 is normalized to -1") {
  std::istringstream in("0.0 1 1 0\n1.0 2 2 -1\n2.0 3 3 1\n");
  const EventStream stream = parse_events(in, {16, 16});
  CHECK(stream.events[0].p == -1);
  CHECK(stream.events[1].p == -1);
  CHECK(stream.events[2].p == 1);
}

TEST_CASE("malformed lines are rejected") {
  SUBCASE("too few tokens") {
    std::istringstream in("0.5 1 2\n");
    CHECK_THROWS_AS(parse_events(in, {16, 16}), MalformedLine);
  }
  SUBCASE("too many tokens") {
    std::istringstream in("0.5 1 2 1 7\n");
    CHECK_THROWS_AS(parse_events(in, {16, 16}), MalformedLine);
  }
  SUBCASE("garbage polarity") {
    std::istringstream in("0.5 1 2 up\n");
    CHECK_THROWS_AS(parse_events(in, {16, 16}), MalformedLine);
  }
  SUBCASE("bad timestamp") {
    std::istringstream in("abc 1 2 1\n");
    CHECK_THROWS_AS(parse_events(in, {16, 16}), MalformedLine);
  }
}

TEST_CASE("microsecond timestamps parse as integers") {
  std::istringstream in("12345 3 4 1\n");
  EventParseOptions options;
  options.unit = TimestampUnit::Microseconds;
  const EventStream stream = parse_events(in, {16, 16}, options);
  CHECK(stream.events[0].t == 12345);
}

TEST_CASE("strict mode rejects non-monotone timestamps") {
  std::istringstream in("2.0 1 1 1\n1.0 2 2 1\n");
  CHECK_THROWS_AS(parse_events(in, {16, 16}), NonMonotoneTimestamp);
}

TEST_CASE("lenient mode reorders within the lookahead") {
  std::istringstream in("0.000200 1 1 1\n0.000100 2 2 1\n0.000300 3 3 1\n");
  EventParseOptions options;
  options.strict = false;
  const EventStream stream = parse_events(in, {16, 16}, options);
  REQUIRE(stream.size() == 3);
  CHECK(stream.events[0].t == 100);
  CHECK(stream.events[1].t == 200);
  CHECK(stream.events[2].t == 300);
}

TEST_CASE("lenient mode keeps input order for equal timestamps") {
  std::istringstream in("0.0 1 0 1\n0.0 2 0 1\n0.0 3 0 1\n");
  EventParseOptions options;
  options.strict = false;
  const EventStream stream = parse_events(in, {16, 16}, options);
  REQUIRE(stream.size() == 3);
  CHECK(stream.events[0].x == 1);
  CHECK(stream.events[1].x == 2);
  CHECK(stream.events[2].x == 3);
}

TEST_CASE("lenient mode rejects reordering beyond the lookahead") {
  std::istringstream in("0.010000 1 1 1\n0.000100 2 2 1\n0.020000 3 3 1\n");
  EventParseOptions options;
  options.strict = false;
  CHECK_THROWS_AS(parse_events(in, {16, 16}, options), NonMonotoneTimestamp);
}

TEST_CASE("binary round trip is exact") {
  std::mt19937_64 rng(7);
  EventStream stream;
  stream.geometry = {64, 48};
  int64_t t = 0;
  for (int i = 0; i < 1000; ++i) {
    t += rng() % 100;
    stream.events.push_back(Event{t, uint16_t(rng() % 64), uint16_t(rng() % 48),
                                  (rng() & 1) ? int8_t(1) : int8_t(-1)});
  }
  std::stringstream buffer(std::ios::in | std::ios::out | std::ios::binary);
  write_events(buffer, stream, EventFormat::Binary);
  EventParseOptions options;
  options.format = EventFormat::Binary;
  const EventStream parsed = parse_events(buffer, stream.geometry, options);
  CHECK(parsed.events == stream.events);
}

TEST_CASE("text round trip in seconds preserves microsecond timestamps") {
  EventStream stream;
  stream.geometry = {16, 16};
  stream.events = {{1, 0, 0, 1}, {999999, 5, 5, -1}, {1000001, 6, 6, 1}};
  std::stringstream buffer;
  write_events(buffer, stream, EventFormat::Text, TimestampUnit::Seconds);
  const EventStream parsed = parse_events(buffer, stream.geometry);
  CHECK(parsed.events == stream.events);
}

TEST_CASE("window_by_count basic splits") {
  SensorGeometry geo{16, 16};
  EventStream stream;
  stream.geometry = geo;
  for (int i = 0; i < 15; ++i) stream.events.push_back(Event{i, 0, 0, 1});

  SUBCASE("7 events, N=7, one window") {
    stream.events.resize(7);
    const auto windows = window_by_count(stream, 7);
    REQUIRE(windows.size() == 1);
    CHECK(windows[0].events.size() == 7);
    CHECK(windows[0].index == 0);
  }
  SUBCASE("15 events, N=7, remainder dropped") {
    const auto windows = window_by_count(stream, 7);
    REQUIRE(windows.size() == 2);
    CHECK(windows[0].events.front().t == 0);
    CHECK(windows[0].events.back().t == 6);
    CHECK(windows[1].events.front().t == 7);
    CHECK(windows[1].events.back().t == 13);
  }
  SUBCASE("3 events, N=7, empty") {
    stream.events.resize(3);
    CHECK(window_by_count(stream, 7).empty());
  }
}

TEST_CASE("window_by_count concatenation reproduces the stream prefix") {
  std::mt19937_64 rng(11);
  SensorGeometry geo{8, 8};
  EventStream stream;
  stream.geometry = geo;
  int64_t t = 0;
  for (int i = 0; i < 173; ++i) {
    t += rng() % 5;
    stream.events.push_back(Event{t, uint16_t(rng() % 8), uint16_t(rng() % 8), 1});
  }
  for (int n : {1, 7, 50, 173, 200}) {
    const auto windows = window_by_count(stream, n);
    std::vector<Event> concat;
    for (const auto& w : windows) {
      concat.insert(concat.end(), w.events.begin(), w.events.end());
    }
    const size_t expected = (stream.events.size() / n) * n;
    REQUIRE(concat.size() == expected);
    for (size_t i = 0; i < expected; ++i) CHECK(concat[i] == stream.events[i]);
  }
}

TEST_CASE("window_by_duration bins half-open") {
  SensorGeometry geo{16, 16};
  SUBCASE("events at 0,5,10 with dt=10") {
    const auto stream =
        make_stream(geo, {{0, 0, 0, 1}, {5, 1, 1, 1}, {10, 2, 2, 1}});
    const auto windows = window_by_duration(stream, 10);
    REQUIRE(windows.size() == 2);
    CHECK(windows[0].events.size() == 2);
    CHECK(windows[1].events.size() == 1);
    CHECK(windows[1].events[0].t == 10);
  }
  SUBCASE("single event") {
    const auto stream = make_stream(geo, {{42, 3, 3, -1}});
    const auto windows = window_by_duration(stream, 10);
    REQUIRE(windows.size() == 1);
    CHECK(windows[0].events.size() == 1);
  }
  SUBCASE("all simultaneous") {
    const auto stream =
        make_stream(geo, {{0, 0, 0, 1}, {0, 1, 1, 1}, {0, 2, 2, -1}});
    const auto windows = window_by_duration(stream, 1);
    REQUIRE(windows.size() == 1);
    CHECK(windows[0].events.size() == 3);
  }
  SUBCASE("empty bins produce no window") {
    const auto stream = make_stream(geo, {{0, 0, 0, 1}, {35, 1, 1, 1}});
    const auto windows = window_by_duration(stream, 10);
    REQUIRE(windows.size() == 2);
    CHECK(windows[0].index == 0);
    CHECK(windows[1].index == 1);
  }
}

TEST_CASE("window_by_duration windows are disjoint and time-ordered") {
  std::mt19937_64 rng(3);
  SensorGeometry geo{8, 8};
  EventStream stream;
  stream.geometry = geo;
  int64_t t = 100;
  for (int i = 0; i < 500; ++i) {
    t += rng() % 30;
    stream.events.push_back(Event{t, uint16_t(rng() % 8), uint16_t(rng() % 8), 1});
  }
  const auto windows = window_by_duration(stream, 37);
  size_t total = 0;
  for (size_t i = 0; i < windows.size(); ++i) {
    total += windows[i].events.size();
    CHECK(!windows[i].events.empty());
    if (i > 0) CHECK(windows[i].t_begin() > windows[i - 1].t_end());
    // within one window, span < dt
    CHECK(windows[i].t_end() - windows[i].t_begin() < 37);
  }
  CHECK(total == stream.events.size());
}

TEST_CASE("accumulate_frame sums polarities per pixel") {
  SensorGeometry geo{8, 8};
  SUBCASE("single event") {
    const auto frame = accumulate_frame(make_window({{0, 3, 4, 1}}), geo);
    for (int y = 0; y < 8; ++y) {
      for (int x = 0; x < 8; ++x) {
        CHECK(frame.values(x, y) == ((x == 3 && y == 4) ? 1 : 0));
      }
    }
  }
  SUBCASE("cancellation") {
    const auto frame =
        accumulate_frame(make_window({{0, 2, 2, 1}, {1, 2, 2, -1}}), geo);
    CHECK(frame.values(2, 2) == 0);
  }
  SUBCASE("signed sum") {
    const auto frame = accumulate_frame(
        make_window({{0, 0, 0, 1}, {1, 0, 0, 1}, {2, 0, 0, -1}}), geo);
    CHECK(frame.values(0, 0) == 1);
  }
  SUBCASE("out-of-bounds event") {
    CHECK_THROWS_AS(accumulate_frame(make_window({{0, 9, 0, 1}}), geo),
                    CoordinateOutOfRange);
  }
}

TEST_CASE("voxel grid splits polarity between the two nearest bins") {
  SensorGeometry geo{8, 8};
  SUBCASE("exact bin hits") {
    // dT=4, B=5: t* = 0 and 4, each with weight 1.
    const auto grid =
        encode_voxel_grid(make_window({{0, 1, 1, 1}, {4, 2, 2, 1}}), geo, 5);
    CHECK(grid.at(0, 1, 1) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(grid.at(4, 2, 2) == doctest::Approx(1.0).epsilon(1e-12));
    double sum = 0.0;
    for (double v : grid.values) sum += std::abs(v);
    CHECK(sum == doctest::Approx(2.0).epsilon(1e-12));
  }
  SUBCASE("fractional split 0.75/0.25") {
    // Events at t=0 and t=16 fix dT=16, B=5 -> scale 1/4; event at t=5 has
    // t* = 1.25.
    const auto grid = encode_voxel_grid(
        make_window({{0, 0, 0, 1}, {5, 3, 3, 1}, {16, 7, 7, 1}}), geo, 5);
    CHECK(grid.at(1, 3, 3) == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(grid.at(2, 3, 3) == doctest::Approx(0.25).epsilon(1e-12));
  }
  SUBCASE("degenerate span puts everything in bin 0") {
    const auto grid = encode_voxel_grid(make_window({{7, 4, 4, 1}}), geo, 5);
    CHECK(grid.at(0, 4, 4) == 1.0);
    for (int b = 1; b < 5; ++b) CHECK(grid.at(b, 4, 4) == 0.0);
  }
}

TEST_CASE("voxel grid matches the brute-force formula on random windows") {
  std::mt19937_64 rng(1234);
  const SensorGeometry geo{8, 8};
  for (int trial = 0; trial < 200; ++trial) {
    const EventWindow window = random_window(rng, geo, 100);
    const VoxelGrid grid = encode_voxel_grid(window, geo, 5);
    const auto expected = brute_force_voxels(window, geo, 5);
    REQUIRE(grid.values.size() == expected.size());
    for (size_t i = 0; i < expected.size(); ++i) {
      CHECK(std::abs(grid.values[i] - expected[i]) <= 1e-12);
    }

    // Polarity conservation.
    double voxel_sum = 0.0;
    for (double v : grid.values) voxel_sum += v;
    double polarity_sum = 0.0;
    for (const Event& e : window.events) polarity_sum += e.p;
    CHECK(std::abs(voxel_sum - polarity_sum) <=
          1e-9 * double(window.events.size()));

    // Per-voxel magnitude bound: at most the event count at that pixel.
    Grid<int> counts(geo.width, geo.height, 0);
    for (const Event& e : window.events) counts(e.x, e.y)++;
    for (int b = 0; b < 5; ++b) {
      for (int y = 0; y < 8; ++y) {
        for (int x = 0; x < 8; ++x) {
          CHECK(std::abs(grid.at(b, x, y)) <= double(counts(x, y)) + 1e-12);
        }
      }
    }

    // Summing bins reproduces the event frame.
    const EventFrame frame = accumulate_frame(window, geo);
    for (int y = 0; y < 8; ++y) {
      for (int x = 0; x < 8; ++x) {
        double bin_sum = 0.0;
        for (int b = 0; b < 5; ++b) bin_sum += grid.at(b, x, y);
        CHECK(std::abs(bin_sum - frame.values(x, y)) <= 1e-9);
      }
    }
  }
}

TEST_CASE("voxel grid with a single bin collects all polarity") {
  SensorGeometry geo{4, 4};
  const auto grid =
      encode_voxel_grid(make_window({{0, 1, 1, 1}, {9, 1, 1, 1}}), geo, 1);
  CHECK(grid.at(0, 1, 1) == doctest::Approx(2.0));
}
