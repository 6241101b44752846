#include "evrecon/event_io.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <queue>
#include <sstream>
#include <string>
#include <vector>

#include "evrecon/errors.hpp"

namespace evrecon {

namespace {

constexpr char kBinaryMagic[4] = {'E', 'V', 'T', '1'};
constexpr size_t kRecordSize = 14;  // u64 t + u16 x + u16 y + i8 p + i8 pad

int64_t parse_timestamp(const std::string& token, TimestampUnit unit,
                        size_t line_no) {
  if (unit == TimestampUnit::Microseconds) {
    int64_t value = 0;
    const auto [ptr, ec] =
        std::from_chars(token.data(), token.data() + token.size(), value);
    if (ec != std::errc() || ptr != token.data() + token.size()) {
      throw MalformedLine("line " + std::to_string(line_no) +
                          ": bad microsecond timestamp '" + token + "'");
    }
    return value;
  }
  size_t consumed = 0;
  double seconds = 0.0;
  try {
    seconds = std::stod(token, &consumed);
  } catch (const std::exception&) {
    throw MalformedLine("line " + std::to_string(line_no) +
                        ": bad timestamp '" + token + "'");
  }
  if (consumed != token.size() || !std::isfinite(seconds)) {
    throw MalformedLine("line " + std::to_string(line_no) +
                        ": bad timestamp '" + token + "'");
  }
  return std::llround(seconds * 1e6);
}

int parse_int(const std::string& token, size_t line_no, const char* what) {
  int value = 0;
  const auto [ptr, ec] =
      std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc() || ptr != token.data() + token.size()) {
    throw MalformedLine("line " + std::to_string(line_no) + ": bad " + what +
                        " '" + token + "'");
  }
  return value;
}

// Reorders minor timestamp jitter. Events are released once the newest seen
// timestamp is more than the lookahead past them; ties keep input order.
class ReorderBuffer {
 public:
  explicit ReorderBuffer(int64_t lookahead_us) : lookahead_us_(lookahead_us) {}

  void push(const Event& event, std::vector<Event>& out) {
    if (max_t_ != std::numeric_limits<int64_t>::min() &&
        event.t + lookahead_us_ < max_t_) {
      throw NonMonotoneTimestamp(
          "event at t=" + std::to_string(event.t) + " arrives " +
          std::to_string(max_t_ - event.t) + " us late, beyond the " +
          std::to_string(lookahead_us_) + " us lookahead");
    }
    heap_.push(Entry{event, seq_++});
    max_t_ = std::max(max_t_, event.t);
    while (!heap_.empty() && heap_.top().event.t + lookahead_us_ < max_t_) {
      pop_one(out);
    }
  }

  void flush(std::vector<Event>& out) {
    while (!heap_.empty()) pop_one(out);
  }

 private:
  struct Entry {
    Event event;
    uint64_t seq;
    bool operator>(const Entry& other) const {
      if (event.t != other.event.t) return event.t > other.event.t;
      return seq > other.seq;
    }
  };

  void pop_one(std::vector<Event>& out) {
    const Event event = heap_.top().event;
    heap_.pop();
    if (!out.empty() && event.t < out.back().t) {
      throw NonMonotoneTimestamp(
          "event reordering exceeds the lenient lookahead buffer at t=" +
          std::to_string(event.t));
    }
    out.push_back(event);
  }

  int64_t lookahead_us_;
  int64_t max_t_ = std::numeric_limits<int64_t>::min();
  uint64_t seq_ = 0;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> heap_;
};

void append_event(const Event& event, const SensorGeometry& geometry,
                  const EventParseOptions& options, ReorderBuffer& reorder,
                  std::vector<Event>& out) {
  if (options.strict) {
    if (!out.empty() && event.t < out.back().t) {
      throw NonMonotoneTimestamp("timestamp " + std::to_string(event.t) +
                                 " decreases below " +
                                 std::to_string(out.back().t));
    }
    out.push_back(event);
  } else {
    reorder.push(event, out);
  }
  (void)geometry;
}

EventStream parse_text(std::istream& input, const SensorGeometry& geometry,
                       const EventParseOptions& options) {
  EventStream stream;
  stream.geometry = geometry;
  ReorderBuffer reorder(options.lenient_lookahead_us);

  std::string line;
  size_t line_no = 0;
  while (std::getline(input, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;

    std::istringstream tokens(line);
    std::array<std::string, 4> field;
    int n = 0;
    std::string extra;
    while (n < 4 && tokens >> field[n]) ++n;
    if (n != 4 || (tokens >> extra)) {
      throw MalformedLine("line " + std::to_string(line_no) +
                          ": expected 4 tokens, got '" + line + "'");
    }

    Event event;
    event.t = parse_timestamp(field[0], options.unit, line_no);
    const int x = parse_int(field[1], line_no, "x");
    const int y = parse_int(field[2], line_no, "y");
    const int p = parse_int(field[3], line_no, "polarity");

    if (!geometry.contains(x, y)) {
      throw CoordinateOutOfRange("line " + std::to_string(line_no) + ": (" +
                                 std::to_string(x) + ", " + std::to_string(y) +
                                 ") outside " + std::to_string(geometry.width) +
                                 "x" + std::to_string(geometry.height));
    }
    if (p != 1 && p != 0 && p != -1) {
      throw MalformedLine("line " + std::to_string(line_no) + ": polarity " +
                          std::to_string(p) + " not in {1, 0, -1}");
    }
    event.x = static_cast<uint16_t>(x);
    event.y = static_cast<uint16_t>(y);
    event.p = (p == 1) ? int8_t{1} : int8_t{-1};  // input 0 normalized to -1

    append_event(event, geometry, options, reorder, stream.events);
  }
  if (!options.strict) reorder.flush(stream.events);
  return stream;
}

EventStream parse_binary(std::istream& input, const SensorGeometry& geometry,
                         const EventParseOptions& options) {
  char magic[4];
  uint32_t w = 0, h = 0;
  uint64_t count = 0;
  input.read(magic, 4);
  if (input.gcount() == 0) {
    EventStream empty;
    empty.geometry = geometry;
    return empty;
  }
  input.read(reinterpret_cast<char*>(&w), 4);
  input.read(reinterpret_cast<char*>(&h), 4);
  input.read(reinterpret_cast<char*>(&count), 8);
  if (!input || std::memcmp(magic, kBinaryMagic, 4) != 0) {
    throw CorruptHeader("bad event binary header");
  }
  if (static_cast<int>(w) != geometry.width ||
      static_cast<int>(h) != geometry.height) {
    throw CorruptHeader("event file geometry " + std::to_string(w) + "x" +
                        std::to_string(h) + " does not match sensor " +
                        std::to_string(geometry.width) + "x" +
                        std::to_string(geometry.height));
  }

  EventStream stream;
  stream.geometry = geometry;
  stream.events.reserve(count);
  ReorderBuffer reorder(options.lenient_lookahead_us);

  char record[kRecordSize];
  for (uint64_t i = 0; i < count; ++i) {
    input.read(record, kRecordSize);
    if (input.gcount() != static_cast<std::streamsize>(kRecordSize)) {
      throw CorruptHeader("truncated event record " + std::to_string(i));
    }
    Event event;
    uint64_t t = 0;
    uint16_t x = 0, y = 0;
    int8_t p = 0;
    std::memcpy(&t, record, 8);
    std::memcpy(&x, record + 8, 2);
    std::memcpy(&y, record + 10, 2);
    std::memcpy(&p, record + 12, 1);
    event.t = static_cast<int64_t>(t);
    if (!geometry.contains(x, y)) {
      throw CoordinateOutOfRange("record " + std::to_string(i) +
                                 ": coordinates outside sensor");
    }
    if (p != 1 && p != 0 && p != -1) {
      throw MalformedLine("record " + std::to_string(i) + ": bad polarity");
    }
    event.x = x;
    event.y = y;
    event.p = (p == 1) ? int8_t{1} : int8_t{-1};
    append_event(event, geometry, options, reorder, stream.events);
  }
  if (!options.strict) reorder.flush(stream.events);
  return stream;
}

}  // namespace

EventStream parse_events(std::istream& input, const SensorGeometry& geometry,
                         const EventParseOptions& options) {
  if (!geometry.valid()) {
    throw CoordinateOutOfRange("invalid sensor geometry");
  }
  return options.format == EventFormat::Text
             ? parse_text(input, geometry, options)
             : parse_binary(input, geometry, options);
}

EventStream parse_events_file(const std::string& path,
                              const SensorGeometry& geometry,
                              const EventParseOptions& options) {
  std::ifstream input(path, std::ios::binary);
  if (!input) throw IoFailure("cannot open event file: " + path);
  return parse_events(input, geometry, options);
}

void write_events(std::ostream& output, const EventStream& stream,
                  EventFormat format, TimestampUnit unit) {
  if (format == EventFormat::Text) {
    char line[96];
    for (const Event& event : stream.events) {
      if (unit == TimestampUnit::Seconds) {
        std::snprintf(line, sizeof(line), "%.9f %u %u %d\n", event.t * 1e-6,
                      unsigned(event.x), unsigned(event.y), int(event.p));
      } else {
        std::snprintf(line, sizeof(line), "%lld %u %u %d\n",
                      static_cast<long long>(event.t), unsigned(event.x),
                      unsigned(event.y), int(event.p));
      }
      output << line;
    }
    return;
  }

  output.write(kBinaryMagic, 4);
  const uint32_t w = static_cast<uint32_t>(stream.geometry.width);
  const uint32_t h = static_cast<uint32_t>(stream.geometry.height);
  const uint64_t count = stream.events.size();
  output.write(reinterpret_cast<const char*>(&w), 4);
  output.write(reinterpret_cast<const char*>(&h), 4);
  output.write(reinterpret_cast<const char*>(&count), 8);
  for (const Event& event : stream.events) {
    char record[kRecordSize] = {};
    const uint64_t t = static_cast<uint64_t>(event.t);
    std::memcpy(record, &t, 8);
    std::memcpy(record + 8, &event.x, 2);
    std::memcpy(record + 10, &event.y, 2);
    std::memcpy(record + 12, &event.p, 1);
    output.write(record, kRecordSize);
  }
}

void write_events_file(const std::string& path, const EventStream& stream,
                       EventFormat format, TimestampUnit unit) {
  std::ofstream output(path, std::ios::binary);
  if (!output) throw IoFailure("cannot open for writing: " + path);
  write_events(output, stream, format, unit);
  if (!output) throw IoFailure("write failed: " + path);
}

}  // namespace evrecon
