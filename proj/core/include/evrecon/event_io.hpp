#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "evrecon/events.hpp"

namespace evrecon {

enum class EventFormat {
  Text,    // one "t x y p" line per event
  Binary,  // EVT1 header + packed 14-byte records
};

enum class TimestampUnit {
  Seconds,       // decimal seconds, converted to us with round-to-nearest
  Microseconds,  // integer microseconds
};

struct EventParseOptions {
  EventFormat format = EventFormat::Text;
  TimestampUnit unit = TimestampUnit::Seconds;
  // Strict mode rejects non-monotone timestamps. Lenient mode stably sorts
  // events within a 1 ms lookahead buffer and only rejects reordering that
  // exceeds the buffer.
  bool strict = true;
  int64_t lenient_lookahead_us = 1000;
};

// Parses an event stream. Input polarity 0 is normalized to -1. Throws
// MalformedLine, CoordinateOutOfRange or NonMonotoneTimestamp.
EventStream parse_events(std::istream& input, const SensorGeometry& geometry,
                         const EventParseOptions& options = {});
EventStream parse_events_file(const std::string& path,
                              const SensorGeometry& geometry,
                              const EventParseOptions& options = {});

// Serializes a stream in the given format. The binary layout is fixed and
// little-endian: magic "EVT1", w:u32, h:u32, count:u64, then per event
// t:u64, x:u16, y:u16, p:i8, pad:i8 (14 bytes per record). Text output
// writes timestamps in the requested unit (seconds with 9 decimals).
void write_events(std::ostream& output, const EventStream& stream,
                  EventFormat format, TimestampUnit unit = TimestampUnit::Seconds);
void write_events_file(const std::string& path, const EventStream& stream,
                       EventFormat format, TimestampUnit unit = TimestampUnit::Seconds);

}  // namespace evrecon
