#pragma once

#include <cmath>
#include <compare>
#include <cstdint>
#include <limits>
#include <string>

namespace tilesim {

// Simulated time in integer nanoseconds. All clock arithmetic is exact;
// durations derived from floating-point bandwidth/latency formulas are
// rounded to the nanosecond once, when the event is created.
struct SimTime {
  std::int64_t ns = 0;

  constexpr auto operator<=>(const SimTime&) const = default;

  constexpr SimTime operator+(SimTime o) const { return SimTime{ns + o.ns}; }
  constexpr SimTime operator-(SimTime o) const { return SimTime{ns - o.ns}; }
  SimTime& operator+=(SimTime o) {
    ns += o.ns;
    return *this;
  }

  double seconds() const { return static_cast<double>(ns) * 1e-9; }

  static constexpr SimTime zero() { return SimTime{0}; }
  static constexpr SimTime max() {
    return SimTime{std::numeric_limits<std::int64_t>::max()};
  }

  // One rounding step per formula result; see module docs.
  static SimTime from_seconds(double s) {
    return SimTime{static_cast<std::int64_t>(std::llround(s * 1e9))};
  }

  std::string str() const { return std::to_string(ns) + "ns"; }
};

}  // namespace tilesim
