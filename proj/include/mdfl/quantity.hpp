#pragma once

#include <cmath>
#include <compare>
#include <cstdint>
#include <string>

namespace mdfl {

// Exact fixed-point amount of energy or time, stored as an integer count of
// micro-units. Sums and differences are exact, so ledger conservation holds
// with no floating-point drift.
class Quantity {
 public:
  static constexpr std::int64_t kScale = 1'000'000;

  constexpr Quantity() = default;

  static constexpr Quantity from_micros(std::int64_t micros) {
    Quantity q;
    q.micros_ = micros;
    return q;
  }
  static constexpr Quantity from_units(std::int64_t units) { return from_micros(units * kScale); }
  // Rounds to the nearest micro-unit.
  static Quantity from_double(double units) {
    return from_micros(static_cast<std::int64_t>(std::llround(units * static_cast<double>(kScale))));
  }

  constexpr std::int64_t micros() const { return micros_; }
  constexpr double to_double() const { return static_cast<double>(micros_) / static_cast<double>(kScale); }

  // Shortest exact decimal rendering ("21", "3.5", "0.000001").
  std::string to_string() const;

  constexpr Quantity& operator+=(Quantity o) {
    micros_ += o.micros_;
    return *this;
  }
  constexpr Quantity& operator-=(Quantity o) {
    micros_ -= o.micros_;
    return *this;
  }
  friend constexpr Quantity operator+(Quantity a, Quantity b) { return a += b; }
  friend constexpr Quantity operator-(Quantity a, Quantity b) { return a -= b; }
  friend constexpr Quantity operator*(Quantity a, std::int64_t k) { return from_micros(a.micros_ * k); }
  friend constexpr Quantity operator*(std::int64_t k, Quantity a) { return a * k; }
  friend constexpr auto operator<=>(Quantity, Quantity) = default;
  friend constexpr bool operator==(Quantity, Quantity) = default;

 private:
  std::int64_t micros_ = 0;
};

using Energy = Quantity;
using Duration = Quantity;

}  // namespace mdfl
