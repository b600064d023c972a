/*
 * Copyright 2026 The udakit Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef UDA_FRACTION_HPP_
#define UDA_FRACTION_HPP_

#include <cstdint>
#include <string>

namespace uda {

// Exact non-negative ratio used wherever a rate is reported with its
// numerator and denominator.
struct Fraction {
  std::int64_t num = 0;
  std::int64_t den = 1;

  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  Fraction reduced() const;

  friend bool operator==(const Fraction& a, const Fraction& b) {
    return static_cast<__int128>(a.num) * b.den == static_cast<__int128>(b.num) * a.den;
  }
};

// 100*num/den rounded half-up to two decimals with trailing zeros dropped,
// e.g. 1244/3116 -> "39.92", 15/50 -> "30", 45/46 -> "97.83".
std::string format_percent(std::int64_t num, std::int64_t den);

// "39.92 (1244/3116)"
std::string format_percent_with_counts(std::int64_t num, std::int64_t den);

// Half-up rounding of a double to two decimals, trailing zeros kept.
std::string format_fixed2(double v);

}  // namespace uda

#endif  // UDA_FRACTION_HPP_
