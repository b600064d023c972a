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

#include "uda/fraction.hpp"

#include <cmath>
#include <numeric>

#include "uda/error.hpp"

namespace uda {

Fraction Fraction::reduced() const {
  const std::int64_t g = std::gcd(num, den);
  if (g == 0) return *this;
  return {num / g, den / g};
}

std::string format_percent(std::int64_t num, std::int64_t den) {
  require(den > 0 && num >= 0, ErrorKind::kArgument,
          "format_percent: need num >= 0 and den > 0");
  // hundredths of a percent, rounded half-up in integer arithmetic
  const __int128 scaled = (static_cast<__int128>(num) * 20000 + den) / (2 * static_cast<__int128>(den));
  const auto whole = static_cast<std::int64_t>(scaled / 100);
  const auto frac = static_cast<int>(scaled % 100);
  std::string out = std::to_string(whole);
  if (frac != 0) {
    out += '.';
    out += static_cast<char>('0' + frac / 10);
    if (frac % 10 != 0) out += static_cast<char>('0' + frac % 10);
  }
  return out;
}

std::string format_percent_with_counts(std::int64_t num, std::int64_t den) {
  return format_percent(num, den) + " (" + std::to_string(num) + "/" + std::to_string(den) + ")";
}

std::string format_fixed2(double v) {
  const bool neg = v < 0;
  const double r = std::floor(std::fabs(v) * 100.0 + 0.5 + 1e-9);
  const auto cents = static_cast<long long>(r);
  std::string out = (neg && cents != 0 ? "-" : "") + std::to_string(cents / 100) + ".";
  const int frac = static_cast<int>(cents % 100);
  out += static_cast<char>('0' + frac / 10);
  out += static_cast<char>('0' + frac % 10);
  return out;
}

}  // namespace uda
