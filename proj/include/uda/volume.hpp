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

#ifndef UDA_VOLUME_HPP_
#define UDA_VOLUME_HPP_

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "uda/phenotype.hpp"

namespace uda {

struct Shape3 {
  int x = 0;
  int y = 0;
  int z = 0;

  std::size_t count() const {
    return static_cast<std::size_t>(x) * static_cast<std::size_t>(y) * static_cast<std::size_t>(z);
  }
  bool positive() const { return x > 0 && y > 0 && z > 0; }
  int operator[](int axis) const { return axis == 0 ? x : axis == 1 ? y : z; }
  int& operator[](int axis) { return axis == 0 ? x : axis == 1 ? y : z; }

  friend bool operator==(const Shape3&, const Shape3&) = default;
};

struct Index3 {
  int x = 0;
  int y = 0;
  int z = 0;

  int operator[](int axis) const { return axis == 0 ? x : axis == 1 ? y : z; }
  int& operator[](int axis) { return axis == 0 ? x : axis == 1 ? y : z; }

  friend bool operator==(const Index3&, const Index3&) = default;
};

struct Spacing {
  double x = 1.0;
  double y = 1.0;
  double z = 1.0;

  friend bool operator==(const Spacing&, const Spacing&) = default;
};

// Dense 3D array, x fastest: index = x + nx * (y + ny * z).
template <typename T>
class Grid3 {
 public:
  Grid3() = default;
  explicit Grid3(Shape3 shape, T fill = T{}) : shape_(shape), data_(shape.count(), fill) {}
  Grid3(Shape3 shape, std::vector<T> data);

  const Shape3& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }

  std::size_t offset(int x, int y, int z) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(shape_.x) *
               (static_cast<std::size_t>(y) + static_cast<std::size_t>(shape_.y) * static_cast<std::size_t>(z));
  }
  bool contains(int x, int y, int z) const {
    return x >= 0 && y >= 0 && z >= 0 && x < shape_.x && y < shape_.y && z < shape_.z;
  }

  T& at(int x, int y, int z) { return data_[offset(x, y, z)]; }
  const T& at(int x, int y, int z) const { return data_[offset(x, y, z)]; }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  friend bool operator==(const Grid3&, const Grid3&) = default;

 private:
  Shape3 shape_;
  std::vector<T> data_;
};

enum class Domain { kSource, kTarget };
std::string_view domain_name(Domain d);
Domain parse_domain(std::string_view name);

// Compartment ids stored in mask voxels.
enum class Compartment : std::uint16_t {
  kBackground = 0,
  kFemoralCartilage = 1,
  kMedialTibialCartilage = 2,
  kLateralTibialCartilage = 3,
  kMedialMeniscus = 4,
  kLateralMeniscus = 5,
  kPatellarCartilage = 6,
};
inline constexpr std::uint16_t kNumCompartments = 7;
std::string_view compartment_name(Compartment c);

struct SegmentationMask {
  Grid3<std::uint16_t> labels;

  // Throws ErrorKind::kArgument if a voxel is outside the compartment vocabulary.
  void validate() const;

  friend bool operator==(const SegmentationMask&, const SegmentationMask&) = default;
};

struct VolumeSample {
  std::string sample_id;
  Grid3<float> voxels;
  Spacing spacing;
  Domain domain = Domain::kSource;
  std::optional<SegmentationMask> mask;
  phenotype::PhenotypeLabel label;

  const Shape3& shape() const { return voxels.shape(); }
  // Shape/spacing/mask consistency; throws ErrorKind::kArgument.
  void validate() const;
};

// A volume with every label removed. Adaptation consumes these so that
// target labels cannot leak into it.
struct UnlabeledVolume {
  std::string sample_id;
  Grid3<float> voxels;
};
UnlabeledVolume strip_labels(const VolumeSample& s);

template <typename T>
Grid3<T>::Grid3(Shape3 shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {}

}  // namespace uda

#endif  // UDA_VOLUME_HPP_
