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

#ifndef UDA_PREPROCESS_HPP_
#define UDA_PREPROCESS_HPP_

#include <cstdint>

#include "uda/random.hpp"
#include "uda/volume.hpp"

namespace uda::preprocess {

enum class Interp { kTrilinear, kNearest };

// Resamples to target_shape with voxel centers aligned (half-pixel
// convention). Intensities use `mode`; an attached mask is always resampled
// nearest-neighbour. Spacing is rescaled by the shape ratio.
VolumeSample resize_volume(const VolumeSample& v, Shape3 target_shape, Interp mode = Interp::kTrilinear);
Grid3<float> resize_grid(const Grid3<float>& g, Shape3 target_shape, Interp mode);
SegmentationMask resize_mask(const SegmentationMask& m, Shape3 target_shape);

inline constexpr Shape3 kFullResizeShape{384, 384, 160};
inline constexpr Shape3 kFullRoiShape{256, 256, 128};

// Center of the half-open bounding box of all non-background voxels,
// clamped per axis so a crop of crop_shape stays inside the volume when it
// fits (and is centered on the volume when it does not).
Index3 locate_roi(const SegmentationMask& mask, Shape3 crop_shape = kFullRoiShape);

// Crop spanning [center - crop/2, center - crop/2 + crop) on each axis;
// voxels outside the source are zero (background for the mask).
VolumeSample crop_roi(const VolumeSample& v, Index3 center, Shape3 crop_shape = kFullRoiShape);

// Per-volume z-score. A constant volume is only mean-centered.
void zscore_normalize(VolumeSample& v);

struct AugmentConfig {
  double noise_sd = 0.1;
  double intensity_scale_min = 0.8;
  double intensity_scale_max = 1.2;
  double rotation_deg_min = -10.0;
  double rotation_deg_max = 10.0;
  double size_scale_min = 1.0;
  double size_scale_max = 1.1;
  double per_transform_probability = 0.5;
  std::uint64_t seed = 0;

  // Throws ErrorKind::kConfig.
  void validate() const;
};

double sample_intensity_factor(Rng& rng, const AugmentConfig& cfg);

// Gaussian noise -> intensity scale -> in-plane rotation (about z) ->
// size scale (zoom about the center, cropped back to the input shape).
// Each step fires independently with per_transform_probability. Geometric
// steps move an attached mask with nearest-neighbour sampling.
VolumeSample augment(const VolumeSample& v, const AugmentConfig& cfg, Rng& rng);
Grid3<float> augment_voxels(const Grid3<float>& v, const AugmentConfig& cfg, Rng& rng);

// Dice coefficient of one compartment; 1.0 when both sets are empty.
double dsc(const SegmentationMask& a, const SegmentationMask& b, Compartment compartment);

struct PreprocessConfig {
  Shape3 resize_shape{64, 64, 32};
  Shape3 roi_shape{48, 48, 24};
  bool zscore = true;
};

// resize -> locate ROI from the mask -> crop -> z-score.
VolumeSample preprocess_sample(const VolumeSample& v, const PreprocessConfig& cfg);

}  // namespace uda::preprocess

#endif  // UDA_PREPROCESS_HPP_
