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

#include "uda/volume.hpp"

#include "uda/error.hpp"

namespace uda {

std::string_view domain_name(Domain d) { return d == Domain::kSource ? "source" : "target"; }

Domain parse_domain(std::string_view name) {
  if (name == "source") return Domain::kSource;
  if (name == "target") return Domain::kTarget;
  fail(ErrorKind::kArgument, "unknown domain '" + std::string(name) + "'");
}

std::string_view compartment_name(Compartment c) {
  switch (c) {
    case Compartment::kBackground: return "background";
    case Compartment::kFemoralCartilage: return "femoral_cartilage";
    case Compartment::kMedialTibialCartilage: return "medial_tibial_cartilage";
    case Compartment::kLateralTibialCartilage: return "lateral_tibial_cartilage";
    case Compartment::kMedialMeniscus: return "medial_meniscus";
    case Compartment::kLateralMeniscus: return "lateral_meniscus";
    case Compartment::kPatellarCartilage: return "patellar_cartilage";
  }
  return "unknown";
}

void SegmentationMask::validate() const {
  for (std::uint16_t v : labels.values()) {
    if (v >= kNumCompartments) {
      fail(ErrorKind::kArgument, "mask value " + std::to_string(v) + " outside compartment vocabulary");
    }
  }
}

void VolumeSample::validate() const {
  require(voxels.shape().positive(), ErrorKind::kArgument, "volume " + sample_id + ": shape must be positive");
  require(voxels.size() == voxels.shape().count(), ErrorKind::kArgument,
          "volume " + sample_id + ": voxel count does not match shape");
  require(spacing.x > 0 && spacing.y > 0 && spacing.z > 0, ErrorKind::kArgument,
          "volume " + sample_id + ": spacing must be positive");
  if (mask) {
    require(mask->labels.shape() == voxels.shape(), ErrorKind::kArgument,
            "volume " + sample_id + ": mask shape differs from volume shape");
    mask->validate();
  }
}

UnlabeledVolume strip_labels(const VolumeSample& s) { return {s.sample_id, s.voxels}; }

}  // namespace uda
