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

#ifndef UDA_DATAIO_HPP_
#define UDA_DATAIO_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "uda/volume.hpp"

namespace uda::data {

struct ManifestEntry {
  std::string sample_id;
  std::filesystem::path volume;
  std::optional<std::filesystem::path> mask;
  Domain domain = Domain::kSource;
  phenotype::PhenotypeLabel labels;
  std::optional<std::string> split;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

// Entry paths are kept as written; relative ones resolve against `root`,
// the directory holding the manifest file.
struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  nlohmann::json metadata = nlohmann::json::object();
  std::filesystem::path root;

  std::filesystem::path resolve(const std::filesystem::path& p) const;
  const ManifestEntry* find(const std::string& sample_id) const;

  friend bool operator==(const DatasetManifest& a, const DatasetManifest& b) {
    return a.entries == b.entries && a.metadata == b.metadata;
  }
};

nlohmann::json to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const nlohmann::json& j, const std::filesystem::path& root);

// Errors: kManifestMalformed, kManifestDuplicateId, kManifestMissingFile
// (message names the path), kIo when the manifest itself is unreadable.
DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const DatasetManifest& m, const std::filesystem::path& path);

// Reads every volume (and mask, when listed) with labels and domain attached.
VolumeSample load_sample(const DatasetManifest& m, const ManifestEntry& e);
std::vector<VolumeSample> load_samples(const DatasetManifest& m);

// Writes <dir>/<id>.{json,f32} and masks as <dir>/<id>_mask.{json,u16}, then
// <dir>/manifest.json. Returns the manifest as saved.
DatasetManifest write_dataset(const std::vector<VolumeSample>& samples, const std::filesystem::path& dir,
                              nlohmann::json metadata = nlohmann::json::object());

// ---------------------------------------------------------------------------
// Synthetic phantoms

struct DomainStyle {
  Shape3 shape{64, 64, 32};
  Spacing spacing{1.0, 1.0, 2.0};
  double air = 0.0;
  double soft_tissue = 0.3;
  double bone = 0.5;
  double cartilage = 1.0;
  double meniscus = 0.15;
  double gain = 1.0;
  double offset = 0.0;
  double noise_sd_min = 0.05;
  double noise_sd_max = 0.1;
  double smoothing_sigma = 0.8;  // voxels
  double geometry_jitter = 0.05;  // normalized units
  double lesion_gain = 1.0;       // multiplies the lesion contrast
  double bias_field = 0.0;        // log-amplitude of a linear multiplicative bias
};

struct LesionParams {
  double radius_min = 0.18;  // normalized units, volume spans [-1, 1]
  double radius_max = 0.26;
  double contrast = 1.0;
  double depth_min = 0.08;  // below the subchondral surface
  double depth_max = 0.22;
};

struct ShiftParams {
  DomainStyle source;
  DomainStyle target;
  LesionParams lesion;
  double prevalence = 1.0 / 3.0;

  const DomainStyle& style(Domain d) const { return d == Domain::kSource ? source : target; }

  // Throws ErrorKind::kConfig.
  void validate() const;
  nlohmann::json to_json() const;
  static ShiftParams from_json(const nlohmann::json& j);

  // "default", "none" (target styled like source) or "strong".
  static ShiftParams preset(const std::string& name);
};

// Positive count for n samples: the two-class largest-remainder split of n
// by (prevalence, 1 - prevalence); an exact tie goes to the negatives.
int positive_count(int n, double prevalence);

// Sample i depends only on (seed, domain, i) and on the positive set, which
// is drawn from (seed, domain). Labels are carried on subchondral_bone;
// cartilage_meniscus is left unset.
std::vector<VolumeSample> generate_synthetic(int n, Domain domain, const ShiftParams& params, std::uint64_t seed,
                                             int threads = 0);

// One phantom, exposed for tests.
VolumeSample synthesize_sample(const std::string& sample_id, Domain domain, bool positive, const ShiftParams& params,
                               std::uint64_t sample_seed);

// Separable Gaussian blur with edge clamping.
Grid3<float> gaussian_blur(const Grid3<float>& g, double sigma);

}  // namespace uda::data

#endif  // UDA_DATAIO_HPP_
