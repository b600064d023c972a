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

#ifndef UDA_VOLUME_IO_HPP_
#define UDA_VOLUME_IO_HPP_

#include <filesystem>
#include <string>

#include "uda/volume.hpp"

namespace uda::io {

// On-disk layout (see docs/formats.md):
//   <stem>.json  sidecar header
//   <stem>.f32   little-endian IEEE-754 binary32 voxels, x fastest
//   <stem>.u16   little-endian uint16 mask labels, x fastest
// Both writers return the sidecar path.
std::filesystem::path write_volume(const VolumeSample& sample, const std::filesystem::path& stem);
std::filesystem::path write_mask(const SegmentationMask& mask, const std::string& sample_id,
                                 const std::filesystem::path& stem);

// Reads a volume sidecar; the returned sample carries no mask or labels.
VolumeSample read_volume(const std::filesystem::path& sidecar);
SegmentationMask read_mask(const std::filesystem::path& sidecar);

// Raw little-endian blobs shared with the checkpoint writer.
void write_f32_blob(const std::filesystem::path& path, std::span<const float> values);
std::vector<float> read_f32_blob(const std::filesystem::path& path, std::size_t expected_count);

// Writes via a sibling temporary file and rename.
void write_text_atomic(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace uda::io

#endif  // UDA_VOLUME_IO_HPP_
