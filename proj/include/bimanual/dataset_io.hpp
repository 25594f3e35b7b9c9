#pragma once

#include <json.hpp>
#include <string>
#include <vector>

#include "bimanual/record.hpp"

namespace bimanual {

// One record per JSON object:
//   id, tier, domain, image_width, image_height,
//   motion: {frames: T x [hand][16 x 6D + wrist xyz] (99 numbers per hand), valid: [0|1] x T} (optional),
//   keypoints3d: T x 2 x 21 x 3 (optional), cameras: T x {K: [fx, fy, px, py], R: 9 row-major, t: 3},
//   keypoints2d: T x 2 x 21 x 2, keypoint_valid: T x 2 x 21, frame_valid: T,
//   generator_params, provenance.
nlohmann::json record_to_json(const TrajectoryRecord& r);
TrajectoryRecord record_from_json(const nlohmann::json& j);

enum class DatasetFormat { JsonLines, Binary };

/// ".jsonl" -> JSON lines; anything else -> binary (u32 little-endian length, then a
/// MessagePack encoding of the same object, repeated).
DatasetFormat format_for_path(const std::string& path);

void write_dataset(const std::string& path, const std::vector<TrajectoryRecord>& records);
std::vector<TrajectoryRecord> read_dataset(const std::string& path);

std::string encode_dataset(const std::vector<TrajectoryRecord>& records, DatasetFormat format);
std::vector<TrajectoryRecord> decode_dataset(const std::string& bytes, DatasetFormat format);

}  // namespace bimanual
