#include "lip3d/sequence.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_set>

#include "lip3d/errors.hpp"

namespace lip3d {

LipIndexMap LipIndexMap::identity() {
  LipIndexMap m;
  m.indices.resize(kLipLandmarks);
  for (std::size_t i = 0; i < kLipLandmarks; ++i) m.indices[i] = i;
  return m;
}

void validate_index_map(const LipIndexMap& map, std::size_t source_size) {
  if (map.indices.size() != kLipLandmarks) {
    throw ValueError("index map: expected " + std::to_string(kLipLandmarks) +
                     " indices, got " + std::to_string(map.indices.size()));
  }
  std::unordered_set<std::size_t> seen;
  for (std::size_t idx : map.indices) {
    if (idx >= source_size) {
      throw ValueError("index map: index " + std::to_string(idx) +
                       " out of range for cloud of " +
                       std::to_string(source_size) + " points");
    }
    if (!seen.insert(idx).second) {
      throw ValueError("index map: duplicate index " + std::to_string(idx));
    }
  }
  if (map.corner_left_pos >= kLipLandmarks ||
      map.corner_right_pos >= kLipLandmarks ||
      map.upper_ref_pos >= kLipLandmarks) {
    throw ValueError("index map: designated position out of range");
  }
}

LipIndexMap load_index_map(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("index map: cannot open " + path);
  LipIndexMap map;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    // trim
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    const auto e = line.find_last_not_of(" \t\r");
    line = line.substr(b, e - b + 1);
    try {
      std::size_t pos = 0;
      const long v = std::stol(line, &pos);
      if (pos != line.size() || v < 0) throw std::invalid_argument(line);
      map.indices.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw ParseError("index map: " + path + ":" + std::to_string(line_no) +
                       ": expected a non-negative integer, got '" + line + "'");
    }
  }
  if (map.indices.size() != kLipLandmarks) {
    throw ParseError("index map: " + path + ": expected " +
                     std::to_string(kLipLandmarks) + " entries, found " +
                     std::to_string(map.indices.size()));
  }
  return map;
}

void validate_sequence(const S3dlmSequence& seq) {
  if (seq.tensor.size() != kSequenceFrames * kLipLandmarks * 3) {
    throw DimensionError("sequence: tensor has " +
                         std::to_string(seq.tensor.size()) +
                         " values, expected " +
                         std::to_string(kSequenceFrames * kLipLandmarks * 3));
  }
  for (double v : seq.tensor) {
    if (!std::isfinite(v)) throw ValueError("sequence: non-finite value");
  }
}

FaceCloud select_lip_points(const FaceCloud& cloud, const LipIndexMap& map) {
  validate_index_map(map, cloud.points.size());
  FaceCloud out;
  out.frame_index = cloud.frame_index;
  out.points.reserve(kLipLandmarks);
  for (std::size_t idx : map.indices) out.points.push_back(cloud.points[idx]);
  out.corner_left_idx = map.corner_left_pos;
  out.corner_right_idx = map.corner_right_pos;
  out.upper_ref_idx = map.upper_ref_pos;
  return out;
}

std::vector<std::size_t> sample_frame_indices(std::size_t n_frames) {
  if (n_frames == 0) throw ValueError("sample_frames: empty input");
  std::vector<std::size_t> idx(kSequenceFrames);
  if (n_frames >= kSequenceFrames) {
    for (std::size_t k = 0; k < kSequenceFrames; ++k) {
      idx[k] = static_cast<std::size_t>(std::lround(
          static_cast<double>(k) * static_cast<double>(n_frames - 1) /
          static_cast<double>(kSequenceFrames - 1)));
    }
  } else {
    for (std::size_t k = 0; k < kSequenceFrames; ++k) {
      idx[k] = std::min(k, n_frames - 1);
    }
  }
  return idx;
}

std::vector<FaceCloud> sample_frames(const std::vector<FaceCloud>& frames) {
  const auto idx = sample_frame_indices(frames.size());
  std::vector<FaceCloud> out;
  out.reserve(kSequenceFrames);
  for (std::size_t i : idx) out.push_back(frames[i]);
  return out;
}

S3dlmSequence build_sequence(const std::vector<FaceCloud>& frames,
                             int speaker_id, int sentence_id) {
  const auto sampled = sample_frames(frames);
  S3dlmSequence seq;
  seq.speaker_id = speaker_id;
  seq.sentence_id = sentence_id;
  seq.tensor.resize(kSequenceFrames * kLipLandmarks * 3);
  for (std::size_t t = 0; t < kSequenceFrames; ++t) {
    const FaceCloud& f = sampled[t];
    if (f.points.size() != kLipLandmarks) {
      throw DimensionError("build_sequence: frame " + std::to_string(t) +
                           " has " + std::to_string(f.points.size()) +
                           " points, expected " +
                           std::to_string(kLipLandmarks));
    }
    for (std::size_t k = 0; k < kLipLandmarks; ++k) {
      seq.at(t, k, 0) = f.points[k].x;
      seq.at(t, k, 1) = f.points[k].y;
      seq.at(t, k, 2) = f.points[k].z;
    }
  }
  validate_sequence(seq);
  return seq;
}

S3dlmSequence project_2d(const S3dlmSequence& seq) {
  S3dlmSequence out = seq;
  for (std::size_t t = 0; t < kSequenceFrames; ++t)
    for (std::size_t k = 0; k < kLipLandmarks; ++k) out.at(t, k, 2) = 0.0;
  return out;
}

}  // namespace lip3d
