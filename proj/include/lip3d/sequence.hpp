#pragma once

// Sentence-level 3D lip motion sequences: 200 lip landmarks selected from a
// raw face cloud, 28 frames sampled over the utterance, assembled into a
// 28x200x3 tensor (frame-major, landmark, then xyz).

#include <cstddef>
#include <string>
#include <vector>

#include "lip3d/geometry.hpp"

namespace lip3d {

inline constexpr std::size_t kSequenceFrames = 28;
inline constexpr std::size_t kLipLandmarks = 200;
inline constexpr std::size_t kLipRows = 10;
inline constexpr std::size_t kLipCols = 20;

// Canonical positions in the 200-point row-major layout (10 rows x 20 cols;
// row 0 = outer upper lip, row 9 = outer lower lip, column 0 = left).
inline constexpr std::size_t kCanonicalCornerLeft = 0;
inline constexpr std::size_t kCanonicalCornerRight = 19;
inline constexpr std::size_t kCanonicalUpperRef = 10;

// Maps 200 source-cloud indices into the canonical row-major layout.
struct LipIndexMap {
  std::vector<std::size_t> indices;  // exactly 200, distinct
  std::size_t corner_left_pos = kCanonicalCornerLeft;
  std::size_t corner_right_pos = kCanonicalCornerRight;
  std::size_t upper_ref_pos = kCanonicalUpperRef;

  static LipIndexMap identity();  // positions 0..199 map to themselves
};

// Validates count, range (against source_size) and distinctness.
void validate_index_map(const LipIndexMap& map, std::size_t source_size);

// File format: one integer per line, exactly 200 data lines, '#' comments and
// blank lines allowed.
LipIndexMap load_index_map(const std::string& path);

struct S3dlmSequence {
  // kSequenceFrames * kLipLandmarks * 3, laid out t*600 + k*3 + c.
  std::vector<double> tensor;
  int speaker_id = 0;
  int sentence_id = 0;

  double at(std::size_t t, std::size_t k, std::size_t c) const {
    return tensor[t * kLipLandmarks * 3 + k * 3 + c];
  }
  double& at(std::size_t t, std::size_t k, std::size_t c) {
    return tensor[t * kLipLandmarks * 3 + k * 3 + c];
  }
};

void validate_sequence(const S3dlmSequence& seq);

// Gathers the mapped 200 landmarks in canonical order.
FaceCloud select_lip_points(const FaceCloud& cloud, const LipIndexMap& map);

// Uniform selection of 28 frames with both endpoints kept:
// i_k = round(k*(n-1)/27). Inputs shorter than 28 frames are extended by
// repeating the last frame.
std::vector<std::size_t> sample_frame_indices(std::size_t n_frames);
std::vector<FaceCloud> sample_frames(const std::vector<FaceCloud>& frames);

// Frames must be 200-point, posture-corrected clouds in canonical order.
S3dlmSequence build_sequence(const std::vector<FaceCloud>& frames,
                             int speaker_id, int sentence_id);

// Copy with the z channel zeroed (2D-landmark comparison input).
S3dlmSequence project_2d(const S3dlmSequence& seq);

}  // namespace lip3d
