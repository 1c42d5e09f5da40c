#pragma once

// Canonical dataset format, loader/saver, deterministic splits, and the
// synthetic lip-motion generator. Each synthetic utterance is built
// additively: a static 10x20 lip lattice plus a sentence-specific motion
// field, plus a speaker-specific field (static geometry and a habitual
// oscillation), plus optional Gaussian noise, then an optional per-utterance
// rigid pose. The realized per-sentence and per-speaker fields are stored as
// ground truth so the additive structure can be verified independently.

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lip3d/geometry.hpp"
#include "lip3d/sequence.hpp"

namespace lip3d {

struct Utterance {
  int speaker_id = 0;
  int sentence_id = 0;
  double fps = 30.0;
  std::vector<FaceCloud> frames;  // time-ordered, shared point count
};

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct PoseJitter {
  double max_yaw_deg = 0.0;
  double max_roll_deg = 0.0;
  double max_pitch_deg = 0.0;
  double max_translation_mm = 0.0;

  bool enabled() const {
    return max_yaw_deg != 0.0 || max_roll_deg != 0.0 || max_pitch_deg != 0.0 ||
           max_translation_mm != 0.0;
  }
};

struct SyntheticSpec {
  int n_speakers = 12;
  int n_sentences = 40;
  int frames_per_utterance = 45;
  double fps = 30.0;
  double noise_sigma = 0.02;  // mm

  // Per-speaker factors.
  Range speaker_amplitude_range{3.6, 6.0};  // habitual motion, mm
  Range width_scale_range{0.85, 1.15};
  Range asymmetry_range{-2.0, 2.0};       // mm
  Range habit_frequency_range{0.6, 1.6};  // Hz
  Range protrusion_range{-1.5, 1.5};      // mm

  // Per-sentence trajectory shape.
  double text_amplitude = 1.2;             // mm
  double text_spread_amplitude = 0.8;      // mm
  double text_protrusion_amplitude = 0.4;  // mm
  int text_harmonics = 3;

  PoseJitter pose_jitter{};
  std::uint64_t seed = 1;
};

struct GroundTruth {
  std::size_t frames = 0;
  std::vector<double> base;                       // 200*3, static lattice
  std::vector<std::vector<double>> text_field;    // per sentence, frames*600
  std::vector<std::vector<double>> speaker_field;  // per speaker, frames*600
};

struct DatasetManifest {
  int format_version = 1;
  int n_speakers = 0;
  int n_sentences = 0;
  double fps = 30.0;
  int point_count = static_cast<int>(kLipLandmarks);
  std::size_t corner_left = kCanonicalCornerLeft;
  std::size_t corner_right = kCanonicalCornerRight;
  std::size_t upper_ref = kCanonicalUpperRef;
  bool has_ground_truth = false;
  std::string generator_json;  // spec echo; empty for non-synthetic data
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<Utterance> utterances;  // speaker-major: i*n_sentences + j
  std::optional<GroundTruth> ground_truth;

  const Utterance& at(int speaker, int sentence) const;
};

// Deterministic in spec.seed; every random quantity comes from a named
// substream so that toggling noise or pose never changes the other draws.
Dataset generate_synthetic(const SyntheticSpec& spec);

// Flattened frames x 200 x 3 matrix of one utterance (frame-major).
std::vector<double> utterance_matrix(const Utterance& utt);

// Directory layout: manifest.json + spk{S}_sent{J}.s3d (binary, magic S3D1,
// u32 frame count, u32 point count, little-endian f64 triples frame-major).
// A CSV twin spk{S}_sent{J}.csv with header frame,point,x,y,z is accepted on
// load when the .s3d file is absent.
void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

// Sentences [0,n_train) for every speaker go to train, the rest to test.
std::pair<Dataset, Dataset> split_text_independent(const Dataset& ds,
                                                   int n_train = 120);

// Per-speaker seeded random sentence partition of the same sizes.
std::pair<Dataset, Dataset> split_text_dependent(const Dataset& ds,
                                                 std::uint64_t seed,
                                                 int n_train = 120);

std::string synthetic_spec_to_json(const SyntheticSpec& spec);
// Strict: unknown keys are rejected.
SyntheticSpec synthetic_spec_from_json(const std::string& text);

}  // namespace lip3d
