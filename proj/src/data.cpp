#include "lip3d/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>

#include <json.hpp>

#include "binio.hpp"
#include "lip3d/errors.hpp"
#include "lip3d/rng.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace lip3d {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kMouthHalfWidthMm = 30.0;
constexpr double kRowHeightStepMm = 1.5;
constexpr double kRestProtrusionMm = 2.0;

// Rows 0..4 upper lip (0 outermost), 5..9 lower lip (9 outermost).
double inner_level(std::size_t r) {
  return static_cast<double>(r <= 4 ? r : 9 - r);
}

double half_width(std::size_t r) {
  return kMouthHalfWidthMm * (1.0 - 0.015 * inner_level(r));
}

// Signed rest height of the row arc peak.
double rest_height(std::size_t r) {
  return r <= 4 ? (5.0 - static_cast<double>(r)) * kRowHeightStepMm
                : -(static_cast<double>(r) - 4.0) * kRowHeightStepMm;
}

double row_direction(std::size_t r) { return r <= 4 ? 1.0 : -1.0; }

// Vertical motion gain: outer upper row strongest, inner rows weakest.
double motion_gain(std::size_t r) {
  static constexpr double g[10] = {1.0,  0.75, 0.5,  0.3,  0.15,
                                   0.18, 0.32, 0.55, 0.7,  0.85};
  return g[r];
}

// Protrusion profile; zero on the outer upper row, which keeps the upper
// reference landmark in the XY plane at all times.
double z_profile(std::size_t r) {
  static constexpr double q[10] = {0.0, 0.3, 0.5,  0.6, 0.7,
                                   0.7, 0.6, 0.5, 0.35, 0.2};
  return q[r];
}

double col_fraction(std::size_t c) {
  return static_cast<double>(c) / static_cast<double>(kLipCols - 1);
}

struct HarmonicBank {
  std::vector<double> amp, freq, phase;
  double scale = 1.0;

  static HarmonicBank draw(Rng& rng, int harmonics, double scale) {
    HarmonicBank b;
    b.scale = scale * rng.uniform(0.8, 1.2);
    b.amp.resize(harmonics);
    b.freq.resize(harmonics);
    b.phase.resize(harmonics);
    for (int h = 0; h < harmonics; ++h) {
      b.amp[h] = rng.uniform(0.5, 1.0);
      b.freq[h] = rng.uniform(0.6, 2.2);
      b.phase[h] = rng.uniform(0.0, 2.0 * kPi);
    }
    return b;
  }

  // Non-negative mixture in [0, scale].
  double opening(double tau) const {
    double num = 0.0, den = 0.0;
    for (std::size_t h = 0; h < amp.size(); ++h) {
      num += amp[h] * 0.5 * (1.0 + std::sin(2.0 * kPi * freq[h] * tau + phase[h]));
      den += amp[h];
    }
    return scale * num / den;
  }

  // Signed mixture in [-scale, scale].
  double signed_wave(double tau) const {
    double num = 0.0, den = 0.0;
    for (std::size_t h = 0; h < amp.size(); ++h) {
      num += amp[h] * std::sin(2.0 * kPi * freq[h] * tau + phase[h]);
      den += amp[h];
    }
    return scale * num / den;
  }
};

struct SpeakerFactors {
  double width, asym, protrusion, habit_amp, habit_freq, habit_phase;

  static SpeakerFactors draw(Rng& rng, const SyntheticSpec& s) {
    SpeakerFactors f;
    f.width = rng.uniform(s.width_scale_range.lo, s.width_scale_range.hi);
    f.asym = rng.uniform(s.asymmetry_range.lo, s.asymmetry_range.hi);
    f.protrusion = rng.uniform(s.protrusion_range.lo, s.protrusion_range.hi);
    f.habit_amp = rng.uniform(s.speaker_amplitude_range.lo,
                              s.speaker_amplitude_range.hi);
    f.habit_freq = rng.uniform(s.habit_frequency_range.lo,
                               s.habit_frequency_range.hi);
    f.habit_phase = rng.uniform(0.0, 2.0 * kPi);
    return f;
  }
};

void check_range(const Range& r, const char* name) {
  if (!std::isfinite(r.lo) || !std::isfinite(r.hi) || r.lo > r.hi) {
    throw ValueError(std::string("synthetic spec: invalid range ") + name);
  }
}

void validate_spec(const SyntheticSpec& s) {
  if (s.n_speakers < 1 || s.n_sentences < 1 || s.frames_per_utterance < 1) {
    throw ValueError("synthetic spec: counts must be positive");
  }
  if (s.fps <= 0.0) throw ValueError("synthetic spec: fps must be positive");
  if (s.noise_sigma < 0.0) {
    throw ValueError("synthetic spec: noise_sigma must be >= 0");
  }
  if (s.text_harmonics < 1) {
    throw ValueError("synthetic spec: text_harmonics must be >= 1");
  }
  check_range(s.speaker_amplitude_range, "speaker_amplitude_range");
  check_range(s.width_scale_range, "width_scale_range");
  check_range(s.asymmetry_range, "asymmetry_range");
  check_range(s.habit_frequency_range, "habit_frequency_range");
  check_range(s.protrusion_range, "protrusion_range");
}

std::vector<double> make_base_lattice() {
  std::vector<double> base(kLipLandmarks * 3);
  for (std::size_t r = 0; r < kLipRows; ++r) {
    for (std::size_t c = 0; c < kLipCols; ++c) {
      const double s = col_fraction(c);
      const std::size_t k = r * kLipCols + c;
      base[k * 3 + 0] = (2.0 * s - 1.0) * half_width(r);
      base[k * 3 + 1] = rest_height(r) * std::sin(kPi * s);
      base[k * 3 + 2] = kRestProtrusionMm * z_profile(r) * std::sin(kPi * s);
    }
  }
  return base;
}

// Sentence motion field: frames x 200 x 3.
std::vector<double> make_text_field(const SyntheticSpec& spec, int sentence) {
  Rng rng = make_stream(spec.seed, {stream_tag::kText,
                                    static_cast<std::uint64_t>(sentence)});
  const HarmonicBank open =
      HarmonicBank::draw(rng, spec.text_harmonics, spec.text_amplitude);
  const HarmonicBank spread =
      HarmonicBank::draw(rng, spec.text_harmonics, spec.text_spread_amplitude);
  const HarmonicBank protr = HarmonicBank::draw(
      rng, spec.text_harmonics, spec.text_protrusion_amplitude);

  const std::size_t frames = static_cast<std::size_t>(spec.frames_per_utterance);
  std::vector<double> field(frames * kLipLandmarks * 3);
  for (std::size_t t = 0; t < frames; ++t) {
    const double tau = static_cast<double>(t) / spec.fps;
    const double o = open.opening(tau);
    const double sp = spread.signed_wave(tau);
    const double pz = protr.signed_wave(tau);
    for (std::size_t r = 0; r < kLipRows; ++r) {
      const double gain = motion_gain(r) * row_direction(r);
      const double zq = z_profile(r);
      for (std::size_t c = 0; c < kLipCols; ++c) {
        const double s = col_fraction(c);
        const double arc = std::sin(kPi * s);
        double* v = field.data() + (t * kLipLandmarks + r * kLipCols + c) * 3;
        v[0] = sp * (s - 0.5);
        v[1] = gain * o * arc;
        v[2] = zq * pz * arc;
      }
    }
  }
  return field;
}

// Speaker field: static geometry plus habitual oscillation; frames x 200 x 3.
std::vector<double> make_speaker_field(const SyntheticSpec& spec, int speaker,
                                       const std::vector<double>& base) {
  Rng rng = make_stream(spec.seed, {stream_tag::kSpeaker,
                                    static_cast<std::uint64_t>(speaker)});
  const SpeakerFactors f = SpeakerFactors::draw(rng, spec);

  const std::size_t frames = static_cast<std::size_t>(spec.frames_per_utterance);
  std::vector<double> field(frames * kLipLandmarks * 3);
  for (std::size_t t = 0; t < frames; ++t) {
    const double tau = static_cast<double>(t) / spec.fps;
    const double habit =
        f.habit_amp * 0.5 *
        (1.0 + std::sin(2.0 * kPi * f.habit_freq * tau + f.habit_phase));
    for (std::size_t r = 0; r < kLipRows; ++r) {
      const double gain = motion_gain(r) * row_direction(r);
      const double zq = z_profile(r);
      for (std::size_t c = 0; c < kLipCols; ++c) {
        const double s = col_fraction(c);
        const double arc = std::sin(kPi * s);
        const std::size_t k = r * kLipCols + c;
        double* v = field.data() + (t * kLipLandmarks + k) * 3;
        v[0] = (f.width - 1.0) * base[k * 3 + 0] + f.asym * s;
        v[1] = gain * habit * arc;
        v[2] = f.protrusion * zq * arc;
      }
    }
  }
  return field;
}

RigidTransform draw_pose(Rng& rng, const PoseJitter& jit) {
  const double d2r = kPi / 180.0;
  const double yaw = rng.uniform(-jit.max_yaw_deg, jit.max_yaw_deg) * d2r;
  const double roll = rng.uniform(-jit.max_roll_deg, jit.max_roll_deg) * d2r;
  const double pitch = rng.uniform(-jit.max_pitch_deg, jit.max_pitch_deg) * d2r;
  RigidTransform t;
  t.rotation = Mat3::rotation_z(roll) * Mat3::rotation_y(yaw) *
               Mat3::rotation_x(pitch);
  t.translation = {
      rng.uniform(-jit.max_translation_mm, jit.max_translation_mm),
      rng.uniform(-jit.max_translation_mm, jit.max_translation_mm),
      rng.uniform(-jit.max_translation_mm, jit.max_translation_mm)};
  return t;
}

std::string utterance_stem(int speaker, int sentence) {
  return "spk" + std::to_string(speaker) + "_sent" + std::to_string(sentence);
}

std::string encode_s3d(const std::vector<FaceCloud>& frames) {
  std::string out = "S3D1";
  binio::put_u32(out, static_cast<std::uint32_t>(frames.size()));
  binio::put_u32(out,
                 static_cast<std::uint32_t>(frames.empty() ? 0 : frames[0].points.size()));
  for (const auto& f : frames) {
    for (const auto& p : f.points) {
      binio::put_f64(out, p.x);
      binio::put_f64(out, p.y);
      binio::put_f64(out, p.z);
    }
  }
  return out;
}

std::string encode_s3d_flat(const std::vector<double>& values,
                            std::size_t frames, std::size_t points) {
  std::string out = "S3D1";
  binio::put_u32(out, static_cast<std::uint32_t>(frames));
  binio::put_u32(out, static_cast<std::uint32_t>(points));
  for (double v : values) binio::put_f64(out, v);
  return out;
}

std::vector<double> decode_s3d_flat(const std::string& path,
                                    std::size_t& frames, std::size_t& points) {
  binio::Reader r(binio::read_file(path), path);
  if (r.bytes(4) != "S3D1") {
    throw ParseError(path + ": bad magic, expected S3D1");
  }
  frames = r.u32();
  points = r.u32();
  std::vector<double> values(frames * points * 3);
  for (auto& v : values) v = r.f64();
  r.expect_end();
  return values;
}

std::vector<FaceCloud> decode_s3d_frames(const std::string& path,
                                         const DatasetManifest& m) {
  std::size_t frames = 0, points = 0;
  const auto values = decode_s3d_flat(path, frames, points);
  if (points != static_cast<std::size_t>(m.point_count)) {
    throw ParseError(path + ": point count " + std::to_string(points) +
                     " disagrees with manifest point_count " +
                     std::to_string(m.point_count));
  }
  if (frames == 0) throw ParseError(path + ": no frames");
  std::vector<FaceCloud> out(frames);
  for (std::size_t t = 0; t < frames; ++t) {
    FaceCloud& f = out[t];
    f.frame_index = static_cast<int>(t);
    f.corner_left_idx = m.corner_left;
    f.corner_right_idx = m.corner_right;
    f.upper_ref_idx = m.upper_ref;
    f.points.resize(points);
    for (std::size_t k = 0; k < points; ++k) {
      f.points[k] = {values[(t * points + k) * 3 + 0],
                     values[(t * points + k) * 3 + 1],
                     values[(t * points + k) * 3 + 2]};
    }
  }
  return out;
}

double parse_csv_double(const std::string& field, const std::string& where) {
  double v = 0.0;
  const char* b = field.data();
  const char* e = b + field.size();
  auto [ptr, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || ptr != e) {
    throw ParseError(where + ": bad number '" + field + "'");
  }
  return v;
}

std::vector<FaceCloud> decode_csv_frames(const std::string& path,
                                         const DatasetManifest& m) {
  const std::string data = binio::read_file(path);
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < data.size()) {
    std::size_t end = data.find('\n', start);
    if (end == std::string::npos) end = data.size();
    std::string line = data.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(std::move(line));
    start = end + 1;
  }
  if (lines.empty() || lines[0] != "frame,point,x,y,z") {
    throw ParseError(path + ": expected header frame,point,x,y,z");
  }
  struct Row {
    std::size_t frame, point;
    double x, y, z;
  };
  std::vector<Row> rows;
  std::size_t max_frame = 0;
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    const std::string& line = lines[ln];
    const std::string where = path + ":" + std::to_string(ln + 1);
    std::vector<std::string> fields;
    std::size_t p = 0;
    while (true) {
      const std::size_t q = line.find(',', p);
      fields.push_back(line.substr(p, q - p));
      if (q == std::string::npos) break;
      p = q + 1;
    }
    if (fields.size() != 5) {
      throw ParseError(where + ": expected 5 fields, got " +
                       std::to_string(fields.size()));
    }
    Row r{};
    r.frame = static_cast<std::size_t>(parse_csv_double(fields[0], where));
    r.point = static_cast<std::size_t>(parse_csv_double(fields[1], where));
    r.x = parse_csv_double(fields[2], where);
    r.y = parse_csv_double(fields[3], where);
    r.z = parse_csv_double(fields[4], where);
    if (r.point >= static_cast<std::size_t>(m.point_count)) {
      throw ParseError(where + ": point index " + std::to_string(r.point) +
                       " disagrees with manifest point_count " +
                       std::to_string(m.point_count));
    }
    max_frame = std::max(max_frame, r.frame);
    rows.push_back(r);
  }
  const std::size_t frames = max_frame + 1;
  const std::size_t points = static_cast<std::size_t>(m.point_count);
  if (rows.size() != frames * points) {
    throw ParseError(path + ": got " + std::to_string(rows.size()) +
                     " rows, expected " + std::to_string(frames * points) +
                     " for a complete " + std::to_string(frames) + "x" +
                     std::to_string(points) + " grid");
  }
  std::vector<FaceCloud> out(frames);
  std::vector<bool> seen(frames * points, false);
  for (auto& f : out) {
    f.points.resize(points);
    f.corner_left_idx = m.corner_left;
    f.corner_right_idx = m.corner_right;
    f.upper_ref_idx = m.upper_ref;
  }
  for (const auto& r : rows) {
    const std::size_t slot = r.frame * points + r.point;
    if (seen[slot]) {
      throw ParseError(path + ": duplicate entry for frame " +
                       std::to_string(r.frame) + " point " +
                       std::to_string(r.point));
    }
    seen[slot] = true;
    out[r.frame].points[r.point] = {r.x, r.y, r.z};
    out[r.frame].frame_index = static_cast<int>(r.frame);
  }
  return out;
}

json range_to_json(const Range& r) { return json::array({r.lo, r.hi}); }

Range range_from_json(const json& j, const char* name) {
  if (!j.is_array() || j.size() != 2) {
    throw ConfigError(std::string("spec: ") + name + " must be [lo,hi]");
  }
  return Range{j[0].get<double>(), j[1].get<double>()};
}

}  // namespace

const Utterance& Dataset::at(int speaker, int sentence) const {
  const std::size_t idx = static_cast<std::size_t>(speaker) *
                              static_cast<std::size_t>(manifest.n_sentences) +
                          static_cast<std::size_t>(sentence);
  return utterances.at(idx);
}

std::vector<double> utterance_matrix(const Utterance& utt) {
  if (utt.frames.empty()) throw ValueError("utterance has no frames");
  const std::size_t points = utt.frames[0].points.size();
  std::vector<double> out(utt.frames.size() * points * 3);
  for (std::size_t t = 0; t < utt.frames.size(); ++t) {
    if (utt.frames[t].points.size() != points) {
      throw DimensionError("utterance frames disagree on point count");
    }
    for (std::size_t k = 0; k < points; ++k) {
      const Vec3& p = utt.frames[t].points[k];
      out[(t * points + k) * 3 + 0] = p.x;
      out[(t * points + k) * 3 + 1] = p.y;
      out[(t * points + k) * 3 + 2] = p.z;
    }
  }
  return out;
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
  validate_spec(spec);
  const std::size_t frames = static_cast<std::size_t>(spec.frames_per_utterance);

  Dataset ds;
  ds.manifest.n_speakers = spec.n_speakers;
  ds.manifest.n_sentences = spec.n_sentences;
  ds.manifest.fps = spec.fps;
  ds.manifest.point_count = static_cast<int>(kLipLandmarks);
  ds.manifest.has_ground_truth = true;
  ds.manifest.generator_json = synthetic_spec_to_json(spec);

  GroundTruth gt;
  gt.frames = frames;
  gt.base = make_base_lattice();
  gt.text_field.reserve(spec.n_sentences);
  for (int j = 0; j < spec.n_sentences; ++j) {
    gt.text_field.push_back(make_text_field(spec, j));
  }
  gt.speaker_field.reserve(spec.n_speakers);
  for (int i = 0; i < spec.n_speakers; ++i) {
    gt.speaker_field.push_back(make_speaker_field(spec, i, gt.base));
  }

  ds.utterances.reserve(static_cast<std::size_t>(spec.n_speakers) *
                        static_cast<std::size_t>(spec.n_sentences));
  for (int i = 0; i < spec.n_speakers; ++i) {
    for (int j = 0; j < spec.n_sentences; ++j) {
      Utterance utt;
      utt.speaker_id = i;
      utt.sentence_id = j;
      utt.fps = spec.fps;
      utt.frames.resize(frames);

      const auto& u = gt.text_field[static_cast<std::size_t>(j)];
      const auto& l = gt.speaker_field[static_cast<std::size_t>(i)];
      Rng noise = make_stream(spec.seed, {stream_tag::kNoise,
                                          static_cast<std::uint64_t>(i),
                                          static_cast<std::uint64_t>(j)});
      std::optional<RigidTransform> pose;
      if (spec.pose_jitter.enabled()) {
        Rng pose_rng = make_stream(spec.seed, {stream_tag::kPose,
                                               static_cast<std::uint64_t>(i),
                                               static_cast<std::uint64_t>(j)});
        pose = draw_pose(pose_rng, spec.pose_jitter);
      }
      for (std::size_t t = 0; t < frames; ++t) {
        FaceCloud& f = utt.frames[t];
        f.frame_index = static_cast<int>(t);
        f.corner_left_idx = kCanonicalCornerLeft;
        f.corner_right_idx = kCanonicalCornerRight;
        f.upper_ref_idx = kCanonicalUpperRef;
        f.points.resize(kLipLandmarks);
        for (std::size_t k = 0; k < kLipLandmarks; ++k) {
          double v[3];
          for (int c = 0; c < 3; ++c) {
            // Literal additive composition; kept in this exact order so the
            // stored ground truth reproduces the values bit-for-bit.
            v[c] = (gt.base[k * 3 + c] + u[(t * kLipLandmarks + k) * 3 + c]) +
                   l[(t * kLipLandmarks + k) * 3 + c];
          }
          if (spec.noise_sigma > 0.0) {
            for (double& x : v) x += noise.normal(0.0, spec.noise_sigma);
          }
          f.points[k] = {v[0], v[1], v[2]};
        }
        if (pose) {
          for (auto& p : f.points) p = pose->apply(p);
        }
      }
      ds.utterances.push_back(std::move(utt));
    }
  }
  ds.ground_truth = std::move(gt);
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& dir) {
  const fs::path root(dir);
  if (!root.parent_path().empty() && !fs::exists(root.parent_path())) {
    throw ValueError("save_dataset: parent directory does not exist: " +
                     root.parent_path().string());
  }
  fs::create_directory(root);

  json m;
  m["format_version"] = ds.manifest.format_version;
  m["n_speakers"] = ds.manifest.n_speakers;
  m["n_sentences"] = ds.manifest.n_sentences;
  m["fps"] = ds.manifest.fps;
  m["point_count"] = ds.manifest.point_count;
  m["corner_left"] = ds.manifest.corner_left;
  m["corner_right"] = ds.manifest.corner_right;
  m["upper_ref"] = ds.manifest.upper_ref;
  m["has_ground_truth"] = ds.manifest.has_ground_truth && ds.ground_truth.has_value();
  if (!ds.manifest.generator_json.empty()) {
    m["generator"] = json::parse(ds.manifest.generator_json);
  }
  binio::write_file((root / "manifest.json").string(), m.dump(2) + "\n");

  for (const auto& utt : ds.utterances) {
    const std::string name = utterance_stem(utt.speaker_id, utt.sentence_id) + ".s3d";
    binio::write_file((root / name).string(), encode_s3d(utt.frames));
  }

  if (ds.manifest.has_ground_truth && ds.ground_truth) {
    const GroundTruth& gt = *ds.ground_truth;
    binio::write_file((root / "gt_base.s3d").string(),
                      encode_s3d_flat(gt.base, 1, kLipLandmarks));
    for (std::size_t j = 0; j < gt.text_field.size(); ++j) {
      binio::write_file((root / ("gt_text_" + std::to_string(j) + ".s3d")).string(),
                        encode_s3d_flat(gt.text_field[j], gt.frames, kLipLandmarks));
    }
    for (std::size_t i = 0; i < gt.speaker_field.size(); ++i) {
      binio::write_file(
          (root / ("gt_speaker_" + std::to_string(i) + ".s3d")).string(),
          encode_s3d_flat(gt.speaker_field[i], gt.frames, kLipLandmarks));
    }
  }
}

Dataset load_dataset(const std::string& dir) {
  const fs::path root(dir);
  const std::string manifest_path = (root / "manifest.json").string();
  json m;
  try {
    m = json::parse(binio::read_file(manifest_path));
  } catch (const json::parse_error& e) {
    throw ParseError(manifest_path + ": " + e.what());
  }

  Dataset ds;
  try {
    ds.manifest.format_version = m.at("format_version").get<int>();
    ds.manifest.n_speakers = m.at("n_speakers").get<int>();
    ds.manifest.n_sentences = m.at("n_sentences").get<int>();
    ds.manifest.fps = m.at("fps").get<double>();
    ds.manifest.point_count = m.at("point_count").get<int>();
    ds.manifest.corner_left = m.at("corner_left").get<std::size_t>();
    ds.manifest.corner_right = m.at("corner_right").get<std::size_t>();
    ds.manifest.upper_ref = m.at("upper_ref").get<std::size_t>();
    ds.manifest.has_ground_truth = m.at("has_ground_truth").get<bool>();
    if (m.contains("generator")) {
      ds.manifest.generator_json = m["generator"].dump();
    }
  } catch (const json::exception& e) {
    throw ParseError(manifest_path + ": " + e.what());
  }
  if (ds.manifest.format_version != 1) {
    throw ParseError(manifest_path + ": unsupported format_version " +
                     std::to_string(ds.manifest.format_version));
  }
  if (ds.manifest.n_speakers < 1 || ds.manifest.n_sentences < 1 ||
      ds.manifest.point_count < 1) {
    throw ParseError(manifest_path + ": non-positive counts");
  }

  for (int i = 0; i < ds.manifest.n_speakers; ++i) {
    for (int j = 0; j < ds.manifest.n_sentences; ++j) {
      const fs::path bin = root / (utterance_stem(i, j) + ".s3d");
      const fs::path csv = root / (utterance_stem(i, j) + ".csv");
      Utterance utt;
      utt.speaker_id = i;
      utt.sentence_id = j;
      utt.fps = ds.manifest.fps;
      if (fs::exists(bin)) {
        utt.frames = decode_s3d_frames(bin.string(), ds.manifest);
      } else if (fs::exists(csv)) {
        utt.frames = decode_csv_frames(csv.string(), ds.manifest);
      } else {
        throw ParseError("dataset: missing utterance file " + bin.string());
      }
      ds.utterances.push_back(std::move(utt));
    }
  }

  if (ds.manifest.has_ground_truth) {
    GroundTruth gt;
    std::size_t frames = 0, points = 0;
    gt.base = decode_s3d_flat((root / "gt_base.s3d").string(), frames, points);
    if (frames != 1 || points != kLipLandmarks) {
      throw ParseError("gt_base.s3d: expected 1 frame of 200 points");
    }
    for (int j = 0; j < ds.manifest.n_sentences; ++j) {
      gt.text_field.push_back(decode_s3d_flat(
          (root / ("gt_text_" + std::to_string(j) + ".s3d")).string(), frames,
          points));
      gt.frames = frames;
    }
    for (int i = 0; i < ds.manifest.n_speakers; ++i) {
      gt.speaker_field.push_back(decode_s3d_flat(
          (root / ("gt_speaker_" + std::to_string(i) + ".s3d")).string(),
          frames, points));
    }
    ds.ground_truth = std::move(gt);
  }
  return ds;
}

namespace {

std::pair<Dataset, Dataset> split_by_sentences(
    const Dataset& ds, const std::vector<std::vector<int>>& train_sentences) {
  Dataset train, test;
  train.manifest = ds.manifest;
  test.manifest = ds.manifest;
  train.manifest.has_ground_truth = false;
  test.manifest.has_ground_truth = false;
  for (const auto& utt : ds.utterances) {
    const auto& keep = train_sentences[static_cast<std::size_t>(utt.speaker_id)];
    const bool in_train =
        std::find(keep.begin(), keep.end(), utt.sentence_id) != keep.end();
    (in_train ? train : test).utterances.push_back(utt);
  }
  return {std::move(train), std::move(test)};
}

}  // namespace

std::pair<Dataset, Dataset> split_text_independent(const Dataset& ds,
                                                   int n_train) {
  if (n_train < 1 || n_train >= ds.manifest.n_sentences) {
    throw ValueError("split: n_train " + std::to_string(n_train) +
                     " must be in [1," + std::to_string(ds.manifest.n_sentences) +
                     ")");
  }
  std::vector<std::vector<int>> keep(
      static_cast<std::size_t>(ds.manifest.n_speakers));
  for (auto& v : keep) {
    v.resize(static_cast<std::size_t>(n_train));
    for (int j = 0; j < n_train; ++j) v[static_cast<std::size_t>(j)] = j;
  }
  return split_by_sentences(ds, keep);
}

std::pair<Dataset, Dataset> split_text_dependent(const Dataset& ds,
                                                 std::uint64_t seed,
                                                 int n_train) {
  if (n_train < 1 || n_train >= ds.manifest.n_sentences) {
    throw ValueError("split: n_train " + std::to_string(n_train) +
                     " must be in [1," + std::to_string(ds.manifest.n_sentences) +
                     ")");
  }
  std::vector<std::vector<int>> keep(
      static_cast<std::size_t>(ds.manifest.n_speakers));
  for (int i = 0; i < ds.manifest.n_speakers; ++i) {
    std::vector<int> ids(static_cast<std::size_t>(ds.manifest.n_sentences));
    for (int j = 0; j < ds.manifest.n_sentences; ++j)
      ids[static_cast<std::size_t>(j)] = j;
    Rng rng = make_stream(seed, {stream_tag::kSplit,
                                 static_cast<std::uint64_t>(i)});
    rng.shuffle(ids);
    ids.resize(static_cast<std::size_t>(n_train));
    keep[static_cast<std::size_t>(i)] = std::move(ids);
  }
  return split_by_sentences(ds, keep);
}

std::string synthetic_spec_to_json(const SyntheticSpec& spec) {
  json j;
  j["n_speakers"] = spec.n_speakers;
  j["n_sentences"] = spec.n_sentences;
  j["frames_per_utterance"] = spec.frames_per_utterance;
  j["fps"] = spec.fps;
  j["noise_sigma"] = spec.noise_sigma;
  j["speaker_amplitude_range"] = range_to_json(spec.speaker_amplitude_range);
  j["width_scale_range"] = range_to_json(spec.width_scale_range);
  j["asymmetry_range"] = range_to_json(spec.asymmetry_range);
  j["habit_frequency_range"] = range_to_json(spec.habit_frequency_range);
  j["protrusion_range"] = range_to_json(spec.protrusion_range);
  j["text_amplitude"] = spec.text_amplitude;
  j["text_spread_amplitude"] = spec.text_spread_amplitude;
  j["text_protrusion_amplitude"] = spec.text_protrusion_amplitude;
  j["text_harmonics"] = spec.text_harmonics;
  j["pose_jitter"] = {{"max_yaw_deg", spec.pose_jitter.max_yaw_deg},
                      {"max_roll_deg", spec.pose_jitter.max_roll_deg},
                      {"max_pitch_deg", spec.pose_jitter.max_pitch_deg},
                      {"max_translation_mm", spec.pose_jitter.max_translation_mm}};
  j["seed"] = spec.seed;
  return j.dump(2);
}

SyntheticSpec synthetic_spec_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("spec: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("spec: expected a JSON object");

  static const std::vector<std::string> kKeys = {
      "n_speakers", "n_sentences", "frames_per_utterance", "fps",
      "noise_sigma", "speaker_amplitude_range", "width_scale_range",
      "asymmetry_range", "habit_frequency_range", "protrusion_range",
      "text_amplitude", "text_spread_amplitude", "text_protrusion_amplitude",
      "text_harmonics", "pose_jitter", "seed"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(kKeys.begin(), kKeys.end(), key) == kKeys.end()) {
      throw ConfigError("spec: unknown key '" + key + "'");
    }
  }

  SyntheticSpec spec;
  try {
    if (j.contains("n_speakers")) spec.n_speakers = j["n_speakers"].get<int>();
    if (j.contains("n_sentences")) spec.n_sentences = j["n_sentences"].get<int>();
    if (j.contains("frames_per_utterance"))
      spec.frames_per_utterance = j["frames_per_utterance"].get<int>();
    if (j.contains("fps")) spec.fps = j["fps"].get<double>();
    if (j.contains("noise_sigma")) spec.noise_sigma = j["noise_sigma"].get<double>();
    if (j.contains("speaker_amplitude_range"))
      spec.speaker_amplitude_range =
          range_from_json(j["speaker_amplitude_range"], "speaker_amplitude_range");
    if (j.contains("width_scale_range"))
      spec.width_scale_range =
          range_from_json(j["width_scale_range"], "width_scale_range");
    if (j.contains("asymmetry_range"))
      spec.asymmetry_range = range_from_json(j["asymmetry_range"], "asymmetry_range");
    if (j.contains("habit_frequency_range"))
      spec.habit_frequency_range =
          range_from_json(j["habit_frequency_range"], "habit_frequency_range");
    if (j.contains("protrusion_range"))
      spec.protrusion_range =
          range_from_json(j["protrusion_range"], "protrusion_range");
    if (j.contains("text_amplitude"))
      spec.text_amplitude = j["text_amplitude"].get<double>();
    if (j.contains("text_spread_amplitude"))
      spec.text_spread_amplitude = j["text_spread_amplitude"].get<double>();
    if (j.contains("text_protrusion_amplitude"))
      spec.text_protrusion_amplitude = j["text_protrusion_amplitude"].get<double>();
    if (j.contains("text_harmonics"))
      spec.text_harmonics = j["text_harmonics"].get<int>();
    if (j.contains("pose_jitter")) {
      const json& p = j["pose_jitter"];
      static const std::vector<std::string> kPoseKeys = {
          "max_yaw_deg", "max_roll_deg", "max_pitch_deg", "max_translation_mm"};
      for (const auto& [key, value] : p.items()) {
        if (std::find(kPoseKeys.begin(), kPoseKeys.end(), key) == kPoseKeys.end()) {
          throw ConfigError("spec: unknown pose_jitter key '" + key + "'");
        }
      }
      if (p.contains("max_yaw_deg"))
        spec.pose_jitter.max_yaw_deg = p["max_yaw_deg"].get<double>();
      if (p.contains("max_roll_deg"))
        spec.pose_jitter.max_roll_deg = p["max_roll_deg"].get<double>();
      if (p.contains("max_pitch_deg"))
        spec.pose_jitter.max_pitch_deg = p["max_pitch_deg"].get<double>();
      if (p.contains("max_translation_mm"))
        spec.pose_jitter.max_translation_mm = p["max_translation_mm"].get<double>();
    }
    if (j.contains("seed")) spec.seed = j["seed"].get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("spec: ") + e.what());
  }
  validate_spec(spec);
  return spec;
}

}  // namespace lip3d
