#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <set>

#include "lip3d/data.hpp"
#include "lip3d/errors.hpp"
#include "lip3d/harness.hpp"
#include "lip3d/stats.hpp"
#include "testutil.hpp"

using namespace lip3d;

namespace {

SyntheticSpec small_spec() {
  SyntheticSpec s;
  s.n_speakers = 3;
  s.n_sentences = 5;
  s.frames_per_utterance = 20;
  s.noise_sigma = 0.0;
  s.seed = 17;
  return s;
}

bool same_utterance(const Utterance& a, const Utterance& b) {
  if (a.frames.size() != b.frames.size()) return false;
  for (std::size_t t = 0; t < a.frames.size(); ++t) {
    for (std::size_t k = 0; k < a.frames[t].points.size(); ++k) {
      const Vec3& pa = a.frames[t].points[k];
      const Vec3& pb = b.frames[t].points[k];
      if (pa.x != pb.x || pa.y != pb.y || pa.z != pb.z) return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("generator is bit-deterministic in the seed") {
  const auto spec = small_spec();
  const auto a = generate_synthetic(spec);
  const auto b = generate_synthetic(spec);
  REQUIRE(a.utterances.size() == b.utterances.size());
  for (std::size_t i = 0; i < a.utterances.size(); ++i) {
    CHECK(same_utterance(a.utterances[i], b.utterances[i]));
  }
  auto spec2 = spec;
  spec2.seed = 18;
  const auto c = generate_synthetic(spec2);
  CHECK_FALSE(same_utterance(a.utterances[0], c.utterances[0]));
}

TEST_CASE("utterances are exactly base plus text plus speaker fields") {
  const auto spec = small_spec();
  const auto ds = generate_synthetic(spec);
  REQUIRE(ds.ground_truth.has_value());
  const auto& gt = *ds.ground_truth;
  for (int i = 0; i < spec.n_speakers; ++i) {
    for (int j = 0; j < spec.n_sentences; ++j) {
      const auto mat = utterance_matrix(ds.at(i, j));
      const auto& u = gt.text_field[static_cast<std::size_t>(j)];
      const auto& l = gt.speaker_field[static_cast<std::size_t>(i)];
      for (std::size_t t = 0; t < gt.frames; ++t) {
        for (std::size_t k = 0; k < kLipLandmarks; ++k) {
          for (std::size_t c = 0; c < 3; ++c) {
            const std::size_t idx = (t * kLipLandmarks + k) * 3 + c;
            // same association order as the generator: (base + u) + l
            const double expect = (gt.base[k * 3 + c] + u[idx]) + l[idx];
            CHECK(mat[idx] == expect);
          }
        }
      }
    }
  }
}

TEST_CASE("two sentences with the same trajectory make identical utterances") {
  // One speaker; compare the realized field of a sentence against itself via
  // ground truth equality when trajectories coincide by construction.
  auto spec = small_spec();
  spec.n_speakers = 1;
  spec.n_sentences = 2;
  const auto ds = generate_synthetic(spec);
  // distinct sentences draw distinct trajectories
  CHECK_FALSE(same_utterance(ds.at(0, 0), ds.at(0, 1)));
}

TEST_CASE("noise stream is independent of pose and trajectory streams") {
  auto base_spec = small_spec();
  const auto clean = generate_synthetic(base_spec);

  auto posed_spec = base_spec;
  posed_spec.pose_jitter = {10.0, 10.0, 10.0, 50.0};
  const auto posed = generate_synthetic(posed_spec);

  // Undo the pose via posture correction: corrected clouds must match the
  // clean dataset's corrected clouds to numerical precision.
  const auto pre_clean = preprocess_dataset(clean);
  const auto pre_posed = preprocess_dataset(posed);
  REQUIRE(pre_clean.sequences.size() == pre_posed.sequences.size());
  for (std::size_t s = 0; s < pre_clean.sequences.size(); ++s) {
    for (std::size_t v = 0; v < pre_clean.sequences[s].tensor.size(); ++v) {
      CHECK(pre_clean.sequences[s].tensor[v] ==
            doctest::Approx(pre_posed.sequences[s].tensor[v]).epsilon(1e-9));
    }
  }
}

TEST_CASE("empirical noise mean shrinks like the CLT bound over 5 seeds") {
  for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
    auto spec = small_spec();
    spec.seed = seed;
    spec.noise_sigma = 0.5;
    spec.n_speakers = 4;
    spec.n_sentences = 10;
    spec.frames_per_utterance = 10;
    const auto noisy = generate_synthetic(spec);
    auto clean_spec = spec;
    clean_spec.noise_sigma = 0.0;
    const auto clean = generate_synthetic(clean_spec);
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t u = 0; u < noisy.utterances.size(); ++u) {
      const auto a = utterance_matrix(noisy.utterances[u]);
      const auto b = utterance_matrix(clean.utterances[u]);
      for (std::size_t c = 0; c < a.size(); ++c) {
        sum += a[c] - b[c];
        ++count;
      }
    }
    const double mean_noise = sum / static_cast<double>(count);
    const double bound = 3.0 * spec.noise_sigma / std::sqrt(static_cast<double>(count));
    CHECK(std::abs(mean_noise) < bound);
  }
}

TEST_CASE("outer lip rows fluctuate more than inner rows") {
  SyntheticSpec spec;
  spec.n_speakers = 6;
  spec.n_sentences = 12;
  spec.frames_per_utterance = 40;
  spec.noise_sigma = 0.0;
  spec.seed = 23;
  const auto ds = generate_synthetic(spec);
  const auto pre = preprocess_dataset(ds);
  REQUIRE(pre.skipped_count == 0);

  // per-landmark mean temporal variance via the stats building block
  std::vector<double> delta(kLipLandmarks, 0.0);
  for (const auto& seq : pre.sequences) {
    for (std::size_t k = 0; k < kLipLandmarks; ++k) {
      double m[3] = {0, 0, 0};
      for (std::size_t t = 0; t < kSequenceFrames; ++t)
        for (std::size_t c = 0; c < 3; ++c) m[c] += seq.at(t, k, c);
      for (auto& v : m) v /= kSequenceFrames;
      double acc = 0.0;
      for (std::size_t t = 0; t < kSequenceFrames; ++t)
        for (std::size_t c = 0; c < 3; ++c) {
          const double d = seq.at(t, k, c) - m[c];
          acc += d * d;
        }
      delta[k] += acc / kSequenceFrames;
    }
  }
  std::vector<double> row_mean(kLipRows, 0.0);
  for (std::size_t r = 0; r < kLipRows; ++r) {
    for (std::size_t c = 0; c < kLipCols; ++c) row_mean[r] += delta[r * kLipCols + c];
    row_mean[r] /= kLipCols;
  }
  // outer upper row dominates, inner rows (4,5) are smallest
  for (std::size_t r = 1; r < kLipRows; ++r) CHECK(row_mean[0] > row_mean[r]);
  std::size_t argmin = 0;
  for (std::size_t r = 1; r < kLipRows; ++r)
    if (row_mean[r] < row_mean[argmin]) argmin = r;
  CHECK((argmin == 4 || argmin == 5));
  // outer lower row is the second strongest
  std::size_t second = row_mean[1] > row_mean[9] ? 1 : 9;
  CHECK(second == 9);
}

TEST_CASE("save then load then save is byte-identical") {
  testutil::TempDir tmp("ds_roundtrip");
  const auto ds = generate_synthetic(small_spec());
  const auto dir1 = (tmp.path() / "a").string();
  const auto dir2 = (tmp.path() / "b").string();
  save_dataset(ds, dir1);
  const auto loaded = load_dataset(dir1);
  save_dataset(loaded, dir2);
  CHECK(testutil::same_dir_bytes(dir1, dir2));
  // and values round-trip exactly
  for (std::size_t i = 0; i < ds.utterances.size(); ++i) {
    CHECK(same_utterance(ds.utterances[i], loaded.utterances[i]));
  }
  REQUIRE(loaded.ground_truth.has_value());
  CHECK(loaded.ground_truth->base == ds.ground_truth->base);
  CHECK(loaded.ground_truth->text_field == ds.ground_truth->text_field);
  CHECK(loaded.ground_truth->speaker_field == ds.ground_truth->speaker_field);
}

TEST_CASE("truncated and corrupted files produce parse errors, not crashes") {
  testutil::TempDir tmp("ds_corrupt");
  const auto ds = generate_synthetic(small_spec());
  const auto dir = (tmp.path() / "ds").string();
  save_dataset(ds, dir);

  const std::string victim = dir + "/spk1_sent2.s3d";
  const std::string original = testutil::slurp(victim);

  // truncate at several offsets
  for (std::size_t cut : {std::size_t{2}, std::size_t{7}, std::size_t{100},
                          original.size() - 3}) {
    std::ofstream out(victim, std::ios::binary | std::ios::trunc);
    out.write(original.data(), static_cast<std::streamsize>(cut));
    out.close();
    CHECK_THROWS_AS(load_dataset(dir), ParseError);
  }
  // bad magic
  {
    std::string bad = original;
    bad[0] = 'X';
    std::ofstream out(victim, std::ios::binary | std::ios::trunc);
    out << bad;
  }
  CHECK_THROWS_AS(load_dataset(dir), ParseError);
  // restore, then break the manifest
  {
    std::ofstream out(victim, std::ios::binary | std::ios::trunc);
    out << original;
  }
  CHECK_NOTHROW(load_dataset(dir));
  {
    std::ofstream out(dir + "/manifest.json", std::ios::binary | std::ios::trunc);
    out << "{ not json";
  }
  CHECK_THROWS_AS(load_dataset(dir), ParseError);
}

TEST_CASE("manifest point_count disagreement names the offending file") {
  testutil::TempDir tmp("ds_pc");
  auto ds = generate_synthetic(small_spec());
  const auto dir = (tmp.path() / "ds").string();
  // lie in the manifest
  ds.manifest.point_count = 150;
  ds.manifest.has_ground_truth = false;
  ds.ground_truth.reset();
  save_dataset(ds, dir);
  try {
    load_dataset(dir);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("spk0_sent0.s3d") != std::string::npos);
    CHECK(std::string(e.what()).find("point_count") != std::string::npos);
  }
}

TEST_CASE("csv twin files load when the binary is absent") {
  testutil::TempDir tmp("ds_csv");
  auto spec = small_spec();
  spec.n_speakers = 1;
  spec.n_sentences = 1;
  spec.frames_per_utterance = 3;
  const auto ds = generate_synthetic(spec);
  const auto dir = (tmp.path() / "ds").string();
  save_dataset(ds, dir);

  // rewrite utterance 0 as CSV
  const auto mat = utterance_matrix(ds.at(0, 0));
  std::filesystem::remove(dir + "/spk0_sent0.s3d");
  {
    std::ofstream out(dir + "/spk0_sent0.csv");
    out << "frame,point,x,y,z\n";
    out.precision(17);
    for (int t = 0; t < 3; ++t)
      for (std::size_t k = 0; k < kLipLandmarks; ++k) {
        const std::size_t idx = (t * kLipLandmarks + k) * 3;
        out << t << "," << k << "," << mat[idx] << "," << mat[idx + 1] << ","
            << mat[idx + 2] << "\n";
      }
  }
  const auto loaded = load_dataset(dir);
  const auto back = utterance_matrix(loaded.at(0, 0));
  for (std::size_t i = 0; i < mat.size(); ++i) {
    CHECK(back[i] == doctest::Approx(mat[i]).epsilon(1e-15));
  }

  // malformed csv -> parse error with location
  {
    std::ofstream out(dir + "/spk0_sent0.csv", std::ios::trunc);
    out << "frame,point,x,y,z\n0,0,1.0,2.0\n";
  }
  CHECK_THROWS_AS(load_dataset(dir), ParseError);
}

TEST_CASE("text-independent split takes leading sentences for every speaker") {
  auto spec = small_spec();
  spec.n_sentences = 5;
  const auto ds = generate_synthetic(spec);
  const auto [train, test] = split_text_independent(ds, 3);
  CHECK(train.utterances.size() == 3u * 3u);
  CHECK(test.utterances.size() == 3u * 2u);
  std::set<int> train_ids, test_ids;
  for (const auto& u : train.utterances) train_ids.insert(u.sentence_id);
  for (const auto& u : test.utterances) test_ids.insert(u.sentence_id);
  CHECK(train_ids == std::set<int>{0, 1, 2});
  CHECK(test_ids == std::set<int>{3, 4});
}

TEST_CASE("split sizes follow the 146 -> 120/26 rule") {
  // cheap check on the index rule without generating 146 utterances:
  // a 10-sentence corpus with n_train=120 must be rejected, and the real
  // rule is exercised on a reduced corpus with the same proportions.
  auto spec = small_spec();
  spec.n_sentences = 10;
  const auto ds = generate_synthetic(spec);
  CHECK_THROWS_AS(split_text_independent(ds, 120), ValueError);
  CHECK_THROWS_AS(split_text_independent(ds, 10), ValueError);
  const auto [train, test] = split_text_independent(ds, 8);
  CHECK(train.utterances.size() / 3 == 8);
  CHECK(test.utterances.size() / 3 == 2);
}

TEST_CASE("text-dependent split is seeded, per-speaker, and disjoint") {
  auto spec = small_spec();
  spec.n_speakers = 4;
  spec.n_sentences = 12;
  const auto ds = generate_synthetic(spec);
  const auto [tr1, te1] = split_text_dependent(ds, 99, 9);
  const auto [tr2, te2] = split_text_dependent(ds, 99, 9);
  // same seed -> identical split
  REQUIRE(tr1.utterances.size() == tr2.utterances.size());
  for (std::size_t i = 0; i < tr1.utterances.size(); ++i) {
    CHECK(tr1.utterances[i].speaker_id == tr2.utterances[i].speaker_id);
    CHECK(tr1.utterances[i].sentence_id == tr2.utterances[i].sentence_id);
  }
  // per speaker: 9 train, 3 test, disjoint
  for (int spk = 0; spk < 4; ++spk) {
    std::set<int> train_ids, test_ids;
    for (const auto& u : tr1.utterances)
      if (u.speaker_id == spk) train_ids.insert(u.sentence_id);
    for (const auto& u : te1.utterances)
      if (u.speaker_id == spk) test_ids.insert(u.sentence_id);
    CHECK(train_ids.size() == 9);
    CHECK(test_ids.size() == 3);
    for (int id : test_ids) CHECK(train_ids.count(id) == 0);
  }
  // different speakers may receive different subsets
  std::set<int> s0, s1;
  for (const auto& u : te1.utterances) {
    if (u.speaker_id == 0) s0.insert(u.sentence_id);
    if (u.speaker_id == 1) s1.insert(u.sentence_id);
  }
  const auto [tr3, te3] = split_text_dependent(ds, 100, 9);
  bool any_difference = s0 != s1;
  for (const auto& u : te3.utterances) {
    if (u.speaker_id == 0 && s0.count(u.sentence_id) == 0) any_difference = true;
  }
  CHECK(any_difference);
}

TEST_CASE("synthetic spec json round trip is strict about keys") {
  SyntheticSpec spec = small_spec();
  spec.pose_jitter = {5, 4, 3, 20};
  const auto text = synthetic_spec_to_json(spec);
  const auto back = synthetic_spec_from_json(text);
  CHECK(back.n_speakers == spec.n_speakers);
  CHECK(back.seed == spec.seed);
  CHECK(back.pose_jitter.max_translation_mm == 20.0);
  CHECK_THROWS_AS(synthetic_spec_from_json("{\"bogus\": 1}"), ConfigError);
  CHECK_THROWS_AS(synthetic_spec_from_json("{\"n_speakers\": 0}"), ValueError);
  CHECK_THROWS_AS(
      synthetic_spec_from_json("{\"pose_jitter\": {\"max_tilt\": 1}}"),
      ConfigError);
  CHECK_THROWS_AS(synthetic_spec_from_json("not json"), ConfigError);
}

TEST_CASE("generator rejects invalid ranges") {
  auto spec = small_spec();
  spec.width_scale_range = {1.5, 0.5};
  CHECK_THROWS_AS(generate_synthetic(spec), ValueError);
  spec = small_spec();
  spec.noise_sigma = -1.0;
  CHECK_THROWS_AS(generate_synthetic(spec), ValueError);
}
