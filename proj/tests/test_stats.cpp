#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lip3d/data.hpp"
#include "lip3d/errors.hpp"
#include "lip3d/harness.hpp"
#include "lip3d/mathutil.hpp"
#include "lip3d/stats.hpp"
#include "testutil.hpp"

using namespace lip3d;

namespace {

S3dlmSequence flat_sequence(double v) {
  S3dlmSequence s;
  s.tensor.assign(kSequenceFrames * kLipLandmarks * 3, v);
  return s;
}

// Brute-force oracle with naive loops, independent of the implementation.
double naive_population_std(const std::vector<double>& xs) {
  double m = 0;
  for (double x : xs) m += x;
  m /= static_cast<double>(xs.size());
  double acc = 0;
  for (double x : xs) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(xs.size()));
}

}  // namespace

TEST_CASE("a static sequence has zero motion variance") {
  CHECK(utterance_motion_variance(flat_sequence(3.25)) == 0.0);
}

TEST_CASE("one oscillating landmark gives the hand value over 200") {
  auto s = flat_sequence(0.0);
  for (std::size_t t = 0; t < kSequenceFrames; ++t)
    s.at(t, 7, 0) = (t % 2 == 0) ? 1.0 : -1.0;
  // landmark 7 variance is exactly 1; averaged over 200 landmarks
  CHECK(utterance_motion_variance(s) == doctest::Approx(1.0 / 200.0).epsilon(1e-12));
}

TEST_CASE("motion variance is pose invariant through the pipeline") {
  SyntheticSpec spec;
  spec.n_speakers = 2;
  spec.n_sentences = 2;
  spec.frames_per_utterance = 25;
  spec.noise_sigma = 0.0;
  spec.seed = 5;
  const auto clean = preprocess_dataset(generate_synthetic(spec));
  auto spec2 = spec;
  spec2.pose_jitter = {14, 9, 9, 120};
  const auto posed = preprocess_dataset(generate_synthetic(spec2));
  for (std::size_t i = 0; i < clean.sequences.size(); ++i) {
    CHECK(utterance_motion_variance(clean.sequences[i]) ==
          doctest::Approx(utterance_motion_variance(posed.sequences[i]))
              .epsilon(1e-9));
  }
}

TEST_CASE("identical variances make all group deviations zero") {
  MotionVarianceTable t;
  t.n_speakers = 3;
  t.n_sentences = 40;
  t.v.assign(3 * 40, 0.8);
  const auto text = text_group_analysis(t, 20, 40);
  CHECK(text.group_std.size() == 2);
  for (double s : text.group_std) CHECK(s == 0.0);
  for (double d : text.deviations) CHECK(d == 0.0);
  CHECK(text.std_of_deviations == 0.0);
}

TEST_CASE("toy table agrees with the brute-force oracle within 1e-12") {
  Rng rng(77);
  MotionVarianceTable t;
  t.n_speakers = 2;
  t.n_sentences = 40;
  t.v.resize(2 * 40);
  for (double& v : t.v) v = rng.uniform(0.0, 2.0);

  const auto text = text_group_analysis(t, 20, 40);
  REQUIRE(text.group_std.size() == 2);
  for (std::size_t g = 0; g < 2; ++g) {
    std::vector<double> sample;
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = g * 20; j < (g + 1) * 20; ++j)
        sample.push_back(t.at(i, j));
    CHECK(text.group_std[g] ==
          doctest::Approx(naive_population_std(sample)).epsilon(1e-12));
  }
  const double m = (text.group_std[0] + text.group_std[1]) / 2.0;
  CHECK(text.deviations[0] == doctest::Approx(text.group_std[0] - m).epsilon(1e-12));
  CHECK(text.std_of_deviations ==
        doctest::Approx(naive_population_std(text.group_std)).epsilon(1e-12));

  const auto spk = speaker_group_analysis(t, 1);
  REQUIRE(spk.group_std.size() == 2);
  for (std::size_t g = 0; g < 2; ++g) {
    std::vector<double> sample;
    for (std::size_t j = 0; j < 40; ++j) sample.push_back(t.at(g, j));
    CHECK(spk.group_std[g] ==
          doctest::Approx(naive_population_std(sample)).epsilon(1e-12));
  }
}

TEST_CASE("deviations sum to zero and the std identity holds exactly") {
  Rng rng(78);
  MotionVarianceTable t;
  t.n_speakers = 23;
  t.n_sentences = 60;
  t.v.resize(t.n_speakers * t.n_sentences);
  for (double& v : t.v) v = rng.uniform(0.1, 3.0);
  const auto rep = independence_report(t, 20, 60, 10);
  CHECK(std::abs(compensated_sum(rep.text.deviations)) < 1e-12);
  CHECK(std::abs(compensated_sum(rep.speaker.deviations)) < 1e-12);
  // std_of_deviations is population std of the group stds by the same code path
  CHECK(rep.text.std_of_deviations == population_std(rep.text.group_std));
  CHECK(rep.speaker.std_of_deviations == population_std(rep.speaker.group_std));
  // last speaker group holds the remainder (23 = 10+10+3)
  CHECK(rep.speaker.group_std.size() == 3);
}

TEST_CASE("a single speaker group gives a zero deviation") {
  MotionVarianceTable t;
  t.n_speakers = 4;
  t.n_sentences = 5;
  t.v.assign(20, 0.0);
  Rng rng(79);
  for (double& v : t.v) v = rng.uniform(0.0, 1.0);
  const auto spk = speaker_group_analysis(t, 10);
  REQUIRE(spk.group_std.size() == 1);
  CHECK(spk.deviations[0] == 0.0);
  CHECK(spk.std_of_deviations == 0.0);
}

TEST_CASE("group analyses reject undersized tables") {
  MotionVarianceTable t;
  t.n_speakers = 2;
  t.n_sentences = 30;
  t.v.assign(60, 1.0);
  CHECK_THROWS_AS(text_group_analysis(t, 20, 140), ValueError);
  CHECK_THROWS_AS(text_group_analysis(t, 20, 30), ValueError);  // not divisible
}

TEST_CASE("variance table construction validates the grid") {
  std::vector<S3dlmSequence> seqs;
  auto s = flat_sequence(1.0);
  s.speaker_id = 0;
  s.sentence_id = 0;
  seqs.push_back(s);
  CHECK_THROWS_AS(build_variance_table(seqs, 1, 2), ValueError);  // missing cell
  auto dup = s;
  seqs.push_back(dup);
  CHECK_THROWS_AS(build_variance_table(seqs, 1, 1), ValueError);  // duplicate
  s.sentence_id = 5;
  CHECK_THROWS_AS(build_variance_table({s}, 1, 2), ValueError);  // out of grid
}

TEST_CASE("noiseless decomposition error is at the rounding floor") {
  SyntheticSpec spec;
  spec.n_speakers = 4;
  spec.n_sentences = 8;
  spec.frames_per_utterance = 12;
  spec.noise_sigma = 0.0;
  spec.seed = 55;
  const auto ds = generate_synthetic(spec);
  CHECK(verify_decomposition(ds) < 1e-10);
}

TEST_CASE("identical speakers give zero speaker variance") {
  // Force identical speaker fields by collapsing every per-speaker range.
  SyntheticSpec spec;
  spec.n_speakers = 3;
  spec.n_sentences = 4;
  spec.frames_per_utterance = 10;
  spec.noise_sigma = 0.0;
  spec.speaker_amplitude_range = {4.0, 4.0};
  spec.width_scale_range = {1.0, 1.0};
  spec.asymmetry_range = {0.0, 0.0};
  spec.habit_frequency_range = {1.0, 1.0};
  spec.protrusion_range = {0.5, 0.5};
  spec.seed = 3;
  auto ds = generate_synthetic(spec);
  // habit phase still differs per speaker; overwrite the ground truth and the
  // utterances with speaker 0's field to realize l_i == l exactly.
  auto& gt = *ds.ground_truth;
  for (int i = 1; i < spec.n_speakers; ++i) {
    gt.speaker_field[static_cast<std::size_t>(i)] = gt.speaker_field[0];
    for (int j = 0; j < spec.n_sentences; ++j) {
      auto& utt = ds.utterances[static_cast<std::size_t>(i) *
                                    static_cast<std::size_t>(spec.n_sentences) +
                                static_cast<std::size_t>(j)];
      const auto& u = gt.text_field[static_cast<std::size_t>(j)];
      for (std::size_t t = 0; t < gt.frames; ++t)
        for (std::size_t k = 0; k < kLipLandmarks; ++k)
          for (std::size_t c = 0; c < 3; ++c) {
            const std::size_t idx = (t * kLipLandmarks + k) * 3 + c;
            const double v = (gt.base[k * 3 + c] + u[idx]) + gt.speaker_field[0][idx];
            auto& p = utt.frames[t].points[k];
            if (c == 0) p.x = v;
            if (c == 1) p.y = v;
            if (c == 2) p.z = v;
          }
    }
  }
  // f = (mean_i - grand)^2 must vanish (to fp roundoff) for every component
  CHECK(verify_decomposition(ds) < 1e-26);
}

TEST_CASE("decomposition error shrinks as the number of texts grows") {
  double prev = 1e300;
  for (int n : {10, 100, 1000}) {
    SyntheticSpec spec;
    spec.n_speakers = 2;
    spec.n_sentences = n;
    spec.frames_per_utterance = 3;
    spec.noise_sigma = 0.5;
    spec.seed = 101;
    const auto ds = generate_synthetic(spec);
    const double err = verify_decomposition(ds);
    CHECK(err < prev);
    prev = err;
  }
}

TEST_CASE("decomposition requires ground truth") {
  SyntheticSpec spec;
  spec.n_speakers = 2;
  spec.n_sentences = 2;
  spec.frames_per_utterance = 4;
  auto ds = generate_synthetic(spec);
  ds.ground_truth.reset();
  CHECK_THROWS_AS(verify_decomposition(ds), ValueError);
}

TEST_CASE("report renderings carry both blocks and the ratio") {
  Rng rng(80);
  MotionVarianceTable t;
  t.n_speakers = 12;
  t.n_sentences = 40;
  t.v.resize(t.n_speakers * t.n_sentences);
  for (double& v : t.v) v = rng.uniform(0.2, 1.5);
  const auto rep = independence_report(t, 10, 40, 3);
  const auto csv = independence_report_csv(rep);
  CHECK(csv.find("block,group,std,deviation") == 0);
  CHECK(csv.find("text,1-10,") != std::string::npos);
  CHECK(csv.find("speaker,1-3,") != std::string::npos);
  CHECK(csv.find("summary,ratio,") != std::string::npos);
  const auto txt = independence_report_text(rep);
  CHECK(txt.find("D_t") != std::string::npos);
  CHECK(txt.find("D_s") != std::string::npos);
  CHECK(txt.find("ratio") != std::string::npos);
}

TEST_CASE("default corpus separates speakers from texts by at least 5x") {
  int wins = 0;
  for (std::uint64_t seed : {11u, 12u, 13u, 14u, 15u}) {
    SyntheticSpec spec;  // defaults: 12 speakers, 40 sentences
    spec.seed = seed;
    const auto ds = generate_synthetic(spec);
    const auto pre = preprocess_dataset(ds);
    REQUIRE(pre.skipped_count == 0);
    const auto table = build_variance_table(
        pre.sequences, static_cast<std::size_t>(ds.manifest.n_speakers),
        static_cast<std::size_t>(ds.manifest.n_sentences));
    const auto rep = independence_report(table, 10, 40, 3);
    if (rep.ratio >= 5.0) ++wins;
  }
  CHECK(wins >= 4);
}
