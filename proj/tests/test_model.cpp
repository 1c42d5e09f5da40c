#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lip3d/errors.hpp"
#include "lip3d/model.hpp"
#include "lip3d/rng.hpp"
#include "testutil.hpp"

using namespace lip3d;

namespace {

ModelConfig micro_config(AblationMode mode, int num_speakers = 2) {
  ModelConfig cfg;
  cfg.num_speakers = num_speakers;
  cfg.landmark_stream_channels = 2;
  cfg.frame_stream_channels = 2;
  cfg.backbone_stages = {{1, 4}};
  cfg.fc_dims = {8, num_speakers};
  cfg.ablation_mode = mode;
  return cfg;
}

S3dlmSequence random_sequence(Rng& rng, int speaker, int sentence,
                              double scale = 20.0) {
  S3dlmSequence s;
  s.speaker_id = speaker;
  s.sentence_id = sentence;
  s.tensor.resize(kSequenceFrames * kLipLandmarks * 3);
  for (double& v : s.tensor) v = rng.uniform(-scale, scale);
  return s;
}

}  // namespace

TEST_CASE("rfm_apply is the exact identity at theta zero") {
  Rng rng(1);
  auto w = testutil::rand_tensor(rng, {2, 3, 4, 6}, -3, 3, false);
  auto theta = DiffTensor::zeros({6});
  const auto out = rfm_apply(w, theta);
  CHECK(out.values() == w.values());
}

TEST_CASE("rfm_apply doubles the input at theta one") {
  Rng rng(2);
  auto w = testutil::rand_tensor(rng, {1, 3, 2, 5}, -2, 2, false);
  auto theta = DiffTensor::full({5}, 1.0);
  const auto out = rfm_apply(w, theta);
  for (std::size_t i = 0; i < w.numel(); ++i) {
    CHECK(out.values()[i] == doctest::Approx(2.0 * w.values()[i]).epsilon(1e-15));
  }
}

TEST_CASE("rfm gate gradient matches finite differences on a micro batch") {
  Rng rng(3);
  auto w = testutil::rand_tensor(rng, {2, 3, 4, 5}, -1, 1, false);
  auto theta = testutil::rand_tensor(rng, {5}, 0.1, 0.9, true);
  auto mask = testutil::rand_tensor(rng, {2, 3, 4, 5}, -1, 1, false);
  auto build = [&] { return testutil::weighted_sum(rfm_apply(w, theta), mask); };
  CHECK(testutil::max_grad_rel_err({theta}, build) < 1e-4);
}

TEST_CASE("gate commutes with landmark permutations") {
  Rng rng(4);
  const std::size_t L = 7;
  auto w = testutil::rand_tensor(rng, {2, 3, 4, L}, -2, 2, false);
  auto theta = testutil::rand_tensor(rng, {L}, -0.5, 1.5, false);
  // a fixed permutation
  std::vector<std::size_t> perm = {3, 0, 6, 1, 5, 2, 4};

  auto permute_w = [&](const DiffTensor& t) {
    auto out = t.values();
    const std::size_t rows = t.numel() / L;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t l = 0; l < L; ++l)
        out[r * L + l] = t.values()[r * L + perm[l]];
    return DiffTensor::from_values(t.shape(), std::move(out), false);
  };
  auto permute_theta = [&](const DiffTensor& t) {
    std::vector<double> out(L);
    for (std::size_t l = 0; l < L; ++l) out[l] = t.values()[perm[l]];
    return DiffTensor::from_values({L}, std::move(out), false);
  };

  const auto gate_then_permute = permute_w(rfm_apply(w, theta));
  const auto permute_then_gate = rfm_apply(permute_w(w), permute_theta(theta));
  CHECK(gate_then_permute.values() == permute_then_gate.values());  // bit-exact
}

TEST_CASE("init_feedback per mode") {
  PriorVector p;
  p.p.resize(kLipLandmarks);
  for (std::size_t i = 0; i < kLipLandmarks; ++i) {
    p.p[i] = 0.1 + 0.8 * static_cast<double>(i) / 199.0;
  }
  CHECK_FALSE(init_feedback(AblationMode::baseline, nullptr).has_value());
  const auto only = init_feedback(AblationMode::rfm_only, nullptr);
  for (double v : only->theta) CHECK(v == 0.5);
  const auto with_prior = init_feedback(AblationMode::rfm_prior, &p);
  CHECK(with_prior->theta == p.p);
  const auto opposed = init_feedback(AblationMode::rfm_prior_opposed, &p);
  for (std::size_t i = 0; i < kLipLandmarks; ++i) {
    CHECK(opposed->theta[i] == doctest::Approx(1.0 - p.p[i]).epsilon(1e-15));
  }
  PriorVector half;
  half.p.assign(kLipLandmarks, 0.5);
  CHECK(init_feedback(AblationMode::rfm_prior_opposed, &half)->theta ==
        half.p);
  CHECK_THROWS_AS(init_feedback(AblationMode::rfm_prior, nullptr), ValueError);
}

TEST_CASE("forward produces [N, num_speakers] logits") {
  Rng rng(5);
  ThreeLmNet model(micro_config(AblationMode::baseline, 5), rng);
  std::vector<S3dlmSequence> seqs;
  for (int i = 0; i < 3; ++i) seqs.push_back(random_sequence(rng, i, 0));
  std::vector<const S3dlmSequence*> ptrs;
  for (auto& s : seqs) ptrs.push_back(&s);
  const auto logits = model.forward(model.make_batch(ptrs));
  CHECK(logits.shape() == std::vector<std::size_t>{3, 5});
}

TEST_CASE("stream outputs preserve the 28x200 spatial extent") {
  Rng rng(6);
  ThreeLmNet model(micro_config(AblationMode::baseline), rng);
  std::vector<S3dlmSequence> seqs = {random_sequence(rng, 0, 0)};
  std::vector<const S3dlmSequence*> ptrs = {&seqs[0]};
  const auto batch = model.make_batch(ptrs);
  const auto lm = model.landmark_stream(batch);
  CHECK(lm.shape() == std::vector<std::size_t>{1, 2, 28, 200});
  const auto fr = model.frame_stream(batch);
  CHECK(fr.shape() == std::vector<std::size_t>{1, 2, 28, 200});
}

TEST_CASE("zero input and zero bias give a zero landmark stream") {
  Rng rng(7);
  ThreeLmNet model(micro_config(AblationMode::baseline), rng);
  auto zero = DiffTensor::zeros({1, 3, kSequenceFrames, kLipLandmarks});
  const auto lm = model.landmark_stream(zero);
  for (double v : lm.values()) CHECK(v == 0.0);
}

TEST_CASE("hand-loaded temporal difference kernel nulls static interiors") {
  // conv 3x1 with kernel (-1, 0, +1) along frames, zero padding (1,0):
  // a static sequence responds only at the two boundary frames.
  const std::size_t F = 6, L = 4;
  std::vector<double> vals(F * L);
  for (std::size_t t = 0; t < F; ++t)
    for (std::size_t k = 0; k < L; ++k) vals[t * L + k] = 3.0 + 0.5 * k;
  auto x = DiffTensor::from_values({1, 1, F, L}, std::move(vals), false);
  auto ker = DiffTensor::from_values({1, 1, 3, 1}, {-1.0, 0.0, 1.0}, false);
  auto bias = DiffTensor::zeros({1});
  const auto y = conv2d(x, ker, bias, 1, 0);
  REQUIRE(y.shape() == std::vector<std::size_t>{1, 1, F, L});
  for (std::size_t t = 1; t + 1 < F; ++t)
    for (std::size_t k = 0; k < L; ++k) CHECK(y.values()[t * L + k] == 0.0);
  for (std::size_t k = 0; k < L; ++k) {
    CHECK(y.values()[0 * L + k] != 0.0);
    CHECK(y.values()[(F - 1) * L + k] != 0.0);
  }
}

TEST_CASE("theta frozen at zero reproduces the baseline bit for bit") {
  Rng rng_a(8);
  ThreeLmNet gated(micro_config(AblationMode::rfm_only), rng_a);
  gated.set_feedback(FeedbackVector{std::vector<double>(kLipLandmarks, 0.0)});
  Rng rng_b(9);
  ThreeLmNet plain(micro_config(AblationMode::baseline), rng_b);
  plain.copy_weights_from(gated);

  Rng rng(10);
  std::vector<S3dlmSequence> seqs;
  for (int i = 0; i < 2; ++i) seqs.push_back(random_sequence(rng, i, 0));
  std::vector<const S3dlmSequence*> ptrs;
  for (auto& s : seqs) ptrs.push_back(&s);
  const auto a = gated.forward(gated.make_batch(ptrs));
  const auto b = plain.forward(plain.make_batch(ptrs));
  CHECK(a.values() == b.values());
}

TEST_CASE("baseline parameter list has no feedback vector") {
  Rng rng(11);
  ThreeLmNet base(micro_config(AblationMode::baseline), rng);
  ThreeLmNet gated(micro_config(AblationMode::rfm_only), rng);
  CHECK(base.parameters().size() == base.parameters_without_feedback().size());
  CHECK(gated.parameters().size() ==
        gated.parameters_without_feedback().size() + 1);
  CHECK_THROWS_AS(base.feedback(), ValueError);
  CHECK_THROWS_AS(base.set_feedback(FeedbackVector{std::vector<double>(200, 0.5)}),
                  ValueError);
}

TEST_CASE("parameter count matches the closed form for the default config") {
  ModelConfig cfg;  // defaults: 32/32 streams, stages {1,64},{1,128}, fc 1024/256/68
  Rng rng(12);
  ThreeLmNet model(cfg, rng);
  auto conv_count = [](std::size_t k, std::size_t c, std::size_t kh,
                       std::size_t kw) { return k * c * kh * kw + k; };
  std::size_t expect = 0;
  expect += conv_count(32, 3, 5, 5);            // landmark stream
  expect += conv_count(32, 3, 1, 1);            // frame stream 1x1
  expect += conv_count(32, 32, 3, 1);           // frame stream 3x1
  expect += conv_count(64, 64, 3, 3) * 2;       // stage 1 block (64 in, no proj)
  expect += conv_count(128, 64, 3, 3);          // stage 2 block conv1
  expect += conv_count(128, 128, 3, 3);         // stage 2 block conv2
  expect += conv_count(128, 64, 1, 1);          // stage 2 projection
  expect += 128 * 1024 + 1024;                  // fc1
  expect += 1024 * 256 + 256;                   // fc2
  expect += 256 * 68 + 68;                      // fc3
  CHECK(model.parameter_scalar_count() == expect);

  ModelConfig gated_cfg = cfg;
  gated_cfg.ablation_mode = AblationMode::rfm_only;
  ThreeLmNet gated(gated_cfg, rng);
  CHECK(gated.parameter_scalar_count() == expect + kLipLandmarks);
}

TEST_CASE("permuting batch order permutes logits rows identically") {
  Rng rng(13);
  ThreeLmNet model(micro_config(AblationMode::baseline, 4), rng);
  std::vector<S3dlmSequence> seqs;
  for (int i = 0; i < 4; ++i) seqs.push_back(random_sequence(rng, i, 0));
  std::vector<const S3dlmSequence*> fwd = {&seqs[0], &seqs[1], &seqs[2], &seqs[3]};
  std::vector<const S3dlmSequence*> rev = {&seqs[3], &seqs[2], &seqs[1], &seqs[0]};
  const auto a = model.forward(model.make_batch(fwd));
  const auto b = model.forward(model.make_batch(rev));
  const std::size_t c = 4;
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t k = 0; k < c; ++k) {
      CHECK(a.values()[r * c + k] == b.values()[(3 - r) * c + k]);
    }
}

TEST_CASE("full micro model gradients match finite differences") {
  Rng rng(14);
  ThreeLmNet model(micro_config(AblationMode::rfm_only), rng);
  model.set_feedback(FeedbackVector{std::vector<double>(kLipLandmarks, 0.5)});

  // 2 speakers x 2 sequences each
  std::vector<S3dlmSequence> seqs;
  seqs.push_back(random_sequence(rng, 0, 0));
  seqs.push_back(random_sequence(rng, 0, 1));
  seqs.push_back(random_sequence(rng, 1, 0));
  seqs.push_back(random_sequence(rng, 1, 1));
  std::vector<const S3dlmSequence*> ptrs;
  std::vector<int> labels;
  for (auto& s : seqs) {
    ptrs.push_back(&s);
    labels.push_back(s.speaker_id);
  }
  const auto batch = model.make_batch(ptrs);
  auto build = [&] {
    return softmax_cross_entropy(model.forward(batch), labels);
  };
  const double err = testutil::max_grad_rel_err(model.parameters(), build);
  CHECK(err < 1e-4);
}

TEST_CASE("plain feedback update is literal theta minus lr times grad") {
  auto theta = DiffTensor::from_values({3}, {0.5, 0.5, 0.5}, true);
  // loss = sum(theta * c) so grad = c
  auto c = DiffTensor::from_values({3}, {1.0, -2.0, 0.5}, false);
  backward(sum_all(mul(theta, c)));
  update_feedback_sgd(theta, 0.1);
  CHECK(theta.values()[0] == doctest::Approx(0.5 - 0.1 * 1.0).epsilon(1e-15));
  CHECK(theta.values()[1] == doctest::Approx(0.5 + 0.1 * 2.0).epsilon(1e-15));
  CHECK(theta.values()[2] == doctest::Approx(0.5 - 0.1 * 0.5).epsilon(1e-15));
  // zero gradient leaves theta unchanged
  theta.clear_grad();
  const auto before = theta.values();
  update_feedback_sgd(theta, 0.1);
  CHECK(theta.values() == before);
}

TEST_CASE("checkpoint save-load-save is byte identical and value exact") {
  testutil::TempDir tmp("ckpt");
  Rng rng(15);
  ModelConfig cfg = micro_config(AblationMode::rfm_prior, 3);
  ThreeLmNet model(cfg, rng);
  // make theta non-trivial
  FeedbackVector fv;
  fv.theta.resize(kLipLandmarks);
  for (std::size_t i = 0; i < kLipLandmarks; ++i) fv.theta[i] = 0.3 + 0.001 * i;
  model.set_feedback(fv);

  const auto p1 = (tmp.path() / "a.ckpt").string();
  const auto p2 = (tmp.path() / "b.ckpt").string();
  save_checkpoint(model, p1);
  ThreeLmNet loaded = load_checkpoint(p1);
  save_checkpoint(loaded, p2);
  CHECK(testutil::same_bytes(p1, p2));
  CHECK(loaded.config().ablation_mode == AblationMode::rfm_prior);
  CHECK(loaded.feedback_snapshot().theta == model.feedback_snapshot().theta);

  // forward agreement, bit for bit
  Rng drng(16);
  std::vector<S3dlmSequence> seqs = {random_sequence(drng, 0, 0),
                                     random_sequence(drng, 1, 0)};
  std::vector<const S3dlmSequence*> ptrs = {&seqs[0], &seqs[1]};
  const auto a = model.forward(model.make_batch(ptrs));
  const auto b = loaded.forward(loaded.make_batch(ptrs));
  CHECK(a.values() == b.values());
}

TEST_CASE("corrupted checkpoints raise parse errors") {
  testutil::TempDir tmp("ckpt_bad");
  Rng rng(17);
  ThreeLmNet model(micro_config(AblationMode::baseline), rng);
  const auto path = (tmp.path() / "m.ckpt").string();
  save_checkpoint(model, path);
  const std::string original = testutil::slurp(path);

  auto write = [&](const std::string& data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << data;
  };
  write("XXXX" + original.substr(4));
  CHECK_THROWS_AS(load_checkpoint(path), ParseError);
  std::string bad_version = original;
  bad_version[4] = 9;
  write(bad_version);
  CHECK_THROWS_AS(load_checkpoint(path), ParseError);
  write(original.substr(0, 40));
  CHECK_THROWS_AS(load_checkpoint(path), ParseError);
  write(original + "junk");
  CHECK_THROWS_AS(load_checkpoint(path), ParseError);
}

TEST_CASE("model config json is strict and round-trips") {
  ModelConfig cfg = micro_config(AblationMode::rfm_prior_opposed, 7);
  const auto text = model_config_to_json(cfg);
  const auto back = model_config_from_json(text);
  CHECK(back.num_speakers == 7);
  CHECK(back.ablation_mode == AblationMode::rfm_prior_opposed);
  CHECK(back.backbone_stages.size() == 1);
  CHECK_THROWS_AS(model_config_from_json("{\"wat\": 1}"), ConfigError);
  CHECK_THROWS_AS(model_config_from_json("{\"fc_dims\": [4]}"), ValueError);
}

TEST_CASE("forward rejects malformed batches and unknown modes are unreachable") {
  Rng rng(18);
  ThreeLmNet model(micro_config(AblationMode::baseline), rng);
  CHECK_THROWS_AS(model.forward(DiffTensor::zeros({1, 3, 28, 100})),
                  DimensionError);
  CHECK_THROWS_AS(model.forward(DiffTensor::zeros({1, 1, 28, 200})),
                  DimensionError);
}

TEST_CASE("make_batch applies the configured input scale") {
  Rng rng(19);
  ModelConfig cfg = micro_config(AblationMode::baseline);
  cfg.input_scale = 0.5;
  ThreeLmNet model(cfg, rng);
  S3dlmSequence s = random_sequence(rng, 0, 0);
  std::vector<const S3dlmSequence*> ptrs = {&s};
  const auto batch = model.make_batch(ptrs);
  CHECK(batch.values()[0] == doctest::Approx(0.5 * s.at(0, 0, 0)).epsilon(1e-15));
}
