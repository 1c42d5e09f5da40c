#pragma once

// The two-stream lip-motion recognizer. A landmark stream convolves the
// (optionally feedback-gated) input with 5x5 kernels; a frame stream extracts
// per-point position features (1x1) then 3-adjacent-frame temporal features
// (3x1). The streams merge along channels, pass through a small residual
// backbone, global average pooling and a fully connected head. The regional
// feedback gate scales the input per landmark by (1+theta); theta is a
// trainable length-200 vector initialized from the fluctuation prior.

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "lip3d/prior.hpp"
#include "lip3d/rng.hpp"
#include "lip3d/sequence.hpp"
#include "lip3d/tensor.hpp"

namespace lip3d {

enum class AblationMode { baseline, rfm_only, rfm_prior, rfm_prior_opposed };

std::string to_string(AblationMode mode);
AblationMode ablation_mode_from_string(const std::string& s);

struct FeedbackVector {
  std::vector<double> theta;  // length 200
};

// theta0 per mode: prior modes copy p (or 1-p); rfm_only uses constant 0.5;
// baseline has no feedback vector. Prior modes require a prior.
std::optional<FeedbackVector> init_feedback(AblationMode mode,
                                            const PriorVector* prior);

struct StageSpec {
  int blocks = 1;
  int width = 64;
};

struct ModelConfig {
  int num_speakers = 68;
  int landmark_stream_channels = 32;
  int frame_stream_channels = 32;
  std::vector<StageSpec> backbone_stages = {{1, 64}, {1, 128}};
  std::vector<int> fc_dims = {1024, 256, 68};  // last equals num_speakers
  AblationMode ablation_mode = AblationMode::baseline;
  // Fixed millimeter-to-unit input scaling applied when batches are built.
  double input_scale = 0.02;
};

void validate_model_config(const ModelConfig& cfg);
std::string model_config_to_json(const ModelConfig& cfg);  // canonical form
ModelConfig model_config_from_json(const std::string& text);  // strict keys

// out = w (.) theta + w, i.e. per-landmark scaling by (1+theta).
// Exact identity pass-through at theta = 0.
DiffTensor rfm_apply(const DiffTensor& w, const DiffTensor& theta);

class ThreeLmNet {
 public:
  ThreeLmNet(const ModelConfig& cfg, Rng& rng);

  const ModelConfig& config() const { return cfg_; }
  bool rfm_enabled() const { return cfg_.ablation_mode != AblationMode::baseline; }

  // [N,3,28,200] input leaf; channel = coordinate, H = frames, W = landmarks.
  DiffTensor make_batch(const std::vector<const S3dlmSequence*>& seqs) const;

  DiffTensor forward(const DiffTensor& batch) const;

  DiffTensor landmark_stream(const DiffTensor& gated) const;
  DiffTensor frame_stream(const DiffTensor& w) const;

  // All trainable tensors in declaration order; feedback vector last when
  // enabled. In baseline mode no feedback parameter exists.
  std::vector<DiffTensor> parameters() const;
  std::vector<DiffTensor> parameters_without_feedback() const;

  DiffTensor& feedback();  // throws in baseline mode
  const DiffTensor& feedback() const;
  void set_feedback(const FeedbackVector& fv);
  FeedbackVector feedback_snapshot() const;

  std::size_t parameter_scalar_count() const;

  // Copies parameter values from a same-architecture instance; ablation mode
  // may differ (feedback copied only when both sides have it).
  void copy_weights_from(const ThreeLmNet& other);

 private:
  struct Fc {
    DiffTensor w, b;
  };
  struct Block {
    DiffTensor c1w, c1b, c2w, c2b;
    DiffTensor pw, pb;  // 1x1 projection when in_ch != width
    bool has_proj = false;
  };

  DiffTensor block_forward(const Block& blk, const DiffTensor& x) const;

  ModelConfig cfg_;
  DiffTensor lm_w_, lm_b_;
  DiffTensor fr1_w_, fr1_b_;
  DiffTensor fr2_w_, fr2_b_;
  std::vector<Block> blocks_;  // flattened stages
  std::vector<Fc> fc_;
  DiffTensor theta_;  // defined iff rfm_enabled()
};

// Literal plain-gradient feedback update: theta -= lr * grad(theta).
void update_feedback_sgd(DiffTensor& theta, double lr);

// Checkpoint: magic 3LMN, version byte 1, u32 canonical-config length, the
// config JSON, then every parameter as little-endian f64 in declaration
// order. Save/load round-trips are byte-exact.
void save_checkpoint(const ThreeLmNet& model, const std::string& path);
ThreeLmNet load_checkpoint(const std::string& path);

}  // namespace lip3d
