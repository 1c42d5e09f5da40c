#include "lip3d/model.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "binio.hpp"
#include "lip3d/errors.hpp"

using json = nlohmann::json;

namespace lip3d {

std::string to_string(AblationMode mode) {
  switch (mode) {
    case AblationMode::baseline: return "baseline";
    case AblationMode::rfm_only: return "rfm_only";
    case AblationMode::rfm_prior: return "rfm_prior";
    case AblationMode::rfm_prior_opposed: return "rfm_prior_opposed";
  }
  throw ValueError("unknown ablation mode");
}

AblationMode ablation_mode_from_string(const std::string& s) {
  if (s == "baseline") return AblationMode::baseline;
  if (s == "rfm_only") return AblationMode::rfm_only;
  if (s == "rfm_prior") return AblationMode::rfm_prior;
  if (s == "rfm_prior_opposed") return AblationMode::rfm_prior_opposed;
  throw ValueError("unknown ablation mode '" + s + "'");
}

std::optional<FeedbackVector> init_feedback(AblationMode mode,
                                            const PriorVector* prior) {
  switch (mode) {
    case AblationMode::baseline:
      return std::nullopt;
    case AblationMode::rfm_only:
      return FeedbackVector{std::vector<double>(kLipLandmarks, 0.5)};
    case AblationMode::rfm_prior: {
      if (!prior) throw ValueError("init_feedback: rfm_prior requires a prior");
      return FeedbackVector{prior->p};
    }
    case AblationMode::rfm_prior_opposed: {
      if (!prior) {
        throw ValueError("init_feedback: rfm_prior_opposed requires a prior");
      }
      return FeedbackVector{opposite_prior(*prior).p};
    }
  }
  throw ValueError("unknown ablation mode");
}

void validate_model_config(const ModelConfig& cfg) {
  if (cfg.num_speakers < 1) {
    throw ValueError("model config: num_speakers must be >= 1");
  }
  if (cfg.landmark_stream_channels < 1 || cfg.frame_stream_channels < 1) {
    throw ValueError("model config: stream channel counts must be positive");
  }
  for (const auto& st : cfg.backbone_stages) {
    if (st.blocks < 1 || st.width < 1) {
      throw ValueError("model config: stage blocks and widths must be positive");
    }
  }
  if (cfg.fc_dims.empty()) throw ValueError("model config: fc_dims empty");
  for (int d : cfg.fc_dims) {
    if (d < 1) throw ValueError("model config: fc dims must be positive");
  }
  if (cfg.fc_dims.back() != cfg.num_speakers) {
    throw ValueError("model config: fc chain must end at num_speakers (" +
                     std::to_string(cfg.fc_dims.back()) + " vs " +
                     std::to_string(cfg.num_speakers) + ")");
  }
  if (!(cfg.input_scale > 0.0) || !std::isfinite(cfg.input_scale)) {
    throw ValueError("model config: input_scale must be positive");
  }
}

std::string model_config_to_json(const ModelConfig& cfg) {
  json j;
  j["num_speakers"] = cfg.num_speakers;
  j["landmark_stream_channels"] = cfg.landmark_stream_channels;
  j["frame_stream_channels"] = cfg.frame_stream_channels;
  json stages = json::array();
  for (const auto& st : cfg.backbone_stages) {
    stages.push_back(json::array({st.blocks, st.width}));
  }
  j["backbone_stages"] = stages;
  j["fc_dims"] = cfg.fc_dims;
  j["ablation_mode"] = to_string(cfg.ablation_mode);
  j["input_scale"] = cfg.input_scale;
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("model config: expected a JSON object");
  static const std::vector<std::string> kKeys = {
      "num_speakers",  "landmark_stream_channels", "frame_stream_channels",
      "backbone_stages", "fc_dims", "ablation_mode", "input_scale"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(kKeys.begin(), kKeys.end(), key) == kKeys.end()) {
      throw ConfigError("model config: unknown key '" + key + "'");
    }
  }
  ModelConfig cfg;
  try {
    if (j.contains("num_speakers")) cfg.num_speakers = j["num_speakers"].get<int>();
    if (j.contains("landmark_stream_channels"))
      cfg.landmark_stream_channels = j["landmark_stream_channels"].get<int>();
    if (j.contains("frame_stream_channels"))
      cfg.frame_stream_channels = j["frame_stream_channels"].get<int>();
    if (j.contains("backbone_stages")) {
      cfg.backbone_stages.clear();
      for (const auto& st : j["backbone_stages"]) {
        if (!st.is_array() || st.size() != 2) {
          throw ConfigError("model config: backbone stage must be [blocks,width]");
        }
        cfg.backbone_stages.push_back({st[0].get<int>(), st[1].get<int>()});
      }
    }
    if (j.contains("fc_dims")) cfg.fc_dims = j["fc_dims"].get<std::vector<int>>();
    if (j.contains("ablation_mode"))
      cfg.ablation_mode = ablation_mode_from_string(j["ablation_mode"].get<std::string>());
    if (j.contains("input_scale")) cfg.input_scale = j["input_scale"].get<double>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  validate_model_config(cfg);
  return cfg;
}

DiffTensor rfm_apply(const DiffTensor& w, const DiffTensor& theta) {
  return add(hadamard_landmark(w, theta), w);
}

namespace {

DiffTensor kaiming_conv(Rng& rng, std::size_t out_ch, std::size_t in_ch,
                        std::size_t kh, std::size_t kw) {
  const double bound =
      std::sqrt(6.0 / static_cast<double>(in_ch * kh * kw));
  std::vector<double> v(out_ch * in_ch * kh * kw);
  for (double& x : v) x = rng.uniform(-bound, bound);
  return DiffTensor::from_values({out_ch, in_ch, kh, kw}, std::move(v), true);
}

DiffTensor kaiming_linear(Rng& rng, std::size_t in_dim, std::size_t out_dim) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in_dim));
  std::vector<double> v(in_dim * out_dim);
  for (double& x : v) x = rng.uniform(-bound, bound);
  return DiffTensor::from_values({in_dim, out_dim}, std::move(v), true);
}

DiffTensor zero_bias(std::size_t n) {
  return DiffTensor::zeros({n}, true);
}

}  // namespace

ThreeLmNet::ThreeLmNet(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
  validate_model_config(cfg_);
  const auto cl = static_cast<std::size_t>(cfg_.landmark_stream_channels);
  const auto cf = static_cast<std::size_t>(cfg_.frame_stream_channels);

  lm_w_ = kaiming_conv(rng, cl, 3, 5, 5);
  lm_b_ = zero_bias(cl);
  fr1_w_ = kaiming_conv(rng, cf, 3, 1, 1);
  fr1_b_ = zero_bias(cf);
  fr2_w_ = kaiming_conv(rng, cf, cf, 3, 1);
  fr2_b_ = zero_bias(cf);

  std::size_t in_ch = cl + cf;
  for (const auto& st : cfg_.backbone_stages) {
    const auto width = static_cast<std::size_t>(st.width);
    for (int b = 0; b < st.blocks; ++b) {
      Block blk;
      blk.c1w = kaiming_conv(rng, width, in_ch, 3, 3);
      blk.c1b = zero_bias(width);
      blk.c2w = kaiming_conv(rng, width, width, 3, 3);
      blk.c2b = zero_bias(width);
      blk.has_proj = in_ch != width;
      if (blk.has_proj) {
        blk.pw = kaiming_conv(rng, width, in_ch, 1, 1);
        blk.pb = zero_bias(width);
      }
      blocks_.push_back(std::move(blk));
      in_ch = width;
    }
  }

  std::size_t dim = in_ch;
  for (int out : cfg_.fc_dims) {
    Fc fc;
    fc.w = kaiming_linear(rng, dim, static_cast<std::size_t>(out));
    fc.b = zero_bias(static_cast<std::size_t>(out));
    fc_.push_back(std::move(fc));
    dim = static_cast<std::size_t>(out);
  }

  if (rfm_enabled()) {
    theta_ = DiffTensor::full({kLipLandmarks}, 0.5, true);
  }
}

DiffTensor ThreeLmNet::make_batch(
    const std::vector<const S3dlmSequence*>& seqs) const {
  if (seqs.empty()) throw ValueError("make_batch: empty batch");
  const std::size_t n = seqs.size();
  std::vector<double> v(n * 3 * kSequenceFrames * kLipLandmarks);
  for (std::size_t b = 0; b < n; ++b) {
    validate_sequence(*seqs[b]);
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t t = 0; t < kSequenceFrames; ++t) {
        for (std::size_t k = 0; k < kLipLandmarks; ++k) {
          v[((b * 3 + c) * kSequenceFrames + t) * kLipLandmarks + k] =
              seqs[b]->at(t, k, c) * cfg_.input_scale;
        }
      }
    }
  }
  return DiffTensor::from_values({n, 3, kSequenceFrames, kLipLandmarks},
                                 std::move(v), false);
}

DiffTensor ThreeLmNet::landmark_stream(const DiffTensor& gated) const {
  return relu(conv2d(gated, lm_w_, lm_b_, 2, 2));
}

DiffTensor ThreeLmNet::frame_stream(const DiffTensor& w) const {
  DiffTensor h = relu(conv2d(w, fr1_w_, fr1_b_, 0, 0));
  return relu(conv2d(h, fr2_w_, fr2_b_, 1, 0));
}

DiffTensor ThreeLmNet::block_forward(const Block& blk,
                                     const DiffTensor& x) const {
  DiffTensor y = relu(conv2d(x, blk.c1w, blk.c1b, 1, 1));
  y = conv2d(y, blk.c2w, blk.c2b, 1, 1);
  const DiffTensor skip =
      blk.has_proj ? conv2d(x, blk.pw, blk.pb, 0, 0) : x;
  return relu(add(y, skip));
}

DiffTensor ThreeLmNet::forward(const DiffTensor& batch) const {
  if (batch.shape().size() != 4 || batch.shape()[1] != 3 ||
      batch.shape()[2] != kSequenceFrames ||
      batch.shape()[3] != kLipLandmarks) {
    throw DimensionError("forward: batch must be [N,3,28,200]");
  }
  const DiffTensor gated = rfm_enabled() ? rfm_apply(batch, theta_) : batch;
  const DiffTensor lm = landmark_stream(gated);
  const DiffTensor fr = frame_stream(batch);
  DiffTensor x = concat_channels(lm, fr);

  std::size_t bi = 0;
  for (std::size_t s = 0; s < cfg_.backbone_stages.size(); ++s) {
    for (int b = 0; b < cfg_.backbone_stages[s].blocks; ++b) {
      x = block_forward(blocks_[bi++], x);
    }
    if (s + 1 < cfg_.backbone_stages.size()) x = avg_pool2(x);
  }

  DiffTensor h = global_avg_pool(x);
  for (std::size_t i = 0; i + 1 < fc_.size(); ++i) {
    h = relu(linear(h, fc_[i].w, fc_[i].b));
  }
  return linear(h, fc_.back().w, fc_.back().b);
}

std::vector<DiffTensor> ThreeLmNet::parameters_without_feedback() const {
  std::vector<DiffTensor> out = {lm_w_, lm_b_, fr1_w_, fr1_b_, fr2_w_, fr2_b_};
  for (const auto& blk : blocks_) {
    out.push_back(blk.c1w);
    out.push_back(blk.c1b);
    out.push_back(blk.c2w);
    out.push_back(blk.c2b);
    if (blk.has_proj) {
      out.push_back(blk.pw);
      out.push_back(blk.pb);
    }
  }
  for (const auto& fc : fc_) {
    out.push_back(fc.w);
    out.push_back(fc.b);
  }
  return out;
}

std::vector<DiffTensor> ThreeLmNet::parameters() const {
  auto out = parameters_without_feedback();
  if (rfm_enabled()) out.push_back(theta_);
  return out;
}

DiffTensor& ThreeLmNet::feedback() {
  if (!rfm_enabled()) throw ValueError("feedback(): baseline mode has no feedback vector");
  return theta_;
}

const DiffTensor& ThreeLmNet::feedback() const {
  if (!rfm_enabled()) throw ValueError("feedback(): baseline mode has no feedback vector");
  return theta_;
}

void ThreeLmNet::set_feedback(const FeedbackVector& fv) {
  if (!rfm_enabled()) throw ValueError("set_feedback(): baseline mode");
  if (fv.theta.size() != kLipLandmarks) {
    throw DimensionError("set_feedback: expected " +
                         std::to_string(kLipLandmarks) + " values, got " +
                         std::to_string(fv.theta.size()));
  }
  theta_.values() = fv.theta;
}

FeedbackVector ThreeLmNet::feedback_snapshot() const {
  if (!rfm_enabled()) throw ValueError("feedback_snapshot(): baseline mode");
  return FeedbackVector{theta_.values()};
}

std::size_t ThreeLmNet::parameter_scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.numel();
  return n;
}

void ThreeLmNet::copy_weights_from(const ThreeLmNet& other) {
  auto dst = parameters_without_feedback();
  auto src = other.parameters_without_feedback();
  if (dst.size() != src.size()) {
    throw DimensionError("copy_weights_from: parameter lists differ");
  }
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (dst[i].shape() != src[i].shape()) {
      throw DimensionError("copy_weights_from: parameter " +
                           std::to_string(i) + " shape mismatch");
    }
    dst[i].values() = src[i].values();
  }
  if (rfm_enabled() && other.rfm_enabled()) {
    theta_.values() = other.theta_.values();
  }
}

void update_feedback_sgd(DiffTensor& theta, double lr) {
  if (!theta.defined()) throw ValueError("update_feedback_sgd: no feedback vector");
  if (!theta.has_grad()) return;  // zero gradient: unchanged
  auto& v = theta.values();
  const auto& g = theta.grad();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * g[i];
}

void save_checkpoint(const ThreeLmNet& model, const std::string& path) {
  std::string out = "3LMN";
  out.push_back(static_cast<char>(1));  // version
  const std::string cfg = model_config_to_json(model.config());
  binio::put_u32(out, static_cast<std::uint32_t>(cfg.size()));
  out += cfg;
  for (const auto& p : model.parameters()) {
    for (double v : p.values()) binio::put_f64(out, v);
  }
  binio::write_file(path, out);
}

ThreeLmNet load_checkpoint(const std::string& path) {
  binio::Reader r(binio::read_file(path), path);
  if (r.bytes(4) != "3LMN") throw ParseError(path + ": bad magic, expected 3LMN");
  const std::string version = r.bytes(1);
  if (version[0] != 1) {
    throw ParseError(path + ": unsupported checkpoint version " +
                     std::to_string(static_cast<int>(version[0])));
  }
  const std::uint32_t len = r.u32();
  const std::string cfg_json = r.bytes(len);
  const ModelConfig cfg = model_config_from_json(cfg_json);
  Rng scratch(0);  // values are overwritten below
  ThreeLmNet model(cfg, scratch);
  for (auto& p : model.parameters()) {
    for (double& v : p.values()) v = r.f64();
  }
  r.expect_end();
  return model;
}

}  // namespace lip3d
