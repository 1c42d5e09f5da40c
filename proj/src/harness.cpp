#include "lip3d/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>

#include <json.hpp>

#include "lip3d/errors.hpp"
#include "lip3d/mathutil.hpp"
#include "lip3d/prior.hpp"
#include "lip3d/rng.hpp"

using json = nlohmann::json;

namespace lip3d {

std::string to_string(SplitKind kind) {
  return kind == SplitKind::text_independent ? "text_independent"
                                             : "text_dependent";
}

SplitKind split_kind_from_string(const std::string& s) {
  if (s == "text_independent") return SplitKind::text_independent;
  if (s == "text_dependent") return SplitKind::text_dependent;
  throw ValueError("unknown split kind '" + s + "'");
}

void validate_train_config(const TrainConfig& cfg) {
  if (!(cfg.lr > 0.0)) throw ValueError("train config: lr must be positive");
  if (cfg.batch_size < 1) throw ValueError("train config: batch_size must be positive");
  if (cfg.max_steps < 1) throw ValueError("train config: max_steps must be positive");
  if (cfg.decay_every < 1) throw ValueError("train config: decay_every must be positive");
  if (!(cfg.decay_factor > 0.0) || cfg.decay_factor > 1.0) {
    throw ValueError("train config: decay_factor must be in (0,1]");
  }
  if (cfg.n_train_sentences < 1) {
    throw ValueError("train config: n_train_sentences must be positive");
  }
  if (!(cfg.rfm_sgd_lr > 0.0)) {
    throw ValueError("train config: rfm_sgd_lr must be positive");
  }
}

std::string train_config_to_json(const TrainConfig& cfg) {
  json j;
  j["lr"] = cfg.lr;
  j["batch_size"] = cfg.batch_size;
  j["max_steps"] = cfg.max_steps;
  j["decay_every"] = cfg.decay_every;
  j["decay_factor"] = cfg.decay_factor;
  j["seed"] = cfg.seed;
  j["ablation_mode"] = to_string(cfg.ablation_mode);
  j["split_kind"] = to_string(cfg.split_kind);
  j["n_train_sentences"] = cfg.n_train_sentences;
  j["rfm_plain_sgd"] = cfg.rfm_plain_sgd;
  j["rfm_sgd_lr"] = cfg.rfm_sgd_lr;
  j["project_2d"] = cfg.project_2d;
  return j.dump();
}

TrainConfig train_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("train config: expected a JSON object");
  static const std::vector<std::string> kKeys = {
      "lr", "batch_size", "max_steps", "decay_every", "decay_factor",
      "seed", "ablation_mode", "split_kind", "n_train_sentences",
      "rfm_plain_sgd", "rfm_sgd_lr", "project_2d"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(kKeys.begin(), kKeys.end(), key) == kKeys.end()) {
      throw ConfigError("train config: unknown key '" + key + "'");
    }
  }
  TrainConfig cfg;
  try {
    if (j.contains("lr")) cfg.lr = j["lr"].get<double>();
    if (j.contains("batch_size")) cfg.batch_size = j["batch_size"].get<int>();
    if (j.contains("max_steps")) cfg.max_steps = j["max_steps"].get<int>();
    if (j.contains("decay_every")) cfg.decay_every = j["decay_every"].get<long>();
    if (j.contains("decay_factor")) cfg.decay_factor = j["decay_factor"].get<double>();
    if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("ablation_mode"))
      cfg.ablation_mode = ablation_mode_from_string(j["ablation_mode"].get<std::string>());
    if (j.contains("split_kind"))
      cfg.split_kind = split_kind_from_string(j["split_kind"].get<std::string>());
    if (j.contains("n_train_sentences"))
      cfg.n_train_sentences = j["n_train_sentences"].get<int>();
    if (j.contains("rfm_plain_sgd")) cfg.rfm_plain_sgd = j["rfm_plain_sgd"].get<bool>();
    if (j.contains("rfm_sgd_lr")) cfg.rfm_sgd_lr = j["rfm_sgd_lr"].get<double>();
    if (j.contains("project_2d")) cfg.project_2d = j["project_2d"].get<bool>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  validate_train_config(cfg);
  return cfg;
}

std::string run_report_to_json(const RunReport& report) {
  json j;
  j["losses"] = report.losses;
  j["train_accuracy"] = report.train_accuracy;
  j["test_accuracy"] = report.test_accuracy;
  j["train_config"] = json::parse(report.train_config_json);
  j["model_config"] = json::parse(report.model_config_json);
  if (report.theta_init) {
    j["theta_init"] = report.theta_init->theta;
    j["theta_final"] = report.theta_final->theta;
  } else {
    j["theta_init"] = nullptr;
    j["theta_final"] = nullptr;
  }
  return j.dump(2) + "\n";
}

PreprocessResult preprocess_dataset(const Dataset& ds, const LipIndexMap* map) {
  PreprocessResult out;
  out.sequences.reserve(ds.utterances.size());
  for (const auto& utt : ds.utterances) {
    PreprocessEntry entry;
    entry.speaker_id = utt.speaker_id;
    entry.sentence_id = utt.sentence_id;
    try {
      if (utt.frames.empty()) throw ValueError("utterance has no frames");
      std::vector<FaceCloud> corrected;
      corrected.reserve(utt.frames.size());
      bool first = true;
      for (const auto& raw : utt.frames) {
        FaceCloud cloud = raw;
        if (map != nullptr && raw.points.size() != kLipLandmarks) {
          cloud = select_lip_points(raw, *map);
        } else if (raw.points.size() != kLipLandmarks) {
          throw ValueError("frame has " + std::to_string(raw.points.size()) +
                           " points and no index map was given");
        }
        PostureCorrection pc = correct_posture(cloud);
        if (first) {
          entry.yaw = pc.yaw;
          entry.roll = pc.roll;
          entry.pitch = pc.pitch;
          entry.translation = pc.translation;
          first = false;
        }
        corrected.push_back(std::move(pc.cloud));
      }
      entry.padded = corrected.size() < kSequenceFrames;
      out.sequences.push_back(
          build_sequence(corrected, utt.speaker_id, utt.sentence_id));
    } catch (const Error& e) {
      entry.skipped = true;
      entry.error = e.what();
      out.skipped_count += 1;
    }
    out.log.push_back(std::move(entry));
  }
  return out;
}

std::string preprocess_log_to_json(const PreprocessResult& result) {
  json entries = json::array();
  for (const auto& e : result.log) {
    json je;
    je["speaker_id"] = e.speaker_id;
    je["sentence_id"] = e.sentence_id;
    je["yaw_rad"] = e.yaw;
    je["roll_rad"] = e.roll;
    je["pitch_rad"] = e.pitch;
    je["translation_mm"] = {e.translation.x, e.translation.y, e.translation.z};
    je["padded"] = e.padded;
    je["skipped"] = e.skipped;
    if (e.skipped) je["error"] = e.error;
    entries.push_back(je);
  }
  json j;
  j["entries"] = entries;
  j["skipped_count"] = result.skipped_count;
  return j.dump(2) + "\n";
}

namespace {

std::vector<int> sequence_labels(const std::vector<S3dlmSequence>& seqs,
                                 std::size_t lo, std::size_t hi,
                                 const std::vector<std::size_t>& order) {
  std::vector<int> labels;
  labels.reserve(hi - lo);
  for (std::size_t i = lo; i < hi; ++i) {
    labels.push_back(seqs[order[i]].speaker_id);
  }
  return labels;
}

void check_class_range(const std::vector<S3dlmSequence>& seqs, int num_classes,
                       const char* what) {
  for (const auto& s : seqs) {
    if (s.speaker_id < 0 || s.speaker_id >= num_classes) {
      throw ValueError(std::string(what) + ": speaker id " +
                       std::to_string(s.speaker_id) +
                       " outside the model's " + std::to_string(num_classes) +
                       " classes");
    }
  }
}

double grand_grad_norm(const std::vector<DiffTensor>& params) {
  double acc = 0.0;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) acc += g * g;
  }
  return std::sqrt(acc);
}

}  // namespace

RunReport train(ThreeLmNet& model, const std::vector<S3dlmSequence>& train_seqs,
                const std::vector<S3dlmSequence>& test_seqs,
                const TrainConfig& cfg) {
  validate_train_config(cfg);
  if (model.config().ablation_mode != cfg.ablation_mode) {
    throw ValueError("train: model ablation mode " +
                     to_string(model.config().ablation_mode) +
                     " does not match config " + to_string(cfg.ablation_mode));
  }
  if (train_seqs.empty()) throw ValueError("train: empty training split");
  check_class_range(train_seqs, model.config().num_speakers, "train");
  check_class_range(test_seqs, model.config().num_speakers, "train");

  const auto t_start = std::chrono::steady_clock::now();

  std::vector<S3dlmSequence> train_data = train_seqs;
  std::vector<S3dlmSequence> test_data = test_seqs;
  if (cfg.project_2d) {
    for (auto& s : train_data) s = project_2d(s);
    for (auto& s : test_data) s = project_2d(s);
  }

  RunReport report;
  report.train_config_json = train_config_to_json(cfg);
  report.model_config_json = model_config_to_json(model.config());

  // Prior strictly from the training split.
  if (cfg.ablation_mode == AblationMode::rfm_prior ||
      cfg.ablation_mode == AblationMode::rfm_prior_opposed) {
    const auto delta = compute_fluctuation(train_data);
    double alpha = 1.0, b = 0.0;
    fit_prior_params(delta, alpha, b);
    const PriorVector p = compute_prior(delta, alpha, b);
    model.set_feedback(*init_feedback(cfg.ablation_mode, &p));
  } else if (cfg.ablation_mode == AblationMode::rfm_only) {
    model.set_feedback(*init_feedback(cfg.ablation_mode, nullptr));
  }
  if (model.rfm_enabled()) report.theta_init = model.feedback_snapshot();

  const auto opt_params = cfg.rfm_plain_sgd && model.rfm_enabled()
                              ? model.parameters_without_feedback()
                              : model.parameters();
  AdamOptimizer opt(opt_params, cfg.lr);
  const auto all_params = model.parameters();

  std::vector<std::size_t> order(train_data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  double last_grad_norm = 0.0;
  int step = 0;
  std::uint64_t epoch = 0;
  while (step < cfg.max_steps) {
    Rng shuffle_rng = make_stream(cfg.seed, {stream_tag::kShuffle, epoch});
    shuffle_rng.shuffle(order);
    for (std::size_t lo = 0; lo < order.size() && step < cfg.max_steps;
         lo += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t hi =
          std::min(lo + static_cast<std::size_t>(cfg.batch_size), order.size());
      std::vector<const S3dlmSequence*> batch;
      batch.reserve(hi - lo);
      for (std::size_t i = lo; i < hi; ++i) batch.push_back(&train_data[order[i]]);
      const auto labels = sequence_labels(train_data, lo, hi, order);

      const DiffTensor input = model.make_batch(batch);
      const DiffTensor loss = softmax_cross_entropy(model.forward(input), labels);
      const double loss_value = loss.scalar();
      if (!std::isfinite(loss_value)) {
        char buf[160];
        std::snprintf(buf, sizeof(buf),
                      "loss diverged at step %d (lr=%.6g, last grad norm %.6g)",
                      step, opt.lr(), last_grad_norm);
        throw TrainingError(buf);
      }
      backward(loss);
      last_grad_norm = grand_grad_norm(all_params);

      opt.step();
      if (cfg.rfm_plain_sgd && model.rfm_enabled()) {
        update_feedback_sgd(model.feedback(), cfg.rfm_sgd_lr);
        model.feedback().clear_grad();
      }
      opt.zero_grad();
      opt.decay(cfg.decay_every, cfg.decay_factor);

      report.losses.push_back(loss_value);
      ++step;
    }
    ++epoch;
  }

  if (model.rfm_enabled()) report.theta_final = model.feedback_snapshot();
  report.train_accuracy = evaluate(model, train_data);
  if (!test_data.empty()) report.test_accuracy = evaluate(model, test_data);

  report.wall_time_sec =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
          .count();
  return report;
}

double evaluate(const ThreeLmNet& model, const std::vector<S3dlmSequence>& seqs,
                int eval_batch) {
  if (seqs.empty()) throw ValueError("evaluate: empty split");
  if (eval_batch < 1) throw ValueError("evaluate: eval_batch must be positive");
  check_class_range(seqs, model.config().num_speakers, "evaluate");
  const std::size_t c = static_cast<std::size_t>(model.config().num_speakers);
  std::size_t correct = 0;
  for (std::size_t lo = 0; lo < seqs.size();
       lo += static_cast<std::size_t>(eval_batch)) {
    const std::size_t hi =
        std::min(lo + static_cast<std::size_t>(eval_batch), seqs.size());
    std::vector<const S3dlmSequence*> batch;
    for (std::size_t i = lo; i < hi; ++i) batch.push_back(&seqs[i]);
    const DiffTensor logits = model.forward(model.make_batch(batch));
    const auto& v = logits.values();
    for (std::size_t r = 0; r < hi - lo; ++r) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < c; ++k) {
        if (v[r * c + k] > v[r * c + best]) best = k;  // ties keep lowest index
      }
      if (static_cast<int>(best) == seqs[lo + r].speaker_id) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(seqs.size());
}

namespace {

std::pair<std::vector<S3dlmSequence>, std::vector<S3dlmSequence>> make_splits(
    const Dataset& ds, SplitKind kind, const TrainConfig& cfg) {
  const auto [train_ds, test_ds] =
      kind == SplitKind::text_independent
          ? split_text_independent(ds, cfg.n_train_sentences)
          : split_text_dependent(ds, cfg.seed, cfg.n_train_sentences);
  auto train_pre = preprocess_dataset(train_ds);
  auto test_pre = preprocess_dataset(test_ds);
  if (train_pre.skipped_count != 0 || test_pre.skipped_count != 0) {
    throw ValueError("ablation: dataset contains degenerate utterances");
  }
  return {std::move(train_pre.sequences), std::move(test_pre.sequences)};
}

}  // namespace

AblationTable run_ablation_suite(const Dataset& ds, const ModelConfig& model_cfg,
                                 const TrainConfig& base_cfg,
                                 const std::vector<std::uint64_t>& seeds) {
  if (seeds.empty()) throw ValueError("ablation: need at least one seed");
  AblationTable table;
  table.modes = {AblationMode::baseline, AblationMode::rfm_only,
                 AblationMode::rfm_prior_opposed, AblationMode::rfm_prior};
  table.splits = {SplitKind::text_independent, SplitKind::text_dependent};
  table.cells.resize(table.modes.size() * table.splits.size());

  for (std::size_t col = 0; col < table.splits.size(); ++col) {
    for (std::size_t row = 0; row < table.modes.size(); ++row) {
      AblationCell& cell = table.cells[row * table.splits.size() + col];
      for (std::uint64_t seed : seeds) {
        TrainConfig cfg = base_cfg;
        cfg.seed = seed;
        cfg.ablation_mode = table.modes[row];
        cfg.split_kind = table.splits[col];
        const auto [train_seqs, test_seqs] =
            make_splits(ds, cfg.split_kind, cfg);

        ModelConfig mc = model_cfg;
        mc.ablation_mode = table.modes[row];
        Rng init = make_stream(seed, {stream_tag::kInit, row, col});
        ThreeLmNet model(mc, init);
        const RunReport report = train(model, train_seqs, test_seqs, cfg);
        cell.per_seed.push_back(report.test_accuracy);
      }
      cell.mean_accuracy = mean(cell.per_seed);
      cell.std_accuracy = population_std(cell.per_seed);
    }
  }
  return table;
}

std::string ablation_table_csv(const AblationTable& table) {
  std::string out = "mode";
  for (const auto split : table.splits) {
    out += "," + to_string(split) + "_mean," + to_string(split) + "_std";
  }
  out += "\n";
  char buf[96];
  for (std::size_t row = 0; row < table.modes.size(); ++row) {
    out += to_string(table.modes[row]);
    for (std::size_t col = 0; col < table.splits.size(); ++col) {
      const auto& cell = table.at(row, col);
      std::snprintf(buf, sizeof(buf), ",%.17g,%.17g", cell.mean_accuracy,
                    cell.std_accuracy);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

std::string ablation_table_text(const AblationTable& table) {
  std::string out;
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%-20s", "mode");
  out += buf;
  for (const auto split : table.splits) {
    std::snprintf(buf, sizeof(buf), "  %-24s", to_string(split).c_str());
    out += buf;
  }
  out += "\n";
  for (std::size_t row = 0; row < table.modes.size(); ++row) {
    std::snprintf(buf, sizeof(buf), "%-20s", to_string(table.modes[row]).c_str());
    out += buf;
    for (std::size_t col = 0; col < table.splits.size(); ++col) {
      const auto& cell = table.at(row, col);
      std::snprintf(buf, sizeof(buf), "  %6.2f%% +/- %5.2f%%        ",
                    100.0 * cell.mean_accuracy, 100.0 * cell.std_accuracy);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

}  // namespace lip3d
