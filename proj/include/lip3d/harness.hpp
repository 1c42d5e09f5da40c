#pragma once

// Training and evaluation loops, the preprocessing pipeline that turns raw
// datasets into posture-corrected sequences, and the four-way ablation
// protocol. Every reported number is fully determined by (config, seed).

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lip3d/adam.hpp"
#include "lip3d/data.hpp"
#include "lip3d/model.hpp"
#include "lip3d/sequence.hpp"

namespace lip3d {

enum class SplitKind { text_independent, text_dependent };

std::string to_string(SplitKind kind);
SplitKind split_kind_from_string(const std::string& s);

struct TrainConfig {
  double lr = 0.01;
  int batch_size = 100;
  int max_steps = 1500;
  long decay_every = 200;
  double decay_factor = 0.3;
  std::uint64_t seed = 1;
  AblationMode ablation_mode = AblationMode::rfm_prior;
  SplitKind split_kind = SplitKind::text_independent;
  int n_train_sentences = 120;
  // Literal plain-gradient feedback update with its own rate, instead of the
  // shared Adam step.
  bool rfm_plain_sgd = false;
  double rfm_sgd_lr = 0.01;
  bool project_2d = false;  // zero the z channel (2D comparison runs)
};

void validate_train_config(const TrainConfig& cfg);
std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text);  // strict keys

struct RunReport {
  std::vector<double> losses;  // one per step, finite at every step
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::optional<FeedbackVector> theta_init, theta_final;
  std::string train_config_json;
  std::string model_config_json;
  // Measured but never serialized: artifacts stay byte-identical across runs.
  double wall_time_sec = 0.0;
};

// Sorted-key JSON echo of the report (wall time excluded).
std::string run_report_to_json(const RunReport& report);

struct PreprocessEntry {
  int speaker_id = 0;
  int sentence_id = 0;
  double yaw = 0.0, roll = 0.0, pitch = 0.0;  // removed pose, radians
  Vec3 translation;                           // removed pose, mm
  bool padded = false;   // utterance had fewer than 28 frames
  bool skipped = false;  // degenerate cloud
  std::string error;
};

struct PreprocessResult {
  std::vector<S3dlmSequence> sequences;
  std::vector<PreprocessEntry> log;
  std::size_t skipped_count = 0;
};

// Optional landmark selection (for clouds larger than 200 points), posture
// correction per frame, then 28-frame sampling. Degenerate utterances are
// logged and skipped.
PreprocessResult preprocess_dataset(const Dataset& ds,
                                    const LipIndexMap* map = nullptr);

std::string preprocess_log_to_json(const PreprocessResult& result);

// Trains the model in place. When the mode uses a prior it is computed from
// the train split only. Aborts with TrainingError on non-finite loss.
RunReport train(ThreeLmNet& model, const std::vector<S3dlmSequence>& train_seqs,
                const std::vector<S3dlmSequence>& test_seqs,
                const TrainConfig& cfg);

// Argmax-of-logits accuracy; ties break to the lowest class index.
double evaluate(const ThreeLmNet& model,
                const std::vector<S3dlmSequence>& seqs, int eval_batch = 32);

struct AblationCell {
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;
  std::vector<double> per_seed;
};

struct AblationTable {
  std::vector<AblationMode> modes;  // row order
  std::vector<SplitKind> splits;    // column order
  std::vector<AblationCell> cells;  // row-major

  const AblationCell& at(std::size_t row, std::size_t col) const {
    return cells[row * splits.size() + col];
  }
};

// Trains {baseline, rfm_only, rfm_prior_opposed, rfm_prior} x split kinds for
// every seed and reports mean +/- std test accuracy.
AblationTable run_ablation_suite(const Dataset& ds, const ModelConfig& model_cfg,
                                 const TrainConfig& base_cfg,
                                 const std::vector<std::uint64_t>& seeds);

std::string ablation_table_csv(const AblationTable& table);
std::string ablation_table_text(const AblationTable& table);

}  // namespace lip3d
