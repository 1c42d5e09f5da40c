#pragma once

// Text-independence analysis: per-utterance motion variances grouped by text
// and by speaker, their deviations from the group mean, and the additive
// decomposition check against generator ground truth. Population standard
// deviations throughout.

#include <cstddef>
#include <string>
#include <vector>

#include "lip3d/data.hpp"
#include "lip3d/sequence.hpp"

namespace lip3d {

struct MotionVarianceTable {
  std::size_t n_speakers = 0;
  std::size_t n_sentences = 0;
  std::vector<double> v;  // speaker-major, >= 0, mm^2

  double at(std::size_t speaker, std::size_t sentence) const {
    return v[speaker * n_sentences + sentence];
  }
  double& at(std::size_t speaker, std::size_t sentence) {
    return v[speaker * n_sentences + sentence];
  }
};

// Scalar motion variance of one utterance: mean over the 200 landmarks of the
// temporal variance of each landmark position (squared deviation from the
// temporal mean, summed over xyz).
double utterance_motion_variance(const S3dlmSequence& seq);

// Table over a full grid of sequences; every (speaker, sentence) cell must be
// present exactly once.
MotionVarianceTable build_variance_table(const std::vector<S3dlmSequence>& seqs,
                                         std::size_t n_speakers,
                                         std::size_t n_sentences);

struct GroupAnalysis {
  std::vector<double> group_std;   // one std per group
  std::vector<double> deviations;  // group_std - mean(group_std), sums to 0
  double std_of_deviations = 0.0;  // population std of group_std
};

// Groups of `group_size` consecutive sentences over the first `n_texts_used`
// sentences (must divide evenly); std over all speakers' variances per group.
GroupAnalysis text_group_analysis(const MotionVarianceTable& table,
                                  std::size_t group_size = 20,
                                  std::size_t n_texts_used = 140);

// Groups of `group_size` consecutive speakers; the last group keeps the
// remainder. Std over all sentences of the grouped speakers.
GroupAnalysis speaker_group_analysis(const MotionVarianceTable& table,
                                     std::size_t group_size = 10);

struct IndependenceReport {
  GroupAnalysis text;
  GroupAnalysis speaker;
  std::size_t text_group_size = 0, n_texts_used = 0, speaker_group_size = 0;
  double ratio = 0.0;  // speaker std_of_deviations / text std_of_deviations
};

IndependenceReport independence_report(const MotionVarianceTable& table,
                                       std::size_t text_group_size = 20,
                                       std::size_t n_texts_used = 140,
                                       std::size_t speaker_group_size = 10);

// CSV and aligned-text renderings of the report (two row blocks: text groups
// then speaker groups, with per-group deviations and the block std).
std::string independence_report_csv(const IndependenceReport& r);
std::string independence_report_text(const IndependenceReport& r);

// Additive decomposition check. For each speaker, averages the raw utterance
// matrices over all sentences, subtracts the grand mean, squares
// componentwise, and compares against the same quantity computed from the
// generator's per-speaker ground-truth fields. Returns the max absolute
// componentwise error. Requires generator ground truth.
double verify_decomposition(const Dataset& ds);

}  // namespace lip3d
