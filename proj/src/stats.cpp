#include "lip3d/stats.hpp"

#include <cmath>
#include <cstdio>

#include "lip3d/errors.hpp"
#include "lip3d/mathutil.hpp"

namespace lip3d {

double utterance_motion_variance(const S3dlmSequence& seq) {
  validate_sequence(seq);
  double total = 0.0;
  for (std::size_t k = 0; k < kLipLandmarks; ++k) {
    double mx = 0.0, my = 0.0, mz = 0.0;
    for (std::size_t t = 0; t < kSequenceFrames; ++t) {
      mx += seq.at(t, k, 0);
      my += seq.at(t, k, 1);
      mz += seq.at(t, k, 2);
    }
    const double inv = 1.0 / static_cast<double>(kSequenceFrames);
    mx *= inv;
    my *= inv;
    mz *= inv;
    double acc = 0.0;
    for (std::size_t t = 0; t < kSequenceFrames; ++t) {
      const double dx = seq.at(t, k, 0) - mx;
      const double dy = seq.at(t, k, 1) - my;
      const double dz = seq.at(t, k, 2) - mz;
      acc += dx * dx + dy * dy + dz * dz;
    }
    total += acc * inv;
  }
  return total / static_cast<double>(kLipLandmarks);
}

MotionVarianceTable build_variance_table(const std::vector<S3dlmSequence>& seqs,
                                         std::size_t n_speakers,
                                         std::size_t n_sentences) {
  MotionVarianceTable table;
  table.n_speakers = n_speakers;
  table.n_sentences = n_sentences;
  table.v.assign(n_speakers * n_sentences, -1.0);
  for (const auto& seq : seqs) {
    if (seq.speaker_id < 0 ||
        static_cast<std::size_t>(seq.speaker_id) >= n_speakers ||
        seq.sentence_id < 0 ||
        static_cast<std::size_t>(seq.sentence_id) >= n_sentences) {
      throw ValueError("variance table: sequence labels (" +
                       std::to_string(seq.speaker_id) + "," +
                       std::to_string(seq.sentence_id) +
                       ") outside the declared grid");
    }
    double& cell = table.at(static_cast<std::size_t>(seq.speaker_id),
                            static_cast<std::size_t>(seq.sentence_id));
    if (cell >= 0.0) {
      throw ValueError("variance table: duplicate cell (" +
                       std::to_string(seq.speaker_id) + "," +
                       std::to_string(seq.sentence_id) + ")");
    }
    cell = utterance_motion_variance(seq);
  }
  for (double c : table.v) {
    if (c < 0.0) throw ValueError("variance table: grid has missing cells");
  }
  return table;
}

GroupAnalysis text_group_analysis(const MotionVarianceTable& table,
                                  std::size_t group_size,
                                  std::size_t n_texts_used) {
  if (group_size == 0) throw ValueError("text groups: group_size must be > 0");
  if (table.n_sentences < n_texts_used) {
    throw ValueError("text groups: table has " +
                     std::to_string(table.n_sentences) +
                     " sentences, need " + std::to_string(n_texts_used));
  }
  if (n_texts_used == 0 || n_texts_used % group_size != 0) {
    throw ValueError("text groups: n_texts_used must be a positive multiple of group_size");
  }
  GroupAnalysis out;
  const std::size_t n_groups = n_texts_used / group_size;
  out.group_std.reserve(n_groups);
  for (std::size_t g = 0; g < n_groups; ++g) {
    std::vector<double> sample;
    sample.reserve(table.n_speakers * group_size);
    for (std::size_t i = 0; i < table.n_speakers; ++i) {
      for (std::size_t j = g * group_size; j < (g + 1) * group_size; ++j) {
        sample.push_back(table.at(i, j));
      }
    }
    out.group_std.push_back(population_std(sample));
  }
  const double m = mean(out.group_std);
  for (double s : out.group_std) out.deviations.push_back(s - m);
  out.std_of_deviations = population_std(out.group_std);
  return out;
}

GroupAnalysis speaker_group_analysis(const MotionVarianceTable& table,
                                     std::size_t group_size) {
  if (group_size == 0) throw ValueError("speaker groups: group_size must be > 0");
  if (table.n_speakers == 0) throw ValueError("speaker groups: empty table");
  GroupAnalysis out;
  for (std::size_t lo = 0; lo < table.n_speakers; lo += group_size) {
    const std::size_t hi = std::min(lo + group_size, table.n_speakers);
    std::vector<double> sample;
    sample.reserve((hi - lo) * table.n_sentences);
    for (std::size_t i = lo; i < hi; ++i) {
      for (std::size_t j = 0; j < table.n_sentences; ++j) {
        sample.push_back(table.at(i, j));
      }
    }
    out.group_std.push_back(population_std(sample));
  }
  const double m = mean(out.group_std);
  for (double s : out.group_std) out.deviations.push_back(s - m);
  out.std_of_deviations = population_std(out.group_std);
  return out;
}

IndependenceReport independence_report(const MotionVarianceTable& table,
                                       std::size_t text_group_size,
                                       std::size_t n_texts_used,
                                       std::size_t speaker_group_size) {
  IndependenceReport r;
  r.text_group_size = text_group_size;
  r.n_texts_used = n_texts_used;
  r.speaker_group_size = speaker_group_size;
  r.text = text_group_analysis(table, text_group_size, n_texts_used);
  r.speaker = speaker_group_analysis(table, speaker_group_size);
  r.ratio = r.text.std_of_deviations == 0.0
                ? std::numeric_limits<double>::infinity()
                : r.speaker.std_of_deviations / r.text.std_of_deviations;
  return r;
}

namespace {

std::string group_label(std::size_t g, std::size_t size, std::size_t total) {
  const std::size_t lo = g * size + 1;
  const std::size_t hi = std::min((g + 1) * size, total);
  return std::to_string(lo) + "-" + std::to_string(hi);
}

}  // namespace

std::string independence_report_csv(const IndependenceReport& r) {
  std::string out = "block,group,std,deviation\n";
  char buf[128];
  for (std::size_t g = 0; g < r.text.group_std.size(); ++g) {
    std::snprintf(buf, sizeof(buf), "text,%s,%.17g,%.17g\n",
                  group_label(g, r.text_group_size, r.n_texts_used).c_str(),
                  r.text.group_std[g], r.text.deviations[g]);
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), "text,std_of_deviations,%.17g,\n",
                r.text.std_of_deviations);
  out += buf;
  const std::size_t n_speakers =
      r.speaker.group_std.empty()
          ? 0
          : (r.speaker.group_std.size() - 1) * r.speaker_group_size +
                r.speaker_group_size;
  for (std::size_t g = 0; g < r.speaker.group_std.size(); ++g) {
    std::snprintf(buf, sizeof(buf), "speaker,%s,%.17g,%.17g\n",
                  group_label(g, r.speaker_group_size, n_speakers).c_str(),
                  r.speaker.group_std[g], r.speaker.deviations[g]);
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), "speaker,std_of_deviations,%.17g,\n",
                r.speaker.std_of_deviations);
  out += buf;
  std::snprintf(buf, sizeof(buf), "summary,ratio,%.17g,\n", r.ratio);
  out += buf;
  return out;
}

std::string independence_report_text(const IndependenceReport& r) {
  std::string out;
  char buf[160];
  out += "motion-variance deviation analysis (population std)\n\n";
  out += "text groups";
  for (std::size_t g = 0; g < r.text.group_std.size(); ++g) {
    std::snprintf(buf, sizeof(buf), "  %s",
                  group_label(g, r.text_group_size, r.n_texts_used).c_str());
    out += buf;
  }
  out += "  std\nD_t        ";
  for (double d : r.text.deviations) {
    std::snprintf(buf, sizeof(buf), "  %+.4f", d);
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), "  %.4f\n\n", r.text.std_of_deviations);
  out += buf;

  out += "speaker groups";
  const std::size_t n_speakers =
      r.speaker.group_std.empty()
          ? 0
          : (r.speaker.group_std.size() - 1) * r.speaker_group_size +
                r.speaker_group_size;
  for (std::size_t g = 0; g < r.speaker.group_std.size(); ++g) {
    std::snprintf(buf, sizeof(buf), "  %s",
                  group_label(g, r.speaker_group_size, n_speakers).c_str());
    out += buf;
  }
  out += "  std\nD_s           ";
  for (double d : r.speaker.deviations) {
    std::snprintf(buf, sizeof(buf), "  %+.4f", d);
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), "  %.4f\n\n", r.speaker.std_of_deviations);
  out += buf;
  std::snprintf(buf, sizeof(buf), "ratio std(D_s)/std(D_t) = %.4f\n", r.ratio);
  out += buf;
  return out;
}

double verify_decomposition(const Dataset& ds) {
  if (!ds.ground_truth.has_value()) {
    throw ValueError("verify_decomposition: dataset lacks generator ground truth");
  }
  const GroundTruth& gt = *ds.ground_truth;
  const std::size_t m = static_cast<std::size_t>(ds.manifest.n_speakers);
  const std::size_t n = static_cast<std::size_t>(ds.manifest.n_sentences);
  if (m == 0 || n == 0) throw ValueError("verify_decomposition: empty dataset");

  const std::size_t dim = gt.frames * kLipLandmarks * 3;

  // Per-speaker mean over texts of the raw utterance matrices.
  std::vector<std::vector<double>> speaker_mean(m);
  for (std::size_t i = 0; i < m; ++i) {
    std::vector<double> acc(dim, 0.0), comp(dim, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      const auto mat = utterance_matrix(ds.at(static_cast<int>(i), static_cast<int>(j)));
      if (mat.size() != dim) {
        throw DimensionError("verify_decomposition: utterance size mismatch");
      }
      for (std::size_t c = 0; c < dim; ++c) {
        const double x = mat[c];
        const double t = acc[c] + x;
        comp[c] += (std::abs(acc[c]) >= std::abs(x)) ? (acc[c] - t) + x
                                                     : (x - t) + acc[c];
        acc[c] = t;
      }
    }
    speaker_mean[i].resize(dim);
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t c = 0; c < dim; ++c) {
      speaker_mean[i][c] = (acc[c] + comp[c]) * inv;
    }
  }

  // Grand mean over speakers.
  std::vector<double> grand(dim, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t c = 0; c < dim; ++c) grand[c] += speaker_mean[i][c];
  }
  for (double& g : grand) g /= static_cast<double>(m);

  // Ground-truth speaker deviation from the speaker-field mean.
  std::vector<double> l_mean(dim, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t c = 0; c < dim; ++c) l_mean[c] += gt.speaker_field[i][c];
  }
  for (double& g : l_mean) g /= static_cast<double>(m);

  double max_err = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t c = 0; c < dim; ++c) {
      const double a = speaker_mean[i][c] - grand[c];
      const double b = gt.speaker_field[i][c] - l_mean[c];
      const double err = std::abs(a * a - b * b);
      if (err > max_err) max_err = err;
    }
  }
  return max_err;
}

}  // namespace lip3d
