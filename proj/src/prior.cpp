#include "lip3d/prior.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "lip3d/errors.hpp"
#include "lip3d/mathutil.hpp"

namespace lip3d {

std::vector<double> compute_fluctuation(
    const std::vector<S3dlmSequence>& train) {
  if (train.empty()) throw ValueError("compute_fluctuation: empty training set");
  std::vector<double> delta(kLipLandmarks, 0.0);
  for (const auto& seq : train) {
    validate_sequence(seq);
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
      delta[k] += acc * inv;
    }
  }
  const double invn = 1.0 / static_cast<double>(train.size());
  for (double& d : delta) d *= invn;
  return delta;
}

void fit_prior_params(const std::vector<double>& delta, double& alpha,
                      double& b) {
  const double sd = population_std(delta);
  if (sd == 0.0) {
    alpha = 1.0;
    b = delta.empty() ? 0.0 : -delta[0];
    return;
  }
  alpha = 1.0 / sd;
  b = -mean(delta) / sd;
}

namespace {

// Snap values below one half onto the complement of the [0.5,1) grid, so that
// 1-p is exact and complementation round-trips bit-exactly.
double snap_unit_complement(double p) {
  p = std::min(std::max(p, 0x1.0p-53), 1.0 - 0x1.0p-53);
  if (p < 0.5) p = 1.0 - (1.0 - p);
  return p;
}

}  // namespace

PriorVector compute_prior(const std::vector<double>& delta, double alpha,
                          double b) {
  if (delta.size() != kLipLandmarks) {
    throw DimensionError("compute_prior: delta has " +
                         std::to_string(delta.size()) + " entries, expected " +
                         std::to_string(kLipLandmarks));
  }
  PriorVector out;
  out.p.resize(delta.size());
  for (std::size_t k = 0; k < delta.size(); ++k) {
    out.p[k] = snap_unit_complement(stable_sigmoid(alpha * delta[k] + b));
  }
  return out;
}

PriorVector opposite_prior(const PriorVector& p) {
  PriorVector out;
  out.p.resize(p.p.size());
  for (std::size_t k = 0; k < p.p.size(); ++k) out.p[k] = 1.0 - p.p[k];
  return out;
}

void write_prior_csv(const std::vector<double>& delta, const PriorVector& p,
                     const std::string& path) {
  if (delta.size() != p.p.size()) {
    throw DimensionError("prior csv: delta/p length mismatch");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("prior csv: cannot open " + path);
  out << "landmark_index,delta,p\n";
  char buf[96];
  for (std::size_t k = 0; k < p.p.size(); ++k) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g\n", k, delta[k], p.p[k]);
    out << buf;
  }
}

std::string prior_heatmap_svg(const PriorVector& p) {
  if (p.p.size() != kLipLandmarks) {
    throw DimensionError("prior svg: expected " +
                         std::to_string(kLipLandmarks) + " values");
  }
  constexpr int cell = 16;
  constexpr int w = cell * static_cast<int>(kLipCols);
  constexpr int h = cell * static_cast<int>(kLipRows);
  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
         std::to_string(w) + "\" height=\"" + std::to_string(h) + "\">\n";
  char buf[160];
  for (std::size_t r = 0; r < kLipRows; ++r) {
    for (std::size_t c = 0; c < kLipCols; ++c) {
      const double v = p.p[r * kLipCols + c];
      const int gray = static_cast<int>(std::lround(255.0 * v));
      std::snprintf(buf, sizeof(buf),
                    "<rect x=\"%d\" y=\"%d\" width=\"%d\" height=\"%d\" "
                    "fill=\"rgb(%d,%d,%d)\"/>\n",
                    static_cast<int>(c) * cell, static_cast<int>(r) * cell,
                    cell, cell, gray, gray, gray);
      svg += buf;
    }
  }
  svg += "</svg>\n";
  return svg;
}

void write_prior_svg(const PriorVector& p, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("prior svg: cannot open " + path);
  out << prior_heatmap_svg(p);
}

}  // namespace lip3d
