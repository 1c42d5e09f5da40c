#pragma once

// Fluctuation prior over the 200 lip landmarks: per-landmark mean squared
// deviation from the temporal mean position, standardized and mapped through
// a sigmoid into (0,1). Used to initialize the feedback vector and for
// heatmap export.

#include <string>
#include <vector>

#include "lip3d/sequence.hpp"

namespace lip3d {

struct FluctuationStats {
  std::vector<double> delta;  // 200, mm^2, >= 0
  double alpha = 1.0;
  double b = 0.0;
};

struct PriorVector {
  std::vector<double> p;  // 200, strictly in (0,1)
};

// Per landmark k: mean over sequences of (1/28) sum_t |P_t^k - mean_t P^k|^2.
// Takes the training split only.
std::vector<double> compute_fluctuation(const std::vector<S3dlmSequence>& train);

// Standardization: alpha = 1/std(delta), b = -mean(delta)/std(delta); when
// delta has no spread, alpha = 1 and b = -delta[0] (uniform prior 0.5).
void fit_prior_params(const std::vector<double>& delta, double& alpha,
                      double& b);

// p[k] = sigmoid(alpha*delta[k] + b). Values below one half are snapped to
// the complement grid so that 1-p is exactly representable.
PriorVector compute_prior(const std::vector<double>& delta, double alpha,
                          double b);

// Elementwise 1-p; exact involution.
PriorVector opposite_prior(const PriorVector& p);

// CSV: header landmark_index,delta,p; one row per landmark.
void write_prior_csv(const std::vector<double>& delta, const PriorVector& p,
                     const std::string& path);

// SVG heatmap in the 10x20 row grid; one cell per landmark, larger p lighter.
std::string prior_heatmap_svg(const PriorVector& p);
void write_prior_svg(const PriorVector& p, const std::string& path);

}  // namespace lip3d
