#pragma once

// Set-level generative evaluation: JSD over voxelized marginals, plus
// MMD / COV / 1-NNA over pairwise CD or EMD matrices.

#include <string>
#include <vector>

#include "starnet/geomdist.hpp"

namespace starnet {

struct CloudSet {
  std::vector<PointCloud> clouds;
  std::string label;

  size_t size() const { return clouds.size(); }
};

enum class BaseDistance { kChamfer, kEmd };

struct PairwiseDistances {
  size_t rows = 0, cols = 0;
  std::vector<double> matrix;  // rows x cols
  BaseDistance base = BaseDistance::kChamfer;

  double at(size_t i, size_t j) const { return matrix[i * cols + j]; }
};

// All pairwise base distances between clouds of A (rows) and B (cols).
// Fill order is parallelized across cells; results are order-independent.
PairwiseDistances pairwise_distances(const CloudSet& A, const CloudSet& B, BaseDistance base);

// Jensen-Shannon divergence of voxel occupancy over [-1,1]^3 (base-2 logs).
// Points outside the cube are clamped; *clamped_out, when given, receives the
// clamp count.
double jsd(const CloudSet& ref, const CloudSet& gen, int grid_res = 28,
           int* clamped_out = nullptr);

double mmd(const CloudSet& ref, const CloudSet& gen, BaseDistance base);
double coverage(const CloudSet& ref, const CloudSet& gen, BaseDistance base);
double one_nna(const CloudSet& ref, const CloudSet& gen, BaseDistance base);

// Variants reusing a precomputed cross matrix (ref rows x gen cols).
double mmd(const PairwiseDistances& ref_by_gen);
double coverage(const PairwiseDistances& ref_by_gen);

struct MetricsReport {
  double jsd = 0.0;
  double mmd_cd = 0.0;
  double mmd_emd = 0.0;
  double cov_cd = 0.0;
  double cov_emd = 0.0;
  double nna_cd = 0.0;
  double nna_emd = 0.0;
  bool degenerate = false;  // gen duplicates ref; 1-NNA not meaningful

  // UTF-8 `metric.name = value` lines, raw values plus the conventional
  // scale factors (JSD x1e2, MMD-CD x1e4, MMD-EMD x1e2, COV/1-NNA in %).
  std::string serialize() const;
  static MetricsReport parse(const std::string& text);
};

// Normalizes every cloud into the unit cube, then computes the full report
// (JSD at grid_res 28, MMD/COV/1-NNA under both base distances).
MetricsReport evaluate_generation(const CloudSet& ref, const CloudSet& gen);

}  // namespace starnet
