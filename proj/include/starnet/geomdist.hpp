#pragma once

// Point-set distances used as losses and metrics: Chamfer distance,
// epsilon-scaling auction EMD (O(N) memory beyond the inputs), and an exact
// Hungarian solver as the small-instance oracle.

#include <array>
#include <cstdint>
#include <vector>

namespace starnet {

using Point3 = std::array<double, 3>;

struct PointCloud {
  std::vector<Point3> points;

  size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  Point3& operator[](size_t i) { return points[i]; }
  const Point3& operator[](size_t i) const { return points[i]; }
};

double squared_dist(const Point3& a, const Point3& b);
double euclid_dist(const Point3& a, const Point3& b);

struct Assignment {
  std::vector<int> perm;  // X index -> Y index, a bijection
  double cost = 0.0;
  bool converged = true;  // false when the auction hit its bid budget
};

struct AuctionConfig {
  double eps_start = 0.0;        // 0 -> max pairwise distance / 4
  double eps_scale_factor = 0.25;
  double eps_min = 0.0;          // 0 -> 1 / (8N)
  int64_t max_rounds = 0;        // bid budget, 0 -> 10 * N^2
};

// Squared-Euclidean nearest-neighbor distance, mean per side, sides summed.
double chamfer(const PointCloud& X, const PointCloud& Y);

// Gradient of chamfer wrt X with nearest-neighbor assignments held fixed.
std::vector<Point3> chamfer_grad(const PointCloud& X, const PointCloud& Y);

// Mean Euclidean matched distance under an epsilon-scaling auction assignment.
std::pair<double, Assignment> emd_auction(const PointCloud& X, const PointCloud& Y,
                                          const AuctionConfig& cfg = {});

// Gradient of the mean matched Euclidean distance wrt X with perm frozen.
std::vector<Point3> emd_grad(const PointCloud& X, const PointCloud& Y, const Assignment& a);

// Exact optimal assignment (Euclidean cost), guarded to N <= 512.
std::pair<double, Assignment> emd_hungarian(const PointCloud& X, const PointCloud& Y);

enum class LossVariant { kBoth, kChamferOnly, kEmdOnly };

struct ReconLoss {
  double value = 0.0;
  double cd = 0.0;
  double emd = 0.0;
  std::vector<Point3> grad_x;
};

// L_recon = d_cd + d_emd (variant selects one or both).
ReconLoss recon_loss(const PointCloud& X, const PointCloud& Y,
                     LossVariant variant = LossVariant::kBoth, const AuctionConfig& cfg = {});

}  // namespace starnet
