#include "starnet/geomdist.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace starnet {

double squared_dist(const Point3& a, const Point3& b) {
  double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

double euclid_dist(const Point3& a, const Point3& b) { return std::sqrt(squared_dist(a, b)); }

namespace {

// nearest neighbor in Y for each x, ties broken by lowest index
std::vector<int> nearest_indices(const PointCloud& X, const PointCloud& Y) {
  std::vector<int> nn(X.size());
  for (size_t i = 0; i < X.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    int bi = 0;
    for (size_t j = 0; j < Y.size(); ++j) {
      double d = squared_dist(X[i], Y[j]);
      if (d < best) {
        best = d;
        bi = static_cast<int>(j);
      }
    }
    nn[i] = bi;
  }
  return nn;
}

void check_nonempty(const PointCloud& X, const PointCloud& Y, const char* op) {
  if (X.empty() || Y.empty()) throw std::invalid_argument(std::string(op) + ": empty point cloud");
}

}  // namespace

double chamfer(const PointCloud& X, const PointCloud& Y) {
  check_nonempty(X, Y, "chamfer");
  double sx = 0.0, sy = 0.0;
  for (size_t i = 0; i < X.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (size_t j = 0; j < Y.size(); ++j) best = std::min(best, squared_dist(X[i], Y[j]));
    sx += best;
  }
  for (size_t j = 0; j < Y.size(); ++j) {
    double best = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < X.size(); ++i) best = std::min(best, squared_dist(X[i], Y[j]));
    sy += best;
  }
  return sx / static_cast<double>(X.size()) + sy / static_cast<double>(Y.size());
}

std::vector<Point3> chamfer_grad(const PointCloud& X, const PointCloud& Y) {
  check_nonempty(X, Y, "chamfer_grad");
  std::vector<Point3> g(X.size(), Point3{0, 0, 0});
  const double inv_x = 1.0 / static_cast<double>(X.size());
  const double inv_y = 1.0 / static_cast<double>(Y.size());
  // X -> Y side
  std::vector<int> nn_xy = nearest_indices(X, Y);
  for (size_t i = 0; i < X.size(); ++i) {
    const Point3& y = Y[nn_xy[i]];
    for (int k = 0; k < 3; ++k) g[i][k] += 2.0 * inv_x * (X[i][k] - y[k]);
  }
  // Y -> X side: each y pulls on its nearest x
  std::vector<int> nn_yx = nearest_indices(Y, X);
  for (size_t j = 0; j < Y.size(); ++j) {
    size_t i = static_cast<size_t>(nn_yx[j]);
    for (int k = 0; k < 3; ++k) g[i][k] += 2.0 * inv_y * (X[i][k] - Y[j][k]);
  }
  return g;
}

std::pair<double, Assignment> emd_auction(const PointCloud& X, const PointCloud& Y,
                                          const AuctionConfig& cfg) {
  check_nonempty(X, Y, "emd_auction");
  if (X.size() != Y.size()) throw std::invalid_argument("emd_auction: size mismatch");
  const int n = static_cast<int>(X.size());

  double max_d = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) max_d = std::max(max_d, euclid_dist(X[i], Y[j]));

  double eps_start = cfg.eps_start > 0 ? cfg.eps_start : std::max(max_d / 4.0, 1e-12);
  double eps_min = cfg.eps_min > 0 ? cfg.eps_min : 1.0 / (8.0 * n);
  if (!(eps_start > eps_min && eps_min > 0))
    throw std::invalid_argument("emd_auction: need eps_start > eps_min > 0");
  int64_t max_bids = cfg.max_rounds > 0 ? cfg.max_rounds : 10ll * n * n;

  std::vector<double> price(n, 0.0);
  std::vector<int> owner(n, -1), assign(n, -1);
  int64_t bids = 0;
  bool budget_hit = false;

  double eps = eps_start;
  bool last_phase = false;
  while (!budget_hit) {
    std::fill(owner.begin(), owner.end(), -1);
    std::fill(assign.begin(), assign.end(), -1);
    std::vector<int> unassigned(n);
    std::iota(unassigned.begin(), unassigned.end(), 0);
    while (!unassigned.empty()) {
      if (bids++ >= max_bids) {
        budget_hit = true;
        break;
      }
      int i = unassigned.back();
      unassigned.pop_back();
      // best and second-best net value; objects priced on the fly, O(n) memory
      double best = -std::numeric_limits<double>::infinity();
      double second = best;
      int bj = 0;
      for (int j = 0; j < n; ++j) {
        double v = -euclid_dist(X[i], Y[j]) - price[j];
        if (v > best) {
          second = best;
          best = v;
          bj = j;
        } else if (v > second) {
          second = v;
        }
      }
      double incr = (n == 1) ? eps : best - second + eps;
      price[bj] += incr;
      if (owner[bj] >= 0) {
        assign[owner[bj]] = -1;
        unassigned.push_back(owner[bj]);
      }
      owner[bj] = i;
      assign[i] = bj;
    }
    if (last_phase || budget_hit) break;
    eps *= cfg.eps_scale_factor > 0 ? cfg.eps_scale_factor : 0.25;
    if (eps <= eps_min) {
      eps = eps_min;
      last_phase = true;
    }
  }

  // complete any unassigned persons greedily (budget exhaustion only)
  if (budget_hit) {
    std::vector<int> free_objects;
    for (int j = 0; j < n; ++j)
      if (owner[j] < 0) free_objects.push_back(j);
    for (int i = 0; i < n; ++i) {
      if (assign[i] >= 0) continue;
      double best = std::numeric_limits<double>::infinity();
      size_t bk = 0;
      for (size_t k = 0; k < free_objects.size(); ++k) {
        double d = euclid_dist(X[i], Y[free_objects[k]]);
        if (d < best) {
          best = d;
          bk = k;
        }
      }
      assign[i] = free_objects[bk];
      free_objects.erase(free_objects.begin() + static_cast<int64_t>(bk));
    }
  }

  Assignment a;
  a.perm = assign;
  a.converged = !budget_hit;
  double total = 0.0;
  for (int i = 0; i < n; ++i) total += euclid_dist(X[i], Y[assign[i]]);
  a.cost = total / n;
  return {a.cost, a};
}

std::vector<Point3> emd_grad(const PointCloud& X, const PointCloud& Y, const Assignment& a) {
  if (a.perm.size() != X.size()) throw std::invalid_argument("emd_grad: assignment size mismatch");
  std::vector<Point3> g(X.size(), Point3{0, 0, 0});
  const double inv_n = 1.0 / static_cast<double>(X.size());
  for (size_t i = 0; i < X.size(); ++i) {
    const Point3& y = Y[a.perm[i]];
    double d = euclid_dist(X[i], y);
    if (d < 1e-12) continue;  // matched pair coincides; no pull
    for (int k = 0; k < 3; ++k) g[i][k] = inv_n * (X[i][k] - y[k]) / d;
  }
  return g;
}

std::pair<double, Assignment> emd_hungarian(const PointCloud& X, const PointCloud& Y) {
  check_nonempty(X, Y, "emd_hungarian");
  if (X.size() != Y.size()) throw std::invalid_argument("emd_hungarian: size mismatch");
  const int n = static_cast<int>(X.size());
  if (n > 512) throw std::invalid_argument("emd_hungarian: N > 512 guard (O(n^3))");

  std::vector<double> cost(static_cast<size_t>(n) * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) cost[static_cast<size_t>(i) * n + j] = euclid_dist(X[i], Y[j]);

  // Jonker-Volgenant style shortest augmenting path with potentials (1-based)
  const double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, kInf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      int i0 = p[j0], j1 = 0;
      double delta = kInf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        double cur = cost[static_cast<size_t>(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }

  Assignment a;
  a.perm.assign(n, -1);
  double total = 0.0;
  for (int j = 1; j <= n; ++j) {
    a.perm[p[j] - 1] = j - 1;
    total += cost[static_cast<size_t>(p[j] - 1) * n + (j - 1)];
  }
  a.cost = total / n;
  return {a.cost, a};
}

ReconLoss recon_loss(const PointCloud& X, const PointCloud& Y, LossVariant variant,
                     const AuctionConfig& cfg) {
  if (X.size() != Y.size()) throw std::invalid_argument("recon_loss: size mismatch");
  ReconLoss out;
  out.grad_x.assign(X.size(), Point3{0, 0, 0});
  if (variant != LossVariant::kEmdOnly) {
    out.cd = chamfer(X, Y);
    auto g = chamfer_grad(X, Y);
    for (size_t i = 0; i < X.size(); ++i)
      for (int k = 0; k < 3; ++k) out.grad_x[i][k] += g[i][k];
  }
  if (variant != LossVariant::kChamferOnly) {
    auto [cost, a] = emd_auction(X, Y, cfg);
    out.emd = cost;
    auto g = emd_grad(X, Y, a);
    for (size_t i = 0; i < X.size(); ++i)
      for (int k = 0; k < 3; ++k) out.grad_x[i][k] += g[i][k];
  }
  out.value = (variant == LossVariant::kChamferOnly ? out.cd
               : variant == LossVariant::kEmdOnly   ? out.emd
                                                    : out.cd + out.emd);
  return out;
}

}  // namespace starnet
