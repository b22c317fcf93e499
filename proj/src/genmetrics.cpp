#include "starnet/genmetrics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "starnet/data.hpp"

namespace starnet {

namespace {

double base_distance(const PointCloud& a, const PointCloud& b, BaseDistance base) {
  if (base == BaseDistance::kChamfer) return chamfer(a, b);
  return emd_auction(a, b).first;
}

void check_sets(const CloudSet& ref, const CloudSet& gen, const char* op) {
  if (ref.clouds.empty() || gen.clouds.empty())
    throw std::invalid_argument(std::string(op) + ": empty cloud set");
}

}  // namespace

PairwiseDistances pairwise_distances(const CloudSet& A, const CloudSet& B, BaseDistance base) {
  check_sets(A, B, "pairwise_distances");
  PairwiseDistances d;
  d.rows = A.size();
  d.cols = B.size();
  d.base = base;
  d.matrix.assign(d.rows * d.cols, 0.0);
  const size_t total = d.rows * d.cols;
  unsigned workers = std::min(4u, std::max(1u, std::thread::hardware_concurrency()));
  if (total < 16) workers = 1;
  std::atomic<size_t> next{0};
  auto work = [&] {
    size_t cell;
    while ((cell = next.fetch_add(1)) < total) {
      size_t i = cell / d.cols, j = cell % d.cols;
      d.matrix[cell] = base_distance(A.clouds[i], B.clouds[j], base);
    }
  };
  std::vector<std::thread> pool;
  for (unsigned w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  return d;
}

double jsd(const CloudSet& ref, const CloudSet& gen, int grid_res, int* clamped_out) {
  check_sets(ref, gen, "jsd");
  if (grid_res < 1) throw std::invalid_argument("jsd: grid_res must be >= 1");
  const size_t bins = static_cast<size_t>(grid_res) * grid_res * grid_res;
  int clamped = 0;
  auto histogram = [&](const CloudSet& s) {
    std::vector<double> h(bins, 0.0);
    double total = 0.0;
    for (const auto& cloud : s.clouds)
      for (const auto& p : cloud.points) {
        int idx[3];
        for (int k = 0; k < 3; ++k) {
          double t = (p[k] + 1.0) * 0.5;  // [-1,1] -> [0,1]
          if (t < 0.0 || t > 1.0) {
            ++clamped;
            t = std::clamp(t, 0.0, 1.0);
          }
          idx[k] = std::min(grid_res - 1, static_cast<int>(t * grid_res));
        }
        h[(static_cast<size_t>(idx[0]) * grid_res + idx[1]) * grid_res + idx[2]] += 1.0;
        total += 1.0;
      }
    for (auto& v : h) v /= total;
    return h;
  };
  std::vector<double> P = histogram(ref), Q = histogram(gen);
  if (clamped_out) *clamped_out = clamped;
  double kl_pm = 0.0, kl_qm = 0.0;
  for (size_t i = 0; i < bins; ++i) {
    double m = 0.5 * (P[i] + Q[i]);
    if (P[i] > 0.0) kl_pm += P[i] * std::log2(P[i] / m);
    if (Q[i] > 0.0) kl_qm += Q[i] * std::log2(Q[i] / m);
  }
  return
      0.5 * kl_pm + 0.5 * kl_qm;
}

double mmd(const PairwiseDistances& ref_by_gen) {
  double acc = 0.0;
  for (size_t i = 0; i < ref_by_gen.rows; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (size_t j = 0; j < ref_by_gen.cols; ++j) best = std::min(best, ref_by_gen.at(i, j));
    acc += best;
  }
  return acc / static_cast<double>(ref_by_gen.rows);
}

double coverage(const PairwiseDistances& ref_by_gen) {
  std::set<size_t> matched;
  for (size_t j = 0; j < ref_by_gen.cols; ++j) {
    double best = std::numeric_limits<double>::infinity();
    size_t bi = 0;
    for (size_t i = 0; i < ref_by_gen.rows; ++i) {
      if (ref_by_gen.at(i, j) < best) {
        best = ref_by_gen.at(i, j);
        bi = i;
      }
    }
    matched.insert(bi);
  }
  return static_cast<double>(matched.size()) / static_cast<double>(ref_by_gen.rows);
}

double mmd(const CloudSet& ref, const CloudSet& gen, BaseDistance base) {
  return mmd(pairwise_distances(ref, gen, base));
}

double coverage(const CloudSet& ref, const CloudSet& gen, BaseDistance base) {
  return coverage(pairwise_distances(ref, gen, base));
}

double one_nna(const CloudSet& ref, const CloudSet& gen, BaseDistance base) {
  check_sets(ref, gen, "one_nna");
  if (ref.size() != gen.size()) throw std::invalid_argument("one_nna: size mismatch");
  if (ref.size() < 2) throw std::invalid_argument("one_nna: need at least 2 per set");
  // union: ref first, then gen
  CloudSet all;
  all.clouds = ref.clouds;
  all.clouds.insert(all.clouds.end(), gen.clouds.begin(), gen.clouds.end());
  PairwiseDistances d = pairwise_distances(all, all, base);
  const size_t n = all.size(), half = ref.size();
  size_t correct = 0;
  for (size_t i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    size_t bj = 0;
    for (size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      if (d.at(i, j) < best) {
        best = d.at(i, j);
        bj = j;
      }
    }
    if ((i < half) == (bj < half)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

std::string MetricsReport::serialize() const {
  std::ostringstream os;
  char buf[64];
  auto line = [&](const char* key, double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    os << key << " = " << buf << '\n';
  };
  line("jsd", jsd);
  line("mmd.cd", mmd_cd);
  line("mmd.emd", mmd_emd);
  line("cov.cd", cov_cd);
  line("cov.emd", cov_emd);
  line("nna.cd", nna_cd);
  line("nna.emd", nna_emd);
  os << "degenerate = " << (degenerate ? 1 : 0) << '\n';
  // rescaled copies in the units benchmark tables usually report
  line("scaled.jsd_x100", jsd * 1e2);
  line("scaled.mmd_cd_x10000", mmd_cd * 1e4);
  line("scaled.mmd_emd_x100", mmd_emd * 1e2);
  line("scaled.cov_cd_pct", cov_cd * 100.0);
  line("scaled.cov_emd_pct", cov_emd * 100.0);
  line("scaled.nna_cd_pct", nna_cd * 100.0);
  line("scaled.nna_emd_pct", nna_emd * 100.0);
  return os.str();
}

MetricsReport MetricsReport::parse(const std::string& text) {
  MetricsReport r;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    size_t eq = line.find(" = ");
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq);
    double v = std::stod(line.substr(eq + 3));
    if (key == "jsd") r.jsd = v;
    else if (key == "mmd.cd") r.mmd_cd = v;
    else if (key == "mmd.emd") r.mmd_emd = v;
    else if (key == "cov.cd") r.cov_cd = v;
    else if (key == "cov.emd") r.cov_emd = v;
    else if (key == "nna.cd") r.nna_cd = v;
    else if (key == "nna.emd") r.nna_emd = v;
    else if (key == "degenerate") r.degenerate = v != 0.0;
  }
  return r;
}

MetricsReport evaluate_generation(const CloudSet& ref, const CloudSet& gen) {
  check_sets(ref, gen, "evaluate_generation");
  if (ref.size() != gen.size())
    throw std::invalid_argument("evaluate_generation: sets must have equal size");
  auto normalized = [](const CloudSet& s) {
    CloudSet out;
    out.label = s.label;
    out.clouds.reserve(s.size());
    for (const auto& c : s.clouds) out.clouds.push_back(normalize_unit_cube(c).first);
    return out;
  };
  CloudSet r = normalized(ref), g = normalized(gen);
  MetricsReport rep;
  rep.jsd = jsd(r, g, 28);
  PairwiseDistances cd_m = pairwise_distances(r, g, BaseDistance::kChamfer);
  PairwiseDistances emd_m = pairwise_distances(r, g, BaseDistance::kEmd);
  rep.mmd_cd = mmd(cd_m);
  rep.mmd_emd = mmd(emd_m);
  rep.cov_cd = coverage(cd_m);
  rep.cov_emd = coverage(emd_m);
  rep.nna_cd = one_nna(r, g, BaseDistance::kChamfer);
  rep.nna_emd = one_nna(r, g, BaseDistance::kEmd);
  rep.degenerate = rep.mmd_cd == 0.0;
  return rep;
}

}  // namespace starnet
