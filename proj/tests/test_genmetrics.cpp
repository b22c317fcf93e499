#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <set>

#include "starnet/genmetrics.hpp"

using namespace starnet;

namespace {

std::mt19937_64 rng(2024);

PointCloud cloud_at(double cx, double cy, double cz, size_t n = 24, double spread = 0.05) {
  std::uniform_real_distribution<double> u(-spread, spread);
  PointCloud c;
  c.points.resize(n);
  for (auto& p : c.points) p = {cx + u(rng), cy + u(rng), cz + u(rng)};
  return c;
}

CloudSet random_set(size_t count, const std::string& label) {
  std::uniform_real_distribution<double> u(-0.8, 0.8);
  CloudSet s;
  s.label = label;
  for (size_t i = 0; i < count; ++i) s.clouds.push_back(cloud_at(u(rng), u(rng), u(rng)));
  return s;
}

double dist_of(BaseDistance base, const PointCloud& a, const PointCloud& b) {
  return base == BaseDistance::kChamfer ? chamfer(a, b) : emd_auction(a, b).first;
}

double brute_mmd(const CloudSet& ref, const CloudSet& gen, BaseDistance base) {
  double total = 0.0;
  for (const auto& r : ref.clouds) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& g : gen.clouds) best = std::min(best, dist_of(base, r, g));
    total += best;
  }
  return total / static_cast<double>(ref.size());
}

double brute_cov(const CloudSet& ref, const CloudSet& gen, BaseDistance base) {
  std::set<size_t> matched;
  for (const auto& g : gen.clouds) {
    double best = std::numeric_limits<double>::infinity();
    size_t arg = 0;
    for (size_t j = 0; j < ref.size(); ++j) {
      double d = dist_of(base, ref.clouds[j], g);
      if (d < best) best = d, arg = j;
    }
    matched.insert(arg);
  }
  return static_cast<double>(matched.size()) / static_cast<double>(ref.size());
}

double brute_one_nna(const CloudSet& ref, const CloudSet& gen, BaseDistance base) {
  std::vector<const PointCloud*> all;
  std::vector<int> lab;  // 0 = ref, 1 = gen
  for (const auto& c : ref.clouds) all.push_back(&c), lab.push_back(0);
  for (const auto& c : gen.clouds) all.push_back(&c), lab.push_back(1);
  int correct = 0;
  for (size_t i = 0; i < all.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    size_t arg = i;
    for (size_t j = 0; j < all.size(); ++j) {
      if (j == i) continue;
      double d = dist_of(base, *all[i], *all[j]);
      if (d < best) best = d, arg = j;
    }
    if (lab[arg] == lab[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(all.size());
}

}  // namespace

TEST_CASE("pairwise matrix matches direct distances and parallel fill is deterministic") {
  CloudSet A = random_set(5, "a");
  CloudSet B = random_set(7, "b");
  for (BaseDistance base : {BaseDistance::kChamfer, BaseDistance::kEmd}) {
    PairwiseDistances M = pairwise_distances(A, B, base);
    REQUIRE(M.rows == 5);
    REQUIRE(M.cols == 7);
    for (size_t i = 0; i < 5; ++i)
      for (size_t j = 0; j < 7; ++j)
        CHECK(M.at(i, j) == doctest::Approx(dist_of(base, A.clouds[i], B.clouds[j])).epsilon(1e-12));
    PairwiseDistances M2 = pairwise_distances(A, B, base);
    CHECK(M.matrix == M2.matrix);
  }
}

TEST_CASE("mmd matches brute force and vanishes when gen duplicates ref") {
  CloudSet ref = random_set(6, "ref");
  CloudSet gen = random_set(9, "gen");
  for (BaseDistance base : {BaseDistance::kChamfer, BaseDistance::kEmd}) {
    double m = mmd(ref, gen, base);
    CHECK(m == doctest::Approx(brute_mmd(ref, gen, base)).epsilon(1e-9));
    CHECK(m >= 0.0);
  }
  CloudSet dup = ref;
  CHECK(mmd(ref, dup, BaseDistance::kChamfer) == doctest::Approx(0.0));
}

TEST_CASE("coverage matches brute force and hits its extremes") {
  CloudSet ref = random_set(8, "ref");
  CloudSet gen = random_set(8, "gen");
  for (BaseDistance base : {BaseDistance::kChamfer, BaseDistance::kEmd})
    CHECK(coverage(ref, gen, base) == doctest::Approx(brute_cov(ref, gen, base)).epsilon(1e-12));

  // a duplicate of ref covers everything
  CHECK(coverage(ref, ref, BaseDistance::kChamfer) == doctest::Approx(1.0));

  // all generators collapsed onto one mode cover exactly one reference
  CloudSet collapsed;
  for (int i = 0; i < 8; ++i) collapsed.clouds.push_back(cloud_at(0.9, 0.9, 0.9));
  CHECK(coverage(ref, collapsed, BaseDistance::kChamfer) == doctest::Approx(1.0 / 8.0));
}

TEST_CASE("coverage and mmd reuse of a precomputed matrix") {
  CloudSet ref = random_set(6, "ref");
  CloudSet gen = random_set(6, "gen");
  PairwiseDistances M = pairwise_distances(ref, gen, BaseDistance::kChamfer);
  CHECK(mmd(M) == doctest::Approx(mmd(ref, gen, BaseDistance::kChamfer)).epsilon(1e-12));
  CHECK(coverage(M) == doctest::Approx(coverage(ref, gen, BaseDistance::kChamfer)).epsilon(1e-12));
}

TEST_CASE("1-nna matches brute force, ideal and degenerate regimes") {
  CloudSet ref = random_set(7, "ref");
  CloudSet gen = random_set(7, "gen");
  for (BaseDistance base : {BaseDistance::kChamfer, BaseDistance::kEmd})
    CHECK(one_nna(ref, gen, base) == doctest::Approx(brute_one_nna(ref, gen, base)).epsilon(1e-12));

  // widely separated sets: every neighbor shares the sample's own label
  CloudSet far_ref, far_gen;
  for (int i = 0; i < 6; ++i) {
    far_ref.clouds.push_back(cloud_at(-0.8 + 0.1 * i, -0.8, -0.8, 24, 0.01));
    far_gen.clouds.push_back(cloud_at(0.8 - 0.1 * i, 0.8, 0.8, 24, 0.01));
  }
  CHECK(one_nna(far_ref, far_gen, BaseDistance::kChamfer) == doctest::Approx(1.0));
}

TEST_CASE("jsd basics") {
  CloudSet ref = random_set(10, "ref");
  CHECK(jsd(ref, ref) == doctest::Approx(0.0).epsilon(1e-12));

  // disjoint octants: divergence attains the base-2 maximum of 1
  CloudSet lo, hi;
  for (int i = 0; i < 4; ++i) {
    lo.clouds.push_back(cloud_at(-0.6, -0.6, -0.6, 64, 0.2));
    hi.clouds.push_back(cloud_at(0.6, 0.6, 0.6, 64, 0.2));
  }
  double d = jsd(lo, hi);
  CHECK(d == doctest::Approx(1.0).epsilon(1e-9));

  CloudSet gen = random_set(10, "gen");
  double dv = jsd(ref, gen);
  CHECK(dv >= 0.0);
  CHECK(dv <= 1.0);
  CHECK(jsd(ref, gen) == doctest::Approx(jsd(gen, ref)).epsilon(1e-12));

  // points outside the cube are clamped and counted
  CloudSet outside;
  outside.clouds.push_back(PointCloud{{{2.0, 0.0, 0.0}, {0.0, 0.0, 0.0}}});
  int clamped = 0;
  jsd(ref, outside, 28, &clamped);
  CHECK(clamped == 1);
}

TEST_CASE("jsd permutation invariance within sets") {
  CloudSet ref = random_set(6, "ref");
  CloudSet gen = random_set(6, "gen");
  double base = jsd(ref, gen);
  CloudSet gen2 = gen;
  std::shuffle(gen2.clouds.begin(), gen2.clouds.end(), rng);
  for (auto& c : gen2.clouds) std::shuffle(c.points.begin(), c.points.end(), rng);
  CHECK(jsd(ref, gen2) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("report serialization round trip") {
  MetricsReport r;
  r.jsd = 0.0321;
  r.mmd_cd = 0.00072;
  r.mmd_emd = 0.052;
  r.cov_cd = 0.42;
  r.cov_emd = 0.39;
  r.nna_cd = 0.71;
  r.nna_emd = 0.68;
  std::string text = r.serialize();
  MetricsReport back = MetricsReport::parse(text);
  CHECK(back.jsd == doctest::Approx(r.jsd).epsilon(1e-9));
  CHECK(back.mmd_cd == doctest::Approx(r.mmd_cd).epsilon(1e-9));
  CHECK(back.mmd_emd == doctest::Approx(r.mmd_emd).epsilon(1e-9));
  CHECK(back.cov_cd == doctest::Approx(r.cov_cd).epsilon(1e-9));
  CHECK(back.cov_emd == doctest::Approx(r.cov_emd).epsilon(1e-9));
  CHECK(back.nna_cd == doctest::Approx(r.nna_cd).epsilon(1e-9));
  CHECK(back.nna_emd == doctest::Approx(r.nna_emd).epsilon(1e-9));
}

TEST_CASE("evaluate_generation end to end") {
  CloudSet ref = random_set(6, "ref");
  CloudSet gen = random_set(6, "gen");
  MetricsReport r = evaluate_generation(ref, gen);
  CHECK(r.jsd >= 0.0);
  CHECK(r.mmd_cd > 0.0);
  CHECK(r.cov_cd > 0.0);
  CHECK(r.cov_cd <= 1.0);
  CHECK(r.nna_cd >= 0.0);
  CHECK(r.nna_cd <= 1.0);
  CHECK_FALSE(r.degenerate);

  MetricsReport dup = evaluate_generation(ref, ref);
  CHECK(dup.degenerate);
}
