#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <random>
#include <set>

#include "starnet/data.hpp"

using namespace starnet;
namespace fs = std::filesystem;

namespace {

std::mt19937_64 rng(77);

PointCloud random_cloud(size_t n, double span = 2.0) {
  std::uniform_real_distribution<double> u(-span, span);
  PointCloud c;
  c.points.resize(n);
  for (auto& p : c.points) p = {u(rng), u(rng), u(rng)};
  return c;
}

fs::path tmpdir() {
  fs::path d = fs::temp_directory_path() / "starnet_data_test";
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST_CASE("text and binary cloud round trips") {
  PointCloud X = random_cloud(50);
  fs::path t = tmpdir() / "cloud.xyz";
  fs::path b = tmpdir() / "cloud.pcb";

  save_cloud(t.string(), X);
  PointCloud Xt = load_cloud(t.string());
  REQUIRE(Xt.size() == X.size());
  for (size_t i = 0; i < X.size(); ++i)
    for (int k = 0; k < 3; ++k)
      CHECK(Xt[i][static_cast<size_t>(k)] ==
            doctest::Approx(X[i][static_cast<size_t>(k)]).epsilon(1e-6));

  save_cloud(b.string(), X);
  PointCloud Xb = load_cloud(b.string());
  REQUIRE(Xb.size() == X.size());
  // binary stores f32; load must reproduce those exactly
  for (size_t i = 0; i < X.size(); ++i)
    for (int k = 0; k < 3; ++k)
      CHECK(Xb[i][static_cast<size_t>(k)] ==
            static_cast<double>(static_cast<float>(X[i][static_cast<size_t>(k)])));

  CHECK_THROWS(load_cloud((tmpdir() / "missing.xyz").string()));
  fs::path junk = tmpdir() / "junk.pcb";
  { FILE* f = fopen(junk.string().c_str(), "wb"); fputs("NOPE", f); fclose(f); }
  CHECK_THROWS(load_cloud(junk.string()));
}

TEST_CASE("normalize_unit_cube properties and inverse") {
  PointCloud X = random_cloud(64, 5.0);
  auto [Xn, rec] = normalize_unit_cube(X);
  double max_abs = 0.0;
  for (const auto& p : Xn.points)
    for (double v : p) max_abs = std::max(max_abs, std::fabs(v));
  CHECK(max_abs <= 1.0 + 1e-12);
  CHECK(max_abs == doctest::Approx(1.0));  // boundary touched

  PointCloud back = denormalize(Xn, rec);
  for (size_t i = 0; i < X.size(); ++i)
    for (int k = 0; k < 3; ++k)
      CHECK(back[i][static_cast<size_t>(k)] ==
            doctest::Approx(X[i][static_cast<size_t>(k)]).epsilon(1e-12));

  // already-normalized data is a fixed point up to recentring
  auto [Xn2, rec2] = normalize_unit_cube(Xn);
  CHECK(rec2.scale == doctest::Approx(1.0).epsilon(1e-9));

  PointCloud degenerate{{{1, 1, 1}, {1, 1, 1}}};
  CHECK_THROWS_AS(normalize_unit_cube(degenerate), std::invalid_argument);
}

TEST_CASE("sample_points with and without replacement") {
  PointCloud X = random_cloud(10);
  PointCloud sub = sample_points(X, 6, 42);
  REQUIRE(sub.size() == 6);
  std::set<std::array<double, 3>> originals(X.points.begin(), X.points.end());
  std::set<std::array<double, 3>> chosen;
  for (const auto& p : sub.points) {
    CHECK(originals.count(p) == 1);
    chosen.insert(p);  // without replacement -> all distinct
  }
  CHECK(chosen.size() == 6);

  PointCloud up = sample_points(X, 25, 42);
  REQUIRE(up.size() == 25);
  for (const auto& p : up.points) CHECK(originals.count(p) == 1);

  // determinism under the seed
  PointCloud again = sample_points(X, 6, 42);
  CHECK(again.points == sub.points);
  PointCloud other = sample_points(X, 6, 43);
  CHECK(other.points != sub.points);
}

TEST_CASE("manifest split is a per-category 85/15 partition") {
  std::vector<ManifestEntry> entries;
  for (int i = 0; i < 20; ++i) entries.push_back({"a" + std::to_string(i), "chair", true});
  for (int i = 0; i < 7; ++i) entries.push_back({"b" + std::to_string(i), "table", true});
  DatasetManifest m = split_manifest(entries, 9);

  auto train = m.split(true);
  auto test = m.split(false);
  CHECK(train.size() + test.size() == entries.size());

  std::map<std::string, int> train_per, test_per;
  std::set<std::string> seen;
  for (const auto& e : train) train_per[e.category]++, seen.insert(e.path);
  for (const auto& e : test) test_per[e.category]++, seen.insert(e.path);
  CHECK(seen.size() == entries.size());  // disjoint cover
  CHECK(train_per["chair"] == 17);       // ceil(0.85 * 20)
  CHECK(test_per["chair"] == 3);
  CHECK(train_per["table"] == 6);        // ceil(0.85 * 7) = 6
  CHECK(test_per["table"] == 1);

  // same seed -> same split; different seed -> (almost surely) different
  DatasetManifest m2 = split_manifest(entries, 9);
  for (size_t i = 0; i < m.entries.size(); ++i) {
    CHECK(m.entries[i].path == m2.entries[i].path);
    CHECK(m.entries[i].train == m2.entries[i].train);
  }
}

TEST_CASE("manifest file round trip") {
  std::vector<ManifestEntry> entries;
  for (int i = 0; i < 12; ++i)
    entries.push_back({"clouds/c" + std::to_string(i) + ".xyz", i % 2 ? "box" : "sphere", true});
  DatasetManifest m = split_manifest(entries, 3);
  fs::path p = tmpdir() / "manifest.tsv";
  save_manifest(p.string(), m);
  DatasetManifest back = load_manifest(p.string());
  REQUIRE(back.entries.size() == m.entries.size());
  CHECK(back.seed == m.seed);
  for (size_t i = 0; i < m.entries.size(); ++i) {
    CHECK(back.entries[i].path == m.entries[i].path);
    CHECK(back.entries[i].category == m.entries[i].category);
    CHECK(back.entries[i].train == m.entries[i].train);
  }
}

TEST_CASE("synthetic shapes lie on their surfaces") {
  ShapeParams sphere{{0.8}, 0.0};
  PointCloud S = synth_shape(ShapeFamily::kSphere, sphere, 500, 1);
  REQUIRE(S.size() == 500);
  for (const auto& p : S.points) {
    double r = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
    CHECK(r == doctest::Approx(0.8).epsilon(1e-9));
  }

  ShapeParams box{{0.5, 0.3, 0.7}, 0.0};
  PointCloud B = synth_shape(ShapeFamily::kBox, box, 500, 2);
  for (const auto& p : B.points) {
    bool on_face = std::fabs(std::fabs(p[0]) - 0.5) < 1e-9 ||
                   std::fabs(std::fabs(p[1]) - 0.3) < 1e-9 ||
                   std::fabs(std::fabs(p[2]) - 0.7) < 1e-9;
    CHECK(on_face);
    CHECK(std::fabs(p[0]) <= 0.5 + 1e-9);
    CHECK(std::fabs(p[1]) <= 0.3 + 1e-9);
    CHECK(std::fabs(p[2]) <= 0.7 + 1e-9);
  }

  ShapeParams cyl{{0.4, 0.6}, 0.0};
  PointCloud C = synth_shape(ShapeFamily::kCylinder, cyl, 500, 3);
  for (const auto& p : C.points) {
    double r = std::sqrt(p[0] * p[0] + p[2] * p[2]);
    bool on_side = std::fabs(r - 0.4) < 1e-9 && std::fabs(p[1]) <= 0.6 + 1e-9;
    bool on_cap = std::fabs(std::fabs(p[1]) - 0.6) < 1e-9 && r <= 0.4 + 1e-9;
    CHECK((on_side || on_cap));
  }

  // determinism and jitter behavior
  PointCloud S2 = synth_shape(ShapeFamily::kSphere, sphere, 500, 1);
  CHECK(S2.points == S.points);
  ShapeParams jittered{{0.8}, 0.01};
  PointCloud J = synth_shape(ShapeFamily::kSphere, jittered, 500, 1);
  double off = 0.0;
  for (const auto& p : J.points)
    off = std::max(off, std::fabs(std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]) - 0.8));
  CHECK(off > 1e-6);
  CHECK(off < 0.1);
}

TEST_CASE("box faces occupied proportionally to area") {
  // half-extents 0.5/0.5/0.5: all six faces equal area
  ShapeParams box{{0.5, 0.5, 0.5}, 0.0};
  PointCloud B = synth_shape(ShapeFamily::kBox, box, 6000, 11);
  int face_counts[6] = {0};
  for (const auto& p : B.points) {
    for (int axis = 0; axis < 3; ++axis)
      if (std::fabs(std::fabs(p[static_cast<size_t>(axis)]) - 0.5) < 1e-9) {
        face_counts[axis * 2 + (p[static_cast<size_t>(axis)] > 0 ? 0 : 1)]++;
        break;
      }
  }
  // chi-square against a uniform expectation; 6 cells, 5 dof, 0.999 quantile ~ 20.5
  double chi2 = 0.0;
  for (int c : face_counts) {
    double e = 1000.0;
    chi2 += (c - e) * (c - e) / e;
  }
  CHECK(chi2 < 20.5);
}

TEST_CASE("two-lobe family produces two separated clusters") {
  ShapeParams lobes{{0.3, 1.0}, 0.0};
  PointCloud T = synth_shape(ShapeFamily::kTwoLobe, lobes, 400, 5);
  int left = 0, right = 0;
  for (const auto& p : T.points) (p[0] < 0 ? left : right)++;
  CHECK(left > 100);
  CHECK(right > 100);
}

TEST_CASE("family names round trip and bad input is rejected") {
  for (ShapeFamily f : {ShapeFamily::kSphere, ShapeFamily::kBox, ShapeFamily::kCylinder,
                        ShapeFamily::kTwoLobe}) {
    auto back = shape_family_from_name(shape_family_name(f));
    REQUIRE(back.has_value());
    CHECK(*back == f);
  }
  CHECK_FALSE(shape_family_from_name("teapot").has_value());
  // missing parameters fall back to family defaults (unit sphere here)
  PointCloud d = synth_shape(ShapeFamily::kSphere, ShapeParams{{}, 0.0}, 10, 1);
  double r = std::sqrt(d[0][0] * d[0][0] + d[0][1] * d[0][1] + d[0][2] * d[0][2]);
  CHECK(r == doctest::Approx(1.0).epsilon(1e-9));
  CHECK_THROWS(synth_shape(ShapeFamily::kSphere, ShapeParams{{1.0}, 0.0}, 0, 1));
}

TEST_CASE("gravity-axis rotation preserves height and radius") {
  PointCloud X = random_cloud(40);
  PointCloud R = rotate_gravity_axis(X, 1.1);
  for (size_t i = 0; i < X.size(); ++i) {
    CHECK(R[i][1] == doctest::Approx(X[i][1]).epsilon(1e-12));  // y untouched
    double r0 = std::hypot(X[i][0], X[i][2]);
    double r1 = std::hypot(R[i][0], R[i][2]);
    CHECK(r1 == doctest::Approx(r0).epsilon(1e-12));
  }
  // full turn is identity
  PointCloud F = rotate_gravity_axis(X, 2.0 * std::acos(-1.0));
  for (size_t i = 0; i < X.size(); ++i)
    for (int k = 0; k < 3; ++k)
      CHECK(F[i][static_cast<size_t>(k)] ==
            doctest::Approx(X[i][static_cast<size_t>(k)]).epsilon(1e-9));
}

TEST_CASE("latent table round trip") {
  std::vector<LatentRow> rows;
  std::normal_distribution<double> g;
  for (int i = 0; i < 5; ++i) {
    LatentRow r;
    r.label = "code_" + std::to_string(i);
    for (int k = 0; k < 16; ++k) r.code.push_back(g(rng));
    rows.push_back(r);
  }
  fs::path p = tmpdir() / "latents.tsv";
  save_latent_table(p.string(), rows);
  auto back = load_latent_table(p.string());
  REQUIRE(back.size() == rows.size());
  for (size_t i = 0; i < rows.size(); ++i) {
    CHECK(back[i].label == rows[i].label);
    REQUIRE(back[i].code.size() == rows[i].code.size());
    for (size_t k = 0; k < rows[i].code.size(); ++k)
      CHECK(back[i].code[k] == doctest::Approx(rows[i].code[k]).epsilon(1e-12));
  }
}
