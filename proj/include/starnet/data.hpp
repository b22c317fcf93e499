#pragma once

// Point-cloud file I/O, unit-cube normalization, dataset manifests and
// sampling, and the synthetic shape families standing in for ShapeNet.

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "starnet/geomdist.hpp"

namespace starnet {

struct NormalizationRecord {
  Point3 center{0, 0, 0};
  double scale = 1.0;
};

// Text `.xyz` (one point per line, three floats) or binary "PCD1" by
// extension: `.pcb` is binary, anything else parses as text.
PointCloud load_cloud(const std::string& path);
void save_cloud_text(const std::string& path, const PointCloud& X);
void save_cloud_binary(const std::string& path, const PointCloud& X);
void save_cloud(const std::string& path, const PointCloud& X);  // by extension

// Bounding-box center + max half-extent; output fits [-1,1]^3 with at least
// one coordinate on the boundary.
std::pair<PointCloud, NormalizationRecord> normalize_unit_cube(const PointCloud& X);
PointCloud denormalize(const PointCloud& X_norm, const NormalizationRecord& rec);

// Uniform sampling: with replacement when n > |X|, without otherwise.
PointCloud sample_points(const PointCloud& X, size_t n, uint64_t seed);

struct ManifestEntry {
  std::string path;
  std::string category;
  bool train = true;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  uint64_t seed = 0;

  std::vector<ManifestEntry> split(bool train) const;
};

// Per-category shuffled 85/15 split, train rounded up.
DatasetManifest split_manifest(std::vector<ManifestEntry> entries, uint64_t seed);

void save_manifest(const std::string& path, const DatasetManifest& m);
DatasetManifest load_manifest(const std::string& path);

enum class ShapeFamily { kSphere, kBox, kCylinder, kTwoLobe };

std::optional<ShapeFamily> shape_family_from_name(const std::string& name);
std::string shape_family_name(ShapeFamily f);

struct ShapeParams {
  // semantics per family: sphere {radius}; box {half-extents xyz};
  // cylinder {radius, half-height}; two-lobe {lobe radius, lobe separation}
  std::vector<double> values;
  double jitter_sigma = 0.0;
};

// n points sampled uniformly by surface area; deterministic under seed.
PointCloud synth_shape(ShapeFamily family, const ShapeParams& params, size_t n, uint64_t seed);

// Draws family parameters from sensible ranges, for dataset synthesis.
ShapeParams random_shape_params(ShapeFamily family, std::mt19937_64& rng);

// Rotation about the y axis (gravity-up convention).
PointCloud rotate_gravity_axis(const PointCloud& X, double angle);

struct LatentRow {
  std::string label;
  std::vector<double> code;
};

// `label<TAB>v1 v2 ... vK` lines.
void save_latent_table(const std::string& path, const std::vector<LatentRow>& rows);
std::vector<LatentRow> load_latent_table(const std::string& path);

}  // namespace starnet
