#include "starnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace starnet {

namespace {

[[noreturn]] void io_error(const std::string& path, const std::string& what) {
  throw std::runtime_error("data: " + path + ": " + what);
}

bool has_suffix(const std::string& s, const std::string& suf) {
  return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}

constexpr char kBinaryMagic[4] = {'P', 'C', 'D', '1'};

PointCloud load_cloud_binary(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) io_error(path, "cannot open");
  char magic[4];
  if (!f.read(magic, 4) || std::memcmp(magic, kBinaryMagic, 4) != 0)
    io_error(path, "bad magic, expected PCD1");
  uint32_t count = 0;
  if (!f.read(reinterpret_cast<char*>(&count), 4)) io_error(path, "truncated header");
  PointCloud X;
  X.points.resize(count);
  std::vector<float> buf(static_cast<size_t>(count) * 3);
  if (!f.read(reinterpret_cast<char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float))))
    io_error(path, "truncated point data");
  for (uint32_t i = 0; i < count; ++i)
    for (int k = 0; k < 3; ++k) {
      float v = buf[static_cast<size_t>(i) * 3 + k];
      if (!std::isfinite(v)) io_error(path, "non-finite coordinate");
      X[i][k] = v;
    }
  if (X.empty()) io_error(path, "empty cloud");
  return X;
}

PointCloud load_cloud_text(const std::string& path) {
  std::ifstream f(path);
  if (!f) io_error(path, "cannot open");
  PointCloud X;
  std::string line;
  size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    Point3 p;
    if (!(ss >> p[0] >> p[1] >> p[2]))
      io_error(path, "malformed line " + std::to_string(lineno));
    std::string extra;
    if (ss >> extra) io_error(path, "trailing tokens on line " + std::to_string(lineno));
    for (double v : p)
      if (!std::isfinite(v)) io_error(path, "non-finite value on line " + std::to_string(lineno));
    X.points.push_back(p);
  }
  if (X.empty()) io_error(path, "empty cloud file");
  return X;
}

}  // namespace

PointCloud load_cloud(const std::string& path) {
  return has_suffix(path, ".pcb") ? load_cloud_binary(path) : load_cloud_text(path);
}

void save_cloud_text(const std::string& path, const PointCloud& X) {
  std::ofstream f(path);
  if (!f) io_error(path, "cannot open for writing");
  char buf[128];
  for (const auto& p : X.points) {
    // 9 significant digits round-trips f32 exactly
    std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g\n", static_cast<float>(p[0]),
                  static_cast<float>(p[1]), static_cast<float>(p[2]));
    f << buf;
  }
  if (!f) io_error(path, "write failed");
}

void save_cloud_binary(const std::string& path, const PointCloud& X) {
  std::ofstream f(path, std::ios::binary);
  if (!f) io_error(path, "cannot open for writing");
  f.write(kBinaryMagic, 4);
  uint32_t count = static_cast<uint32_t>(X.size());
  f.write(reinterpret_cast<const char*>(&count), 4);
  std::vector<float> buf(static_cast<size_t>(count) * 3);
  for (uint32_t i = 0; i < count; ++i)
    for (int k = 0; k < 3; ++k) buf[static_cast<size_t>(i) * 3 + k] = static_cast<float>(X[i][k]);
  f.write(reinterpret_cast<const char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!f) io_error(path, "write failed");
}

void save_cloud(const std::string& path, const PointCloud& X) {
  if (has_suffix(path, ".pcb"))
    save_cloud_binary(path, X);
  else
    save_cloud_text(path, X);
}

std::pair<PointCloud, NormalizationRecord> normalize_unit_cube(const PointCloud& X) {
  if (X.empty()) throw std::invalid_argument("normalize_unit_cube: empty cloud");
  Point3 lo = X[0], hi = X[0];
  for (const auto& p : X.points)
    for (int k = 0; k < 3; ++k) {
      lo[k] = std::min(lo[k], p[k]);
      hi[k] = std::max(hi[k], p[k]);
    }
  NormalizationRecord rec;
  double max_extent = 0.0;
  for (int k = 0; k < 3; ++k) {
    rec.center[k] = 0.5 * (lo[k] + hi[k]);
    max_extent = std::max(max_extent, hi[k] - lo[k]);
  }
  if (max_extent <= 0.0)
    throw std::invalid_argument("normalize_unit_cube: degenerate cloud (zero extent)");
  rec.scale = 0.5 * max_extent;
  PointCloud out;
  out.points.resize(X.size());
  for (size_t i = 0; i < X.size(); ++i)
    for (int k = 0; k < 3; ++k) out[i][k] = (X[i][k] - rec.center[k]) / rec.scale;
  return {out, rec};
}

PointCloud denormalize(const PointCloud& X_norm, const NormalizationRecord& rec) {
  if (!(rec.scale > 0.0)) throw std::invalid_argument("denormalize: non-positive scale");
  PointCloud out;
  out.points.resize(X_norm.size());
  for (size_t i = 0; i < X_norm.size(); ++i)
    for (int k = 0; k < 3; ++k) out[i][k] = X_norm[i][k] * rec.scale + rec.center[k];
  return out;
}

PointCloud sample_points(const PointCloud& X, size_t n, uint64_t seed) {
  if (X.empty()) throw std::invalid_argument("sample_points: empty source");
  std::mt19937_64 rng(seed);
  PointCloud out;
  out.points.reserve(n);
  if (n > X.size()) {
    std::uniform_int_distribution<size_t> pick(0, X.size() - 1);
    for (size_t i = 0; i < n; ++i) out.points.push_back(X[pick(rng)]);
  } else {
    std::vector<size_t> idx(X.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    for (size_t i = 0; i < n; ++i) out.points.push_back(X[idx[i]]);
  }
  return out;
}

std::vector<ManifestEntry> DatasetManifest::split(bool train) const {
  std::vector<ManifestEntry> out;
  for (const auto& e : entries)
    if (e.train == train) out.push_back(e);
  return out;
}

DatasetManifest split_manifest(std::vector<ManifestEntry> entries, uint64_t seed) {
  if (entries.empty()) throw std::invalid_argument("split_manifest: no entries");
  std::map<std::string, std::vector<size_t>> by_cat;
  for (size_t i = 0; i < entries.size(); ++i) by_cat[entries[i].category].push_back(i);
  std::mt19937_64 rng(seed);
  for (auto& [cat, idx] : by_cat) {
    std::shuffle(idx.begin(), idx.end(), rng);
    // 85/15, train rounded up
    size_t n_train = (idx.size() * 85 + 99) / 100;
    for (size_t k = 0; k < idx.size(); ++k) entries[idx[k]].train = k < n_train;
  }
  DatasetManifest m;
  m.entries = std::move(entries);
  m.seed = seed;
  return m;
}

void save_manifest(const std::string& path, const DatasetManifest& m) {
  std::ofstream f(path);
  if (!f) io_error(path, "cannot open for writing");
  f << "# seed = " << m.seed << '\n';
  for (const auto& e : m.entries)
    f << e.path << '\t' << e.category << '\t' << (e.train ? "train" : "test") << '\n';
  if (!f) io_error(path, "write failed");
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) io_error(path, "cannot open");
  DatasetManifest m;
  std::string line;
  size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      size_t eq = line.find('=');
      if (line.find("seed") != std::string::npos && eq != std::string::npos)
        m.seed = std::stoull(line.substr(eq + 1));
      continue;
    }
    size_t t1 = line.find('\t');
    size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) io_error(path, "malformed manifest line " + std::to_string(lineno));
    ManifestEntry e;
    e.path = line.substr(0, t1);
    e.category = line.substr(t1 + 1, t2 - t1 - 1);
    std::string tag = line.substr(t2 + 1);
    if (tag == "train")
      e.train = true;
    else if (tag == "test")
      e.train = false;
    else
      io_error(path, "bad split tag '" + tag + "' on line " + std::to_string(lineno));
    m.entries.push_back(e);
  }
  if (m.entries.empty()) io_error(path, "empty manifest");
  return m;
}

std::optional<ShapeFamily> shape_family_from_name(const std::string& name) {
  if (name == "sphere") return ShapeFamily::kSphere;
  if (name == "box") return ShapeFamily::kBox;
  if (name == "cylinder") return ShapeFamily::kCylinder;
  if (name == "two_lobe") return ShapeFamily::kTwoLobe;
  return std::nullopt;
}

std::string shape_family_name(ShapeFamily f) {
  switch (f) {
    case ShapeFamily::kSphere: return "sphere";
    case ShapeFamily::kBox: return "box";
    case ShapeFamily::kCylinder: return "cylinder";
    case ShapeFamily::kTwoLobe: return "two_lobe";
  }
  return "?";
}

namespace {

Point3 sphere_point(std::mt19937_64& rng, double radius) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Point3 p{gauss(rng), gauss(rng), gauss(rng)};
  double norm = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
  if (norm < 1e-12) return {radius, 0, 0};
  for (auto& v : p) v *= radius / norm;
  return p;
}

Point3 box_point(std::mt19937_64& rng, const Point3& h) {
  // pick a face with probability proportional to its area
  double areas[3] = {h[1] * h[2], h[0] * h[2], h[0] * h[1]};  // x, y, z faces
  double total = 2.0 * (areas[0] + areas[1] + areas[2]);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  double r = uni(rng) * total;
  int axis = 2;
  double acc = 0.0;
  double sign = 1.0;
  bool done = false;
  for (int k = 0; k < 3 && !done; ++k) {
    for (double s : {-1.0, 1.0}) {
      acc += areas[k];
      if (r <= acc) {
        axis = k;
        sign = s;
        done = true;
        break;
      }
    }
  }
  Point3 p;
  for (int k = 0; k < 3; ++k) p[k] = (uni(rng) * 2.0 - 1.0) * h[k];
  p[axis] = sign * h[axis];
  return p;
}

Point3 cylinder_point(std::mt19937_64& rng, double radius, double half_h) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  double side_area = 2.0 * std::numbers::pi * radius * (2.0 * half_h);
  double cap_area = std::numbers::pi * radius * radius;
  double r = uni(rng) * (side_area + 2.0 * cap_area);
  double theta = uni(rng) * 2.0 * std::numbers::pi;
  if (r < side_area) {
    double y = (uni(rng) * 2.0 - 1.0) * half_h;
    return {radius * std::cos(theta), y, radius * std::sin(theta)};
  }
  double rr = radius * std::sqrt(uni(rng));
  double y = r < side_area + cap_area ? half_h : -half_h;
  return {rr * std::cos(theta), y, rr * std::sin(theta)};
}

}  // namespace

PointCloud synth_shape(ShapeFamily family, const ShapeParams& params, size_t n, uint64_t seed) {
  if (n == 0) throw std::invalid_argument("synth_shape: n must be >= 1");
  std::mt19937_64 rng(seed);
  const auto& v = params.values;
  PointCloud X;
  X.points.reserve(n);
  switch (family) {
    case ShapeFamily::kSphere: {
      double radius = v.size() > 0 ? v[0] : 1.0;
      for (size_t i = 0; i < n; ++i) X.points.push_back(sphere_point(rng, radius));
      break;
    }
    case ShapeFamily::kBox: {
      Point3 h{v.size() > 0 ? v[0] : 1.0, v.size() > 1 ? v[1] : 1.0, v.size() > 2 ? v[2] : 1.0};
      for (size_t i = 0; i < n; ++i) X.points.push_back(box_point(rng, h));
      break;
    }
    case ShapeFamily::kCylinder: {
      double radius = v.size() > 0 ? v[0] : 0.5;
      double half_h = v.size() > 1 ? v[1] : 1.0;
      for (size_t i = 0; i < n; ++i) X.points.push_back(cylinder_point(rng, radius, half_h));
      break;
    }
    case ShapeFamily::kTwoLobe: {
      // union of two ellipsoidal lobes along x, a toy "plane body + tail"
      double radius = v.size() > 0 ? v[0] : 0.5;
      double sep = v.size() > 1 ? v[1] : 0.8;
      for (size_t i = 0; i < n; ++i) {
        Point3 p = sphere_point(rng, radius);
        p[1] *= 0.6;  // flatten
        p[0] += (i % 2 == 0) ? -sep : sep;
        X.points.push_back(p);
      }
      break;
    }
  }
  if (params.jitter_sigma > 0.0) {
    std::normal_distribution<double> jitter(0.0, params.jitter_sigma);
    for (auto& p : X.points)
      for (auto& c : p) c += jitter(rng);
  }
  return X;
}

ShapeParams random_shape_params(ShapeFamily family, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  ShapeParams p;
  switch (family) {
    case ShapeFamily::kSphere:
      p.values = {0.5 + 0.5 * uni(rng)};
      break;
    case ShapeFamily::kBox:
      p.values = {0.4 + 0.6 * uni(rng), 0.4 + 0.6 * uni(rng), 0.4 + 0.6 * uni(rng)};
      break;
    case ShapeFamily::kCylinder:
      p.values = {0.25 + 0.4 * uni(rng), 0.5 + 0.5 * uni(rng)};
      break;
    case ShapeFamily::kTwoLobe:
      p.values = {0.35 + 0.25 * uni(rng), 0.5 + 0.4 * uni(rng)};
      break;
  }
  return p;
}

PointCloud rotate_gravity_axis(const PointCloud& X, double angle) {
  double c = std::cos(angle), s = std::sin(angle);
  PointCloud out;
  out.points.resize(X.size());
  for (size_t i = 0; i < X.size(); ++i) {
    out[i][0] = c * X[i][0] + s * X[i][2];
    out[i][1] = X[i][1];
    out[i][2] = -s * X[i][0] + c * X[i][2];
  }
  return out;
}

void save_latent_table(const std::string& path, const std::vector<LatentRow>& rows) {
  std::ofstream f(path);
  if (!f) io_error(path, "cannot open for writing");
  char buf[32];
  for (const auto& r : rows) {
    f << r.label << '\t';
    for (size_t i = 0; i < r.code.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g", r.code[i]);
      f << (i ? " " : "") << buf;
    }
    f << '\n';
  }
  if (!f) io_error(path, "write failed");
}

std::vector<LatentRow> load_latent_table(const std::string& path) {
  std::ifstream f(path);
  if (!f) io_error(path, "cannot open");
  std::vector<LatentRow> rows;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    size_t tab = line.find('\t');
    if (tab == std::string::npos) io_error(path, "malformed latent row");
    LatentRow r;
    r.label = line.substr(0, tab);
    std::istringstream ss(line.substr(tab + 1));
    double v;
    while (ss >> v) r.code.push_back(v);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace starnet
