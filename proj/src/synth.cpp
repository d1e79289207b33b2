#include "recon/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>

namespace recon {

namespace {

double box_sdf(const Vec3& p, const Vec3& half) {
  const Vec3 q = p.cwiseAbs() - half;
  return q.cwiseMax(0.0).norm() + std::min(q.maxCoeff(), 0.0);
}

// Plane-with-bump: a slab of the root box whose top is a Gaussian bump.
constexpr double kSlabHalf = 0.9;
constexpr double kSlabBottom = -0.5;
constexpr double kTopHeight = -0.1;
constexpr double kBumpHeight = 0.35;
constexpr double kBumpSigma = 0.25;

double bump_height(double x, double y) {
  return kTopHeight + kBumpHeight * std::exp(-(x * x + y * y) / (2.0 * kBumpSigma * kBumpSigma));
}

}  // namespace

std::optional<SceneKind> parse_scene_kind(const std::string& name) {
  if (name == "sphere") return SceneKind::kSphere;
  if (name == "box") return SceneKind::kBox;
  if (name == "two-spheres") return SceneKind::kTwoSpheres;
  if (name == "plane-with-bump") return SceneKind::kPlaneWithBump;
  return std::nullopt;
}

std::string to_string(SceneKind kind) {
  switch (kind) {
    case SceneKind::kSphere: return "sphere";
    case SceneKind::kBox: return "box";
    case SceneKind::kTwoSpheres: return "two-spheres";
    case SceneKind::kPlaneWithBump: return "plane-with-bump";
  }
  return "unknown";
}

double SyntheticScene::sdf(const Vec3& world) const {
  const Vec3 p = (world - center) / radius;
  double d = 0.0;
  switch (kind) {
    case SceneKind::kSphere:
      d = p.norm() - 1.0;
      break;
    case SceneKind::kBox:
      d = box_sdf(p, Vec3::Constant(0.7));
      break;
    case SceneKind::kTwoSpheres:
      d = std::min((p - Vec3(0.55, 0, 0)).norm() - 0.6, (p - Vec3(-0.55, 0, 0)).norm() - 0.6);
      break;
    case SceneKind::kPlaneWithBump: {
      // Height field scaled by its Lipschitz bound, intersected with a box.
      const double slope = kBumpHeight / kBumpSigma * std::exp(-0.5);
      const double top = (p.z() - bump_height(p.x(), p.y())) / std::sqrt(1.0 + slope * slope);
      const double sides = box_sdf(p - Vec3(0, 0, 0.5 * (kSlabBottom + 0.5)),
                                   Vec3(kSlabHalf, kSlabHalf, 0.5 * (0.5 - kSlabBottom)));
      d = std::max(top, sides);
      break;
    }
  }
  return d * radius;
}

SyntheticScene make_scene(SceneKind kind, double radius, const Vec3& center) {
  RECON_REQUIRE(radius > 0.0, "scene radius must be positive");
  return SyntheticScene{kind, center, radius};
}

CameraRig fibonacci_rig(const SyntheticScene& scene, int count, std::uint32_t resolution, double fov_deg,
                        double distance_factor) {
  RECON_REQUIRE(count > 0 && resolution > 0, "rig needs cameras and pixels");
  RECON_REQUIRE(fov_deg > 0.0 && fov_deg < 180.0, "field of view out of range");
  CameraRig rig;
  rig.width = rig.height = resolution;
  const double f = 0.5 * resolution / std::tan(0.5 * fov_deg * std::numbers::pi / 180.0);
  rig.intrinsics = PinholeIntrinsics{f, f, 0.5 * resolution, 0.5 * resolution};
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < count; ++i) {
    const double z = 1.0 - 2.0 * (i + 0.5) / count;
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = golden * i;
    const Vec3 dir(r * std::cos(phi), r * std::sin(phi), z);
    rig.poses.push_back(SensorPose::look_at(scene.center + distance_factor * scene.radius * dir, scene.center));
  }
  return rig;
}

RangeImage render_depth(const SyntheticScene& scene, const SensorPose& pose, const PinholeIntrinsics& intrinsics,
                        std::uint32_t width, std::uint32_t height) {
  pose.validate();
  RangeImage img;
  img.pose = pose;
  img.model = ProjectionModel::kPinhole;
  img.intrinsics = intrinsics;
  img.width = width;
  img.height = height;
  img.depth.assign(std::size_t(width) * height, std::numeric_limits<float>::quiet_NaN());
  const double eps = 1e-7 * scene.radius;
  const double t_max = (pose.origin - scene.center).norm() + 4.0 * scene.radius;
  for (std::uint32_t y = 0; y < height; ++y) {
    for (std::uint32_t x = 0; x < width; ++x) {
      const Vec3 ds = img.pixel_direction(x, y);
      const Vec3 dw = pose.rotation * ds;
      double t = 0.0;
      for (int it = 0; it < 2000 && t < t_max; ++it) {
        const double d = scene.sdf(pose.origin + t * dw);
        if (d < eps) {
          img.depth[img.index(x, y)] = static_cast<float>(t * ds.z());
          break;
        }
        t += d;
      }
    }
  }
  return img;
}

RangeImage inject_outliers(const RangeImage& img, double fraction, OutlierMode mode, std::uint64_t seed) {
  RECON_REQUIRE(fraction >= 0.0 && fraction <= 1.0, "outlier fraction must be in [0, 1]");
  RangeImage out = img;
  std::vector<std::size_t> valid;
  for (std::size_t i = 0; i < img.depth.size(); ++i) {
    if (std::isfinite(img.depth[i]) && img.depth[i] > 0.0f) valid.push_back(i);
  }
  const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(valid.size())));
  std::mt19937_64 rng(seed);
  // Partial Fisher-Yates: the first k entries become the chosen samples.
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, valid.size() - 1);
    std::swap(valid[i], valid[pick(rng)]);
  }
  std::uniform_real_distribution<double> floater(0.3, 0.9);
  std::uniform_real_distribution<double> speckle(-0.2, 0.2);
  for (std::size_t i = 0; i < k; ++i) {
    float& d = out.depth[valid[i]];
    const double m = mode == OutlierMode::kFloaters ? floater(rng) : 1.0 + speckle(rng);
    d = static_cast<float>(d * m);
  }
  return out;
}

double point_triangle_distance(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  // Closest point by Voronoi region of the triangle.
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0 && d2 <= 0) return ap.norm();
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0 && d4 <= d3) return bp.norm();
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) return (p - (a + d1 / (d1 - d3) * ab)).norm();
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0 && d5 <= d6) return cp.norm();
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) return (p - (a + d2 / (d2 - d6) * ac)).norm();
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) {
    return (p - (b + (d4 - d3) / ((d4 - d3) + (d5 - d6)) * (c - b))).norm();
  }
  const double denom = 1.0 / (va + vb + vc);
  return (p - (a + ab * (vb * denom) + ac * (vc * denom))).norm();
}

MeshDistance::MeshDistance(const Mesh& mesh) : mesh_(mesh) {
  RECON_REQUIRE(!mesh.triangles.empty(), "distance to an empty mesh");
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (const auto& t : mesh.triangles) {
    for (auto v : t) {
      lo = lo.cwiseMin(mesh.vertices[v]);
      hi = hi.cwiseMax(mesh.vertices[v]);
    }
  }
  const double extent = std::max((hi - lo).maxCoeff(), 1e-12);
  const double n = std::cbrt(static_cast<double>(mesh.triangles.size()));
  cell_ = extent / std::clamp(n, 1.0, 128.0);
  lo_ = lo;
  for (int a = 0; a < 3; ++a) dims_[a] = std::max(1, static_cast<int>(std::ceil((hi[a] - lo[a]) / cell_)) + 1);
  const std::size_t cells = std::size_t(dims_[0]) * dims_[1] * dims_[2];
  auto cell_of = [&](const Vec3& p, int a) {
    return std::clamp(static_cast<int>(std::floor((p[a] - lo_[a]) / cell_)), 0, dims_[a] - 1);
  };
  std::vector<std::uint32_t> count(cells + 1, 0);
  auto for_cells = [&](const Triangle& t, auto&& fn) {
    std::array<int, 3> a{}, b{};
    for (int k = 0; k < 3; ++k) {
      const double mn = std::min({mesh.vertices[t[0]][k], mesh.vertices[t[1]][k], mesh.vertices[t[2]][k]});
      const double mx = std::max({mesh.vertices[t[0]][k], mesh.vertices[t[1]][k], mesh.vertices[t[2]][k]});
      Vec3 pm = lo_, px = lo_;
      pm[k] = mn;
      px[k] = mx;
      a[k] = cell_of(pm, k);
      b[k] = cell_of(px, k);
    }
    for (int z = a[2]; z <= b[2]; ++z)
      for (int y = a[1]; y <= b[1]; ++y)
        for (int x = a[0]; x <= b[0]; ++x) fn((std::size_t(z) * dims_[1] + y) * dims_[0] + x);
  };
  for (const auto& t : mesh.triangles) for_cells(t, [&](std::size_t c) { ++count[c + 1]; });
  for (std::size_t c = 0; c < cells; ++c) count[c + 1] += count[c];
  offset_ = count;
  items_.resize(offset_.back());
  std::vector<std::uint32_t> fill(offset_.begin(), offset_.end() - 1);
  for (std::uint32_t f = 0; f < mesh.triangles.size(); ++f) {
    for_cells(mesh.triangles[f], [&](std::size_t c) { items_[fill[c]++] = f; });
  }
}

double MeshDistance::distance(const Vec3& p) const {
  std::array<int, 3> c{};
  for (int a = 0; a < 3; ++a) {
    c[a] = std::clamp(static_cast<int>(std::floor((p[a] - lo_[a]) / cell_)), 0, dims_[a] - 1);
  }
  // Distance from p to the grid box; every cell is at least this far.
  const Vec3 hi = lo_ + cell_ * Vec3(dims_[0], dims_[1], dims_[2]);
  const double outside = (p.cwiseMax(lo_).cwiseMin(hi) - p).norm();
  const int max_ring = std::max({dims_[0], dims_[1], dims_[2]});
  double best = std::numeric_limits<double>::infinity();
  for (int r = 0; r <= max_ring; ++r) {
    for (int z = std::max(0, c[2] - r); z <= std::min(dims_[2] - 1, c[2] + r); ++z) {
      for (int y = std::max(0, c[1] - r); y <= std::min(dims_[1] - 1, c[1] + r); ++y) {
        for (int x = std::max(0, c[0] - r); x <= std::min(dims_[0] - 1, c[0] + r); ++x) {
          if (std::max({std::abs(x - c[0]), std::abs(y - c[1]), std::abs(z - c[2])}) != r) continue;
          const std::size_t cell = (std::size_t(z) * dims_[1] + y) * dims_[0] + x;
          for (std::uint32_t i = offset_[cell]; i < offset_[cell + 1]; ++i) {
            const auto& t = mesh_.triangles[items_[i]];
            best = std::min(best, point_triangle_distance(p, mesh_.vertices[t[0]], mesh_.vertices[t[1]],
                                                          mesh_.vertices[t[2]]));
          }
        }
      }
    }
    if (best <= std::max(outside, r * cell_)) break;
  }
  return best;
}

double one_sided_hausdorff(const Mesh& from, const Mesh& to) {
  const MeshDistance dist(to);
  std::vector<std::uint8_t> used(from.vertices.size(), 0);
  for (const auto& t : from.triangles) {
    for (auto v : t) used[v] = 1;
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < from.vertices.size(); ++i) {
    if (used[i]) worst = std::max(worst, dist.distance(from.vertices[i]));
  }
  return worst;
}

ScoreReport score(const Mesh& mesh, const SyntheticScene& scene) {
  ScoreReport r;
  if (mesh.triangles.empty()) return r;
  r.empty = false;
  const TopologyStats topo = topology(mesh);
  r.vertices = topo.vertices;
  r.faces = topo.faces;
  r.boundary_edges = topo.boundary_edges;
  r.nonmanifold_edges = topo.nonmanifold_edges;
  r.components = topo.components;
  r.euler = topo.euler;
  const Mesh largest = largest_component(mesh);
  r.largest_euler = topology(largest).euler;
  r.largest_faces = largest.triangles.size();
  std::vector<std::uint8_t> used(mesh.vertices.size(), 0);
  for (const auto& t : mesh.triangles) {
    for (auto v : t) used[v] = 1;
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    if (!used[i]) continue;
    const double d = std::abs(scene.sdf(mesh.vertices[i]));
    sum += d;
    r.max_abs_sdf = std::max(r.max_abs_sdf, d);
  }
  r.mean_abs_sdf = sum / static_cast<double>(r.vertices);
  return r;
}

std::filesystem::path write_synthetic_dataset(const SyntheticScene& scene, const CameraRig& rig,
                                              const std::filesystem::path& dir, double outlier_fraction,
                                              std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path manifest = dir / "manifest.txt";
  std::ofstream out(manifest);
  if (!out) throw IoError("cannot write " + manifest.string());
  for (std::size_t i = 0; i < rig.poses.size(); ++i) {
    RangeImage img = render_depth(scene, rig.poses[i], rig.intrinsics, rig.width, rig.height);
    if (outlier_fraction > 0.0) img = inject_outliers(img, outlier_fraction, OutlierMode::kFloaters, seed + i);
    char name[32];
    std::snprintf(name, sizeof(name), "cam_%03zu.rimg", i);
    save_range_image(img, dir / name);
    out << name << "\n";
  }
  return manifest;
}

std::vector<std::filesystem::path> read_manifest(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw IoError("cannot open manifest " + manifest.string());
  std::vector<std::filesystem::path> paths;
  std::string line;
  while (std::getline(in, line)) {
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos || line[b] == '#') continue;
    const auto e = line.find_last_not_of(" \t\r");
    std::filesystem::path p = line.substr(b, e - b + 1);
    if (p.is_relative()) p = manifest.parent_path() / p;
    paths.push_back(p);
  }
  return paths;
}

}  // namespace recon
