#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "recon/mesh.hpp"
#include "recon/range_image.hpp"

namespace recon {

enum class SceneKind : std::uint8_t { kSphere, kBox, kTwoSpheres, kPlaneWithBump };

std::optional<SceneKind> parse_scene_kind(const std::string& name);
std::string to_string(SceneKind kind);

/// Closed analytic shape of size R around `center`. sdf() is 1-Lipschitz,
/// positive outside.
struct SyntheticScene {
  SceneKind kind = SceneKind::kSphere;
  Vec3 center = Vec3::Zero();
  double radius = 1.0;

  double sdf(const Vec3& p) const;
};

SyntheticScene make_scene(SceneKind kind, double radius = 1.0, const Vec3& center = Vec3::Zero());

struct CameraRig {
  std::vector<SensorPose> poses;
  PinholeIntrinsics intrinsics;
  std::uint32_t width = 0;
  std::uint32_t height = 0;
};

/// Cameras on a Fibonacci sphere of radius distance_factor * R, all looking
/// at the scene center. `fov_deg` is the full horizontal field of view.
CameraRig fibonacci_rig(const SyntheticScene& scene, int count, std::uint32_t resolution, double fov_deg = 45.0,
                        double distance_factor = 3.0);

/// Sphere-traces every pixel to 1e-7 R. Misses are NaN.
RangeImage render_depth(const SyntheticScene& scene, const SensorPose& pose, const PinholeIntrinsics& intrinsics,
                        std::uint32_t width, std::uint32_t height);

enum class OutlierMode : std::uint8_t { kFloaters, kSpeckle };

/// Alters exactly round(fraction * valid) samples chosen with `seed`.
/// Floaters scale depth by U(0.3, 0.9), speckle by 1 + U(-0.2, 0.2).
RangeImage inject_outliers(const RangeImage& img, double fraction, OutlierMode mode, std::uint64_t seed);

/// Point-to-triangle-mesh distance with a uniform grid over the triangles.
class MeshDistance {
 public:
  explicit MeshDistance(const Mesh& mesh);
  double distance(const Vec3& p) const;

 private:
  const Mesh& mesh_;
  Vec3 lo_ = Vec3::Zero();
  double cell_ = 1.0;
  std::array<int, 3> dims_{1, 1, 1};
  std::vector<std::uint32_t> offset_;
  std::vector<std::uint32_t> items_;
};

double point_triangle_distance(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

/// max over vertices of `from` of the distance to the surface of `to`.
double one_sided_hausdorff(const Mesh& from, const Mesh& to);

struct ScoreReport {
  bool empty = true;
  std::size_t vertices = 0;
  std::size_t faces = 0;
  double mean_abs_sdf = 0.0;
  double max_abs_sdf = 0.0;
  std::size_t boundary_edges = 0;
  std::size_t nonmanifold_edges = 0;
  std::size_t components = 0;
  long euler = 0;
  long largest_euler = 0;
  std::size_t largest_faces = 0;
};

/// Metrics over referenced vertices. An empty mesh gives `empty = true`.
ScoreReport score(const Mesh& mesh, const SyntheticScene& scene);

/// Renders the rig into `dir` as cam_###.rimg plus manifest.txt, with
/// optional floater outliers. Returns the manifest path.
std::filesystem::path write_synthetic_dataset(const SyntheticScene& scene, const CameraRig& rig,
                                              const std::filesystem::path& dir, double outlier_fraction = 0.0,
                                              std::uint64_t seed = 1);

/// Reads a manifest: one RIMG path per line, relative to the manifest's
/// directory; blank lines and lines starting with '#' are skipped.
std::vector<std::filesystem::path> read_manifest(const std::filesystem::path& manifest);

}  // namespace recon
