#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "recon/common.hpp"

namespace recon {

/// Rigid sensor pose. `rotation` maps sensor-frame directions to world frame.
struct SensorPose {
  Vec3 origin = Vec3::Zero();
  Mat3 rotation = Mat3::Identity();

  Vec3 to_sensor(const Vec3& world) const { return rotation.transpose() * (world - origin); }
  Vec3 to_world(const Vec3& sensor) const { return origin + rotation * sensor; }

  /// Throws ContractViolation unless RᵀR = I within 1e-9 and det R = +1.
  void validate() const;

  /// Camera at `eye` whose +z axis points at `target`.
  static SensorPose look_at(const Vec3& eye, const Vec3& target, const Vec3& up = Vec3::UnitZ());
};

enum class ProjectionModel : std::uint8_t { kPinhole = 0, kEquirectangular = 1 };

struct PinholeIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
};

/// Default vote weight for terrestrial LIDAR scans.
inline constexpr std::uint32_t kLidarVoteWeight = 5;

/// A posed range image. Pinhole depths are z-depths in the sensor frame,
/// equirectangular depths are ranges along the pixel ray. NaN marks a missing
/// sample. Pixel (x, y) covers [x, x+1) x [y, y+1) in image coordinates.
struct RangeImage {
  SensorPose pose;
  ProjectionModel model = ProjectionModel::kPinhole;
  PinholeIntrinsics intrinsics;
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<float> depth;
  std::uint32_t vote_weight = 1;

  std::size_t index(std::uint32_t x, std::uint32_t y) const { return std::size_t(y) * width + x; }
  bool valid(std::uint32_t x, std::uint32_t y) const;
  std::optional<double> at(std::uint32_t x, std::uint32_t y) const;
  std::size_t valid_count() const;

  /// Unit ray direction through the pixel center, sensor frame.
  Vec3 pixel_direction(std::uint32_t x, std::uint32_t y) const;
  /// Sensor-frame point of a sample with the given stored depth value.
  Vec3 unproject_sensor(std::uint32_t x, std::uint32_t y, double stored_depth) const;
  /// World point of the sample at (x, y). Requires valid(x, y).
  Vec3 unproject(std::uint32_t x, std::uint32_t y) const;

  /// Throws ContractViolation if any invariant is broken.
  void validate() const;
};

/// Everything needed to test frustum overlap without holding the depth grid.
struct RangeImageSummary {
  SensorPose pose;
  ProjectionModel model = ProjectionModel::kPinhole;
  PinholeIntrinsics intrinsics;
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  double max_z = 0.0;      // largest stored depth value
  double max_range = 0.0;  // largest Euclidean distance origin -> sample
  std::size_t valid = 0;

  static RangeImageSummary of(const RangeImage& img);
};

struct Aabb {
  Vec3 lo;
  Vec3 hi;
};

// RIMG binary files.
RangeImage load_range_image(const std::filesystem::path& path);
void save_range_image(const RangeImage& img, const std::filesystem::path& path);

struct LidarConversion {
  RangeImage image;
  std::size_t skipped_at_origin = 0;
};

/// Bins points into a full-sphere equirectangular image. Nearest return wins.
LidarConversion lidar_to_range_image(std::span<const Vec3> points, const SensorPose& pose,
                                     std::uint32_t width, std::uint32_t height);

/// Reads `x y z` vertices from an ASCII PLY file.
std::vector<Vec3> load_ascii_ply_points(const std::filesystem::path& path);

/// Half the median 3D distance to the valid 4-neighbors, falling back to half
/// of one pixel footprint for isolated samples. NaN where the pixel is absent.
std::vector<float> estimate_sample_radii(const RangeImage& img);

struct PyramidLevel {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<float> depth;
  std::vector<float> radius;

  float depth_at(std::uint32_t x, std::uint32_t y) const { return depth[std::size_t(y) * width + x]; }
};

struct Projection {
  int level = 0;
  std::uint32_t px = 0;
  std::uint32_t py = 0;
  /// Observed range along the ray through the queried center; absent if the
  /// texel has no depth.
  std::optional<double> depth;
  /// Euclidean distance from the sensor origin to the queried center.
  double distance = 0.0;
};

class DepthPyramid {
 public:
  DepthPyramid() = default;
  explicit DepthPyramid(const RangeImage& img);

  const std::vector<PyramidLevel>& levels() const { return levels_; }
  int level_count() const { return static_cast<int>(levels_.size()); }
  const SensorPose& pose() const { return pose_; }
  ProjectionModel model() const { return model_; }
  std::uint32_t vote_weight() const { return vote_weight_; }

  /// Level-0 projected diameter, in pixels, of a ball around `center`.
  /// Absent when the center is behind a pinhole camera.
  std::optional<double> projected_diameter(const Vec3& center, double radius) const;

  std::optional<Projection> project(const Vec3& center, double radius) const;

  double distance_to(const Vec3& center) const { return (center - pose_.origin).norm(); }

 private:
  std::vector<PyramidLevel> levels_;
  SensorPose pose_;
  ProjectionModel model_ = ProjectionModel::kPinhole;
  PinholeIntrinsics intrinsics_;
  std::uint32_t vote_weight_ = 1;
};

inline DepthPyramid build_pyramid(const RangeImage& img) { return DepthPyramid(img); }

/// Conservative: false only if no valid ray segment, extended by `slack`
/// past its sample, can touch the box.
bool frustum_overlaps(const RangeImageSummary& img, const Aabb& box, double slack = 0.0);
bool frustum_overlaps(const RangeImage& img, const Aabb& box, double slack = 0.0);

}  // namespace recon
