#include "recon/range_image.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include <Eigen/Dense>

#include "recon/binary_io.hpp"

namespace recon {

namespace {

constexpr char kRimgMagic[4] = {'R', 'I', 'M', 'G'};
constexpr std::uint32_t kRimgVersion = 1;
// magic + version + tag + width + height + intrinsics + pose + vote weight
constexpr std::uint64_t kRimgHeaderBytes = 4 + 4 + 1 + 4 + 4 + 4 * 8 + 12 * 8 + 4;

bool is_valid_depth(float d) { return !std::isnan(d); }

double median_of(std::array<double, 4>& values, int n) {
  std::sort(values.begin(), values.begin() + n);
  if (n % 2 == 1) return values[n / 2];
  return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

// Equirectangular direction <-> continuous pixel coordinates.
void direction_to_equirect(const Vec3& dir, std::uint32_t w, std::uint32_t h, double& u, double& v) {
  const double phi = std::atan2(dir.y(), dir.x());
  const double theta = std::asin(std::clamp(dir.z() / dir.norm(), -1.0, 1.0));
  u = (phi + std::numbers::pi) / (2.0 * std::numbers::pi) * w;
  v = (0.5 * std::numbers::pi - theta) / std::numbers::pi * h;
}

}  // namespace

// ---------------------------------------------------------------------------
// SensorPose

void SensorPose::validate() const {
  const Mat3 err = rotation.transpose() * rotation - Mat3::Identity();
  RECON_REQUIRE(err.cwiseAbs().maxCoeff() <= 1e-9, "sensor rotation is not orthonormal");
  RECON_REQUIRE(rotation.determinant() > 0.0, "sensor rotation is a reflection");
  RECON_REQUIRE(origin.allFinite(), "sensor origin is not finite");
}

SensorPose SensorPose::look_at(const Vec3& eye, const Vec3& target, const Vec3& up) {
  Vec3 z = (target - eye).normalized();
  Vec3 ref = std::abs(z.dot(up.normalized())) > 0.99 ? Vec3::UnitX() : up.normalized();
  Vec3 x = ref.cross(z).normalized();
  Vec3 y = z.cross(x);
  SensorPose pose;
  pose.origin = eye;
  pose.rotation.col(0) = x;
  pose.rotation.col(1) = y;
  pose.rotation.col(2) = z;
  return pose;
}

// ---------------------------------------------------------------------------
// RangeImage

bool RangeImage::valid(std::uint32_t x, std::uint32_t y) const { return is_valid_depth(depth[index(x, y)]); }

std::optional<double> RangeImage::at(std::uint32_t x, std::uint32_t y) const {
  const float d = depth[index(x, y)];
  if (!is_valid_depth(d)) return std::nullopt;
  return static_cast<double>(d);
}

std::size_t RangeImage::valid_count() const {
  return static_cast<std::size_t>(std::count_if(depth.begin(), depth.end(), is_valid_depth));
}

Vec3 RangeImage::pixel_direction(std::uint32_t x, std::uint32_t y) const {
  if (model == ProjectionModel::kPinhole) {
    return Vec3((x + 0.5 - intrinsics.cx) / intrinsics.fx, (y + 0.5 - intrinsics.cy) / intrinsics.fy, 1.0)
        .normalized();
  }
  const double phi = (x + 0.5) / width * 2.0 * std::numbers::pi - std::numbers::pi;
  const double theta = 0.5 * std::numbers::pi - (y + 0.5) / height * std::numbers::pi;
  return Vec3(std::cos(theta) * std::cos(phi), std::cos(theta) * std::sin(phi), std::sin(theta));
}

Vec3 RangeImage::unproject_sensor(std::uint32_t x, std::uint32_t y, double stored_depth) const {
  if (model == ProjectionModel::kPinhole) {
    return Vec3((x + 0.5 - intrinsics.cx) / intrinsics.fx * stored_depth,
                (y + 0.5 - intrinsics.cy) / intrinsics.fy * stored_depth, stored_depth);
  }
  return pixel_direction(x, y) * stored_depth;
}

Vec3 RangeImage::unproject(std::uint32_t x, std::uint32_t y) const {
  return pose.to_world(unproject_sensor(x, y, depth[index(x, y)]));
}

void RangeImage::validate() const {
  pose.validate();
  RECON_REQUIRE(depth.size() == std::size_t(width) * height, "depth grid size does not match dimensions");
  RECON_REQUIRE(vote_weight >= 1, "vote weight must be at least 1");
  if (model == ProjectionModel::kPinhole) {
    RECON_REQUIRE(intrinsics.fx > 0.0 && intrinsics.fy > 0.0, "pinhole focal lengths must be positive");
  }
  for (float d : depth) {
    if (!is_valid_depth(d)) continue;
    RECON_REQUIRE(std::isfinite(d) && d > 0.0f, "depths must be positive and finite");
  }
}

RangeImageSummary RangeImageSummary::of(const RangeImage& img) {
  RangeImageSummary s;
  s.pose = img.pose;
  s.model = img.model;
  s.intrinsics = img.intrinsics;
  s.width = img.width;
  s.height = img.height;
  for (std::uint32_t y = 0; y < img.height; ++y) {
    for (std::uint32_t x = 0; x < img.width; ++x) {
      auto d = img.at(x, y);
      if (!d) continue;
      ++s.valid;
      s.max_z = std::max(s.max_z, *d);
      s.max_range = std::max(s.max_range, img.unproject_sensor(x, y, *d).norm());
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// RIMG I/O

RangeImage load_range_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open range image " + path.string());

  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kRimgMagic, 4) != 0) {
    throw ParseError("bad RIMG magic in " + path.string(), 0);
  }
  const auto version = bin::get<std::uint32_t>(in, "RIMG version");
  if (version != kRimgVersion) throw ParseError("unsupported RIMG version " + std::to_string(version), 4);

  RangeImage img;
  const auto tag = bin::get<std::uint8_t>(in, "projection tag");
  if (tag > 1) throw ParseError("unknown projection tag " + std::to_string(tag), 8);
  img.model = static_cast<ProjectionModel>(tag);
  img.width = bin::get<std::uint32_t>(in, "width");
  img.height = bin::get<std::uint32_t>(in, "height");
  img.intrinsics.fx = bin::get<double>(in, "fx");
  img.intrinsics.fy = bin::get<double>(in, "fy");
  img.intrinsics.cx = bin::get<double>(in, "cx");
  img.intrinsics.cy = bin::get<double>(in, "cy");
  const std::uint64_t pose_offset = static_cast<std::uint64_t>(in.tellg());
  double pose[12];
  for (double& p : pose) p = bin::get<double>(in, "pose");
  img.pose.origin = Vec3(pose[0], pose[1], pose[2]);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) img.pose.rotation(r, c) = pose[3 + 3 * r + c];
  img.vote_weight = bin::get<std::uint32_t>(in, "vote weight");

  try {
    img.pose.validate();
  } catch (const ContractViolation& e) {
    throw ParseError(e.what(), pose_offset);
  }
  if (img.vote_weight < 1) throw ParseError("vote weight must be at least 1", kRimgHeaderBytes - 4);
  if (img.model == ProjectionModel::kPinhole && !(img.intrinsics.fx > 0.0 && img.intrinsics.fy > 0.0)) {
    throw ParseError("pinhole focal lengths must be positive", 17);
  }

  const std::size_t n = std::size_t(img.width) * img.height;
  img.depth.resize(n);
  if (!in.read(reinterpret_cast<char*>(img.depth.data()), static_cast<std::streamsize>(n * sizeof(float)))) {
    throw ParseError("truncated depth grid", kRimgHeaderBytes);
  }
  for (std::size_t i = 0; i < n; ++i) {
    const float d = img.depth[i];
    if (std::isnan(d)) continue;
    if (!std::isfinite(d) || d <= 0.0f) {
      throw ParseError("invalid depth " + std::to_string(d) + " at pixel " + std::to_string(i),
                       kRimgHeaderBytes + i * sizeof(float));
    }
  }
  return img;
}

void save_range_image(const RangeImage& img, const std::filesystem::path& path) {
  img.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write range image " + path.string());
  out.write(kRimgMagic, 4);
  bin::put(out, kRimgVersion);
  bin::put(out, static_cast<std::uint8_t>(img.model));
  bin::put(out, img.width);
  bin::put(out, img.height);
  bin::put(out, img.intrinsics.fx);
  bin::put(out, img.intrinsics.fy);
  bin::put(out, img.intrinsics.cx);
  bin::put(out, img.intrinsics.cy);
  for (int i = 0; i < 3; ++i) bin::put(out, img.pose.origin[i]);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) bin::put(out, img.pose.rotation(r, c));
  bin::put(out, img.vote_weight);
  out.write(reinterpret_cast<const char*>(img.depth.data()),
            static_cast<std::streamsize>(img.depth.size() * sizeof(float)));
  if (!out) throw IoError("failed writing " + path.string());
}

// ---------------------------------------------------------------------------
// LIDAR

LidarConversion lidar_to_range_image(std::span<const Vec3> points, const SensorPose& pose, std::uint32_t width,
                                     std::uint32_t height) {
  RECON_REQUIRE(height > 0 && width == 2 * height, "equirectangular images need width = 2 * height");
  pose.validate();
  LidarConversion out;
  RangeImage& img = out.image;
  img.pose = pose;
  img.model = ProjectionModel::kEquirectangular;
  img.width = width;
  img.height = height;
  img.vote_weight = kLidarVoteWeight;
  img.depth.assign(std::size_t(width) * height, std::numeric_limits<float>::quiet_NaN());

  for (const Vec3& p : points) {
    const Vec3 local = pose.to_sensor(p);
    const double range = local.norm();
    if (!(range > 0.0)) {
      ++out.skipped_at_origin;
      continue;
    }
    double u, v;
    direction_to_equirect(local, width, height, u, v);
    const auto x = static_cast<std::uint32_t>(std::clamp(std::floor(u), 0.0, double(width - 1)));
    const auto y = static_cast<std::uint32_t>(std::clamp(std::floor(v), 0.0, double(height - 1)));
    float& slot = img.depth[img.index(x, y)];
    const auto r = static_cast<float>(range);
    if (std::isnan(slot) || r < slot) slot = r;
  }
  return out;
}

std::vector<Vec3> load_ascii_ply_points(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line.rfind("ply", 0) != 0) throw ParseError("not a PLY file", 0);
  std::size_t vertex_count = 0;
  int prop_index = 0;
  int ix = -1, iy = -1, iz = -1;
  bool in_vertex = false;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt != "ascii") throw ParseError("only ASCII PLY point clouds are supported", 0);
    } else if (word == "element") {
      std::string name;
      ls >> name;
      in_vertex = (name == "vertex");
      if (in_vertex) ls >> vertex_count;
    } else if (word == "property" && in_vertex) {
      std::string type, name;
      ls >> type >> name;
      if (name == "x") ix = prop_index;
      if (name == "y") iy = prop_index;
      if (name == "z") iz = prop_index;
      ++prop_index;
    } else if (word == "end_header") {
      break;
    }
  }
  if (ix < 0 || iy < 0 || iz < 0) throw ParseError("PLY vertex element lacks x, y, z", 0);
  std::vector<Vec3> points;
  points.reserve(vertex_count);
  std::vector<double> values(static_cast<std::size_t>(prop_index));
  for (std::size_t i = 0; i < vertex_count; ++i) {
    const auto offset = static_cast<std::uint64_t>(in.tellg());
    for (double& v : values) {
      if (!(in >> v)) throw ParseError("truncated PLY vertex list", offset);
    }
    points.emplace_back(values[ix], values[iy], values[iz]);
  }
  return points;
}

// ---------------------------------------------------------------------------
// Sample radii and pyramid

std::vector<float> estimate_sample_radii(const RangeImage& img) {
  const std::uint32_t w = img.width, h = img.height;
  std::vector<float> radii(std::size_t(w) * h, std::numeric_limits<float>::quiet_NaN());
  const double mean_focal = 0.5 * (img.intrinsics.fx + img.intrinsics.fy);
  for (std::uint32_t y = 0; y < h; ++y) {
    for (std::uint32_t x = 0; x < w; ++x) {
      auto d = img.at(x, y);
      if (!d) continue;
      const Vec3 p = img.unproject_sensor(x, y, *d);
      std::array<double, 4> dist{};
      int n = 0;
      auto visit = [&](std::int64_t nx, std::int64_t ny) {
        if (nx < 0 || ny < 0 || nx >= w || ny >= h) return;
        auto nd = img.at(std::uint32_t(nx), std::uint32_t(ny));
        if (!nd) return;
        dist[n++] = (img.unproject_sensor(std::uint32_t(nx), std::uint32_t(ny), *nd) - p).norm();
      };
      visit(std::int64_t(x) - 1, y);
      visit(std::int64_t(x) + 1, y);
      visit(x, std::int64_t(y) - 1);
      visit(x, std::int64_t(y) + 1);
      double spacing;
      if (n > 0) {
        spacing = median_of(dist, n);
      } else if (img.model == ProjectionModel::kPinhole) {
        spacing = *d / mean_focal;
      } else {
        spacing = *d * 2.0 * std::numbers::pi / w;
      }
      radii[img.index(x, y)] = static_cast<float>(0.5 * spacing);
    }
  }
  return radii;
}

DepthPyramid::DepthPyramid(const RangeImage& img)
    : pose_(img.pose), model_(img.model), intrinsics_(img.intrinsics), vote_weight_(img.vote_weight) {
  const std::uint32_t largest = std::max(img.width, img.height);
  int count = 1;
  while ((1u << count) <= largest && count < 32) ++count;  // 1 + floor(log2(largest))
  if (largest == 0) count = 1;
  levels_.reserve(count);

  PyramidLevel base;
  base.width = img.width;
  base.height = img.height;
  base.depth = img.depth;
  base.radius = estimate_sample_radii(img);
  levels_.push_back(std::move(base));

  for (int l = 1; l < count; ++l) {
    const PyramidLevel& fine = levels_.back();
    PyramidLevel coarse;
    coarse.width = (fine.width + 1) / 2;
    coarse.height = (fine.height + 1) / 2;
    coarse.depth.assign(std::size_t(coarse.width) * coarse.height, std::numeric_limits<float>::quiet_NaN());
    coarse.radius = coarse.depth;
    for (std::uint32_t y = 0; y < coarse.height; ++y) {
      for (std::uint32_t x = 0; x < coarse.width; ++x) {
        double dsum = 0.0, rsum = 0.0;
        int n = 0;
        for (std::uint32_t cy = 2 * y; cy < std::min(2 * y + 2, fine.height); ++cy) {
          for (std::uint32_t cx = 2 * x; cx < std::min(2 * x + 2, fine.width); ++cx) {
            const std::size_t i = std::size_t(cy) * fine.width + cx;
            if (std::isnan(fine.depth[i])) continue;
            dsum += fine.depth[i];
            rsum += fine.radius[i];
            ++n;
          }
        }
        if (n == 0) continue;
        const std::size_t o = std::size_t(y) * coarse.width + x;
        coarse.depth[o] = static_cast<float>(dsum / n);
        coarse.radius[o] = static_cast<float>(2.0 * rsum / n);
      }
    }
    levels_.push_back(std::move(coarse));
  }
}

std::optional<double> DepthPyramid::projected_diameter(const Vec3& center, double radius) const {
  const Vec3 local = pose_.to_sensor(center);
  if (model_ == ProjectionModel::kPinhole) {
    if (local.z() <= 0.0) return std::nullopt;
    const double f = 0.5 * (intrinsics_.fx + intrinsics_.fy);
    return 2.0 * radius * f / local.z();
  }
  const double dist = local.norm();
  const double angle = dist > radius ? 2.0 * std::asin(radius / dist) : std::numbers::pi;
  return angle * levels_.front().width / (2.0 * std::numbers::pi);
}

std::optional<Projection> DepthPyramid::project(const Vec3& center, double radius) const {
  RECON_REQUIRE(radius > 0.0, "projection radius must be positive");
  const Vec3 local = pose_.to_sensor(center);
  const PyramidLevel& base = levels_.front();
  double u, v;
  if (model_ == ProjectionModel::kPinhole) {
    if (local.z() <= 0.0) return std::nullopt;
    u = intrinsics_.fx * local.x() / local.z() + intrinsics_.cx;
    v = intrinsics_.fy * local.y() / local.z() + intrinsics_.cy;
    if (!(u >= 0.0 && v >= 0.0 && u < base.width && v < base.height)) return std::nullopt;
  } else {
    if (local.norm() == 0.0) return std::nullopt;
    direction_to_equirect(local, base.width, base.height, u, v);
    u = std::clamp(u, 0.0, std::nextafter(double(base.width), 0.0));
    v = std::clamp(v, 0.0, std::nextafter(double(base.height), 0.0));
  }

  const double diameter = *projected_diameter(center, radius);
  int level = 0;
  if (diameter > 0.0) {
    level = static_cast<int>(std::lround(std::log2(diameter)));
    level = std::clamp(level, 0, level_count() - 1);
  }
  const PyramidLevel& lv = levels_[level];
  Projection proj;
  proj.level = level;
  proj.px = std::min<std::uint32_t>(static_cast<std::uint32_t>(u) >> level, lv.width - 1);
  proj.py = std::min<std::uint32_t>(static_cast<std::uint32_t>(v) >> level, lv.height - 1);
  proj.distance = local.norm();
  const float stored = lv.depth_at(proj.px, proj.py);
  if (!std::isnan(stored)) {
    // Pinhole texels store z-depth; rescale to range along this ray.
    proj.depth = model_ == ProjectionModel::kPinhole ? double(stored) * proj.distance / local.z() : double(stored);
  }
  return proj;
}

// ---------------------------------------------------------------------------
// Frustum test

bool frustum_overlaps(const RangeImageSummary& img, const Aabb& box, double slack) {
  if (img.valid == 0) return false;
  const Vec3& o = img.pose.origin;
  // Ball around the sensor holding every slack-extended ray segment.
  const Vec3 nearest = o.cwiseMax(box.lo).cwiseMin(box.hi);
  const double reach = img.max_range + slack;
  if ((nearest - o).squaredNorm() > reach * reach) return false;
  if (img.model == ProjectionModel::kEquirectangular) return true;

  std::array<Vec3, 8> corners;
  for (int i = 0; i < 8; ++i) {
    const Vec3 c((i & 1) ? box.hi.x() : box.lo.x(), (i & 2) ? box.hi.y() : box.lo.y(),
                 (i & 4) ? box.hi.z() : box.lo.z());
    corners[i] = img.pose.to_sensor(c);
  }
  const auto& k = img.intrinsics;
  const double w = img.width, h = img.height;
  // Each plane: n . p >= 0 holds for every point inside the viewing pyramid.
  const std::array<Vec3, 5> planes = {
      Vec3(0, 0, 1),                 // in front of the camera
      Vec3(k.fx, 0, k.cx),           // u >= 0
      Vec3(-k.fx, 0, w - k.cx),      // u <= w
      Vec3(0, k.fy, k.cy),           // v >= 0
      Vec3(0, -k.fy, h - k.cy),      // v <= h
  };
  for (const Vec3& n : planes) {
    bool all_outside = true;
    for (const Vec3& c : corners) {
      if (n.dot(c) >= 0.0) {
        all_outside = false;
        break;
      }
    }
    if (all_outside) return false;
  }
  // Far plane: z-depth along a slack-extended ray never exceeds max_z + slack.
  bool beyond = true;
  for (const Vec3& c : corners) {
    if (c.z() <= img.max_z + slack) {
      beyond = false;
      break;
    }
  }
  return !beyond;
}

bool frustum_overlaps(const RangeImage& img, const Aabb& box, double slack) {
  return frustum_overlaps(RangeImageSummary::of(img), box, slack);
}

}  // namespace recon
