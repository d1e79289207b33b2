#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>

#include "recon/range_image.hpp"
#include "support.hpp"

namespace recon {
namespace {

using testing::TempDir;

constexpr float kNaN = std::numeric_limits<float>::quiet_NaN();

RangeImage pinhole(std::uint32_t w, std::uint32_t h, double f, float depth) {
  RangeImage img;
  img.width = w;
  img.height = h;
  img.intrinsics = {f, f, w / 2.0, h / 2.0};
  img.depth.assign(std::size_t(w) * h, depth);
  return img;
}

TEST(RangeImageIo, PinholeRoundTrip) {
  TempDir dir;
  RangeImage img = pinhole(2, 2, 10.0, 1.0f);
  img.pose = SensorPose::look_at(Vec3(1, 2, 3), Vec3(0, 0, 0));
  save_range_image(img, dir / "a.rimg");
  const RangeImage back = load_range_image(dir / "a.rimg");
  EXPECT_EQ(back.valid_count(), 4u);
  EXPECT_EQ(back.model, ProjectionModel::kPinhole);
  EXPECT_EQ(back.pose.origin, img.pose.origin);
  EXPECT_EQ(back.pose.rotation, img.pose.rotation);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(back.depth[i], 1.0f);
}

TEST(RangeImageIo, DepthsRoundTripBitExactly) {
  TempDir dir;
  RangeImage img = pinhole(5, 3, 7.0, 1.0f);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<float> d(0.01f, 100.0f);
  for (auto& v : img.depth) v = d(rng);
  img.depth[3] = kNaN;
  save_range_image(img, dir / "b.rimg");
  const RangeImage back = load_range_image(dir / "b.rimg");
  ASSERT_EQ(back.depth.size(), img.depth.size());
  for (std::size_t i = 0; i < img.depth.size(); ++i) {
    if (std::isnan(img.depth[i])) {
      EXPECT_TRUE(std::isnan(back.depth[i]));
    } else {
      EXPECT_EQ(std::bit_cast<std::uint32_t>(back.depth[i]), std::bit_cast<std::uint32_t>(img.depth[i]));
    }
  }
}

TEST(RangeImageIo, EquirectangularTagRoundTrip) {
  TempDir dir;
  RangeImage img;
  img.model = ProjectionModel::kEquirectangular;
  img.width = 8;
  img.height = 4;
  img.vote_weight = kLidarVoteWeight;
  img.depth.assign(32, 2.0f);
  save_range_image(img, dir / "e.rimg");
  const RangeImage back = load_range_image(dir / "e.rimg");
  EXPECT_EQ(back.model, ProjectionModel::kEquirectangular);
  EXPECT_EQ(back.vote_weight, 5u);
}

TEST(RangeImageIo, NegativeDepthReportsPixelOffset) {
  TempDir dir;
  RangeImage img = pinhole(2, 2, 10.0, 1.0f);
  save_range_image(img, dir / "n.rimg");
  const auto size = std::filesystem::file_size(dir / "n.rimg");
  const std::uint64_t first_pixel = size - 4 * sizeof(float);
  {
    std::fstream f(dir / "n.rimg", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(static_cast<std::streamoff>(first_pixel));
    const float bad = -1.0f;
    f.write(reinterpret_cast<const char*>(&bad), sizeof bad);
  }
  try {
    load_range_image(dir / "n.rimg");
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), first_pixel);
  }
}

TEST(RangeImageIo, MalformedHeaderAndTag) {
  TempDir dir;
  {
    std::ofstream f(dir / "bad.rimg", std::ios::binary);
    f << "NOPE";
  }
  EXPECT_THROW(load_range_image(dir / "bad.rimg"), ParseError);

  RangeImage img = pinhole(2, 2, 10.0, 1.0f);
  save_range_image(img, dir / "t.rimg");
  {
    std::fstream f(dir / "t.rimg", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(8);
    const char tag = 7;
    f.write(&tag, 1);
  }
  try {
    load_range_image(dir / "t.rimg");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 8u);
  }

  std::filesystem::resize_file(dir / "t.rimg", 60);
  EXPECT_THROW(load_range_image(dir / "t.rimg"), ParseError);
}

TEST(RangeImageIo, PoseMustBeRotation) {
  SensorPose p;
  p.rotation(0, 0) = 2.0;
  EXPECT_THROW(p.validate(), ContractViolation);
  SensorPose mirror;
  mirror.rotation(2, 2) = -1.0;
  EXPECT_THROW(mirror.validate(), ContractViolation);
  EXPECT_NO_THROW(SensorPose::look_at(Vec3(3, 0, 0), Vec3::Zero()).validate());
}

TEST(Lidar, SinglePointLandsInClosestPixel) {
  const std::vector<Vec3> pts = {Vec3(2, 0, 0)};
  const auto conv = lidar_to_range_image(pts, SensorPose{}, 64, 32);
  const RangeImage& img = conv.image;
  EXPECT_EQ(img.valid_count(), 1u);
  EXPECT_EQ(img.vote_weight, kLidarVoteWeight);

  // +x sits on a pixel corner here, so several pixels can tie for closest.
  double best = -2.0;
  for (std::uint32_t y = 0; y < img.height; ++y) {
    for (std::uint32_t x = 0; x < img.width; ++x) best = std::max(best, img.pixel_direction(x, y).dot(Vec3::UnitX()));
  }
  for (std::uint32_t y = 0; y < img.height; ++y) {
    for (std::uint32_t x = 0; x < img.width; ++x) {
      if (!img.at(x, y)) continue;
      EXPECT_NEAR(img.pixel_direction(x, y).dot(Vec3::UnitX()), best, 1e-12);
      EXPECT_FLOAT_EQ(float(*img.at(x, y)), 2.0f);
    }
  }
}

TEST(Lidar, EmptyAndNearestReturn) {
  EXPECT_EQ(lidar_to_range_image({}, SensorPose{}, 16, 8).image.valid_count(), 0u);
  const std::vector<Vec3> pts = {Vec3(0, 3, 0), Vec3(0, 2, 0), Vec3::Zero()};
  const auto conv = lidar_to_range_image(pts, SensorPose{}, 16, 8);
  EXPECT_EQ(conv.image.valid_count(), 1u);
  EXPECT_EQ(conv.skipped_at_origin, 1u);
  for (float d : conv.image.depth) {
    if (!std::isnan(d)) EXPECT_EQ(d, 2.0f);
  }
}

TEST(Lidar, UnprojectRecoversPoints) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> g(0.0, 1.0);
  SensorPose pose;
  pose.origin = Vec3(0.5, -1.0, 2.0);
  for (int i = 0; i < 20; ++i) {
    const Vec3 p = pose.origin + Vec3(g(rng), g(rng), g(rng)) * 3.0;
    const std::vector<Vec3> pts = {p};
    const auto img = lidar_to_range_image(pts, pose, 1024, 512).image;
    for (std::uint32_t y = 0; y < img.height; ++y)
      for (std::uint32_t x = 0; x < img.width; ++x)
        if (img.valid(x, y)) EXPECT_LT((img.unproject(x, y) - p).norm(), 0.01 * (p - pose.origin).norm());
  }
}

TEST(SampleRadii, FrontoParallelPlane) {
  const double f = 100.0;
  const float z = 3.0f;
  const RangeImage img = pinhole(16, 12, f, z);
  const auto r = estimate_sample_radii(img);
  for (std::uint32_t y = 1; y + 1 < img.height; ++y) {
    for (std::uint32_t x = 1; x + 1 < img.width; ++x) {
      EXPECT_NEAR(r[img.index(x, y)], z / (2 * f), 1e-6 * z / (2 * f));
    }
  }
}

TEST(SampleRadii, IsolatedPixelAndAbsent) {
  const double f = 50.0;
  RangeImage img = pinhole(5, 5, f, kNaN);
  img.depth[img.index(2, 2)] = 4.0f;
  const auto r = estimate_sample_radii(img);
  EXPECT_NEAR(r[img.index(2, 2)], 4.0 / (2 * f), 1e-7);
  EXPECT_TRUE(std::isnan(r[img.index(0, 0)]));

  const auto none = estimate_sample_radii(pinhole(3, 3, f, kNaN));
  for (float v : none) EXPECT_TRUE(std::isnan(v));
}

TEST(Pyramid, ConstantImage) {
  const DepthPyramid pyr(pinhole(4, 4, 10.0, 2.5f));
  ASSERT_EQ(pyr.level_count(), 3);
  EXPECT_EQ(pyr.levels()[1].width, 2u);
  EXPECT_EQ(pyr.levels()[2].width, 1u);
  for (const auto& lv : pyr.levels())
    for (float d : lv.depth) EXPECT_EQ(d, 2.5f);
}

TEST(Pyramid, MeanOfValidChildren) {
  RangeImage one = pinhole(2, 2, 10.0, kNaN);
  one.depth[0] = 5.0f;
  EXPECT_EQ(DepthPyramid(one).levels()[1].depth[0], 5.0f);

  RangeImage two = pinhole(2, 2, 10.0, kNaN);
  two.depth[1] = 1.0f;
  two.depth[2] = 3.0f;
  EXPECT_EQ(DepthPyramid(two).levels()[1].depth[0], 2.0f);
}

TEST(Pyramid, ValidityPropagatesUpward) {
  std::mt19937_64 rng(3);
  std::bernoulli_distribution keep(0.2);
  RangeImage img = pinhole(13, 9, 10.0, 1.0f);
  for (auto& d : img.depth)
    if (!keep(rng)) d = kNaN;
  const DepthPyramid pyr(img);
  for (int l = 0; l + 1 < pyr.level_count(); ++l) {
    const auto& fine = pyr.levels()[l];
    const auto& coarse = pyr.levels()[l + 1];
    for (std::uint32_t y = 0; y < coarse.height; ++y) {
      for (std::uint32_t x = 0; x < coarse.width; ++x) {
        bool any = false;
        for (std::uint32_t cy = 2 * y; cy < std::min(2 * y + 2, fine.height); ++cy)
          for (std::uint32_t cx = 2 * x; cx < std::min(2 * x + 2, fine.width); ++cx)
            any |= !std::isnan(fine.depth_at(cx, cy));
        EXPECT_EQ(any, !std::isnan(coarse.depth_at(x, y)));
      }
    }
  }
}

TEST(Pyramid, LevelFollowsProjectedDiameter) {
  const double f = 100.0;
  const DepthPyramid pyr(pinhole(64, 64, f, 10.0f));
  const double z = 10.0;
  const double r1 = 0.5 * z / f;  // one pixel across
  const auto p1 = pyr.project(Vec3(0, 0, z), r1);
  ASSERT_TRUE(p1);
  EXPECT_EQ(p1->level, 0);
  const auto p4 = pyr.project(Vec3(0, 0, z), 4 * r1);
  ASSERT_TRUE(p4);
  EXPECT_EQ(p4->level, 2);
  ASSERT_TRUE(p4->depth);
  EXPECT_NEAR(*p4->depth, 10.0, 1e-9);
  EXPECT_NEAR(p4->distance, 10.0, 1e-12);
  EXPECT_FALSE(pyr.project(Vec3(0, 0, -z), r1));
}

TEST(Pyramid, PinholeDepthIsRangeAlongRay) {
  const double f = 10.0;
  const DepthPyramid pyr(pinhole(20, 20, f, 2.0f));
  const Vec3 c(0.6, 0.0, 2.0);
  const auto p = pyr.project(c, 0.01);
  ASSERT_TRUE(p && p->depth);
  EXPECT_NEAR(*p->depth, c.norm(), 1e-6);
}

TEST(Frustum, ContainsOriginOrSample) {
  RangeImage img = pinhole(8, 8, 8.0, 2.0f);
  const Aabb around_origin{Vec3(-0.1, -0.1, -0.1), Vec3(0.1, 0.1, 0.1)};
  EXPECT_TRUE(frustum_overlaps(img, around_origin));
  const Vec3 s = img.unproject(3, 5);
  EXPECT_TRUE(frustum_overlaps(img, Aabb{s - Vec3::Constant(1e-3), s + Vec3::Constant(1e-3)}));
}

TEST(Frustum, BehindCameraIsRejected) {
  const RangeImage img = pinhole(8, 8, 8.0, 2.0f);
  EXPECT_FALSE(frustum_overlaps(img, Aabb{Vec3(-0.2, -0.2, -1.0), Vec3(0.2, 0.2, -0.5)}));
  EXPECT_FALSE(frustum_overlaps(img, Aabb{Vec3(-0.2, -0.2, 10.0), Vec3(0.2, 0.2, 11.0)}));
}

TEST(Frustum, NeverMissesASample) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    RangeImage img = pinhole(6, 5, 5.0, 1.0f);
    img.pose = SensorPose::look_at(Vec3(u(rng), u(rng), u(rng)) * 4.0 - Vec3::Constant(2), Vec3::Zero());
    for (auto& d : img.depth) d = u(rng) < 0.2 ? kNaN : float(0.5 + 3.0 * u(rng));
    for (std::uint32_t y = 0; y < img.height; ++y) {
      for (std::uint32_t x = 0; x < img.width; ++x) {
        if (!img.valid(x, y)) continue;
        const Vec3 p = img.unproject(x, y);
        const double e = 0.05 * u(rng);
        const Vec3 off = Vec3(u(rng), u(rng), u(rng)) * e;
        EXPECT_TRUE(frustum_overlaps(img, Aabb{p - off, p + Vec3::Constant(e) - off}));
      }
    }
  }
}

TEST(Frustum, EquirectangularUsesBall) {
  RangeImage img;
  img.model = ProjectionModel::kEquirectangular;
  img.width = 8;
  img.height = 4;
  img.depth.assign(32, 2.0f);
  EXPECT_TRUE(frustum_overlaps(img, Aabb{Vec3(1.5, -0.1, -0.1), Vec3(1.9, 0.1, 0.1)}));
  EXPECT_FALSE(frustum_overlaps(img, Aabb{Vec3(2.5, -0.1, -0.1), Vec3(2.9, 0.1, 0.1)}));
  EXPECT_TRUE(frustum_overlaps(img, Aabb{Vec3(2.5, -0.1, -0.1), Vec3(2.9, 0.1, 0.1)}, 1.0));
}

}  // namespace
}  // namespace recon
