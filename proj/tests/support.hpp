#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "recon/mesh.hpp"
#include "recon/morton.hpp"
#include "recon/octree_file.hpp"
#include "recon/range_image.hpp"

namespace recon::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t");
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// Morton path by setting one bit at a time, octant bit order x, y, z.
u128 interleave_bitwise(int depth, std::uint32_t x, std::uint32_t y, std::uint32_t z);

/// Readable path as a string of octant digits, e.g. "071".
std::string path_string(const MortonCode& c);

MortonCode random_code(std::mt19937_64& rng, int min_depth, int max_depth);

/// Random codes concentrated near a random sphere, like samples of a surface.
std::vector<MortonCode> random_surface_codes(std::mt19937_64& rng, std::size_t count, int min_depth, int max_depth);

/// Leaves of the complete octree refining every code: split any node with a
/// strict descendant among the codes.
std::vector<MortonCode> complete_leaves(std::vector<MortonCode> codes);

/// Classic ripple propagation on an in-memory leaf set until no leaf has a
/// face neighbor more than one level coarser.
std::vector<MortonCode> ripple_balance(const std::vector<MortonCode>& codes);

/// Sum of 8^(30 - depth) over leaves equals 8^30 and leaves are disjoint.
bool exact_cover(const std::vector<MortonCode>& sorted_leaves);

/// For each leaf and face, the leaf holding the neighbor position is at most
/// one level coarser. Leaves must be sorted and complete.
bool two_to_one(const std::vector<MortonCode>& sorted_leaves, std::string* witness = nullptr);

std::vector<MortonCode> codes_of(const std::vector<CubeRecord>& records);
std::vector<CubeRecord> records_of(const std::vector<MortonCode>& codes);

/// All leaves at one depth in Z-order.
std::vector<CubeRecord> uniform_records(int depth);

/// Subdivided icosahedron with vertices on the sphere of radius r.
Mesh icosphere(int subdivisions, double r = 1.0);

/// Vote bin of one voxel, following the published histogram listing line by
/// line. `depth` is the observed range along the ray, `distance` the range to
/// the voxel center.
std::optional<int> listing_vote_bin(double depth, double distance, double r_x, double delta_mult = 6.0,
                                    double eta_mult = 18.0);

/// Equirectangular image with every pixel at `range`, origin at zero.
RangeImage constant_panorama(float range, std::uint32_t weight, std::uint32_t width = 8);

/// argmin of the prox objective over a grid of step `step` on [-1, 1].
double grid_prox(double u_tilde, double tau_lambda, const std::array<std::uint32_t, 8>& hist, double step = 1e-5);

/// Uniform depth-`depth` octree over the unit root whose cells with x below
/// the midplane vote bin 0 and the rest bin 7, `weight` each.
std::vector<CubeRecord> slab_records(int depth, std::uint32_t weight = 5);

bool files_equal(const std::filesystem::path& a, const std::filesystem::path& b);

}  // namespace recon::testing
