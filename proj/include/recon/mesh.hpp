#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "recon/morton.hpp"

namespace recon {

using Triangle = std::array<std::uint32_t, 3>;

struct Mesh {
  std::vector<Vec3> vertices;
  std::vector<Triangle> triangles;
};

/// Triangles extracted for one treetop leaf. Border vertices sit on edges
/// that the part shares with other parts.
struct MeshPart {
  MortonCode leaf;
  std::vector<Vec3> vertices;
  std::vector<std::uint8_t> border;
  std::vector<Triangle> triangles;
};

/// Edges used by exactly one triangle, as sorted vertex index pairs.
std::vector<std::array<std::uint32_t, 2>> boundary_edges(const std::vector<Triangle>& triangles);

/// Flags the endpoints of every boundary edge.
void mark_border_vertices(MeshPart& part);

double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c);

struct TopologyStats {
  std::size_t vertices = 0;  // referenced by a triangle
  std::size_t edges = 0;
  std::size_t faces = 0;
  std::size_t boundary_edges = 0;
  std::size_t nonmanifold_edges = 0;
  std::size_t components = 0;
  long euler = 0;
};

TopologyStats topology(const Mesh& mesh);

/// Triangles of the connected component (through shared edges) with most faces.
Mesh largest_component(const Mesh& mesh);

// File formats.
void save_mesh_part(const MeshPart& part, const std::filesystem::path& path);
MeshPart load_mesh_part(const std::filesystem::path& path);
void save_ply(const Mesh& mesh, const std::filesystem::path& path);
void save_obj(const Mesh& mesh, const std::filesystem::path& path);
/// Reads binary little-endian or ASCII PLY, or OBJ, by extension.
Mesh load_mesh(const std::filesystem::path& path);
void save_mesh(const Mesh& mesh, const std::filesystem::path& path);

}  // namespace recon
