#include <Eigen/Geometry>
#include <algorithm>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "recon/binary_io.hpp"
#include "recon/mesh.hpp"

namespace recon {

namespace {

constexpr char kPartMagic[8] = {'M', 'E', 'S', 'H', 'P', 'A', 'R', 'T'};
constexpr std::uint32_t kPartVersion = 1;

std::uint64_t edge_key(std::uint32_t a, std::uint32_t b) {
  if (a > b) std::swap(a, b);
  return (std::uint64_t(a) << 32) | b;
}

struct UnionFind {
  std::vector<std::uint32_t> parent;
  explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0u); }
  std::uint32_t find(std::uint32_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  }
  void unite(std::uint32_t a, std::uint32_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

// Face components through shared edges; returns per-face root.
std::vector<std::uint32_t> face_components(const std::vector<Triangle>& tris) {
  UnionFind uf(tris.size());
  std::unordered_map<std::uint64_t, std::uint32_t> first_face;
  for (std::uint32_t f = 0; f < tris.size(); ++f) {
    for (int e = 0; e < 3; ++e) {
      auto [it, inserted] = first_face.emplace(edge_key(tris[f][e], tris[f][(e + 1) % 3]), f);
      if (!inserted) uf.unite(f, it->second);
    }
  }
  std::vector<std::uint32_t> root(tris.size());
  for (std::uint32_t f = 0; f < tris.size(); ++f) root[f] = uf.find(f);
  return root;
}

std::size_t scalar_size(const std::string& type) {
  if (type == "char" || type == "uchar" || type == "int8" || type == "uint8") return 1;
  if (type == "short" || type == "ushort" || type == "int16" || type == "uint16") return 2;
  if (type == "int" || type == "uint" || type == "float" || type == "int32" || type == "uint32" || type == "float32")
    return 4;
  if (type == "double" || type == "float64") return 8;
  throw ParseError("unknown PLY scalar type " + type, 0);
}

double read_scalar(const unsigned char* p, const std::string& type) {
  if (type == "char" || type == "int8") return bin::load<std::int8_t>(p);
  if (type == "uchar" || type == "uint8") return bin::load<std::uint8_t>(p);
  if (type == "short" || type == "int16") return bin::load<std::int16_t>(p);
  if (type == "ushort" || type == "uint16") return bin::load<std::uint16_t>(p);
  if (type == "int" || type == "int32") return bin::load<std::int32_t>(p);
  if (type == "uint" || type == "uint32") return bin::load<std::uint32_t>(p);
  if (type == "float" || type == "float32") return bin::load<float>(p);
  return bin::load<double>(p);
}

Mesh load_ply(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open mesh " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "ply") throw ParseError("missing PLY magic", 0);
  bool binary = false;
  struct Property {
    std::string name, type, count_type;
    bool list = false;
  };
  struct Element {
    std::string name;
    std::size_t count = 0;
    std::vector<Property> props;
  };
  std::vector<Element> elements;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt == "binary_little_endian") {
        binary = true;
      } else if (fmt != "ascii") {
        throw ParseError("unsupported PLY format " + fmt, static_cast<std::uint64_t>(in.tellg()));
      }
    } else if (word == "element") {
      Element e;
      ls >> e.name >> e.count;
      elements.push_back(e);
    } else if (word == "property") {
      if (elements.empty()) throw ParseError("PLY property before element", static_cast<std::uint64_t>(in.tellg()));
      Property p;
      std::string t;
      ls >> t;
      if (t == "list") {
        p.list = true;
        ls >> p.count_type >> p.type >> p.name;
      } else {
        p.type = t;
        ls >> p.name;
      }
      elements.back().props.push_back(p);
    } else if (word == "end_header") {
      break;
    }
  }
  Mesh mesh;
  for (const auto& e : elements) {
    for (std::size_t i = 0; i < e.count; ++i) {
      Vec3 v = Vec3::Zero();
      std::vector<std::uint32_t> idx;
      for (const auto& p : e.props) {
        auto read_one = [&](const std::string& type) -> double {
          if (!binary) {
            double x;
            if (!(in >> x)) throw ParseError("truncated ASCII PLY", static_cast<std::uint64_t>(in.tellg()));
            return x;
          }
          unsigned char buf[8];
          const auto offset = static_cast<std::uint64_t>(in.tellg());
          if (!in.read(reinterpret_cast<char*>(buf), static_cast<std::streamsize>(scalar_size(type)))) {
            throw ParseError("truncated binary PLY", offset);
          }
          return read_scalar(buf, type);
        };
        if (p.list) {
          const auto n = static_cast<std::size_t>(read_one(p.count_type));
          for (std::size_t k = 0; k < n; ++k) idx.push_back(static_cast<std::uint32_t>(read_one(p.type)));
        } else {
          const double x = read_one(p.type);
          if (p.name == "x") v.x() = x;
          if (p.name == "y") v.y() = x;
          if (p.name == "z") v.z() = x;
        }
      }
      if (e.name == "vertex") mesh.vertices.push_back(v);
      if (e.name == "face") {
        for (std::size_t k = 1; k + 1 < idx.size(); ++k) mesh.triangles.push_back({idx[0], idx[k], idx[k + 1]});
      }
    }
  }
  return mesh;
}

Mesh load_obj(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open mesh " + path.string());
  Mesh mesh;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "v") {
      Vec3 v;
      ls >> v.x() >> v.y() >> v.z();
      mesh.vertices.push_back(v);
    } else if (tag == "f") {
      std::vector<std::uint32_t> idx;
      std::string tok;
      while (ls >> tok) idx.push_back(static_cast<std::uint32_t>(std::stoul(tok.substr(0, tok.find('/'))) - 1));
      for (std::size_t k = 1; k + 1 < idx.size(); ++k) mesh.triangles.push_back({idx[0], idx[k], idx[k + 1]});
    }
  }
  return mesh;
}

}  // namespace

std::vector<std::array<std::uint32_t, 2>> boundary_edges(const std::vector<Triangle>& triangles) {
  std::map<std::uint64_t, int> uses;
  for (const auto& t : triangles) {
    for (int e = 0; e < 3; ++e) ++uses[edge_key(t[e], t[(e + 1) % 3])];
  }
  std::vector<std::array<std::uint32_t, 2>> out;
  for (const auto& [k, n] : uses) {
    if (n == 1) out.push_back({static_cast<std::uint32_t>(k >> 32), static_cast<std::uint32_t>(k & 0xffffffffu)});
  }
  return out;
}

void mark_border_vertices(MeshPart& part) {
  part.border.assign(part.vertices.size(), 0);
  for (const auto& e : boundary_edges(part.triangles)) {
    part.border[e[0]] = 1;
    part.border[e[1]] = 1;
  }
}

double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c) { return 0.5 * (b - a).cross(c - a).norm(); }

TopologyStats topology(const Mesh& mesh) {
  TopologyStats s;
  s.faces = mesh.triangles.size();
  std::unordered_map<std::uint64_t, int> uses;
  std::vector<std::uint8_t> used(mesh.vertices.size(), 0);
  for (const auto& t : mesh.triangles) {
    for (int e = 0; e < 3; ++e) {
      ++uses[edge_key(t[e], t[(e + 1) % 3])];
      used[t[e]] = 1;
    }
  }
  s.edges = uses.size();
  for (const auto& [k, n] : uses) {
    if (n == 1) ++s.boundary_edges;
    if (n > 2) ++s.nonmanifold_edges;
  }
  s.vertices = static_cast<std::size_t>(std::count(used.begin(), used.end(), 1));
  const auto roots = face_components(mesh.triangles);
  std::vector<std::uint32_t> sorted(roots);
  std::sort(sorted.begin(), sorted.end());
  s.components = static_cast<std::size_t>(std::unique(sorted.begin(), sorted.end()) - sorted.begin());
  s.euler = static_cast<long>(s.vertices) - static_cast<long>(s.edges) + static_cast<long>(s.faces);
  return s;
}

Mesh largest_component(const Mesh& mesh) {
  const auto roots = face_components(mesh.triangles);
  std::unordered_map<std::uint32_t, std::size_t> size;
  for (auto r : roots) ++size[r];
  std::uint32_t best = 0;
  std::size_t best_size = 0;
  for (const auto& [r, n] : size) {
    if (n > best_size || (n == best_size && r < best)) {
      best = r;
      best_size = n;
    }
  }
  Mesh out;
  std::vector<std::int64_t> remap(mesh.vertices.size(), -1);
  for (std::size_t f = 0; f < mesh.triangles.size(); ++f) {
    if (roots[f] != best) continue;
    Triangle t;
    for (int k = 0; k < 3; ++k) {
      auto& m = remap[mesh.triangles[f][k]];
      if (m < 0) {
        m = static_cast<std::int64_t>(out.vertices.size());
        out.vertices.push_back(mesh.vertices[mesh.triangles[f][k]]);
      }
      t[k] = static_cast<std::uint32_t>(m);
    }
    out.triangles.push_back(t);
  }
  return out;
}

void save_mesh_part(const MeshPart& part, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot create mesh part " + path.string());
  out.write(kPartMagic, 8);
  bin::put(out, kPartVersion);
  const u128 key = part.leaf.key();
  bin::put(out, static_cast<std::uint64_t>(key >> 64));
  bin::put(out, static_cast<std::uint64_t>(key));
  bin::put(out, static_cast<std::uint64_t>(part.vertices.size()));
  bin::put(out, static_cast<std::uint64_t>(part.triangles.size()));
  for (const auto& v : part.vertices) {
    for (int k = 0; k < 3; ++k) bin::put(out, v[k]);
  }
  out.write(reinterpret_cast<const char*>(part.border.data()), static_cast<std::streamsize>(part.border.size()));
  for (const auto& t : part.triangles) {
    for (int k = 0; k < 3; ++k) bin::put(out, t[k]);
  }
  if (!out) throw IoError("write failed on " + path.string());
}

MeshPart load_mesh_part(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open mesh part " + path.string());
  char magic[8] = {};
  if (!in.read(magic, 8) || std::memcmp(magic, kPartMagic, 8) != 0) throw ParseError("bad MESHPART magic", 0);
  if (bin::get<std::uint32_t>(in, "MESHPART version") != kPartVersion) {
    throw ParseError("unsupported MESHPART version", 8);
  }
  MeshPart part;
  const auto hi = bin::get<std::uint64_t>(in, "leaf code");
  const auto lo = bin::get<std::uint64_t>(in, "leaf code");
  part.leaf = MortonCode::from_key((u128(hi) << 64) | lo);
  const auto nv = bin::get<std::uint64_t>(in, "vertex count");
  const auto nt = bin::get<std::uint64_t>(in, "triangle count");
  part.vertices.resize(nv);
  for (auto& v : part.vertices) {
    for (int k = 0; k < 3; ++k) v[k] = bin::get<double>(in, "vertex");
  }
  part.border.resize(nv);
  const auto offset = static_cast<std::uint64_t>(in.tellg());
  if (!in.read(reinterpret_cast<char*>(part.border.data()), static_cast<std::streamsize>(nv))) {
    throw ParseError("truncated border flags", offset);
  }
  part.triangles.resize(nt);
  for (auto& t : part.triangles) {
    for (int k = 0; k < 3; ++k) {
      const auto off = static_cast<std::uint64_t>(in.tellg());
      t[k] = bin::get<std::uint32_t>(in, "triangle");
      if (t[k] >= nv) throw ParseError("triangle index out of range", off);
    }
  }
  return part;
}

void save_ply(const Mesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot create mesh " + path.string());
  out << "ply\nformat binary_little_endian 1.0\n"
      << "element vertex " << mesh.vertices.size() << "\n"
      << "property float x\nproperty float y\nproperty float z\n"
      << "element face " << mesh.triangles.size() << "\n"
      << "property list uchar int vertex_indices\nend_header\n";
  for (const auto& v : mesh.vertices) {
    for (int k = 0; k < 3; ++k) bin::put(out, static_cast<float>(v[k]));
  }
  for (const auto& t : mesh.triangles) {
    bin::put(out, std::uint8_t(3));
    for (int k = 0; k < 3; ++k) bin::put(out, static_cast<std::int32_t>(t[k]));
  }
  if (!out) throw IoError("write failed on " + path.string());
}

void save_obj(const Mesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot create mesh " + path.string());
  out.precision(9);
  for (const auto& v : mesh.vertices) out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const auto& t : mesh.triangles) out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
  if (!out) throw IoError("write failed on " + path.string());
}

Mesh load_mesh(const std::filesystem::path& path) {
  return path.extension() == ".obj" ? load_obj(path) : load_ply(path);
}

void save_mesh(const Mesh& mesh, const std::filesystem::path& path) {
  if (path.extension() == ".obj") {
    save_obj(mesh, path);
  } else {
    save_ply(mesh, path);
  }
}

}  // namespace recon
