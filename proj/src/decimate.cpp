#include <Eigen/Dense>
#include <algorithm>
#include <queue>
#include <set>
#include <tuple>

#include "recon/mesher.hpp"

namespace recon {

namespace {

using Quadric = Eigen::Matrix4d;

struct Candidate {
  double cost;
  std::uint32_t a, b;
  std::uint32_t stamp_a, stamp_b;
  Vec3 target;

  bool operator>(const Candidate& o) const { return std::tie(cost, a, b) > std::tie(o.cost, o.a, o.b); }
};

double evaluate(const Quadric& q, const Vec3& x) {
  const Eigen::Vector4d h(x.x(), x.y(), x.z(), 1.0);
  return std::max(0.0, h.dot(q * h));
}

class Collapser {
 public:
  explicit Collapser(const MeshPart& part)
      : pos_(part.vertices),
        border_(part.border),
        tris_(part.triangles),
        alive_tri_(part.triangles.size(), 1),
        alive_(part.vertices.size(), 1),
        stamp_(part.vertices.size(), 0),
        faces_(part.vertices.size()),
        quadric_(part.vertices.size(), Quadric::Zero()) {
    if (border_.size() != pos_.size()) border_.assign(pos_.size(), 0);
    for (std::uint32_t f = 0; f < tris_.size(); ++f) {
      const auto& t = tris_[f];
      for (auto v : t) faces_[v].push_back(f);
      const Vec3 n = (pos_[t[1]] - pos_[t[0]]).cross(pos_[t[2]] - pos_[t[0]]);
      const double len = n.norm();
      if (len <= 0.0) continue;
      const Vec3 u = n / len;
      const Eigen::Vector4d plane(u.x(), u.y(), u.z(), -u.dot(pos_[t[0]]));
      const Quadric k = plane * plane.transpose();
      for (auto v : t) quadric_[v] += k;
    }
    live_faces_ = tris_.size();
    for (std::uint32_t v = 0; v < pos_.size(); ++v) {
      for (auto n : neighbors(v)) {
        if (v < n) push(v, n);
      }
    }
  }

  void run(std::size_t target) {
    while (live_faces_ > target && !heap_.empty()) {
      const Candidate c = heap_.top();
      heap_.pop();
      if (!alive_[c.a] || !alive_[c.b] || stamp_[c.a] != c.stamp_a || stamp_[c.b] != c.stamp_b) continue;
      if (!legal(c.a, c.b, c.target)) continue;
      collapse(c.a, c.b, c.target);
    }
  }

  MeshPart result(const MortonCode& leaf) const {
    MeshPart out;
    out.leaf = leaf;
    std::vector<std::int64_t> remap(pos_.size(), -1);
    for (std::uint32_t v = 0; v < pos_.size(); ++v) {
      if (!alive_[v]) continue;
      bool used = false;
      for (auto f : faces_[v]) used = used || alive_tri_[f];
      if (!used) continue;
      remap[v] = static_cast<std::int64_t>(out.vertices.size());
      out.vertices.push_back(pos_[v]);
      out.border.push_back(border_[v]);
    }
    for (std::uint32_t f = 0; f < tris_.size(); ++f) {
      if (!alive_tri_[f]) continue;
      Triangle t;
      for (int i = 0; i < 3; ++i) t[i] = static_cast<std::uint32_t>(remap[tris_[f][i]]);
      out.triangles.push_back(t);
    }
    return out;
  }

 private:
  std::set<std::uint32_t> neighbors(std::uint32_t v) const {
    std::set<std::uint32_t> out;
    for (auto f : faces_[v]) {
      if (!alive_tri_[f]) continue;
      for (auto w : tris_[f]) {
        if (w != v) out.insert(w);
      }
    }
    return out;
  }

  void push(std::uint32_t a, std::uint32_t b) {
    if (border_[a] || border_[b]) return;
    if (a > b) std::swap(a, b);
    const Quadric q = quadric_[a] + quadric_[b];
    // Collapse onto the cheaper endpoint so vertices stay on the input surface.
    Vec3 best = pos_[a];
    double cost = evaluate(q, best);
    if (const double cb = evaluate(q, pos_[b]); cb < cost) {
      cost = cb;
      best = pos_[b];
    }
    heap_.push(Candidate{cost, a, b, stamp_[a], stamp_[b], best});
  }

  bool legal(std::uint32_t a, std::uint32_t b, const Vec3& x) const {
    if (border_[a] || border_[b]) return false;
    std::vector<std::uint32_t> shared;
    std::set<std::uint32_t> opposite;
    for (auto f : faces_[a]) {
      if (!alive_tri_[f]) continue;
      const auto& t = tris_[f];
      if (t[0] == b || t[1] == b || t[2] == b) {
        shared.push_back(f);
        for (auto w : t) {
          if (w != a && w != b) opposite.insert(w);
        }
      }
    }
    if (shared.size() != 2) return false;
    // Link condition: common neighbors are exactly the two opposite vertices.
    const auto na = neighbors(a);
    const auto nb = neighbors(b);
    std::size_t common = 0;
    for (auto w : na) {
      if (w != b && nb.count(w)) {
        if (!opposite.count(w)) return false;
        ++common;
      }
    }
    if (common != opposite.size()) return false;
    // Reject normal flips beyond 90 degrees and degenerate results.
    for (std::uint32_t v : {a, b}) {
      for (auto f : faces_[v]) {
        if (!alive_tri_[f]) continue;
        const auto& t = tris_[f];
        if ((t[0] == a || t[1] == a || t[2] == a) && (t[0] == b || t[1] == b || t[2] == b)) continue;
        std::array<Vec3, 3> p{pos_[t[0]], pos_[t[1]], pos_[t[2]]};
        const Vec3 before = (p[1] - p[0]).cross(p[2] - p[0]);
        for (int i = 0; i < 3; ++i) {
          if (t[i] == v) p[i] = x;
        }
        const Vec3 after = (p[1] - p[0]).cross(p[2] - p[0]);
        if (after.norm() <= 1e-14 * std::max(1.0, before.norm())) return false;
        if (before.dot(after) <= 0.0) return false;
      }
    }
    return true;
  }

  void collapse(std::uint32_t a, std::uint32_t b, const Vec3& x) {
    pos_[a] = x;
    for (auto f : faces_[b]) {
      if (!alive_tri_[f]) continue;
      auto& t = tris_[f];
      if (t[0] == a || t[1] == a || t[2] == a) {
        alive_tri_[f] = 0;
        --live_faces_;
        continue;
      }
      for (auto& w : t) {
        if (w == b) w = a;
      }
      faces_[a].push_back(f);
    }
    faces_[b].clear();
    alive_[b] = 0;
    quadric_[a] += quadric_[b];
    ++stamp_[a];
    ++stamp_[b];
    std::erase_if(faces_[a], [&](std::uint32_t f) { return !alive_tri_[f]; });
    for (auto n : neighbors(a)) push(a, n);
  }

  std::vector<Vec3> pos_;
  std::vector<std::uint8_t> border_;
  std::vector<Triangle> tris_;
  std::vector<std::uint8_t> alive_tri_;
  std::vector<std::uint8_t> alive_;
  std::vector<std::uint32_t> stamp_;
  std::vector<std::vector<std::uint32_t>> faces_;
  std::vector<Quadric> quadric_;
  std::size_t live_faces_ = 0;
  std::priority_queue<Candidate, std::vector<Candidate>, std::greater<>> heap_;
};

}  // namespace

MeshPart decimate(const MeshPart& part, std::size_t target_faces) {
  if (target_faces >= part.triangles.size()) return part;
  Collapser c(part);
  c.run(target_faces);
  return c.result(part.leaf);
}

}  // namespace recon
