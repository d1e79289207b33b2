// Acceptance run: prints one PASS/FAIL line per criterion and exits non-zero
// if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>

#include "recon/histograms.hpp"
#include "recon/level_view.hpp"
#include "recon/mesher.hpp"
#include "recon/octree_build.hpp"
#include "recon/pipeline.hpp"
#include "recon/solver.hpp"
#include "recon/synth.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace recon;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

struct Result {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

struct SphereRun {
  PipelineConfig config;
  double seconds = 0.0;
  double finest_edge = 0.0;
  double root_radius = 0.0;
  int leaves = 0;
  Mesh mesh;
};

constexpr std::uint64_t kLeafCubes = std::uint64_t(1) << 16;

SphereRun run_sphere(const fs::path& root, const std::string& name, double outliers, bool snapshots) {
  SphereRun run;
  const auto scene = make_scene(SceneKind::kSphere);
  const auto rig = fibonacci_rig(scene, 20, 128);
  const auto manifest = write_synthetic_dataset(scene, rig, root / (name + "_data"), outliers, 1);
  run.config.manifest = manifest;
  run.config.work = root / (name + "_work");
  run.config.leaf_cubes = kLeafCubes;
  run.config.keep_level_snapshots = snapshots;
  const auto start = Clock::now();
  reconstruct(run.config, true);
  run.seconds = seconds_since(start);
  run.mesh = load_mesh(run.config.output_path());
  RootFrame frame;
  int deepest = 0;
  for (const auto& r : read_octree(run.config.work / "solved.octr", &frame)) deepest = std::max<int>(deepest, r.code.depth);
  run.finest_edge = frame.edge(deepest);
  run.root_radius = frame.r_root;
  run.leaves = (*load_report(run.config, Stage::kTreetop))["details"]["leaves"].get<int>();
  return run;
}

std::vector<MeshPart> load_parts(const fs::path& dir, int count) {
  std::vector<MeshPart> parts;
  for (int k = 0; k < count; ++k) parts.push_back(load_mesh_part(dir / ("part_" + std::to_string(k) + ".mpart")));
  return parts;
}

double mean_abs_sdf(const Mesh& m, const SyntheticScene& scene) { return score(m, scene).mean_abs_sdf; }

Result sphere_end_to_end(const SphereRun& run) {
  const auto scene = make_scene(SceneKind::kSphere);
  const ScoreReport whole = score(run.mesh, scene);
  const Mesh largest = largest_component(run.mesh);
  const ScoreReport main = score(largest, scene);
  const double e = run.finest_edge;
  const bool pass = run.leaves >= 8 && whole.boundary_edges == 0 && main.euler == 2 &&
                    main.mean_abs_sdf <= 1.0 * e && main.max_abs_sdf <= 3.0 * e && run.seconds <= 300.0;
  return {pass, "leaves " + std::to_string(run.leaves) + ", boundary edges " + std::to_string(whole.boundary_edges) +
                    ", largest-component euler " + std::to_string(main.euler) + ", mean|sdf| " +
                    fmt(main.mean_abs_sdf) + " max|sdf| " + fmt(main.max_abs_sdf) + " (edge " + fmt(e) +
                    "; whole mesh mean " + fmt(whole.mean_abs_sdf) + " max " + fmt(whole.max_abs_sdf) + ", " +
                    std::to_string(whole.components) + " components), " + fmt(run.seconds) + " s"};
}

Result noise_filtering(const SphereRun& clean, const SphereRun& noisy) {
  const auto scene = make_scene(SceneKind::kSphere);
  auto in_free_space = [&](const Vec3& p) {
    // Between the sphere and the camera shell at 3R.
    return scene.sdf(p) > 0.15 * scene.radius && (p - scene.center).norm() < 3.0 * scene.radius;
  };
  std::set<std::uint32_t> used;
  for (const auto& t : noisy.mesh.triangles) used.insert(t.begin(), t.end());
  std::size_t free_space = 0;
  for (std::uint32_t v : used) free_space += in_free_space(noisy.mesh.vertices[v]) ? 1 : 0;
  const Mesh main = largest_component(noisy.mesh);
  std::size_t main_free = 0;
  for (const Vec3& p : main.vertices) main_free += in_free_space(p) ? 1 : 0;
  const double frac = used.empty() ? 1.0 : double(free_space) / double(used.size());
  const double mean_clean = mean_abs_sdf(clean.mesh, scene);
  const double mean_noisy = mean_abs_sdf(noisy.mesh, scene);
  const bool pass = !used.empty() && frac <= 0.005 && mean_noisy <= 2.0 * mean_clean;
  return {pass, "free-space vertices " + std::to_string(free_space) + "/" + std::to_string(used.size()) + " = " +
                    fmt(100.0 * frac) + "% (" + std::to_string(main_free) + " on the largest component), mean|sdf| " +
                    fmt(mean_noisy) + " vs clean " + fmt(mean_clean) + " (largest component " +
                    fmt(mean_abs_sdf(main, scene)) + "), root radius " + fmt(noisy.root_radius) + " vs " +
                    fmt(clean.root_radius)};
}

Result seams(const std::vector<MeshPart>& parts) {
  SeamReport report;
  try {
    const Mesh m = merge_parts(parts, &report, true);
    const auto t = topology(m);
    const bool pass = report.unmatched == 0 && report.matched == report.border_edges && t.boundary_edges == 0;
    return {pass, std::to_string(parts.size()) + " parts, " + std::to_string(report.border_edges) +
                      " border edges, " + std::to_string(report.unmatched) + " unmatched, " +
                      std::to_string(report.shared_vertices) + " shared vertices"};
  } catch (const std::exception& e) {
    return {false, e.what()};
  }
}

Result memory_contract(const SphereRun& run) {
  bool pass = true;
  std::string detail;
  for (Stage s : kStages) {
    const auto j = load_report(run.config, s);
    if (!j) return {false, "missing report for " + stage_name(s)};
    const auto peak = (*j)["peak_resident_records"].get<std::int64_t>();
    const auto pyramids = (*j)["peak_resident_pyramids"].get<std::int64_t>();
    pass &= double(peak) <= 1.25 * double(run.config.leaf_cubes);
    if (s == Stage::kVote) {
      pass &= pyramids <= 1;
      detail += "vote pyramids " + std::to_string(pyramids) + ", ";
    }
    detail += stage_name(s) + " " + std::to_string(peak) + " ";
  }
  return {pass, detail + "(limit " + fmt(1.25 * double(run.config.leaf_cubes)) + ")"};
}

Result external_sort(const fs::path& root) {
  std::mt19937_64 rng(5);
  std::vector<fs::path> runs;
  std::vector<CubeRecord> all;
  const std::size_t total = 1000000, k = 16;
  for (std::size_t r = 0; r < k; ++r) {
    std::vector<CubeRecord> recs;
    recs.reserve(total / k);
    for (std::size_t i = 0; i < total / k; ++i) {
      CubeRecord c;
      c.code = testing::random_code(rng, 0, 8);
      c.n = 1;
      c.r_sum = float(rng() % 1000) * 1e-3f;
      c.hist[rng() % 8] = 1;
      recs.push_back(c);
    }
    sort_and_merge(recs);
    all.insert(all.end(), recs.begin(), recs.end());
    runs.push_back(root / ("sort_run_" + std::to_string(r) + ".octr"));
    write_octree(runs.back(), RootFrame{}, recs);
  }
  std::stable_sort(all.begin(), all.end(), [](const CubeRecord& a, const CubeRecord& b) { return a.code < b.code; });
  sort_and_merge(all);
  write_octree(root / "sort_oracle.octr", RootFrame{}, all);
  const auto start = Clock::now();
  external_merge(runs, root / "sort_out.octr", 65536);
  const double t = seconds_since(start);
  const bool same = testing::files_equal(root / "sort_oracle.octr", root / "sort_out.octr");
  return {same && t <= 30.0, std::string(same ? "byte-identical" : "differs") + ", " + std::to_string(all.size()) +
                                  " records out, " + fmt(t) + " s"};
}

Result balance_predicate(const fs::path& root) {
  std::mt19937_64 rng(6);
  int ok = 0;
  std::size_t smallest = SIZE_MAX, largest = 0;
  std::string first_failure;
  const auto start = Clock::now();
  for (int trial = 0; trial < 100; ++trial) {
    const double e = std::uniform_real_distribution<double>(3.0, 5.0)(rng);
    const auto count = static_cast<std::size_t>(std::pow(10.0, e));
    const int max_depth = 6 + int(rng() % 6);
    auto recs = testing::records_of(testing::random_surface_codes(rng, count, 2, max_depth));
    sort_and_merge(recs);
    smallest = std::min(smallest, recs.size());
    largest = std::max(largest, recs.size());
    write_octree(root / "bal_in.octr", RootFrame{}, recs);
    balance(root / "bal_in.octr", root / "bal_a.octr", 65536, root / "bal_scratch");
    balance(root / "bal_a.octr", root / "bal_b.octr", 65536, root / "bal_scratch");
    const auto leaves = testing::codes_of(read_octree(root / "bal_a.octr"));
    std::string witness;
    const bool cover = testing::exact_cover(leaves);
    const bool two = testing::two_to_one(leaves, &witness);
    const bool idem = testing::files_equal(root / "bal_a.octr", root / "bal_b.octr");
    if (cover && two && idem) {
      ++ok;
    } else if (first_failure.empty()) {
      first_failure = "; trial " + std::to_string(trial) + (cover ? "" : " incomplete") + (two ? "" : " unbalanced " + witness) +
                      (idem ? "" : " not idempotent");
    }
  }
  return {ok == 100, std::to_string(ok) + "/100 octrees complete, 2:1 and idempotent (inputs " +
                         std::to_string(smallest) + ".." + std::to_string(largest) + " cubes, " +
                         fmt(seconds_since(start)) + " s)" + first_failure};
}

double dotv(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::vector<LevelView> sphere_views(const SphereRun& run) {
  std::vector<LevelView> views;
  const OctreeFile solved(run.config.work / "solved.octr");
  const Treetop t = load_treetop(run.config.work / "treetop.ttop");
  const auto report = *load_report(run.config, Stage::kSolve);
  const int first = report["details"]["first_level"].get<int>();
  const int last = report["details"]["last_level"].get<int>();
  for (int level = first; level <= last; ++level) {
    const auto groups = group_leaves(solved, t, level, run.config.leaf_cubes);
    for (std::size_t g : {std::size_t(0), groups.size() / 2, groups.size() - 1}) {
      const auto& leaves = t.leaves();
      views.push_back(build_level_view(solved, leaves[groups[g].first].first, leaves[groups[g].second - 1].last, level));
      if (groups.size() == 1) break;
    }
  }
  return views;
}

Result adjointness(const std::vector<LevelView>& views) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n;
  double worst_grad = 0.0, worst_sym = 0.0;
  std::size_t draws = 0;
  for (const auto& v : views) {
    for (GradientUnits units : {GradientUnits::kWorld, GradientUnits::kCell}) {
      const auto ops = assemble_operators(v, 10, units);
      const std::size_t na = v.interior, nt = v.size();
      std::vector<double> u(nt, 0.0), p(3 * na), w3(3 * nt, 0.0), q(6 * na), g(3 * na), d(na), e(6 * na),
          w(3 * na);
      for (int draw = 0; draw < 100; ++draw) {
        for (std::size_t i = 0; i < na; ++i) u[i] = n(rng);
        for (auto& x : p) x = n(rng);
        for (std::size_t i = 0; i < 3 * na; ++i) w3[i] = n(rng);
        for (auto& x : q) x = n(rng);
        ops.apply_grad(u, g);
        ops.apply_div(p, d);
        const double r1 = std::abs(dotv(g, p) + dotv(std::span(u).first(na), d)) / std::sqrt(dotv(u, u) * dotv(p, p));
        ops.apply_symgrad(w3, e);
        ops.apply_div2(q, w);
        const double r2 = std::abs(sym_dot(e, q) + dotv(std::span(w3).first(3 * na), w)) /
                          std::sqrt(dotv(w3, w3) * sym_dot(q, q));
        worst_grad = std::max(worst_grad, r1);
        worst_sym = std::max(worst_sym, r2);
        ++draws;
      }
    }
  }
  const bool pass = worst_grad <= 1e-10 && worst_sym <= 1e-10;
  return {pass, std::to_string(views.size()) + " views, " + std::to_string(draws) + " draws, worst relative " +
                    fmt(worst_grad) + " (grad/div), " + fmt(worst_sym) + " (symgrad/div2)"};
}

Result prox_oracle() {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> ut(-1.5, 1.5), tl(0.0, 0.5);
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    std::array<std::uint32_t, 8> h{};
    for (auto& b : h) b = rng() % 2 ? std::uint32_t(rng() % 8) : 0;
    const double u = ut(rng), t = tl(rng);
    worst = std::max(worst, std::abs(data_prox(u, t, 1.0, h) - testing::grid_prox(u, t, h)));
  }
  return {worst <= 1e-5, "10000 instances, worst deviation " + fmt(worst)};
}

Result listing_conformance() {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::size_t agree = 0, rejected = 0, clamped = 0, middle = 0, tuples = 0;
  for (int i = 0; i < 100000; ++i) {
    const float depth = float(0.2 + 50.0 * uni(rng));
    const std::uint32_t weight = rng() % 4 == 0 ? kLidarVoteWeight : 1 + std::uint32_t(rng() % 3);
    const DepthPyramid pyr(testing::constant_panorama(depth, weight));
    const double r = std::pow(10.0, -4.0 + 3.0 * uni(rng));
    double a;
    switch (rng() % 8) {
      case 0: a = 0.0; break;
      case 1: a = -18.0 * r; break;
      case 2: a = -18.0 * r * (1.0 + 1e-9); break;
      case 3: a = 6.0 * r; break;
      case 4: a = -6.0 * r; break;
      default: a = (-30.0 + 45.0 * uni(rng)) * r;
    }
    const double distance = double(depth) - a;
    if (!(distance > 0.0)) continue;
    ++tuples;
    std::array<std::uint32_t, 8> hist{};
    const auto got = add_to_voxel_histograms(pyr, VoxelView{Vec3(0, distance, 0), r, &hist});
    const auto expect = testing::listing_vote_bin(depth, distance, r);
    bool same = got.has_value() == expect.has_value();
    if (same && expect) {
      same = got->bin == *expect && got->weight == weight && hist[*expect] == weight;
      const double am = double(depth) - distance;
      clamped += std::abs(am) >= 6.0 * r ? 1 : 0;
      middle += *expect == 4 && am == 0.0 ? 1 : 0;
    } else if (same) {
      same = hist == std::array<std::uint32_t, 8>{};
      ++rejected;
    }
    agree += same ? 1 : 0;
  }
  const bool pass = agree == tuples && rejected > 0 && clamped > 0 && middle > 0;
  return {pass, std::to_string(agree) + "/" + std::to_string(tuples) + " agree (" + std::to_string(rejected) +
                    " rejected, " + std::to_string(clamped) + " clamped, " + std::to_string(middle) + " at a = 0)"};
}

// Mesh of the level-L field: leaves truncated to L carry their cell's value.
Mesh level_mesh(const fs::path& snapshot, int level) {
  RootFrame frame;
  const auto recs = read_octree(snapshot, &frame);
  std::vector<CubeRecord> cells;
  for (const auto& r : recs) {
    const MortonCode c = truncate(r.code, level);
    if (!cells.empty() && cells.back().code == c) continue;
    CubeRecord cell = r;
    cell.code = c;
    cells.push_back(cell);
  }
  const MeshPart p = extract_whole(InMemoryOctree(frame, cells));
  return Mesh{p.vertices, p.triangles};
}

Result level_locality(const SphereRun& run) {
  const auto report = *load_report(run.config, Stage::kSolve);
  const int first = report["details"]["first_level"].get<int>();
  const int last = report["details"]["last_level"].get<int>();
  const RootFrame frame = read_octree_header(run.config.work / "solved.octr").frame;
  bool pass = last > first;
  std::string detail;
  Mesh prev;
  for (int level = first; level <= last; ++level) {
    const fs::path snap = run.config.work / "levels" / ("level_" + std::to_string(level) + ".octr");
    if (!fs::exists(snap)) return {false, "missing snapshot " + snap.string()};
    Mesh m = level_mesh(snap, level);
    if (level > first) {
      const double limit = 2.0 * frame.edge(level - 1);
      if (m.triangles.empty() || prev.triangles.empty()) {
        pass = false;
        detail += "L" + std::to_string(level) + " empty; ";
      } else {
        const double fwd = one_sided_hausdorff(m, prev);
        const double back = one_sided_hausdorff(prev, m);
        const double main = one_sided_hausdorff(largest_component(m), prev);
        pass &= fwd <= limit;
        detail += "L" + std::to_string(level - 1) + "->" + std::to_string(level) + " " + fmt(fwd / limit * 2.0) +
                  " edges (largest component " + fmt(main / limit * 2.0) + ", reverse " + fmt(back / limit * 2.0) +
                  "); ";
      }
    }
    prev = std::move(m);
  }
  return {pass, detail + "limit 2 coarser edges"};
}

struct Instance {
  std::string name;
  LevelView view;
};

Result convergence(const SphereRun& run) {
  std::vector<Instance> instances;
  {
    InMemoryOctree slab(RootFrame{}, testing::slab_records(4));
    LevelView v = build_level_view(slab, 0, slab.size(), 4);
    for (auto& c : v.cells) c.u = initial_indicator(c.hist);
    instances.push_back({"slab", std::move(v)});
  }
  {
    const OctreeFile voted(run.config.work / "voted.octr");
    const auto counts = level_cell_counts(voted);
    int level = 0;
    while (level < kMaxDepth && counts[level + 1] <= 40000 && counts[level + 1] < voted.size()) ++level;
    LevelView v = build_level_view(voted, 0, voted.size(), level);
    for (auto& c : v.cells) c.u = initial_indicator(c.hist);
    instances.push_back({"sphere L" + std::to_string(level), std::move(v)});
  }
  bool pass = true;
  std::string detail;
  SolverParams params;
  for (const auto& inst : instances) {
    const auto ops = assemble_operators(inst.view, 50, GradientUnits::kCell);
    const double step = 1.0 / ops.lnorm;
    SolverState s = SolverState::from_view(inst.view, GradientUnits::kCell);
    const auto trace = primal_dual_iterate(s, ops, inst.view, params, step, step, 5000);
    double e200 = 0.0, e10 = 0.0;
    for (const auto& t : trace) {
      if (t.iteration == 200) e200 = t.energy;
      if (t.iteration == 10) e10 = t.energy;
    }
    const double ref = trace.back().energy;
    const double rel = std::abs(e200 - ref) / std::abs(ref);
    pass &= rel <= 0.01 && e200 <= e10;
    detail += inst.name + " (" + std::to_string(inst.view.interior) + " cells) E200 " + fmt(e200) + " vs E5000 " +
              fmt(ref) + ", " + fmt(100.0 * rel) + "%; ";
  }
  return {pass, detail};
}

Result decimation(const std::vector<MeshPart>& parts) {
  bool borders_same = true;
  std::size_t before = 0, after = 0;
  std::vector<MeshPart> out;
  for (const auto& part : parts) {
    const MeshPart d = decimate(part, part.triangles.size() / 4);
    auto border_set = [](const MeshPart& p) {
      std::set<std::array<std::uint64_t, 3>> s;
      for (std::size_t i = 0; i < p.vertices.size(); ++i) {
        if (!p.border[i]) continue;
        s.insert({std::bit_cast<std::uint64_t>(p.vertices[i].x()), std::bit_cast<std::uint64_t>(p.vertices[i].y()),
                  std::bit_cast<std::uint64_t>(p.vertices[i].z())});
      }
      return s;
    };
    borders_same &= border_set(part) == border_set(d);
    before += part.triangles.size();
    after += d.triangles.size();
    out.push_back(d);
  }
  const Result seam = seams(out);
  return {borders_same && seam.pass, std::string(borders_same ? "border sets identical" : "border sets changed") +
                                         ", faces " + std::to_string(before) + " -> " + std::to_string(after) +
                                         "; seams: " + seam.detail};
}

}  // namespace

int main() {
  testing::TempDir root("accept");
  int failures = 0;
  auto report = [&](int id, const std::string& name, const std::function<Result()>& fn) {
    Result r;
    const auto start = Clock::now();
    try {
      r = fn();
    } catch (const std::exception& e) {
      r = {false, std::string("error: ") + e.what()};
    }
    if (!r.pass) ++failures;
    std::printf("criterion %2d %-28s %s  %s [%.1f s]\n", id, name.c_str(), r.pass ? "PASS" : "FAIL", r.detail.c_str(),
                seconds_since(start));
    std::fflush(stdout);
  };

  SphereRun clean, noisy;
  std::string run_error;
  try {
    clean = run_sphere(root.path(), "sphere", 0.0, true);
    noisy = run_sphere(root.path(), "noisy", 0.1, false);
  } catch (const std::exception& e) {
    run_error = e.what();
  }
  auto need_runs = [&]() {
    if (!run_error.empty()) throw Error("sphere run failed: " + run_error);
  };

  report(1, "sphere end-to-end", [&] { need_runs(); return sphere_end_to_end(clean); });
  report(2, "noise filtering", [&] { need_runs(); return noise_filtering(clean, noisy); });
  report(3, "seam exactness", [&] {
    need_runs();
    return seams(load_parts(clean.config.work / "parts", clean.leaves));
  });
  report(4, "memory contract", [&] { need_runs(); return memory_contract(clean); });
  report(5, "external sort oracle", [&] { return external_sort(root.path()); });
  report(6, "balance predicate", [&] { return balance_predicate(root.path()); });
  report(7, "operator adjointness", [&] {
    need_runs();
    auto views = sphere_views(clean);
    InMemoryOctree slab(RootFrame{}, testing::slab_records(4));
    views.push_back(build_level_view(slab, 0, slab.size(), 4));
    views.push_back(build_level_view(slab, 0, slab.size() / 2, 4));
    return adjointness(views);
  });
  report(8, "prox oracle", [&] { return prox_oracle(); });
  report(9, "vote listing conformance", [&] { return listing_conformance(); });
  report(10, "coarse-to-fine locality", [&] { need_runs(); return level_locality(clean); });
  report(11, "convergence", [&] { need_runs(); return convergence(clean); });
  report(12, "decimation constraints", [&] {
    need_runs();
    return decimation(load_parts(clean.config.work / "parts", clean.leaves));
  });

  std::printf("%d of 12 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
