#include "recon/solver.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "recon/histograms.hpp"
#include "recon/parallel.hpp"
#include "recon/resident.hpp"

namespace recon {

namespace {

constexpr std::uint64_t kChunk = 4096;

// Streaming buffer for a stage whose working set is `budget` records.
std::uint64_t io_chunk(std::uint64_t budget) { return std::clamp<std::uint64_t>(budget / 64, 16, kChunk); }

// Packed symmetric tensor index of (k, m).
constexpr int kSymIndex[3][3] = {{0, 3, 4}, {3, 1, 5}, {4, 5, 2}};

double sym_norm(const double* q) {
  return std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + 2.0 * (q[3] * q[3] + q[4] * q[4] + q[5] * q[5]));
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

Csr Csr::transpose() const {
  Csr t;
  t.rows = cols;
  t.cols = rows;
  t.offset.assign(cols + 1, 0);
  for (auto c : col) ++t.offset[c + 1];
  for (std::size_t i = 0; i < cols; ++i) t.offset[i + 1] += t.offset[i];
  t.col.resize(col.size());
  t.val.resize(val.size());
  std::vector<std::uint32_t> fill(t.offset.begin(), t.offset.end() - 1);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::uint32_t e = offset[r]; e < offset[r + 1]; ++e) {
      const std::uint32_t slot = fill[col[e]]++;
      t.col[slot] = static_cast<std::uint32_t>(r);
      t.val[slot] = val[e];
    }
  }
  return t;
}

void DiscreteOperators::apply_grad(std::span<const double> u, std::span<double> out) const {
  parallel_for(grad.rows, [&](std::size_t begin, std::size_t end) {
    for (std::size_t r = begin; r < end; ++r) {
      double s = 0.0;
      for (std::uint32_t e = grad.offset[r]; e < grad.offset[r + 1]; ++e) s += grad.val[e] * u[grad.col[e]];
      out[r] = s;
    }
  });
}

void DiscreteOperators::apply_div(std::span<const double> p, std::span<double> out) const {
  const std::size_t rows = std::min(out.size(), grad_t.rows);
  parallel_for(rows, [&](std::size_t begin, std::size_t end) {
    for (std::size_t c = begin; c < end; ++c) {
      double s = 0.0;
      for (std::uint32_t e = grad_t.offset[c]; e < grad_t.offset[c + 1]; ++e) s += grad_t.val[e] * p[grad_t.col[e]];
      out[c] = -s;
    }
  });
}

void DiscreteOperators::apply_symgrad(std::span<const double> v, std::span<double> out) const {
  parallel_for(interior, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      double j[3][3] = {};
      for (int k = 0; k < 3; ++k) {
        const std::size_t r = 3 * i + k;
        for (std::uint32_t e = grad.offset[r]; e < grad.offset[r + 1]; ++e) {
          const double w = grad.val[e];
          const std::size_t c = grad.col[e];
          for (int m = 0; m < 3; ++m) j[k][m] += w * v[3 * c + m];
        }
      }
      double* q = &out[6 * i];
      q[0] = j[0][0];
      q[1] = j[1][1];
      q[2] = j[2][2];
      q[3] = 0.5 * (j[0][1] + j[1][0]);
      q[4] = 0.5 * (j[0][2] + j[2][0]);
      q[5] = 0.5 * (j[1][2] + j[2][1]);
    }
  });
}

void DiscreteOperators::apply_div2(std::span<const double> q, std::span<double> out) const {
  const std::size_t cells = std::min(out.size() / 3, grad_t.rows);
  parallel_for(cells, [&](std::size_t begin, std::size_t end) {
    for (std::size_t c = begin; c < end; ++c) {
      double s[3] = {};
      for (std::uint32_t e = grad_t.offset[c]; e < grad_t.offset[c + 1]; ++e) {
        const std::size_t r = grad_t.col[e];
        const std::size_t i = r / 3;
        const int k = static_cast<int>(r % 3);
        for (int m = 0; m < 3; ++m) s[m] += grad_t.val[e] * q[6 * i + kSymIndex[k][m]];
      }
      for (int m = 0; m < 3; ++m) out[3 * c + m] = -s[m];
    }
  });
}

double sym_dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i + 5 < a.size(); i += 6) {
    s += a[i] * b[i] + a[i + 1] * b[i + 1] + a[i + 2] * b[i + 2] +
         2.0 * (a[i + 3] * b[i + 3] + a[i + 4] * b[i + 4] + a[i + 5] * b[i + 5]);
  }
  return s;
}

double estimate_operator_norm(const DiscreteOperators& ops, int iterations, std::uint64_t seed) {
  const std::size_t na = ops.interior;
  const std::size_t n = ops.total;
  if (na == 0) return 0.0;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss;
  std::vector<double> u(n, 0.0), v(3 * n, 0.0);
  for (std::size_t i = 0; i < na; ++i) {
    u[i] = gauss(rng);
    for (int m = 0; m < 3; ++m) v[3 * i + m] = gauss(rng);
  }
  std::vector<double> p(3 * na), q(6 * na), d(na), w(3 * na);
  double estimate = 0.0;
  for (int it = 0; it < iterations; ++it) {
    double norm2 = 0.0;
    for (std::size_t i = 0; i < na; ++i) norm2 += u[i] * u[i];
    for (std::size_t i = 0; i < 3 * na; ++i) norm2 += v[i] * v[i];
    const double inv = 1.0 / std::sqrt(norm2);
    for (std::size_t i = 0; i < na; ++i) u[i] *= inv;
    for (std::size_t i = 0; i < 3 * na; ++i) v[i] *= inv;

    ops.apply_grad(u, p);
    for (std::size_t i = 0; i < 3 * na; ++i) p[i] -= v[i];
    ops.apply_symgrad(v, q);
    estimate = std::max(estimate, dot(p, p) + sym_dot(q, q));

    // K^T (p, q) = (grad^T p, -p + symgrad^T q) on A.
    ops.apply_div(p, d);
    ops.apply_div2(q, w);
    for (std::size_t i = 0; i < na; ++i) u[i] = -d[i];
    for (std::size_t i = 0; i < 3 * na; ++i) v[i] = -p[i] - w[i];
  }
  return std::sqrt(estimate);
}

DiscreteOperators assemble_operators(const LevelView& view, int power_iterations, GradientUnits units) {
  DiscreteOperators ops;
  const std::size_t na = view.interior;
  ops.interior = na;
  ops.total = view.size();
  Csr& g = ops.grad;
  g.rows = 3 * na;
  g.cols = view.size();
  g.offset.reserve(g.rows + 1);
  g.offset.push_back(0);
  std::vector<std::pair<std::uint32_t, double>> row;
  for (std::size_t i = 0; i < na; ++i) {
    const double s = units == GradientUnits::kCell ? 0.5 : 1.0 / (2.0 * view.edge(i));
    for (int k = 0; k < 3; ++k) {
      row.clear();
      for (int side = 0; side < 2; ++side) {
        const Face f = static_cast<Face>(2 * k + side);
        const double sign = side == 1 ? 1.0 : -1.0;
        const auto nbs = view.neighbors(i, f);
        if (nbs.empty()) {
          row.emplace_back(static_cast<std::uint32_t>(i), sign * s);
        } else {
          for (const auto& nb : nbs) row.emplace_back(nb.cell, sign * nb.weight * s);
        }
      }
      std::sort(row.begin(), row.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
      for (std::size_t e = 0; e < row.size();) {
        std::uint32_t c = row[e].first;
        double val = 0.0;
        while (e < row.size() && row[e].first == c) val += row[e++].second;
        if (val != 0.0) {
          g.col.push_back(c);
          g.val.push_back(val);
        }
      }
      g.offset.push_back(static_cast<std::uint32_t>(g.col.size()));
    }
  }
  ops.grad_t = g.transpose();
  ops.lnorm = 1.1 * estimate_operator_norm(ops, power_iterations);
  return ops;
}

double data_prox(double u_tilde, double tau, double lambda, const std::array<std::uint32_t, 8>& hist) {
  RECON_REQUIRE(tau > 0.0 && lambda >= 0.0, "prox needs tau > 0 and lambda >= 0");
  const double tl = tau * lambda;
  auto objective = [&](double u) {
    double s = 0.0;
    for (int b = 0; b < kBins; ++b) s += hist[b] * std::abs(u - bin_center(b));
    return 0.5 * (u - u_tilde) * (u - u_tilde) + tl * s;
  };
  double total = 0.0;
  for (auto h : hist) total += h;
  double best = std::numeric_limits<double>::quiet_NaN();
  double best_value = std::numeric_limits<double>::infinity();
  auto consider = [&](double u) {
    const double value = objective(u);
    if (value < best_value) {
      best_value = value;
      best = u;
    }
  };
  // Interval j lies between breakpoints c_{j-1} and c_j; votes below u count +1, above -1.
  double below = 0.0;
  for (int j = 0; j <= kBins; ++j) {
    const double lo = j == 0 ? -std::numeric_limits<double>::infinity() : bin_center(j - 1);
    const double hi = j == kBins ? std::numeric_limits<double>::infinity() : bin_center(j);
    const double slope = below - (total - below);
    const double u = u_tilde - tl * slope;
    if (u > lo && u < hi) consider(u);
    if (j < kBins) {
      consider(bin_center(j));
      below += hist[j];
    }
  }
  return std::clamp(best, -1.0, 1.0);
}

SolverState SolverState::from_view(const LevelView& view, GradientUnits units) {
  SolverState s;
  const std::size_t n = view.size();
  s.u.resize(n);
  s.v.resize(3 * n);
  for (std::size_t i = 0; i < n; ++i) {
    s.u[i] = view.cells[i].u;
    const double scale = units == GradientUnits::kCell ? view.edge(i) : 1.0;
    for (int m = 0; m < 3; ++m) s.v[3 * i + m] = view.cells[i].v[m] * scale;
  }
  s.p.assign(3 * view.interior, 0.0);
  s.q.assign(6 * view.interior, 0.0);
  return s;
}

double primal_energy(const SolverState& s, const DiscreteOperators& ops, const LevelView& view,
                     const SolverParams& params) {
  const std::size_t na = ops.interior;
  std::vector<double> g(3 * na), e(6 * na);
  ops.apply_grad(s.u, g);
  ops.apply_symgrad(s.v, e);
  double energy = 0.0;
  for (std::size_t i = 0; i < na; ++i) {
    double r2 = 0.0;
    for (int k = 0; k < 3; ++k) {
      const double d = g[3 * i + k] - s.v[3 * i + k];
      r2 += d * d;
    }
    double data = 0.0;
    for (int b = 0; b < kBins; ++b) data += view.cells[i].hist[b] * std::abs(s.u[i] - bin_center(b));
    energy += params.alpha1 * std::sqrt(r2) + params.alpha0 * sym_norm(&e[6 * i]) + params.lambda * data;
  }
  return energy;
}

std::vector<EnergySample> primal_dual_iterate(SolverState& s, const DiscreteOperators& ops, const LevelView& view,
                                              const SolverParams& params, double tau, double sigma, int n_iters) {
  RECON_REQUIRE(tau > 0.0 && sigma > 0.0, "step sizes must be positive");
  RECON_REQUIRE(tau * sigma * ops.lnorm * ops.lnorm <= 1.0 + 1e-12, "step sizes violate tau * sigma * L^2 <= 1");
  const std::size_t na = ops.interior;
  std::vector<double> ubar = s.u, vbar = s.v;
  std::vector<double> g(3 * na), e(6 * na), d(na), w(3 * na);
  std::vector<EnergySample> trace;
  trace.push_back({0, primal_energy(s, ops, view, params)});
  const int every = std::max(1, params.energy_every);

  for (int it = 1; it <= n_iters; ++it) {
    ops.apply_grad(ubar, g);
    parallel_for(na, [&](std::size_t begin, std::size_t end) {
      for (std::size_t i = begin; i < end; ++i) {
        double t[3];
        double n2 = 0.0;
        for (int k = 0; k < 3; ++k) {
          t[k] = s.p[3 * i + k] + sigma * (g[3 * i + k] - vbar[3 * i + k]);
          n2 += t[k] * t[k];
        }
        const double scale = std::max(1.0, std::sqrt(n2) / params.alpha1);
        for (int k = 0; k < 3; ++k) s.p[3 * i + k] = t[k] / scale;
      }
    });
    ops.apply_symgrad(vbar, e);
    parallel_for(na, [&](std::size_t begin, std::size_t end) {
      for (std::size_t i = begin; i < end; ++i) {
        double t[6];
        for (int c = 0; c < 6; ++c) t[c] = s.q[6 * i + c] + sigma * e[6 * i + c];
        const double scale = std::max(1.0, sym_norm(t) / params.alpha0);
        for (int c = 0; c < 6; ++c) s.q[6 * i + c] = t[c] / scale;
      }
    });
    ops.apply_div(s.p, d);
    ops.apply_div2(s.q, w);
    parallel_for(na, [&](std::size_t begin, std::size_t end) {
      for (std::size_t i = begin; i < end; ++i) {
        const double u_old = s.u[i];
        const double u_new = data_prox(u_old + tau * d[i], tau, params.lambda, view.cells[i].hist);
        ubar[i] = 2.0 * u_new - u_old;
        s.u[i] = u_new;
        for (int m = 0; m < 3; ++m) {
          const std::size_t k = 3 * i + m;
          const double v_old = s.v[k];
          const double v_new = v_old + tau * (s.p[k] + w[k]);
          vbar[k] = 2.0 * v_new - v_old;
          s.v[k] = v_new;
        }
      }
    });
    if (it % every == 0 || it == n_iters) trace.push_back({it, primal_energy(s, ops, view, params)});
  }
  return trace;
}

std::vector<std::pair<MortonCode, std::array<std::uint32_t, 8>>> restrict_histograms(const CellSource& source,
                                                                                     int level) {
  std::vector<std::pair<MortonCode, std::array<std::uint32_t, 8>>> out;
  std::vector<CubeRecord> chunk;
  const std::uint64_t n = source.size();
  RecordLease lease(static_cast<std::int64_t>(std::min(kChunk, n)));
  for (std::uint64_t i = 0; i < n; i += kChunk) {
    source.read_range(i, std::min(n, i + kChunk), chunk);
    for (const auto& r : chunk) {
      const MortonCode code = truncate(r.code, level);
      if (out.empty() || !(out.back().first == code)) out.push_back({code, {}});
      for (int b = 0; b < kBins; ++b) out.back().second[b] += r.hist[b];
    }
  }
  return out;
}

double initial_indicator(const std::array<std::uint32_t, 8>& hist) {
  double sum = 0.0, weighted = 0.0;
  for (int b = 0; b < kBins; ++b) {
    sum += hist[b];
    weighted += hist[b] * bin_center(b);
  }
  return sum > 0.0 ? weighted / sum : 0.0;
}

std::vector<std::pair<std::size_t, std::size_t>> group_leaves(const CellSource& source, const Treetop& treetop,
                                                              int level, std::uint64_t budget) {
  const auto& leaves = treetop.leaves();
  struct LeafCells {
    std::uint64_t count = 0;
    MortonCode first, last;
  };
  std::vector<LeafCells> info(leaves.size());
  std::vector<CubeRecord> chunk;
  const std::uint64_t step = io_chunk(budget);
  RecordLease lease(static_cast<std::int64_t>(std::min<std::uint64_t>(step, source.size())));
  for (std::size_t j = 0; j < leaves.size(); ++j) {
    bool any = false;
    for (std::uint64_t i = leaves[j].first; i < leaves[j].last; i += step) {
      source.read_range(i, std::min(leaves[j].last, i + step), chunk);
      for (const auto& r : chunk) {
        const MortonCode code = truncate(r.code, level);
        if (!any) {
          info[j].first = code;
          info[j].count = 1;
          any = true;
        } else if (!(code == info[j].last)) {
          ++info[j].count;
        }
        info[j].last = code;
      }
    }
  }

  std::vector<std::pair<std::size_t, std::size_t>> groups;
  std::size_t start = 0;
  std::uint64_t count = 0;
  for (std::size_t j = 0; j < leaves.size(); ++j) {
    if (info[j].count == 0) continue;
    const bool spans = j > start && info[j].first == info[j - 1].last;
    const std::uint64_t added = info[j].count - (spans ? 1 : 0);
    if (j > start && !spans && count + added > budget) {
      groups.emplace_back(start, j);
      start = j;
      count = info[j].count;
      continue;
    }
    count += added;
  }
  if (start < leaves.size()) groups.emplace_back(start, leaves.size());
  return groups;
}

namespace {

// Streams `in` to `out`, setting every leaf's u to its level-L cell's initial value.
void write_initial_field(const std::filesystem::path& in, const std::filesystem::path& out, int level,
                         std::uint64_t budget) {
  OctreeFile src(in);
  const auto cells = restrict_histograms(src, level);
  RecordLease cells_lease(static_cast<std::int64_t>(cells.size()));
  OctreeReader reader(in, io_chunk(budget));
  OctreeWriter writer(out, reader.frame(), io_chunk(budget));
  std::size_t c = 0;
  while (auto r = reader.next()) {
    const MortonCode code = truncate(r->code, level);
    while (!(cells[c].first == code)) ++c;
    r->u = static_cast<float>(initial_indicator(cells[c].second));
    r->v = {0.0f, 0.0f, 0.0f};
    writer.append(*r);
  }
  writer.close();
}

void write_back(const LevelView& view, const SolverState& s, const OctreeFile& in, OctreeFile& out,
                std::uint64_t budget) {
  const std::uint64_t step = io_chunk(budget);
  std::vector<CubeRecord> chunk;
  RecordLease lease(static_cast<std::int64_t>(step));
  const std::uint64_t first = view.cells.front().first;
  const std::uint64_t last = view.cells[view.interior - 1].last;
  std::size_t c = 0;
  for (std::uint64_t i = first; i < last; i += step) {
    const std::uint64_t end = std::min(last, i + step);
    in.read_range(i, end, chunk);
    for (std::uint64_t j = 0; j < chunk.size(); ++j) {
      while (view.cells[c].last <= i + j) ++c;
      chunk[j].u = static_cast<float>(s.u[c]);
      const double scale = 1.0 / view.edge(c);
      for (int m = 0; m < 3; ++m) chunk[j].v[m] = static_cast<float>(s.v[3 * c + m] * scale);
    }
    out.write_range(i, chunk);
  }
}

}  // namespace

CoarseToFineReport solve_coarse_to_fine(const std::filesystem::path& voted, const Treetop& treetop,
                                        const std::filesystem::path& out, const CoarseToFineOptions& options) {
  std::filesystem::create_directories(options.scratch);
  CoarseToFineReport report;
  std::array<std::uint64_t, kMaxDepth + 1> counts;
  std::uint64_t total = 0;
  {
    OctreeFile src(voted);
    total = src.size();
    RECON_REQUIRE(total > 0, "cannot solve an empty octree");
    counts = level_cell_counts(src);
  }
  int deepest = kMaxDepth;
  for (int l = 0; l <= kMaxDepth; ++l) {
    if (counts[l] == total) {
      deepest = l;
      break;
    }
  }
  int coarsest = deepest;
  for (int l = 0; l <= deepest; ++l) {
    if (counts[l] >= static_cast<std::uint64_t>(options.min_coarse_cells)) {
      coarsest = l;
      break;
    }
  }
  report.first_level = coarsest;
  report.last_level = deepest;

  std::ofstream energy;
  if (!options.energy_csv.empty()) {
    energy.open(options.energy_csv, std::ios::trunc);
    if (!energy) throw IoError("cannot create energy trace " + options.energy_csv.string());
    energy << "level,group,iteration,energy\n";
    energy.precision(17);
  }

  std::filesystem::path current = options.scratch / "field_a.octr";
  std::filesystem::path next = options.scratch / "field_b.octr";
  write_initial_field(voted, current, coarsest, options.leaf_budget);

  for (int level = coarsest; level <= deepest; ++level) {
    std::filesystem::copy_file(current, next, std::filesystem::copy_options::overwrite_existing);
    {
      const OctreeFile in(current);
      OctreeFile dst(next, true);
      const auto groups = group_leaves(in, treetop, level, options.leaf_budget);
      report.groups_per_level.push_back(groups.size());
      for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        const auto& leaves = treetop.leaves();
        const std::uint64_t first = leaves[groups[gi].first].first;
        const std::uint64_t last = leaves[groups[gi].second - 1].last;
        LevelView view = build_level_view(in, first, last, level);
        RecordLease view_lease(static_cast<std::int64_t>(view.size()));
        report.max_group_cells = std::max(report.max_group_cells, view.interior);
        report.max_view_cells = std::max(report.max_view_cells, view.size());
        const DiscreteOperators ops = assemble_operators(view, 50, GradientUnits::kCell);
        SolverState state = SolverState::from_view(view, GradientUnits::kCell);
        const double step = ops.lnorm > 0.0 ? 1.0 / ops.lnorm : 1.0;
        const auto trace = primal_dual_iterate(state, ops, view, options.params, step, step, options.params.iterations);
        if (energy.is_open()) {
          for (const auto& t : trace) energy << level << ',' << gi << ',' << t.iteration << ',' << t.energy << '\n';
        }
        write_back(view, state, in, dst, options.leaf_budget);
      }
    }
    if (options.keep_level_snapshots) {
      const auto snap = options.scratch / ("level_" + std::to_string(level) + ".octr");
      std::filesystem::copy_file(next, snap, std::filesystem::copy_options::overwrite_existing);
      report.snapshots.push_back(snap);
    }
    std::swap(current, next);
  }
  std::filesystem::copy_file(current, out, std::filesystem::copy_options::overwrite_existing);
  std::filesystem::remove(current);
  std::filesystem::remove(next);
  return report;
}

}  // namespace recon
