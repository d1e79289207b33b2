#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "recon/level_view.hpp"
#include "recon/treetop.hpp"

namespace recon {

/// Compressed sparse rows with entries in a fixed order.
struct Csr {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint32_t> offset;
  std::vector<std::uint32_t> col;
  std::vector<double> val;

  Csr transpose() const;
};

/// Finite-difference operators over a LevelView. Primal vectors cover A and B
/// cells (u: n, v: 3n interleaved), dual vectors cover A only (p: 3 per cell,
/// q: 6 per cell ordered xx, yy, zz, xy, xz, yz).
/// kWorld: differences divided by the world edge length. kCell: each row
/// scaled back by its cell's edge, so gradients count per cell step.
enum class GradientUnits : std::uint8_t { kWorld, kCell };

struct DiscreteOperators {
  std::size_t interior = 0;
  std::size_t total = 0;
  Csr grad;    // 3 * interior x total
  Csr grad_t;  // total x 3 * interior
  double lnorm = 0.0;

  void apply_grad(std::span<const double> u, std::span<double> out) const;
  void apply_div(std::span<const double> p, std::span<double> out) const;
  void apply_symgrad(std::span<const double> v, std::span<double> out) const;
  void apply_div2(std::span<const double> q, std::span<double> out) const;
};

/// Frobenius inner product of packed symmetric tensors.
double sym_dot(std::span<const double> a, std::span<const double> b);

/// Norm of K(u, v) = (grad u - v, symgrad v) restricted to A, by power
/// iteration on K^T K.
double estimate_operator_norm(const DiscreteOperators& ops, int iterations, std::uint64_t seed = 1);

/// Builds grad and its transpose; lnorm = 1.1 x the power-iteration estimate.
DiscreteOperators assemble_operators(const LevelView& view, int power_iterations = 50,
                                     GradientUnits units = GradientUnits::kWorld);

struct SolverParams {
  double alpha0 = 2.0;
  double alpha1 = 1.0;
  double lambda = 0.5;
  int iterations = 200;
  int energy_every = 10;
};

/// argmin over [-1, 1] of (u - u_tilde)^2 / 2 + tau * lambda * sum_b hist_b |u - c_b|.
double data_prox(double u_tilde, double tau, double lambda, const std::array<std::uint32_t, 8>& hist);

struct SolverState {
  std::vector<double> u;  // total
  std::vector<double> v;  // 3 * total
  std::vector<double> p;  // 3 * interior
  std::vector<double> q;  // 6 * interior

  /// v is stored in world units; kCell rescales it by each cell's edge.
  static SolverState from_view(const LevelView& view, GradientUnits units = GradientUnits::kWorld);
};

struct EnergySample {
  int iteration = 0;
  double energy = 0.0;
};

/// Discrete TGV energy summed over A cells.
double primal_energy(const SolverState& s, const DiscreteOperators& ops, const LevelView& view,
                     const SolverParams& params);

/// Runs n_iters primal-dual iterations on A cells; B cells stay frozen.
/// Records the energy at iteration 0, every energy_every iterations and at the end.
std::vector<EnergySample> primal_dual_iterate(SolverState& s, const DiscreteOperators& ops, const LevelView& view,
                                              const SolverParams& params, double tau, double sigma, int n_iters);

/// Aggregated histograms of all level-L cells in Z-order, streamed.
std::vector<std::pair<MortonCode, std::array<std::uint32_t, 8>>> restrict_histograms(const CellSource& source,
                                                                                     int level);

/// Histogram mean over bin centers, or 0 without votes.
double initial_indicator(const std::array<std::uint32_t, 8>& hist);

struct CoarseToFineOptions {
  SolverParams params;
  std::uint64_t leaf_budget = std::uint64_t(1) << 16;
  std::filesystem::path scratch;
  std::filesystem::path energy_csv;
  bool keep_level_snapshots = false;  // scratch/level_<L>.octr
  int min_coarse_cells = 64;
};

struct CoarseToFineReport {
  int first_level = 0;
  int last_level = 0;
  std::vector<std::size_t> groups_per_level;
  std::size_t max_group_cells = 0;
  std::size_t max_view_cells = 0;
  std::vector<std::filesystem::path> snapshots;
};

/// Solves level by level from the shallowest level with enough cells down to
/// the deepest leaves. Each level reads the previous level's field from one
/// file and writes the new field to another.
CoarseToFineReport solve_coarse_to_fine(const std::filesystem::path& voted, const Treetop& treetop,
                                        const std::filesystem::path& out, const CoarseToFineOptions& options);

/// Contiguous runs of treetop leaves whose level-L cell count fits the budget
/// and that never split a level-L cell. Returns [first leaf, last leaf) pairs.
std::vector<std::pair<std::size_t, std::size_t>> group_leaves(const CellSource& source, const Treetop& treetop,
                                                              int level, std::uint64_t budget);

}  // namespace recon
