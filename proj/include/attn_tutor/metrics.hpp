#pragma once

#include <cstddef>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace attn_tutor::metrics {

struct RankCorrelation {
  double rho = 0.0;
  bool degenerate = false;  // a map was constant; rho reported as 0
};

/// Average ranks (1-based) with ties sharing the mean of their positions.
std::vector<double> average_ranks(std::span<const double> values);

/// Spearman rho on flattened maps.
RankCorrelation spearman(std::span<const double> a, std::span<const double> b);
double rank_correlation(std::span<const double> a, std::span<const double> b);

/// Exact transport plan between two maps on a side x side grid.
struct Transport {
  double cost = 0.0;
  struct Flow {
    std::size_t from;
    std::size_t to;
    double mass;
  };
  std::vector<Flow> flows;
  /// Dual potentials, u for p cells and v for q cells (zero off the
  /// supports): v[j] - u[i] <= cost(i, j), with equality on every flow.
  std::vector<double> u, v;
  double duality_gap = 0.0;
};

/// Largest grid (cells) accepted by the exact solver.
inline constexpr std::size_t kExactEmdMaxCells = 256;

/// Exact 1-Wasserstein distance, Euclidean metric on unit-spaced cell
/// centres, by successive shortest paths. The result is certified: dual
/// feasibility, complementary slackness and a zero duality gap are checked
/// (tolerance 1e-9) and a violation throws std::runtime_error.
Transport solve_emd(std::span<const double> p, std::span<const double> q, std::size_t side);
double emd(std::span<const double> p, std::span<const double> q, std::size_t side);

class NonConvergence : public std::runtime_error {
 public:
  NonConvergence(double residual, std::size_t iterations);
  double residual;
};

/// Transport cost of the entropic plan, log-domain iterations with
/// epsilon scaling. `iters` bounds the iterations at each scale; the final
/// scale must bring the L1 marginal residual under `tolerance`. The plan is
/// rounded onto the exact marginals before its cost is taken.
double sinkhorn_emd(std::span<const double> p, std::span<const double> q, std::size_t side, double epsilon,
                    std::size_t iters = 20000, double tolerance = 1e-4);

/// -sum p ln p, 0 ln 0 = 0.
double entropy(std::span<const double> p);
/// sum min(p_i, q_i).
double overlap(std::span<const double> p, std::span<const double> q);
double accuracy(std::span<const int> predicted, std::span<const int> labels);

struct MetricReport {
  double rank_correlation = 0.0;
  double emd = 0.0;
  double entropy = 0.0;
  double overlap = 0.0;
  double accuracy = 0.0;
  std::size_t scored_maps = 0;  // maps entering rc / emd
  std::size_t degenerate = 0;   // of those, rank correlations flagged constant
};

/// Averages over N maps of `cells` entries each (row-major). rc, emd and
/// overlap skip samples whose reference is constant (nothing to rank);
/// entropy covers every attention map.
MetricReport evaluate_maps(std::span<const double> attention, std::span<const double> reference, std::size_t side,
                           std::span<const int> predicted, std::span<const int> labels);

/// TSV log: epoch, variant, rc, emd, entropy, overlap, accuracy.
void write_tsv_header(std::ostream& out);
void write_tsv_row(std::ostream& out, std::size_t epoch, const std::string& variant, const MetricReport& report);

}  // namespace attn_tutor::metrics
