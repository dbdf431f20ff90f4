#include "attn_tutor/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

namespace attn_tutor::metrics {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kMassEps = 1e-15;

void check_same(std::span<const double> a, std::span<const double> b, const char* op) {
  if (a.size() != b.size()) {
    throw std::invalid_argument(std::string(op) + ": maps of " + std::to_string(a.size()) + " and " +
                                std::to_string(b.size()) + " cells");
  }
}

void check_grid(std::span<const double> p, std::span<const double> q, std::size_t side, const char* op) {
  check_same(p, q, op);
  if (p.size() != side * side) {
    throw std::invalid_argument(std::string(op) + ": " + std::to_string(p.size()) + " cells is not a " +
                                std::to_string(side) + "x" + std::to_string(side) + " grid");
  }
}

double cell_distance(std::size_t a, std::size_t b, std::size_t side) {
  const double dr = static_cast<double>(a / side) - static_cast<double>(b / side);
  const double dc = static_cast<double>(a % side) - static_cast<double>(b % side);
  return std::sqrt(dr * dr + dc * dc);
}

std::vector<std::size_t> support(std::span<const double> m) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < m.size(); ++i)
    if (m[i] > 0.0) out.push_back(i);
  return out;
}

double log_sum_exp(std::span<const double> x) {
  double hi = -kInf;
  for (double v : x) hi = std::max(hi, v);
  if (hi == -kInf) return -kInf;
  double total = 0.0;
  for (double v : x) total += std::exp(v - hi);
  return hi + std::log(total);
}

}  // namespace

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = r;
    i = j + 1;
  }
  return ranks;
}

RankCorrelation spearman(std::span<const double> a, std::span<const double> b) {
  check_same(a, b, "rank_correlation");
  if (a.size() < 2) throw std::invalid_argument("rank_correlation: needs at least 2 cells");
  const auto ra = average_ranks(a), rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double mean_rank = 0.5 * (n + 1.0);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    const double x = ra[i] - mean_rank, y = rb[i] - mean_rank;
    sab += x * y;
    saa += x * x;
    sbb += y * y;
  }
  if (saa == 0.0 || sbb == 0.0) return {0.0, true};
  return {std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0), false};
}

double rank_correlation(std::span<const double> a, std::span<const double> b) { return spearman(a, b).rho; }

Transport solve_emd(std::span<const double> p, std::span<const double> q, std::size_t side) {
  check_grid(p, q, side, "emd");
  if (p.size() > kExactEmdMaxCells) {
    throw std::invalid_argument("emd: exact solver handles at most " + std::to_string(kExactEmdMaxCells) + " cells, got " +
                                std::to_string(p.size()) + "; use sinkhorn_emd for larger grids");
  }
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!(p[i] >= 0.0) || !(q[i] >= 0.0) || !std::isfinite(p[i]) || !std::isfinite(q[i])) {
      throw std::invalid_argument("emd: maps must be finite and nonnegative");
    }
  }
  const auto src = support(p), dst = support(q);
  const std::size_t ns = src.size(), nd = dst.size();
  Transport result;
  result.u.assign(p.size(), 0.0);
  result.v.assign(q.size(), 0.0);
  if (ns == 0 || nd == 0) return result;

  std::vector<double> cost(ns * nd), flow(ns * nd, 0.0);
  for (std::size_t i = 0; i < ns; ++i)
    for (std::size_t j = 0; j < nd; ++j) cost[i * nd + j] = cell_distance(src[i], dst[j], side);
  std::vector<double> supply(ns), demand(nd);
  for (std::size_t i = 0; i < ns; ++i) supply[i] = p[src[i]];
  for (std::size_t j = 0; j < nd; ++j) demand[j] = q[dst[j]];
  auto active = [](const std::vector<double>& mass) {
    return std::any_of(mass.begin(), mass.end(), [](double m) { return m > kMassEps; });
  };

  // Nodes 0..ns-1 are sources, ns..ns+nd-1 sinks. Forward arcs i->j always
  // have residual capacity; backward arcs j->i exist while flow(i,j) > 0.
  const std::size_t nodes = ns + nd;
  std::vector<double> pi(nodes, 0.0), dist(nodes);
  std::vector<std::ptrdiff_t> prev(nodes);
  std::vector<char> done(nodes);
  // Stops once either side is exhausted; rounding can leave up to
  // K * kMassEps unshipped.
  while (active(supply) && active(demand)) {
    std::fill(dist.begin(), dist.end(), kInf);
    std::fill(prev.begin(), prev.end(), -1);
    std::fill(done.begin(), done.end(), 0);
    for (std::size_t i = 0; i < ns; ++i)
      if (supply[i] > kMassEps) dist[i] = 0.0;
    std::ptrdiff_t target = -1;
    while (true) {
      std::ptrdiff_t best = -1;
      for (std::size_t x = 0; x < nodes; ++x)
        if (!done[x] && dist[x] < kInf && (best < 0 || dist[x] < dist[static_cast<std::size_t>(best)])) best = static_cast<std::ptrdiff_t>(x);
      if (best < 0) break;
      const auto x = static_cast<std::size_t>(best);
      done[x] = 1;
      if (x >= ns && demand[x - ns] > kMassEps) {
        target = best;
        break;
      }
      if (x < ns) {
        for (std::size_t j = 0; j < nd; ++j) {
          const double reduced = std::max(0.0, cost[x * nd + j] + pi[x] - pi[ns + j]);
          if (dist[x] + reduced < dist[ns + j]) {
            dist[ns + j] = dist[x] + reduced;
            prev[ns + j] = best;
          }
        }
      } else {
        const std::size_t j = x - ns;
        for (std::size_t i = 0; i < ns; ++i) {
          if (flow[i * nd + j] <= 0.0) continue;
          const double reduced = std::max(0.0, -cost[i * nd + j] + pi[x] - pi[i]);
          if (dist[x] + reduced < dist[i]) {
            dist[i] = dist[x] + reduced;
            prev[i] = best;
          }
        }
      }
    }
    if (target < 0) throw std::runtime_error("emd: no augmenting path with mass remaining");
    const double reach = dist[static_cast<std::size_t>(target)];
    for (std::size_t x = 0; x < nodes; ++x) pi[x] += std::min(dist[x], reach);

    double push = demand[static_cast<std::size_t>(target) - ns];
    std::size_t x = static_cast<std::size_t>(target);
    while (prev[x] >= 0) {
      const auto y = static_cast<std::size_t>(prev[x]);
      if (y >= ns) push = std::min(push, flow[x * nd + (y - ns)]);  // backward arc y(sink) -> x(source)
      x = y;
    }
    push = std::min(push, supply[x]);
    const std::size_t origin = x;
    x = static_cast<std::size_t>(target);
    while (prev[x] >= 0) {
      const auto y = static_cast<std::size_t>(prev[x]);
      if (y < ns) {
        flow[y * nd + (x - ns)] += push;
      } else {
        flow[x * nd + (y - ns)] -= push;
      }
      x = y;
    }
    supply[origin] -= push;
    demand[static_cast<std::size_t>(target) - ns] -= push;
  }

  // Certificate. v_j - u_i <= c_ij everywhere, equality wherever flow moves.
  double primal = 0.0, dual = 0.0, violation = 0.0;
  for (std::size_t i = 0; i < ns; ++i) {
    for (std::size_t j = 0; j < nd; ++j) {
      const double slack = cost[i * nd + j] + pi[i] - pi[ns + j];
      violation = std::max(violation, -slack);
      const double f = flow[i * nd + j];
      if (f > kMassEps) {
        violation = std::max(violation, std::abs(slack));
        result.flows.push_back({src[i], dst[j], f});
      }
      primal += f * cost[i * nd + j];
    }
  }
  for (std::size_t i = 0; i < ns; ++i) {
    result.u[src[i]] = pi[i];
    dual -= p[src[i]] * pi[i];
  }
  for (std::size_t j = 0; j < nd; ++j) {
    result.v[dst[j]] = pi[ns + j];
    dual += q[dst[j]] * pi[ns + j];
  }
  result.cost = primal;
  result.duality_gap = std::abs(primal - dual);
  if (violation > 1e-9 || result.duality_gap > 1e-9) {
    throw std::runtime_error("emd: optimality certificate failed (slackness " + std::to_string(violation) + ", gap " +
                             std::to_string(result.duality_gap) + ")");
  }
  return result;
}

double emd(std::span<const double> p, std::span<const double> q, std::size_t side) { return solve_emd(p, q, side).cost; }

NonConvergence::NonConvergence(double r, std::size_t iterations)
    : std::runtime_error("sinkhorn: no convergence after " + std::to_string(iterations) + " iterations (marginal residual " +
                         std::to_string(r) + ")"),
      residual(r) {}

double sinkhorn_emd(std::span<const double> p, std::span<const double> q, std::size_t side, double epsilon,
                    std::size_t iters, double tolerance) {
  check_grid(p, q, side, "sinkhorn_emd");
  if (!(epsilon > 0.0)) throw std::invalid_argument("sinkhorn_emd: epsilon must be > 0");
  const auto src = support(p), dst = support(q);
  const std::size_t ns = src.size(), nd = dst.size();
  if (ns == 0 || nd == 0) return 0.0;
  std::vector<double> cost(ns * nd), log_a(ns), log_b(nd);
  double max_cost = 0.0;
  for (std::size_t i = 0; i < ns; ++i) {
    log_a[i] = std::log(p[src[i]]);
    for (std::size_t j = 0; j < nd; ++j) {
      cost[i * nd + j] = cell_distance(src[i], dst[j], side);
      max_cost = std::max(max_cost, cost[i * nd + j]);
    }
  }
  for (std::size_t j = 0; j < nd; ++j) log_b[j] = std::log(q[dst[j]]);

  std::vector<double> f(ns, 0.0), g(nd, 0.0), row(std::max(ns, nd));
  auto update = [&](double eps) {
    for (std::size_t i = 0; i < ns; ++i) {
      for (std::size_t j = 0; j < nd; ++j) row[j] = log_b[j] + (g[j] - cost[i * nd + j]) / eps;
      f[i] = -eps * log_sum_exp(std::span<const double>(row.data(), nd));
    }
    for (std::size_t j = 0; j < nd; ++j) {
      for (std::size_t i = 0; i < ns; ++i) row[i] = log_a[i] + (f[i] - cost[i * nd + j]) / eps;
      g[j] = -eps * log_sum_exp(std::span<const double>(row.data(), ns));
    }
  };
  auto residual = [&](double eps) {
    // Columns are exact after the g update; measure the row marginals.
    double r = 0.0;
    for (std::size_t i = 0; i < ns; ++i) {
      double mass = 0.0;
      for (std::size_t j = 0; j < nd; ++j) mass += std::exp(log_a[i] + log_b[j] + (f[i] + g[j] - cost[i * nd + j]) / eps);
      r += std::abs(mass - std::exp(log_a[i]));
    }
    return r;
  };

  double eps = std::max(max_cost, epsilon);
  while (true) {
    const bool last = eps <= epsilon;
    const double tol = last ? tolerance : std::max(tolerance, 1e-4);
    std::size_t it = 0;
    double r = kInf;
    while (it < iters) {
      update(eps);
      ++it;
      if (it % 10 == 0 || it == iters) {
        r = residual(eps);
        if (r < tol) break;
      }
    }
    if (last && r >= tol) throw NonConvergence(r, it);
    if (last) break;
    eps = std::max(epsilon, eps * 0.5);
  }
  // Round the plan onto the exact marginals: shrink rows, then columns, then
  // add the missing mass as a rank-one correction.
  std::vector<double> plan(ns * nd), rows(ns, 0.0), cols(nd, 0.0);
  for (std::size_t i = 0; i < ns; ++i)
    for (std::size_t j = 0; j < nd; ++j) {
      plan[i * nd + j] = std::exp(log_a[i] + log_b[j] + (f[i] + g[j] - cost[i * nd + j]) / eps);
      rows[i] += plan[i * nd + j];
    }
  for (std::size_t i = 0; i < ns; ++i) {
    const double shrink = std::min(1.0, p[src[i]] / rows[i]);
    for (std::size_t j = 0; j < nd; ++j) cols[j] += plan[i * nd + j] *= shrink;
  }
  std::fill(rows.begin(), rows.end(), 0.0);
  for (std::size_t j = 0; j < nd; ++j) {
    const double shrink = std::min(1.0, q[dst[j]] / cols[j]);
    for (std::size_t i = 0; i < ns; ++i) rows[i] += plan[i * nd + j] *= shrink;
    cols[j] *= shrink;
  }
  std::vector<double> missing_a(ns), missing_b(nd);
  double missing = 0.0;
  for (std::size_t i = 0; i < ns; ++i) missing += missing_a[i] = std::max(0.0, p[src[i]] - rows[i]);
  for (std::size_t j = 0; j < nd; ++j) missing_b[j] = std::max(0.0, q[dst[j]] - cols[j]);
  double total = 0.0;
  for (std::size_t i = 0; i < ns; ++i)
    for (std::size_t j = 0; j < nd; ++j) {
      const double extra = missing > 0.0 ? missing_a[i] * missing_b[j] / missing : 0.0;
      total += cost[i * nd + j] * (plan[i * nd + j] + extra);
    }
  return total;
}

double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double x : p)
    if (x > 0.0) h -= x * std::log(x);
  return h;
}

double overlap(std::span<const double> p, std::span<const double> q) {
  check_same(p, q, "overlap");
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) total += std::min(p[i], q[i]);
  return total;
}

double accuracy(std::span<const int> predicted, std::span<const int> labels) {
  if (predicted.size() != labels.size()) throw std::invalid_argument("accuracy: prediction/label count mismatch");
  if (labels.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predicted[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

MetricReport evaluate_maps(std::span<const double> attention, std::span<const double> reference, std::size_t side,
                           std::span<const int> predicted, std::span<const int> labels) {
  const std::size_t k = side * side;
  check_same(attention, reference, "evaluate_maps");
  if (k == 0 || attention.size() % k != 0) throw std::invalid_argument("evaluate_maps: maps do not tile the grid");
  const std::size_t n = attention.size() / k;
  MetricReport report;
  for (std::size_t i = 0; i < n; ++i) {
    const auto a = attention.subspan(i * k, k), r = reference.subspan(i * k, k);
    report.entropy += entropy(a);
    if (std::all_of(r.begin(), r.end(), [&](double x) { return x == r[0]; })) continue;
    const auto rc = spearman(a, r);
    report.rank_correlation += rc.rho;
    report.degenerate += rc.degenerate;
    report.emd += emd(a, r, side);
    report.overlap += overlap(a, r);
    ++report.scored_maps;
  }
  if (n > 0) report.entropy /= static_cast<double>(n);
  if (report.scored_maps > 0) {
    const double m = static_cast<double>(report.scored_maps);
    report.rank_correlation /= m;
    report.emd /= m;
    report.overlap /= m;
  }
  report.accuracy = accuracy(predicted, labels);
  return report;
}

void write_tsv_header(std::ostream& out) { out << "epoch\tvariant\trc\temd\tentropy\toverlap\taccuracy\n"; }

void write_tsv_row(std::ostream& out, std::size_t epoch, const std::string& variant, const MetricReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu\t%s\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g\n", epoch, variant.c_str(), r.rank_correlation,
                r.emd, r.entropy, r.overlap, r.accuracy);
  out << buf;
}

}  // namespace attn_tutor::metrics
