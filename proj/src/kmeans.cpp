#include "slpd/kmeans.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "slpd/errors.hpp"
#include "slpd/parallel.hpp"
#include "slpd/rng.hpp"

namespace slpd {

namespace {

double sq_dist(const Vec& a, const Vec& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

// Greedy k-means++ seeding: first center uniform, then each new center is
// chosen among several D^2-sampled candidates as the one that lowers the
// potential the most.
std::vector<Vec> seed_centers(const std::vector<Vec>& points, int M, Rng& rng) {
  const std::size_t n = points.size();
  const int candidates = 2 + static_cast<int>(std::log(static_cast<double>(std::max(M, 1))));
  std::vector<Vec> centers;
  centers.reserve(M);
  centers.push_back(points[rng.next_below(n)]);
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = sq_dist(points[i], centers[0]);

  for (int m = 1; m < M; ++m) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    std::size_t best_pick = 0;
    double best_potential = std::numeric_limits<double>::infinity();
    for (int c = 0; c < candidates; ++c) {
      std::size_t pick;
      if (total <= 0) {
        // Remaining mass is all on chosen centers (duplicates): uniform pick.
        pick = rng.next_below(n);
      } else {
        const double target = rng.next_double() * total;
        pick = n - 1;
        double acc = 0;
        for (std::size_t i = 0; i < n; ++i) {
          acc += d2[i];
          if (acc >= target) {
            pick = i;
            break;
          }
        }
      }
      double potential = 0;
      for (std::size_t i = 0; i < n; ++i) {
        potential += std::min(d2[i], sq_dist(points[i], points[pick]));
      }
      if (potential < best_potential) {
        best_potential = potential;
        best_pick = pick;
      }
    }
    centers.push_back(points[best_pick]);
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], sq_dist(points[i], centers.back()));
    }
  }
  return centers;
}

struct LloydResult {
  std::vector<Vec> centers;
  std::vector<int> assignments;
  double inertia = 0.0;
  std::vector<double> trace;
};

void assign_points(const std::vector<Vec>& points, const std::vector<Vec>& centers,
                   std::vector<int>& assignments, double& inertia) {
  inertia = 0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    int best = 0;
    double best_d = sq_dist(points[i], centers[0]);
    for (std::size_t m = 1; m < centers.size(); ++m) {
      const double d = sq_dist(points[i], centers[m]);
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(m);
      }
    }
    assignments[i] = best;
    inertia += best_d;
  }
}

// Recomputes centroids as cluster means; empty clusters are repaired by
// promoting the point currently farthest from its assigned centroid and
// force-assigning it, which keeps inertia non-increasing.
void update_centers(const std::vector<Vec>& points, std::vector<int>& assignments,
                    std::vector<Vec>& centers) {
  const std::size_t dim = points.front().size();
  const int M = static_cast<int>(centers.size());
  std::vector<int> counts(M, 0);
  for (auto& c : centers) std::fill(c.begin(), c.end(), 0.0);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const int a = assignments[i];
    ++counts[a];
    for (std::size_t d = 0; d < dim; ++d) centers[a][d] += points[i][d];
  }
  for (int m = 0; m < M; ++m) {
    if (counts[m] > 0) {
      for (std::size_t d = 0; d < dim; ++d) centers[m][d] /= counts[m];
    }
  }
  for (int m = 0; m < M; ++m) {
    if (counts[m] > 0) continue;
    // Farthest point from its current centroid, excluding points that are
    // the sole member of their cluster.
    std::size_t far_idx = points.size();
    double far_d = -1;
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (counts[assignments[i]] <= 1) continue;
      const double d = sq_dist(points[i], centers[assignments[i]]);
      if (d > far_d) {
        far_d = d;
        far_idx = i;
      }
    }
    if (far_idx == points.size()) {
      // Fully degenerate (every cluster a singleton or duplicates); reuse
      // point 0 so the cluster is at least non-empty.
      far_idx = 0;
    }
    const int old = assignments[far_idx];
    if (counts[old] > 1) --counts[old];
    counts[m] = 1;
    assignments[far_idx] = m;
    centers[m] = points[far_idx];
  }
}

// Single-point exchange polish (Hartigan-style): move a point to another
// cluster whenever that strictly lowers the total within-cluster sum of
// squares, accounting for the centroid shift the move causes. Fixed points
// of this scheme are a strict subset of Lloyd's, which is what lets
// best-of-restarts reach the exhaustive optimum on small instances.
void exchange_polish(const std::vector<Vec>& points, std::vector<int>& assignments,
                     std::vector<Vec>& centers) {
  const int M = static_cast<int>(centers.size());
  const std::size_t dim = points.front().size();
  std::vector<int> counts(M, 0);
  std::vector<Vec> sums(M, Vec(dim, 0.0));
  for (std::size_t i = 0; i < points.size(); ++i) {
    ++counts[assignments[i]];
    for (std::size_t d = 0; d < dim; ++d) sums[assignments[i]][d] += points[i][d];
  }
  auto centroid_of = [&](int m) {
    Vec c(dim);
    for (std::size_t d = 0; d < dim; ++d) c[d] = sums[m][d] / counts[m];
    return c;
  };
  for (int m = 0; m < M; ++m) centers[m] = centroid_of(m);

  for (int pass = 0; pass < 100; ++pass) {
    bool moved = false;
    for (std::size_t i = 0; i < points.size(); ++i) {
      const int a = assignments[i];
      if (counts[a] <= 1) continue;
      const double da = sq_dist(points[i], centers[a]);
      const double removal_gain =
          static_cast<double>(counts[a]) / (counts[a] - 1) * da;
      int best_b = -1;
      double best_delta = -1e-12 * std::max(1.0, da);
      for (int b = 0; b < M; ++b) {
        if (b == a) continue;
        const double db = sq_dist(points[i], centers[b]);
        const double delta =
            static_cast<double>(counts[b]) / (counts[b] + 1) * db - removal_gain;
        if (delta < best_delta) {
          best_delta = delta;
          best_b = b;
        }
      }
      if (best_b >= 0) {
        for (std::size_t d = 0; d < dim; ++d) {
          sums[a][d] -= points[i][d];
          sums[best_b][d] += points[i][d];
        }
        --counts[a];
        ++counts[best_b];
        assignments[i] = best_b;
        centers[a] = centroid_of(a);
        centers[best_b] = centroid_of(best_b);
        moved = true;
      }
    }
    if (!moved) break;
  }
}

LloydResult lloyd(const std::vector<Vec>& points, const KMeansConfig& cfg, Rng& rng) {
  LloydResult res;
  res.centers = seed_centers(points, cfg.M, rng);
  res.assignments.resize(points.size());

  assign_points(points, res.centers, res.assignments, res.inertia);
  res.trace.push_back(res.inertia);

  for (int it = 0; it < cfg.max_iters; ++it) {
    const double prev = res.inertia;
    update_centers(points, res.assignments, res.centers);
    assign_points(points, res.centers, res.assignments, res.inertia);
    res.trace.push_back(res.inertia);
    // Lloyd descent check; tiny slack for rounding in the re-accumulation.
    if (res.inertia > prev + 1e-9 * std::max(1.0, prev)) {
      throw NumericError("kmeans: inertia increased during Lloyd iteration");
    }
    const double decrease = prev - res.inertia;
    if (decrease <= cfg.rel_tol * std::max(prev, 1e-300)) break;
  }

  {
    exchange_polish(points, res.assignments, res.centers);
    double inertia = 0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      inertia += sq_dist(points[i], res.centers[res.assignments[i]]);
    }
    if (inertia > res.inertia + 1e-9 * std::max(1.0, res.inertia)) {
      throw NumericError("kmeans: inertia increased during exchange polish");
    }
    res.inertia = inertia;
    res.trace.push_back(inertia);
  }

  // Duplicate-heavy inputs can leave a cluster empty after the final
  // reassignment (ties all resolve to the lower index). Repair once more and
  // keep the forced assignments so every returned prototype has members.
  std::vector<int> counts(cfg.M, 0);
  for (int a : res.assignments) ++counts[a];
  if (std::find(counts.begin(), counts.end(), 0) != counts.end()) {
    update_centers(points, res.assignments, res.centers);
    double inertia = 0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      inertia += sq_dist(points[i], res.centers[res.assignments[i]]);
    }
    if (inertia > res.inertia + 1e-9 * std::max(1.0, res.inertia)) {
      throw NumericError("kmeans: inertia increased during empty-cluster repair");
    }
    res.inertia = inertia;
    res.trace.push_back(inertia);
  }
  return res;
}

void canonical_order(PrototypeSet& set) {
  const int M = set.M();
  std::vector<int> order(M);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return set.prototypes[a] < set.prototypes[b];  // lexicographic
  });
  std::vector<int> rank(M);
  for (int i = 0; i < M; ++i) rank[order[i]] = i;
  std::vector<Vec> sorted(M);
  for (int i = 0; i < M; ++i) sorted[i] = std::move(set.prototypes[order[i]]);
  set.prototypes = std::move(sorted);
  for (auto& a : set.assignments) a = rank[a];
}

}  // namespace

PrototypeSet kmeans(const std::vector<Vec>& points, const KMeansConfig& cfg,
                    KMeansDiagnostics* diag) {
  if (cfg.M < 1) throw UsageError("kmeans: M must be >= 1");
  if (cfg.max_iters < 1 || cfg.restarts < 1) {
    throw UsageError("kmeans: max_iters and restarts must be >= 1");
  }
  if (!(cfg.rel_tol > 0) || cfg.rel_tol >= 1) {
    throw UsageError("kmeans: rel_tol must be in (0, 1)");
  }
  if (points.size() < static_cast<std::size_t>(cfg.M)) {
    throw DataError("kmeans: need at least M=" + std::to_string(cfg.M) +
                    " points, got " + std::to_string(points.size()));
  }
  const std::size_t dim = points.front().size();
  for (const auto& p : points) {
    if (p.size() != dim) throw DataError("kmeans: inconsistent point dimensions");
    for (double v : p) {
      if (!std::isfinite(v)) throw NumericError("kmeans: non-finite input point");
    }
  }

  LloydResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (int r = 0; r < cfg.restarts; ++r) {
    Rng rng = derive_stream(cfg.seed, "kmeans", static_cast<std::uint64_t>(r));
    LloydResult run = lloyd(points, cfg, rng);
    if (diag) {
      diag->restart_inertias.push_back(run.inertia);
      diag->inertia_traces.push_back(run.trace);
    }
    if (run.inertia < best.inertia) best = std::move(run);
  }

  PrototypeSet set;
  set.prototypes = std::move(best.centers);
  set.assignments = std::move(best.assignments);
  set.inertia = best.inertia;
  canonical_order(set);
  return set;
}

SlideClusterResult slide_level_cluster(const std::vector<SlideEmbeddings>& slides,
                                       const KMeansConfig& cfg, int workers) {
  std::vector<int> clusterable;
  SlideClusterResult result;
  for (std::size_t i = 0; i < slides.size(); ++i) {
    if (slides[i].embeddings.size() >= static_cast<std::size_t>(cfg.M)) {
      clusterable.push_back(static_cast<int>(i));
    } else {
      result.skipped.push_back(slides[i].slide_id);
    }
  }
  result.sets.resize(clusterable.size());
  parallel_for(clusterable.size(), workers, [&](std::size_t j) {
    const auto& slide = slides[clusterable[j]];
    PrototypeSet set = kmeans(slide.embeddings, cfg);
    set.slide_id = slide.slide_id;
    result.sets[j] = std::move(set);
  });
  return result;
}

PrototypeSet global_cluster(const std::vector<Vec>& pooled, int total_prototypes,
                            KMeansConfig cfg) {
  cfg.M = total_prototypes;
  PrototypeSet set = kmeans(pooled, cfg);
  set.slide_id = kGlobalSlideId;
  return set;
}

}  // namespace slpd
