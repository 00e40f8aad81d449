#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace slpd {

using Vec = std::vector<double>;

inline constexpr const char* kGlobalSlideId = "<global>";

/// Result of clustering one point set: M centroids, per-point assignment,
/// and the sum of squared distances to assigned centroids. Prototypes are
/// in canonical order (sorted by first coordinate, then lexicographically),
/// so equal inputs produce bit-identical sets.
struct PrototypeSet {
  std::string slide_id;  // kGlobalSlideId for pooled clustering
  std::vector<Vec> prototypes;
  std::vector<int> assignments;
  double inertia = 0.0;

  int M() const { return static_cast<int>(prototypes.size()); }
  std::size_t dim() const { return prototypes.empty() ? 0 : prototypes.front().size(); }
};

struct KMeansConfig {
  int M = 2;
  int max_iters = 100;
  double rel_tol = 1e-6;
  int restarts = 5;
  std::uint64_t seed = 0;
};

/// Per-run diagnostics, mainly for tests: the final inertia of every restart
/// and the inertia trace of each restart's Lloyd iterations.
struct KMeansDiagnostics {
  std::vector<double> restart_inertias;
  std::vector<std::vector<double>> inertia_traces;
};

/// Lloyd's algorithm with greedy k-means++ seeding and a single-point
/// exchange polish after convergence, best of cfg.restarts runs. Lloyd stops
/// when the relative inertia decrease falls below cfg.rel_tol or max_iters
/// is reached. Empty clusters are repaired by promoting the point farthest
/// from its centroid. Deterministic for fixed (points, cfg); the seeding
/// draws by point index, so the output is canonical-order stable but not
/// invariant to permuting the input points.
/// Throws DataError if points.size() < cfg.M, NumericError on non-finite
/// input or a violated descent check.
PrototypeSet kmeans(const std::vector<Vec>& points, const KMeansConfig& cfg,
                    KMeansDiagnostics* diag = nullptr);

/// One slide's embeddings, in dataset order.
struct SlideEmbeddings {
  std::string slide_id;
  std::vector<Vec> embeddings;
};

struct SlideClusterResult {
  std::vector<PrototypeSet> sets;     // one per clustered slide, input order
  std::vector<std::string> skipped;   // slides with fewer than M points
};

/// Independent kmeans per slide, every slide with the same cfg (so identical
/// point sets give identical prototype sets). Slides with fewer than M
/// points are skipped and reported, not fatal. May run per-slide jobs in
/// parallel; the result equals sequential execution.
SlideClusterResult slide_level_cluster(const std::vector<SlideEmbeddings>& slides,
                                       const KMeansConfig& cfg, int workers = 0);

/// Single kmeans over the pooled embeddings (the global-clustering
/// alternative). cfg.M is ignored in favour of total_prototypes.
PrototypeSet global_cluster(const std::vector<Vec>& pooled, int total_prototypes,
                            KMeansConfig cfg);

}  // namespace slpd
