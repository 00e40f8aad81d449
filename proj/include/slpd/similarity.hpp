#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "slpd/kmeans.hpp"

namespace slpd {

/// Cosine similarity in [-1, 1]. Throws NumericError on a zero-norm input.
double cosine(std::span<const double> u, std::span<const double> v);

/// Optimal one-to-one prototype matching between two sets of equal
/// cardinality M: permutation[m] is the index in the second set matched to
/// prototype m of the first, and similarity is the maximum over all M!
/// permutations of the mean matched cosine.
struct MatchResult {
  std::vector<int> permutation;
  double similarity = 0.0;
};

/// Solved with an O(M^3) augmenting-path assignment on the negated cosine
/// matrix. Throws DataError when the cardinalities differ.
MatchResult optimal_match(const PrototypeSet& a, const PrototypeSet& b);

/// Dense set-to-set similarity over N prototype sets, with the optimal
/// permutations stored in both directions so downstream losses never
/// recompute a matching.
struct SlideSimilarityMatrix {
  std::vector<std::string> slide_ids;
  std::vector<double> values;                  // N x N, row-major
  std::vector<std::vector<int>> permutations;  // N x N; [i*N+j] maps i's prototypes to j's

  std::size_t size() const { return slide_ids.size(); }
  double value(std::size_t i, std::size_t j) const { return values[i * size() + j]; }
  const std::vector<int>& perm(std::size_t i, std::size_t j) const {
    return permutations[i * size() + j];
  }
  /// Index of a slide id; throws DataError if absent.
  std::size_t index_of(const std::string& slide_id) const;
};

/// Pairwise optimal matching over the upper triangle, mirrored. All sets
/// must share M (DataError listing offenders otherwise). Pairs may be
/// evaluated in parallel; assembly is deterministic.
SlideSimilarityMatrix similarity_matrix(const std::vector<PrototypeSet>& sets,
                                        int workers = 0);

struct NeighborRef {
  std::string slide_id;
  std::size_t index = 0;            // position in the matrix
  std::vector<int> permutation;     // query prototypes -> neighbor prototypes
  double similarity = 0.0;
};

/// The K most similar other slides, ties broken by ascending slide_id.
/// Requires 1 <= K <= N-1.
std::vector<NeighborRef> top_k_neighbors(const SlideSimilarityMatrix& m,
                                         const std::string& slide_id, int K);

struct RegionRef {
  std::size_t slide_index = 0;
  std::size_t region_index = 0;
  std::string slide_id;
  double cosine = 0.0;
};

/// Region embedding with the highest cosine to z among all regions outside
/// slide exclude_slide (the region-level inter-distillation ablation).
/// Ties keep the first candidate in slide-then-region order.
RegionRef nearest_cross_slide_region(std::span<const double> z,
                                     const std::vector<SlideEmbeddings>& slides,
                                     std::size_t exclude_slide);

}  // namespace slpd
