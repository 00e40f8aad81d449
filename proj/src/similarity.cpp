#include "slpd/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "slpd/errors.hpp"
#include "slpd/parallel.hpp"

namespace slpd {

double cosine(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw DataError("cosine: dimension mismatch");
  double dot = 0, nu = 0, nv = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  if (nu <= 0 || nv <= 0) throw NumericError("cosine: zero-norm input");
  const double c = dot / std::sqrt(nu * nv);
  return std::clamp(c, -1.0, 1.0);
}

namespace {

// Augmenting-path assignment (Kuhn-Munkres with potentials) on a square cost
// matrix, minimizing. Returns row -> column.
std::vector<int> solve_assignment(const std::vector<double>& cost, int n) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, kInf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      int j1 = 0;
      double delta = kInf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> row_to_col(n, -1);
  for (int j = 1; j <= n; ++j) {
    if (p[j]) row_to_col[p[j] - 1] = j - 1;
  }
  return row_to_col;
}

}  // namespace

MatchResult optimal_match(const PrototypeSet& a, const PrototypeSet& b) {
  const int M = a.M();
  if (M != b.M()) {
    throw DataError("optimal_match: prototype cardinality mismatch (" +
                    std::to_string(M) + " vs " + std::to_string(b.M()) + ")");
  }
  if (M == 0) throw DataError("optimal_match: empty prototype sets");

  std::vector<double> cos_matrix(static_cast<std::size_t>(M) * M);
  for (int i = 0; i < M; ++i) {
    for (int j = 0; j < M; ++j) {
      cos_matrix[i * M + j] = cosine(a.prototypes[i], b.prototypes[j]);
    }
  }
  std::vector<double> cost(cos_matrix.size());
  for (std::size_t k = 0; k < cost.size(); ++k) cost[k] = -cos_matrix[k];

  MatchResult res;
  res.permutation = solve_assignment(cost, M);
  double sum = 0;
  for (int i = 0; i < M; ++i) sum += cos_matrix[i * M + res.permutation[i]];
  res.similarity = sum / M;
  return res;
}

std::size_t SlideSimilarityMatrix::index_of(const std::string& slide_id) const {
  for (std::size_t i = 0; i < slide_ids.size(); ++i) {
    if (slide_ids[i] == slide_id) return i;
  }
  throw DataError("slide id not in similarity matrix: " + slide_id);
}

SlideSimilarityMatrix similarity_matrix(const std::vector<PrototypeSet>& sets,
                                        int workers) {
  const std::size_t n = sets.size();
  if (n == 0) throw DataError("similarity_matrix: no prototype sets");
  const int M = sets.front().M();
  std::string offenders;
  for (const auto& s : sets) {
    if (s.M() != M) offenders += (offenders.empty() ? "" : ", ") + s.slide_id;
  }
  if (!offenders.empty()) {
    throw DataError("similarity_matrix: mixed prototype cardinality in slides: " + offenders);
  }

  SlideSimilarityMatrix m;
  m.slide_ids.reserve(n);
  for (const auto& s : sets) m.slide_ids.push_back(s.slide_id);
  m.values.assign(n * n, 0.0);
  m.permutations.assign(n * n, {});

  // Diagonal plus upper triangle, mirrored with inverted permutations.
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) pairs.emplace_back(i, j);
  }
  std::vector<MatchResult> results(pairs.size());
  parallel_for(pairs.size(), workers, [&](std::size_t k) {
    results[k] = optimal_match(sets[pairs[k].first], sets[pairs[k].second]);
  });
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const auto [i, j] = pairs[k];
    auto& r = results[k];
    m.values[i * n + j] = r.similarity;
    m.values[j * n + i] = r.similarity;
    std::vector<int> inverse(r.permutation.size());
    for (std::size_t q = 0; q < r.permutation.size(); ++q) {
      inverse[r.permutation[q]] = static_cast<int>(q);
    }
    m.permutations[j * n + i] = std::move(inverse);
    m.permutations[i * n + j] = std::move(r.permutation);
  }
  return m;
}

std::vector<NeighborRef> top_k_neighbors(const SlideSimilarityMatrix& m,
                                         const std::string& slide_id, int K) {
  const std::size_t n = m.size();
  const std::size_t q = m.index_of(slide_id);
  if (K < 1 || static_cast<std::size_t>(K) > n - 1) {
    throw UsageError("top_k_neighbors: K must be in [1, N-1], got K=" +
                     std::to_string(K) + " with N=" + std::to_string(n));
  }
  std::vector<std::size_t> order;
  order.reserve(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    if (i != q) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double sa = m.value(q, a), sb = m.value(q, b);
    if (sa != sb) return sa > sb;
    return m.slide_ids[a] < m.slide_ids[b];
  });
  std::vector<NeighborRef> out;
  out.reserve(K);
  for (int k = 0; k < K; ++k) {
    const std::size_t i = order[k];
    out.push_back({m.slide_ids[i], i, m.perm(q, i), m.value(q, i)});
  }
  return out;
}

RegionRef nearest_cross_slide_region(std::span<const double> z,
                                     const std::vector<SlideEmbeddings>& slides,
                                     std::size_t exclude_slide) {
  RegionRef best;
  double best_cos = -std::numeric_limits<double>::infinity();
  bool found = false;
  for (std::size_t s = 0; s < slides.size(); ++s) {
    if (s == exclude_slide) continue;
    for (std::size_t r = 0; r < slides[s].embeddings.size(); ++r) {
      const double c = cosine(z, slides[s].embeddings[r]);
      if (c > best_cos) {
        best_cos = c;
        best = {s, r, slides[s].slide_id, c};
        found = true;
      }
    }
  }
  if (!found) {
    throw DataError("nearest_cross_slide_region: no candidate regions outside the query slide");
  }
  return best;
}

}  // namespace slpd
