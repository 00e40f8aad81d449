#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "slpd/dataset.hpp"
#include "slpd/distill.hpp"
#include "slpd/kmeans.hpp"

namespace slpd {

/// Coordinate-wise mean of a set of embeddings. Throws DataError on empty
/// input.
Vec mean_pool(const std::vector<Vec>& embeddings);

struct KnnPrediction {
  int label = 0;
  double score = 0.0;  // fraction of the k nearest with label 1
};

/// Cosine-similarity KNN over slide vectors. Neighbor ties break by train
/// index; label ties by higher summed similarity, then lower class index.
std::vector<KnnPrediction> knn_classify(const std::vector<Vec>& train_vectors,
                                        const std::vector<int>& train_labels,
                                        const std::vector<Vec>& test_vectors,
                                        int k_eval);

/// Mann-Whitney AUC: P(score+ > score-) + 0.5 P(tie). Throws DataError
/// unless both classes are present.
double auc(const std::vector<double>& scores, const std::vector<int>& labels);

struct EvalReport {
  int folds = 0;
  int k_eval = 0;
  double accuracy_mean = 0.0;
  double accuracy_std = 0.0;
  double auc_mean = 0.0;
  double auc_std = 0.0;
  std::vector<double> fold_accuracy;
  std::vector<double> fold_auc;
  double compactness = 0.0;
  double separation = 0.0;
};

/// Per-slide mean-pooled teacher embeddings of a dataset, dataset order.
std::vector<Vec> pooled_teacher_vectors(const SlideDataset& ds, const DistillState& state);

/// Stratified k-fold KNN evaluation on mean-pooled teacher embeddings.
/// Deterministic for a fixed seed. Throws DataError if a fold is missing a
/// class. AUC requires exactly two classes.
EvalReport cross_validated_eval(const SlideDataset& ds, const DistillState& state,
                                int folds, int k_eval, std::uint64_t seed);

struct CompactnessReport {
  double compactness = 0.0;  // mean over regions of 1 - cos(z, assigned prototype)
  double separation = 0.0;   // mean inter-class minus mean intra-class pooled distance;
                             // NaN when labels are absent or single-class
};

/// Compactness/separation over per-slide embeddings and their prototype
/// sets (sets must be fresh for the same embeddings). Slides without a set
/// are excluded from compactness; separation uses every slide.
CompactnessReport compactness(const std::vector<SlideEmbeddings>& embeddings,
                              const std::vector<const PrototypeSet*>& sets,
                              const std::vector<std::optional<int>>& labels);

}  // namespace slpd
