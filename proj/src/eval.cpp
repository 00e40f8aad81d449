#include "slpd/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "slpd/errors.hpp"
#include "slpd/rng.hpp"
#include "slpd/similarity.hpp"

namespace slpd {

Vec mean_pool(const std::vector<Vec>& embeddings) {
  if (embeddings.empty()) throw DataError("mean_pool: empty slide");
  Vec out(embeddings.front().size(), 0.0);
  for (const auto& e : embeddings) {
    if (e.size() != out.size()) throw DataError("mean_pool: dimension mismatch");
    for (std::size_t d = 0; d < out.size(); ++d) out[d] += e[d];
  }
  const double inv = 1.0 / static_cast<double>(embeddings.size());
  for (auto& v : out) v *= inv;
  return out;
}

std::vector<KnnPrediction> knn_classify(const std::vector<Vec>& train_vectors,
                                        const std::vector<int>& train_labels,
                                        const std::vector<Vec>& test_vectors,
                                        int k_eval) {
  if (train_vectors.empty()) throw DataError("knn_classify: empty training set");
  if (train_vectors.size() != train_labels.size()) {
    throw DataError("knn_classify: train vectors/labels size mismatch");
  }
  if (k_eval < 1 || static_cast<std::size_t>(k_eval) > train_vectors.size()) {
    throw UsageError("knn_classify: k_eval out of range [1, " +
                     std::to_string(train_vectors.size()) + "]");
  }

  std::vector<KnnPrediction> out;
  out.reserve(test_vectors.size());
  std::vector<std::size_t> order(train_vectors.size());
  std::vector<double> sims(train_vectors.size());
  for (const auto& q : test_vectors) {
    for (std::size_t i = 0; i < train_vectors.size(); ++i) {
      sims[i] = cosine(q, train_vectors[i]);
    }
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return sims[a] > sims[b]; });

    std::map<int, int> counts;
    std::map<int, double> simsum;
    int ones = 0;
    for (int k = 0; k < k_eval; ++k) {
      const int label = train_labels[order[k]];
      ++counts[label];
      simsum[label] += sims[order[k]];
      if (label == 1) ++ones;
    }
    int best_label = -1;
    for (const auto& [label, count] : counts) {
      if (best_label < 0) {
        best_label = label;
        continue;
      }
      const int bc = counts[best_label];
      if (count > bc || (count == bc && simsum[label] > simsum[best_label])) {
        best_label = label;  // lower class index wins remaining ties (map order)
      }
    }
    out.push_back({best_label, static_cast<double>(ones) / k_eval});
  }
  return out;
}

double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size() || scores.empty()) {
    throw DataError("auc: scores/labels size mismatch or empty");
  }
  std::size_t n_pos = 0, n_neg = 0;
  for (int label : labels) {
    if (label == 1) {
      ++n_pos;
    } else if (label == 0) {
      ++n_neg;
    } else {
      throw DataError("auc: labels must be binary (0/1)");
    }
  }
  if (n_pos == 0 || n_neg == 0) throw DataError("auc: both classes must be present");

  // Rank-sum with average ranks for ties; equals pairwise Mann-Whitney
  // counting exactly (all quantities are halves of integers).
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum_pos = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[order[k]] == 1) rank_sum_pos += avg_rank;
    }
    i = j + 1;
  }
  const double u = rank_sum_pos - static_cast<double>(n_pos) * (n_pos + 1) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

std::vector<Vec> pooled_teacher_vectors(const SlideDataset& ds, const DistillState& state) {
  std::vector<Vec> out;
  out.reserve(ds.slides.size());
  for (const auto& slide : ds.slides) {
    std::vector<Vec> embs;
    embs.reserve(slide.regions.size());
    for (const auto& region : slide.regions) {
      Vec x(region.features.begin(), region.features.end());
      embs.push_back(encode(state.teacher.encoder, x));
    }
    out.push_back(mean_pool(embs));
  }
  return out;
}

EvalReport cross_validated_eval(const SlideDataset& ds, const DistillState& state,
                                int folds, int k_eval, std::uint64_t seed) {
  if (folds < 2) throw UsageError("cross_validated_eval: folds must be >= 2");
  if (!ds.num_classes) throw DataError("cross_validated_eval: dataset has no labels");
  const int num_classes = *ds.num_classes;
  std::vector<int> labels(ds.slides.size());
  for (std::size_t i = 0; i < ds.slides.size(); ++i) {
    if (!ds.slides[i].label) {
      throw DataError("cross_validated_eval: unlabeled slide " + ds.slides[i].slide_id);
    }
    labels[i] = *ds.slides[i].label;
  }

  // Stratified fold assignment: shuffle each class group, deal round-robin.
  std::vector<int> fold_of(ds.slides.size(), -1);
  for (int c = 0; c < num_classes; ++c) {
    std::vector<std::size_t> group;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == c) group.push_back(i);
    }
    Rng rng = derive_stream(seed, "folds", static_cast<std::uint64_t>(c));
    rng.shuffle(group);
    for (std::size_t g = 0; g < group.size(); ++g) {
      fold_of[group[g]] = static_cast<int>(g % folds);
    }
  }

  const std::vector<Vec> pooled = pooled_teacher_vectors(ds, state);

  EvalReport report;
  report.folds = folds;
  report.k_eval = k_eval;
  for (int f = 0; f < folds; ++f) {
    std::vector<Vec> train_v, test_v;
    std::vector<int> train_l, test_l;
    for (std::size_t i = 0; i < pooled.size(); ++i) {
      if (fold_of[i] == f) {
        test_v.push_back(pooled[i]);
        test_l.push_back(labels[i]);
      } else {
        train_v.push_back(pooled[i]);
        train_l.push_back(labels[i]);
      }
    }
    for (int c = 0; c < num_classes; ++c) {
      const bool in_train = std::find(train_l.begin(), train_l.end(), c) != train_l.end();
      const bool in_test = std::find(test_l.begin(), test_l.end(), c) != test_l.end();
      if (!in_train || !in_test) {
        throw DataError("cross_validated_eval: class " + std::to_string(c) +
                        " absent in fold " + std::to_string(f));
      }
    }
    const auto preds = knn_classify(train_v, train_l, test_v, k_eval);
    std::size_t correct = 0;
    std::vector<double> scores;
    scores.reserve(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i) {
      if (preds[i].label == test_l[i]) ++correct;
      scores.push_back(preds[i].score);
    }
    report.fold_accuracy.push_back(static_cast<double>(correct) / preds.size());
    if (num_classes == 2) {
      report.fold_auc.push_back(auc(scores, test_l));
    } else {
      report.fold_auc.push_back(std::numeric_limits<double>::quiet_NaN());
    }
  }

  auto mean_std = [](const std::vector<double>& v, double& mean, double& std_out) {
    mean = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
    double var = 0;
    for (double x : v) var += (x - mean) * (x - mean);
    std_out = std::sqrt(var / v.size());
  };
  mean_std(report.fold_accuracy, report.accuracy_mean, report.accuracy_std);
  mean_std(report.fold_auc, report.auc_mean, report.auc_std);
  return report;
}

CompactnessReport compactness(const std::vector<SlideEmbeddings>& embeddings,
                              const std::vector<const PrototypeSet*>& sets,
                              const std::vector<std::optional<int>>& labels) {
  if (embeddings.size() != sets.size() || embeddings.size() != labels.size()) {
    throw DataError("compactness: parallel input sizes differ");
  }
  double sum = 0;
  std::size_t count = 0;
  for (std::size_t s = 0; s < embeddings.size(); ++s) {
    if (!sets[s]) continue;
    const auto& set = *sets[s];
    if (set.assignments.size() != embeddings[s].embeddings.size()) {
      throw DataError("compactness: stale prototype set for slide " +
                      embeddings[s].slide_id);
    }
    for (std::size_t r = 0; r < set.assignments.size(); ++r) {
      sum += 1.0 - cosine(embeddings[s].embeddings[r],
                          set.prototypes[set.assignments[r]]);
      ++count;
    }
  }
  CompactnessReport report;
  report.compactness = count > 0 ? sum / count : std::numeric_limits<double>::quiet_NaN();

  std::vector<Vec> pooled;
  std::vector<int> known_labels;
  bool all_labeled = true;
  for (std::size_t s = 0; s < embeddings.size(); ++s) {
    if (!labels[s]) {
      all_labeled = false;
      break;
    }
    pooled.push_back(mean_pool(embeddings[s].embeddings));
    known_labels.push_back(*labels[s]);
  }
  if (!all_labeled || pooled.size() < 2) {
    report.separation = std::numeric_limits<double>::quiet_NaN();
    return report;
  }
  double inter = 0, intra = 0;
  std::size_t n_inter = 0, n_intra = 0;
  for (std::size_t i = 0; i < pooled.size(); ++i) {
    for (std::size_t j = i + 1; j < pooled.size(); ++j) {
      const double dist = 1.0 - cosine(pooled[i], pooled[j]);
      if (known_labels[i] == known_labels[j]) {
        intra += dist;
        ++n_intra;
      } else {
        inter += dist;
        ++n_inter;
      }
    }
  }
  if (n_inter == 0 || n_intra == 0) {
    report.separation = std::numeric_limits<double>::quiet_NaN();
  } else {
    report.separation = inter / n_inter - intra / n_intra;
  }
  return report;
}

}  // namespace slpd
