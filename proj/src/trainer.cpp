#include "slpd/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "slpd/errors.hpp"
#include "slpd/parallel.hpp"

namespace slpd {

ClusteringSource clustering_source_from_string(const std::string& s) {
  if (s == "teacher") return ClusteringSource::teacher;
  if (s == "student") return ClusteringSource::student;
  throw UsageError("unknown clustering source: " + s);
}

InterMode inter_mode_from_string(const std::string& s) {
  if (s == "prototype") return InterMode::prototype;
  if (s == "region") return InterMode::region;
  if (s == "off") return InterMode::off;
  throw UsageError("unknown inter mode: " + s);
}

IntraMode intra_mode_from_string(const std::string& s) {
  if (s == "slide") return IntraMode::slide;
  if (s == "global") return IntraMode::global;
  if (s == "off") return IntraMode::off;
  throw UsageError("unknown intra mode: " + s);
}

SamplingPolicy sampling_policy_from_string(const std::string& s) {
  if (s == "uniform") return SamplingPolicy::uniform;
  if (s == "slide-balanced") return SamplingPolicy::slide_balanced;
  throw UsageError("unknown sampling policy: " + s);
}

std::string to_string(ClusteringSource v) {
  return v == ClusteringSource::teacher ? "teacher" : "student";
}
std::string to_string(InterMode v) {
  switch (v) {
    case InterMode::prototype: return "prototype";
    case InterMode::region: return "region";
    case InterMode::off: return "off";
  }
  return "?";
}
std::string to_string(IntraMode v) {
  switch (v) {
    case IntraMode::slide: return "slide";
    case IntraMode::global: return "global";
    case IntraMode::off: return "off";
  }
  return "?";
}
std::string to_string(SamplingPolicy v) {
  return v == SamplingPolicy::uniform ? "uniform" : "slide-balanced";
}

namespace {

void validate_config(const TrainConfig& cfg, const SlideDataset& ds) {
  if (cfg.M < 1) throw UsageError("train config: M must be >= 1");
  if (cfg.inter_mode == InterMode::prototype && cfg.K < 1) {
    throw UsageError("train config: K must be >= 1 when inter_mode=prototype");
  }
  if (cfg.epochs < 0) throw UsageError("train config: epochs must be >= 0");
  if (cfg.batch_size < 1) throw UsageError("train config: batch_size must be >= 1");
  if (!(cfg.lr > 0) && cfg.lr != 0) throw UsageError("train config: lr must be >= 0");
  if (cfg.lr_momentum < 0 || cfg.lr_momentum >= 1) {
    throw UsageError("train config: lr_momentum must be in [0, 1)");
  }
  if (!(cfg.weights.alpha1 >= 0) || !(cfg.weights.alpha2 >= 0) ||
      !std::isfinite(cfg.weights.alpha1) || !std::isfinite(cfg.weights.alpha2)) {
    throw UsageError("train config: loss weights must be finite and >= 0");
  }
  if (cfg.augment_noise_sigma < 0) {
    throw UsageError("train config: augment_noise_sigma must be >= 0");
  }
  if (cfg.augment_dropout_p < 0 || cfg.augment_dropout_p >= 1) {
    throw UsageError("train config: augment_dropout_p must be in [0, 1)");
  }
  if (ds.slides.empty()) throw DataError("train: dataset has no slides");
}

std::vector<SlideEmbeddings> extract_embeddings(const SlideDataset& ds, const Mlp& encoder,
                                                int workers) {
  std::vector<SlideEmbeddings> out(ds.slides.size());
  parallel_for(ds.slides.size(), workers, [&](std::size_t s) {
    const auto& slide = ds.slides[s];
    out[s].slide_id = slide.slide_id;
    out[s].embeddings.reserve(slide.regions.size());
    for (const auto& region : slide.regions) {
      Vec x(region.features.begin(), region.features.end());
      out[s].embeddings.push_back(encode(encoder, x));
    }
  });
  return out;
}

}  // namespace

std::pair<Vec, Vec> augment(std::span<const float> x, double sigma, double dropout_p,
                            Rng& rng) {
  auto one_view = [&]() {
    Vec v(x.size());
    for (std::size_t d = 0; d < x.size(); ++d) {
      v[d] = static_cast<double>(x[d]) + sigma * rng.next_gaussian();
    }
    for (std::size_t d = 0; d < x.size(); ++d) {
      if (rng.next_double() < dropout_p) v[d] = 0.0;
    }
    return v;
  };
  Vec v1 = one_view();
  Vec v2 = one_view();
  return {std::move(v1), std::move(v2)};
}

EpochArtifacts build_epoch_artifacts(const SlideDataset& ds, const DistillState& state,
                                     const TrainConfig& cfg, int epoch, int workers) {
  validate_config(cfg, ds);
  const std::size_t n = ds.slides.size();
  EpochArtifacts a;
  const Mlp& encoder = cfg.clustering_source == ClusteringSource::teacher
                           ? state.teacher.encoder
                           : state.student.encoder;
  a.embeddings = extract_embeddings(ds, encoder, workers);

  KMeansConfig kcfg = cfg.kmeans;
  kcfg.M = cfg.M;
  kcfg.seed = derive_seed(cfg.seed, "cluster", static_cast<std::uint64_t>(epoch));

  // Slide-level sets serve the intra loss, prototype matching, and the
  // compactness metric; only the pure-global configuration goes without.
  const bool need_slide_sets =
      cfg.inter_mode == InterMode::prototype || cfg.intra_mode != IntraMode::global;
  a.set_index.assign(n, std::nullopt);
  a.skipped.assign(n, false);
  if (need_slide_sets) {
    SlideClusterResult cluster = slide_level_cluster(a.embeddings, kcfg, workers);
    a.slide_sets = std::move(cluster.sets);
    a.skip_list = std::move(cluster.skipped);
    std::size_t next = 0;
    for (std::size_t s = 0; s < n; ++s) {
      const bool skipped = std::find(a.skip_list.begin(), a.skip_list.end(),
                                     ds.slides[s].slide_id) != a.skip_list.end();
      a.skipped[s] = skipped;
      if (!skipped) a.set_index[s] = next++;
    }
  }

  if (cfg.intra_mode == IntraMode::global) {
    std::vector<Vec> pooled;
    a.global_offsets.assign(n, 0);
    for (std::size_t s = 0; s < n; ++s) {
      a.global_offsets[s] = pooled.size();
      pooled.insert(pooled.end(), a.embeddings[s].embeddings.begin(),
                    a.embeddings[s].embeddings.end());
    }
    // Match the slide-level prototype budget: M per slide.
    const int total = cfg.M * static_cast<int>(n);
    a.global_set = global_cluster(pooled, total, kcfg);
  }

  if (cfg.inter_mode == InterMode::prototype) {
    if (a.slide_sets.size() < static_cast<std::size_t>(cfg.K) + 1) {
      throw DataError("build_epoch_artifacts: K=" + std::to_string(cfg.K) +
                      " neighbors unsatisfiable with " +
                      std::to_string(a.slide_sets.size()) + " clusterable slides");
    }
    a.sim = similarity_matrix(a.slide_sets, workers);
    a.neighbors.assign(n, {});
    parallel_for(n, workers, [&](std::size_t s) {
      if (!a.set_index[s]) return;
      a.neighbors[s] = top_k_neighbors(*a.sim, ds.slides[s].slide_id, cfg.K);
    });
  }

  if (cfg.inter_mode == InterMode::region) {
    if (n < 2) {
      throw DataError("build_epoch_artifacts: inter_mode=region needs at least two slides");
    }
    a.region_targets.assign(n, {});
    parallel_for(n, workers, [&](std::size_t s) {
      a.region_targets[s].resize(a.embeddings[s].embeddings.size());
      for (std::size_t r = 0; r < a.embeddings[s].embeddings.size(); ++r) {
        const RegionRef ref =
            nearest_cross_slide_region(a.embeddings[s].embeddings[r], a.embeddings, s);
        a.region_targets[s][r] = a.embeddings[ref.slide_index].embeddings[ref.region_index];
      }
    });
  }
  return a;
}

EpochMetrics run_epoch(const SlideDataset& ds, DistillState& state, NetPair& velocity,
                       const EpochArtifacts& artifacts, const TrainConfig& cfg, int epoch,
                       int workers) {
  const auto t0 = std::chrono::steady_clock::now();
  EpochMetrics metrics;
  metrics.epoch = epoch;

  Rng shuffle_rng = derive_stream(cfg.seed, "shuffle", static_cast<std::uint64_t>(epoch));
  Rng aug_rng = derive_stream(cfg.seed, "augment", static_cast<std::uint64_t>(epoch));

  std::vector<std::pair<std::size_t, std::size_t>> order;
  order.reserve(ds.total_regions());
  if (cfg.sampling == SamplingPolicy::uniform) {
    for (std::size_t s = 0; s < ds.slides.size(); ++s) {
      for (std::size_t r = 0; r < ds.slides[s].regions.size(); ++r) order.emplace_back(s, r);
    }
    shuffle_rng.shuffle(order);
  } else {
    for (std::size_t i = 0; i < ds.total_regions(); ++i) {
      const std::size_t s = shuffle_rng.next_below(ds.slides.size());
      const std::size_t r = shuffle_rng.next_below(ds.slides[s].regions.size());
      order.emplace_back(s, r);
    }
  }

  double sum_self = 0, sum_total = 0, sum_intra = 0, sum_inter = 0;
  std::size_t n_regions = 0, n_intra = 0, n_inter = 0;
  Vec prob_sum;
  std::size_t prob_count = 0;

  for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
    const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
    std::vector<BatchItem> batch;
    batch.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) {
      const auto [s, r] = order[i];
      BatchItem item;
      auto views = augment(ds.slides[s].regions[r].features, cfg.augment_noise_sigma,
                           cfg.augment_dropout_p, aug_rng);
      item.view1 = std::move(views.first);
      item.view2 = std::move(views.second);

      if (cfg.intra_mode == IntraMode::slide && artifacts.set_index[s]) {
        const auto& set = artifacts.slide_sets[*artifacts.set_index[s]];
        item.intra_prototype = set.prototypes[set.assignments[r]];
      } else if (cfg.intra_mode == IntraMode::global) {
        const auto& gset = *artifacts.global_set;
        item.intra_prototype =
            gset.prototypes[gset.assignments[artifacts.global_offsets[s] + r]];
      }

      if (!artifacts.skipped[s]) {
        if (cfg.inter_mode == InterMode::prototype && artifacts.set_index[s]) {
          const auto& set = artifacts.slide_sets[*artifacts.set_index[s]];
          const int m = set.assignments[r];
          for (const auto& nb : artifacts.neighbors[s]) {
            const auto& nb_set = artifacts.slide_sets[nb.index];
            item.inter_targets.push_back(nb_set.prototypes[nb.permutation[m]]);
          }
        } else if (cfg.inter_mode == InterMode::region) {
          item.inter_targets.push_back(artifacts.region_targets[s][r]);
        }
      }
      // Skip-list slides keep only the self loss.
      if (artifacts.skipped[s]) item.intra_prototype.reset();

      batch.push_back(std::move(item));
    }

    GradResult res = gradients(state, cfg.weights, batch, workers);
    sgd_step(state.student, res.grads, velocity, cfg.lr, cfg.lr_momentum);
    ema_update(state, state.ema_momentum);
    update_center(state, res.teacher_logits);

    const std::size_t bsz = batch.size();
    sum_self += res.losses.self_loss * bsz;
    sum_total += res.losses.total * bsz;
    sum_intra += res.losses.intra_loss * res.losses.n_intra;
    sum_inter += res.losses.inter_loss * res.losses.n_inter;
    n_regions += bsz;
    n_intra += res.losses.n_intra;
    n_inter += res.losses.n_inter;
    metrics.batch_loss_self.push_back(res.losses.self_loss);
    metrics.batch_loss_total.push_back(res.losses.total);

    if (prob_sum.empty()) prob_sum.assign(res.teacher_prob_sum.size(), 0.0);
    for (std::size_t j = 0; j < prob_sum.size(); ++j) prob_sum[j] += res.teacher_prob_sum[j];
    prob_count += res.teacher_prob_count;
  }

  metrics.loss_self = n_regions ? sum_self / n_regions : 0.0;
  metrics.loss_total = n_regions ? sum_total / n_regions : 0.0;
  metrics.loss_intra = n_intra ? sum_intra / n_intra : 0.0;
  metrics.loss_inter = n_inter ? sum_inter / n_inter : 0.0;

  // Entropy of the epoch-mean teacher distribution: the collapse monitor.
  // One-hot collapse drives it to zero; healthy sharpening does not.
  double entropy = 0.0;
  if (prob_count > 0) {
    for (double p : prob_sum) {
      const double q = p / static_cast<double>(prob_count);
      if (q > 0) entropy -= q * std::log(q);
    }
  }
  metrics.teacher_entropy = entropy;

  metrics.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return metrics;
}

CompactnessReport artifact_compactness(const SlideDataset& ds, const EpochArtifacts& a) {
  const std::size_t n = ds.slides.size();
  std::vector<const PrototypeSet*> sets(n, nullptr);
  std::vector<PrototypeSet> global_views;
  if (!a.slide_sets.empty()) {
    for (std::size_t s = 0; s < n; ++s) {
      if (a.set_index[s]) sets[s] = &a.slide_sets[*a.set_index[s]];
    }
  } else if (a.global_set) {
    // Per-slide views of the pooled clustering: every slide sees all global
    // prototypes with its own assignment slice.
    global_views.resize(n);
    for (std::size_t s = 0; s < n; ++s) {
      auto& view = global_views[s];
      view.slide_id = ds.slides[s].slide_id;
      view.prototypes = a.global_set->prototypes;
      const std::size_t off = a.global_offsets[s];
      const std::size_t len = a.embeddings[s].embeddings.size();
      view.assignments.assign(a.global_set->assignments.begin() + off,
                              a.global_set->assignments.begin() + off + len);
      sets[s] = &view;
    }
  }
  std::vector<std::optional<int>> labels(n);
  for (std::size_t s = 0; s < n; ++s) labels[s] = ds.slides[s].label;
  return compactness(a.embeddings, sets, labels);
}

TrainResult train(const SlideDataset& ds, const TrainConfig& cfg, int workers,
                  const std::function<void(const EpochMetrics&)>& on_epoch) {
  validate(ds);
  TrainConfig effective = cfg;
  effective.model.d_in = ds.d_in;  // the dataset defines the input width
  validate_config(effective, ds);

  Rng init_rng = derive_stream(effective.seed, "init");
  TrainResult result;
  result.state = init_state(effective.model, init_rng);
  result.initial_compactness = std::numeric_limits<double>::quiet_NaN();
  if (effective.epochs == 0) return result;

  NetPair velocity = zeros_like(result.state.student);
  EpochArtifacts artifacts = build_epoch_artifacts(ds, result.state, effective, 0, workers);
  result.initial_compactness = artifact_compactness(ds, artifacts).compactness;

  for (int e = 0; e < effective.epochs; ++e) {
    EpochMetrics metrics =
        run_epoch(ds, result.state, velocity, artifacts, effective, e, workers);
    // Rebuild from the updated state: next epoch's artifacts, and the
    // end-of-epoch compactness measurement.
    artifacts = build_epoch_artifacts(ds, result.state, effective, e + 1, workers);
    metrics.compactness = artifact_compactness(ds, artifacts).compactness;
    if (on_epoch) on_epoch(metrics);
    result.metrics.push_back(std::move(metrics));
  }
  return result;
}

}  // namespace slpd
