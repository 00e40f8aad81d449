#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "slpd/dataset.hpp"
#include "slpd/distill.hpp"
#include "slpd/eval.hpp"
#include "slpd/kmeans.hpp"
#include "slpd/similarity.hpp"

namespace slpd {

enum class ClusteringSource { teacher, student };
enum class InterMode { prototype, region, off };
enum class IntraMode { slide, global, off };
enum class SamplingPolicy { uniform, slide_balanced };

ClusteringSource clustering_source_from_string(const std::string& s);
InterMode inter_mode_from_string(const std::string& s);
IntraMode intra_mode_from_string(const std::string& s);
SamplingPolicy sampling_policy_from_string(const std::string& s);
std::string to_string(ClusteringSource v);
std::string to_string(InterMode v);
std::string to_string(IntraMode v);
std::string to_string(SamplingPolicy v);

struct TrainConfig {
  int M = 2;                // prototypes per slide
  int K = 1;                // neighbor slides for inter-distillation
  LossWeights weights{};    // alpha1 (intra), alpha2 (inter)
  int epochs = 30;
  int batch_size = 32;
  double lr = 0.01;
  double lr_momentum = 0.9;
  std::uint64_t seed = 0;
  ClusteringSource clustering_source = ClusteringSource::teacher;
  InterMode inter_mode = InterMode::prototype;
  IntraMode intra_mode = IntraMode::slide;
  double augment_noise_sigma = 0.1;
  double augment_dropout_p = 0.1;
  // uniform: one shuffled pass over all regions. slide_balanced: the same
  // number of draws, but slide first (uniform), then a region within it,
  // with replacement, so region-rich slides do not dominate.
  SamplingPolicy sampling = SamplingPolicy::uniform;
  DistillConfig model{};
  KMeansConfig kmeans{};  // M and seed are overridden per epoch
};

/// Everything refreshed once per epoch and immutable until the next one:
/// clustering-source embeddings, prototype sets, the slide-similarity matrix
/// with neighbor lists, and the region-level ablation targets.
struct EpochArtifacts {
  std::vector<SlideEmbeddings> embeddings;            // per slide, unaugmented
  std::vector<PrototypeSet> slide_sets;               // non-skipped slides, dataset order
  std::vector<std::optional<std::size_t>> set_index;  // slide -> index into slide_sets
  std::optional<PrototypeSet> global_set;             // intra_mode == global
  std::vector<std::size_t> global_offsets;            // slide -> offset into pooled order
  std::optional<SlideSimilarityMatrix> sim;           // inter_mode == prototype
  std::vector<std::vector<NeighborRef>> neighbors;    // per slide; empty when unavailable
  std::vector<std::vector<Vec>> region_targets;       // inter_mode == region
  std::vector<bool> skipped;                          // per slide
  std::vector<std::string> skip_list;                 // ids excluded from prototype losses
};

/// Two independent augmented views: Gaussian noise (std sigma), then each
/// coordinate zeroed independently with probability dropout_p. Consumes a
/// fixed number of draws per call.
std::pair<Vec, Vec> augment(std::span<const float> x, double sigma, double dropout_p,
                            Rng& rng);

/// Epoch-start refresh: (1) extract embeddings with the clustering-source
/// network, (2) cluster (slide-level, plus pooled when intra_mode=global),
/// (3) similarity matrix and top-K neighbors when inter_mode=prototype, or
/// nearest cross-slide region targets when inter_mode=region. Slides with
/// fewer than M regions enter the skip list and keep only the self loss.
EpochArtifacts build_epoch_artifacts(const SlideDataset& ds, const DistillState& state,
                                     const TrainConfig& cfg, int epoch, int workers = 0);

struct EpochMetrics {
  int epoch = 0;
  double loss_self = 0.0;
  double loss_intra = 0.0;
  double loss_inter = 0.0;
  double loss_total = 0.0;
  double compactness = 0.0;       // measured after the epoch's updates
  double teacher_entropy = 0.0;   // entropy of the epoch-mean teacher distribution
  double wall_time_s = 0.0;       // not part of the serialized metrics record
  std::vector<double> batch_loss_self;   // per-step traces, for exactness tests
  std::vector<double> batch_loss_total;
};

/// One pass over all regions in shuffled order: augment, active losses,
/// analytic gradients, SGD step, EMA teacher update, center update.
/// Artifacts are read-only for the whole epoch.
EpochMetrics run_epoch(const SlideDataset& ds, DistillState& state, NetPair& velocity,
                       const EpochArtifacts& artifacts, const TrainConfig& cfg, int epoch,
                       int workers = 0);

struct TrainResult {
  DistillState state;
  std::vector<EpochMetrics> metrics;
  double initial_compactness = 0.0;  // before any training (NaN when epochs == 0)
};

/// Full training run: deterministic function of (dataset, cfg), including
/// under parallel execution. Streams for init, shuffling, augmentation and
/// clustering are derived independently from cfg.seed.
TrainResult train(const SlideDataset& ds, const TrainConfig& cfg, int workers = 0,
                  const std::function<void(const EpochMetrics&)>& on_epoch = nullptr);

/// Compactness/separation of an artifact snapshot (slide-level sets when
/// present, otherwise per-slide views of the global set).
CompactnessReport artifact_compactness(const SlideDataset& ds, const EpochArtifacts& a);

}  // namespace slpd
