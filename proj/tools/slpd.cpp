// slpd: slide-level prototypical distillation pipeline.
//
// Subcommands: synth, cluster, similarity, neighbors, train, eval.
// Every subcommand is reproducible from its flags and input files alone;
// exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "slpd/binary_io.hpp"
#include "slpd/checkpoint.hpp"
#include "slpd/dataset.hpp"
#include "slpd/distill.hpp"
#include "slpd/errors.hpp"
#include "slpd/eval.hpp"
#include "slpd/kmeans.hpp"
#include "slpd/similarity.hpp"
#include "slpd/trainer.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

struct CommonFlags {
  std::uint64_t seed = 0;
  int workers = 0;  // 0 = all cores
  std::string out;
};

void add_common(CLI::App* sub, CommonFlags& c, bool out_required = true) {
  sub->add_option("--seed", c.seed, "Master seed")->capture_default_str();
  sub->add_option("--workers", c.workers, "Worker threads (0 = all cores)")
      ->capture_default_str();
  auto* out = sub->add_option("--out", c.out, "Output path");
  if (out_required) out->required();
}

struct EmbeddingFlags {
  std::string checkpoint;
  std::string source = "raw";  // raw | teacher | student
};

void add_embedding_source(CLI::App* sub, EmbeddingFlags& e) {
  sub->add_option("--checkpoint", e.checkpoint, "Checkpoint to embed with");
  sub->add_option("--source", e.source,
                  "Embedding source: raw features, or the teacher/student encoder "
                  "of --checkpoint")
      ->check(CLI::IsMember({"raw", "teacher", "student"}))
      ->capture_default_str();
}

std::vector<slpd::SlideEmbeddings> make_embeddings(const slpd::SlideDataset& ds,
                                                   const EmbeddingFlags& flags) {
  std::vector<slpd::SlideEmbeddings> out;
  out.reserve(ds.slides.size());
  if (flags.source == "raw") {
    for (const auto& slide : ds.slides) {
      slpd::SlideEmbeddings se;
      se.slide_id = slide.slide_id;
      for (const auto& region : slide.regions) {
        se.embeddings.emplace_back(region.features.begin(), region.features.end());
      }
      out.push_back(std::move(se));
    }
    return out;
  }
  if (flags.checkpoint.empty()) {
    throw slpd::UsageError("--source " + flags.source + " requires --checkpoint");
  }
  const slpd::DistillState state = slpd::load_checkpoint(flags.checkpoint);
  const slpd::Mlp& encoder =
      flags.source == "teacher" ? state.teacher.encoder : state.student.encoder;
  for (const auto& slide : ds.slides) {
    slpd::SlideEmbeddings se;
    se.slide_id = slide.slide_id;
    for (const auto& region : slide.regions) {
      slpd::Vec x(region.features.begin(), region.features.end());
      se.embeddings.push_back(slpd::encode(encoder, x));
    }
    out.push_back(std::move(se));
  }
  return out;
}

void write_json(const fs::path& path, const ordered_json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw slpd::DataError("cannot open output file: " + path.string());
  os << j.dump(2) << "\n";
  if (!os) throw slpd::DataError("I/O failure writing " + path.string());
}

// Prototype payloads reuse the slide embedding binary layout.
void write_matrix_file(const fs::path& path, const std::vector<slpd::Vec>& rows) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw slpd::DataError("cannot open output file: " + path.string());
  const char magic[4] = {'S', 'L', 'P', 'D'};
  os.write(magic, 4);
  slpd::detail::write_u32_le(os, 1);
  slpd::detail::write_u32_le(os, static_cast<std::uint32_t>(rows.size()));
  slpd::detail::write_u32_le(os, rows.empty() ? 0u : static_cast<std::uint32_t>(rows.front().size()));
  for (const auto& row : rows) {
    for (double v : row) slpd::detail::write_f32_le(os, static_cast<float>(v));
  }
  if (!os) throw slpd::DataError("I/O failure writing " + path.string());
}

struct SynthFlags {
  int slides = 40;
  int regions = 30;
  int dim = 32;
  int classes = 2;
  double separation = 3.0;
  int clusters = 2;
};

struct ClusterFlags {
  std::string data;
  int M = 2;
  bool global = false;
  int total_prototypes = 0;  // 0 = M * num_slides
  int restarts = 5;
  int max_iters = 100;
  double rel_tol = 1e-6;
};

struct TrainFlags {
  std::string data;
  slpd::TrainConfig cfg;
  std::string clustering_source = "teacher";
  std::string inter_mode = "prototype";
  std::string intra_mode = "slide";
  std::string sampling = "uniform";
  std::string activation = "tanh";
};

struct EvalFlags {
  std::string data;
  std::string checkpoint;
  int folds = 5;
  int k_eval = 5;
  int M = 2;
  std::string export_pooled;
};

int run(int argc, char** argv) {
  CLI::App app{"slpd: prototype-based slide representation pipeline"};
  app.require_subcommand(1);
  // One config file for the whole tool: flags live in a [subcommand]
  // section and are overridden by anything given on the command line.
  // fallthrough() lets --config appear after the subcommand name as well.
  app.fallthrough();
  app.set_config("--config", "",
                 "Config file (TOML, one [subcommand] section per command; "
                 "command-line flags override)");

  // synth
  CommonFlags synth_common;
  SynthFlags synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a labeled synthetic dataset");
  synth_cmd->add_option("--slides", synth.slides, "Number of slides")->capture_default_str();
  synth_cmd->add_option("--regions", synth.regions, "Regions per slide")->capture_default_str();
  synth_cmd->add_option("--dim", synth.dim, "Feature dimension d_in")->capture_default_str();
  synth_cmd->add_option("--classes", synth.classes, "Number of classes")->capture_default_str();
  synth_cmd->add_option("--separation", synth.separation, "Class separation")
      ->capture_default_str();
  synth_cmd->add_option("--clusters", synth.clusters, "Gaussian blobs per slide")
      ->capture_default_str();
  add_common(synth_cmd, synth_common);

  // cluster
  CommonFlags cluster_common;
  ClusterFlags cluster;
  EmbeddingFlags cluster_src;
  auto* cluster_cmd = app.add_subcommand("cluster", "Per-slide (or global) k-means prototypes");
  cluster_cmd->add_option("--data", cluster.data, "Dataset manifest or directory")->required();
  cluster_cmd->add_option("--M", cluster.M, "Prototypes per slide")->capture_default_str();
  cluster_cmd->add_flag("--global", cluster.global, "Pool all regions into one clustering");
  cluster_cmd
      ->add_option("--total-prototypes", cluster.total_prototypes,
                   "Global prototype count (0 = M * num_slides)")
      ->capture_default_str();
  cluster_cmd->add_option("--kmeans-restarts", cluster.restarts, "k-means restarts")
      ->capture_default_str();
  cluster_cmd->add_option("--kmeans-max-iters", cluster.max_iters, "Lloyd iteration cap")
      ->capture_default_str();
  cluster_cmd->add_option("--kmeans-rel-tol", cluster.rel_tol, "Relative inertia tolerance")
      ->capture_default_str();
  add_embedding_source(cluster_cmd, cluster_src);
  add_common(cluster_cmd, cluster_common);

  // similarity
  CommonFlags sim_common;
  ClusterFlags sim_cluster;
  EmbeddingFlags sim_src;
  auto* sim_cmd = app.add_subcommand("similarity", "Set-to-set slide similarity matrix");
  sim_cmd->add_option("--data", sim_cluster.data, "Dataset manifest or directory")->required();
  sim_cmd->add_option("--M", sim_cluster.M, "Prototypes per slide")->capture_default_str();
  sim_cmd->add_option("--kmeans-restarts", sim_cluster.restarts, "k-means restarts")
      ->capture_default_str();
  sim_cmd->add_option("--kmeans-max-iters", sim_cluster.max_iters, "Lloyd iteration cap")
      ->capture_default_str();
  sim_cmd->add_option("--kmeans-rel-tol", sim_cluster.rel_tol, "Relative inertia tolerance")
      ->capture_default_str();
  add_embedding_source(sim_cmd, sim_src);
  add_common(sim_cmd, sim_common);

  // neighbors
  CommonFlags nb_common;
  ClusterFlags nb_cluster;
  EmbeddingFlags nb_src;
  int nb_k = 1;
  auto* nb_cmd = app.add_subcommand("neighbors", "Top-K most similar slides per slide");
  nb_cmd->add_option("--data", nb_cluster.data, "Dataset manifest or directory")->required();
  nb_cmd->add_option("--M", nb_cluster.M, "Prototypes per slide")->capture_default_str();
  nb_cmd->add_option("--K", nb_k, "Neighbors per slide")->capture_default_str();
  nb_cmd->add_option("--kmeans-restarts", nb_cluster.restarts, "k-means restarts")
      ->capture_default_str();
  add_embedding_source(nb_cmd, nb_src);
  add_common(nb_cmd, nb_common);

  // train
  CommonFlags train_common;
  TrainFlags train;
  auto* train_cmd = app.add_subcommand("train", "Run the distillation training loop");
  train_cmd->add_option("--data", train.data, "Dataset manifest or directory")->required();
  train_cmd->add_option("--M", train.cfg.M, "Prototypes per slide")->capture_default_str();
  train_cmd->add_option("--K", train.cfg.K, "Neighbor slides for inter-distillation")
      ->capture_default_str();
  train_cmd->add_option("--alpha1", train.cfg.weights.alpha1, "Intra-slide loss weight")
      ->capture_default_str();
  train_cmd->add_option("--alpha2", train.cfg.weights.alpha2, "Inter-slide loss weight")
      ->capture_default_str();
  train_cmd->add_option("--epochs", train.cfg.epochs, "Training epochs")->capture_default_str();
  train_cmd->add_option("--batch-size", train.cfg.batch_size, "Minibatch size")
      ->capture_default_str();
  train_cmd->add_option("--lr", train.cfg.lr, "Learning rate")->capture_default_str();
  train_cmd->add_option("--lr-momentum", train.cfg.lr_momentum, "SGD momentum")
      ->capture_default_str();
  train_cmd
      ->add_option("--clustering-source", train.clustering_source,
                   "Network whose embeddings are clustered")
      ->check(CLI::IsMember({"teacher", "student"}))
      ->capture_default_str();
  train_cmd->add_option("--inter-mode", train.inter_mode, "Inter-slide distillation mode")
      ->check(CLI::IsMember({"prototype", "region", "off"}))
      ->capture_default_str();
  train_cmd->add_option("--intra-mode", train.intra_mode, "Intra-slide distillation mode")
      ->check(CLI::IsMember({"slide", "global", "off"}))
      ->capture_default_str();
  train_cmd->add_option("--sampling", train.sampling, "Region sampling policy")
      ->check(CLI::IsMember({"uniform", "slide-balanced"}))
      ->capture_default_str();
  train_cmd->add_option("--augment-sigma", train.cfg.augment_noise_sigma,
                        "Gaussian view-noise std")
      ->capture_default_str();
  train_cmd->add_option("--augment-dropout", train.cfg.augment_dropout_p,
                        "Per-coordinate view dropout probability")
      ->capture_default_str();
  train_cmd->add_option("--hidden1", train.cfg.model.hidden1, "Encoder hidden width 1")
      ->capture_default_str();
  train_cmd->add_option("--hidden2", train.cfg.model.hidden2, "Encoder hidden width 2")
      ->capture_default_str();
  train_cmd->add_option("--embed-dim", train.cfg.model.embed_dim, "Embedding dimension D")
      ->capture_default_str();
  train_cmd->add_option("--head-hidden", train.cfg.model.head_hidden, "Head hidden width")
      ->capture_default_str();
  train_cmd->add_option("--proj-dim", train.cfg.model.proj_dim, "Projection dimension P")
      ->capture_default_str();
  train_cmd->add_option("--activation", train.activation, "Nonlinearity")
      ->check(CLI::IsMember({"tanh", "relu", "identity"}))
      ->capture_default_str();
  train_cmd->add_option("--tau-student", train.cfg.model.tau_student, "Student temperature")
      ->capture_default_str();
  train_cmd->add_option("--tau-teacher", train.cfg.model.tau_teacher, "Teacher temperature")
      ->capture_default_str();
  train_cmd->add_option("--ema-momentum", train.cfg.model.ema_momentum, "Teacher EMA momentum")
      ->capture_default_str();
  train_cmd
      ->add_option("--center-momentum", train.cfg.model.center_momentum, "Center EMA momentum")
      ->capture_default_str();
  train_cmd->add_option("--kmeans-restarts", train.cfg.kmeans.restarts, "k-means restarts")
      ->capture_default_str();
  train_cmd->add_option("--kmeans-max-iters", train.cfg.kmeans.max_iters, "Lloyd iteration cap")
      ->capture_default_str();
  train_cmd
      ->add_option("--kmeans-rel-tol", train.cfg.kmeans.rel_tol, "Relative inertia tolerance")
      ->capture_default_str();
  add_common(train_cmd, train_common);

  // eval
  CommonFlags eval_common;
  EvalFlags eval_flags;
  auto* eval_cmd = app.add_subcommand("eval", "KNN cross-validation and compactness metrics");
  eval_cmd->add_option("--data", eval_flags.data, "Dataset manifest or directory")->required();
  eval_cmd->add_option("--checkpoint", eval_flags.checkpoint, "Trained checkpoint")->required();
  eval_cmd->add_option("--folds", eval_flags.folds, "Cross-validation folds")
      ->capture_default_str();
  eval_cmd->add_option("--k-eval", eval_flags.k_eval, "KNN neighborhood size")
      ->capture_default_str();
  eval_cmd->add_option("--M", eval_flags.M, "Prototypes per slide for compactness")
      ->capture_default_str();
  eval_cmd->add_option("--export-pooled", eval_flags.export_pooled,
                       "Also write the per-slide pooled teacher vectors (embedding "
                       "binary format, dataset order) for external projection tools");
  add_common(eval_cmd, eval_common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n";
    CLI::App* failing = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    std::cerr << failing->help();
    return 1;
  }

  if (synth_cmd->parsed()) {
    const auto ds = slpd::generate_synthetic(synth.slides, synth.regions, synth.dim,
                                             synth.classes, synth.separation, synth.clusters,
                                             synth_common.seed);
    slpd::write_dataset(ds, synth_common.out);
    std::cout << "wrote " << ds.slides.size() << " slides (" << ds.total_regions()
              << " regions, d_in=" << ds.d_in << ") to " << synth_common.out << "\n";
    return 0;
  }

  if (cluster_cmd->parsed()) {
    const auto ds = slpd::load_dataset(cluster.data, cluster_common.workers);
    const auto embeddings = make_embeddings(ds, cluster_src);
    slpd::KMeansConfig kcfg;
    kcfg.M = cluster.M;
    kcfg.restarts = cluster.restarts;
    kcfg.max_iters = cluster.max_iters;
    kcfg.rel_tol = cluster.rel_tol;
    kcfg.seed = slpd::derive_seed(cluster_common.seed, "cluster", 0);

    const fs::path out_dir = cluster_common.out;
    fs::create_directories(out_dir);
    ordered_json manifest;
    manifest["format"] = "slpd-prototypes";
    manifest["version"] = 1;
    manifest["source"] = cluster_src.source;
    manifest["slides"] = ordered_json::array();

    if (cluster.global) {
      std::vector<slpd::Vec> pooled;
      for (const auto& se : embeddings) {
        pooled.insert(pooled.end(), se.embeddings.begin(), se.embeddings.end());
      }
      const int total = cluster.total_prototypes > 0
                            ? cluster.total_prototypes
                            : cluster.M * static_cast<int>(ds.slides.size());
      const auto set = slpd::global_cluster(pooled, total, kcfg);
      manifest["M"] = total;
      manifest["skipped"] = ordered_json::array();
      write_matrix_file(out_dir / "global.bin", set.prototypes);
      ordered_json entry;
      entry["slide_id"] = set.slide_id;
      entry["path"] = "global.bin";
      entry["num_prototypes"] = set.M();
      entry["inertia"] = set.inertia;
      manifest["slides"].push_back(std::move(entry));
    } else {
      const auto result = slpd::slide_level_cluster(embeddings, kcfg, cluster_common.workers);
      manifest["M"] = cluster.M;
      manifest["skipped"] = result.skipped;
      for (std::size_t i = 0; i < result.sets.size(); ++i) {
        const auto& set = result.sets[i];
        const std::string fname = "proto_" + std::to_string(i) + ".bin";
        write_matrix_file(out_dir / fname, set.prototypes);
        ordered_json entry;
        entry["slide_id"] = set.slide_id;
        entry["path"] = fname;
        entry["num_prototypes"] = set.M();
        entry["inertia"] = set.inertia;
        manifest["slides"].push_back(std::move(entry));
      }
    }
    write_json(out_dir / "prototypes.json", manifest);
    std::cout << "wrote prototype dump to " << out_dir.string() << "\n";
    return 0;
  }

  if (sim_cmd->parsed() || nb_cmd->parsed()) {
    const bool is_sim = sim_cmd->parsed();
    const auto& flags = is_sim ? sim_cluster : nb_cluster;
    const auto& src = is_sim ? sim_src : nb_src;
    const auto& common = is_sim ? sim_common : nb_common;
    const auto ds = slpd::load_dataset(flags.data, common.workers);
    const auto embeddings = make_embeddings(ds, src);
    slpd::KMeansConfig kcfg;
    kcfg.M = flags.M;
    kcfg.restarts = flags.restarts;
    kcfg.max_iters = flags.max_iters;
    kcfg.rel_tol = flags.rel_tol;
    kcfg.seed = slpd::derive_seed(common.seed, "cluster", 0);
    const auto result = slpd::slide_level_cluster(embeddings, kcfg, common.workers);
    if (!result.skipped.empty()) {
      std::string names;
      for (const auto& s : result.skipped) names += (names.empty() ? "" : ", ") + s;
      throw slpd::DataError("slides with fewer than M regions: " + names);
    }
    const auto matrix = slpd::similarity_matrix(result.sets, common.workers);

    if (is_sim) {
      ordered_json j;
      j["format"] = "slpd-similarity";
      j["slide_ids"] = matrix.slide_ids;
      ordered_json values = ordered_json::array();
      for (std::size_t i = 0; i < matrix.size(); ++i) {
        ordered_json row = ordered_json::array();
        for (std::size_t k = 0; k < matrix.size(); ++k) row.push_back(matrix.value(i, k));
        values.push_back(std::move(row));
      }
      j["values"] = std::move(values);
      write_json(common.out, j);
      std::cout << "wrote " << matrix.size() << "x" << matrix.size()
                << " similarity matrix to " << common.out << "\n";
    } else {
      ordered_json j;
      j["format"] = "slpd-neighbors";
      j["K"] = nb_k;
      ordered_json lists = ordered_json::object();
      for (const auto& id : matrix.slide_ids) {
        const auto neighbors = slpd::top_k_neighbors(matrix, id, nb_k);
        ordered_json arr = ordered_json::array();
        for (const auto& nb : neighbors) {
          ordered_json entry;
          entry["slide_id"] = nb.slide_id;
          entry["similarity"] = nb.similarity;
          entry["permutation"] = nb.permutation;
          arr.push_back(std::move(entry));
        }
        lists[id] = std::move(arr);
      }
      j["neighbors"] = std::move(lists);
      write_json(common.out, j);
      std::cout << "wrote top-" << nb_k << " neighbor lists to " << common.out << "\n";
    }
    return 0;
  }

  if (train_cmd->parsed()) {
    train.cfg.seed = train_common.seed;
    train.cfg.clustering_source = slpd::clustering_source_from_string(train.clustering_source);
    train.cfg.inter_mode = slpd::inter_mode_from_string(train.inter_mode);
    train.cfg.intra_mode = slpd::intra_mode_from_string(train.intra_mode);
    train.cfg.sampling = slpd::sampling_policy_from_string(train.sampling);
    train.cfg.model.activation = slpd::activation_from_string(train.activation);

    const auto ds = slpd::load_dataset(train.data, train_common.workers);
    const fs::path out_dir = train_common.out;
    fs::create_directories(out_dir);

    const auto result = slpd::train(ds, train.cfg, train_common.workers,
                                    [&](const slpd::EpochMetrics& m) {
                                      std::cout << "epoch " << m.epoch + 1 << "/"
                                                << train.cfg.epochs
                                                << " loss_total=" << m.loss_total
                                                << " loss_self=" << m.loss_self
                                                << " compactness=" << m.compactness << " ("
                                                << m.wall_time_s << "s)\n";
                                    });

    slpd::save_checkpoint(result.state, out_dir / "checkpoint.slpc");

    // Metrics log: one structured record per epoch. Timing stays on the
    // console so reruns with identical flags produce byte-identical files.
    std::ofstream metrics_os(out_dir / "metrics.jsonl", std::ios::trunc);
    if (!metrics_os) throw slpd::DataError("cannot write metrics log");
    for (const auto& m : result.metrics) {
      ordered_json row;
      row["epoch"] = m.epoch;
      row["loss_self"] = m.loss_self;
      row["loss_intra"] = m.loss_intra;
      row["loss_inter"] = m.loss_inter;
      row["loss_total"] = m.loss_total;
      row["compactness"] = m.compactness;
      row["teacher_entropy"] = m.teacher_entropy;
      metrics_os << row.dump() << "\n";
    }
    metrics_os.close();

    ordered_json cfg_echo;
    cfg_echo["data"] = train.data;
    cfg_echo["seed"] = train.cfg.seed;
    cfg_echo["M"] = train.cfg.M;
    cfg_echo["K"] = train.cfg.K;
    cfg_echo["alpha1"] = train.cfg.weights.alpha1;
    cfg_echo["alpha2"] = train.cfg.weights.alpha2;
    cfg_echo["epochs"] = train.cfg.epochs;
    cfg_echo["batch_size"] = train.cfg.batch_size;
    cfg_echo["lr"] = train.cfg.lr;
    cfg_echo["lr_momentum"] = train.cfg.lr_momentum;
    cfg_echo["clustering_source"] = to_string(train.cfg.clustering_source);
    cfg_echo["inter_mode"] = to_string(train.cfg.inter_mode);
    cfg_echo["intra_mode"] = to_string(train.cfg.intra_mode);
    cfg_echo["sampling"] = to_string(train.cfg.sampling);
    cfg_echo["augment_sigma"] = train.cfg.augment_noise_sigma;
    cfg_echo["augment_dropout"] = train.cfg.augment_dropout_p;
    cfg_echo["hidden1"] = train.cfg.model.hidden1;
    cfg_echo["hidden2"] = train.cfg.model.hidden2;
    cfg_echo["embed_dim"] = train.cfg.model.embed_dim;
    cfg_echo["head_hidden"] = train.cfg.model.head_hidden;
    cfg_echo["proj_dim"] = train.cfg.model.proj_dim;
    cfg_echo["activation"] = to_string(train.cfg.model.activation);
    cfg_echo["tau_student"] = train.cfg.model.tau_student;
    cfg_echo["tau_teacher"] = train.cfg.model.tau_teacher;
    cfg_echo["ema_momentum"] = train.cfg.model.ema_momentum;
    cfg_echo["center_momentum"] = train.cfg.model.center_momentum;
    cfg_echo["kmeans_restarts"] = train.cfg.kmeans.restarts;
    cfg_echo["kmeans_max_iters"] = train.cfg.kmeans.max_iters;
    cfg_echo["kmeans_rel_tol"] = train.cfg.kmeans.rel_tol;
    write_json(out_dir / "config.json", cfg_echo);

    std::cout << "wrote checkpoint and metrics to " << out_dir.string() << "\n";
    return 0;
  }

  if (eval_cmd->parsed()) {
    const auto ds = slpd::load_dataset(eval_flags.data, eval_common.workers);
    const auto state = slpd::load_checkpoint(eval_flags.checkpoint);
    auto report = slpd::cross_validated_eval(ds, state, eval_flags.folds,
                                             eval_flags.k_eval, eval_common.seed);

    // Compactness over fresh teacher-embedding prototypes.
    std::vector<slpd::SlideEmbeddings> embeddings;
    embeddings.reserve(ds.slides.size());
    for (const auto& slide : ds.slides) {
      slpd::SlideEmbeddings se;
      se.slide_id = slide.slide_id;
      for (const auto& region : slide.regions) {
        slpd::Vec x(region.features.begin(), region.features.end());
        se.embeddings.push_back(slpd::encode(state.teacher.encoder, x));
      }
      embeddings.push_back(std::move(se));
    }
    slpd::KMeansConfig kcfg;
    kcfg.M = eval_flags.M;
    kcfg.seed = slpd::derive_seed(eval_common.seed, "cluster", 0);
    const auto clusters = slpd::slide_level_cluster(embeddings, kcfg, eval_common.workers);
    std::vector<const slpd::PrototypeSet*> sets(ds.slides.size(), nullptr);
    {
      std::size_t next = 0;
      for (std::size_t s = 0; s < ds.slides.size(); ++s) {
        const bool skipped =
            std::find(clusters.skipped.begin(), clusters.skipped.end(),
                      ds.slides[s].slide_id) != clusters.skipped.end();
        if (!skipped) sets[s] = &clusters.sets[next++];
      }
    }
    std::vector<std::optional<int>> labels;
    labels.reserve(ds.slides.size());
    for (const auto& slide : ds.slides) labels.push_back(slide.label);
    const auto comp = slpd::compactness(embeddings, sets, labels);
    report.compactness = comp.compactness;
    report.separation = comp.separation;

    if (!eval_flags.export_pooled.empty()) {
      write_matrix_file(eval_flags.export_pooled, slpd::pooled_teacher_vectors(ds, state));
    }

    ordered_json j;
    j["format"] = "slpd-eval";
    j["folds"] = report.folds;
    j["k_eval"] = report.k_eval;
    j["accuracy_mean"] = report.accuracy_mean;
    j["accuracy_std"] = report.accuracy_std;
    j["auc_mean"] = report.auc_mean;
    j["auc_std"] = report.auc_std;
    ordered_json per_fold = ordered_json::array();
    for (std::size_t f = 0; f < report.fold_accuracy.size(); ++f) {
      ordered_json row;
      row["fold"] = f;
      row["accuracy"] = report.fold_accuracy[f];
      row["auc"] = report.fold_auc[f];
      per_fold.push_back(std::move(row));
    }
    j["per_fold"] = std::move(per_fold);
    j["compactness"] = report.compactness;
    j["separation"] = report.separation;
    write_json(eval_common.out, j);
    std::cout << "accuracy " << report.accuracy_mean << " +/- " << report.accuracy_std
              << ", auc " << report.auc_mean << " +/- " << report.auc_std << " -> "
              << eval_common.out << "\n";
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const slpd::UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const slpd::DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const slpd::NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
