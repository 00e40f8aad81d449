// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. argv[1] must be the path to the slpd CLI binary (used by the
// determinism criterion).

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "slpd/dataset.hpp"
#include "slpd/distill.hpp"
#include "slpd/eval.hpp"
#include "slpd/kmeans.hpp"
#include "slpd/rng.hpp"
#include "slpd/similarity.hpp"
#include "slpd/trainer.hpp"

using namespace slpd;
namespace fs = std::filesystem;

namespace {

std::string g_cli;
int g_failures = 0;

void report(int criterion, const std::string& what, bool ok, const std::string& detail) {
  std::cout << (ok ? "[PASS]" : "[FAIL]") << " criterion " << criterion << ": " << what;
  if (!detail.empty()) std::cout << " (" << detail << ")";
  std::cout << std::endl;
  if (!ok) ++g_failures;
}

void run_criterion(int criterion, const std::string& what,
                   const std::function<std::pair<bool, std::string>()>& body) {
  try {
    const auto [ok, detail] = body();
    report(criterion, what, ok, detail);
  } catch (const std::exception& e) {
    report(criterion, what, false, std::string("exception: ") + e.what());
  }
}

PrototypeSet random_set(int M, int dim, Rng& rng) {
  PrototypeSet set;
  set.prototypes.assign(M, Vec(dim));
  for (auto& p : set.prototypes) {
    for (auto& v : p) v = rng.next_gaussian();
  }
  set.assignments.resize(M);
  for (int i = 0; i < M; ++i) set.assignments[i] = i;
  return set;
}

std::string fmt(double v) {
  std::ostringstream ss;
  ss.precision(4);
  ss << v;
  return ss.str();
}

// ---------------------------------------------------------------------------

std::pair<bool, std::string> criterion1_matching_oracle() {
  const auto start = std::chrono::steady_clock::now();
  Rng rng(101);
  double max_delta = 0;
  for (int M = 1; M <= 5; ++M) {
    for (int t = 0; t < 200; ++t) {
      const auto a = random_set(M, 6, rng);
      const auto b = random_set(M, 6, rng);
      const auto fast = optimal_match(a, b);
      const auto brute = oracle::brute_force_match(a, b);
      max_delta = std::max(max_delta, std::abs(fast.similarity - brute.similarity));
    }
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const bool ok = max_delta <= 1e-12 && secs < 10.0;
  return {ok, "max |delta|=" + fmt(max_delta) + ", " + fmt(secs) + "s"};
}

std::pair<bool, std::string> criterion2_set_distance_invariants() {
  Rng rng(202);
  double worst_sym = 0, worst_self = 0, worst_scale = 0;
  bool bounds_ok = true;
  for (int t = 0; t < 500; ++t) {
    const int M = 1 + static_cast<int>(rng.next_below(5));
    const auto a = random_set(M, 5, rng);
    const auto b = random_set(M, 5, rng);
    const auto ab = optimal_match(a, b);
    const auto ba = optimal_match(b, a);
    worst_sym = std::max(worst_sym, std::abs(ab.similarity - ba.similarity));
    bounds_ok = bounds_ok && ab.similarity >= -1.0 && ab.similarity <= 1.0;
    worst_self = std::max(worst_self, std::abs(optimal_match(a, a).similarity - 1.0));

    PrototypeSet scaled = a;
    for (auto& p : scaled.prototypes) {
      const double s = 0.05 + 10.0 * rng.next_double();
      for (auto& v : p) v *= s;
    }
    worst_scale =
        std::max(worst_scale, std::abs(optimal_match(scaled, b).similarity - ab.similarity));
  }
  const bool ok =
      worst_sym <= 1e-9 && bounds_ok && worst_self <= 1e-6 && worst_scale <= 1e-9;
  return {ok, "sym=" + fmt(worst_sym) + " self=" + fmt(worst_self) +
                  " rescale=" + fmt(worst_scale)};
}

std::pair<bool, std::string> criterion3_kmeans() {
  Rng rng(303);
  int optimal = 0;
  const int instances = 50;
  bool monotone = true, never_beats = true;
  for (int t = 0; t < instances; ++t) {
    std::vector<Vec> pts(8, Vec(2));
    for (auto& p : pts) {
      for (auto& v : p) v = rng.next_gaussian();
    }
    KMeansConfig cfg;
    cfg.M = 2;
    cfg.restarts = 10;
    cfg.seed = 9000 + t;
    KMeansDiagnostics diag;
    const auto set = kmeans(pts, cfg, &diag);
    for (const auto& trace : diag.inertia_traces) {
      for (std::size_t i = 1; i < trace.size(); ++i) {
        if (trace[i] > trace[i - 1] + 1e-9 * std::max(1.0, trace[i - 1])) monotone = false;
      }
    }
    const double best = oracle::exhaustive_two_cluster_inertia(pts);
    if (set.inertia < best - 1e-9 * std::max(1.0, best)) never_beats = false;
    if (set.inertia <= best + 1e-9 * std::max(1.0, best)) ++optimal;
  }
  const bool ok = monotone && never_beats && optimal >= instances * 95 / 100;
  return {ok, std::to_string(optimal) + "/" + std::to_string(instances) +
                  " optimal, monotone=" + (monotone ? "yes" : "no")};
}

std::pair<bool, std::string> criterion4_gradient_fidelity() {
  Rng rng(404);
  double worst = 0;
  bool structure_ok = true;
  for (int t = 0; t < 20; ++t) {
    DistillConfig cfg;
    cfg.d_in = 3 + static_cast<std::size_t>(rng.next_below(4));
    cfg.hidden1 = 4 + static_cast<std::size_t>(rng.next_below(4));
    cfg.hidden2 = 4 + static_cast<std::size_t>(rng.next_below(3));
    cfg.embed_dim = 3 + static_cast<std::size_t>(rng.next_below(3));
    cfg.head_hidden = 4 + static_cast<std::size_t>(rng.next_below(3));
    cfg.proj_dim = 4 + static_cast<std::size_t>(rng.next_below(4));
    DistillState state = init_state(cfg, rng);
    for (auto& c : state.center) c = 0.05 * rng.next_gaussian();

    LossWeights weights{0.3 + rng.next_double(), 0.3 + rng.next_double()};
    const int K = 1 + static_cast<int>(rng.next_below(3));
    std::vector<BatchItem> batch(2);
    for (auto& item : batch) {
      item.view1.resize(cfg.d_in);
      item.view2.resize(cfg.d_in);
      for (auto& v : item.view1) v = rng.next_gaussian();
      for (auto& v : item.view2) v = rng.next_gaussian();
      Vec proto(cfg.embed_dim);
      for (auto& v : proto) v = rng.next_gaussian();
      item.intra_prototype = proto;
      for (int k = 0; k < K; ++k) {
        Vec target(cfg.embed_dim);
        for (auto& v : target) v = rng.next_gaussian();
        item.inter_targets.push_back(std::move(target));
      }
    }

    const GradResult res = gradients(state, weights, batch);
    const auto analytic = oracle::flatten_params(res.grads);
    const auto fd = oracle::fd_gradient(state, weights, batch, 1e-5);
    for (std::size_t i = 0; i < fd.size(); ++i) {
      const double denom = std::max({std::abs(analytic[i]), std::abs(fd[i]), 1e-6});
      worst = std::max(worst, std::abs(analytic[i] - fd[i]) / denom);
    }

    // The gradient set covers exactly the student parameters: teacher
    // parameters and prototypes have no entry, and perturbing them does not
    // change the structure.
    if (param_count(res.grads) != param_count(state.student)) structure_ok = false;
    DistillState poked = state;
    poked.teacher.head.layers[0].w[0] += 1.0;
    auto poked_batch = batch;
    poked_batch[0].intra_prototype->at(0) += 1.0;
    const GradResult res2 = gradients(poked, weights, poked_batch);
    if (param_count(res2.grads) != param_count(res.grads)) structure_ok = false;
  }
  const bool ok = worst < 1e-4 && structure_ok;
  return {ok, "max rel err=" + fmt(worst)};
}

std::pair<bool, std::string> criterion5_reductions() {
  const auto ds = generate_synthetic(8, 10, 6, 2, 2.0, 2, 550);

  TrainConfig base;
  base.epochs = 2;
  base.batch_size = 16;
  base.seed = 55;
  base.model.hidden1 = 8;
  base.model.hidden2 = 8;
  base.model.embed_dim = 6;
  base.model.head_hidden = 8;
  base.model.proj_dim = 8;

  TrainConfig off = base;
  off.inter_mode = InterMode::off;
  off.intra_mode = IntraMode::off;
  TrainConfig zeroed = base;  // modes on, weights zero
  zeroed.weights = {0.0, 0.0};

  const auto r_off = train(ds, off);
  const auto r_zero = train(ds, zeroed);

  bool traces_equal = r_off.metrics.size() == r_zero.metrics.size();
  for (std::size_t e = 0; traces_equal && e < r_off.metrics.size(); ++e) {
    traces_equal = r_off.metrics[e].batch_loss_self == r_zero.metrics[e].batch_loss_self &&
                   r_off.metrics[e].batch_loss_total == r_zero.metrics[e].batch_loss_total;
  }

  // Pure self-distillation baseline composed independently from public ops.
  Rng init_rng = derive_stream(off.seed, "init");
  DistillConfig mcfg = off.model;
  mcfg.d_in = ds.d_in;
  DistillState state = init_state(mcfg, init_rng);
  NetPair velocity = zeros_like(state.student);
  bool baseline_equal = true;
  for (int epoch = 0; epoch < off.epochs; ++epoch) {
    std::vector<std::pair<std::size_t, std::size_t>> order;
    for (std::size_t s = 0; s < ds.slides.size(); ++s) {
      for (std::size_t r = 0; r < ds.slides[s].regions.size(); ++r) order.emplace_back(s, r);
    }
    Rng shuffle_rng = derive_stream(off.seed, "shuffle", epoch);
    shuffle_rng.shuffle(order);
    Rng aug_rng = derive_stream(off.seed, "augment", epoch);
    std::size_t step = 0;
    for (std::size_t begin = 0; begin < order.size();
         begin += static_cast<std::size_t>(off.batch_size)) {
      const std::size_t end =
          std::min(order.size(), begin + static_cast<std::size_t>(off.batch_size));
      std::vector<BatchItem> batch;
      for (std::size_t i = begin; i < end; ++i) {
        BatchItem item;
        auto views = augment(ds.slides[order[i].first].regions[order[i].second].features,
                             off.augment_noise_sigma, off.augment_dropout_p, aug_rng);
        item.view1 = views.first;
        item.view2 = views.second;
        batch.push_back(std::move(item));
      }
      const GradResult res = gradients(state, off.weights, batch);
      if (res.losses.self_loss != r_off.metrics[epoch].batch_loss_self[step]) {
        baseline_equal = false;
      }
      sgd_step(state.student, res.grads, velocity, off.lr, off.lr_momentum);
      ema_update(state, state.ema_momentum);
      update_center(state, res.teacher_logits);
      ++step;
    }
  }
  baseline_equal = baseline_equal && oracle::flatten_params(state.student) ==
                                         oracle::flatten_params(r_off.state.student);

  // loss_inter with K=1 and the assigned prototype equals loss_intra.
  Rng rng(551);
  DistillConfig tiny;
  tiny.d_in = 5;
  tiny.hidden1 = 6;
  tiny.hidden2 = 6;
  tiny.embed_dim = 4;
  tiny.head_hidden = 6;
  tiny.proj_dim = 5;
  DistillState tstate = init_state(tiny, rng);
  double worst = 0;
  for (int t = 0; t < 50; ++t) {
    Vec x(5), proto(4);
    for (auto& v : x) v = rng.next_gaussian();
    for (auto& v : proto) v = rng.next_gaussian();
    worst = std::max(worst, std::abs(loss_inter(tstate, {proto}, x) -
                                     loss_intra(tstate, proto, x)));
  }

  const bool ok = traces_equal && baseline_equal && worst <= 1e-12;
  return {ok, std::string("traces ") + (traces_equal ? "equal" : "DIFFER") + ", baseline " +
                  (baseline_equal ? "equal" : "DIFFERS") + ", |inter-intra|=" + fmt(worst)};
}

std::pair<bool, std::string> criterion6_end_to_end() {
  const auto start = std::chrono::steady_clock::now();
  int compact_wins = 0, knn_wins = 0;
  bool entropy_ok = true;
  const double entropy_floor = 0.1 * std::log(32.0);  // proj_dim = 32
  std::string details;

  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto ds = generate_synthetic(40, 30, 32, 2, 3.0, 2, 600 + seed);
    TrainConfig cfg;  // defaults: M=2 K=1 alpha=1 epochs=30 batch=32 lr=0.01
    cfg.seed = seed;
    const auto result = train(ds, cfg);

    const double initial = result.initial_compactness;
    const double final_c = result.metrics.back().compactness;
    if (final_c < initial) ++compact_wins;

    for (const auto& m : result.metrics) {
      if (!(m.teacher_entropy > entropy_floor)) entropy_ok = false;
    }

    Rng init_rng = derive_stream(cfg.seed, "init");
    DistillConfig mcfg = cfg.model;
    mcfg.d_in = ds.d_in;
    const DistillState random_state = init_state(mcfg, init_rng);
    const double acc_random = cross_validated_eval(ds, random_state, 5, 5, 42).accuracy_mean;
    const double acc_trained = cross_validated_eval(ds, result.state, 5, 5, 42).accuracy_mean;
    if (acc_trained > acc_random) ++knn_wins;
    details += fmt(acc_random) + "->" + fmt(acc_trained) + " ";
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const bool ok = compact_wins >= 4 && knn_wins >= 4 && entropy_ok && secs < 300.0;
  return {ok, "compactness " + std::to_string(compact_wins) + "/5, knn " +
                  std::to_string(knn_wins) + "/5 [" + details + "], entropy " +
                  (entropy_ok ? "ok" : "VIOLATED") + ", " + fmt(secs) + "s"};
}

std::pair<bool, std::string> criterion7_ablation_parity() {
  const auto ds = generate_synthetic(40, 30, 32, 2, 3.0, 2, 700);
  std::vector<TrainConfig> configs;
  {
    TrainConfig global_clustering;  // Table-2 axis: global vs slide-level
    global_clustering.intra_mode = IntraMode::global;
    global_clustering.inter_mode = InterMode::off;
    configs.push_back(global_clustering);
    TrainConfig slide_clustering = global_clustering;
    slide_clustering.intra_mode = IntraMode::slide;
    configs.push_back(slide_clustering);

    TrainConfig region_inter;  // axis: region vs prototype inter-distillation
    region_inter.intra_mode = IntraMode::off;
    region_inter.inter_mode = InterMode::region;
    configs.push_back(region_inter);
    TrainConfig proto_inter = region_inter;
    proto_inter.inter_mode = InterMode::prototype;
    configs.push_back(proto_inter);

    for (int M : {2, 3, 4}) {
      TrainConfig c;
      c.M = M;
      configs.push_back(c);
    }
    for (int K : {1, 2, 3}) {
      TrainConfig c;
      c.K = K;
      configs.push_back(c);
    }
  }
  int completed = 0;
  for (auto& cfg : configs) {
    cfg.epochs = 3;  // smoke cadence
    cfg.seed = 7;
    const auto result = train(ds, cfg);
    bool good = result.metrics.size() == 3;
    for (const auto& m : result.metrics) {
      good = good && std::isfinite(m.loss_total) && std::isfinite(m.loss_self) &&
             std::isfinite(m.teacher_entropy);
    }
    if (good) ++completed;
  }
  const bool ok = completed == static_cast<int>(configs.size());
  return {ok, std::to_string(completed) + "/" + std::to_string(configs.size()) +
                  " configurations completed"};
}

std::pair<bool, std::string> criterion8_eval_oracles() {
  Rng rng(808);
  bool auc_exact = true;
  for (int t = 0; t < 1000; ++t) {
    const int n = 4 + static_cast<int>(rng.next_below(30));
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    bool has0 = false, has1 = false;
    for (int i = 0; i < n; ++i) {
      scores[i] = std::floor(rng.next_double() * 6) / 6.0;
      labels[i] = static_cast<int>(rng.next_below(2));
      (labels[i] ? has1 : has0) = true;
    }
    if (!has0 || !has1) {
      labels[0] = 0;
      labels[1] = 1;
    }
    if (auc(scores, labels) != oracle::pairwise_auc(scores, labels)) auc_exact = false;
  }

  bool knn_exact = true;
  for (int t = 0; t < 200; ++t) {
    const int n = 6 + static_cast<int>(rng.next_below(18));
    std::vector<Vec> train_v(n, Vec(4));
    std::vector<int> labels(n);
    for (int i = 0; i < n; ++i) {
      for (auto& v : train_v[i]) v = rng.next_gaussian();
      labels[i] = static_cast<int>(rng.next_below(2));
    }
    Vec q(4);
    for (auto& v : q) v = rng.next_gaussian();
    const int k = 1 + static_cast<int>(rng.next_below(std::uint64_t(n)));
    const auto pred = knn_classify(train_v, labels, {q}, k);
    if (pred[0].label != oracle::full_sort_knn_label(train_v, labels, q, k)) knn_exact = false;
  }

  const auto ds = generate_synthetic(24, 10, 8, 2, 10.0, 2, 888);
  Rng init_rng(8);
  DistillConfig mcfg;
  mcfg.d_in = 8;
  mcfg.hidden1 = 8;
  mcfg.hidden2 = 8;
  mcfg.embed_dim = 6;
  mcfg.head_hidden = 8;
  mcfg.proj_dim = 8;
  const DistillState state = init_state(mcfg, init_rng);
  const auto report = cross_validated_eval(ds, state, 4, 3, 9);
  const bool separable_perfect =
      report.accuracy_mean == 1.0 && report.auc_mean == 1.0;

  const bool ok = auc_exact && knn_exact && separable_perfect;
  return {ok, std::string("auc ") + (auc_exact ? "exact" : "DIFFERS") + ", knn " +
                  (knn_exact ? "exact" : "DIFFERS") + ", separable acc=" +
                  fmt(report.accuracy_mean) + " auc=" + fmt(report.auc_mean)};
}

std::string file_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::pair<bool, std::string> criterion9_determinism() {
  const fs::path base = fs::temp_directory_path() / "slpd_acceptance";
  fs::remove_all(base);
  fs::create_directories(base);
  auto cli = [&](const std::string& args) {
    const std::string cmd = g_cli + " " + args + " >/dev/null 2>&1";
    const int ret = std::system(cmd.c_str());
    return ret == -1 ? -1 : WEXITSTATUS(ret);
  };

  const fs::path data = base / "data";
  if (cli("synth --slides 40 --regions 30 --dim 32 --classes 2 --separation 3 "
          "--clusters 2 --seed 1 --out " + data.string()) != 0) {
    return {false, "synth failed"};
  }
  const std::string train_flags =
      " --data " + data.string() + " --epochs 6 --seed 4 --out ";
  if (cli("train --workers 1" + train_flags + (base / "run1").string()) != 0 ||
      cli("train --workers 1" + train_flags + (base / "run2").string()) != 0 ||
      cli("train --workers 4" + train_flags + (base / "run4").string()) != 0) {
    return {false, "train run failed"};
  }
  const bool repeat_ok =
      file_bytes(base / "run1/checkpoint.slpc") == file_bytes(base / "run2/checkpoint.slpc") &&
      file_bytes(base / "run1/metrics.jsonl") == file_bytes(base / "run2/metrics.jsonl");
  const bool workers_ok =
      file_bytes(base / "run1/checkpoint.slpc") == file_bytes(base / "run4/checkpoint.slpc") &&
      file_bytes(base / "run1/metrics.jsonl") == file_bytes(base / "run4/metrics.jsonl");
  const bool ok = repeat_ok && workers_ok;
  return {ok, std::string("rerun ") + (repeat_ok ? "identical" : "DIFFERS") +
                  ", workers 1 vs 4 " + (workers_ok ? "identical" : "DIFFER")};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: acceptance_tests <path-to-slpd-cli>" << std::endl;
    return 2;
  }
  g_cli = argv[1];

  run_criterion(1, "optimal matching equals brute force over all permutations",
                criterion1_matching_oracle);
  run_criterion(2, "set-distance symmetry, bounds, self-similarity, rescaling",
                criterion2_set_distance_invariants);
  run_criterion(3, "k-means descent and exhaustive-partition optimality",
                criterion3_kmeans);
  run_criterion(4, "analytic gradients match finite differences; stop-gradient holds",
                criterion4_gradient_fidelity);
  run_criterion(5, "configuration reductions are exact", criterion5_reductions);
  run_criterion(6, "desk-scale training improves compactness and KNN without collapse",
                criterion6_end_to_end);
  run_criterion(7, "every ablation axis runs to completion", criterion7_ablation_parity);
  run_criterion(8, "evaluation oracles: AUC counting, full-sort KNN, separable data",
                criterion8_eval_oracles);
  run_criterion(9, "training is byte-deterministic across reruns and worker counts",
                criterion9_determinism);

  if (g_failures > 0) {
    std::cout << g_failures << " criterion(s) failed" << std::endl;
    return 1;
  }
  std::cout << "all criteria passed" << std::endl;
  return 0;
}
