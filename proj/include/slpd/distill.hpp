#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "slpd/rng.hpp"

namespace slpd {

using Vec = std::vector<double>;

enum class Activation { identity, tanh_act, relu };

Activation activation_from_string(const std::string& s);
std::string to_string(Activation a);

struct LinearLayer {
  std::size_t in = 0, out = 0;
  std::vector<double> w;  // row-major, out x in
  std::vector<double> b;  // out
};

/// Small fully-connected network; the activation is applied after every
/// layer except the last. Used both for the encoder (d_in -> D) and the
/// projection head (D -> P), and doubles as the container for gradients and
/// optimizer velocity since those share its shape.
struct Mlp {
  std::vector<LinearLayer> layers;
  Activation act = Activation::tanh_act;

  std::size_t in_dim() const { return layers.empty() ? 0 : layers.front().in; }
  std::size_t out_dim() const { return layers.empty() ? 0 : layers.back().out; }
};

Mlp make_mlp(const std::vector<std::size_t>& dims, Activation act);
Mlp zeros_like(const Mlp& m);

/// Deterministic forward pass. Throws DataError on a shape mismatch,
/// NumericError if the output is non-finite.
Vec mlp_forward(const Mlp& m, std::span<const double> x);

struct MlpCache {
  std::vector<Vec> inputs;  // input to each layer (post-activation of previous)
  std::vector<Vec> pre;     // pre-activation output of each layer
};

Vec mlp_forward_cached(const Mlp& m, std::span<const double> x, MlpCache& cache);

/// Accumulates dL/dparams into grads (same shape as m) given dL/doutput;
/// returns dL/dinput.
Vec mlp_backward(const Mlp& m, const MlpCache& cache, std::span<const double> d_out,
                 Mlp& grads);

/// Visits every parameter of an Mlp in a fixed order (per layer: weights
/// row-major, then biases). The single traversal order keeps SGD, EMA,
/// checkpoints and finite-difference tests consistent.
template <class F>
void visit_params(Mlp& m, F&& f) {
  for (auto& layer : m.layers) {
    for (auto& v : layer.w) f(v);
    for (auto& v : layer.b) f(v);
  }
}
template <class F>
void visit_params(const Mlp& m, F&& f) {
  for (const auto& layer : m.layers) {
    for (const auto& v : layer.w) f(v);
    for (const auto& v : layer.b) f(v);
  }
}

/// Encoder + projection head of one network (teacher or student).
struct NetPair {
  Mlp encoder;
  Mlp head;
};

template <class F>
void visit_params(NetPair& n, F&& f) {
  visit_params(n.encoder, f);
  visit_params(n.head, f);
}
template <class F>
void visit_params(const NetPair& n, F&& f) {
  visit_params(n.encoder, f);
  visit_params(n.head, f);
}

std::size_t param_count(const NetPair& n);
NetPair zeros_like(const NetPair& n);

struct DistillConfig {
  std::size_t d_in = 32;
  std::size_t hidden1 = 64;
  std::size_t hidden2 = 64;
  std::size_t embed_dim = 16;   // D
  std::size_t head_hidden = 64;
  std::size_t proj_dim = 32;    // P
  Activation activation = Activation::tanh_act;
  double tau_student = 0.1;
  double tau_teacher = 0.04;    // sharper than the student
  double ema_momentum = 0.996;
  double center_momentum = 0.9;
};

/// Teacher-student pair with the centering vector and temperatures. The
/// teacher is a gradient-free EMA copy of the student.
struct DistillState {
  NetPair student;
  NetPair teacher;
  Vec center;  // proj_dim, applied to teacher logits only
  double tau_student = 0.1;
  double tau_teacher = 0.04;
  double ema_momentum = 0.996;
  double center_momentum = 0.9;
};

/// Random student init (scaled Gaussian weights, zero biases); teacher
/// starts as an exact copy and center at zero.
DistillState init_state(const DistillConfig& cfg, Rng& rng);

Vec encode(const Mlp& encoder, std::span<const double> x);

/// softmax((head_t(z) - center) / tau_teacher): the sharpened, centered
/// teacher distribution. Strictly positive, sums to 1.
Vec project_teacher(const DistillState& state, std::span<const double> z);

/// softmax(head_s(z) / tau_student).
Vec project_student(const DistillState& state, std::span<const double> z);

/// -sum p_i log q_i. Terms with p_i == 0 contribute zero.
double cross_entropy(std::span<const double> p, std::span<const double> q);

/// Symmetrized two-view self-distillation:
/// 0.5 * [H(t(v1), s(v2)) + H(t(v2), s(v1))]. Teacher side carries no
/// gradient. Views are raw d_in inputs.
double loss_self(const DistillState& state, std::span<const double> view1,
                 std::span<const double> view2);

/// Intra-slide distillation for one student view: the assigned prototype
/// (a D-vector) goes through the teacher head with centering/sharpening and
/// acts as a constant target.
double loss_intra(const DistillState& state, std::span<const double> prototype,
                  std::span<const double> x_view);

/// Inter-slide distillation for one student view: mean cross-entropy against
/// the K matched cross-slide prototypes. Throws DataError on an empty list.
double loss_inter(const DistillState& state, const std::vector<Vec>& matched_prototypes,
                  std::span<const double> x_view);

struct LossWeights {
  double alpha1 = 1.0;  // intra
  double alpha2 = 1.0;  // inter
};

double loss_total(const LossWeights& w, double self_loss, double intra_loss,
                  double inter_loss);

/// One region of a minibatch: its two augmented views plus the prototype
/// targets selected by the trainer (absent targets mean the corresponding
/// loss is skipped for this item).
struct BatchItem {
  Vec view1;
  Vec view2;
  std::optional<Vec> intra_prototype;
  std::vector<Vec> inter_targets;
};

struct BatchLosses {
  double self_loss = 0.0;
  double intra_loss = 0.0;  // mean over items that carry a prototype
  double inter_loss = 0.0;  // mean over items that carry inter targets
  double total = 0.0;       // batch mean of per-item weighted totals
  std::size_t n_intra = 0;
  std::size_t n_inter = 0;
};

struct GradResult {
  NetPair grads;  // d total / d student params, batch mean
  BatchLosses losses;
  std::vector<Vec> teacher_logits;  // uncentered head outputs, two per item
  Vec teacher_prob_sum;             // sum of the teacher view distributions
  std::size_t teacher_prob_count = 0;
};

/// Exact analytic gradients of the batch-mean total loss with respect to
/// every student parameter. Teacher parameters, the center and prototypes
/// receive no gradient (they are constants of the graph). Items may be
/// processed in parallel; the reduction order is fixed, so results are
/// identical for any worker count. Per-item losses average both views for
/// the intra/inter terms.
GradResult gradients(const DistillState& state, const LossWeights& weights,
                     std::span<const BatchItem> batch, int workers = 0);

/// Forward-only value of the batch loss `gradients` differentiates; used by
/// finite-difference checks.
BatchLosses batch_losses(const DistillState& state, const LossWeights& weights,
                         std::span<const BatchItem> batch);

/// Classical momentum update: v = momentum * v + g; p -= lr * v.
void sgd_step(NetPair& params, const NetPair& grads, NetPair& velocity, double lr,
              double momentum);

/// teacher <- m * teacher + (1 - m) * student, every parameter.
void ema_update(DistillState& state, double m);

/// center <- cm * center + (1 - cm) * mean(batch teacher logits).
void update_center(DistillState& state, const std::vector<Vec>& batch_teacher_logits);

}  // namespace slpd
