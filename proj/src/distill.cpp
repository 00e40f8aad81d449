#include "slpd/distill.hpp"

#include <algorithm>
#include <cmath>

#include "slpd/errors.hpp"
#include "slpd/parallel.hpp"

namespace slpd {

Activation activation_from_string(const std::string& s) {
  if (s == "identity") return Activation::identity;
  if (s == "tanh") return Activation::tanh_act;
  if (s == "relu") return Activation::relu;
  throw UsageError("unknown activation: " + s);
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::tanh_act: return "tanh";
    case Activation::relu: return "relu";
  }
  return "?";
}

namespace {

double apply_act(Activation a, double x) {
  switch (a) {
    case Activation::identity: return x;
    case Activation::tanh_act: return std::tanh(x);
    case Activation::relu: return x > 0 ? x : 0.0;
  }
  return x;
}

// Derivative in terms of pre-activation and the cached post-activation.
double act_grad(Activation a, double pre, double post) {
  switch (a) {
    case Activation::identity: return 1.0;
    case Activation::tanh_act: return 1.0 - post * post;
    case Activation::relu: return pre > 0 ? 1.0 : 0.0;
  }
  (void)pre;
  return 1.0;
}

Vec softmax(Vec logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0;
  for (auto& v : logits) {
    v = std::exp(v - m);
    sum += v;
  }
  for (auto& v : logits) v /= sum;
  return logits;
}

}  // namespace

Mlp make_mlp(const std::vector<std::size_t>& dims, Activation act) {
  if (dims.size() < 2) throw UsageError("make_mlp: need at least input and output dims");
  Mlp m;
  m.act = act;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    LinearLayer layer;
    layer.in = dims[i];
    layer.out = dims[i + 1];
    layer.w.assign(layer.in * layer.out, 0.0);
    layer.b.assign(layer.out, 0.0);
    m.layers.push_back(std::move(layer));
  }
  return m;
}

Mlp zeros_like(const Mlp& m) {
  Mlp z = m;
  for (auto& layer : z.layers) {
    std::fill(layer.w.begin(), layer.w.end(), 0.0);
    std::fill(layer.b.begin(), layer.b.end(), 0.0);
  }
  return z;
}

NetPair zeros_like(const NetPair& n) {
  return {zeros_like(n.encoder), zeros_like(n.head)};
}

std::size_t param_count(const NetPair& n) {
  std::size_t c = 0;
  visit_params(n, [&](const double&) { ++c; });
  return c;
}

Vec mlp_forward(const Mlp& m, std::span<const double> x) {
  MlpCache cache;
  return mlp_forward_cached(m, x, cache);
}

Vec mlp_forward_cached(const Mlp& m, std::span<const double> x, MlpCache& cache) {
  if (x.size() != m.in_dim()) {
    throw DataError("mlp_forward: input size " + std::to_string(x.size()) +
                    " does not match layer input " + std::to_string(m.in_dim()));
  }
  cache.inputs.clear();
  cache.pre.clear();
  Vec cur(x.begin(), x.end());
  for (std::size_t li = 0; li < m.layers.size(); ++li) {
    const auto& layer = m.layers[li];
    cache.inputs.push_back(cur);
    Vec out(layer.out);
    for (std::size_t o = 0; o < layer.out; ++o) {
      double s = layer.b[o];
      const double* wrow = &layer.w[o * layer.in];
      for (std::size_t k = 0; k < layer.in; ++k) s += wrow[k] * cur[k];
      out[o] = s;
    }
    cache.pre.push_back(out);
    if (li + 1 < m.layers.size()) {
      for (auto& v : out) v = apply_act(m.act, v);
    }
    cur = std::move(out);
  }
  for (double v : cur) {
    if (!std::isfinite(v)) throw NumericError("mlp_forward: non-finite output");
  }
  return cur;
}

Vec mlp_backward(const Mlp& m, const MlpCache& cache, std::span<const double> d_out,
                 Mlp& grads) {
  Vec d(d_out.begin(), d_out.end());
  for (std::size_t li = m.layers.size(); li-- > 0;) {
    const auto& layer = m.layers[li];
    auto& glayer = grads.layers[li];
    // d currently holds dL/d(activated output of layer li); convert to
    // dL/d(pre-activation). The final layer has no activation.
    if (li + 1 < m.layers.size()) {
      for (std::size_t o = 0; o < layer.out; ++o) {
        const double post = apply_act(m.act, cache.pre[li][o]);
        d[o] *= act_grad(m.act, cache.pre[li][o], post);
      }
    }
    const Vec& input = cache.inputs[li];
    Vec d_in(layer.in, 0.0);
    for (std::size_t o = 0; o < layer.out; ++o) {
      glayer.b[o] += d[o];
      double* gw = &glayer.w[o * layer.in];
      const double* wrow = &layer.w[o * layer.in];
      for (std::size_t k = 0; k < layer.in; ++k) {
        gw[k] += d[o] * input[k];
        d_in[k] += wrow[k] * d[o];
      }
    }
    d = std::move(d_in);
  }
  return d;
}

DistillState init_state(const DistillConfig& cfg, Rng& rng) {
  if (!(cfg.tau_teacher < cfg.tau_student)) {
    throw UsageError("init_state: tau_teacher must be < tau_student (sharpening)");
  }
  DistillState state;
  state.student.encoder =
      make_mlp({cfg.d_in, cfg.hidden1, cfg.hidden2, cfg.embed_dim}, cfg.activation);
  state.student.head = make_mlp({cfg.embed_dim, cfg.head_hidden, cfg.proj_dim}, cfg.activation);
  auto init_mlp = [&](Mlp& m) {
    for (auto& layer : m.layers) {
      const double scale = std::sqrt(2.0 / static_cast<double>(layer.in + layer.out));
      for (auto& w : layer.w) w = scale * rng.next_gaussian();
      // Biases stay zero.
    }
  };
  init_mlp(state.student.encoder);
  init_mlp(state.student.head);
  state.teacher = state.student;
  state.center.assign(cfg.proj_dim, 0.0);
  state.tau_student = cfg.tau_student;
  state.tau_teacher = cfg.tau_teacher;
  state.ema_momentum = cfg.ema_momentum;
  state.center_momentum = cfg.center_momentum;
  return state;
}

Vec encode(const Mlp& encoder, std::span<const double> x) {
  return mlp_forward(encoder, x);
}

Vec project_teacher(const DistillState& state, std::span<const double> z) {
  Vec logits = mlp_forward(state.teacher.head, z);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    logits[i] = (logits[i] - state.center[i]) / state.tau_teacher;
  }
  return softmax(std::move(logits));
}

Vec project_student(const DistillState& state, std::span<const double> z) {
  Vec logits = mlp_forward(state.student.head, z);
  for (auto& v : logits) v /= state.tau_student;
  return softmax(std::move(logits));
}

double cross_entropy(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw DataError("cross_entropy: dimension mismatch");
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] != 0.0) s -= p[i] * std::log(q[i]);
  }
  return s;
}

double loss_self(const DistillState& state, std::span<const double> view1,
                 std::span<const double> view2) {
  const Vec t1 = project_teacher(state, encode(state.teacher.encoder, view1));
  const Vec t2 = project_teacher(state, encode(state.teacher.encoder, view2));
  const Vec s1 = project_student(state, encode(state.student.encoder, view1));
  const Vec s2 = project_student(state, encode(state.student.encoder, view2));
  return 0.5 * (cross_entropy(t1, s2) + cross_entropy(t2, s1));
}

double loss_intra(const DistillState& state, std::span<const double> prototype,
                  std::span<const double> x_view) {
  const Vec target = project_teacher(state, prototype);
  const Vec s = project_student(state, encode(state.student.encoder, x_view));
  return cross_entropy(target, s);
}

double loss_inter(const DistillState& state, const std::vector<Vec>& matched_prototypes,
                  std::span<const double> x_view) {
  if (matched_prototypes.empty()) {
    throw DataError("loss_inter: empty matched prototype list");
  }
  const Vec s = project_student(state, encode(state.student.encoder, x_view));
  double sum = 0;
  for (const auto& proto : matched_prototypes) {
    sum += cross_entropy(project_teacher(state, proto), s);
  }
  return sum / static_cast<double>(matched_prototypes.size());
}

double loss_total(const LossWeights& w, double self_loss, double intra_loss,
                  double inter_loss) {
  return self_loss + w.alpha1 * intra_loss + w.alpha2 * inter_loss;
}

namespace {

// Forward pass and loss bookkeeping for one batch item, shared by the
// forward-only and gradient paths so both produce identical values.
struct ItemForward {
  MlpCache enc1, enc2, head1, head2;  // student caches
  Vec q1, q2;                         // student distributions per view
  Vec t1, t2;                         // teacher view distributions
  Vec teacher_logits1, teacher_logits2;
  Vec intra_target;                   // teacher-projected prototype
  std::vector<Vec> inter_targets;
  double self_loss = 0, intra_loss = 0, inter_loss = 0, total = 0;
  bool has_intra = false, has_inter = false;
};

ItemForward item_forward(const DistillState& state, const LossWeights& weights,
                         const BatchItem& item) {
  ItemForward f;
  // Teacher side: constants of the graph.
  const Vec tz1 = mlp_forward(state.teacher.encoder, item.view1);
  const Vec tz2 = mlp_forward(state.teacher.encoder, item.view2);
  f.teacher_logits1 = mlp_forward(state.teacher.head, tz1);
  f.teacher_logits2 = mlp_forward(state.teacher.head, tz2);
  auto sharpen = [&](const Vec& logits) {
    Vec v(logits.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = (logits[i] - state.center[i]) / state.tau_teacher;
    }
    return softmax(std::move(v));
  };
  f.t1 = sharpen(f.teacher_logits1);
  f.t2 = sharpen(f.teacher_logits2);

  // Student side, cached for the backward pass.
  const Vec sz1 = mlp_forward_cached(state.student.encoder, item.view1, f.enc1);
  const Vec sz2 = mlp_forward_cached(state.student.encoder, item.view2, f.enc2);
  Vec l1 = mlp_forward_cached(state.student.head, sz1, f.head1);
  Vec l2 = mlp_forward_cached(state.student.head, sz2, f.head2);
  Vec scaled1(l1.size()), scaled2(l2.size());
  for (std::size_t i = 0; i < l1.size(); ++i) {
    scaled1[i] = l1[i] / state.tau_student;
    scaled2[i] = l2[i] / state.tau_student;
  }
  f.q1 = softmax(std::move(scaled1));
  f.q2 = softmax(std::move(scaled2));

  f.self_loss = 0.5 * (cross_entropy(f.t1, f.q2) + cross_entropy(f.t2, f.q1));
  f.total = f.self_loss;

  if (item.intra_prototype) {
    f.has_intra = true;
    f.intra_target = project_teacher(state, *item.intra_prototype);
    f.intra_loss = 0.5 * (cross_entropy(f.intra_target, f.q1) +
                          cross_entropy(f.intra_target, f.q2));
    f.total += weights.alpha1 * f.intra_loss;
  }
  if (!item.inter_targets.empty()) {
    f.has_inter = true;
    double sum = 0;
    f.inter_targets.reserve(item.inter_targets.size());
    for (const auto& proto : item.inter_targets) {
      Vec target = project_teacher(state, proto);
      sum += 0.5 * (cross_entropy(target, f.q1) + cross_entropy(target, f.q2));
      f.inter_targets.push_back(std::move(target));
    }
    f.inter_loss = sum / static_cast<double>(item.inter_targets.size());
    f.total += weights.alpha2 * f.inter_loss;
  }
  return f;
}

void accumulate_losses(BatchLosses& acc, const ItemForward& f) {
  acc.self_loss += f.self_loss;
  acc.total += f.total;
  if (f.has_intra) {
    acc.intra_loss += f.intra_loss;
    ++acc.n_intra;
  }
  if (f.has_inter) {
    acc.inter_loss += f.inter_loss;
    ++acc.n_inter;
  }
}

void finalize_losses(BatchLosses& acc, std::size_t batch_size) {
  acc.self_loss /= static_cast<double>(batch_size);
  acc.total /= static_cast<double>(batch_size);
  if (acc.n_intra > 0) acc.intra_loss /= static_cast<double>(acc.n_intra);
  if (acc.n_inter > 0) acc.inter_loss /= static_cast<double>(acc.n_inter);
}

}  // namespace

BatchLosses batch_losses(const DistillState& state, const LossWeights& weights,
                         std::span<const BatchItem> batch) {
  if (batch.empty()) throw DataError("batch_losses: empty minibatch");
  BatchLosses acc;
  for (const auto& item : batch) accumulate_losses(acc, item_forward(state, weights, item));
  finalize_losses(acc, batch.size());
  return acc;
}

GradResult gradients(const DistillState& state, const LossWeights& weights,
                     std::span<const BatchItem> batch, int workers) {
  if (batch.empty()) throw DataError("gradients: empty minibatch");
  const std::size_t B = batch.size();
  const double tau = state.tau_student;

  struct ItemOut {
    NetPair grads;
    ItemForward fwd;
  };
  std::vector<ItemOut> outs(B);

  parallel_for(B, workers, [&](std::size_t i) {
    ItemOut& out = outs[i];
    out.fwd = item_forward(state, weights, batch[i]);
    out.grads = zeros_like(state.student);
    const ItemForward& f = out.fwd;
    const std::size_t P = f.q1.size();

    // dL/d(student head logits) per view. Each cross-entropy term
    // H(p, softmax(l / tau)) contributes w * (q - p) / tau; collect the
    // target mix S and the total coefficient C so dL/dl = (C q - S) / tau.
    double coef = 0.5;  // self term hitting this view
    Vec mix1(P, 0.0), mix2(P, 0.0);
    for (std::size_t j = 0; j < P; ++j) {
      mix1[j] = 0.5 * f.t2[j];  // H(t2, q1)
      mix2[j] = 0.5 * f.t1[j];  // H(t1, q2)
    }
    if (f.has_intra && weights.alpha1 != 0.0) {
      coef += 0.5 * weights.alpha1;
      for (std::size_t j = 0; j < P; ++j) {
        mix1[j] += 0.5 * weights.alpha1 * f.intra_target[j];
        mix2[j] += 0.5 * weights.alpha1 * f.intra_target[j];
      }
    }
    if (f.has_inter && weights.alpha2 != 0.0) {
      const double wk = 0.5 * weights.alpha2 / static_cast<double>(f.inter_targets.size());
      coef += 0.5 * weights.alpha2;
      for (const auto& target : f.inter_targets) {
        for (std::size_t j = 0; j < P; ++j) {
          mix1[j] += wk * target[j];
          mix2[j] += wk * target[j];
        }
      }
    }

    Vec dl1(P), dl2(P);
    for (std::size_t j = 0; j < P; ++j) {
      dl1[j] = (coef * f.q1[j] - mix1[j]) / tau;
      dl2[j] = (coef * f.q2[j] - mix2[j]) / tau;
    }
    const Vec dz1 = mlp_backward(state.student.head, f.head1, dl1, out.grads.head);
    const Vec dz2 = mlp_backward(state.student.head, f.head2, dl2, out.grads.head);
    mlp_backward(state.student.encoder, f.enc1, dz1, out.grads.encoder);
    mlp_backward(state.student.encoder, f.enc2, dz2, out.grads.encoder);
  });

  GradResult res;
  res.grads = zeros_like(state.student);
  res.teacher_prob_sum.assign(outs.front().fwd.q1.size(), 0.0);
  res.teacher_logits.reserve(2 * B);
  // Fixed-order reduction: identical results for any worker count.
  for (std::size_t i = 0; i < B; ++i) {
    const ItemForward& f = outs[i].fwd;
    accumulate_losses(res.losses, f);
    auto add = [](Mlp& dst, const Mlp& src) {
      for (std::size_t li = 0; li < dst.layers.size(); ++li) {
        for (std::size_t k = 0; k < dst.layers[li].w.size(); ++k) {
          dst.layers[li].w[k] += src.layers[li].w[k];
        }
        for (std::size_t k = 0; k < dst.layers[li].b.size(); ++k) {
          dst.layers[li].b[k] += src.layers[li].b[k];
        }
      }
    };
    add(res.grads.encoder, outs[i].grads.encoder);
    add(res.grads.head, outs[i].grads.head);
    res.teacher_logits.push_back(f.teacher_logits1);
    res.teacher_logits.push_back(f.teacher_logits2);
    for (std::size_t j = 0; j < res.teacher_prob_sum.size(); ++j) {
      res.teacher_prob_sum[j] += f.t1[j] + f.t2[j];
    }
  }
  res.teacher_prob_count = 2 * B;
  finalize_losses(res.losses, B);
  const double inv_b = 1.0 / static_cast<double>(B);
  visit_params(res.grads, [&](double& g) { g *= inv_b; });
  return res;
}

void sgd_step(NetPair& params, const NetPair& grads, NetPair& velocity, double lr,
              double momentum) {
  if (!(lr >= 0)) throw UsageError("sgd_step: lr must be >= 0");
  if (momentum < 0 || momentum >= 1) throw UsageError("sgd_step: momentum must be in [0, 1)");
  auto step = [&](Mlp& p, const Mlp& g, Mlp& v) {
    if (p.layers.size() != g.layers.size() || p.layers.size() != v.layers.size()) {
      throw DataError("sgd_step: shape mismatch");
    }
    for (std::size_t li = 0; li < p.layers.size(); ++li) {
      auto& pl = p.layers[li];
      const auto& gl = g.layers[li];
      auto& vl = v.layers[li];
      if (pl.w.size() != gl.w.size() || pl.b.size() != gl.b.size() ||
          pl.w.size() != vl.w.size() || pl.b.size() != vl.b.size()) {
        throw DataError("sgd_step: shape mismatch");
      }
      for (std::size_t k = 0; k < pl.w.size(); ++k) {
        vl.w[k] = momentum * vl.w[k] + gl.w[k];
        pl.w[k] -= lr * vl.w[k];
      }
      for (std::size_t k = 0; k < pl.b.size(); ++k) {
        vl.b[k] = momentum * vl.b[k] + gl.b[k];
        pl.b[k] -= lr * vl.b[k];
      }
    }
  };
  step(params.encoder, grads.encoder, velocity.encoder);
  step(params.head, grads.head, velocity.head);
}

void ema_update(DistillState& state, double m) {
  if (m < 0 || m > 1) throw UsageError("ema_update: momentum must be in [0, 1]");
  auto blend = [m](Mlp& teacher, const Mlp& student) {
    for (std::size_t li = 0; li < teacher.layers.size(); ++li) {
      auto& tl = teacher.layers[li];
      const auto& sl = student.layers[li];
      for (std::size_t k = 0; k < tl.w.size(); ++k) tl.w[k] = m * tl.w[k] + (1 - m) * sl.w[k];
      for (std::size_t k = 0; k < tl.b.size(); ++k) tl.b[k] = m * tl.b[k] + (1 - m) * sl.b[k];
    }
  };
  blend(state.teacher.encoder, state.student.encoder);
  blend(state.teacher.head, state.student.head);
}

void update_center(DistillState& state, const std::vector<Vec>& batch_teacher_logits) {
  if (batch_teacher_logits.empty()) throw DataError("update_center: empty batch");
  Vec mean(state.center.size(), 0.0);
  for (const auto& logits : batch_teacher_logits) {
    if (logits.size() != mean.size()) throw DataError("update_center: dimension mismatch");
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += logits[i];
  }
  const double inv = 1.0 / static_cast<double>(batch_teacher_logits.size());
  const double cm = state.center_momentum;
  for (std::size_t i = 0; i < mean.size(); ++i) {
    state.center[i] = cm * state.center[i] + (1 - cm) * (mean[i] * inv);
  }
}

}  // namespace slpd
