#pragma once

// The two adversarial training loops: plain process approximation (one
// feed-forward generator, one discriminator) and the physics-informed
// variant (u/k generators, induced f/b generators, one discriminator per
// snapshot group).
//
// The per-sample loss graphs are built once per run; each training step
// only rebinds leaves and re-evaluates, eight samples per pass.  All
// random draws come from streams keyed by (seed, purpose, step, ...), so
// training is reproducible, independent of thread count, and bit-exactly
// resumable from a checkpoint.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <vector>

#include "sdegan/autodiff.hpp"
#include "sdegan/gan.hpp"
#include "sdegan/metrics.hpp"
#include "sdegan/nn.hpp"
#include "sdegan/parallel.hpp"
#include "sdegan/processes.hpp"
#include "sdegan/rng.hpp"

namespace sdegan::gan {

struct TrainConfig {
  std::int64_t steps = 0;
  int n_d = 5;
  double gp_lambda = 0.1;
  int batch = 0;  // 0 (or >= N) means the whole data set each step
  nn::AdamConfig adam{};
  std::vector<double> group_weights;  // a_t; empty means all 1
  bool shuffle_kf = false;
  LossKind loss = LossKind::kWganGp;
  std::uint64_t seed = 0;
  std::int64_t checkpoint_stride = 1000;
  int checkpoint_keep_last = 0;  // 0 keeps every checkpoint
  std::int64_t trace_stride = 500;
  std::int64_t w1_stride = 0;  // 0 disables the W1 monitor
  int w1_n = 1000;
  int threads = 1;

  void validate() const {
    if (steps < 0 || n_d < 1 || gp_lambda < 0.0 || batch < 0 ||
        checkpoint_stride < 1 || trace_stride < 1 || w1_stride < 0 ||
        w1_n < 1 || threads < 1)
      throw std::invalid_argument("TrainConfig: invalid field");
    for (double a : group_weights)
      if (!(a > 0.0))
        throw std::invalid_argument("TrainConfig: group weights must be > 0");
  }
};

struct Checkpoint {
  std::int64_t step = 0;
  GeneratorSet gen;
  DiscriminatorSet discs;
  std::vector<nn::AdamState> adam;  // [u, k, disc 0, disc 1, ...]
};

struct TraceRow {
  std::int64_t step = 0;
  std::vector<double> ld_train;  // per group
  std::vector<double> ld_val;    // per group; empty when no validation set
  double lg = 0.0;
};

struct W1Row {
  std::int64_t step = 0;
  double value = 0.0;
};

struct TrainState {
  std::int64_t step = 0;
  GeneratorSet gen;
  DiscriminatorSet discs;
  std::vector<nn::AdamState> adam;
  std::vector<TraceRow> traces;
  std::vector<W1Row> w1_trace;
  std::vector<Checkpoint> checkpoints;
};

namespace detail {

inline constexpr std::uint64_t kStreamDisc = 11;
inline constexpr std::uint64_t kStreamGen = 12;
inline constexpr std::uint64_t kStreamMonitor = 13;

enum class TapeKind { kDirectU, kDirectK, kInducedF };

struct Slot {
  TapeKind kind;
  double x;
};

constexpr int kLanes = 64;
using Ws = ad::Workspace<kLanes>;

// One evaluation program: its own graph (so the value pass stays compact
// in cache even when a gradient emission would triple the node count),
// leaves, plan and per-worker lane buffers.
struct TapeSide {
  ad::Graph g;
  GenLeaves leaves;
  ad::NodeId out = ad::kNoNode;
  ad::NodeId seed = ad::kNoNode;           // gradient side only
  std::vector<ad::NodeId> grad_u, grad_k;  // d(out*seed)/d(theta)
  ad::Plan plan;
  std::vector<std::unique_ptr<Ws>> ws;  // one per worker
};

struct FieldTape {
  TapeSide value;
  TapeSide grad;
};

struct DiscTape {
  ad::Graph g;
  nn::MlpLeaves rho;
  std::vector<ad::NodeId> in_fake, in_real, in_xhat;
  ad::NodeId ld = ad::kNoNode;       // per-sample discriminator loss
  ad::NodeId gen_obj = ad::kNoNode;  // per-sample generator objective
  std::vector<ad::NodeId> grad_rho, grad_fake;
  ad::Plan disc_plan, gen_plan;
  std::vector<std::unique_ptr<Ws>> ws;
};

class Engine {
 public:
  Engine(TrainState& state,
         std::span<const proc::SnapshotGroup> groups,
         std::span<const proc::SnapshotGroup> validation,
         const TrainConfig& cfg, bool physics)
      : state_(state),
        groups_(groups.begin(), groups.end()),
        val_(validation.begin(), validation.end()),
        cfg_(cfg),
        physics_(physics) {
    cfg_.validate();
    if (groups_.empty()) throw std::invalid_argument("train: no data groups");
    if (!val_.empty() && val_.size() != groups_.size())
      throw std::invalid_argument("train: validation group count mismatch");
    if (state_.discs.nets.size() != groups_.size())
      throw std::invalid_argument("train: need one discriminator per group");
    weights_ = cfg_.group_weights;
    if (weights_.empty()) weights_.assign(groups_.size(), 1.0);
    if (weights_.size() != groups_.size())
      throw std::invalid_argument("train: group weight count mismatch");

    build_programs();
    build_field_tapes();
    build_disc_tapes();
    bind_generator_params();
    for (std::size_t t = 0; t < groups_.size(); ++t) bind_disc_params(int(t));

    if (state_.adam.empty()) {
      state_.adam.emplace_back(state_.gen.u_net.values.size());
      state_.adam.emplace_back(state_.gen.k_net.values.size());
      for (const auto& d : state_.discs.nets)
        state_.adam.emplace_back(d.values.size());
    }
  }

  void run(std::int64_t target_steps) {
    if (target_steps < state_.step)
      throw std::invalid_argument("train: target before current step");
    if (state_.step == 0) {
      record_checkpoint();
      record_monitors();
    }
    while (state_.step < target_steps) {
      const std::int64_t step = state_.step + 1;
      discriminator_phase(step);
      generator_phase(step);
      state_.step = step;
      const bool last = step == target_steps;
      if (step % cfg_.checkpoint_stride == 0 || last) record_checkpoint();
      if (step % cfg_.trace_stride == 0 || last) record_trace();
      if (cfg_.w1_stride > 0 && (step % cfg_.w1_stride == 0 || last))
        record_w1();
    }
  }

  // Generated snapshot rows for group t (used by monitors and tests).
  metrics::PointCloud generate_rows(int t, const std::vector<double>& xi,
                                    int n) {
    metrics::PointCloud cloud(n, int(programs_[t].size()));
    eval_rows(t, xi, n, cloud.data.data());
    return cloud;
  }

 private:
  static constexpr int chunk_count(int n) { return (n + kLanes - 1) / kLanes; }

  void build_programs() {
    programs_.resize(groups_.size());
    for (std::size_t t = 0; t < groups_.size(); ++t) {
      const proc::SensorLayout& lay = groups_[t].layout;
      if (!physics_ && (lay.n_k() || lay.n_u() || lay.n_b()))
        throw std::invalid_argument(
            "process trainer expects f-sensor-only layouts");
      auto& prog = programs_[t];
      for (double x : lay.k) prog.push_back({TapeKind::kDirectK, x});
      for (double x : lay.u) prog.push_back({TapeKind::kDirectU, x});
      for (double x : lay.f)
        prog.push_back({physics_ ? TapeKind::kInducedF : TapeKind::kDirectU, x});
      for (double x : lay.b) prog.push_back({TapeKind::kDirectU, x});
      if (!val_.empty()) {
        if (val_[t].width() != groups_[t].width())
          throw std::invalid_argument("validation layout width mismatch");
      }
    }
  }

  bool kind_used(TapeKind kind) const {
    for (const auto& prog : programs_)
      for (const Slot& s : prog)
        if (s.kind == kind) return true;
    return false;
  }

  void build_side(TapeSide& side, TapeKind kind, bool with_grad) {
    const int nd = state_.gen.noise_dim;
    side.leaves.x = ad::kNoNode;
    if (kind == TapeKind::kInducedF) {
      side.leaves = make_gen_leaves(side.g, state_.gen.u_net.spec,
                                    state_.gen.k_net.spec, nd);
      side.out = build_induced_f(side.g, side.leaves).f;
    } else {
      const bool is_u = kind == TapeKind::kDirectU;
      auto& net_leaves = is_u ? side.leaves.u : side.leaves.k;
      net_leaves = nn::make_mlp_leaves(
          side.g, is_u ? state_.gen.u_net.spec : state_.gen.k_net.spec);
      side.leaves.x = side.g.leaf();
      for (int i = 0; i < nd; ++i) side.leaves.xi.push_back(side.g.leaf());
      side.out =
          gen_field(side.g, side.leaves, is_u ? Field::kU : Field::kK);
    }
    if (with_grad) {
      side.seed = side.g.leaf();
      const ad::NodeId seeded = side.g.mul(side.out, side.seed);
      if (!side.leaves.u.ids.empty())
        side.grad_u = side.g.grad(seeded, side.leaves.u.ids);
      if (!side.leaves.k.ids.empty())
        side.grad_k = side.g.grad(seeded, side.leaves.k.ids);
      std::vector<ad::NodeId> gouts = side.grad_u;
      gouts.insert(gouts.end(), side.grad_k.begin(), side.grad_k.end());
      side.plan = ad::Plan(side.g, gouts);
    } else {
      side.plan = ad::Plan(side.g, std::vector<ad::NodeId>{side.out});
    }
    for (int w = 0; w < cfg_.threads; ++w)
      side.ws.push_back(std::make_unique<Ws>(side.g));
  }

  void build_field_tapes() {
    for (TapeKind kind : {TapeKind::kDirectU, TapeKind::kDirectK,
                          TapeKind::kInducedF}) {
      if (!kind_used(kind)) continue;
      FieldTape& tape = tape_for(kind);
      build_side(tape.value, kind, false);
      build_side(tape.grad, kind, true);
    }
  }

  FieldTape& tape_for(TapeKind kind) {
    switch (kind) {
      case TapeKind::kDirectU: return tape_u_;
      case TapeKind::kDirectK: return tape_k_;
      case TapeKind::kInducedF: return tape_f_;
    }
    throw std::logic_error("tape_for");
  }

  void build_disc_tapes() {
    disc_tapes_.resize(groups_.size());
    for (std::size_t t = 0; t < groups_.size(); ++t) {
      DiscTape& tape = disc_tapes_[t];
      const nn::MlpSpec& spec = state_.discs.nets[t].spec;
      if (spec.input_width != groups_[t].width())
        throw std::invalid_argument("discriminator width mismatch");
      tape.rho = nn::make_mlp_leaves(tape.g, spec);
      const int w = spec.input_width;
      for (int i = 0; i < w; ++i) tape.in_fake.push_back(tape.g.leaf());
      for (int i = 0; i < w; ++i) tape.in_real.push_back(tape.g.leaf());
      const ad::NodeId y_fake =
          nn::mlp_forward_scalar(tape.g, tape.rho, tape.in_fake);
      const ad::NodeId y_real =
          nn::mlp_forward_scalar(tape.g, tape.rho, tape.in_real);
      if (cfg_.loss == LossKind::kWganGp) {
        for (int i = 0; i < w; ++i) tape.in_xhat.push_back(tape.g.leaf());
        const ad::NodeId y_xhat =
            nn::mlp_forward_scalar(tape.g, tape.rho, tape.in_xhat);
        const auto gvec = tape.g.grad(y_xhat, tape.in_xhat);
        ad::NodeId norm2 = tape.g.square(gvec[0]);
        for (int i = 1; i < w; ++i)
          norm2 = tape.g.fma(gvec[i], gvec[i], norm2);
        const ad::NodeId pen = tape.g.square(
            tape.g.sub(tape.g.sqrt(norm2), tape.g.constant(1.0)));
        tape.ld = tape.g.fma(tape.g.constant(cfg_.gp_lambda), pen,
                             tape.g.sub(y_fake, y_real));
        tape.gen_obj = tape.g.neg(y_fake);
      } else {
        tape.ld = tape.g.add(tape.g.softplus(y_fake),
                             tape.g.softplus(tape.g.neg(y_real)));
        tape.gen_obj = tape.g.neg(tape.g.softplus(y_fake));
      }
      tape.grad_rho = tape.g.grad(tape.ld, tape.rho.ids);
      tape.grad_fake = tape.g.grad(tape.gen_obj, tape.in_fake);
      std::vector<ad::NodeId> douts = tape.grad_rho;
      douts.push_back(tape.ld);
      tape.disc_plan = ad::Plan(tape.g, douts);
      std::vector<ad::NodeId> gouts = tape.grad_fake;
      gouts.push_back(tape.gen_obj);
      tape.gen_plan = ad::Plan(tape.g, gouts);
      for (int wk = 0; wk < cfg_.threads; ++wk)
        tape.ws.push_back(std::make_unique<Ws>(tape.g));
    }
  }

  void bind_generator_params() {
    auto bind_side = [&](TapeSide& side) {
      for (auto& ws : side.ws) {
        if (!side.leaves.u.ids.empty())
          nn::bind_params(*ws, side.leaves.u, state_.gen.u_net);
        if (!side.leaves.k.ids.empty())
          nn::bind_params(*ws, side.leaves.k, state_.gen.k_net);
      }
    };
    for (FieldTape* tape : {&tape_u_, &tape_k_, &tape_f_}) {
      if (!tape->value.ws.empty()) bind_side(tape->value);
      if (!tape->grad.ws.empty()) bind_side(tape->grad);
    }
  }

  void bind_disc_params(int t) {
    for (auto& ws : disc_tapes_[t].ws)
      nn::bind_params(*ws, disc_tapes_[t].rho, state_.discs.nets[t]);
  }

  // Evaluate group t's generated rows for n noise vectors (row-major xi,
  // n x noise_dim) into out (n x width).
  void eval_rows(int t, const std::vector<double>& xi, int n, double* out) {
    const int nd = state_.gen.noise_dim;
    const auto& prog = programs_[t];
    const int width = int(prog.size());
    const int chunks = chunk_count(n);
    for (int s = 0; s < width; ++s) {
      TapeSide& side = tape_for(prog[s].kind).value;
      const double pos = prog[s].x;
      parallel_for(chunks, cfg_.threads, [&](int chunk, int worker) {
        Ws& ws = *side.ws[worker];
        ws.set_leaf_all(side.leaves.x, pos);
        for (int l = 0; l < kLanes; ++l) {
          const int j = std::min(chunk * kLanes + l, n - 1);
          for (int d = 0; d < nd; ++d)
            ws.set_leaf(side.leaves.xi[d], l, xi[std::size_t(j) * nd + d]);
        }
        ws.run_unchecked(side.plan);
        const double* vals = ws.lanes(side.out);
        const int valid = std::min(kLanes, n - chunk * kLanes);
        for (int l = 0; l < valid; ++l)
          out[std::size_t(chunk * kLanes + l) * width + s] = vals[l];
      });
    }
  }

  std::vector<double> draw_normals(StreamKey key, int count) {
    Rng rng = key.rng();
    std::vector<double> v(count);
    for (double& x : v) x = rng.normal();
    return v;
  }

  // Uniform sample of `take` distinct indices from [0,n); identity when
  // take == n.
  std::vector<int> sample_indices(StreamKey key, int n, int take) {
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    if (take >= n) return idx;
    Rng rng = key.rng();
    for (int i = 0; i < take; ++i) {
      const int j = i + int(rng.next_u64() % std::uint64_t(n - i));
      std::swap(idx[i], idx[j]);
    }
    idx.resize(take);
    return idx;
  }

  std::vector<int> permutation(StreamKey key, int n) {
    std::vector<int> p(n);
    for (int i = 0; i < n; ++i) p[i] = i;
    Rng rng = key.rng();
    for (int i = n - 1; i > 0; --i) {
      const int j = int(rng.next_u64() % std::uint64_t(i + 1));
      std::swap(p[i], p[j]);
    }
    return p;
  }

  int batch_for_group(int t) const {
    const int n = groups_[t].n_rows;
    return (cfg_.batch == 0 || cfg_.batch >= n) ? n : cfg_.batch;
  }

  // Gather the real batch for group t, with independent permutations of
  // the K and F blocks when shuffle_kf is set.
  std::vector<double> gather_real(int t, StreamKey key, int n) {
    const proc::SnapshotGroup& grp = groups_[t];
    const int width = grp.width();
    const auto idx = sample_indices(key.child(0), grp.n_rows, n);
    std::vector<double> rows(std::size_t(n) * width);
    for (int j = 0; j < n; ++j) {
      const double* src = grp.row(idx[j]);
      std::copy(src, src + width, rows.begin() + std::size_t(j) * width);
    }
    if (cfg_.shuffle_kf) {
      const int nk = grp.layout.n_k();
      const int nf = grp.layout.n_f();
      const int f0 = nk + grp.layout.n_u();
      const auto pk = permutation(key.child(1), n);
      const auto pf = permutation(key.child(2), n);
      std::vector<double> shuffled(rows);
      for (int j = 0; j < n; ++j) {
        const double* ks = rows.data() + std::size_t(pk[j]) * width;
        const double* fs = rows.data() + std::size_t(pf[j]) * width;
        double* dst = shuffled.data() + std::size_t(j) * width;
        std::copy(ks, ks + nk, dst);
        std::copy(fs + f0, fs + f0 + nf, dst + f0);
      }
      rows.swap(shuffled);
    }
    return rows;
  }

  void ensure_grad_buffers(std::vector<std::vector<double>>& buf, int chunks,
                           std::size_t width) {
    buf.resize(chunks);
    for (auto& b : buf) {
      b.assign(width, 0.0);
    }
  }

  void discriminator_phase(std::int64_t step) {
    const StreamKey root = StreamKey{cfg_.seed}.child(kStreamDisc).child(
        std::uint64_t(step));
    for (int it = 0; it < cfg_.n_d; ++it) {
      for (std::size_t t = 0; t < groups_.size(); ++t) {
        const StreamKey key = root.child(it).child(t);
        const int n = batch_for_group(int(t));
        const int nd = state_.gen.noise_dim;
        const std::vector<double> real = gather_real(int(t), key.child(1), n);
        const std::vector<double> xi = draw_normals(key.child(2), n * nd);
        std::vector<double> eps;
        if (cfg_.loss == LossKind::kWganGp) {
          Rng rng = key.child(3).rng();
          eps.resize(n);
          for (double& e : eps) e = rng.uniform01();
        }
        std::vector<double> fake(real.size());
        eval_rows(int(t), xi, n, fake.data());
        update_discriminator(int(t), real, fake, eps, n);
      }
    }
  }

  void update_discriminator(int t, const std::vector<double>& real,
                            const std::vector<double>& fake,
                            const std::vector<double>& eps, int n) {
    DiscTape& tape = disc_tapes_[t];
    const int width = groups_[t].width();
    const int chunks = chunk_count(n);
    const std::size_t np = state_.discs.nets[t].values.size();
    ensure_grad_buffers(disc_partials_, chunks, np);

    parallel_for(chunks, cfg_.threads, [&](int chunk, int worker) {
      Ws& ws = *tape.ws[worker];
      for (int l = 0; l < kLanes; ++l) {
        const int j = std::min(chunk * kLanes + l, n - 1);
        const double* rr = real.data() + std::size_t(j) * width;
        const double* fr = fake.data() + std::size_t(j) * width;
        for (int i = 0; i < width; ++i) {
          ws.set_leaf(tape.in_fake[i], l, fr[i]);
          ws.set_leaf(tape.in_real[i], l, rr[i]);
          if (!tape.in_xhat.empty()) {
            const double e = eps[j];
            ws.set_leaf(tape.in_xhat[i], l, e * rr[i] + (1.0 - e) * fr[i]);
          }
        }
      }
      ws.run_unchecked(tape.disc_plan);
      const int valid = std::min(kLanes, n - chunk * kLanes);
      std::vector<double>& part = disc_partials_[chunk];
      for (std::size_t p = 0; p < np; ++p) {
        const double* lanes = ws.lanes(tape.grad_rho[p]);
        double acc = 0.0;
        for (int l = 0; l < valid; ++l) acc += lanes[l];
        part[p] = acc;
      }
    });

    std::vector<double> grad(np, 0.0);
    for (int c = 0; c < chunks; ++c)
      for (std::size_t p = 0; p < np; ++p) grad[p] += disc_partials_[c][p];
    for (double& gv : grad) gv /= n;
    try {
      nn::adam_step(state_.adam[2 + t], cfg_.adam,
                    state_.discs.nets[t].values, grad);
    } catch (const std::exception& e) {
      throw std::runtime_error("discriminator update failed at step " +
                               std::to_string(state_.step + 1) + ", group " +
                               std::to_string(t) + ": " + e.what());
    }
    bind_disc_params(t);
  }

  void generator_phase(std::int64_t step) {
    const StreamKey key =
        StreamKey{cfg_.seed}.child(kStreamGen).child(std::uint64_t(step));
    const int nd = state_.gen.noise_dim;
    int n = cfg_.batch;
    if (n == 0) {
      n = 0;
      for (const auto& grp : groups_) n = std::max(n, grp.n_rows);
    }
    const std::vector<double> xi = draw_normals(key.child(1), n * nd);

    const std::size_t nu = state_.gen.u_net.values.size();
    const std::size_t nk = state_.gen.k_net.values.size();
    const int chunks = chunk_count(n);
    ensure_grad_buffers(gen_u_partials_, chunks, nu);
    ensure_grad_buffers(gen_k_partials_, chunks, nk);

    for (std::size_t t = 0; t < groups_.size(); ++t) {
      const int width = groups_[t].width();
      std::vector<double> fake(std::size_t(n) * width);
      eval_rows(int(t), xi, n, fake.data());

      // d(gen_obj)/d(row) per sample
      DiscTape& dtape = disc_tapes_[t];
      std::vector<double> seeds(std::size_t(n) * width);
      parallel_for(chunks, cfg_.threads, [&](int chunk, int worker) {
        Ws& ws = *dtape.ws[worker];
        for (int l = 0; l < kLanes; ++l) {
          const int j = std::min(chunk * kLanes + l, n - 1);
          const double* fr = fake.data() + std::size_t(j) * width;
          for (int i = 0; i < width; ++i) ws.set_leaf(dtape.in_fake[i], l, fr[i]);
        }
        ws.run_unchecked(dtape.gen_plan);
        const int valid = std::min(kLanes, n - chunk * kLanes);
        for (int i = 0; i < width; ++i) {
          const double* lanes = ws.lanes(dtape.grad_fake[i]);
          for (int l = 0; l < valid; ++l)
            seeds[std::size_t(chunk * kLanes + l) * width + i] = lanes[l];
        }
      });

      // chain into the field tapes
      const double scale = weights_[t] / double(n);
      const auto& prog = programs_[t];
      for (int s = 0; s < width; ++s) {
        TapeSide& side = tape_for(prog[s].kind).grad;
        parallel_for(chunks, cfg_.threads, [&](int chunk, int worker) {
          Ws& ws = *side.ws[worker];
          ws.set_leaf_all(side.leaves.x, prog[s].x);
          for (int l = 0; l < kLanes; ++l) {
            const int j = std::min(chunk * kLanes + l, n - 1);
            for (int d = 0; d < nd; ++d)
              ws.set_leaf(side.leaves.xi[d], l, xi[std::size_t(j) * nd + d]);
            const bool pad = chunk * kLanes + l >= n;
            ws.set_leaf(side.seed, l,
                        pad ? 0.0
                            : scale * seeds[std::size_t(j) * width + s]);
          }
          ws.run_unchecked(side.plan);
          auto accumulate = [&](const std::vector<ad::NodeId>& ids,
                                std::vector<double>& part) {
            for (std::size_t p = 0; p < ids.size(); ++p) {
              const double* lanes = ws.lanes(ids[p]);
              double acc = 0.0;
              for (int l = 0; l < kLanes; ++l) acc += lanes[l];
              part[p] += acc;
            }
          };
          if (!side.grad_u.empty())
            accumulate(side.grad_u, gen_u_partials_[chunk]);
          if (!side.grad_k.empty())
            accumulate(side.grad_k, gen_k_partials_[chunk]);
        });
      }
    }

    std::vector<double> grad_u(nu, 0.0), grad_k(nk, 0.0);
    for (int c = 0; c < chunks; ++c) {
      for (std::size_t p = 0; p < nu; ++p) grad_u[p] += gen_u_partials_[c][p];
      for (std::size_t p = 0; p < nk; ++p) grad_k[p] += gen_k_partials_[c][p];
    }
    try {
      nn::adam_step(state_.adam[0], cfg_.adam, state_.gen.u_net.values,
                    grad_u);
      if (nk > 0)
        nn::adam_step(state_.adam[1], cfg_.adam, state_.gen.k_net.values,
                      grad_k);
    } catch (const std::exception& e) {
      throw std::runtime_error("generator update failed at step " +
                               std::to_string(step) + ": " + e.what());
    }
    bind_generator_params();
  }

  void record_checkpoint() {
    state_.checkpoints.push_back(
        {state_.step, state_.gen, state_.discs, state_.adam});
    if (cfg_.checkpoint_keep_last > 0 &&
        int(state_.checkpoints.size()) > cfg_.checkpoint_keep_last)
      state_.checkpoints.erase(state_.checkpoints.begin());
  }

  void record_monitors() {
    record_trace();
    if (cfg_.w1_stride > 0) record_w1();
  }

  metrics::PointCloud cloud_from(const proc::SnapshotGroup& grp) {
    metrics::PointCloud c(grp.n_rows, grp.width());
    c.data = grp.rows;
    return c;
  }

  double disc_loss_on(int t, const metrics::PointCloud& real, StreamKey key) {
    const int n = real.n;
    const std::vector<double> xi =
        draw_normals(key.child(1), n * state_.gen.noise_dim);
    metrics::PointCloud fake = generate_rows(t, xi, n);
    if (cfg_.loss == LossKind::kWganGp) {
      Rng rng = key.child(2).rng();
      std::vector<double> eps(n);
      for (double& e : eps) e = rng.uniform01();
      return wgan_gp_losses(state_.discs.nets[t], real, fake, eps,
                            cfg_.gp_lambda)
          .discriminator;
    }
    return vanilla_losses(state_.discs.nets[t], real, fake).discriminator;
  }

  void record_trace() {
    const StreamKey key = StreamKey{cfg_.seed}
                              .child(kStreamMonitor)
                              .child(std::uint64_t(state_.step))
                              .child(1);
    TraceRow row;
    row.step = state_.step;
    for (std::size_t t = 0; t < groups_.size(); ++t) {
      row.ld_train.push_back(
          disc_loss_on(int(t), cloud_from(groups_[t]), key.child(t * 2)));
      if (!val_.empty())
        row.ld_val.push_back(
            disc_loss_on(int(t), cloud_from(val_[t]), key.child(t * 2 + 1)));
    }
    // generator loss: fresh noise, summed over groups with weights
    const int n = cfg_.batch > 0 ? cfg_.batch : groups_[0].n_rows;
    const std::vector<double> xi =
        draw_normals(key.child(100), n * state_.gen.noise_dim);
    double lg = 0.0;
    for (std::size_t t = 0; t < groups_.size(); ++t) {
      metrics::PointCloud fake = generate_rows(int(t), xi, n);
      DiscTape& tape = disc_tapes_[t];
      const int chunks = chunk_count(n);
      std::vector<double> partial(chunks, 0.0);
      parallel_for(chunks, cfg_.threads, [&](int chunk, int worker) {
        Ws& ws = *tape.ws[worker];
        for (int l = 0; l < kLanes; ++l) {
          const int j = std::min(chunk * kLanes + l, n - 1);
          for (int i = 0; i < fake.d; ++i)
            ws.set_leaf(tape.in_fake[i], l, fake.row(j)[i]);
        }
        ws.run_unchecked(tape.gen_plan);
        const int valid = std::min(kLanes, n - chunk * kLanes);
        const double* lanes = ws.lanes(tape.gen_obj);
        double acc = 0.0;
        for (int l = 0; l < valid; ++l) acc += lanes[l];
        partial[chunk] = acc;
      });
      double sum = 0.0;
      for (double p : partial) sum += p;
      lg += weights_[t] * sum / n;
    }
    row.lg = lg;
    state_.traces.push_back(std::move(row));
  }

  void record_w1() {
    const StreamKey key = StreamKey{cfg_.seed}
                              .child(kStreamMonitor)
                              .child(std::uint64_t(state_.step))
                              .child(2);
    const proc::SnapshotGroup& grp = groups_[0];
    const int n = std::min(cfg_.w1_n, grp.n_rows);
    const auto idx = sample_indices(key.child(1), grp.n_rows, n);
    metrics::PointCloud real(n, grp.width());
    for (int j = 0; j < n; ++j)
      std::copy(grp.row(idx[j]), grp.row(idx[j]) + grp.width(), real.row(j));
    const std::vector<double> xi =
        draw_normals(key.child(2), n * state_.gen.noise_dim);
    metrics::PointCloud fake = generate_rows(0, xi, n);
    state_.w1_trace.push_back({state_.step, metrics::w1_empirical(fake, real)});
  }

  TrainState& state_;
  std::vector<proc::SnapshotGroup> groups_, val_;
  TrainConfig cfg_;
  bool physics_;
  std::vector<double> weights_;
  std::vector<std::vector<Slot>> programs_;
  FieldTape tape_u_, tape_k_, tape_f_;
  std::vector<DiscTape> disc_tapes_;
  std::vector<std::vector<double>> disc_partials_, gen_u_partials_,
      gen_k_partials_;
};

}  // namespace detail

// Algorithm for approximating a single stochastic process from snapshots:
// one feed-forward generator (stored as GeneratorSet::u_net), one
// discriminator, WGAN-GP or vanilla loss.
inline TrainState train_process_gan(const proc::SnapshotGroup& data,
                                    const proc::SnapshotGroup* validation,
                                    const nn::MlpSpec& gen_spec, int noise_dim,
                                    const nn::MlpSpec& disc_spec,
                                    const TrainConfig& cfg) {
  cfg.validate();
  if (data.layout.n_k() || data.layout.n_u() || data.layout.n_b())
    throw std::invalid_argument("train_process_gan: layout must be f-only");
  TrainState state;
  Rng rng(cfg.seed);
  state.gen.noise_dim = noise_dim;
  state.gen.u_net = nn::init_mlp(gen_spec, rng);
  state.discs.nets.push_back(nn::init_mlp(disc_spec, rng));

  std::vector<proc::SnapshotGroup> val;
  if (validation) val.push_back(*validation);
  detail::Engine engine(state, std::span(&data, 1), val, cfg, false);
  engine.run(cfg.steps);
  return state;
}

// Physics-informed training over M snapshot groups with M discriminators.
inline TrainState train_pigan(std::span<const proc::SnapshotGroup> groups,
                              std::span<const proc::SnapshotGroup> validation,
                              const GeneratorSet& gen0,
                              const DiscriminatorSet& discs0,
                              const TrainConfig& cfg) {
  cfg.validate();
  TrainState state;
  state.gen = gen0;
  state.discs = discs0;
  detail::Engine engine(state, groups, validation, cfg, true);
  engine.run(cfg.steps);
  return state;
}

// Continue a run bit-exactly from a restored state (same config and data).
inline void train_resume(TrainState& state,
                         std::span<const proc::SnapshotGroup> groups,
                         std::span<const proc::SnapshotGroup> validation,
                         const TrainConfig& cfg, bool physics,
                         std::int64_t target_steps) {
  cfg.validate();
  detail::Engine engine(state, groups, validation, cfg, physics);
  engine.run(target_steps);
}

}  // namespace sdegan::gan
