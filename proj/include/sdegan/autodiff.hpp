#pragma once

// Scalar expression-graph automatic differentiation.
//
// A Graph is an append-only tape of scalar nodes (op kind + operand ids).
// Differentiation emits derivative *expressions* into the same graph, so
// derivatives are ordinary nodes and can be differentiated again to any
// order.  Two emitters are provided:
//
//   grad(output, wrt)      reverse mode; one sweep yields d(output)/d(leaf)
//                          for every requested leaf.
//   tangents(outputs, wrt) forward mode; one sweep yields d(node)/d(leaf)
//                          for every requested output w.r.t. a single leaf.
//
// Both agree with each other and with finite differences (see tests); the
// choice between them is purely a graph-size consideration.  Structurally
// identical nodes are interned, so repeated subexpressions (ubiquitous in
// nested derivative emission) are stored and evaluated once.
//
// Evaluation is separated from structure: a Workspace holds per-node value
// lanes (kLanes samples evaluated in lockstep) and runs a Plan, the
// topologically sorted subset of nodes reachable from requested outputs.
// run() raises EvalError on the first non-finite intermediate;
// run_unchecked() skips the per-node tests and is meant for hot loops
// whose read-out values are validated by the caller.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#if defined(__AVX512F__)
#include <immintrin.h>
extern "C" __m512d _ZGVeN8v_tanh(__m512d);  // glibc libmvec
#define SDEGAN_HAVE_AVX512_TANH 1
#endif

namespace sdegan::ad {

using NodeId = std::uint32_t;
inline constexpr NodeId kNoNode = 0xffffffffu;

enum class Op : std::uint8_t {
  kConst,
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kFma,  // a*b + c
  kNeg,
  kTanh,
  kExp,
  kSin,
  kCos,
  kSqrt,
  kSquare,
  kLog,
  kSoftplus,  // log(1 + exp(x)), evaluated in overflow-safe form
};

class EvalError : public std::runtime_error {
 public:
  EvalError(const std::string& what, NodeId node)
      : std::runtime_error(what + " (node " + std::to_string(node) + ")"),
        node_(node) {}
  NodeId node() const { return node_; }

 private:
  NodeId node_;
};

class Graph {
 public:
  NodeId constant(double v) {
    return push(Op::kConst, kNoNode, kNoNode, kNoNode, v);
  }

  NodeId leaf() {
    nodes_.push_back({kNoNode, kNoNode, kNoNode, Op::kLeaf});
    payload_.push_back(0.0);
    const NodeId id = static_cast<NodeId>(nodes_.size() - 1);
    leaves_.push_back(id);
    return id;
  }

  NodeId add(NodeId x, NodeId y) {
    if (is_const(x) && is_const(y)) return constant(payload_[x] + payload_[y]);
    if (is_zero(x)) return y;
    if (is_zero(y)) return x;
    return push(Op::kAdd, x, y, kNoNode, 0.0);
  }

  NodeId sub(NodeId x, NodeId y) {
    if (is_const(x) && is_const(y)) return constant(payload_[x] - payload_[y]);
    if (is_zero(y)) return x;
    if (is_zero(x)) return neg(y);
    return push(Op::kSub, x, y, kNoNode, 0.0);
  }

  NodeId mul(NodeId x, NodeId y) {
    if (is_const(x) && is_const(y)) return constant(payload_[x] * payload_[y]);
    if (is_zero(x) || is_zero(y)) return constant(0.0);
    if (is_one(x)) return y;
    if (is_one(y)) return x;
    return push(Op::kMul, x, y, kNoNode, 0.0);
  }

  NodeId div(NodeId x, NodeId y) {
    if (is_const(x) && is_const(y) && payload_[y] != 0.0)
      return constant(payload_[x] / payload_[y]);
    if (is_one(y)) return x;
    return push(Op::kDiv, x, y, kNoNode, 0.0);
  }

  // x*y + z in one node.
  NodeId fma(NodeId x, NodeId y, NodeId z) {
    if (is_zero(x) || is_zero(y)) return z;
    if (is_zero(z)) return mul(x, y);
    if (is_one(x)) return add(y, z);
    if (is_one(y)) return add(x, z);
    if (is_const(x) && is_const(y) && is_const(z))
      return constant(payload_[x] * payload_[y] + payload_[z]);
    return push(Op::kFma, x, y, z, 0.0);
  }

  NodeId neg(NodeId x) {
    if (is_const(x)) return constant(-payload_[x]);
    if (op(x) == Op::kNeg) return nodes_[x].a;
    return push(Op::kNeg, x, kNoNode, kNoNode, 0.0);
  }

  NodeId tanh(NodeId x) { return unary(Op::kTanh, x); }
  NodeId exp(NodeId x) { return unary(Op::kExp, x); }
  NodeId sin(NodeId x) { return unary(Op::kSin, x); }
  NodeId cos(NodeId x) { return unary(Op::kCos, x); }
  NodeId sqrt(NodeId x) { return unary(Op::kSqrt, x); }
  NodeId square(NodeId x) { return unary(Op::kSquare, x); }
  NodeId log(NodeId x) { return unary(Op::kLog, x); }
  NodeId softplus(NodeId x) { return unary(Op::kSoftplus, x); }

  std::size_t size() const { return nodes_.size(); }
  Op op(NodeId id) const { return nodes_[id].op; }
  NodeId operand(NodeId id, int slot) const {
    const Node& n = nodes_[id];
    return slot == 0 ? n.a : (slot == 1 ? n.b : n.c);
  }
  double const_value(NodeId id) const { return payload_[id]; }
  bool is_leaf(NodeId id) const { return op(id) == Op::kLeaf; }
  std::span<const NodeId> leaves() const { return leaves_; }

  // Reverse-mode differentiation.  Emits, into this graph, expressions for
  // d(output)/d(w) for each leaf w in `wrt` and returns their node ids
  // (a zero constant where the output does not depend on the leaf).
  // Only appends nodes; pre-existing nodes are untouched.
  std::vector<NodeId> grad(NodeId output, std::span<const NodeId> wrt) {
    check_id(output);
    for (NodeId w : wrt)
      if (!is_leaf(w))
        throw std::invalid_argument("grad: wrt ids must be leaves");
    const NodeId n0 = static_cast<NodeId>(size());

    // dep[i]: node i depends on at least one wrt leaf.
    std::vector<char> dep(n0, 0);
    for (NodeId w : wrt) dep[w] = 1;
    for (NodeId i = 0; i < n0; ++i) {
      if (dep[i]) continue;
      const Node& n = nodes_[i];
      if (n.op == Op::kConst || n.op == Op::kLeaf) continue;
      if (dep[n.a] || (n.b != kNoNode && dep[n.b]) ||
          (n.c != kNoNode && dep[n.c]))
        dep[i] = 1;
    }

    // live[i]: i is in the sub-DAG under `output` and depends on wrt.
    std::vector<char> live(n0, 0);
    if (dep[output]) {
      std::vector<NodeId> stack = {output};
      live[output] = 1;
      while (!stack.empty()) {
        NodeId i = stack.back();
        stack.pop_back();
        const Op o = op(i);
        if (o == Op::kConst || o == Op::kLeaf) continue;
        for (int s = 0; s < 3; ++s) {
          NodeId o_id = operand(i, s);
          if (o_id != kNoNode && dep[o_id] && !live[o_id]) {
            live[o_id] = 1;
            stack.push_back(o_id);
          }
        }
      }
    }

    std::vector<NodeId> adj(n0, kNoNode);
    if (dep[output]) adj[output] = constant(1.0);

    auto accum = [&](NodeId o_id, NodeId term) {
      if (!dep[o_id]) return;
      adj[o_id] = (adj[o_id] == kNoNode) ? term : add(adj[o_id], term);
    };
    // adj[o] += A * t, fused when an accumulator already exists.
    auto accum_mul = [&](NodeId o_id, NodeId A, NodeId t) {
      if (!dep[o_id]) return;
      adj[o_id] = (adj[o_id] == kNoNode) ? mul(A, t) : fma(A, t, adj[o_id]);
    };

    for (NodeId i = n0; i-- > 0;) {
      if (!live[i] || adj[i] == kNoNode) continue;
      const NodeId A = adj[i];
      const NodeId x = nodes_[i].a, y = nodes_[i].b, z = nodes_[i].c;
      switch (op(i)) {
        case Op::kAdd:
          accum(x, A);
          accum(y, A);
          break;
        case Op::kSub:
          accum(x, A);
          accum(y, neg(A));
          break;
        case Op::kMul:
          accum_mul(x, A, y);
          accum_mul(y, A, x);
          break;
        case Op::kDiv:
          accum(x, div(A, y));
          accum_mul(y, A, neg(div(i, y)));
          break;
        case Op::kFma:
          accum_mul(x, A, y);
          accum_mul(y, A, x);
          accum(z, A);
          break;
        case Op::kNeg:
          accum(x, neg(A));
          break;
        case Op::kTanh:
          accum_mul(x, A, sub(constant(1.0), square(i)));
          break;
        case Op::kExp:
          accum_mul(x, A, i);
          break;
        case Op::kSin:
          accum_mul(x, A, cos(x));
          break;
        case Op::kCos:
          accum_mul(x, A, neg(sin(x)));
          break;
        case Op::kSqrt:
          accum(x, div(mul(constant(0.5), A), i));
          break;
        case Op::kSquare:
          accum_mul(x, A, add(x, x));
          break;
        case Op::kLog:
          accum(x, div(A, x));
          break;
        case Op::kSoftplus:
          accum_mul(x, A, sigmoid(x));
          break;
        case Op::kConst:
        case Op::kLeaf:
          break;
      }
    }

    std::vector<NodeId> result(wrt.size());
    for (std::size_t j = 0; j < wrt.size(); ++j)
      result[j] = (adj[wrt[j]] == kNoNode) ? constant(0.0) : adj[wrt[j]];
    return result;
  }

  // Forward-mode differentiation w.r.t. a single leaf.  Emits tangent
  // expressions for every node on a path from `wrt` to one of `outputs`
  // and returns the tangents of the outputs.
  std::vector<NodeId> tangents(std::span<const NodeId> outputs, NodeId wrt) {
    if (!is_leaf(wrt))
      throw std::invalid_argument("tangents: wrt must be a leaf");
    const NodeId n0 = static_cast<NodeId>(size());

    std::vector<char> dep(n0, 0);
    dep[wrt] = 1;
    for (NodeId i = 0; i < n0; ++i) {
      if (dep[i]) continue;
      const Node& n = nodes_[i];
      if (n.op == Op::kConst || n.op == Op::kLeaf) continue;
      if (dep[n.a] || (n.b != kNoNode && dep[n.b]) ||
          (n.c != kNoNode && dep[n.c]))
        dep[i] = 1;
    }
    std::vector<char> live(n0, 0);
    {
      std::vector<NodeId> stack;
      for (NodeId out : outputs) {
        check_id(out);
        if (dep[out] && !live[out]) {
          live[out] = 1;
          stack.push_back(out);
        }
      }
      while (!stack.empty()) {
        NodeId i = stack.back();
        stack.pop_back();
        const Op o = op(i);
        if (o == Op::kConst || o == Op::kLeaf) continue;
        for (int s = 0; s < 3; ++s) {
          NodeId o_id = operand(i, s);
          if (o_id != kNoNode && dep[o_id] && !live[o_id]) {
            live[o_id] = 1;
            stack.push_back(o_id);
          }
        }
      }
    }

    std::vector<NodeId> tan(n0, kNoNode);
    tan[wrt] = constant(1.0);
    auto t_of = [&](NodeId id) -> NodeId {
      return (id != kNoNode && dep[id]) ? tan[id] : kNoNode;
    };

    for (NodeId i = 0; i < n0; ++i) {
      if (!live[i] || is_leaf(i)) continue;
      const NodeId x = nodes_[i].a, y = nodes_[i].b, z = nodes_[i].c;
      const NodeId tx = t_of(x), ty = t_of(y), tz = t_of(z);
      NodeId t = kNoNode;
      switch (op(i)) {
        case Op::kAdd:
          t = (tx != kNoNode && ty != kNoNode) ? add(tx, ty)
                                               : (tx != kNoNode ? tx : ty);
          break;
        case Op::kSub:
          if (tx != kNoNode && ty != kNoNode) t = sub(tx, ty);
          else t = (tx != kNoNode) ? tx : neg(ty);
          break;
        case Op::kMul:
          if (tx != kNoNode && ty != kNoNode) t = fma(tx, y, mul(x, ty));
          else t = (tx != kNoNode) ? mul(tx, y) : mul(x, ty);
          break;
        case Op::kDiv:
          // d(x/y) = (tx - (x/y) ty) / y, reusing this node's value.
          if (tx != kNoNode && ty != kNoNode)
            t = div(sub(tx, mul(i, ty)), y);
          else if (tx != kNoNode)
            t = div(tx, y);
          else
            t = neg(div(mul(i, ty), y));
          break;
        case Op::kFma: {
          // d(xy+z), fused into chained fma where possible
          if (tx != kNoNode && ty != kNoNode) {
            const NodeId inner =
                (tz != kNoNode) ? fma(x, ty, tz) : mul(x, ty);
            t = fma(tx, y, inner);
          } else if (tx != kNoNode) {
            t = (tz != kNoNode) ? fma(tx, y, tz) : mul(tx, y);
          } else if (ty != kNoNode) {
            t = (tz != kNoNode) ? fma(x, ty, tz) : mul(x, ty);
          } else {
            t = tz;
          }
          break;
        }
        case Op::kNeg:
          t = neg(tx);
          break;
        case Op::kTanh:
          t = mul(sub(constant(1.0), square(i)), tx);
          break;
        case Op::kExp:
          t = mul(i, tx);
          break;
        case Op::kSin:
          t = mul(cos(x), tx);
          break;
        case Op::kCos:
          t = neg(mul(sin(x), tx));
          break;
        case Op::kSqrt:
          t = div(mul(constant(0.5), tx), i);
          break;
        case Op::kSquare: {
          NodeId xt = mul(x, tx);
          t = add(xt, xt);
          break;
        }
        case Op::kLog:
          t = div(tx, x);
          break;
        case Op::kSoftplus:
          t = mul(sigmoid(x), tx);
          break;
        case Op::kConst:
        case Op::kLeaf:
          break;
      }
      tan[i] = t;
    }

    std::vector<NodeId> result(outputs.size());
    for (std::size_t j = 0; j < outputs.size(); ++j) {
      NodeId t = (dep[outputs[j]]) ? tan[outputs[j]] : kNoNode;
      result[j] = (t == kNoNode) ? constant(0.0) : t;
    }
    return result;
  }

 private:
  friend class Plan;
  template <int L>
  friend class Workspace;

  struct Node {
    NodeId a = kNoNode, b = kNoNode, c = kNoNode;
    Op op = Op::kConst;
  };
  static_assert(sizeof(Node) == 16);

  NodeId sigmoid(NodeId x) {
    return div(constant(1.0), add(constant(1.0), exp(neg(x))));
  }

  NodeId unary(Op o, NodeId x) {
    if (is_const(x)) {
      const double v = payload_[x];
      switch (o) {
        case Op::kTanh: return constant(std::tanh(v));
        case Op::kExp: return constant(std::exp(v));
        case Op::kSin: return constant(std::sin(v));
        case Op::kCos: return constant(std::cos(v));
        case Op::kSqrt: return constant(std::sqrt(v));
        case Op::kSquare: return constant(v * v);
        case Op::kLog: return constant(std::log(v));
        case Op::kSoftplus: return constant(softplus_value(v));
        default: break;
      }
    }
    return push(o, x, kNoNode, kNoNode, 0.0);
  }

  static double softplus_value(double v) {
    return (v > 0.0) ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
  }

  bool is_const(NodeId id) const { return op(id) == Op::kConst; }
  bool is_zero(NodeId id) const { return is_const(id) && payload_[id] == 0.0; }
  bool is_one(NodeId id) const { return is_const(id) && payload_[id] == 1.0; }

  void check_id(NodeId id) const {
    if (id >= size()) throw std::invalid_argument("invalid node id");
  }

  // Structural interning: an (op, operands, payload-bits) combination maps
  // to a single node.  Values are pure, so sharing is semantics-free.
  NodeId push(Op o, NodeId x, NodeId y, NodeId z, double payload) {
    if (x != kNoNode) check_id(x);
    if (y != kNoNode) check_id(y);
    if (z != kNoNode) check_id(z);
    std::uint64_t pbits;
    std::memcpy(&pbits, &payload, sizeof pbits);
    std::uint64_t h = 0x9e3779b97f4a7c15ull ^ std::uint64_t(o);
    h = (h ^ x) * 0x100000001b3ull;
    h = (h ^ y) * 0x100000001b3ull;
    h = (h ^ z) * 0x100000001b3ull;
    h = (h ^ pbits) * 0x100000001b3ull;
    auto [it, inserted] = intern_.try_emplace(h, kNoNode);
    if (!inserted) {
      const NodeId cand = it->second;
      const Node& n = nodes_[cand];
      if (n.op == o && n.a == x && n.b == y && n.c == z) {
        std::uint64_t cbits;
        std::memcpy(&cbits, &payload_[cand], sizeof cbits);
        if (cbits == pbits) return cand;
      }
      // hash collision with a different node: fall through, keep the old
      // entry (rare; only costs a missed dedup)
      nodes_.push_back({x, y, z, o});
      payload_.push_back(payload);
      return static_cast<NodeId>(nodes_.size() - 1);
    }
    nodes_.push_back({x, y, z, o});
    payload_.push_back(payload);
    const NodeId id = static_cast<NodeId>(nodes_.size() - 1);
    it->second = id;
    return id;
  }

  std::vector<Node> nodes_;
  std::vector<double> payload_;
  std::vector<NodeId> leaves_;
  std::unordered_map<std::uint64_t, NodeId> intern_;
};

// The subset of a graph needed to evaluate a set of outputs: interior
// nodes in ascending (= topological) id order, plus the reachable leaves,
// which the caller must bind before running.  Constants are preloaded by
// the workspace.
class Plan {
 public:
  Plan() = default;

  Plan(const Graph& g, std::span<const NodeId> outputs) {
    std::vector<char> mark(g.size(), 0);
    std::vector<NodeId> stack;
    for (NodeId out : outputs) {
      g.check_id(out);
      if (!mark[out]) {
        mark[out] = 1;
        stack.push_back(out);
      }
    }
    while (!stack.empty()) {
      NodeId i = stack.back();
      stack.pop_back();
      for (int s = 0; s < 3; ++s) {
        NodeId o_id = g.operand(i, s);
        if (o_id != kNoNode && !mark[o_id]) {
          mark[o_id] = 1;
          stack.push_back(o_id);
        }
      }
    }
    for (NodeId i = 0; i < g.size(); ++i) {
      if (!mark[i]) continue;
      const Op o = g.op(i);
      if (o == Op::kLeaf) leaves_.push_back(i);
      else if (o != Op::kConst) order_.push_back(i);
    }
  }

  std::span<const NodeId> order() const { return order_; }
  std::span<const NodeId> leaves() const { return leaves_; }

 private:
  std::vector<NodeId> order_;
  std::vector<NodeId> leaves_;
};

// Value storage and executor for one graph; L samples evaluated in
// lockstep ("lanes").  Leaf lanes persist across run() calls, so constants
// (e.g. network parameters) need rebinding only when they change.
template <int L>
class Workspace {
 public:
  static constexpr int kLanes = L;

  explicit Workspace(const Graph& g) : graph_(&g) { resize_to_graph(); }

  // Accommodates nodes appended since construction and preloads constants.
  // Lane blocks are 64-byte aligned so an 8-lane block is one cache line.
  void resize_to_graph() {
    storage_.resize(graph_->size() * L + 8);
    const auto addr = reinterpret_cast<std::uintptr_t>(storage_.data());
    double* aligned =
        reinterpret_cast<double*>((addr + 63) & ~std::uintptr_t(63));
    if (aligned != values_) {  // storage moved: re-prepare all constants
      values_ = aligned;
      prepared_ = 0;
    }
    for (NodeId i = prepared_; i < graph_->size(); ++i)
      if (graph_->op(i) == Op::kConst) set_leaf_all(i, graph_->payload_[i]);
    prepared_ = static_cast<NodeId>(graph_->size());
  }

  double* lanes(NodeId id) { return values_ + std::size_t(id) * L; }
  const double* lanes(NodeId id) const { return values_ + std::size_t(id) * L; }

  void set_leaf(NodeId leaf, int lane, double v) { lanes(leaf)[lane] = v; }
  void set_leaf_all(NodeId leaf, double v) {
    double* p = lanes(leaf);
    for (int l = 0; l < L; ++l) p[l] = v;
  }

  // Evaluates every node in plan order; raises EvalError on the first
  // non-finite intermediate.
  void run(const Plan& plan) { run_impl<true>(plan); }

  // No per-node checks; callers must validate what they read.
  void run_unchecked(const Plan& plan) { run_impl<false>(plan); }

 private:
  // Dispatches once per run of equal-op instructions (the tape layout
  // makes these runs long: a whole matvec is one fma run).
  template <bool Check>
  void run_impl(const Plan& plan) {
    const Graph& g = *graph_;
    double* v = values_;
    const auto* nodes = g.nodes_.data();
    const NodeId* order = plan.order().data();
    const std::size_t m = plan.order().size();

#define SDEGAN_RUN(expr)                                            \
  do {                                                              \
    for (std::size_t r = i; r < e; ++r) {                           \
      const NodeId id = order[r];                                   \
      const auto& n = nodes[id];                                    \
      double* out = v + std::size_t(id) * L;                        \
      const double* x = v + std::size_t(n.a) * L;                   \
      const double* y = v + std::size_t(n.b == kNoNode ? 0 : n.b) * L; \
      const double* z = v + std::size_t(n.c == kNoNode ? 0 : n.c) * L; \
      (void)x; (void)y; (void)z;                                    \
      for (int l = 0; l < L; ++l) out[l] = (expr);                  \
    }                                                               \
  } while (0)

    std::size_t i = 0;
    while (i < m) {
      const Op op = nodes[order[i]].op;
      std::size_t e = i + 1;
      while (e < m && nodes[order[e]].op == op) ++e;
      switch (op) {
        case Op::kAdd: SDEGAN_RUN(x[l] + y[l]); break;
        case Op::kSub: SDEGAN_RUN(x[l] - y[l]); break;
        case Op::kMul: SDEGAN_RUN(x[l] * y[l]); break;
        case Op::kDiv: SDEGAN_RUN(x[l] / y[l]); break;
        case Op::kFma: SDEGAN_RUN(x[l] * y[l] + z[l]); break;
        case Op::kNeg: SDEGAN_RUN(-x[l]); break;
        case Op::kSquare: SDEGAN_RUN(x[l] * x[l]); break;
        case Op::kSqrt: SDEGAN_RUN(std::sqrt(x[l])); break;
        case Op::kExp: SDEGAN_RUN(std::exp(x[l])); break;
        case Op::kSin: SDEGAN_RUN(std::sin(x[l])); break;
        case Op::kCos: SDEGAN_RUN(std::cos(x[l])); break;
        case Op::kLog: SDEGAN_RUN(std::log(x[l])); break;
        case Op::kSoftplus: SDEGAN_RUN(Graph::softplus_value(x[l])); break;
        case Op::kTanh:
          for (std::size_t r = i; r < e; ++r) {
            const NodeId id = order[r];
            double* out = v + std::size_t(id) * L;
            const double* x = v + std::size_t(nodes[id].a) * L;
#if defined(SDEGAN_HAVE_AVX512_TANH)
            if constexpr (L % 8 == 0) {
              for (int l = 0; l < L; l += 8)
                _mm512_store_pd(out + l,
                                _ZGVeN8v_tanh(_mm512_load_pd(x + l)));
            } else {
              for (int l = 0; l < L; ++l) out[l] = std::tanh(x[l]);
            }
#else
            for (int l = 0; l < L; ++l) out[l] = std::tanh(x[l]);
#endif
          }
          break;
        case Op::kConst:
        case Op::kLeaf:
          throw EvalError("unexpected node in plan order", order[i]);
      }
      if constexpr (Check) {
        // Exponent all-ones means inf or nan.
        constexpr std::uint64_t kExpMask = 0x7ff0000000000000ull;
        for (std::size_t r = i; r < e; ++r) {
          const double* out = v + std::size_t(order[r]) * L;
          std::uint64_t ok = 1;
          for (int l = 0; l < L; ++l) {
            std::uint64_t bits;
            std::memcpy(&bits, &out[l], sizeof bits);
            ok &= static_cast<std::uint64_t>((bits & kExpMask) != kExpMask);
          }
          if (!ok) throw EvalError("non-finite value", order[r]);
        }
      }
      i = e;
    }
#undef SDEGAN_RUN
  }

  const Graph* graph_;
  std::vector<double> storage_;
  double* values_ = nullptr;
  NodeId prepared_ = 0;
};

using ScalarWorkspace = Workspace<1>;

// Convenience single-sample evaluation used by tests and small callers.
// `bindings` pairs leaf ids with values; every reachable leaf must appear.
inline std::vector<double> eval_scalar(
    const Graph& g, std::span<const NodeId> outputs,
    std::span<const std::pair<NodeId, double>> bindings) {
  Plan plan(g, outputs);
  ScalarWorkspace ws(g);
  std::vector<char> bound(g.size(), 0);
  for (const auto& [id, v] : bindings) {
    if (!g.is_leaf(id)) throw std::invalid_argument("binding a non-leaf node");
    ws.set_leaf(id, 0, v);
    bound[id] = 1;
  }
  for (NodeId l : plan.leaves())
    if (!bound[l]) throw EvalError("unbound leaf", l);
  ws.run(plan);
  std::vector<double> out(outputs.size());
  for (std::size_t i = 0; i < outputs.size(); ++i)
    out[i] = ws.lanes(outputs[i])[0];
  return out;
}

inline double eval_scalar(const Graph& g, NodeId output,
                          std::span<const std::pair<NodeId, double>> bindings) {
  const NodeId outs[1] = {output};
  return eval_scalar(g, outs, bindings)[0];
}

}  // namespace sdegan::ad
