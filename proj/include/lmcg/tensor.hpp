#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "lmcg/errors.hpp"
#include "lmcg/rng.hpp"

namespace lmcg {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

/// When enabled, every op scans its output and throws NumericError on
/// NaN/Inf. The trainer turns this on; it is cheap next to the GEMMs.
inline bool& finite_checks() {
  static bool enabled = false;
  return enabled;
}

template <typename T>
class Tape;

namespace detail {
inline std::uint64_t next_tape_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1);
}

template <typename T>
struct Storage {
  Shape shape;
  std::vector<T> data;
  bool requires_grad = false;
  // Tape bookkeeping: which tape (by id) holds this tensor's node.
  std::uint64_t tape_id = 0;
  int node = -1;
};

template <typename T>
Tape<T>*& active_tape() {
  thread_local Tape<T>* t = nullptr;
  return t;
}
}  // namespace detail

/// N-dimensional row-major array of T with value-handle semantics:
/// copies share the underlying buffer, clone() deep-copies. Images are
/// N,C,H,W; vectors N,D; losses are rank-0 scalars.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape) {
    Tensor t;
    t.st_ = std::make_shared<detail::Storage<T>>();
    t.st_->shape = std::move(shape);
    t.st_->data.assign(std::size_t(shape_numel(t.st_->shape)), T(0));
    return t;
  }

  static Tensor full(Shape shape, T value) {
    Tensor t = zeros(std::move(shape));
    for (auto& v : t.st_->data) v = value;
    return t;
  }

  static Tensor scalar(T value) { return full({}, value); }

  static Tensor from(Shape shape, std::vector<T> values) {
    require(std::int64_t(values.size()) == shape_numel(shape),
            "tensor data length " + std::to_string(values.size()) +
                " does not match shape " + shape_str(shape));
    Tensor t;
    t.st_ = std::make_shared<detail::Storage<T>>();
    t.st_->shape = std::move(shape);
    t.st_->data = std::move(values);
    return t;
  }

  static Tensor randn(Shape shape, Rng& rng, T stddev = T(1)) {
    Tensor t = zeros(std::move(shape));
    for (auto& v : t.st_->data) v = T(rng.normal()) * stddev;
    return t;
  }

  bool defined() const { return st_ != nullptr; }
  const Shape& shape() const { return st_->shape; }
  int rank() const { return int(st_->shape.size()); }
  int dim(int i) const { return st_->shape[std::size_t(i)]; }
  std::int64_t numel() const { return shape_numel(st_->shape); }

  T* data() { return st_->data.data(); }
  const T* data() const { return st_->data.data(); }
  std::vector<T>& vec() { return st_->data; }
  const std::vector<T>& vec() const { return st_->data; }

  T item() const {
    require(numel() == 1, "item() requires a single-element tensor, got " +
                              shape_str(shape()));
    return st_->data[0];
  }

  // NCHW accessor (rank 4 only).
  T& at(int n, int c, int h, int w) {
    const auto& s = st_->shape;
    return st_->data[std::size_t(((n * s[1] + c) * s[2] + h) * s[3] + w)];
  }
  const T& at(int n, int c, int h, int w) const {
    return const_cast<Tensor*>(this)->at(n, c, h, w);
  }

  Tensor& set_requires_grad(bool v) {
    st_->requires_grad = v;
    return *this;
  }
  bool requires_grad() const { return st_ && st_->requires_grad; }

  /// Deep copy; the result is off-tape and does not require grad.
  Tensor clone() const {
    Tensor t;
    t.st_ = std::make_shared<detail::Storage<T>>();
    t.st_->shape = st_->shape;
    t.st_->data = st_->data;
    return t;
  }

  bool all_finite() const {
    for (const T& v : st_->data)
      if (!std::isfinite(double(v))) return false;
    return true;
  }

  detail::Storage<T>* storage() const { return st_.get(); }
  std::shared_ptr<detail::Storage<T>> storage_ptr() const { return st_; }

 private:
  std::shared_ptr<detail::Storage<T>> st_;
};

/// Reverse-mode gradient tape. Ops append nodes while a TapeScope is
/// active; nodes are created in execution order, which is already a
/// topological order, so backward() is a single reverse sweep.
///
/// Leaves are registered lazily: the first op that consumes a tensor
/// whose requires_grad flag is set watches it. backward() accumulates
/// gradients per node; grad() returns zeros for leaves the loss never
/// reached.
template <typename T>
class Tape {
 public:
  using BackFn = std::function<void(const std::vector<T>& grad_out, Tape&)>;

  Tape() : id_(detail::next_tape_id()) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::uint64_t id() const { return id_; }
  std::size_t size() const { return nodes_.size(); }

  /// Registers a leaf (parameter or input) on this tape.
  int watch(const Tensor<T>& t) {
    auto* st = t.storage();
    if (st->tape_id == id_ && st->node >= 0) return st->node;
    nodes_.push_back(Node{{}, nullptr, std::int64_t(t.numel()), true});
    st->tape_id = id_;
    st->node = int(nodes_.size()) - 1;
    return st->node;
  }

  /// Node id of `t` on this tape, watching it first if it asks for
  /// gradients; -1 if the tensor does not participate.
  int node_of(const Tensor<T>& t) {
    if (!t.defined()) return -1;
    auto* st = t.storage();
    if (st->tape_id == id_ && st->node >= 0) return st->node;
    if (st->requires_grad) return watch(t);
    return -1;
  }

  /// Appends an interior node producing `out`.
  void record(const Tensor<T>& out, std::vector<int> input_nodes, BackFn back) {
    nodes_.push_back(Node{std::move(input_nodes), std::move(back),
                          std::int64_t(out.numel()), false});
    auto* st = out.storage();
    st->tape_id = id_;
    st->node = int(nodes_.size()) - 1;
  }

  /// Runs the reverse sweep from a scalar loss. Gradients of leaf nodes
  /// stay available through grad() until the next backward().
  void backward(const Tensor<T>& loss) {
    require(loss.defined() && loss.numel() == 1,
            "backward() requires a scalar loss, got " +
                (loss.defined() ? shape_str(loss.shape()) : std::string("<null>")));
    auto* st = loss.storage();
    if (st->tape_id != id_ || st->node < 0)
      throw ShapeError("backward(): loss is not recorded on this tape");
    grads_.assign(nodes_.size(), {});
    grads_[std::size_t(st->node)] = {T(1)};
    for (int i = st->node; i >= 0; --i) {
      auto& g = grads_[std::size_t(i)];
      if (g.empty()) continue;
      auto& node = nodes_[std::size_t(i)];
      if (node.back) {
        node.back(g, *this);
        // Interior grads are dead once propagated; free them eagerly.
        g.clear();
        g.shrink_to_fit();
      }
    }
  }

  /// Accumulation buffer for node `id`, zero-initialized on first use.
  std::vector<T>& grad_buffer(int id) {
    auto& g = grads_[std::size_t(id)];
    if (g.empty()) g.assign(std::size_t(nodes_[std::size_t(id)].numel), T(0));
    return g;
  }

  void accumulate(int id, const std::vector<T>& contribution) {
    if (id < 0) return;
    auto& g = grad_buffer(id);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += contribution[i];
  }

  /// Gradient of a leaf after backward(); zeros if the loss never
  /// reached it.
  Tensor<T> grad(const Tensor<T>& leaf) const {
    auto* st = leaf.storage();
    if (st->tape_id == id_ && st->node >= 0 &&
        std::size_t(st->node) < grads_.size() &&
        !grads_[std::size_t(st->node)].empty()) {
      return Tensor<T>::from(leaf.shape(), grads_[std::size_t(st->node)]);
    }
    return Tensor<T>::zeros(leaf.shape());
  }

  bool has_grad(const Tensor<T>& t) const {
    auto* st = t.storage();
    return st->tape_id == id_ && st->node >= 0 &&
           std::size_t(st->node) < grads_.size() &&
           !grads_[std::size_t(st->node)].empty();
  }

 private:
  struct Node {
    std::vector<int> inputs;
    BackFn back;  // null for leaves
    std::int64_t numel = 0;
    bool leaf = false;
  };

  std::uint64_t id_;
  std::vector<Node> nodes_;
  std::vector<std::vector<T>> grads_;
};

/// RAII activation of a tape on the current thread. Ops record onto the
/// innermost active tape; without one they run plain.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape) : prev_(detail::active_tape<T>()) {
    detail::active_tape<T>() = &tape;
  }
  ~TapeScope() { detail::active_tape<T>() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* prev_;
};

namespace detail {

/// Per-op recording helper: resolves input node ids on the active tape
/// (if any) and says whether the op must record.
template <typename T>
struct Recorder {
  Tape<T>* tape = nullptr;
  std::vector<int> in_nodes;

  explicit Recorder(std::initializer_list<const Tensor<T>*> inputs) {
    Tape<T>* t = active_tape<T>();
    if (!t) return;
    bool any = false;
    in_nodes.reserve(inputs.size());
    for (const Tensor<T>* in : inputs) {
      const int id = in ? t->node_of(*in) : -1;
      in_nodes.push_back(id);
      any = any || id >= 0;
    }
    if (any) tape = t;
  }

  bool active() const { return tape != nullptr; }
  bool needs(std::size_t slot) const {
    return active() && in_nodes[slot] >= 0;
  }
  void record(const Tensor<T>& out, typename Tape<T>::BackFn back) {
    tape->record(out, in_nodes, std::move(back));
  }
};

template <typename T>
inline void check_finite(const Tensor<T>& out, const char* op) {
  if (!finite_checks()) return;
  if (!out.all_finite())
    throw NumericError(std::string("non-finite value in output of ") + op);
}

}  // namespace detail

}  // namespace lmcg
