#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "nnql/state.hpp"

namespace nnql {

/// Half-open range of admissible step indices [lo, hi).
struct Window {
  StepIndex lo = 0;
  StepIndex hi = std::numeric_limits<StepIndex>::max();
};

struct Neighbor {
  StepIndex t;
  double distance;
};

struct KnnResult {
  /// Sorted by nondecreasing distance, ties by smaller step index.
  std::vector<Neighbor> neighbors;
  /// Fewer than k candidates were available.
  bool truncated = false;

  bool empty() const noexcept { return neighbors.empty(); }
};

struct IndexEntry {
  StepIndex t;
  StateVec state;
  ActionId action;
};

/// Contiguous range of layout positions inside a block.
struct Run {
  std::uint32_t begin;
  std::uint32_t length;
};

namespace detail {

struct Candidate {
  double rank;
  StepIndex t;
  std::uint32_t pos;

  friend bool operator<(const Candidate& a, const Candidate& b) noexcept {
    return a.rank < b.rank || (a.rank == b.rank && a.t < b.t);
  }
};

/// Bounded max-heap keeping the k smallest (rank, t) pairs offered.
class KnnHeap {
 public:
  explicit KnnHeap(std::size_t k) : k_(k) { items_.reserve(k); }

  bool full() const noexcept { return items_.size() == k_; }
  /// Rank any candidate must not exceed to be admitted.
  double bound() const noexcept {
    return full() ? items_.front().rank : std::numeric_limits<double>::infinity();
  }

  void offer(double rank, StepIndex t, std::uint32_t pos) {
    const Candidate c{rank, t, pos};
    if (items_.size() < k_) {
      items_.push_back(c);
      std::push_heap(items_.begin(), items_.end());
    } else if (c < items_.front()) {
      std::pop_heap(items_.begin(), items_.end());
      items_.back() = c;
      std::push_heap(items_.begin(), items_.end());
    }
  }

  std::vector<Candidate>& sorted() {
    std::sort_heap(items_.begin(), items_.end());
    return items_;
  }
  std::vector<Candidate>& items() noexcept { return items_; }

 private:
  std::size_t k_;
  std::vector<Candidate> items_;
};

/// Immutable point set of one action. For d = 1 the layout is sorted by
/// (coordinate, step); for d > 1 it is the leaf order of a kd-tree.
class Block {
 public:
  static constexpr std::size_t kLeafSize = 16;

  Block(std::size_t dim, Metric metric, std::vector<StepIndex> steps, std::vector<double> coords)
      : dim_(dim), metric_(metric), steps_(std::move(steps)), coords_(std::move(coords)) {
    arrange();
  }

  std::size_t size() const noexcept { return steps_.size(); }
  StepIndex min_step() const noexcept { return sorted_steps_.front(); }
  StepIndex max_step() const noexcept { return sorted_steps_.back(); }
  std::span<const StepIndex> layout() const noexcept { return steps_; }
  const double* point(std::size_t pos) const noexcept { return coords_.data() + pos * dim_; }

  /// Number of stored steps strictly below `cutoff`.
  std::size_t count_below(StepIndex cutoff) const {
    return static_cast<std::size_t>(
        std::lower_bound(sorted_steps_.begin(), sorted_steps_.end(), cutoff) - sorted_steps_.begin());
  }

  /// Offers every point with lo <= t < hi that can still enter the heap.
  void search(const double* q, StepIndex lo, StepIndex hi, KnnHeap& heap) const {
    if (steps_.empty()) return;
    if (dim_ == 1)
      search_line(q[0], lo, hi, heap);
    else
      search_node(0, q, lo, hi, heap);
  }

  /// Exact k nearest (unrestricted window) as ascending runs of layout
  /// positions. Returns the number of neighbors.
  std::size_t knn_runs(const double* q, std::size_t k, std::vector<Run>& runs) const {
    runs.clear();
    const std::size_t n = steps_.size();
    if (n == 0) return 0;
    if (k >= n) {
      runs.push_back({0, static_cast<std::uint32_t>(n)});
      return n;
    }
    if (dim_ == 1) {
      const double x = q[0];
      std::size_t lo = 0, hi = n - k;
      while (lo < hi) {
        const std::size_t mid = (lo + hi) / 2;
        if (x - coords_[mid] > coords_[mid + k] - x)
          lo = mid + 1;
        else
          hi = mid;
      }
      const double r = std::max(rank1(x, lo), rank1(x, lo + k - 1));
      const bool tie = (lo > 0 && rank1(x, lo - 1) <= r) || (lo + k < n && rank1(x, lo + k) <= r);
      if (!tie) {
        runs.push_back({static_cast<std::uint32_t>(lo), static_cast<std::uint32_t>(k)});
        return k;
      }
    }
    KnnHeap heap(k);
    search(q, 0, std::numeric_limits<StepIndex>::max(), heap);
    auto& items = heap.items();
    std::sort(items.begin(), items.end(), [](const Candidate& a, const Candidate& b) { return a.pos < b.pos; });
    for (const auto& c : items) {
      if (!runs.empty() && runs.back().begin + runs.back().length == c.pos)
        ++runs.back().length;
      else
        runs.push_back({c.pos, 1});
    }
    return items.size();
  }

  /// Points with t >= cutoff, re-arranged.
  Block without_below(StepIndex cutoff) const {
    std::vector<StepIndex> steps;
    std::vector<double> coords;
    steps.reserve(steps_.size());
    coords.reserve(coords_.size());
    for (std::size_t i = 0; i < steps_.size(); ++i) {
      if (steps_[i] < cutoff) continue;
      steps.push_back(steps_[i]);
      coords.insert(coords.end(), point(i), point(i) + dim_);
    }
    return Block(dim_, metric_, std::move(steps), std::move(coords));
  }

  /// Union of two blocks, dropping points below `cutoff`.
  static Block merge(const Block& a, const Block& b, StepIndex cutoff) {
    std::vector<StepIndex> steps;
    std::vector<double> coords;
    steps.reserve(a.size() + b.size());
    coords.reserve(a.coords_.size() + b.coords_.size());
    auto take = [&](const Block& src, std::size_t i) {
      if (src.steps_[i] < cutoff) return;
      steps.push_back(src.steps_[i]);
      coords.insert(coords.end(), src.point(i), src.point(i) + src.dim_);
    };
    if (a.dim_ == 1) {
      // Both inputs are already in (coordinate, step) order.
      std::size_t i = 0, j = 0;
      while (i < a.size() || j < b.size()) {
        const bool from_a = j == b.size() ||
                            (i < a.size() && (a.coords_[i] < b.coords_[j] ||
                                              (a.coords_[i] == b.coords_[j] && a.steps_[i] < b.steps_[j])));
        if (from_a)
          take(a, i++);
        else
          take(b, j++);
      }
      return Block(a.dim_, a.metric_, std::move(steps), std::move(coords), Presorted{});
    }
    for (std::size_t i = 0; i < a.size(); ++i) take(a, i);
    for (std::size_t j = 0; j < b.size(); ++j) take(b, j);
    return Block(a.dim_, a.metric_, std::move(steps), std::move(coords));
  }

 private:
  struct Presorted {};
  Block(std::size_t dim, Metric metric, std::vector<StepIndex> steps, std::vector<double> coords, Presorted)
      : dim_(dim), metric_(metric), steps_(std::move(steps)), coords_(std::move(coords)) {
    finish_steps();
  }

  struct Node {
    std::uint32_t begin, end;
    std::int32_t left = -1, right = -1;
    StepIndex min_t, max_t;
  };

  double rank1(double x, std::size_t pos) const noexcept {
    const double c = coords_[pos];
    return metric_.rank(&x, &c, 1);
  }

  void finish_steps() {
    sorted_steps_ = steps_;
    std::sort(sorted_steps_.begin(), sorted_steps_.end());
  }

  void arrange() {
    const std::size_t n = steps_.size();
    std::vector<std::uint32_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<std::uint32_t>(i);
    if (dim_ == 1) {
      std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
        return coords_[a] < coords_[b] || (coords_[a] == coords_[b] && steps_[a] < steps_[b]);
      });
    } else if (n > 0) {
      build_node(order, 0, static_cast<std::uint32_t>(n));
    }
    std::vector<StepIndex> steps(n);
    std::vector<double> coords(n * dim_);
    for (std::size_t i = 0; i < n; ++i) {
      steps[i] = steps_[order[i]];
      std::copy_n(coords_.data() + order[i] * dim_, dim_, coords.data() + i * dim_);
    }
    steps_ = std::move(steps);
    coords_ = std::move(coords);
    if (dim_ > 1) finish_nodes();
    finish_steps();
  }

  // Builds the tree over order[begin, end) and returns the node id. Node
  // boxes and time ranges are filled in by finish_nodes() once the layout is
  // final.
  std::int32_t build_node(std::vector<std::uint32_t>& order, std::uint32_t begin, std::uint32_t end) {
    const auto id = static_cast<std::int32_t>(nodes_.size());
    nodes_.push_back(Node{begin, end, -1, -1, 0, 0});
    if (end - begin <= kLeafSize) return id;
    std::size_t axis = 0;
    double best_spread = -1.0;
    for (std::size_t ax = 0; ax < dim_; ++ax) {
      double lo = std::numeric_limits<double>::infinity(), hi = -lo;
      for (std::uint32_t i = begin; i < end; ++i) {
        const double c = coords_[order[i] * dim_ + ax];
        lo = std::min(lo, c);
        hi = std::max(hi, c);
      }
      if (hi - lo > best_spread) {
        best_spread = hi - lo;
        axis = ax;
      }
    }
    const std::uint32_t mid = begin + (end - begin) / 2;
    std::nth_element(order.begin() + begin, order.begin() + mid, order.begin() + end,
                     [&](std::uint32_t a, std::uint32_t b) {
                       const double ca = coords_[a * dim_ + axis], cb = coords_[b * dim_ + axis];
                       return ca < cb || (ca == cb && steps_[a] < steps_[b]);
                     });
    const auto left = build_node(order, begin, mid);
    const auto right = build_node(order, mid, end);
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
  }

  void finish_nodes() {
    boxes_.assign(nodes_.size() * 2 * dim_, 0.0);
    for (std::size_t id = nodes_.size(); id-- > 0;) {
      Node& node = nodes_[id];
      double* lo = boxes_.data() + id * 2 * dim_;
      double* hi = lo + dim_;
      std::fill(lo, lo + dim_, std::numeric_limits<double>::infinity());
      std::fill(hi, hi + dim_, -std::numeric_limits<double>::infinity());
      node.min_t = std::numeric_limits<StepIndex>::max();
      node.max_t = 0;
      for (std::uint32_t i = node.begin; i < node.end; ++i) {
        const double* p = point(i);
        for (std::size_t ax = 0; ax < dim_; ++ax) {
          lo[ax] = std::min(lo[ax], p[ax]);
          hi[ax] = std::max(hi[ax], p[ax]);
        }
        node.min_t = std::min(node.min_t, steps_[i]);
        node.max_t = std::max(node.max_t, steps_[i]);
      }
    }
  }

  void search_node(std::int32_t id, const double* q, StepIndex lo, StepIndex hi, KnnHeap& heap) const {
    const Node& node = nodes_[static_cast<std::size_t>(id)];
    if (node.max_t < lo || node.min_t >= hi) return;
    if (node.left < 0) {
      for (std::uint32_t i = node.begin; i < node.end; ++i) {
        const StepIndex t = steps_[i];
        if (t < lo || t >= hi) continue;
        const double r = metric_.rank(q, point(i), dim_);
        if (r <= heap.bound()) heap.offer(r, t, i);
      }
      return;
    }
    const double dl = box_rank(node.left, q), dr = box_rank(node.right, q);
    const std::int32_t first = dl <= dr ? node.left : node.right;
    const std::int32_t second = dl <= dr ? node.right : node.left;
    const double d_first = std::min(dl, dr), d_second = std::max(dl, dr);
    if (d_first <= heap.bound()) search_node(first, q, lo, hi, heap);
    if (d_second <= heap.bound()) search_node(second, q, lo, hi, heap);
  }

  double box_rank(std::int32_t id, const double* q) const noexcept {
    const double* lo = boxes_.data() + static_cast<std::size_t>(id) * 2 * dim_;
    return metric_.rank_to_box(q, lo, lo + dim_, dim_);
  }

  // Walks outward from x in order of distance on each side; the heap decides
  // ties, so equal-rank points are all offered before stopping.
  void search_line(double x, StepIndex lo, StepIndex hi, KnnHeap& heap) const {
    const auto n = static_cast<std::ptrdiff_t>(steps_.size());
    std::ptrdiff_t right = std::lower_bound(coords_.begin(), coords_.end(), x) - coords_.begin();
    std::ptrdiff_t left = right - 1;
    while (left >= 0 || right < n) {
      const double rl = left >= 0 ? rank1(x, static_cast<std::size_t>(left)) : std::numeric_limits<double>::infinity();
      const double rr = right < n ? rank1(x, static_cast<std::size_t>(right)) : std::numeric_limits<double>::infinity();
      const bool take_left = rl <= rr;
      const double r = take_left ? rl : rr;
      if (r > heap.bound()) break;
      const auto pos = static_cast<std::size_t>(take_left ? left-- : right++);
      const StepIndex t = steps_[pos];
      if (t >= lo && t < hi) heap.offer(r, t, static_cast<std::uint32_t>(pos));
    }
  }

  std::size_t dim_;
  Metric metric_;
  std::vector<StepIndex> steps_;
  std::vector<double> coords_;
  std::vector<StepIndex> sorted_steps_;
  std::vector<Node> nodes_;
  std::vector<double> boxes_;
};

}  // namespace detail

/// Per-action exact k-nearest-neighbor index over trajectory states with
/// optional time windows and time-prefix eviction.
///
/// Each action keeps a small unsorted insertion buffer plus a list of
/// immutable blocks merged like a binary counter, so inserts cost amortized
/// O(log n) rebuild work. Eviction below the watermark is logical at once and
/// physical when a block is entirely dead or more than half dead.
class NeighborIndex {
 public:
  static constexpr std::size_t kBufferSize = 32;

  NeighborIndex(std::size_t dim, std::size_t num_actions, Norm norm = Norm::L2)
      : dim_(dim), metric_(norm), actions_(num_actions) {
    if (dim == 0) throw InvalidInput("NeighborIndex: dim must be >= 1");
    if (num_actions == 0) throw InvalidInput("NeighborIndex: num_actions must be >= 1");
  }

  /// Static index with a single block per action.
  static NeighborIndex build(std::size_t dim, std::size_t num_actions, std::span<const IndexEntry> entries,
                             Norm norm = Norm::L2) {
    NeighborIndex index(dim, num_actions, norm);
    std::vector<std::vector<StepIndex>> steps(num_actions);
    std::vector<std::vector<double>> coords(num_actions);
    for (const auto& e : entries) {
      index.check_new(e.t, e.state, e.action);
      index.live_.insert(e.t);
      steps[e.action].push_back(e.t);
      coords[e.action].insert(coords[e.action].end(), e.state.coords().begin(), e.state.coords().end());
    }
    for (ActionId a = 0; a < num_actions; ++a)
      if (!steps[a].empty())
        index.actions_[a].blocks.emplace_back(dim, index.metric_, std::move(steps[a]), std::move(coords[a]));
    return index;
  }

  std::size_t dim() const noexcept { return dim_; }
  std::size_t num_actions() const noexcept { return actions_.size(); }
  Metric metric() const noexcept { return metric_; }
  StepIndex watermark() const noexcept { return watermark_; }

  /// Number of stored points with step >= watermark.
  std::size_t size() const noexcept {
    std::size_t total = 0;
    for (ActionId a = 0; a < actions_.size(); ++a) total += size(a);
    return total;
  }
  std::size_t size(ActionId a) const {
    const auto& store = actions_.at(a);
    std::size_t total = 0;
    for (const auto& b : store.blocks) total += b.size() - b.count_below(watermark_);
    for (StepIndex t : store.buffer_steps) total += t >= watermark_ ? 1 : 0;
    return total;
  }

  void insert(StepIndex t, const StateVec& s, ActionId a) {
    check_new(t, s, a);
    live_.insert(t);
    auto& store = actions_[a];
    store.buffer_steps.push_back(t);
    store.buffer_coords.insert(store.buffer_coords.end(), s.coords().begin(), s.coords().end());
    if (store.buffer_steps.size() >= kBufferSize) flush(store);
  }

  KnnResult query_knn(const StateVec& s, ActionId a, std::size_t k, Window window = {}) const {
    check_query(s, a, k, window);
    detail::KnnHeap heap(k);
    collect(s.data(), a, std::max(window.lo, watermark_), window.hi, heap);
    KnnResult result;
    auto& items = heap.sorted();
    result.neighbors.reserve(items.size());
    for (const auto& c : items) result.neighbors.push_back({c.t, metric_.rank_to_distance(c.rank)});
    result.truncated = result.neighbors.size() < k;
    return result;
  }

  /// Calls visit(t) for each of the k nearest (unordered) and returns the count.
  template <class Visit>
  std::size_t for_each_knn(const StateVec& s, ActionId a, std::size_t k, Window window, Visit&& visit) const {
    check_query(s, a, k, window);
    detail::KnnHeap heap(k);
    collect(s.data(), a, std::max(window.lo, watermark_), window.hi, heap);
    for (const auto& c : heap.items()) visit(c.t);
    return heap.items().size();
  }

  /// Distance to the farthest returned neighbor; nullopt if none.
  std::optional<double> knn_radius(const StateVec& s, ActionId a, std::size_t k, Window window = {}) const {
    const auto result = query_knn(s, a, k, window);
    if (result.empty()) return std::nullopt;
    return result.neighbors.back().distance;
  }

  void evict_before(StepIndex cutoff) {
    if (cutoff < watermark_)
      throw InvalidInput("evict_before: cutoff " + std::to_string(cutoff) + " below watermark " +
                         std::to_string(watermark_));
    watermark_ = cutoff;
    for (auto& store : actions_) {
      std::vector<detail::Block> kept;
      kept.reserve(store.blocks.size());
      for (auto& b : store.blocks) {
        const std::size_t dead = b.count_below(cutoff);
        if (dead == 0) {
          kept.push_back(std::move(b));
          continue;
        }
        if (dead < b.size() && 2 * dead <= b.size()) {
          kept.push_back(std::move(b));
          continue;
        }
        for (StepIndex t : b.layout())
          if (t < cutoff) live_.erase(t);
        if (dead < b.size()) kept.push_back(b.without_below(cutoff));
      }
      store.blocks = std::move(kept);
    }
  }

  /// Every stored point with step >= watermark, sorted by step.
  std::vector<IndexEntry> entries() const {
    std::vector<IndexEntry> out;
    for (ActionId a = 0; a < actions_.size(); ++a) {
      const auto& store = actions_[a];
      for (const auto& b : store.blocks)
        for (std::size_t i = 0; i < b.size(); ++i)
          if (b.layout()[i] >= watermark_)
            out.push_back({b.layout()[i], StateVec(std::span<const double>(b.point(i), dim_)), a});
      for (std::size_t i = 0; i < store.buffer_steps.size(); ++i)
        if (store.buffer_steps[i] >= watermark_)
          out.push_back({store.buffer_steps[i],
                         StateVec(std::span<const double>(store.buffer_coords.data() + i * dim_, dim_)), a});
    }
    std::sort(out.begin(), out.end(), [](const IndexEntry& x, const IndexEntry& y) { return x.t < y.t; });
    return out;
  }

  /// The single block of action `a` for a statically built index, or null
  /// when the action has no points.
  const detail::Block* static_block(ActionId a) const {
    const auto& store = actions_.at(a);
    if (!store.buffer_steps.empty() || store.blocks.size() > 1 ||
        (!store.blocks.empty() && store.blocks.front().min_step() < watermark_))
      throw InvalidInput("static_block: index is not a static single-block index");
    return store.blocks.empty() ? nullptr : &store.blocks.front();
  }

 private:
  struct ActionStore {
    std::vector<detail::Block> blocks;
    std::vector<StepIndex> buffer_steps;
    std::vector<double> buffer_coords;
  };

  void check_new(StepIndex t, const StateVec& s, ActionId a) const {
    require_dim(s, dim_, "NeighborIndex");
    if (a >= actions_.size()) throw InvalidInput("NeighborIndex: action id out of range");
    if (t < watermark_)
      throw InvalidInput("NeighborIndex: step " + std::to_string(t) + " is below the eviction watermark");
    if (live_.contains(t)) throw InvalidInput("NeighborIndex: duplicate step index " + std::to_string(t));
  }

  void check_query(const StateVec& s, ActionId a, std::size_t k, Window window) const {
    require_dim(s, dim_, "query_knn");
    if (a >= actions_.size()) throw InvalidInput("query_knn: action id out of range");
    if (k == 0) throw InvalidInput("query_knn: k must be >= 1");
    if (!(window.lo < window.hi)) throw InvalidInput("query_knn: empty window (lo >= hi)");
  }

  void collect(const double* q, ActionId a, StepIndex lo, StepIndex hi, detail::KnnHeap& heap) const {
    const auto& store = actions_[a];
    for (const auto& b : store.blocks) {
      if (b.max_step() < lo || b.min_step() >= hi) continue;
      b.search(q, lo, hi, heap);
    }
    for (std::size_t i = 0; i < store.buffer_steps.size(); ++i) {
      const StepIndex t = store.buffer_steps[i];
      if (t < lo || t >= hi) continue;
      const double r = metric_.rank(q, store.buffer_coords.data() + i * dim_, dim_);
      if (r <= heap.bound()) heap.offer(r, t, 0);
    }
  }

  void flush(ActionStore& store) {
    std::vector<StepIndex> steps;
    std::vector<double> coords;
    for (std::size_t i = 0; i < store.buffer_steps.size(); ++i) {
      if (store.buffer_steps[i] < watermark_) {
        live_.erase(store.buffer_steps[i]);
        continue;
      }
      steps.push_back(store.buffer_steps[i]);
      coords.insert(coords.end(), store.buffer_coords.begin() + static_cast<std::ptrdiff_t>(i * dim_),
                    store.buffer_coords.begin() + static_cast<std::ptrdiff_t>((i + 1) * dim_));
    }
    store.buffer_steps.clear();
    store.buffer_coords.clear();
    if (steps.empty()) return;
    store.blocks.emplace_back(dim_, metric_, std::move(steps), std::move(coords));
    auto& blocks = store.blocks;
    while (blocks.size() >= 2 && blocks[blocks.size() - 2].size() <= blocks.back().size()) {
      const auto& a = blocks[blocks.size() - 2];
      const auto& b = blocks.back();
      for (const auto* blk : {&a, &b})
        for (StepIndex t : blk->layout())
          if (t < watermark_) live_.erase(t);
      detail::Block merged = detail::Block::merge(a, b, watermark_);
      blocks.pop_back();
      blocks.pop_back();
      if (merged.size() > 0) blocks.push_back(std::move(merged));
    }
  }

  std::size_t dim_;
  Metric metric_;
  std::vector<ActionStore> actions_;
  StepIndex watermark_ = 0;
  std::unordered_set<StepIndex> live_;
};

}  // namespace nnql
