#pragma once

// The AP Tree: a binary decision tree whose internal nodes test network
// predicates and whose leaves are atomic predicates.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <limits>
#include <memory>
#include <mutex>
#include <numeric>
#include <random>
#include <span>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "apc/atoms.hpp"
#include "apc/error.hpp"
#include "apc/predicate.hpp"

namespace apc {

enum class StrategyKind { GreedyBalance, DeclaredOrder, Random };

struct BuildStrategy {
  StrategyKind kind = StrategyKind::GreedyBalance;
  std::uint64_t seed = 0;

  static BuildStrategy greedy() { return {StrategyKind::GreedyBalance, 0}; }
  static BuildStrategy declared() { return {StrategyKind::DeclaredOrder, 0}; }
  static BuildStrategy random(std::uint64_t seed) { return {StrategyKind::Random, seed}; }
};

struct Rational {
  std::uint64_t num = 0;
  std::uint64_t den = 1;

  static Rational make(std::uint64_t n, std::uint64_t d) {
    if (d == 0) return {0, 1};
    const auto g = std::gcd(n, d);
    return g == 0 ? Rational{0, 1} : Rational{n / g, d / g};
  }
  double value() const noexcept { return static_cast<double>(num) / static_cast<double>(den); }
  bool operator==(const Rational&) const = default;
  friend bool operator<=(const Rational& a, const Rational& b) {
    return static_cast<unsigned __int128>(a.num) * b.den <= static_cast<unsigned __int128>(b.num) * a.den;
  }
};

/// Uniform integer in [0, bound) from a 64-bit engine, independent of the
/// standard library's distribution implementation.
template <class Rng>
std::uint64_t uniform_below(Rng& rng, std::uint64_t bound) {
  if (bound <= 1) return 0;
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x;
  do x = rng();
  while (x >= limit);
  return x % bound;
}

template <class T, class Rng>
void shuffle_in_place(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_below(rng, i)]);
}

class APTree {
 public:
  static constexpr std::uint32_t kNone = std::numeric_limits<std::uint32_t>::max();

  struct Node {
    Predicate pred;  // unused on leaves
    std::uint32_t on_true = kNone;
    std::uint32_t on_false = kNone;
    AtomId atom = 0;  // leaves only

    bool is_leaf() const noexcept { return on_true == kNone; }
  };

  struct Walk {
    AtomId atom = 0;
    unsigned evaluations = 0;
  };

  std::uint64_t version = 0;
  std::uint32_t engine = 0;
  std::vector<Node> nodes;
  std::uint32_t root = 0;
  std::unordered_set<Predicate, PredicateHash> removed_preds;
  std::uint64_t structural_updates = 0;
  double baseline_avg_depth = 0.0;  // avg leaf depth of the last full build

  AtomId classify(const Engine& e, const Header& h) const { return walk(e, h).atom; }

  Walk walk(const Engine& e, const Header& h) const {
    if (e.id() != engine) throw Error(Errc::EngineMismatch, "tree was built on another engine");
    if (h.width() != e.layout().total_width())
      throw Error(Errc::LengthMismatch, "header width does not match layout");
    Walk w;
    const Node* n = &nodes[root];
    while (!n->is_leaf()) {
      ++w.evaluations;
      n = &nodes[e.eval_unchecked(n->pred.node, h) ? n->on_true : n->on_false];
    }
    w.atom = n->atom;
    return w;
  }

  /// f(leaf, depth, path) where path holds (predicate, branch taken) from the root.
  template <class F>
  void for_each_leaf(F&& f) const {
    std::vector<std::pair<Predicate, bool>> path;
    visit(root, 0, path, f);
  }

  std::size_t leaf_count() const {
    std::size_t n = 0;
    for (const auto& nd : nodes) n += nd.is_leaf() ? 1 : 0;
    return n;
  }

  Rational avg_leaf_depth() const {
    std::uint64_t sum = 0, leaves = 0;
    depths([&](unsigned d) {
      sum += d;
      ++leaves;
    });
    return Rational::make(sum, leaves);
  }

  unsigned max_depth() const {
    unsigned m = 0;
    depths([&](unsigned d) { m = std::max(m, d); });
    return m;
  }

 private:
  template <class F>
  void visit(std::uint32_t i, unsigned depth, std::vector<std::pair<Predicate, bool>>& path, F& f) const {
    const auto& n = nodes[i];
    if (n.is_leaf()) {
      f(n, depth, std::as_const(path));
      return;
    }
    path.emplace_back(n.pred, true);
    visit(n.on_true, depth + 1, path, f);
    path.back().second = false;
    visit(n.on_false, depth + 1, path, f);
    path.pop_back();
  }

  template <class F>
  void depths(F&& f) const {
    if (nodes.empty()) return;
    std::vector<std::pair<std::uint32_t, unsigned>> stack{{root, 0}};
    while (!stack.empty()) {
      auto [i, d] = stack.back();
      stack.pop_back();
      const auto& n = nodes[i];
      if (n.is_leaf()) {
        f(d);
      } else {
        stack.emplace_back(n.on_true, d + 1);
        stack.emplace_back(n.on_false, d + 1);
      }
    }
  }
};

/// Recursive construction over (reachable atoms, remaining predicates).
/// Predicates that do not split the reachable set are dropped at that node,
/// which yields the pruned tree directly.
inline APTree build_tree(const Engine& engine, const AtomSet& atoms, std::span<const Predicate> preds,
                         BuildStrategy strategy) {
  const std::size_t n = atoms.size();
  const std::size_t words = (n + 63) / 64;

  std::vector<std::uint32_t> order(preds.size());
  std::iota(order.begin(), order.end(), 0u);
  if (strategy.kind == StrategyKind::Random) {
    std::mt19937_64 rng(strategy.seed);
    shuffle_in_place(order, rng);
  }

  std::vector<std::vector<std::uint64_t>> bits(preds.size(), std::vector<std::uint64_t>(words, 0));
  for (std::size_t c = 0; c < preds.size(); ++c)
    for (auto id : atoms.members_or_constant(preds[c])) {
      const auto pos = atoms.position(id);
      bits[c][pos >> 6] |= std::uint64_t{1} << (pos & 63);
    }
  auto has = [&](std::uint32_t c, std::uint32_t pos) { return (bits[c][pos >> 6] >> (pos & 63)) & 1u; };

  APTree tree;
  tree.engine = engine.id();
  if (n == 0) throw Error(Errc::Inconsistent, "atom set is empty");

  struct Work {
    std::uint32_t slot;
    std::vector<std::uint32_t> reach;  // dense atom positions
    std::vector<std::uint32_t> cands;  // candidate indices into preds, in strategy order
  };
  std::vector<Work> stack;
  {
    Work w{0, std::vector<std::uint32_t>(n), order};
    std::iota(w.reach.begin(), w.reach.end(), 0u);
    tree.nodes.emplace_back();
    stack.push_back(std::move(w));
  }

  while (!stack.empty()) {
    Work w = std::move(stack.back());
    stack.pop_back();
    if (w.reach.size() == 1) {
      tree.nodes[w.slot].atom = atoms.atoms[w.reach.front()].id;
      continue;
    }
    const std::size_t total = w.reach.size();
    std::size_t chosen = w.cands.size();
    std::vector<std::uint32_t> rest;
    if (strategy.kind == StrategyKind::GreedyBalance) {
      std::size_t best_score = 0;
      for (std::size_t k = 0; k < w.cands.size(); ++k) {
        const auto c = w.cands[k];
        std::size_t in = 0;
        for (auto pos : w.reach) in += has(c, pos);
        if (in == 0 || in == total) continue;
        const auto score = std::min(in, total - in);
        // Candidates arrive in declared order, so ties keep the lowest index.
        if (score > best_score) {
          if (chosen != w.cands.size()) rest.push_back(w.cands[chosen]);
          best_score = score;
          chosen = k;
        } else {
          rest.push_back(c);
        }
      }
      std::sort(rest.begin(), rest.end());
    } else {
      for (std::size_t k = 0; k < w.cands.size(); ++k) {
        const auto c = w.cands[k];
        std::size_t in = 0;
        for (auto pos : w.reach) in += has(c, pos);
        if (in != 0 && in != total) {
          chosen = k;
          rest.assign(w.cands.begin() + static_cast<std::ptrdiff_t>(k) + 1, w.cands.end());
          break;
        }
      }
    }
    if (chosen == w.cands.size())
      throw Error(Errc::Inconsistent, std::to_string(total) + " atoms reach a node but no predicate separates them");

    const auto c = w.cands[chosen];
    Work t{static_cast<std::uint32_t>(tree.nodes.size()), {}, rest};
    Work f{static_cast<std::uint32_t>(tree.nodes.size() + 1), {}, std::move(rest)};
    for (auto pos : w.reach) (has(c, pos) ? t.reach : f.reach).push_back(pos);
    tree.nodes[w.slot].pred = preds[c];
    tree.nodes[w.slot].on_true = t.slot;
    tree.nodes[w.slot].on_false = f.slot;
    tree.nodes.emplace_back();
    tree.nodes.emplace_back();
    stack.push_back(std::move(f));
    stack.push_back(std::move(t));
  }
  tree.baseline_avg_depth = tree.avg_leaf_depth().value();
  return tree;
}

struct TreeUpdate {
  APTree tree;
  AtomSet atoms;
};

/// Places p at the bottom of the tree: every leaf whose atom straddles p
/// becomes a test of p over two fresh atoms.
inline TreeUpdate add_predicate(const APTree& old_tree, Engine& engine, const AtomSet& old_atoms, Predicate p) {
  engine.check(p);
  if (p.is_constant()) throw Error(Errc::ConstantPredicate, "cannot add a constant predicate");
  if (old_tree.engine != engine.id()) throw Error(Errc::EngineMismatch, "tree was built on another engine");

  TreeUpdate out{old_tree, {}};
  auto& tree = out.tree;
  auto& atoms = out.atoms;
  atoms.next_id = old_atoms.next_id;
  atoms.sources = old_atoms.sources;

  std::unordered_map<AtomId, std::pair<AtomId, AtomId>> split;
  std::vector<AtomId> inside;
  std::vector<Atom> added;
  const auto not_p = engine.neg(p);
  const std::size_t original_nodes = tree.nodes.size();
  for (std::uint32_t i = 0; i < original_nodes; ++i) {
    if (!tree.nodes[i].is_leaf()) continue;
    const AtomId a = tree.nodes[i].atom;
    const auto& atom = old_atoms.at(a);
    if (!engine.intersects(atom.pred, p)) continue;
    if (!engine.intersects(atom.pred, not_p)) {
      inside.push_back(a);
      continue;
    }
    const auto t = engine.conj(atom.pred, p);
    const auto f = engine.conj(atom.pred, not_p);
    const AtomId t_id = atoms.next_id++;
    const AtomId f_id = atoms.next_id++;
    split.emplace(a, std::pair{t_id, f_id});
    added.push_back({t_id, t});
    added.push_back({f_id, f});
    inside.push_back(t_id);
    const auto slot = static_cast<std::uint32_t>(tree.nodes.size());
    tree.nodes.push_back({{}, APTree::kNone, APTree::kNone, t_id});
    tree.nodes.push_back({{}, APTree::kNone, APTree::kNone, f_id});
    tree.nodes[i].pred = p;
    tree.nodes[i].on_true = slot;
    tree.nodes[i].on_false = slot + 1;
  }

  for (const auto& a : old_atoms.atoms)
    if (!split.count(a.id)) atoms.atoms.push_back(a);
  std::sort(added.begin(), added.end(), [](const Atom& x, const Atom& y) { return x.id < y.id; });
  atoms.atoms.insert(atoms.atoms.end(), added.begin(), added.end());

  atoms.membership.reserve(old_atoms.membership.size() + 1);
  for (const auto& [q, ids] : old_atoms.membership) {
    if (split.empty()) {
      atoms.membership.emplace(q, ids);
      continue;
    }
    std::vector<AtomId> next;
    next.reserve(ids.size() + 4);
    bool changed = false;
    for (auto id : ids) {
      if (auto it = split.find(id); it != split.end()) {
        next.push_back(it->second.first);
        next.push_back(it->second.second);
        changed = true;
      } else {
        next.push_back(id);
      }
    }
    if (changed) std::sort(next.begin(), next.end());
    atoms.membership.emplace(q, std::move(next));
  }
  std::sort(inside.begin(), inside.end());
  atoms.membership[p] = std::move(inside);
  if (std::find(atoms.sources.begin(), atoms.sources.end(), p) == atoms.sources.end()) atoms.sources.push_back(p);

  tree.removed_preds.erase(p);
  ++tree.structural_updates;
  ++tree.version;
  return out;
}

/// Drops p from the bookkeeping; the tree keeps classifying correctly because
/// its leaves are a refinement of the remaining predicates' atoms.
inline TreeUpdate remove_predicate(const APTree& old_tree, const AtomSet& old_atoms, Predicate p) {
  auto it = std::find(old_atoms.sources.begin(), old_atoms.sources.end(), p);
  if (it == old_atoms.sources.end())
    throw Error(Errc::UnknownPredicate, "predicate " + std::to_string(p.node) + " is not a live source");
  TreeUpdate out{old_tree, old_atoms};
  out.atoms.sources.erase(out.atoms.sources.begin() + (it - old_atoms.sources.begin()));
  out.atoms.membership.erase(p);
  out.tree.removed_preds.insert(p);
  ++out.tree.structural_updates;
  ++out.tree.version;
  return out;
}

/// Fresh atoms from the live sources and a fresh greedy tree, one version up.
inline TreeUpdate rebuild(Engine& engine, const APTree& old_tree, const AtomSet& current) {
  TreeUpdate out{{}, compute_atoms(engine, current.sources)};
  out.tree = build_tree(engine, out.atoms, out.atoms.sources, BuildStrategy::greedy());
  out.tree.version = old_tree.version + 1;
  return out;
}

struct RebuildPolicy {
  std::uint64_t max_structural_updates = 256;
  double depth_ratio = 1.5;
};

inline bool rebuild_due(const APTree& tree, const RebuildPolicy& policy) {
  if (tree.structural_updates >= policy.max_structural_updates) return true;
  return tree.baseline_avg_depth > 0 && tree.avg_leaf_depth().value() > policy.depth_ratio * tree.baseline_avg_depth;
}

/// One published generation: tree plus the atom partition its leaves refer to.
struct Epoch {
  std::uint64_t version = 0;
  std::shared_ptr<const APTree> tree;
  std::shared_ptr<const AtomSet> atoms;
};

/// Readers classify against the current epoch without locking; writers
/// (updates, rebuilds, anything else that builds predicates) are serialized
/// and publish the next epoch atomically. Readers that loaded the old epoch
/// finish on it undisturbed.
class Classifier {
 public:
  Classifier(Engine& engine, AtomSet atoms, APTree tree, RebuildPolicy policy = {})
      : engine_(engine), policy_(policy) {
    publish({std::move(tree), std::move(atoms)});
  }

  /// Builds the initial greedy tree over `sources`.
  static std::unique_ptr<Classifier> create(Engine& engine, std::span<const Predicate> sources,
                                            RebuildPolicy policy = {}) {
    auto atoms = compute_atoms(engine, sources);
    auto tree = build_tree(engine, atoms, atoms.sources, BuildStrategy::greedy());
    return std::make_unique<Classifier>(engine, std::move(atoms), std::move(tree), policy);
  }

  std::shared_ptr<const Epoch> current() const { return std::atomic_load_explicit(&epoch_, std::memory_order_acquire); }

  AtomId classify(const Header& h) const { return current()->tree->classify(engine_, h); }

  const Engine& engine() const noexcept { return engine_; }
  const RebuildPolicy& policy() const noexcept { return policy_; }

  /// Runs f(Engine&) under the writer lock.
  template <class F>
  decltype(auto) with_engine(F&& f) {
    std::lock_guard lock(writer_);
    return f(engine_);
  }

  std::uint64_t add(Predicate p) {
    std::lock_guard lock(writer_);
    const auto e = current();
    return publish(add_predicate(*e->tree, engine_, *e->atoms, p));
  }

  std::uint64_t add(std::span<const FieldConstraint> match) {
    std::lock_guard lock(writer_);
    const auto p = engine_.match_all(match);
    const auto e = current();
    return publish(add_predicate(*e->tree, engine_, *e->atoms, p));
  }

  std::uint64_t remove(Predicate p) {
    std::lock_guard lock(writer_);
    const auto e = current();
    return publish(remove_predicate(*e->tree, *e->atoms, p));
  }

  /// Rebuilds off the query path; queries keep using the old epoch until the
  /// new one is published.
  std::uint64_t rebuild() {
    std::lock_guard lock(writer_);
    const auto e = current();
    return publish(apc::rebuild(engine_, *e->tree, *e->atoms));
  }

  bool rebuild_due() const { return apc::rebuild_due(*current()->tree, policy_); }

 private:
  std::uint64_t publish(TreeUpdate&& u) {
    auto next = std::make_shared<Epoch>();
    const auto version = u.tree.version;
    next->version = version;
    next->tree = std::make_shared<const APTree>(std::move(u.tree));
    next->atoms = std::make_shared<const AtomSet>(std::move(u.atoms));
    std::atomic_store_explicit(&epoch_, std::shared_ptr<const Epoch>(std::move(next)), std::memory_order_release);
    return version;
  }

  Engine& engine_;
  RebuildPolicy policy_;
  std::mutex writer_;
  std::shared_ptr<const Epoch> epoch_;
};

}  // namespace apc
