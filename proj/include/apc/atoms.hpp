#pragma once

// Atomic predicates: the coarsest partition of header space in which every
// source predicate is a union of blocks.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <span>
#include <unordered_map>
#include <vector>

#include "apc/error.hpp"
#include "apc/predicate.hpp"

namespace apc {

using AtomId = std::uint32_t;

struct Atom {
  AtomId id = 0;
  Predicate pred;
};

struct AtomSet {
  std::vector<Atom> atoms;  // sorted by id
  std::unordered_map<Predicate, std::vector<AtomId>, PredicateHash> membership;  // sorted ids
  std::vector<Predicate> sources;  // live source predicates, in refinement order
  AtomId next_id = 0;

  std::size_t size() const noexcept { return atoms.size(); }

  const Atom* find(AtomId id) const {
    auto it = std::lower_bound(atoms.begin(), atoms.end(), id, [](const Atom& a, AtomId v) { return a.id < v; });
    return it != atoms.end() && it->id == id ? &*it : nullptr;
  }

  const Atom& at(AtomId id) const {
    if (const auto* a = find(id)) return *a;
    throw Error(Errc::PreconditionViolation, "no atom with id " + std::to_string(id));
  }

  /// Dense position of `id` in `atoms`.
  std::size_t position(AtomId id) const {
    auto it = std::lower_bound(atoms.begin(), atoms.end(), id, [](const Atom& a, AtomId v) { return a.id < v; });
    if (it == atoms.end() || it->id != id) throw Error(Errc::PreconditionViolation, "no atom with id " + std::to_string(id));
    return static_cast<std::size_t>(it - atoms.begin());
  }

  const std::vector<AtomId>& members(Predicate p) const {
    auto it = membership.find(p);
    if (it == membership.end())
      throw Error(Errc::MissingMembership, "predicate " + std::to_string(p.node) + " has no atom membership");
    return it->second;
  }

  /// Atoms of a predicate that may be constant (false -> none, true -> all).
  std::vector<AtomId> members_or_constant(Predicate p) const {
    if (p.is_false()) return {};
    if (p.is_true()) {
      std::vector<AtomId> all;
      for (const auto& a : atoms) all.push_back(a.id);
      return all;
    }
    return members(p);
  }
};

/// Iterative refinement: each predicate splits every cell it straddles into
/// (inside, outside), inside first. The cells are kept as the leaves of a
/// refinement tree whose internal nodes remember their region, so a predicate
/// only visits the subtrees it actually touches. Atom ids follow leaf order.
inline AtomSet compute_atoms(Engine& engine, std::span<const Predicate> preds) {
  for (const auto& p : preds) engine.check(p);

  constexpr std::uint32_t kLeaf = std::numeric_limits<std::uint32_t>::max();
  struct Cell {
    Predicate region;
    std::uint32_t inside_child = kLeaf;
    std::uint32_t outside_child = kLeaf;
    std::vector<std::uint32_t> inside;  // indices into preds containing the whole region
  };
  std::vector<Cell> cells{{engine.top(), kLeaf, kLeaf, {}}};

  std::vector<std::uint32_t> stack;
  for (std::uint32_t i = 0; i < preds.size(); ++i) {
    const auto p = preds[i];
    const auto not_p = engine.neg(p);
    stack.assign(1, 0);
    while (!stack.empty()) {
      const auto c = stack.back();
      stack.pop_back();
      const auto region = cells[c].region;
      if (!engine.intersects(region, p)) continue;
      if (!engine.intersects(region, not_p)) {
        cells[c].inside.push_back(i);
        continue;
      }
      if (cells[c].inside_child != kLeaf) {
        stack.push_back(cells[c].outside_child);
        stack.push_back(cells[c].inside_child);
        continue;
      }
      const auto t = engine.conj(region, p);
      const auto f = engine.conj(region, not_p);
      const auto at = static_cast<std::uint32_t>(cells.size());
      cells.push_back({t, kLeaf, kLeaf, {i}});
      cells.push_back({f, kLeaf, kLeaf, {}});
      cells[c].inside_child = at;
      cells[c].outside_child = at + 1;
    }
  }

  AtomSet out;
  out.sources.assign(preds.begin(), preds.end());
  for (const auto& p : preds) out.membership.try_emplace(p);
  // In-order walk, inside child first; `path` holds the marks of the ancestors.
  std::vector<std::uint32_t> path;
  std::vector<std::pair<std::uint32_t, std::size_t>> walk{{0, 0}};
  while (!walk.empty()) {
    const auto [c, depth] = walk.back();
    walk.pop_back();
    path.resize(depth);
    const auto& cell = cells[c];
    path.insert(path.end(), cell.inside.begin(), cell.inside.end());
    if (cell.inside_child != kLeaf) {
      walk.emplace_back(cell.outside_child, path.size());
      walk.emplace_back(cell.inside_child, path.size());
      continue;
    }
    const auto id = static_cast<AtomId>(out.atoms.size());
    out.atoms.push_back({id, cell.region});
    for (auto i : path) {
      auto& m = out.membership[preds[i]];
      if (m.empty() || m.back() != id) m.push_back(id);
    }
  }
  out.next_id = static_cast<AtomId>(out.atoms.size());
  return out;
}

/// Linear-scan reference classification.
inline AtomId atom_of_header(const AtomSet& atoms, const Engine& engine, const Header& h) {
  for (const auto& a : atoms.atoms)
    if (engine.eval(a.pred, h)) return a.id;
  throw Error(Errc::Inconsistent, "no atom contains header " + h.to_string());
}

}  // namespace apc
