#pragma once

// Brute-force references that never touch decision diagrams: constraints are
// evaluated arithmetically on header bits and the network is simulated rule
// by rule on concrete headers.

#include <algorithm>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "apc/apc.hpp"

namespace oracle {

using namespace apc;

inline std::vector<Header> all_headers(const HeaderLayout& layout) {
  const unsigned w = layout.total_width();
  if (w > 20) throw std::logic_error("exhaustive enumeration past 20 bits");
  std::vector<Header> out;
  out.reserve(std::size_t{1} << w);
  for (std::uint64_t v = 0; v < (std::uint64_t{1} << w); ++v) out.push_back(Header::from_uint(w, v));
  return out;
}

inline Header random_header(const HeaderLayout& layout, std::mt19937_64& rng) {
  Header h(layout);
  for (std::size_t f = 0; f < layout.fields().size(); ++f) h.set_field(layout, f, rng() & field_max(layout.width(f)));
  return h;
}

/// Exhaustive when the layout is small enough, otherwise `n` seeded samples.
inline std::vector<Header> headers_for(const HeaderLayout& layout, std::size_t n, std::uint64_t seed) {
  if (layout.total_width() <= 12) return all_headers(layout);
  std::mt19937_64 rng(seed);
  std::vector<Header> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(random_header(layout, rng));
  return out;
}

inline bool holds(const HeaderLayout& layout, const FieldConstraint& c, const Header& h) {
  const auto f = layout.index_of(c.field);
  const unsigned w = layout.width(f);
  const std::uint64_t v = h.field(layout, f);
  if (const auto* e = std::get_if<Exact>(&c.match)) return v == e->value;
  if (const auto* p = std::get_if<Prefix>(&c.match)) {
    if (p->length == 0) return true;
    const unsigned drop = w - p->length;
    return (v >> drop) == (p->value >> drop);
  }
  const auto& r = std::get<Range>(c.match);
  return r.lo <= v && v <= r.hi;
}

inline bool holds_all(const HeaderLayout& layout, const std::vector<FieldConstraint>& cs, const Header& h) {
  return std::all_of(cs.begin(), cs.end(), [&](const auto& c) { return holds(layout, c, h); });
}

inline bool acl_permits(const HeaderLayout& layout, const Acl& acl, const Header& h) {
  for (const auto& e : acl.entries)
    if (holds_all(layout, e.match, h)) return e.verdict == Verdict::Permit;
  return acl.default_verdict == Verdict::Permit;
}

struct Route {
  enum class Kind { Port, Drop, None } kind = Kind::None;
  std::size_t port = 0;
};

/// Highest-priority matching rule.
inline Route route(const HeaderLayout& layout, const Box& box, const Header& h) {
  const FwdRule* best = nullptr;
  for (const auto& r : box.rules)
    if ((!best || r.priority > best->priority) && holds_all(layout, r.match, h)) best = &r;
  if (!best) return {};
  if (!best->forward) return {Route::Kind::Drop, 0};
  const auto it = std::find(box.ports.begin(), box.ports.end(), *best->forward);
  return {Route::Kind::Port, static_cast<std::size_t>(it - box.ports.begin())};
}

inline Header apply_rewrite(const HeaderLayout& layout, const RewriteSpec& spec, Header h) {
  for (const auto& s : spec.sets) h.set_field(layout, layout.index_of(s.field), s.value);
  return h;
}

inline const Acl* acl_on(const Box& box, const std::string& port, Direction dir) {
  for (const auto& a : box.acls)
    if (a.port == port && a.dir == dir) return &a;
  return nullptr;
}

struct RefHop {
  std::size_t box = 0;
  std::size_t in_port = 0;
  Header header;
  std::optional<std::size_t> out_port;
};

struct RefReport {
  std::vector<RefHop> hops;
  Disposition disposition;  // Loop::tag unused
};

inline std::optional<PortRef> find_peer(const NetworkSnapshot& snap, std::size_t box, std::size_t port) {
  const auto& id = snap.boxes[box].id;
  const auto& name = snap.boxes[box].ports[port];
  auto locate = [&](const std::string& b, const std::string& p) {
    for (std::size_t i = 0; i < snap.boxes.size(); ++i)
      if (snap.boxes[i].id == b) {
        const auto& ports = snap.boxes[i].ports;
        return PortRef{i, static_cast<std::size_t>(std::find(ports.begin(), ports.end(), p) - ports.begin())};
      }
    throw std::logic_error("dangling link");
  };
  for (const auto& l : snap.links) {
    if (l.box_a == id && l.port_a == name) return locate(l.box_b, l.port_b);
    if (l.box_b == id && l.port_b == name) return locate(l.box_a, l.port_a);
  }
  return std::nullopt;
}

/// Header-level network simulation straight from the snapshot's rules.
inline RefReport simulate(const NetworkSnapshot& snap, Header h, PortRef at) {
  const auto& layout = snap.layout;
  RefReport rep;
  std::set<std::pair<std::size_t, std::string>> seen;
  for (;;) {
    const auto& box = snap.boxes[at.box];
    RefHop hop{at.box, at.port, h, std::nullopt};
    if (const auto* acl = acl_on(box, box.ports[at.port], Direction::In); acl && !acl_permits(layout, *acl, h)) {
      rep.hops.push_back(hop);
      rep.disposition = Dropped{at.box, DropReason::AclIn};
      return rep;
    }
    if (!seen.emplace(at.box, h.to_string()).second) {
      rep.disposition = Loop{at.box, at.port, 0};
      return rep;
    }
    const auto r = route(layout, box, h);
    if (r.kind != Route::Kind::Port) {
      rep.hops.push_back(hop);
      rep.disposition = Dropped{at.box, r.kind == Route::Kind::Drop ? DropReason::RuleDrop : DropReason::NoRoute};
      return rep;
    }
    hop.out_port = r.port;
    rep.hops.push_back(hop);
    if (const auto* acl = acl_on(box, box.ports[r.port], Direction::Out); acl && !acl_permits(layout, *acl, h)) {
      rep.disposition = Dropped{at.box, DropReason::AclOut};
      return rep;
    }
    if (box.rewrite && holds_all(layout, box.rewrite->match, h)) h = apply_rewrite(layout, *box.rewrite, h);
    const auto peer = find_peer(snap, at.box, r.port);
    if (!peer) {
      rep.disposition = Delivered{at.box, r.port};
      return rep;
    }
    at = *peer;
  }
}

inline std::string describe(const Disposition& d) {
  return std::visit(
      [](const auto& x) -> std::string {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, Delivered>)
          return "delivered(" + std::to_string(x.box) + "," + std::to_string(x.port) + ")";
        else if constexpr (std::is_same_v<T, Dropped>)
          return "dropped(" + std::to_string(x.box) + "," + to_string(x.reason) + ")";
        else
          return "loop(" + std::to_string(x.box) + ")";
      },
      d);
}

/// Empty when the atom-level report agrees with the header-level one. The
/// atom of every hop must contain the header seen there. A loop found at the
/// atom level may close before the header-level walk repeats a header, so for
/// loops the atom-level hops need only be a prefix.
inline std::string compare(const BehaviorReport& got, const RefReport& ref, const AtomSet& atoms, const Engine& engine,
                           bool tags_are_atoms = true) {
  std::ostringstream why;
  const bool loop = std::holds_alternative<Loop>(ref.disposition);
  if (loop != std::holds_alternative<Loop>(got.disposition) ||
      (!loop && !(got.disposition == ref.disposition))) {
    why << "disposition " << describe(got.disposition) << " vs reference " << describe(ref.disposition);
    return why.str();
  }
  if (loop ? got.hops.size() > ref.hops.size() : got.hops.size() != ref.hops.size()) {
    why << got.hops.size() << " hops vs reference " << ref.hops.size();
    return why.str();
  }
  if (loop) {
    const auto& l = std::get<Loop>(got.disposition);
    if (got.hops.empty()) return "loop without hops";
    bool repeated = false;
    for (const auto& hop : got.hops) repeated |= hop.box == l.box && hop.tag == l.tag;
    if (!repeated) return "loop state never visited";
  }
  for (std::size_t i = 0; i < got.hops.size(); ++i) {
    const auto& g = got.hops[i];
    const auto& r = ref.hops[i];
    if (g.box != r.box || g.in_port != r.in_port || g.out_port != r.out_port) {
      why << "hop " << i << " differs";
      return why.str();
    }
    if (tags_are_atoms && !engine.eval(atoms.at(g.tag).pred, r.header)) {
      why << "hop " << i << " atom " << g.tag << " does not contain header " << r.header.to_string();
      return why.str();
    }
  }
  return {};
}

/// Headers grouped by their evaluation vector over `preds`: the brute-force
/// atomic partition restricted to `headers`.
template <class Eval>
std::map<std::vector<bool>, std::vector<std::size_t>> signatures(std::size_t npreds, const std::vector<Header>& headers,
                                                                 Eval&& eval) {
  std::map<std::vector<bool>, std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < headers.size(); ++i) {
    std::vector<bool> sig(npreds);
    for (std::size_t p = 0; p < npreds; ++p) sig[p] = eval(p, headers[i]);
    out[std::move(sig)].push_back(i);
  }
  return out;
}

/// Cells of `cells` that are not contained in exactly one atom of `fresh`.
/// Fresh atoms are disjoint, so containment in the atom holding any one of
/// the cell's headers settles it.
inline std::size_t refinement_violations(Engine& engine, const AtomSet& cells, const AtomSet& fresh) {
  std::size_t bad = 0;
  for (const auto& c : cells.atoms) {
    const auto w = engine.witness(c.pred);
    if (!w) {
      ++bad;
      continue;
    }
    bad += !engine.implies(c.pred, fresh.at(atom_of_header(fresh, engine, *w)).pred);
  }
  return bad;
}

/// Leaf atoms of a tree: the leaves must be exactly the atoms of `atoms`.
inline bool leaves_match_atoms(const APTree& tree, const AtomSet& atoms) {
  std::vector<AtomId> leaves;
  tree.for_each_leaf([&](const APTree::Node& n, unsigned, const auto&) { leaves.push_back(n.atom); });
  std::sort(leaves.begin(), leaves.end());
  std::vector<AtomId> ids;
  for (const auto& a : atoms.atoms) ids.push_back(a.id);
  return leaves == ids;
}

}  // namespace oracle
