#pragma once

// Network-wide behavior of a classified packet: the hop sequence and where it
// ends (delivered, dropped, or looping).

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <variant>
#include <vector>

#include "apc/ap_tree.hpp"
#include "apc/atoms.hpp"
#include "apc/error.hpp"
#include "apc/network.hpp"
#include "apc/rewrite.hpp"

namespace apc {

enum class DropReason { AclIn, AclOut, NoRoute, RuleDrop };

constexpr const char* to_string(DropReason r) noexcept {
  switch (r) {
    case DropReason::AclIn: return "acl_in";
    case DropReason::AclOut: return "acl_out";
    case DropReason::NoRoute: return "no_route";
    case DropReason::RuleDrop: return "rule_drop";
  }
  return "unknown";
}

/// `tag` is the packet class at arrival: an atom id in the header plane, a
/// label in the label plane.
struct Hop {
  std::size_t box = 0;
  std::size_t in_port = 0;
  std::uint32_t tag = 0;
  std::optional<std::size_t> out_port;

  bool operator==(const Hop&) const = default;
};

struct Delivered {
  std::size_t box = 0;
  std::size_t port = 0;
  bool operator==(const Delivered&) const = default;
};
struct Dropped {
  std::size_t box = 0;
  DropReason reason = DropReason::NoRoute;
  bool operator==(const Dropped&) const = default;
};
/// The first (box, tag) reached twice past the in-ACL; in_port is where the repeat arrived.
struct Loop {
  std::size_t box = 0;
  std::size_t in_port = 0;
  std::uint32_t tag = 0;
  bool operator==(const Loop&) const = default;
};

using Disposition = std::variant<Delivered, Dropped, Loop>;

struct BehaviorReport {
  std::vector<Hop> hops;
  Disposition disposition;

  bool operator==(const BehaviorReport&) const = default;
};

/// What a box does with a packet class.
struct Forwarding {
  enum class Kind { Port, Drop, None } kind = Kind::None;
  std::size_t port = 0;
};

/// Shared traversal: in-ACL, forward, out-ACL, rewrite, follow link. Once a
/// packet is past a box's in-ACL its fate depends only on (box, tag), so a
/// repeat of that pair is a loop.
///
/// Plane must provide
///   bool permits(std::size_t box, std::size_t acl, std::uint32_t tag) const;
///   Forwarding forward(std::size_t box, std::uint32_t tag) const;
///   std::optional<std::uint32_t> rewrite(std::size_t box, std::uint32_t tag) const;
template <class Plane>
BehaviorReport walk_network(const NetworkSnapshot& snap, const Plane& plane, std::uint32_t tag, PortRef ingress) {
  if (ingress.box >= snap.boxes.size() || ingress.port >= snap.boxes[ingress.box].ports.size())
    throw Error(Errc::BadIngress, "ingress does not name a port");
  if (!snap.is_external(ingress)) throw Error(Errc::BadIngress, "ingress port '" + snap.port_name(ingress) + "' of box '" +
                                                                    snap.boxes[ingress.box].id + "' is linked");
  BehaviorReport report;
  std::set<std::pair<std::size_t, std::uint32_t>> visited;
  PortRef at = ingress;
  for (;;) {
    Hop hop{at.box, at.port, tag, std::nullopt};
    if (auto acl = snap.acl_at(at.box, at.port, Direction::In); acl && !plane.permits(at.box, *acl, tag)) {
      report.hops.push_back(hop);
      report.disposition = Dropped{at.box, DropReason::AclIn};
      return report;
    }
    if (!visited.emplace(at.box, tag).second) {
      report.disposition = Loop{at.box, at.port, tag};
      return report;
    }
    const auto fwd = plane.forward(at.box, tag);
    if (fwd.kind != Forwarding::Kind::Port) {
      report.hops.push_back(hop);
      report.disposition =
          Dropped{at.box, fwd.kind == Forwarding::Kind::Drop ? DropReason::RuleDrop : DropReason::NoRoute};
      return report;
    }
    hop.out_port = fwd.port;
    report.hops.push_back(hop);
    if (auto acl = snap.acl_at(at.box, fwd.port, Direction::Out); acl && !plane.permits(at.box, *acl, tag)) {
      report.disposition = Dropped{at.box, DropReason::AclOut};
      return report;
    }
    if (auto next = plane.rewrite(at.box, tag)) tag = *next;
    const PortRef out{at.box, fwd.port};
    const auto peer = snap.peer(out);
    if (!peer) {
      report.disposition = Delivered{out.box, out.port};
      return report;
    }
    at = *peer;
  }
}

/// Per-box forwarding, ACL and rewrite behavior expressed over atom ids.
struct BehaviorMap {
  static constexpr std::int32_t kDrop = -1;

  struct BoxMap {
    std::vector<std::vector<AtomId>> port_atoms;  // [port], sorted
    std::vector<AtomId> drop_atoms;
    std::unordered_map<AtomId, std::int32_t> decision;  // port index or kDrop
    std::vector<std::unordered_set<AtomId>> permit_atoms;  // [acl]
    std::unordered_map<AtomId, AtomId> atom_rewrite;
  };

  std::vector<BoxMap> boxes;

  bool permits(std::size_t box, std::size_t acl, std::uint32_t atom) const {
    return boxes[box].permit_atoms[acl].count(atom) != 0;
  }

  Forwarding forward(std::size_t box, std::uint32_t atom) const {
    const auto& d = boxes[box].decision;
    auto it = d.find(atom);
    if (it == d.end()) return {};
    if (it->second == kDrop) return {Forwarding::Kind::Drop, 0};
    return {Forwarding::Kind::Port, static_cast<std::size_t>(it->second)};
  }

  std::optional<std::uint32_t> rewrite(std::size_t box, std::uint32_t atom) const {
    const auto& r = boxes[box].atom_rewrite;
    auto it = r.find(atom);
    if (it == r.end()) return std::nullopt;
    return it->second;
  }
};

inline BehaviorMap compile_behavior_map(Engine& engine, const NetworkSnapshot& snap, const CompiledNetwork& compiled,
                                        const AtomSet& atoms) {
  if (compiled.engine != engine.id()) throw Error(Errc::EngineMismatch, "compiled network from another engine");
  BehaviorMap map;
  map.boxes.resize(snap.boxes.size());
  for (std::size_t b = 0; b < snap.boxes.size(); ++b) {
    auto& bm = map.boxes[b];
    const auto& box = snap.boxes[b];
    bm.port_atoms.resize(box.ports.size());
    auto claim = [&](AtomId a, std::int32_t decision) {
      if (!bm.decision.emplace(a, decision).second)
        throw Error(Errc::Inconsistent, "box '" + box.id + "': atom " + std::to_string(a) + " leaves through two ports");
    };
    for (std::size_t p = 0; p < box.ports.size(); ++p) {
      bm.port_atoms[p] = atoms.members_or_constant(compiled.port_preds[b][p]);
      for (auto a : bm.port_atoms[p]) claim(a, static_cast<std::int32_t>(p));
    }
    bm.drop_atoms = atoms.members_or_constant(compiled.drop_preds[b]);
    for (auto a : bm.drop_atoms) claim(a, BehaviorMap::kDrop);
    for (const auto& acl_pred : compiled.acl_preds[b]) {
      const auto ids = atoms.members_or_constant(acl_pred);
      bm.permit_atoms.emplace_back(ids.begin(), ids.end());
    }
    if (box.rewrite && compiled.rewrite_match[b])
      for (auto a : atoms.members_or_constant(*compiled.rewrite_match[b]))
        bm.atom_rewrite.emplace(a, rewrite_image(engine, atoms, *box.rewrite, a));
  }
  return map;
}

inline BehaviorReport trace(const BehaviorMap& map, const NetworkSnapshot& snap, AtomId atom, PortRef ingress) {
  return walk_network(snap, map, atom, ingress);
}

/// Classify, then trace: the end-to-end behavior query.
inline BehaviorReport identify(const APTree& tree, const BehaviorMap& map, const NetworkSnapshot& snap,
                               const Engine& engine, const Header& h, PortRef ingress) {
  return trace(map, snap, tree.classify(engine, h), ingress);
}

inline json report_to_json(const BehaviorReport& r, const NetworkSnapshot& snap, const char* tag_key = "atom") {
  json hops = json::array();
  for (const auto& h : r.hops) {
    json jh{{"box", snap.boxes[h.box].id}, {"in_port", snap.boxes[h.box].ports[h.in_port]}, {tag_key, h.tag}};
    if (h.out_port) jh["out_port"] = snap.boxes[h.box].ports[*h.out_port];
    hops.push_back(std::move(jh));
  }
  json disp = std::visit(
      [&](const auto& d) -> json {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, Delivered>)
          return {{"kind", "delivered"}, {"box", snap.boxes[d.box].id}, {"port", snap.boxes[d.box].ports[d.port]}};
        else if constexpr (std::is_same_v<T, Dropped>)
          return {{"kind", "dropped"}, {"box", snap.boxes[d.box].id}, {"reason", to_string(d.reason)}};
        else
          return {{"kind", "loop"},
                  {"box", snap.boxes[d.box].id},
                  {"in_port", snap.boxes[d.box].ports[d.in_port]},
                  {tag_key, d.tag}};
      },
      r.disposition);
  return {{"hops", std::move(hops)}, {"disposition", std::move(disp)}};
}

}  // namespace apc
