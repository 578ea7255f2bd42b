#pragma once

// Label-based outsourcing: each atom becomes an opaque 32-bit label, every
// in-cloud box matches labels only, and header rewrites become label rewrites.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "apc/ap_tree.hpp"
#include "apc/atoms.hpp"
#include "apc/behavior.hpp"
#include "apc/error.hpp"
#include "apc/network.hpp"
#include "apc/rewrite.hpp"

namespace apc {

using Label = std::uint32_t;

/// What crosses into the cloud: the label plus the header carried as opaque
/// bytes (possibly encrypted; never inspected in-cloud).
struct LabeledPacket {
  Label label = 0;
  std::vector<std::uint8_t> payload;
};

class LabelPlane {
 public:
  static constexpr std::int32_t kDrop = -1;

  struct AclTable {
    std::size_t port = 0;
    Direction dir = Direction::In;
    std::unordered_set<Label> permit;
  };

  struct BoxTable {
    std::unordered_map<Label, std::int32_t> forward;  // port index or kDrop
    std::vector<AclTable> acls;                       // parallel to the box's ACLs
    std::unordered_map<Label, Label> rewrite;
  };

  std::uint64_t epoch = 0;
  std::vector<BoxTable> boxes;

  Label encode(AtomId atom) const {
    auto it = label_of_.find(atom);
    if (it == label_of_.end()) throw Error(Errc::PreconditionViolation, "atom " + std::to_string(atom) + " has no label");
    return it->second;
  }

  AtomId decode(Label label) const {
    auto it = atom_of_.find(label);
    if (it == atom_of_.end()) throw Error(Errc::UnknownLabel, "label " + std::to_string(label) + " is not assigned");
    return it->second;
  }

  bool assigned(Label label) const { return atom_of_.count(label) != 0; }
  std::size_t label_count() const noexcept { return label_of_.size(); }

  // Decision interface for walk_network.
  bool permits(std::size_t box, std::size_t acl, Label label) const { return boxes[box].acls[acl].permit.count(label) != 0; }

  Forwarding forward(std::size_t box, Label label) const {
    const auto& f = boxes[box].forward;
    auto it = f.find(label);
    if (it == f.end()) return {};
    if (it->second == kDrop) return {Forwarding::Kind::Drop, 0};
    return {Forwarding::Kind::Port, static_cast<std::size_t>(it->second)};
  }

  std::optional<Label> rewrite(std::size_t box, Label label) const {
    const auto& r = boxes[box].rewrite;
    auto it = r.find(label);
    if (it == r.end()) return std::nullopt;
    return it->second;
  }

  /// Keyed pseudorandom injective assignment; collisions are retried.
  void assign_labels(const AtomSet& atoms, std::uint64_t agent_key) {
    label_of_.clear();
    atom_of_.clear();
    for (const auto& a : atoms.atoms) {
      for (std::uint64_t attempt = 0;; ++attempt) {
        const Label l = derive_label(agent_key, a.id, attempt);
        if (atom_of_.emplace(l, a.id).second) {
          label_of_.emplace(a.id, l);
          break;
        }
        if (attempt > 64) throw Error(Errc::LabelCollision, "could not assign a label to atom " + std::to_string(a.id));
      }
    }
  }

 private:
  static std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

  static Label derive_label(std::uint64_t key, AtomId atom, std::uint64_t attempt) {
    return static_cast<Label>(mix(mix(key) ^ mix((std::uint64_t{atom} << 8) | attempt)) >> 32);
  }

  std::unordered_map<AtomId, Label> label_of_;
  std::unordered_map<Label, AtomId> atom_of_;
};

inline LabelPlane build_label_plane(Engine& engine, const AtomSet& atoms, const CompiledNetwork& compiled,
                                    const NetworkSnapshot& snap, std::uint64_t agent_key, std::uint64_t epoch = 0) {
  if (compiled.engine != engine.id()) throw Error(Errc::EngineMismatch, "compiled network from another engine");
  LabelPlane plane;
  plane.epoch = epoch;
  plane.assign_labels(atoms, agent_key);
  plane.boxes.resize(snap.boxes.size());
  for (std::size_t b = 0; b < snap.boxes.size(); ++b) {
    const auto& box = snap.boxes[b];
    auto& table = plane.boxes[b];
    for (std::size_t p = 0; p < box.ports.size(); ++p)
      for (auto a : atoms.members_or_constant(compiled.port_preds[b][p]))
        table.forward.emplace(plane.encode(a), static_cast<std::int32_t>(p));
    for (auto a : atoms.members_or_constant(compiled.drop_preds[b])) table.forward.emplace(plane.encode(a), LabelPlane::kDrop);
    for (std::size_t i = 0; i < box.acls.size(); ++i) {
      LabelPlane::AclTable acl{*snap.port_index(b, box.acls[i].port), box.acls[i].dir, {}};
      for (auto a : atoms.members_or_constant(compiled.acl_preds[b][i])) acl.permit.insert(plane.encode(a));
      table.acls.push_back(std::move(acl));
    }
    if (box.rewrite && compiled.rewrite_match[b])
      for (auto a : atoms.members_or_constant(*compiled.rewrite_match[b]))
        table.rewrite.emplace(plane.encode(a), plane.encode(rewrite_image(engine, atoms, *box.rewrite, a)));
  }
  return plane;
}

/// The local agent: classify, attach the label, carry the header opaquely.
inline LabeledPacket agent_encode(const LabelPlane& plane, const APTree& tree, const Engine& engine, const Header& h) {
  LabeledPacket pkt;
  pkt.label = plane.encode(tree.classify(engine, h));
  for (auto w : h.words())
    for (int shift = 56; shift >= 0; shift -= 8) pkt.payload.push_back(static_cast<std::uint8_t>(w >> shift));
  return pkt;
}

/// In-cloud processing: every decision is a label-table lookup.
inline BehaviorReport simulate_cloud(const LabelPlane& plane, const NetworkSnapshot& snap, const LabeledPacket& pkt,
                                     PortRef ingress) {
  return walk_network(snap, plane, pkt.label, ingress);
}

/// Serialized box tables: labels, ports and verdicts only.
inline json label_tables_to_json(const LabelPlane& plane, const NetworkSnapshot& snap) {
  json boxes = json::array();
  for (std::size_t b = 0; b < snap.boxes.size(); ++b) {
    const auto& t = plane.boxes[b];
    const auto& ports = snap.boxes[b].ports;
    std::vector<std::pair<Label, std::int32_t>> fwd(t.forward.begin(), t.forward.end());
    std::sort(fwd.begin(), fwd.end());
    json forward = json::array(), drop = json::array();
    for (auto [l, p] : fwd) {
      if (p == LabelPlane::kDrop)
        drop.push_back(l);
      else
        forward.push_back({{"label", l}, {"port", ports[static_cast<std::size_t>(p)]}});
    }
    json acls = json::array();
    for (const auto& a : t.acls) {
      std::vector<Label> permit(a.permit.begin(), a.permit.end());
      std::sort(permit.begin(), permit.end());
      acls.push_back({{"port", ports[a.port]}, {"dir", a.dir == Direction::In ? "in" : "out"}, {"permit", permit}});
    }
    std::vector<std::pair<Label, Label>> rw(t.rewrite.begin(), t.rewrite.end());
    std::sort(rw.begin(), rw.end());
    json rewrite = json::array();
    for (auto [from, to] : rw) rewrite.push_back({{"from", from}, {"to", to}});
    boxes.push_back({{"box", snap.boxes[b].id}, {"forward", std::move(forward)}, {"drop", std::move(drop)},
                     {"acls", std::move(acls)}, {"rewrite", std::move(rewrite)}});
  }
  return {{"epoch", plane.epoch}, {"boxes", std::move(boxes)}};
}

/// Everything in serialized tables that is not a label, port, verdict or
/// structural key. Empty means the tables reveal no header or rule content.
inline std::vector<std::string> privacy_violations(const json& tables) {
  static const std::set<std::string> allowed{"epoch", "boxes", "box",    "forward", "label", "port", "drop",
                                             "acls",  "dir",   "permit", "rewrite", "from",  "to"};
  static const std::set<std::string> label_keys{"label", "from", "to"};
  std::vector<std::string> out;
  auto is_label = [](const json& v) { return v.is_number_unsigned() && v.get<std::uint64_t>() <= 0xffffffffull; };
  std::function<void(const json&, const std::string&)> walk = [&](const json& j, const std::string& path) {
    if (j.is_object()) {
      for (const auto& [k, v] : j.items()) {
        const auto here = path + "/" + k;
        if (!allowed.count(k)) out.push_back(here + ": key not allowed");
        if (label_keys.count(k) && !is_label(v)) out.push_back(here + ": not a 32-bit label");
        if ((k == "permit" || k == "drop") && v.is_array())
          for (const auto& e : v)
            if (!is_label(e)) out.push_back(here + ": non-label entry");
        if (k == "dir" && v != "in" && v != "out") out.push_back(here + ": bad direction");
        if ((k == "port" || k == "box") && !v.is_string()) out.push_back(here + ": expected an identifier");
        walk(v, here);
      }
    } else if (j.is_array()) {
      for (std::size_t i = 0; i < j.size(); ++i) walk(j[i], path + "/" + std::to_string(i));
    }
  };
  walk(tables, "");
  return out;
}

struct Sample {
  enum class Kind { Exhaustive, Random, Given } kind = Kind::Random;
  std::size_t count = 10000;
  std::uint64_t seed = 1;
  std::vector<Header> headers;

  static Sample exhaustive() { return {Kind::Exhaustive, 0, 0, {}}; }
  static Sample random(std::size_t n, std::uint64_t seed) { return {Kind::Random, n, seed, {}}; }
  static Sample given(std::vector<Header> hs) { return {Kind::Given, hs.size(), 0, std::move(hs)}; }
};

/// Walks `sample` in order, calling f(header). Exhaustive enumeration is
/// limited to layouts of at most 24 bits.
template <class F>
void for_each_sample(const HeaderLayout& layout, const Sample& sample, F&& f) {
  const unsigned width = layout.total_width();
  switch (sample.kind) {
    case Sample::Kind::Exhaustive: {
      if (width > 24) throw Error(Errc::PreconditionViolation, "exhaustive sampling needs a layout of at most 24 bits");
      for (std::uint64_t v = 0; v < (std::uint64_t{1} << width); ++v) f(Header::from_uint(width, v));
      break;
    }
    case Sample::Kind::Random: {
      std::mt19937_64 rng(sample.seed);
      for (std::size_t i = 0; i < sample.count; ++i) {
        Header h(width);
        for (unsigned b = 0; b < width; b += 64) {
          const auto chunk = std::min(64u, width - b);
          h.set_bits(b, chunk, chunk == 64 ? rng() : rng() & field_max(chunk));
        }
        f(h);
      }
      break;
    }
    case Sample::Kind::Given:
      for (const auto& h : sample.headers) f(h);
      break;
  }
}

struct Divergence {
  Header header;
  PortRef ingress;
  std::size_t box = 0;  // where the two planes first disagree
  json expected;
  json actual;
};

struct EquivalenceReport {
  std::size_t checked = 0;
  std::size_t divergent = 0;
  std::vector<Divergence> divergences;  // the first few, for diagnostics

  bool ok() const noexcept { return divergent == 0; }
};

namespace detail {

constexpr AtomId kUndecodable = 0xffffffffu;

inline BehaviorReport decode_report(const LabelPlane& plane, BehaviorReport r) {
  auto decode = [&](std::uint32_t l) { return plane.assigned(l) ? plane.decode(l) : kUndecodable; };
  for (auto& h : r.hops) h.tag = decode(h.tag);
  if (auto* loop = std::get_if<Loop>(&r.disposition)) loop->tag = decode(loop->tag);
  return r;
}

inline std::size_t disagreement_box(const BehaviorReport& a, const BehaviorReport& b) {
  const auto n = std::min(a.hops.size(), b.hops.size());
  for (std::size_t i = 0; i < n; ++i)
    if (!(a.hops[i] == b.hops[i])) return a.hops[i].box;
  if (n < a.hops.size()) return a.hops[n].box;
  if (n < b.hops.size()) return b.hops[n].box;
  return std::visit([](const auto& d) { return d.box; }, a.disposition);
}

}  // namespace detail

/// Header-plane identify vs label-plane simulate_cloud for every sampled
/// header and every external ingress.
inline EquivalenceReport equivalence_check(const LabelPlane& plane, const APTree& tree, const BehaviorMap& map,
                                           const NetworkSnapshot& snap, const Engine& engine, const Sample& sample,
                                           std::size_t keep = 32) {
  EquivalenceReport report;
  for_each_sample(snap.layout, sample, [&](const Header& h) {
    const auto pkt = agent_encode(plane, tree, engine, h);
    for (const auto& ingress : snap.external_ports()) {
      ++report.checked;
      const auto expected = identify(tree, map, snap, engine, h, ingress);
      const auto actual = detail::decode_report(plane, simulate_cloud(plane, snap, pkt, ingress));
      if (expected == actual) continue;
      ++report.divergent;
      if (report.divergences.size() < keep)
        report.divergences.push_back({h, ingress, detail::disagreement_box(expected, actual),
                                      report_to_json(expected, snap), report_to_json(actual, snap)});
    }
  });
  return report;
}

inline json equivalence_to_json(const EquivalenceReport& r, const NetworkSnapshot& snap) {
  json divs = json::array();
  for (const auto& d : r.divergences)
    divs.push_back({{"header", header_to_json(d.header, snap.layout)},
                    {"ingress", {snap.boxes[d.ingress.box].id, snap.port_name(d.ingress)}},
                    {"box", snap.boxes[d.box].id},
                    {"expected", d.expected},
                    {"actual", d.actual}});
  return {{"checked", r.checked}, {"divergent", r.divergent}, {"divergences", std::move(divs)}};
}

}  // namespace apc
