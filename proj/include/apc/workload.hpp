#pragma once

// Seeded synthetic networks, update streams and header samples.

#include <algorithm>
#include <cstdint>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "apc/ap_tree.hpp"
#include "apc/error.hpp"
#include "apc/network.hpp"
#include "apc/updates.hpp"

namespace apc {

struct CountRange {
  std::size_t lo = 0;
  std::size_t hi = 0;
};

struct WorkloadSpec {
  std::uint64_t seed = 1;
  HeaderLayout layout = HeaderLayout::five_tuple();
  std::string dst_field = "dst";
  std::size_t box_count = 8;
  CountRange rules_per_box{4, 16};
  CountRange acl_entries_per_box{1, 4};
  CountRange prefix_length{8, 24};
  double acl_probability = 0.3;
  std::size_t extra_links = 2;
  std::size_t max_ports_per_box = 8;
  std::size_t external_ports_per_box = 1;
  std::size_t rewriter_count = 0;
  double drop_rule_probability = 0.05;
  double default_route_probability = 0.5;
  std::size_t prefix_pool = 0;  // distinct destination prefixes shared by all boxes; 0 picks 2 * rules_per_box.hi
  std::size_t update_count = 0;
  double add_ratio = 0.6;
  std::size_t header_count = 0;
};

struct Workload {
  NetworkSnapshot snapshot;
  std::vector<UpdateOp> updates;
  std::vector<Header> headers;
};

namespace detail {

class WorkloadRng {
 public:
  explicit WorkloadRng(std::uint64_t seed) : rng_(seed) {}
  std::uint64_t below(std::uint64_t n) { return uniform_below(rng_, n); }
  std::uint64_t between(std::uint64_t lo, std::uint64_t hi) { return lo + below(hi - lo + 1); }
  bool chance(double p) { return static_cast<double>(rng_() >> 11) * 0x1.0p-53 < p; }
  std::uint64_t bits(unsigned width) { return rng_() & field_max(width); }
  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

inline std::uint64_t prefix_mask(unsigned width, unsigned length) {
  if (length == 0) return 0;
  return field_max(width) & ~(length >= width ? 0 : field_max(width - length));
}

}  // namespace detail

inline Workload generate(const WorkloadSpec& spec) {
  const auto& layout = spec.layout;
  const auto dst = layout.find(spec.dst_field);
  if (!dst) throw Error(Errc::InfeasibleSpec, "layout has no destination field '" + spec.dst_field + "'");
  const unsigned dst_width = layout.width(*dst);
  if (spec.box_count == 0) throw Error(Errc::InfeasibleSpec, "box_count must be positive");
  if (spec.rules_per_box.lo > spec.rules_per_box.hi || spec.acl_entries_per_box.lo > spec.acl_entries_per_box.hi ||
      spec.prefix_length.lo > spec.prefix_length.hi)
    throw Error(Errc::InfeasibleSpec, "range with lo > hi");
  if (spec.prefix_length.lo == 0 || spec.prefix_length.hi > dst_width)
    throw Error(Errc::InfeasibleSpec, "prefix lengths must lie in [1, width of '" + spec.dst_field + "']");
  if (spec.rules_per_box.hi >= 1024) throw Error(Errc::InfeasibleSpec, "at most 1023 rules per box");
  if (spec.external_ports_per_box >= spec.max_ports_per_box && spec.box_count > 1)
    throw Error(Errc::InfeasibleSpec, "no port capacity left for links");
  if (spec.rewriter_count > spec.box_count) throw Error(Errc::InfeasibleSpec, "more rewriters than boxes");

  detail::WorkloadRng rng(spec.seed);
  const std::size_t n = spec.box_count;
  const std::size_t link_cap = spec.max_ports_per_box - std::min(spec.external_ports_per_box, spec.max_ports_per_box);

  Workload out;
  auto& snap = out.snapshot;
  snap.layout = layout;
  const std::size_t digits = std::max<std::size_t>(2, std::to_string(n - 1).size());
  for (std::size_t i = 0; i < n; ++i) {
    Box b;
    auto num = std::to_string(i);
    b.id = "b" + std::string(digits - num.size(), '0') + num;
    snap.boxes.push_back(std::move(b));
  }
  auto new_port = [&](std::size_t b) {
    auto& ports = snap.boxes[b].ports;
    ports.push_back("p" + std::to_string(ports.size()));
    return ports.back();
  };

  std::set<std::pair<std::size_t, std::size_t>> linked;
  auto link = [&](std::size_t a, std::size_t b) {
    snap.links.push_back({snap.boxes[a].id, new_port(a), snap.boxes[b].id, new_port(b)});
    linked.emplace(std::min(a, b), std::max(a, b));
  };
  auto has_capacity = [&](std::size_t b) { return snap.boxes[b].ports.size() < link_cap; };

  for (std::size_t i = 1; i < n; ++i) {
    std::vector<std::size_t> open;
    for (std::size_t j = 0; j < i; ++j)
      if (has_capacity(j)) open.push_back(j);
    if (open.empty()) throw Error(Errc::InfeasibleSpec, "port capacity too small for a connected topology");
    link(i, open[rng.below(open.size())]);
  }
  for (std::size_t k = 0; k < spec.extra_links; ++k) {
    std::vector<std::pair<std::size_t, std::size_t>> candidates;
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = a + 1; b < n; ++b)
        if (has_capacity(a) && has_capacity(b) && !linked.count({a, b})) candidates.emplace_back(a, b);
    if (candidates.empty()) throw Error(Errc::InfeasibleSpec, "more links than port capacity allows");
    const auto [a, b] = candidates[rng.below(candidates.size())];
    link(a, b);
  }
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t e = 0; e < spec.external_ports_per_box; ++e) new_port(b);

  // Destination prefixes shared network-wide, as in a real routing table.
  const std::size_t pool_target = spec.prefix_pool ? spec.prefix_pool : std::max<std::size_t>(2 * spec.rules_per_box.hi, 4);
  std::vector<Prefix> pool;
  {
    std::set<std::pair<std::uint64_t, unsigned>> seen;
    for (std::size_t attempt = 0; pool.size() < pool_target && attempt < pool_target * 20; ++attempt) {
      const auto len = static_cast<unsigned>(rng.between(spec.prefix_length.lo, spec.prefix_length.hi));
      const auto value = rng.bits(dst_width) & detail::prefix_mask(dst_width, len);
      if (seen.emplace(value, len).second) pool.push_back({value, len});
    }
  }

  auto random_constraint = [&](std::size_t field) -> FieldConstraint {
    const auto& f = layout.fields()[field];
    if (field == *dst && !pool.empty()) {
      const auto& p = pool[rng.below(pool.size())];
      return FieldConstraint::prefix(f.name, p.value, p.length);
    }
    if (f.width <= 8 && rng.chance(0.5)) return FieldConstraint::exact(f.name, rng.bits(f.width));
    if (f.width >= 12 && rng.chance(0.4)) {
      const auto lo = rng.bits(f.width);
      const auto span = rng.bits(std::min(f.width, 10u));
      return FieldConstraint::range(f.name, lo, std::min(field_max(f.width), lo + span));
    }
    const auto len = static_cast<unsigned>(rng.between(1, std::min(f.width, 16u)));
    return FieldConstraint::prefix(f.name, rng.bits(f.width) & detail::prefix_mask(f.width, len), len);
  };

  std::vector<std::size_t> rewriters(n);
  for (std::size_t i = 0; i < n; ++i) rewriters[i] = i;
  shuffle_in_place(rewriters, rng.engine());
  rewriters.resize(spec.rewriter_count);

  for (std::size_t b = 0; b < n; ++b) {
    auto& box = snap.boxes[b];
    const auto& ports = box.ports;
    const auto k = std::min<std::size_t>(rng.between(spec.rules_per_box.lo, spec.rules_per_box.hi), pool.size());
    std::vector<std::size_t> pick(pool.size());
    for (std::size_t i = 0; i < pick.size(); ++i) pick[i] = i;
    shuffle_in_place(pick, rng.engine());
    for (std::size_t r = 0; r < k; ++r) {
      const auto& p = pool[pick[r]];
      FwdRule rule;
      // Longest prefix wins; the ordinal keeps equal-length priorities unique.
      rule.priority = static_cast<std::int64_t>(p.length) * 1024 + static_cast<std::int64_t>(r);
      rule.match = {FieldConstraint::prefix(spec.dst_field, p.value, p.length)};
      if (!rng.chance(spec.drop_rule_probability)) rule.forward = ports[rng.below(ports.size())];
      box.rules.push_back(std::move(rule));
    }
    if (rng.chance(spec.default_route_probability)) {
      FwdRule def;
      def.priority = 0;
      def.forward = ports[rng.below(ports.size())];
      box.rules.push_back(std::move(def));
    }
    if (rng.chance(spec.acl_probability)) {
      Acl acl;
      acl.port = ports[rng.below(ports.size())];
      acl.dir = rng.chance(0.5) ? Direction::In : Direction::Out;
      acl.default_verdict = rng.chance(0.8) ? Verdict::Permit : Verdict::Deny;
      const auto entries = rng.between(spec.acl_entries_per_box.lo, spec.acl_entries_per_box.hi);
      for (std::size_t e = 0; e < entries; ++e) {
        AclEntry entry;
        const auto terms = rng.between(1, std::min<std::size_t>(2, layout.fields().size()));
        std::set<std::size_t> used;
        while (used.size() < terms) used.insert(rng.below(layout.fields().size()));
        for (auto f : used) entry.match.push_back(random_constraint(f));
        entry.verdict = rng.chance(0.5) ? Verdict::Permit : Verdict::Deny;
        acl.entries.push_back(std::move(entry));
      }
      box.acls.push_back(std::move(acl));
      box.kind = BoxKind::Firewall;
    }
  }

  for (auto b : rewriters) {
    auto& box = snap.boxes[b];
    box.kind = BoxKind::Rewriter;
    RewriteSpec rw;
    if (rng.chance(0.7)) rw.match.push_back(random_constraint(*dst));
    std::vector<std::size_t> targets;
    for (std::size_t f = 0; f < layout.fields().size(); ++f)
      if (f != *dst) targets.push_back(f);
    const auto field = targets.empty() ? *dst : targets[rng.below(targets.size())];
    rw.sets.push_back({layout.fields()[field].name, rng.bits(layout.width(field))});
    box.rewrite = std::move(rw);
  }

  snap.validate();

  // Update stream: adds of fresh destination-prefix predicates (optionally
  // narrowed by a second field) and removals of currently live ones.
  std::vector<std::vector<FieldConstraint>> live;
  std::set<std::string> live_keys;
  auto key_of = [](const std::vector<FieldConstraint>& m) { return constraints_to_json(m).dump(); };
  for (std::size_t u = 0; u < spec.update_count; ++u) {
    if (live.empty() || rng.chance(spec.add_ratio)) {
      for (int attempt = 0; attempt < 64; ++attempt) {
        std::vector<FieldConstraint> m;
        const auto len = static_cast<unsigned>(rng.between(spec.prefix_length.lo, spec.prefix_length.hi));
        m.push_back(FieldConstraint::prefix(spec.dst_field, rng.bits(dst_width) & detail::prefix_mask(dst_width, len), len));
        if (layout.fields().size() > 1 && rng.chance(0.3)) {
          std::size_t f;
          do f = rng.below(layout.fields().size());
          while (f == *dst);
          const auto w = layout.width(f);
          const auto l = static_cast<unsigned>(rng.between(1, std::min(w, 8u)));
          m.push_back(FieldConstraint::prefix(layout.fields()[f].name, rng.bits(w) & detail::prefix_mask(w, l), l));
        }
        if (!live_keys.insert(key_of(m)).second) continue;
        out.updates.push_back({UpdateOp::Kind::Add, PredRef::inline_match(m)});
        live.push_back(std::move(m));
        break;
      }
    } else {
      const auto i = rng.below(live.size());
      out.updates.push_back({UpdateOp::Kind::Remove, PredRef::inline_match(live[i])});
      live_keys.erase(key_of(live[i]));
      live.erase(live.begin() + static_cast<std::ptrdiff_t>(i));
    }
  }

  // Headers: half uniform, half steered inside a pool prefix so that the
  // long-prefix atoms are exercised too.
  for (std::size_t i = 0; i < spec.header_count; ++i) {
    Header h(layout);
    for (std::size_t f = 0; f < layout.fields().size(); ++f) h.set_field(layout, f, rng.bits(layout.width(f)));
    if (!pool.empty() && rng.chance(0.5)) {
      const auto& p = pool[rng.below(pool.size())];
      const auto mask = detail::prefix_mask(dst_width, p.length);
      h.set_field(layout, *dst, (p.value & mask) | (h.field(layout, *dst) & ~mask));
    }
    out.headers.push_back(std::move(h));
  }
  return out;
}

}  // namespace apc
