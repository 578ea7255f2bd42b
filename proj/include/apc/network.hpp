#pragma once

// Network snapshots (boxes, ports, links, rules, ACLs, rewriters), their JSON
// interchange format, and compilation of every box into predicates.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <tuple>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "apc/error.hpp"
#include "apc/predicate.hpp"

namespace apc {

using json = nlohmann::json;

enum class BoxKind { Switch, Firewall, Rewriter };
enum class Direction { In, Out };
enum class Verdict { Permit, Deny };

struct FwdRule {
  std::int64_t priority = 0;  // higher wins
  std::vector<FieldConstraint> match;
  std::optional<std::string> forward;  // nullopt: drop
};

struct AclEntry {
  std::vector<FieldConstraint> match;
  Verdict verdict = Verdict::Deny;
};

struct Acl {
  std::string port;
  Direction dir = Direction::In;
  std::vector<AclEntry> entries;
  Verdict default_verdict = Verdict::Deny;
};

struct FieldAssignment {
  std::string field;
  std::uint64_t value = 0;
};

struct RewriteSpec {
  std::vector<FieldConstraint> match;
  std::vector<FieldAssignment> sets;
};

struct Box {
  std::string id;
  BoxKind kind = BoxKind::Switch;
  std::vector<std::string> ports;
  std::vector<FwdRule> rules;
  std::vector<Acl> acls;
  std::optional<RewriteSpec> rewrite;
};

struct Link {
  std::string box_a, port_a, box_b, port_b;
};

/// (box index, port index) into a snapshot.
struct PortRef {
  std::size_t box = 0;
  std::size_t port = 0;

  bool operator==(const PortRef&) const = default;
  auto operator<=>(const PortRef&) const = default;
};

/// A validated network. Mutating the public members requires calling
/// `validate()` again before use, which rebuilds the lookup indexes.
class NetworkSnapshot {
 public:
  HeaderLayout layout = HeaderLayout::five_tuple();
  std::vector<Box> boxes;
  std::vector<Link> links;

  void validate() {
    box_index_.clear();
    port_index_.assign(boxes.size(), {});
    peers_.assign(boxes.size(), {});
    acl_index_.assign(boxes.size(), {});
    external_.clear();

    for (std::size_t b = 0; b < boxes.size(); ++b) {
      const auto& box = boxes[b];
      if (box.id.empty()) throw Error(Errc::InvalidSnapshot, "box #" + std::to_string(b) + " has an empty id");
      if (!box_index_.emplace(box.id, b).second)
        throw Error(Errc::InvalidSnapshot, "duplicate box id '" + box.id + "'");
      for (std::size_t p = 0; p < box.ports.size(); ++p)
        if (!port_index_[b].emplace(box.ports[p], p).second)
          throw Error(Errc::DuplicatePort, "box '" + box.id + "': duplicate port '" + box.ports[p] + "'");
      peers_[b].assign(box.ports.size(), std::nullopt);

      std::set<std::int64_t> priorities;
      for (const auto& r : box.rules) {
        if (!priorities.insert(r.priority).second)
          throw Error(Errc::InvalidSnapshot,
                      "box '" + box.id + "': duplicate rule priority " + std::to_string(r.priority));
        if (r.forward && !port_index_[b].count(*r.forward))
          throw Error(Errc::InvalidSnapshot,
                      "box '" + box.id + "': rule priority " + std::to_string(r.priority) +
                          " forwards to unknown port '" + *r.forward + "'");
        check_constraints(box, r.match, "rule priority " + std::to_string(r.priority));
      }
      for (std::size_t a = 0; a < box.acls.size(); ++a) {
        const auto& acl = box.acls[a];
        auto port = port_index_[b].find(acl.port);
        if (port == port_index_[b].end())
          throw Error(Errc::InvalidSnapshot, "box '" + box.id + "': ACL attached to unknown port '" + acl.port + "'");
        if (!acl_index_[b].emplace(std::pair{port->second, acl.dir}, a).second)
          throw Error(Errc::InvalidSnapshot, "box '" + box.id + "': two ACLs on port '" + acl.port + "' " +
                                                 (acl.dir == Direction::In ? "in" : "out"));
        for (const auto& e : acl.entries) check_constraints(box, e.match, "ACL on port '" + acl.port + "'");
      }
      if (box.rewrite) {
        if (box.kind != BoxKind::Rewriter)
          throw Error(Errc::InvalidSnapshot, "box '" + box.id + "': rewrite given on a non-rewriter box");
        check_constraints(box, box.rewrite->match, "rewrite match");
        std::set<std::string> fields;
        for (const auto& s : box.rewrite->sets) {
          auto f = layout.find(s.field);
          if (!f) throw Error(Errc::BadConstraint, "box '" + box.id + "': rewrite sets unknown field '" + s.field + "'");
          if (s.value > field_max(layout.width(*f)))
            throw Error(Errc::BadConstraint, "box '" + box.id + "': rewrite value too wide for '" + s.field + "'");
          if (!fields.insert(s.field).second)
            throw Error(Errc::BadConstraint, "box '" + box.id + "': rewrite sets '" + s.field + "' twice");
        }
      }
    }

    for (const auto& l : links) {
      const PortRef a = resolve(l.box_a, l.port_a);
      const PortRef b = resolve(l.box_b, l.port_b);
      if (a == b) throw Error(Errc::InvalidSnapshot, "link connects port '" + l.port_a + "' to itself");
      for (const auto& end : {a, b})
        if (peers_[end.box][end.port])
          throw Error(Errc::DuplicatePort, "box '" + boxes[end.box].id + "': port '" + boxes[end.box].ports[end.port] +
                                               "' appears in more than one link");
      peers_[a.box][a.port] = b;
      peers_[b.box][b.port] = a;
    }

    for (std::size_t b = 0; b < boxes.size(); ++b)
      for (std::size_t p = 0; p < boxes[b].ports.size(); ++p)
        if (!peers_[b][p]) external_.push_back({b, p});
  }

  std::size_t box_index(std::string_view id) const {
    auto it = box_index_.find(std::string(id));
    if (it == box_index_.end()) throw Error(Errc::UnknownBoxRef, "no box '" + std::string(id) + "'");
    return it->second;
  }

  std::optional<std::size_t> port_index(std::size_t box, std::string_view port) const {
    auto it = port_index_.at(box).find(std::string(port));
    if (it == port_index_[box].end()) return std::nullopt;
    return it->second;
  }

  /// Throws UnknownBoxRef for an unknown box or port.
  PortRef resolve(std::string_view box, std::string_view port) const {
    const auto b = box_index(box);
    auto p = port_index(b, port);
    if (!p) throw Error(Errc::UnknownBoxRef, "box '" + std::string(box) + "' has no port '" + std::string(port) + "'");
    return {b, *p};
  }

  std::optional<PortRef> peer(PortRef p) const { return peers_.at(p.box).at(p.port); }
  bool is_external(PortRef p) const { return !peer(p).has_value(); }
  const std::vector<PortRef>& external_ports() const noexcept { return external_; }

  /// Index into boxes[box].acls of the ACL on (port, dir), if any.
  std::optional<std::size_t> acl_at(std::size_t box, std::size_t port, Direction dir) const {
    const auto& m = acl_index_.at(box);
    auto it = m.find(std::pair{port, dir});
    if (it == m.end()) return std::nullopt;
    return it->second;
  }

  const std::string& port_name(PortRef p) const { return boxes.at(p.box).ports.at(p.port); }

 private:
  void check_constraints(const Box& box, const std::vector<FieldConstraint>& cs, const std::string& where) const {
    for (const auto& c : cs) {
      try {
        validate_constraint(layout, c);
      } catch (const Error& e) {
        throw Error(Errc::BadConstraint, "box '" + box.id + "', " + where + ": " + e.what());
      }
    }
  }

  std::unordered_map<std::string, std::size_t> box_index_;
  std::vector<std::unordered_map<std::string, std::size_t>> port_index_;
  std::vector<std::vector<std::optional<PortRef>>> peers_;
  std::vector<std::map<std::pair<std::size_t, Direction>, std::size_t>> acl_index_;
  std::vector<PortRef> external_;
};

// --- JSON -------------------------------------------------------------------

namespace detail {

inline std::optional<std::uint64_t> parse_dotted_quad(std::string_view s) {
  std::uint64_t out = 0;
  int parts = 0;
  std::size_t i = 0;
  while (parts < 4) {
    if (i >= s.size() || s[i] < '0' || s[i] > '9') return std::nullopt;
    std::uint64_t octet = 0;
    std::size_t digits = 0;
    while (i < s.size() && s[i] >= '0' && s[i] <= '9' && digits < 4) {
      octet = octet * 10 + static_cast<std::uint64_t>(s[i] - '0');
      ++i;
      ++digits;
    }
    if (octet > 255) return std::nullopt;
    out = (out << 8) | octet;
    ++parts;
    if (parts < 4) {
      if (i >= s.size() || s[i] != '.') return std::nullopt;
      ++i;
    }
  }
  if (i != s.size()) return std::nullopt;
  return out;
}

inline std::optional<std::uint64_t> parse_decimal(std::string_view s) {
  if (s.empty() || s.size() > 20) return std::nullopt;
  unsigned __int128 v = 0;
  for (char c : s) {
    if (c < '0' || c > '9') return std::nullopt;
    v = v * 10 + static_cast<unsigned>(c - '0');
  }
  if (v > ~std::uint64_t{0}) return std::nullopt;
  return static_cast<std::uint64_t>(v);
}

inline const json& member(const json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw Error(Errc::SyntaxError, where + ": missing \"" + key + "\"");
  return j.at(key);
}

inline std::string as_string(const json& j, const std::string& where) {
  if (j.is_string()) return j.get<std::string>();
  if (j.is_number_integer()) return std::to_string(j.get<std::int64_t>());
  throw Error(Errc::SyntaxError, where + ": expected a string");
}

inline std::int64_t as_int(const json& j, const std::string& where) {
  if (!j.is_number_integer()) throw Error(Errc::SyntaxError, where + ": expected an integer");
  return j.get<std::int64_t>();
}

}  // namespace detail

/// Decimal integer, decimal string, or dotted quad (32-bit fields only).
inline std::uint64_t parse_field_value(const json& j, unsigned width, const std::string& where) {
  if (j.is_number_unsigned()) return j.get<std::uint64_t>();
  if (j.is_number_integer()) {
    const auto v = j.get<std::int64_t>();
    if (v < 0) throw Error(Errc::BadConstraint, where + ": negative value");
    return static_cast<std::uint64_t>(v);
  }
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (auto v = detail::parse_decimal(s)) return *v;
    if (width == 32)
      if (auto v = detail::parse_dotted_quad(s)) return *v;
    throw Error(Errc::BadConstraint, where + ": cannot parse value \"" + s + "\"");
  }
  throw Error(Errc::BadConstraint, where + ": expected an integer value");
}

inline FieldConstraint parse_constraint(const json& j, const HeaderLayout& layout, const std::string& where) {
  const auto field = detail::as_string(detail::member(j, "field", where), where);
  const auto f = layout.find(field);
  if (!f) throw Error(Errc::BadConstraint, where + ": unknown field '" + field + "'");
  const unsigned width = layout.width(*f);
  const auto kind = detail::as_string(detail::member(j, "kind", where), where);
  const auto value = [&](const char* key) { return parse_field_value(detail::member(j, key, where), width, where); };
  if (kind == "exact") return FieldConstraint::exact(field, value("value"));
  if (kind == "prefix") {
    const auto len = detail::as_int(detail::member(j, "length", where), where);
    if (len < 0) throw Error(Errc::BadConstraint, where + ": negative prefix length");
    return FieldConstraint::prefix(field, value("value"), static_cast<unsigned>(len));
  }
  if (kind == "range") return FieldConstraint::range(field, value("lo"), value("hi"));
  throw Error(Errc::BadConstraint, where + ": unknown constraint kind '" + kind + "'");
}

inline std::vector<FieldConstraint> parse_constraints(const json& j, const HeaderLayout& layout,
                                                      const std::string& where) {
  if (!j.is_array()) throw Error(Errc::SyntaxError, where + ": match must be an array");
  std::vector<FieldConstraint> out;
  for (const auto& c : j) {
    out.push_back(parse_constraint(c, layout, where));
    try {
      validate_constraint(layout, out.back());
    } catch (const Error& e) {
      throw Error(Errc::BadConstraint, where + ": " + e.what());
    }
  }
  return out;
}

inline json constraint_to_json(const FieldConstraint& c) {
  json j{{"field", c.field}};
  std::visit(
      [&](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, Exact>) {
          j["kind"] = "exact";
          j["value"] = m.value;
        } else if constexpr (std::is_same_v<T, Prefix>) {
          j["kind"] = "prefix";
          j["value"] = m.value;
          j["length"] = m.length;
        } else {
          j["kind"] = "range";
          j["lo"] = m.lo;
          j["hi"] = m.hi;
        }
      },
      c.match);
  return j;
}

inline json constraints_to_json(const std::vector<FieldConstraint>& cs) {
  json arr = json::array();
  for (const auto& c : cs) arr.push_back(constraint_to_json(c));
  return arr;
}

inline HeaderLayout parse_layout(const json& j) {
  if (!j.is_array()) throw Error(Errc::SyntaxError, "layout must be an array");
  std::vector<Field> fields;
  for (const auto& f : j) {
    const auto name = detail::as_string(detail::member(f, "name", "layout"), "layout");
    const auto width = detail::as_int(detail::member(f, "width", "layout field '" + name + "'"), "layout");
    if (width < 0) throw Error(Errc::InvalidLayout, "field '" + name + "' has negative width");
    fields.push_back({name, static_cast<unsigned>(width)});
  }
  return HeaderLayout(std::move(fields));
}

inline json layout_to_json(const HeaderLayout& layout) {
  json arr = json::array();
  for (const auto& f : layout.fields()) arr.push_back({{"name", f.name}, {"width", f.width}});
  return arr;
}

inline NetworkSnapshot snapshot_from_json(const json& doc) {
  using detail::as_int;
  using detail::as_string;
  using detail::member;
  if (!doc.is_object()) throw Error(Errc::SyntaxError, "snapshot must be a JSON object");
  NetworkSnapshot snap;
  if (doc.contains("layout")) snap.layout = parse_layout(doc.at("layout"));

  const auto& boxes = doc.contains("boxes") ? doc.at("boxes") : json::array();
  if (!boxes.is_array()) throw Error(Errc::SyntaxError, "\"boxes\" must be an array");
  for (const auto& jb : boxes) {
    Box box;
    box.id = as_string(member(jb, "id", "box"), "box");
    const std::string where = "box '" + box.id + "'";
    const auto kind = jb.contains("kind") ? as_string(jb.at("kind"), where) : std::string("switch");
    if (kind == "switch")
      box.kind = BoxKind::Switch;
    else if (kind == "firewall")
      box.kind = BoxKind::Firewall;
    else if (kind == "rewriter")
      box.kind = BoxKind::Rewriter;
    else
      throw Error(Errc::SyntaxError, where + ": unknown kind '" + kind + "'");

    if (jb.contains("ports")) {
      if (!jb.at("ports").is_array()) throw Error(Errc::SyntaxError, where + ": ports must be an array");
      for (const auto& p : jb.at("ports")) box.ports.push_back(as_string(p, where));
    }
    if (jb.contains("rules")) {
      for (const auto& jr : jb.at("rules")) {
        FwdRule r;
        r.priority = as_int(member(jr, "priority", where + " rule"), where);
        const std::string rw = where + ", rule priority " + std::to_string(r.priority);
        r.match = parse_constraints(jr.contains("match") ? jr.at("match") : json::array(), snap.layout, rw);
        const auto& action = member(jr, "action", rw);
        if (action.is_string() && action.get<std::string>() == "drop") {
          r.forward = std::nullopt;
        } else if (action.is_object() && action.contains("forward")) {
          r.forward = as_string(action.at("forward"), rw);
        } else {
          throw Error(Errc::SyntaxError, rw + ": action must be \"drop\" or {\"forward\": port}");
        }
        box.rules.push_back(std::move(r));
      }
    }
    if (jb.contains("acls")) {
      for (const auto& ja : jb.at("acls")) {
        Acl acl;
        acl.port = as_string(member(ja, "port", where + " acl"), where);
        const std::string aw = where + ", ACL on port '" + acl.port + "'";
        const auto dir = ja.contains("dir") ? as_string(ja.at("dir"), aw) : std::string("in");
        if (dir == "in")
          acl.dir = Direction::In;
        else if (dir == "out")
          acl.dir = Direction::Out;
        else
          throw Error(Errc::SyntaxError, aw + ": dir must be \"in\" or \"out\"");
        auto verdict = [&](const json& v) {
          const auto s = as_string(v, aw);
          if (s == "permit") return Verdict::Permit;
          if (s == "deny") return Verdict::Deny;
          throw Error(Errc::SyntaxError, aw + ": verdict must be \"permit\" or \"deny\"");
        };
        if (ja.contains("default")) acl.default_verdict = verdict(ja.at("default"));
        if (ja.contains("entries")) {
          for (const auto& je : ja.at("entries")) {
            AclEntry e;
            e.match = parse_constraints(je.contains("match") ? je.at("match") : json::array(), snap.layout, aw);
            e.verdict = verdict(member(je, "verdict", aw));
            acl.entries.push_back(std::move(e));
          }
        }
        box.acls.push_back(std::move(acl));
      }
    }
    if (jb.contains("rewrite") && !jb.at("rewrite").is_null()) {
      const auto& jw = jb.at("rewrite");
      RewriteSpec spec;
      spec.match = parse_constraints(jw.contains("match") ? jw.at("match") : json::array(), snap.layout,
                                     where + " rewrite");
      for (const auto& js : member(jw, "sets", where + " rewrite")) {
        FieldAssignment a;
        a.field = as_string(member(js, "field", where + " rewrite"), where);
        auto f = snap.layout.find(a.field);
        if (!f) throw Error(Errc::BadConstraint, where + ": rewrite sets unknown field '" + a.field + "'");
        a.value = parse_field_value(member(js, "value", where + " rewrite"), snap.layout.width(*f), where);
        spec.sets.push_back(std::move(a));
      }
      box.rewrite = std::move(spec);
    }
    snap.boxes.push_back(std::move(box));
  }

  if (doc.contains("links")) {
    for (const auto& jl : doc.at("links")) {
      if (!jl.is_array() || jl.size() != 4)
        throw Error(Errc::SyntaxError, "link must be [boxA, portA, boxB, portB]");
      snap.links.push_back({as_string(jl[0], "link"), as_string(jl[1], "link"), as_string(jl[2], "link"),
                            as_string(jl[3], "link")});
    }
  }
  snap.validate();
  return snap;
}

/// Parses and validates the snapshot document.
inline NetworkSnapshot parse_snapshot(std::string_view document) {
  json doc;
  try {
    doc = json::parse(document);
  } catch (const json::parse_error& e) {
    throw Error(Errc::SyntaxError, e.what());
  }
  return snapshot_from_json(doc);
}

inline json snapshot_to_json(const NetworkSnapshot& snap) {
  json boxes = json::array();
  for (const auto& b : snap.boxes) {
    json jb{{"id", b.id},
            {"kind", b.kind == BoxKind::Switch ? "switch" : b.kind == BoxKind::Firewall ? "firewall" : "rewriter"},
            {"ports", b.ports}};
    json rules = json::array();
    for (const auto& r : b.rules) {
      json action = r.forward ? json{{"forward", *r.forward}} : json("drop");
      rules.push_back({{"priority", r.priority}, {"match", constraints_to_json(r.match)}, {"action", action}});
    }
    jb["rules"] = std::move(rules);
    json acls = json::array();
    for (const auto& a : b.acls) {
      json entries = json::array();
      for (const auto& e : a.entries)
        entries.push_back(
            {{"match", constraints_to_json(e.match)}, {"verdict", e.verdict == Verdict::Permit ? "permit" : "deny"}});
      acls.push_back({{"port", a.port},
                      {"dir", a.dir == Direction::In ? "in" : "out"},
                      {"default", a.default_verdict == Verdict::Permit ? "permit" : "deny"},
                      {"entries", std::move(entries)}});
    }
    jb["acls"] = std::move(acls);
    if (b.rewrite) {
      json sets = json::array();
      for (const auto& s : b.rewrite->sets) sets.push_back({{"field", s.field}, {"value", s.value}});
      jb["rewrite"] = {{"match", constraints_to_json(b.rewrite->match)}, {"sets", std::move(sets)}};
    }
    boxes.push_back(std::move(jb));
  }
  json links = json::array();
  for (const auto& l : snap.links) links.push_back({l.box_a, l.port_a, l.box_b, l.port_b});
  return {{"layout", layout_to_json(snap.layout)}, {"boxes", std::move(boxes)}, {"links", std::move(links)}};
}

/// Header from {"field": value, ...}; omitted fields are zero.
inline Header header_from_json(const json& j, const HeaderLayout& layout) {
  if (!j.is_object()) throw Error(Errc::SyntaxError, "header must be a JSON object");
  Header h(layout);
  for (const auto& [name, value] : j.items()) {
    const auto f = layout.find(name);
    if (!f) throw Error(Errc::UnknownField, "header names unknown field '" + name + "'");
    const auto v = parse_field_value(value, layout.width(*f), "header field '" + name + "'");
    if (v > field_max(layout.width(*f)))
      throw Error(Errc::ValueOutOfRange, "header field '" + name + "' exceeds its width");
    h.set_field(layout, *f, v);
  }
  return h;
}

inline json header_to_json(const Header& h, const HeaderLayout& layout) {
  json j = json::object();
  for (std::size_t f = 0; f < layout.fields().size(); ++f) j[layout.fields()[f].name] = h.field(layout, f);
  return j;
}

// --- compilation ------------------------------------------------------------

/// Which element a predicate in `all_preds` came from.
struct PredOrigin {
  enum class Kind { Port, Drop, Acl, RewriteMatch } kind = Kind::Port;
  std::size_t box = 0;
  std::size_t index = 0;  // port index or ACL index; unused for Drop / RewriteMatch
};

struct CompiledNetwork {
  std::uint32_t engine = 0;
  std::vector<std::vector<Predicate>> port_preds;  // [box][port]: headers forwarded out that port
  std::vector<Predicate> drop_preds;               // [box]: headers hitting an explicit drop rule
  std::vector<std::vector<Predicate>> acl_preds;   // [box][acl]: permitted headers
  std::vector<std::optional<Predicate>> rewrite_match;  // [box]
  std::vector<Predicate> all_preds;  // deduplicated, constants removed
  std::vector<PredOrigin> origins;   // parallel to all_preds: first element producing each predicate
};

/// Permitted-set of a first-match ACL honoring its default verdict.
inline Predicate compile_acl(Engine& engine, const Acl& acl) {
  Predicate permitted = engine.constant(acl.default_verdict == Verdict::Permit);
  for (auto it = acl.entries.rbegin(); it != acl.entries.rend(); ++it) {
    const auto m = engine.match_all(it->match);
    permitted = it->verdict == Verdict::Permit ? engine.disj(m, permitted) : engine.diff(permitted, m);
  }
  return permitted;
}

inline CompiledNetwork compile(const NetworkSnapshot& snap, Engine& engine) {
  if (!(snap.layout == engine.layout())) throw Error(Errc::EngineMismatch, "snapshot layout differs from engine layout");
  CompiledNetwork out;
  out.engine = engine.id();
  const auto n = snap.boxes.size();
  out.port_preds.resize(n);
  out.drop_preds.assign(n, engine.bottom());
  out.acl_preds.resize(n);
  out.rewrite_match.assign(n, std::nullopt);

  for (std::size_t b = 0; b < n; ++b) {
    const auto& box = snap.boxes[b];
    out.port_preds[b].assign(box.ports.size(), engine.bottom());
    std::vector<const FwdRule*> rules;
    for (const auto& r : box.rules) rules.push_back(&r);
    std::sort(rules.begin(), rules.end(), [](auto* x, auto* y) { return x->priority > y->priority; });
    Predicate covered = engine.bottom();
    for (const auto* r : rules) {
      const auto m = engine.match_all(r->match);
      const auto fires = engine.diff(m, covered);
      if (r->forward) {
        auto& slot = out.port_preds[b][*snap.port_index(b, *r->forward)];
        slot = engine.disj(slot, fires);
      } else {
        out.drop_preds[b] = engine.disj(out.drop_preds[b], fires);
      }
      covered = engine.disj(covered, m);
    }
    for (const auto& acl : box.acls) out.acl_preds[b].push_back(compile_acl(engine, acl));
    if (box.rewrite) out.rewrite_match[b] = engine.match_all(box.rewrite->match);
  }

  // Ordering: box id, then ports, explicit drops, ACLs, rewrite match.
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](auto x, auto y) { return snap.boxes[x].id < snap.boxes[y].id; });

  std::unordered_set<Predicate, PredicateHash> seen;
  auto emit = [&](Predicate p, PredOrigin origin) {
    if (p.is_constant() || !seen.insert(p).second) return;
    out.all_preds.push_back(p);
    out.origins.push_back(origin);
  };
  for (auto b : order) {
    const auto& box = snap.boxes[b];
    std::vector<std::size_t> ports(box.ports.size());
    for (std::size_t i = 0; i < ports.size(); ++i) ports[i] = i;
    std::sort(ports.begin(), ports.end(), [&](auto x, auto y) { return box.ports[x] < box.ports[y]; });
    for (auto p : ports) emit(out.port_preds[b][p], {PredOrigin::Kind::Port, b, p});
    emit(out.drop_preds[b], {PredOrigin::Kind::Drop, b, 0});
    std::vector<std::size_t> acls(box.acls.size());
    for (std::size_t i = 0; i < acls.size(); ++i) acls[i] = i;
    std::sort(acls.begin(), acls.end(), [&](auto x, auto y) {
      return std::tie(box.acls[x].port, box.acls[x].dir) < std::tie(box.acls[y].port, box.acls[y].dir);
    });
    for (auto a : acls) emit(out.acl_preds[b][a], {PredOrigin::Kind::Acl, b, a});
    if (out.rewrite_match[b]) emit(*out.rewrite_match[b], {PredOrigin::Kind::RewriteMatch, b, 0});
  }
  return out;
}

}  // namespace apc
