#pragma once

// Update streams: newline-delimited {"op": "add"|"remove", "pred": ...}
// where pred is an inline constraint list or a reference to a compiled
// element: {"port": [box, port]}, {"acl": [box, port, dir]}, {"rule": [box, priority]}.

#include <cstdint>
#include <string>
#include <vector>

#include "apc/error.hpp"
#include "apc/network.hpp"
#include "apc/predicate.hpp"

namespace apc {

struct PredRef {
  enum class Kind { Inline, Port, Acl, Rule } kind = Kind::Inline;
  std::vector<FieldConstraint> match;  // Inline
  std::string box;
  std::string port;                    // Port, Acl
  Direction dir = Direction::In;       // Acl
  std::int64_t priority = 0;           // Rule

  static PredRef inline_match(std::vector<FieldConstraint> m) {
    PredRef r;
    r.match = std::move(m);
    return r;
  }
};

struct UpdateOp {
  enum class Kind { Add, Remove } kind = Kind::Add;
  PredRef pred;
};

inline json update_to_json(const UpdateOp& op) {
  json pred;
  switch (op.pred.kind) {
    case PredRef::Kind::Inline: pred = constraints_to_json(op.pred.match); break;
    case PredRef::Kind::Port: pred = {{"port", {op.pred.box, op.pred.port}}}; break;
    case PredRef::Kind::Acl:
      pred = {{"acl", {op.pred.box, op.pred.port, op.pred.dir == Direction::In ? "in" : "out"}}};
      break;
    case PredRef::Kind::Rule: pred = {{"rule", {op.pred.box, op.pred.priority}}}; break;
  }
  return {{"op", op.kind == UpdateOp::Kind::Add ? "add" : "remove"}, {"pred", std::move(pred)}};
}

inline UpdateOp parse_update(const json& j, const HeaderLayout& layout) {
  if (!j.is_object()) throw Error(Errc::SyntaxError, "update must be a JSON object");
  UpdateOp op;
  const auto kind = detail::as_string(detail::member(j, "op", "update"), "update");
  if (kind == "add")
    op.kind = UpdateOp::Kind::Add;
  else if (kind == "remove")
    op.kind = UpdateOp::Kind::Remove;
  else
    throw Error(Errc::SyntaxError, "update op must be \"add\" or \"remove\"");
  const auto& pred = detail::member(j, "pred", "update");
  auto& ref = op.pred;
  if (pred.is_array()) {
    ref.kind = PredRef::Kind::Inline;
    ref.match = parse_constraints(pred, layout, "update");
  } else if (pred.is_object() && pred.contains("port") && pred.at("port").is_array() && pred.at("port").size() == 2) {
    ref.kind = PredRef::Kind::Port;
    ref.box = detail::as_string(pred.at("port")[0], "update");
    ref.port = detail::as_string(pred.at("port")[1], "update");
  } else if (pred.is_object() && pred.contains("acl") && pred.at("acl").is_array() && pred.at("acl").size() == 3) {
    ref.kind = PredRef::Kind::Acl;
    ref.box = detail::as_string(pred.at("acl")[0], "update");
    ref.port = detail::as_string(pred.at("acl")[1], "update");
    const auto dir = detail::as_string(pred.at("acl")[2], "update");
    if (dir != "in" && dir != "out") throw Error(Errc::SyntaxError, "update: ACL dir must be \"in\" or \"out\"");
    ref.dir = dir == "in" ? Direction::In : Direction::Out;
  } else if (pred.is_object() && pred.contains("rule") && pred.at("rule").is_array() && pred.at("rule").size() == 2) {
    ref.kind = PredRef::Kind::Rule;
    ref.box = detail::as_string(pred.at("rule")[0], "update");
    ref.priority = detail::as_int(pred.at("rule")[1], "update");
  } else {
    throw Error(Errc::SyntaxError, "update: pred must be a constraint list or a port/acl/rule reference");
  }
  return op;
}

/// Engine mutation: call under the classifier's writer lock.
inline Predicate resolve_pred(Engine& engine, const NetworkSnapshot& snap, const CompiledNetwork& compiled,
                              const PredRef& ref) {
  switch (ref.kind) {
    case PredRef::Kind::Inline: return engine.match_all(ref.match);
    case PredRef::Kind::Port: {
      const auto p = snap.resolve(ref.box, ref.port);
      return compiled.port_preds[p.box][p.port];
    }
    case PredRef::Kind::Acl: {
      const auto p = snap.resolve(ref.box, ref.port);
      const auto acl = snap.acl_at(p.box, p.port, ref.dir);
      if (!acl) throw Error(Errc::UnknownPredicate, "no ACL on '" + ref.box + "' port '" + ref.port + "'");
      return compiled.acl_preds[p.box][*acl];
    }
    case PredRef::Kind::Rule: {
      const auto b = snap.box_index(ref.box);
      for (const auto& r : snap.boxes[b].rules)
        if (r.priority == ref.priority) return engine.match_all(r.match);
      throw Error(Errc::UnknownPredicate, "box '" + ref.box + "' has no rule with priority " + std::to_string(ref.priority));
    }
  }
  throw Error(Errc::UnknownPredicate, "unresolvable predicate reference");
}

}  // namespace apc
