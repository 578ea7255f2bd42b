#pragma once

// Header rewrites at the atom level, and the compile pipeline that closes the
// predicate set under rewrite images so every image lands in a single atom.

#include <string>
#include <unordered_set>
#include <vector>

#include "apc/atoms.hpp"
#include "apc/error.hpp"
#include "apc/network.hpp"
#include "apc/predicate.hpp"

namespace apc {

/// Headers produced by applying `spec`'s field overwrites to `region`.
inline Predicate image_predicate(Engine& engine, Predicate region, const RewriteSpec& spec) {
  std::vector<std::string> fields;
  Predicate assigned = engine.top();
  for (const auto& s : spec.sets) {
    fields.push_back(s.field);
    assigned = engine.conj(assigned, engine.match(FieldConstraint::exact(s.field, s.value)));
  }
  return engine.conj(engine.exists(region, fields), assigned);
}

/// The atom containing the image of (atom AND match). Throws ImageSplit when
/// the image straddles atoms, PreconditionViolation when nothing matches.
inline AtomId rewrite_image(Engine& engine, const AtomSet& atoms, const RewriteSpec& spec, AtomId atom) {
  const auto region = engine.conj(atoms.at(atom).pred, engine.match_all(spec.match));
  if (region.is_false())
    throw Error(Errc::PreconditionViolation, "rewrite does not match atom " + std::to_string(atom));
  const auto image = image_predicate(engine, region, spec);
  const auto target = atom_of_header(atoms, engine, *engine.witness(image));
  if (!engine.implies(image, atoms.at(target).pred))
    throw Error(Errc::ImageSplit, "image of atom " + std::to_string(atom) + " straddles several atoms");
  return target;
}

struct Pipeline {
  CompiledNetwork compiled;
  std::vector<Predicate> closure_preds;  // rewrite preimages added so that images are single-atom
  AtomSet atoms;                         // over compiled.all_preds followed by closure_preds
};

/// Headers inside `spec.match` that the rewrite sends into `target`. Such a
/// predicate never depends on the overwritten fields.
inline Predicate preimage_predicate(Engine& engine, Predicate target, const RewriteSpec& spec) {
  std::vector<std::string> fields;
  Predicate assigned = engine.top();
  for (const auto& s : spec.sets) {
    fields.push_back(s.field);
    assigned = engine.conj(assigned, engine.match(FieldConstraint::exact(s.field, s.value)));
  }
  return engine.conj(engine.match_all(spec.match), engine.exists(engine.conj(target, assigned), fields));
}

/// compile + compute_atoms, repeated until every rewrite image of every atom
/// is contained in one atom. Each round a straddling image contributes the
/// preimages of the atoms it touches, which splits the source atom along
/// exactly those boundaries.
inline Pipeline run_pipeline(Engine& engine, const NetworkSnapshot& snap, std::size_t max_rounds = 64) {
  Pipeline out;
  out.compiled = compile(snap, engine);
  std::vector<Predicate> preds = out.compiled.all_preds;
  std::unordered_set<Predicate, PredicateHash> seen(preds.begin(), preds.end());

  for (std::size_t round = 0; round < max_rounds; ++round) {
    out.atoms = compute_atoms(engine, preds);
    bool grew = false;
    for (std::size_t b = 0; b < snap.boxes.size(); ++b) {
      const auto& box = snap.boxes[b];
      if (!box.rewrite) continue;
      const auto match = engine.match_all(box.rewrite->match);
      for (const auto& a : out.atoms.atoms) {
        const auto region = engine.conj(a.pred, match);
        if (region.is_false()) continue;
        const auto image = image_predicate(engine, region, *box.rewrite);
        const auto target = atom_of_header(out.atoms, engine, *engine.witness(image));
        if (engine.implies(image, out.atoms.at(target).pred)) continue;
        for (const auto& t : out.atoms.atoms) {
          if (engine.conj(image, t.pred).is_false()) continue;
          const auto pre = preimage_predicate(engine, t.pred, *box.rewrite);
          if (pre.is_constant() || !seen.insert(pre).second) continue;
          preds.push_back(pre);
          out.closure_preds.push_back(pre);
          grew = true;
        }
      }
    }
    if (!grew) return out;
  }
  throw Error(Errc::Inconsistent, "rewrite closure did not converge in " + std::to_string(max_rounds) + " rounds");
}

}  // namespace apc
