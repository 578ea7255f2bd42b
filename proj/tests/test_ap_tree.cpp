#include <gtest/gtest.h>

#include <atomic>
#include <random>
#include <thread>

#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace apc;
using fixtures::pfx4;

namespace {

struct ThreeAtoms {
  Engine e{fixtures::h4()};
  Predicate p1 = e.match(pfx4(8, 1));
  Predicate p10 = e.match(pfx4(8, 2));
  std::vector<Predicate> preds{p1, p10};
  AtomSet atoms = compute_atoms(e, preds);
};

Predicate bit_set(Engine& e, unsigned bit) {  // 4-bit layout, bit 0 = MSB
  Predicate acc = e.bottom();
  for (std::uint64_t v = 0; v < 16; ++v)
    if ((v >> (3 - bit)) & 1) acc = e.disj(acc, e.match(FieldConstraint::exact("h", v)));
  return acc;
}

void expect_path_soundness(Engine& e, const APTree& tree, const AtomSet& atoms) {
  tree.for_each_leaf([&](const APTree::Node& leaf, unsigned depth, const auto& path) {
    Predicate conj = e.top();
    for (const auto& [p, branch] : path) conj = e.conj(conj, branch ? p : e.neg(p));
    EXPECT_EQ(conj, atoms.at(leaf.atom).pred);
    EXPECT_EQ(path.size(), depth);
  });
}

// Every internal node splits its reachable set into two nonempty parts.
void expect_pruned(Engine& e, const APTree& tree) {
  std::vector<std::pair<std::uint32_t, Predicate>> stack{{tree.root, e.top()}};
  while (!stack.empty()) {
    auto [i, reach] = stack.back();
    stack.pop_back();
    ASSERT_FALSE(reach.is_false());
    const auto& n = tree.nodes[i];
    if (n.is_leaf()) continue;
    const auto t = e.conj(reach, n.pred), f = e.diff(reach, n.pred);
    ASSERT_FALSE(t.is_false());
    ASSERT_FALSE(f.is_false());
    stack.emplace_back(n.on_true, t);
    stack.emplace_back(n.on_false, f);
  }
}

void expect_oracle_agreement(const Engine& e, const APTree& tree, const AtomSet& atoms,
                             const std::vector<Header>& headers) {
  for (const auto& h : headers) ASSERT_EQ(tree.classify(e, h), atom_of_header(atoms, e, h)) << h.to_string();
}

}  // namespace

TEST(Build, GreedyThreeAtoms) {
  ThreeAtoms f;
  const auto tree = build_tree(f.e, f.atoms, f.preds, BuildStrategy::greedy());
  const auto& root = tree.nodes[tree.root];
  ASSERT_FALSE(root.is_leaf());
  EXPECT_EQ(root.pred, f.p1);
  const auto& t = tree.nodes[root.on_true];
  ASSERT_FALSE(t.is_leaf());
  EXPECT_EQ(t.pred, f.p10);
  EXPECT_EQ(tree.nodes[t.on_true].atom, 0u);
  EXPECT_EQ(tree.nodes[t.on_false].atom, 1u);
  EXPECT_TRUE(tree.nodes[root.on_false].is_leaf());
  EXPECT_EQ(tree.nodes[root.on_false].atom, 2u);
  EXPECT_EQ(tree.avg_leaf_depth(), Rational::make(5, 3));
  EXPECT_EQ(tree.max_depth(), 2u);
  EXPECT_EQ(tree.leaf_count(), 3u);
}

TEST(Build, SinglePredicate) {
  Engine e(fixtures::h4());
  const std::vector p{e.match(pfx4(0, 1))};
  const auto atoms = compute_atoms(e, p);
  const auto tree = build_tree(e, atoms, p, BuildStrategy::greedy());
  EXPECT_EQ(tree.nodes[tree.root].pred, p[0]);
  EXPECT_EQ(tree.avg_leaf_depth(), Rational::make(1, 1));
}

TEST(Build, SingleLeaf) {
  Engine e(fixtures::h4());
  const auto atoms = compute_atoms(e, std::vector<Predicate>{});
  const auto tree = build_tree(e, atoms, {}, BuildStrategy::greedy());
  EXPECT_TRUE(tree.nodes[tree.root].is_leaf());
  EXPECT_EQ(tree.avg_leaf_depth(), Rational::make(0, 1));
  const auto w = tree.walk(e, fixtures::h4(7));
  EXPECT_EQ(w.atom, 0u);
  EXPECT_EQ(w.evaluations, 0u);
}

TEST(Build, PerfectTreeOverIndependentBits) {
  Engine e(fixtures::h4());
  std::vector<Predicate> bits;
  for (unsigned b = 0; b < 4; ++b) bits.push_back(bit_set(e, b));
  const auto atoms = compute_atoms(e, bits);
  ASSERT_EQ(atoms.size(), 16u);
  for (auto s : {BuildStrategy::greedy(), BuildStrategy::declared(), BuildStrategy::random(3)})
    EXPECT_EQ(build_tree(e, atoms, bits, s).avg_leaf_depth(), Rational::make(4, 1));
}

TEST(Build, CorruptedAtomsAreInconsistent) {
  ThreeAtoms f;
  // With only 10** on offer, 11** and 0*** cannot be separated.
  try {
    build_tree(f.e, f.atoms, std::vector{f.p10}, BuildStrategy::greedy());
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.code(), Errc::Inconsistent);
  }
}

TEST(Build, DeclaredAndRandomOrders) {
  ThreeAtoms f;
  const auto declared = build_tree(f.e, f.atoms, f.preds, BuildStrategy::declared());
  EXPECT_EQ(declared.nodes[declared.root].pred, f.p1);
  const std::vector rev{f.p10, f.p1};
  const auto reversed = build_tree(f.e, f.atoms, rev, BuildStrategy::declared());
  EXPECT_EQ(reversed.nodes[reversed.root].pred, f.p10);
  EXPECT_EQ(reversed.avg_leaf_depth(), Rational::make(5, 3));
  // Same seed, same tree.
  const auto a = build_tree(f.e, f.atoms, f.preds, BuildStrategy::random(42));
  const auto b = build_tree(f.e, f.atoms, f.preds, BuildStrategy::random(42));
  EXPECT_EQ(a.nodes[a.root].pred, b.nodes[b.root].pred);
}

TEST(Classify, Walks) {
  ThreeAtoms f;
  const auto tree = build_tree(f.e, f.atoms, f.preds, BuildStrategy::greedy());
  auto w = tree.walk(f.e, fixtures::h4(0b1010));
  EXPECT_EQ(w.atom, 0u);
  EXPECT_EQ(w.evaluations, 2u);
  w = tree.walk(f.e, fixtures::h4(0b0111));
  EXPECT_EQ(w.atom, 2u);
  EXPECT_EQ(w.evaluations, 1u);
  try {
    tree.classify(f.e, Header(8));
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.code(), Errc::LengthMismatch);
  }
}

TEST(Update, AddSplitsStraddledLeaves) {
  ThreeAtoms f;
  const auto tree = build_tree(f.e, f.atoms, f.preds, BuildStrategy::greedy());
  const auto q = bit_set(f.e, 2);  // **1*
  const auto u = add_predicate(tree, f.e, f.atoms, q);
  EXPECT_EQ(u.atoms.size(), 6u);
  EXPECT_EQ(u.tree.leaf_count(), 6u);
  EXPECT_EQ(u.tree.avg_leaf_depth(), Rational::make(4 * 3 + 2 * 2, 6));
  EXPECT_EQ(u.tree.structural_updates, 1u);
  EXPECT_EQ(u.tree.version, tree.version + 1);
  // Brute-force partition by evaluation vectors over {1***, 10**, **1*}.
  const std::vector all{f.p1, f.p10, q};
  const auto groups = oracle::signatures(3, oracle::all_headers(fixtures::h4()),
                                         [&](std::size_t p, const Header& h) { return f.e.eval(all[p], h); });
  EXPECT_EQ(groups.size(), 6u);
  expect_path_soundness(f.e, u.tree, u.atoms);
  expect_oracle_agreement(f.e, u.tree, u.atoms, oracle::all_headers(fixtures::h4()));
  // The old tree is untouched.
  EXPECT_EQ(tree.leaf_count(), 3u);
}

TEST(Update, AddDuplicateChangesNothing) {
  ThreeAtoms f;
  const auto tree = build_tree(f.e, f.atoms, f.preds, BuildStrategy::greedy());
  const auto u = add_predicate(tree, f.e, f.atoms, f.p10);
  EXPECT_EQ(u.atoms.size(), 3u);
  EXPECT_EQ(u.tree.nodes.size(), tree.nodes.size());
  EXPECT_EQ(u.atoms.members(f.p10), f.atoms.members(f.p10));
}

TEST(Update, AddSplitsOnlyStraddledLeaf) {
  ThreeAtoms f;
  const auto tree = build_tree(f.e, f.atoms, f.preds, BuildStrategy::greedy());
  // 01** is disjoint from 10** and 11** and lies inside 0***.
  const auto q = f.e.match(pfx4(0b0100, 2));
  const auto u = add_predicate(tree, f.e, f.atoms, q);
  EXPECT_EQ(u.atoms.size(), 4u);
  EXPECT_NE(u.atoms.find(0), nullptr);
  EXPECT_NE(u.atoms.find(1), nullptr);
  EXPECT_EQ(u.atoms.find(2), nullptr);
  EXPECT_EQ(u.atoms.members(f.p1), f.atoms.members(f.p1));
  // covering another: 1*** union 01** splits only 0***
  const auto r = f.e.disj(f.p1, q);
  const auto u2 = add_predicate(tree, f.e, f.atoms, r);
  EXPECT_EQ(u2.atoms.size(), 4u);
  EXPECT_EQ(u2.atoms.members(r).size(), 3u);
}

TEST(Update, AddRejectsConstants) {
  ThreeAtoms f;
  const auto tree = build_tree(f.e, f.atoms, f.preds, BuildStrategy::greedy());
  EXPECT_THROW(add_predicate(tree, f.e, f.atoms, f.e.top()), Error);
  Engine other(fixtures::h4());
  EXPECT_THROW(add_predicate(tree, other, f.atoms, other.match(pfx4(0, 1))), Error);
}

TEST(Update, RemoveKeepsClassification) {
  ThreeAtoms f;
  const auto tree = build_tree(f.e, f.atoms, f.preds, BuildStrategy::greedy());
  const auto u = remove_predicate(tree, f.atoms, f.p10);
  EXPECT_EQ(u.tree.classify(f.e, fixtures::h4(0b1010)), tree.classify(f.e, fixtures::h4(0b1010)));
  EXPECT_EQ(u.tree.classify(f.e, fixtures::h4(0b1000)), tree.classify(f.e, fixtures::h4(0b1000)));
  EXPECT_TRUE(u.tree.removed_preds.count(f.p10));
  EXPECT_EQ(u.atoms.sources, std::vector{f.p1});
  EXPECT_EQ(u.tree.structural_updates, 1u);
  const auto fresh = compute_atoms(f.e, u.atoms.sources);
  EXPECT_EQ(oracle::refinement_violations(f.e, u.atoms, fresh), 0u);
  try {
    remove_predicate(u.tree, u.atoms, f.p10);
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.code(), Errc::UnknownPredicate);
  }
}

TEST(Update, RemoveLastPredicate) {
  ThreeAtoms f;
  auto tree = build_tree(f.e, f.atoms, f.preds, BuildStrategy::greedy());
  auto u = remove_predicate(tree, f.atoms, f.p1);
  u = remove_predicate(u.tree, u.atoms, f.p10);
  const auto fresh = compute_atoms(f.e, u.atoms.sources);
  ASSERT_EQ(fresh.size(), 1u);
  EXPECT_EQ(oracle::refinement_violations(f.e, u.atoms, fresh), 0u);
}

TEST(Update, RemoveThenReAdd) {
  ThreeAtoms f;
  const auto tree = build_tree(f.e, f.atoms, f.preds, BuildStrategy::greedy());
  auto u = remove_predicate(tree, f.atoms, f.p10);
  u = add_predicate(u.tree, f.e, u.atoms, f.p10);
  for (const auto& h : oracle::all_headers(fixtures::h4()))
    EXPECT_EQ(u.tree.classify(f.e, h), tree.classify(f.e, h));
  EXPECT_FALSE(u.tree.removed_preds.count(f.p10));
}

TEST(Rebuild, AfterNoUpdates) {
  ThreeAtoms f;
  const auto tree = build_tree(f.e, f.atoms, f.preds, BuildStrategy::greedy());
  const auto r = rebuild(f.e, tree, f.atoms);
  EXPECT_EQ(r.tree.version, tree.version + 1);
  EXPECT_EQ(r.tree.avg_leaf_depth(), tree.avg_leaf_depth());
  for (const auto& h : oracle::all_headers(fixtures::h4()))
    EXPECT_EQ(r.atoms.at(r.tree.classify(f.e, h)).pred, f.atoms.at(tree.classify(f.e, h)).pred);
}

TEST(Rebuild, AfterRemovalsCoarser) {
  ThreeAtoms f;
  const auto tree = build_tree(f.e, f.atoms, f.preds, BuildStrategy::greedy());
  const auto u = remove_predicate(tree, f.atoms, f.p10);
  const auto r = rebuild(f.e, u.tree, u.atoms);
  EXPECT_LE(r.atoms.size(), f.atoms.size());
  EXPECT_EQ(r.atoms.size(), 2u);
}

TEST(Rebuild, DuePolicy) {
  ThreeAtoms f;
  APTree tree = build_tree(f.e, f.atoms, f.preds, BuildStrategy::greedy());
  EXPECT_FALSE(rebuild_due(tree, {}));
  tree.structural_updates = 256;
  EXPECT_TRUE(rebuild_due(tree, {}));
  tree.structural_updates = 0;
  EXPECT_TRUE(rebuild_due(tree, {256, 0.5}));
}

// Properties on generated workloads.
TEST(Properties, TreeInvariantsOnWorkloads) {
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    const auto w = generate(fixtures::synthetic(seed, 6, 16));
    Engine e(w.snapshot.layout);
    const auto c = compile(w.snapshot, e);
    const auto atoms = compute_atoms(e, c.all_preds);
    for (auto s : {BuildStrategy::greedy(), BuildStrategy::declared(), BuildStrategy::random(seed)}) {
      const auto tree = build_tree(e, atoms, c.all_preds, s);
      EXPECT_TRUE(oracle::leaves_match_atoms(tree, atoms));
      expect_path_soundness(e, tree, atoms);
      expect_pruned(e, tree);
      expect_oracle_agreement(e, tree, atoms, oracle::headers_for(w.snapshot.layout, 2000, seed));
    }
  }
}

TEST(Properties, ExhaustiveOracleAgreementOnFixtures) {
  for (const auto& name : fixtures::names()) {
    const auto snap = fixtures::load(name);
    Engine e(snap.layout);
    const auto pipe = run_pipeline(e, snap);
    const auto tree = build_tree(e, pipe.atoms, pipe.atoms.sources, BuildStrategy::greedy());
    expect_oracle_agreement(e, tree, pipe.atoms, oracle::all_headers(snap.layout));
    expect_pruned(e, tree);
  }
}

TEST(Properties, UpdateCoherence) {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    auto spec = fixtures::synthetic(seed, 6, 16);
    spec.update_count = 150;
    const auto w = generate(spec);
    Engine e(w.snapshot.layout);
    const auto c = compile(w.snapshot, e);
    auto atoms = compute_atoms(e, c.all_preds);
    auto tree = build_tree(e, atoms, c.all_preds, BuildStrategy::greedy());
    std::mt19937_64 rng(seed);
    for (const auto& op : w.updates) {
      const auto p = resolve_pred(e, w.snapshot, c, op.pred);
      TreeUpdate u = op.kind == UpdateOp::Kind::Add ? add_predicate(tree, e, atoms, p) : remove_predicate(tree, atoms, p);
      tree = std::move(u.tree);
      atoms = std::move(u.atoms);
      ASSERT_TRUE(oracle::leaves_match_atoms(tree, atoms));
    }
    const auto fresh = compute_atoms(e, atoms.sources);
    EXPECT_EQ(oracle::refinement_violations(e, atoms, fresh), 0u);
    expect_path_soundness(e, tree, atoms);
    expect_pruned(e, tree);
    const auto rebuilt = rebuild(e, tree, atoms);
    for (const auto& h : oracle::headers_for(w.snapshot.layout, 2000, seed)) {
      const auto cell = tree.classify(e, h);
      ASSERT_EQ(cell, atom_of_header(atoms, e, h));
      ASSERT_TRUE(e.implies(atoms.at(cell).pred, rebuilt.atoms.at(rebuilt.tree.classify(e, h)).pred));
    }
    for (auto p : atoms.sources) {
      Predicate acc = e.bottom();
      for (auto id : atoms.members(p)) acc = e.disj(acc, atoms.at(id).pred);
      ASSERT_EQ(acc, p);
    }
  }
}

TEST(Properties, GreedyNotWorseThanRandomMean) {
  for (std::uint64_t seed = 1; seed <= 2; ++seed) {
    const auto w = generate(fixtures::synthetic(seed, 20, 40));
    Engine e(w.snapshot.layout);
    const auto c = compile(w.snapshot, e);
    ASSERT_GE(c.all_preds.size(), 50u);
    const auto atoms = compute_atoms(e, c.all_preds);
    const double greedy = build_tree(e, atoms, c.all_preds, BuildStrategy::greedy()).avg_leaf_depth().value();
    double sum = 0;
    for (std::uint64_t r = 0; r < 20; ++r)
      sum += build_tree(e, atoms, c.all_preds, BuildStrategy::random(r)).avg_leaf_depth().value();
    EXPECT_LE(greedy, sum / 20);
  }
}

TEST(Classifier, PublishesVersions) {
  ThreeAtoms f;
  auto cls = Classifier::create(f.e, f.preds);
  EXPECT_EQ(cls->current()->version, 0u);
  const auto before = cls->current();
  std::vector<FieldConstraint> m{pfx4(0b0100, 2)};
  EXPECT_EQ(cls->add(std::span<const FieldConstraint>(m)), 1u);
  EXPECT_EQ(before->tree->leaf_count(), 3u);  // readers holding the old epoch are undisturbed
  EXPECT_EQ(cls->current()->tree->leaf_count(), 4u);
  EXPECT_EQ(cls->remove(f.p10), 2u);
  EXPECT_EQ(cls->rebuild(), 3u);
  EXPECT_EQ(cls->current()->atoms->size(), 3u);  // 1***, 01**, 00**
  for (const auto& h : oracle::all_headers(fixtures::h4()))
    EXPECT_EQ(cls->classify(h), atom_of_header(*cls->current()->atoms, f.e, h));
}

TEST(Classifier, ConcurrentQueriesDuringUpdates) {
  const auto w = generate([] {
    auto s = fixtures::synthetic(5, 8, 20);
    s.update_count = 200;
    return s;
  }());
  Engine e(w.snapshot.layout);
  const auto c = compile(w.snapshot, e);
  auto cls = Classifier::create(e, c.all_preds);
  std::atomic<bool> stop{false};
  std::atomic<std::size_t> wrong{0}, done{0};
  std::vector<std::thread> readers;
  for (int t = 0; t < 3; ++t)
    readers.emplace_back([&, t] {
      std::mt19937_64 rng(t);
      while (!stop.load()) {
        const auto h = oracle::random_header(w.snapshot.layout, rng);
        const auto epoch = cls->current();
        const auto a = epoch->tree->classify(e, h);
        if (!e.eval(epoch->atoms->at(a).pred, h)) ++wrong;
        ++done;
      }
    });
  for (const auto& op : w.updates) {
    if (op.kind == UpdateOp::Kind::Add)
      cls->add(std::span<const FieldConstraint>(op.pred.match));
    else
      cls->remove(cls->with_engine([&](Engine& eng) { return eng.match_all(op.pred.match); }));
    if (cls->rebuild_due()) cls->rebuild();
  }
  cls->rebuild();
  stop = true;
  for (auto& r : readers) r.join();
  EXPECT_EQ(wrong.load(), 0u);
  EXPECT_GT(done.load(), 0u);
}
