// apc: compile a network snapshot into atomic predicates and an AP Tree,
// then classify, trace, update, outsource and benchmark against it.
//
// stdout carries JSON (one document per line); diagnostics go to stderr.
// Exit codes: 0 ok, 1 usage or parse error, 2 divergence, 3 internal error.

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "apc/apc.hpp"

using namespace apc;

namespace {

enum Exit { kOk = 0, kUsage = 1, kDivergence = 2, kInternal = 3 };

/// Bad input the user can fix: reported on stderr, exit 1.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

std::string read_file(const std::string& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw UsageError(std::string("cannot read ") + what + " '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void emit(const json& j) { std::cout << j.dump() << '\n'; }

struct Options {
  std::string snapshot;
  std::uint64_t seed = 1;
  std::string strategy = "greedy";
  std::size_t queries = 1000000;
  std::size_t threads = 1;
  std::string updates;
  bool exhaustive = false;
  std::size_t sample = 10000;
  std::size_t rebuild_threshold = 256;
  std::vector<std::string> headers;
  std::string headers_file;
  std::string ingress;

  // gen
  std::size_t boxes = 8;
  std::size_t rules = 16;
  std::size_t rewriters = 0;
  double acl_probability = 0.3;
  std::size_t update_count = 0;
  std::string layout;
  std::string dst = "dst";
  std::string out;
};

BuildStrategy parse_strategy(const Options& o) {
  if (o.strategy == "greedy") return BuildStrategy::greedy();
  if (o.strategy == "order") return BuildStrategy::declared();
  if (o.strategy == "random") return BuildStrategy::random(o.seed);
  throw UsageError("unknown strategy '" + o.strategy + "' (greedy|order|random)");
}

/// Everything derived from one snapshot.
struct Model {
  NetworkSnapshot snap;
  std::unique_ptr<Engine> engine;
  Pipeline pipe;
  APTree tree;
  BehaviorMap map;
  double compile_ms = 0;
};

Model load_model(const Options& o) {
  if (o.snapshot.empty()) throw UsageError("no snapshot given (--snapshot PATH)");
  Model m;
  m.snap = parse_snapshot(read_file(o.snapshot, "snapshot"));
  spdlog::info("loaded {} boxes, {} links", m.snap.boxes.size(), m.snap.links.size());
  const auto t0 = Clock::now();
  m.engine = std::make_unique<Engine>(m.snap.layout);
  m.pipe = run_pipeline(*m.engine, m.snap);
  m.tree = build_tree(*m.engine, m.pipe.atoms, m.pipe.atoms.sources, parse_strategy(o));
  m.map = compile_behavior_map(*m.engine, m.snap, m.pipe.compiled, m.pipe.atoms);
  m.compile_ms = ms_since(t0);
  spdlog::info("{} predicates, {} atoms, compiled in {:.1f} ms", m.pipe.atoms.sources.size(), m.pipe.atoms.size(),
               m.compile_ms);
  return m;
}

json tree_stats(const APTree& tree) {
  const auto avg = tree.avg_leaf_depth();
  return {{"leaves", tree.leaf_count()},
          {"nodes", tree.nodes.size()},
          {"avg_depth", avg.value()},
          {"avg_depth_exact", std::to_string(avg.num) + "/" + std::to_string(avg.den)},
          {"max_depth", tree.max_depth()},
          {"version", tree.version}};
}

/// Headers from --header (repeatable), --headers FILE (one JSON object per
/// line) or, failing both, --sample random headers from --seed.
std::vector<Header> input_headers(const Options& o, const HeaderLayout& layout) {
  std::vector<Header> out;
  auto parse_one = [&](const std::string& text, const std::string& where) {
    json j;
    try {
      j = json::parse(text);
    } catch (const json::parse_error& e) {
      throw UsageError(where + ": " + e.what());
    }
    out.push_back(header_from_json(j, layout));
  };
  for (const auto& h : o.headers) parse_one(h, "--header");
  if (!o.headers_file.empty()) {
    std::istringstream in(read_file(o.headers_file, "headers file"));
    std::string line;
    for (std::size_t n = 1; std::getline(in, line); ++n)
      if (!line.empty()) parse_one(line, o.headers_file + ":" + std::to_string(n));
  }
  if (out.empty())
    for_each_sample(layout, Sample::random(o.sample, o.seed), [&](const Header& h) { out.push_back(h); });
  return out;
}

std::vector<PortRef> ingresses(const Options& o, const NetworkSnapshot& snap) {
  if (o.ingress.empty()) return snap.external_ports();
  const auto colon = o.ingress.find(':');
  if (colon == std::string::npos) throw UsageError("--ingress must be BOX:PORT");
  return {snap.resolve(o.ingress.substr(0, colon), o.ingress.substr(colon + 1))};
}

std::vector<UpdateOp> read_updates(const std::string& path, const HeaderLayout& layout) {
  std::vector<UpdateOp> ops;
  std::istringstream in(read_file(path, "update stream"));
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (line.empty()) continue;
    try {
      ops.push_back(parse_update(json::parse(line), layout));
    } catch (const json::parse_error& e) {
      throw UsageError(path + ":" + std::to_string(n) + ": " + e.what());
    } catch (const Error& e) {
      throw UsageError(path + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return ops;
}

double percentile(std::vector<double> v, double q) {
  if (v.empty()) return 0;
  std::sort(v.begin(), v.end());
  const auto i = static_cast<std::size_t>(q * static_cast<double>(v.size() - 1) + 0.5);
  return v[std::min(i, v.size() - 1)];
}

struct StreamResult {
  std::vector<double> latencies_ms;
  std::size_t failed = 0;
  std::size_t rebuilds = 0;
};

/// Applies the stream to a live classifier; `each` sees every outcome.
template <class F>
StreamResult apply_stream(Classifier& cls, const Model& m, const std::vector<UpdateOp>& ops, F&& each) {
  StreamResult r;
  for (const auto& op : ops) {
    const auto t0 = Clock::now();
    try {
      const auto p = cls.with_engine([&](Engine& e) { return resolve_pred(e, m.snap, m.pipe.compiled, op.pred); });
      const auto version = op.kind == UpdateOp::Kind::Add ? cls.add(p) : cls.remove(p);
      const double ms = ms_since(t0);
      r.latencies_ms.push_back(ms);
      bool rebuilt = false;
      if (cls.rebuild_due()) {
        cls.rebuild();
        ++r.rebuilds;
        rebuilt = true;
      }
      each(op, version, ms, rebuilt, nullptr);
    } catch (const Error& e) {
      ++r.failed;
      spdlog::warn("update rejected: {}", e.what());
      each(op, 0, ms_since(t0), false, &e);
    }
  }
  return r;
}

json latency_json(const StreamResult& r) {
  return {{"count", r.latencies_ms.size()},
          {"failed", r.failed},
          {"rebuilds", r.rebuilds},
          {"p50_ms", percentile(r.latencies_ms, 0.50)},
          {"p95_ms", percentile(r.latencies_ms, 0.95)},
          {"p99_ms", percentile(r.latencies_ms, 0.99)}};
}

// ---------------------------------------------------------------- subcommands

int cmd_gen(const Options& o) {
  WorkloadSpec spec;
  spec.seed = o.seed;
  if (!o.layout.empty()) {
    std::vector<Field> fields;
    std::istringstream in(o.layout);
    std::string item;
    while (std::getline(in, item, ',')) {
      const auto colon = item.find(':');
      if (colon == std::string::npos) throw UsageError("--layout entries must be NAME:WIDTH");
      fields.push_back({item.substr(0, colon), static_cast<unsigned>(std::stoul(item.substr(colon + 1)))});
    }
    spec.layout = HeaderLayout(std::move(fields));
  }
  spec.dst_field = o.dst;
  spec.box_count = o.boxes;
  spec.rules_per_box = {std::max<std::size_t>(1, o.rules / 2), o.rules};
  const auto dst_width = spec.layout.width(spec.layout.index_of(o.dst));
  spec.prefix_length = {std::min(8u, dst_width), std::min(24u, dst_width)};
  spec.acl_probability = o.acl_probability;
  spec.rewriter_count = o.rewriters;
  spec.extra_links = o.boxes / 4;
  spec.update_count = o.update_count;
  const auto w = generate(spec);

  const auto doc = snapshot_to_json(w.snapshot).dump(2) + "\n";
  if (o.out.empty()) {
    std::cout << doc;
  } else {
    std::ofstream(o.out) << doc;
  }
  if (!o.updates.empty()) {
    std::ofstream upd(o.updates);
    for (const auto& u : w.updates) upd << update_to_json(u).dump() << '\n';
  } else if (o.update_count) {
    spdlog::warn("--update-count given without --updates PATH; stream discarded");
  }
  if (!o.out.empty())
    emit({{"snapshot", o.out}, {"boxes", w.snapshot.boxes.size()}, {"updates", w.updates.size()}});
  return kOk;
}

int cmd_compile(const Options& o) {
  const auto m = load_model(o);
  std::size_t nonconstant = 0;
  for (auto p : m.pipe.compiled.all_preds) nonconstant += !p.is_constant();
  emit({{"boxes", m.snap.boxes.size()},
        {"links", m.snap.links.size()},
        {"predicates", m.pipe.compiled.all_preds.size()},
        {"nonconstant_predicates", nonconstant},
        {"closure_predicates", m.pipe.closure_preds.size()},
        {"atoms", m.pipe.atoms.size()},
        {"bdd_nodes", m.engine->node_count()},
        {"compile_ms", m.compile_ms}});
  return kOk;
}

int cmd_atoms(const Options& o) {
  const auto m = load_model(o);
  json atoms = json::array();
  for (const auto& a : m.pipe.atoms.atoms) {
    const auto info = m.engine->query(a.pred);
    atoms.push_back({{"id", a.id},
                     {"sat_count", info.sat_count.str()},
                     {"bdd_nodes", info.node_count},
                     {"witness", header_to_json(*m.engine->witness(a.pred), m.snap.layout)}});
  }
  json members = json::array();
  for (std::size_t i = 0; i < m.pipe.atoms.sources.size(); ++i)
    members.push_back({{"predicate", i}, {"atoms", m.pipe.atoms.members(m.pipe.atoms.sources[i])}});
  emit({{"count", m.pipe.atoms.size()}, {"atoms", atoms}, {"membership", members}});
  return kOk;
}

int cmd_tree_stats(const Options& o) {
  const auto m = load_model(o);
  auto j = tree_stats(m.tree);
  j["strategy"] = o.strategy;
  j["atoms"] = m.pipe.atoms.size();
  j["predicates"] = m.pipe.atoms.sources.size();
  emit(j);
  return kOk;
}

int cmd_classify(const Options& o) {
  const auto m = load_model(o);
  for (const auto& h : input_headers(o, m.snap.layout)) {
    const auto w = m.tree.walk(*m.engine, h);
    emit({{"header", header_to_json(h, m.snap.layout)}, {"atom", w.atom}, {"evaluations", w.evaluations}});
  }
  return kOk;
}

int cmd_trace(const Options& o) {
  const auto m = load_model(o);
  const auto from = ingresses(o, m.snap);
  for (const auto& h : input_headers(o, m.snap.layout))
    for (const auto& in : from) {
      auto j = report_to_json(identify(m.tree, m.map, m.snap, *m.engine, h, in), m.snap);
      j["header"] = header_to_json(h, m.snap.layout);
      j["ingress"] = {m.snap.boxes[in.box].id, m.snap.port_name(in)};
      emit(j);
    }
  return kOk;
}

int cmd_update(const Options& o) {
  if (o.updates.empty()) throw UsageError("update needs --updates PATH");
  auto m = load_model(o);
  const auto ops = read_updates(o.updates, m.snap.layout);
  RebuildPolicy policy;
  policy.max_structural_updates = o.rebuild_threshold;
  Classifier cls(*m.engine, m.pipe.atoms, m.tree, policy);
  const auto r = apply_stream(cls, m, ops, [&](const UpdateOp& op, std::uint64_t v, double ms, bool rebuilt, const Error* err) {
    json line{{"op", op.kind == UpdateOp::Kind::Add ? "add" : "remove"}, {"ms", ms}};
    if (err) {
      line["error"] = std::string(to_string(err->code()));
      line["message"] = err->what();
    } else {
      line["version"] = v;
      line["atoms"] = cls.current()->atoms->size();
      if (rebuilt) line["rebuilt"] = true;
    }
    emit(line);
  });
  const auto e = cls.current();
  auto summary = latency_json(r);
  summary["atoms"] = e->atoms->size();
  summary["live_predicates"] = e->atoms->sources.size();
  summary["tree"] = tree_stats(*e->tree);
  emit({{"summary", summary}});
  return kOk;
}

int cmd_labels(const Options& o) {
  const auto m = load_model(o);
  const auto plane = build_label_plane(*m.engine, m.pipe.atoms, m.pipe.compiled, m.snap, o.seed);
  const auto tables = label_tables_to_json(plane, m.snap);
  emit(tables);
  const auto leaks = privacy_violations(tables);
  for (const auto& v : leaks) spdlog::error("label tables leak: {}", v);
  return leaks.empty() ? kOk : kDivergence;
}

int cmd_check(const Options& o) {
  const auto m = load_model(o);
  const auto plane = build_label_plane(*m.engine, m.pipe.atoms, m.pipe.compiled, m.snap, o.seed);
  Sample sample = o.exhaustive ? Sample::exhaustive() : Sample::random(o.sample, o.seed);
  if (!o.headers.empty() || !o.headers_file.empty()) sample = Sample::given(input_headers(o, m.snap.layout));
  if (o.exhaustive && m.snap.layout.total_width() > 24)
    throw UsageError("--exhaustive needs a layout of at most 24 bits; use --sample N");
  const auto r = equivalence_check(plane, m.tree, m.map, m.snap, *m.engine, sample);
  auto j = equivalence_to_json(r, m.snap);
  const auto leaks = privacy_violations(label_tables_to_json(plane, m.snap));
  j["privacy_violations"] = leaks;
  emit(j);
  if (!r.ok()) spdlog::error("{} of {} traces diverge", r.divergent, r.checked);
  return r.ok() && leaks.empty() ? kOk : kDivergence;
}

int cmd_bench(const Options& o) {
  auto m = load_model(o);
  std::vector<Header> headers;
  headers.reserve(std::min<std::size_t>(o.queries, 1 << 16));
  for_each_sample(m.snap.layout, Sample::random(std::min<std::size_t>(o.queries, 1 << 16), o.seed),
                  [&](const Header& h) { headers.push_back(h); });

  RebuildPolicy policy;
  policy.max_structural_updates = o.rebuild_threshold;
  Classifier cls(*m.engine, m.pipe.atoms, m.tree, policy);

  auto run_queries = [&](std::size_t threads, std::atomic<bool>* stop) {
    std::atomic<std::uint64_t> total{0};
    std::vector<std::thread> pool;
    const auto t0 = Clock::now();
    for (std::size_t t = 0; t < threads; ++t)
      pool.emplace_back([&, t] {
        std::uint64_t sink = 0, done = 0;
        std::size_t i = t * 7919;
        // Readers pin an epoch per batch rather than per query.
        while (stop ? !stop->load(std::memory_order_relaxed) : done < o.queries / threads) {
          const auto epoch = cls.current();
          for (std::size_t k = 0; k < 256 && (stop || done < o.queries / threads); ++k, ++done)
            sink += epoch->tree->classify(cls.engine(), headers[i++ % headers.size()]);
        }
        total += done + (sink & 0);
      });
    for (auto& th : pool) th.join();
    return std::pair{total.load(), ms_since(t0)};
  };

  json throughput = json::array();
  std::vector<std::size_t> counts;
  for (std::size_t t = 1; t < o.threads; t *= 2) counts.push_back(t);
  counts.push_back(o.threads);
  for (auto t : counts) {
    const auto [n, ms] = run_queries(t, nullptr);
    throughput.push_back({{"threads", t}, {"queries", n}, {"qps", static_cast<double>(n) / (ms / 1000.0)}});
  }

  json updates = nullptr;
  if (!o.updates.empty()) {
    const auto ops = read_updates(o.updates, m.snap.layout);
    std::atomic<bool> stop{false};
    std::pair<std::uint64_t, double> concurrent{};
    std::thread readers([&] { concurrent = run_queries(o.threads, &stop); });
    const auto r = apply_stream(cls, m, ops, [](auto&&...) {});
    stop = true;
    readers.join();
    updates = latency_json(r);
    updates["concurrent_qps"] = static_cast<double>(concurrent.first) / (concurrent.second / 1000.0);
  }

  const auto e = cls.current();
  const std::size_t memory = m.engine->memory_bytes() + e->tree->nodes.size() * sizeof(APTree::Node) +
                             e->atoms->size() * sizeof(Atom);
  emit({{"atoms", e->atoms->size()},
        {"predicates", e->atoms->sources.size()},
        {"avg_depth", e->tree->avg_leaf_depth().value()},
        {"max_depth", e->tree->max_depth()},
        {"compile_ms", m.compile_ms},
        {"throughput", throughput},
        {"updates", updates},
        {"memory_bytes_estimate", memory},
        {"hardware_threads", std::thread::hardware_concurrency()}});
  return kOk;
}

void init_logging() {
  auto logger = spdlog::stderr_color_mt("apc");
  logger->set_pattern("apc: %^%l%$: %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::warn);
  if (const char* level = std::getenv("APB_LOG")) spdlog::set_level(spdlog::level::from_str(level));
}

}  // namespace

int main(int argc, char** argv) {
  init_logging();
  Options o;
  CLI::App app{"Atomic-predicate packet classification and behavior identification"};
  app.require_subcommand(1, 1);

  auto snapshot_opts = [&](CLI::App* sub) {
    sub->add_option("--snapshot,snapshot", o.snapshot, "Network snapshot JSON");
    sub->add_option("--strategy", o.strategy, "Tree build strategy: greedy|order|random")
        ->check(CLI::IsMember({"greedy", "order", "random"}));
    sub->add_option("--seed", o.seed, "Seed for random strategies, samples and label keys");
  };
  auto header_opts = [&](CLI::App* sub) {
    sub->add_option("--header", o.headers, "Header as a JSON object of field values (repeatable)");
    sub->add_option("--headers", o.headers_file, "File with one header object per line");
    sub->add_option("--sample", o.sample, "Random headers when none are given");
  };

  auto* gen = app.add_subcommand("gen", "Generate a synthetic snapshot and update stream");
  gen->add_option("--seed", o.seed);
  gen->add_option("--boxes", o.boxes);
  gen->add_option("--rules", o.rules, "Maximum rules per box");
  gen->add_option("--rewriters", o.rewriters);
  gen->add_option("--acl-probability", o.acl_probability);
  gen->add_option("--layout", o.layout, "NAME:WIDTH,... (default: 5-tuple)");
  gen->add_option("--dst", o.dst, "Destination field for routing prefixes");
  gen->add_option("--update-count", o.update_count);
  gen->add_option("--updates", o.updates, "Where to write the update stream");
  gen->add_option("--out,-o", o.out, "Where to write the snapshot (default: stdout)");

  auto* compile_cmd = app.add_subcommand("compile", "Compile predicates and atoms; print a summary");
  snapshot_opts(compile_cmd);
  auto* atoms = app.add_subcommand("atoms", "List atoms with sizes and predicate membership");
  snapshot_opts(atoms);
  auto* stats = app.add_subcommand("tree-stats", "Build the AP Tree and print its shape");
  snapshot_opts(stats);
  auto* classify = app.add_subcommand("classify", "Print the atom of each header");
  snapshot_opts(classify);
  header_opts(classify);
  auto* trace_cmd = app.add_subcommand("trace", "Network behavior of each header");
  snapshot_opts(trace_cmd);
  header_opts(trace_cmd);
  trace_cmd->add_option("--ingress", o.ingress, "BOX:PORT (default: every external port)");
  auto* update = app.add_subcommand("update", "Apply an update stream incrementally");
  snapshot_opts(update);
  update->add_option("--updates", o.updates, "Update stream, one JSON op per line")->required();
  update->add_option("--rebuild-threshold", o.rebuild_threshold, "Structural updates before a rebuild");
  auto* labels = app.add_subcommand("labels", "Print the label-plane tables");
  snapshot_opts(labels);
  auto* check = app.add_subcommand("check", "Label plane vs header plane equivalence");
  snapshot_opts(check);
  header_opts(check);
  check->add_flag("--exhaustive", o.exhaustive, "Every header of the layout (at most 24 bits)");
  auto* bench = app.add_subcommand("bench", "Classification throughput and update latency");
  snapshot_opts(bench);
  bench->add_option("--queries", o.queries);
  bench->add_option("--threads", o.threads)->check(CLI::PositiveNumber);
  bench->add_option("--updates", o.updates, "Update stream applied while queries run");
  bench->add_option("--rebuild-threshold", o.rebuild_threshold);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) return cmd_gen(o);
    if (*compile_cmd) return cmd_compile(o);
    if (*atoms) return cmd_atoms(o);
    if (*stats) return cmd_tree_stats(o);
    if (*classify) return cmd_classify(o);
    if (*trace_cmd) return cmd_trace(o);
    if (*update) return cmd_update(o);
    if (*labels) return cmd_labels(o);
    if (*check) return cmd_check(o);
    if (*bench) return cmd_bench(o);
  } catch (const UsageError& e) {
    spdlog::error("{}", e.what());
    return kUsage;
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    if (e.code() == Errc::Inconsistent || e.code() == Errc::ImageSplit || e.code() == Errc::LabelCollision)
      return kDivergence;
    return kUsage;
  } catch (const std::exception& e) {
    spdlog::error("internal error: {}", e.what());
    return kInternal;
  }
  return kUsage;
}
