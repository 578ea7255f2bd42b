#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "apc/apc.hpp"

#ifndef APC_SAMPLES_DIR
#error "APC_SAMPLES_DIR must point at the sample snapshots"
#endif

namespace fixtures {

using namespace apc;

inline std::string sample_path(const std::string& name) { return std::string(APC_SAMPLES_DIR) + "/" + name; }

inline std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline NetworkSnapshot load(const std::string& name) { return parse_snapshot(read_file(sample_path(name))); }

/// Every hand-built fixture; all have width <= 12.
inline const std::vector<std::string>& names() {
  static const std::vector<std::string> all{"three_atom.json", "chain.json", "loop.json", "rewriter.json"};
  return all;
}

inline HeaderLayout h4() { return HeaderLayout({{"h", 4}}); }

inline Header h4(std::uint64_t v) { return Header::from_uint(4, v); }

inline FieldConstraint pfx4(std::uint64_t v, unsigned len) { return FieldConstraint::prefix("h", v, len); }

/// The generator's configuration for the sizeable synthetic workloads.
inline WorkloadSpec synthetic(std::uint64_t seed, std::size_t boxes, std::size_t rules) {
  WorkloadSpec s;
  s.seed = seed;
  s.box_count = boxes;
  s.rules_per_box = {rules / 2, rules};
  s.prefix_length = {8, 24};
  s.acl_probability = 0.2;
  s.acl_entries_per_box = {1, 3};
  s.extra_links = boxes / 4;
  s.max_ports_per_box = 8;
  return s;
}

}  // namespace fixtures
