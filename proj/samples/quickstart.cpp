// Compile the three-atom sample, classify a few headers and trace one
// through the label plane.
//
//   ./build/quickstart samples/three_atom.json

#include <iostream>
#include <fstream>
#include <sstream>

#include "apc/apc.hpp"

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: quickstart SNAPSHOT.json\n";
    return 1;
  }
  std::ifstream in(argv[1]);
  std::stringstream text;
  text << in.rdbuf();

  auto snap = apc::parse_snapshot(text.str());
  apc::Engine engine(snap.layout);
  auto pipe = apc::run_pipeline(engine, snap);
  auto tree = apc::build_tree(engine, pipe.atoms, pipe.atoms.sources, apc::BuildStrategy::greedy());
  auto map = apc::compile_behavior_map(engine, snap, pipe.compiled, pipe.atoms);
  std::cout << pipe.atoms.size() << " atoms, avg leaf depth " << tree.avg_leaf_depth().value() << "\n";

  const auto in_port = snap.external_ports().front();
  const unsigned width = snap.layout.total_width();
  for (std::uint64_t v = 0; v < 4 && width <= 64; ++v) {
    const auto h = apc::Header::from_uint(width, v << (width - 2));
    std::cout << h.to_string() << " -> atom " << tree.classify(engine, h) << ": "
              << apc::report_to_json(apc::identify(tree, map, snap, engine, h, in_port), snap).dump() << "\n";
  }

  auto plane = apc::build_label_plane(engine, pipe.atoms, pipe.compiled, snap, /*agent_key=*/42);
  const auto pkt = apc::agent_encode(plane, tree, engine, apc::Header::from_uint(width, 0));
  std::cout << "label " << pkt.label << ": "
            << apc::report_to_json(apc::simulate_cloud(plane, snap, pkt, in_port), snap, "label").dump() << "\n";
}
