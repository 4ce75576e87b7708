#include <fstream>

#include "binary_io.h"
#include "codd/circuit.h"
#include "codd/error.h"

namespace codd {

namespace {
constexpr std::string_view kMagic = "CODDPC01";
}

// Layout after the header {L, V, node count}: per node a kind byte, then
//   input:   u32 variable, V x f64 log-params
//   product: u32 child count, child ids
//   sum:     u32 child count, child ids, child-count x f64 log-weights
void write_circuit(std::ostream& out, const CircuitGraph& graph) {
  detail::ByteWriter w;
  w.bytes(kMagic);
  w.u32(static_cast<std::uint32_t>(graph.num_vars()));
  w.u32(static_cast<std::uint32_t>(graph.vocab_size()));
  w.u32(static_cast<std::uint32_t>(graph.size()));
  for (const CircuitNode& n : graph.nodes()) {
    w.u8(static_cast<std::uint8_t>(n.kind));
    if (n.kind == NodeKind::input) {
      w.u32(n.variable);
      for (double x : n.log_params) w.f64(x);
      continue;
    }
    w.u32(static_cast<std::uint32_t>(n.children.size()));
    for (NodeId c : n.children) w.u32(c);
    if (n.kind == NodeKind::sum)
      for (double x : n.log_weights) w.f64(x);
  }
  w.flush_to(out);
}

CircuitGraph read_circuit(std::istream& in) {
  auto r = detail::ByteReader::from_stream(in);
  r.expect_magic(kMagic);
  const std::size_t num_vars = r.u32();
  const std::size_t vocab = r.u32();
  const std::size_t count = r.u32();
  r.require_bytes(count, 5, "node records");
  std::vector<CircuitNode> nodes;
  nodes.reserve(count);
  for (std::size_t id = 0; id < count; ++id) {
    const std::size_t at = r.offset();
    const std::uint8_t tag = r.u8();
    if (tag > 2) throw FormatError("unknown node kind " + std::to_string(tag), at);
    const auto kind = static_cast<NodeKind>(tag);
    if (kind == NodeKind::input) {
      const std::uint32_t var = r.u32();
      r.require_bytes(vocab, 8, "leaf parameters");
      std::vector<double> params(vocab);
      for (double& x : params) x = r.f64();
      nodes.push_back(CircuitNode::input(var, std::move(params)));
      continue;
    }
    const std::size_t k = r.u32();
    r.require_bytes(k, kind == NodeKind::sum ? 12 : 4, "child records");
    std::vector<NodeId> children(k);
    for (NodeId& c : children) c = r.u32();
    if (kind == NodeKind::product) {
      nodes.push_back(CircuitNode::product(std::move(children)));
    } else {
      std::vector<double> weights(k);
      for (double& x : weights) x = r.f64();
      nodes.push_back(CircuitNode::sum(std::move(children), std::move(weights)));
    }
  }
  if (!r.at_end()) throw FormatError("trailing bytes after circuit", r.offset());
  return CircuitGraph(num_vars, vocab, std::move(nodes));
}

void save_circuit(const std::filesystem::path& path, const CircuitGraph& graph) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  write_circuit(out, graph);
  if (!out) throw Error("failed writing " + path.string());
}

CircuitGraph load_circuit(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return read_circuit(in);
}

}  // namespace codd
