#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "codd/evidence.h"
#include "codd/rng.h"
#include "codd/types.h"

namespace codd {

class HmmParams;

using NodeId = std::uint32_t;

enum class NodeKind : std::uint8_t { input = 0, product = 1, sum = 2 };

struct CircuitNode {
  NodeKind kind = NodeKind::input;
  std::uint32_t variable = 0;       // input nodes
  std::vector<double> log_params;   // input nodes, one per vocabulary entry
  std::vector<NodeId> children;     // product and sum nodes
  std::vector<double> log_weights;  // sum nodes, aligned with children

  static CircuitNode input(std::uint32_t variable, std::vector<double> log_params);
  static CircuitNode product(std::vector<NodeId> children);
  static CircuitNode sum(std::vector<NodeId> children, std::vector<double> log_weights);
};

// Fixed-width bit vector over the circuit's variables.
class ScopeSet {
 public:
  ScopeSet() = default;
  explicit ScopeSet(std::size_t num_vars) : words_((num_vars + 63) / 64, 0) {}

  void insert(std::size_t v) { words_[v / 64] |= std::uint64_t{1} << (v % 64); }
  bool contains(std::size_t v) const { return (words_[v / 64] >> (v % 64)) & 1u; }
  bool disjoint(const ScopeSet& other) const;
  void merge(const ScopeSet& other);
  std::size_t count() const;
  bool operator==(const ScopeSet&) const = default;

 private:
  std::vector<std::uint64_t> words_;
};

// Immutable DAG of input/product/sum nodes in topological order (children
// strictly before parents). The last node is the root. Construction rejects
// malformed graphs with StructuralError; semantic properties (decomposability,
// smoothness, normalization) are checked by validate_structure.
class CircuitGraph {
 public:
  CircuitGraph(std::size_t num_vars, std::size_t vocab, std::vector<CircuitNode> nodes);

  std::size_t num_vars() const { return num_vars_; }
  std::size_t vocab_size() const { return vocab_; }
  std::size_t size() const { return nodes_.size(); }
  std::size_t edge_count() const { return edges_; }
  NodeId root() const { return static_cast<NodeId>(nodes_.size() - 1); }

  const CircuitNode& node(NodeId id) const { return nodes_[id]; }
  std::span<const CircuitNode> nodes() const { return nodes_; }
  const ScopeSet& scope(NodeId id) const { return scopes_[id]; }

 private:
  std::size_t num_vars_;
  std::size_t vocab_;
  std::size_t edges_ = 0;
  std::vector<CircuitNode> nodes_;
  std::vector<ScopeSet> scopes_;
};

enum class ViolationKind {
  decomposability,
  smoothness,
  scope_coverage,
  weight_normalization,
  leaf_normalization,
  unreachable,
};

const char* to_string(ViolationKind kind);

struct Violation {
  ViolationKind kind;
  NodeId node;
  std::string detail;
};

struct ValidationReport {
  std::vector<Violation> violations;

  bool ok() const { return violations.empty(); }
  bool has(ViolationKind kind) const;
};

ValidationReport validate_structure(const CircuitGraph& graph);

// log p(x) in one bottom-up pass. Requires a valid circuit.
double evaluate_log_likelihood(const CircuitGraph& graph, std::span<const Token> assignment);

// log of the expected product of evidence weights, sum_x p(x) prod_i w_i(x_i).
// Input nodes contribute their local expectation under the evidence column.
double evaluate_virtual_evidence(const CircuitGraph& graph, const VirtualEvidence& evidence);

// Bottom-up evidence pass followed by a top-down pass that picks sum-node
// children by their evidence-adjusted posterior and draws leaves from
// g_n(v) * w(v). Requires a valid circuit; throws ContradictionError if the
// evidence has zero probability.
TokenVector sample_circuit(const CircuitGraph& graph, const VirtualEvidence& evidence, Rng& rng);

// Unrolls a homogeneous HMM over `length` positions into a smooth,
// decomposable circuit. With one hidden state the result is a single product
// of independent leaves.
CircuitGraph build_hmm_circuit(std::size_t num_states, std::size_t vocab, std::size_t length,
                               const HmmParams& params);

// CODDPC01 binary format.
void write_circuit(std::ostream& out, const CircuitGraph& graph);
CircuitGraph read_circuit(std::istream& in);
void save_circuit(const std::filesystem::path& path, const CircuitGraph& graph);
CircuitGraph load_circuit(const std::filesystem::path& path);

}  // namespace codd
