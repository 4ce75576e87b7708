#include "codd/circuit.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <string>

#include "codd/error.h"
#include "codd/hmm.h"
#include "codd/log_math.h"

namespace codd {

namespace {

constexpr double kNormTolerance = 1e-9;

double exp_sum(std::span<const double> xs) {
  double total = 0.0;
  for (double x : xs) total += std::exp(x);
  return total;
}

// Per-node log values of the evidence pass. Evaluation is a single forward
// sweep over the topologically ordered node array.
std::vector<double> evidence_pass(const CircuitGraph& graph, const VirtualEvidence& evidence) {
  if (evidence.length() != graph.num_vars() || evidence.vocab_size() != graph.vocab_size())
    throw InputError("evidence dimensions do not match the circuit");
  const auto nodes = graph.nodes();
  std::vector<double> value(nodes.size());
  std::vector<double> scratch;
  for (std::size_t id = 0; id < nodes.size(); ++id) {
    const CircuitNode& n = nodes[id];
    switch (n.kind) {
      case NodeKind::input: {
        if (evidence.kind(n.variable) == EvidenceKind::observed) {
          value[id] = n.log_params[static_cast<std::size_t>(evidence.token(n.variable))];
        } else {
          const auto w = evidence.log_weights(n.variable);
          scratch.resize(w.size());
          for (std::size_t k = 0; k < w.size(); ++k) scratch[k] = n.log_params[k] + w[k];
          value[id] = log_sum_exp(scratch);
        }
        break;
      }
      case NodeKind::product: {
        double acc = 0.0;
        for (NodeId c : n.children) acc += value[c];
        value[id] = std::isnan(acc) ? kNegInf : acc;
        break;
      }
      case NodeKind::sum: {
        scratch.resize(n.children.size());
        for (std::size_t k = 0; k < n.children.size(); ++k) scratch[k] = n.log_weights[k] + value[n.children[k]];
        value[id] = log_sum_exp(scratch);
        break;
      }
    }
  }
  return value;
}

}  // namespace

CircuitNode CircuitNode::input(std::uint32_t variable, std::vector<double> log_params) {
  CircuitNode n;
  n.kind = NodeKind::input;
  n.variable = variable;
  n.log_params = std::move(log_params);
  return n;
}

CircuitNode CircuitNode::product(std::vector<NodeId> children) {
  CircuitNode n;
  n.kind = NodeKind::product;
  n.children = std::move(children);
  return n;
}

CircuitNode CircuitNode::sum(std::vector<NodeId> children, std::vector<double> log_weights) {
  CircuitNode n;
  n.kind = NodeKind::sum;
  n.children = std::move(children);
  n.log_weights = std::move(log_weights);
  return n;
}

bool ScopeSet::disjoint(const ScopeSet& other) const {
  for (std::size_t i = 0; i < words_.size(); ++i)
    if (words_[i] & other.words_[i]) return false;
  return true;
}

void ScopeSet::merge(const ScopeSet& other) {
  for (std::size_t i = 0; i < words_.size(); ++i) words_[i] |= other.words_[i];
}

std::size_t ScopeSet::count() const {
  std::size_t c = 0;
  for (auto w : words_) c += static_cast<std::size_t>(std::popcount(w));
  return c;
}

CircuitGraph::CircuitGraph(std::size_t num_vars, std::size_t vocab, std::vector<CircuitNode> nodes)
    : num_vars_(num_vars), vocab_(vocab), nodes_(std::move(nodes)) {
  if (num_vars_ == 0) throw StructuralError("circuit must have at least one variable");
  if (vocab_ == 0) throw StructuralError("circuit vocabulary must be nonempty");
  if (nodes_.empty()) throw StructuralError("circuit has no nodes");
  scopes_.reserve(nodes_.size());
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    const CircuitNode& n = nodes_[id];
    ScopeSet scope(num_vars_);
    const std::string where = "node " + std::to_string(id);
    if (n.kind == NodeKind::input) {
      if (n.variable >= num_vars_) throw StructuralError(where + ": variable index out of range");
      if (n.log_params.size() != vocab_) throw StructuralError(where + ": leaf parameter count != vocabulary size");
      scope.insert(n.variable);
    } else {
      if (n.children.empty()) throw StructuralError(where + ": internal node without children");
      if (n.kind == NodeKind::sum && n.log_weights.size() != n.children.size())
        throw StructuralError(where + ": sum weights not aligned with children");
      for (NodeId c : n.children) {
        if (c >= nodes_.size()) throw StructuralError(where + ": dangling child id " + std::to_string(c));
        if (c >= id) throw StructuralError(where + ": child " + std::to_string(c) + " violates topological order");
        scope.merge(scopes_[c]);
      }
      edges_ += n.children.size();
    }
    scopes_.push_back(std::move(scope));
  }
}

const char* to_string(ViolationKind kind) {
  switch (kind) {
    case ViolationKind::decomposability: return "decomposability";
    case ViolationKind::smoothness: return "smoothness";
    case ViolationKind::scope_coverage: return "scope_coverage";
    case ViolationKind::weight_normalization: return "weight_normalization";
    case ViolationKind::leaf_normalization: return "leaf_normalization";
    case ViolationKind::unreachable: return "unreachable";
  }
  return "unknown";
}

bool ValidationReport::has(ViolationKind kind) const {
  return std::any_of(violations.begin(), violations.end(), [&](const Violation& v) { return v.kind == kind; });
}

ValidationReport validate_structure(const CircuitGraph& graph) {
  ValidationReport report;
  const auto nodes = graph.nodes();
  std::vector<char> reachable(nodes.size(), 0);
  reachable[graph.root()] = 1;
  for (std::size_t id = nodes.size(); id-- > 0;) {
    if (!reachable[id]) continue;
    for (NodeId c : nodes[id].children) reachable[c] = 1;
  }

  for (std::size_t id = 0; id < nodes.size(); ++id) {
    const CircuitNode& n = nodes[id];
    const auto nid = static_cast<NodeId>(id);
    if (!reachable[id]) report.violations.push_back({ViolationKind::unreachable, nid, "not reachable from root"});
    switch (n.kind) {
      case NodeKind::input: {
        const double total = exp_sum(n.log_params);
        if (std::abs(total - 1.0) > kNormTolerance)
          report.violations.push_back({ViolationKind::leaf_normalization, nid, "leaf sums to " + std::to_string(total)});
        break;
      }
      case NodeKind::product: {
        ScopeSet seen(graph.num_vars());
        for (NodeId c : n.children) {
          if (!seen.disjoint(graph.scope(c))) {
            report.violations.push_back(
                {ViolationKind::decomposability, nid, "child " + std::to_string(c) + " overlaps a sibling scope"});
            break;
          }
          seen.merge(graph.scope(c));
        }
        break;
      }
      case NodeKind::sum: {
        const ScopeSet& first = graph.scope(n.children.front());
        for (NodeId c : n.children) {
          if (!(graph.scope(c) == first)) {
            report.violations.push_back(
                {ViolationKind::smoothness, nid, "child " + std::to_string(c) + " scope differs from first child"});
            break;
          }
        }
        const double total = exp_sum(n.log_weights);
        if (std::abs(total - 1.0) > kNormTolerance)
          report.violations.push_back({ViolationKind::weight_normalization, nid, "weights sum to " + std::to_string(total)});
        break;
      }
    }
  }
  if (graph.scope(graph.root()).count() != graph.num_vars())
    report.violations.push_back({ViolationKind::scope_coverage, graph.root(), "root scope does not cover all variables"});
  return report;
}

double evaluate_log_likelihood(const CircuitGraph& graph, std::span<const Token> assignment) {
  if (assignment.size() != graph.num_vars())
    throw InputError("assignment length " + std::to_string(assignment.size()) + " != " +
                     std::to_string(graph.num_vars()));
  for (Token t : assignment)
    if (t < 0 || static_cast<std::size_t>(t) >= graph.vocab_size())
      throw InputError("token " + std::to_string(t) + " outside vocabulary");
  const auto nodes = graph.nodes();
  std::vector<double> value(nodes.size());
  std::vector<double> scratch;
  for (std::size_t id = 0; id < nodes.size(); ++id) {
    const CircuitNode& n = nodes[id];
    switch (n.kind) {
      case NodeKind::input:
        value[id] = n.log_params[static_cast<std::size_t>(assignment[n.variable])];
        break;
      case NodeKind::product: {
        double acc = 0.0;
        for (NodeId c : n.children) acc += value[c];
        value[id] = acc;
        break;
      }
      case NodeKind::sum: {
        scratch.resize(n.children.size());
        for (std::size_t k = 0; k < n.children.size(); ++k) scratch[k] = n.log_weights[k] + value[n.children[k]];
        value[id] = log_sum_exp(scratch);
        break;
      }
    }
  }
  return value[graph.root()];
}

double evaluate_virtual_evidence(const CircuitGraph& graph, const VirtualEvidence& evidence) {
  return evidence_pass(graph, evidence)[graph.root()];
}

TokenVector sample_circuit(const CircuitGraph& graph, const VirtualEvidence& evidence, Rng& rng) {
  const std::vector<double> value = evidence_pass(graph, evidence);
  if (value[graph.root()] == kNegInf) throw ContradictionError("evidence has zero probability under the circuit");
  TokenVector out(graph.num_vars(), 0);
  std::vector<NodeId> stack{graph.root()};
  std::vector<double> logits;
  while (!stack.empty()) {
    const NodeId id = stack.back();
    stack.pop_back();
    const CircuitNode& n = graph.node(id);
    switch (n.kind) {
      case NodeKind::input: {
        if (evidence.kind(n.variable) == EvidenceKind::observed) {
          out[n.variable] = evidence.token(n.variable);
        } else {
          const auto w = evidence.log_weights(n.variable);
          logits.resize(w.size());
          for (std::size_t k = 0; k < w.size(); ++k) logits[k] = n.log_params[k] + w[k];
          out[n.variable] = static_cast<Token>(rng.categorical_log(logits));
        }
        break;
      }
      case NodeKind::product:
        for (auto it = n.children.rbegin(); it != n.children.rend(); ++it) stack.push_back(*it);
        break;
      case NodeKind::sum: {
        logits.resize(n.children.size());
        for (std::size_t k = 0; k < n.children.size(); ++k) logits[k] = n.log_weights[k] + value[n.children[k]];
        stack.push_back(n.children[rng.categorical_log(logits)]);
        break;
      }
    }
  }
  return out;
}

CircuitGraph build_hmm_circuit(std::size_t num_states, std::size_t vocab, std::size_t length,
                               const HmmParams& params) {
  if (num_states < 1 || vocab < 2 || length < 1)
    throw InputError("build_hmm_circuit: need N >= 1, V >= 2, L >= 1");
  if (params.num_states() != num_states || params.vocab_size() != vocab)
    throw InputError("build_hmm_circuit: parameter dimensions do not match N=" + std::to_string(num_states) +
                     ", V=" + std::to_string(vocab));
  std::vector<CircuitNode> nodes;
  auto push = [&](CircuitNode n) {
    nodes.push_back(std::move(n));
    return static_cast<NodeId>(nodes.size() - 1);
  };
  auto leaf = [&](std::size_t pos, std::size_t h) {
    const auto row = params.log_b_row(h);
    return push(CircuitNode::input(static_cast<std::uint32_t>(pos), {row.begin(), row.end()}));
  };

  if (num_states == 1) {
    std::vector<NodeId> leaves;
    for (std::size_t i = 0; i < length; ++i) leaves.push_back(leaf(i, 0));
    push(CircuitNode::product(std::move(leaves)));
    return CircuitGraph(length, vocab, std::move(nodes));
  }

  // suffix[h]: distribution over positions i..L-1 given hidden state h at i.
  std::vector<NodeId> suffix(num_states);
  for (std::size_t h = 0; h < num_states; ++h) suffix[h] = leaf(length - 1, h);
  for (std::size_t i = length - 1; i-- > 0;) {
    std::vector<NodeId> next(num_states);
    for (std::size_t h = 0; h < num_states; ++h) {
      const auto row = params.log_a_row(h);
      next[h] = push(CircuitNode::sum(suffix, {row.begin(), row.end()}));
    }
    for (std::size_t h = 0; h < num_states; ++h) {
      const NodeId l = leaf(i, h);
      next[h] = push(CircuitNode::product({l, next[h]}));
    }
    suffix = std::move(next);
  }
  const auto pi = params.log_pi();
  push(CircuitNode::sum(suffix, {pi.begin(), pi.end()}));
  return CircuitGraph(length, vocab, std::move(nodes));
}

}  // namespace codd
