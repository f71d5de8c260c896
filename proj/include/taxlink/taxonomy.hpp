#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "taxlink/linalg.hpp"

namespace taxlink {

// One taxonomy record: a disease concept with its position(s) in the
// hierarchy encoded as dot-separated tree numbers.
struct ConceptNode {
  std::string unique_id;
  std::string heading;
  std::string scope_note;
  std::vector<std::string> tree_numbers;
  std::vector<std::string> entry_terms;
};

// Undirected concept graph. Nodes are indexed lexicographically by unique_id
// so two loads of the same file agree bit-for-bit. Edges come from tree
// numbers: each number with >= 2 segments links its owner to the owner of
// the longest strict prefix present in the file, which keeps partial exports
// (e.g. only one category branch) connected. Self-edges are never stored.
class Taxonomy {
 public:
  static Taxonomy load(const std::string& path);
  static Taxonomy from_records(std::vector<ConceptNode> records);

  int size() const { return static_cast<int>(nodes_.size()); }
  int edge_count() const;

  const ConceptNode& node(int index) const { return nodes_.at(index); }
  int index_of(std::string_view unique_id) const;  // LookupError on unknown ids
  bool contains(std::string_view unique_id) const;

  // Neighbor indices in ascending order; the node itself is never listed.
  const std::vector<int>& neighbors(int index) const;
  std::vector<std::string> neighbor_ids(std::string_view unique_id) const;

  // Parent indices recovered from tree-number prefixes (ascending, deduped).
  // The undirected edge set is parents plus children.
  const std::vector<int>& parents(int index) const;

  // Symmetric 0/1 matrix with the diagonal forced to 1.
  Matrix adjacency_with_self_loops() const;
  Matrix adjacency_without_self_loops() const;

 private:
  void build_graph();

  std::vector<ConceptNode> nodes_;            // sorted by unique_id
  std::vector<std::vector<int>> neighbors_;   // ascending per node
  std::vector<std::vector<int>> parents_;     // ascending per node
  int edge_count_ = 0;
};

}  // namespace taxlink
