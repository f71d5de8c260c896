#include "taxlink/taxonomy.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "taxlink/errors.hpp"

namespace taxlink {
namespace {

using nlohmann::json;

bool valid_tree_number(const std::string& t) {
  if (t.empty() || t.front() == '.' || t.back() == '.') return false;
  bool in_segment = false;
  for (char c : t) {
    if (c == '.') {
      if (!in_segment) return false;
      in_segment = false;
    } else if (std::isalnum(static_cast<unsigned char>(c))) {
      in_segment = true;
    } else {
      return false;
    }
  }
  return in_segment;
}

std::vector<std::string> string_list(const json& j, const char* key, int line) {
  const json& v = j.at(key);
  if (!v.is_array()) {
    throw ParseError("taxonomy line " + std::to_string(line) + ": '" + key + "' must be a list");
  }
  std::vector<std::string> out;
  for (const json& item : v) {
    if (!item.is_string()) {
      throw ParseError("taxonomy line " + std::to_string(line) + ": '" + key +
                       "' entries must be strings");
    }
    out.push_back(item.get<std::string>());
  }
  return out;
}

ConceptNode parse_record(const std::string& text, int line) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError("taxonomy line " + std::to_string(line) + ": " + e.what());
  }
  if (!j.is_object()) {
    throw ParseError("taxonomy line " + std::to_string(line) + ": record must be an object");
  }
  static const std::set<std::string> kKeys = {"ui", "heading", "scope_note", "tree_numbers",
                                              "entry_terms"};
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (!kKeys.count(key)) {
      throw ParseError("taxonomy line " + std::to_string(line) + ": unexpected key '" + key + "'");
    }
  }
  for (const std::string& key : kKeys) {
    if (!j.contains(key)) {
      throw ParseError("taxonomy line " + std::to_string(line) + ": missing key '" + key + "'");
    }
  }
  ConceptNode node;
  if (!j.at("ui").is_string() || !j.at("heading").is_string() || !j.at("scope_note").is_string()) {
    throw ParseError("taxonomy line " + std::to_string(line) +
                     ": ui/heading/scope_note must be strings");
  }
  node.unique_id = j.at("ui").get<std::string>();
  node.heading = j.at("heading").get<std::string>();
  node.scope_note = j.at("scope_note").get<std::string>();
  node.tree_numbers = string_list(j, "tree_numbers", line);
  node.entry_terms = string_list(j, "entry_terms", line);
  if (node.unique_id.empty()) {
    throw ParseError("taxonomy line " + std::to_string(line) + ": empty ui");
  }
  if (node.tree_numbers.empty()) {
    throw ParseError("taxonomy line " + std::to_string(line) + ": record " + node.unique_id +
                     " has no tree numbers");
  }
  for (const std::string& t : node.tree_numbers) {
    if (!valid_tree_number(t)) {
      throw ParseError("taxonomy line " + std::to_string(line) + ": bad tree number '" + t + "'");
    }
  }
  return node;
}

}  // namespace

Taxonomy Taxonomy::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("taxonomy: cannot open " + path);
  std::vector<ConceptNode> records;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    records.push_back(parse_record(line, line_no));
  }
  return from_records(std::move(records));
}

Taxonomy Taxonomy::from_records(std::vector<ConceptNode> records) {
  Taxonomy tax;
  std::sort(records.begin(), records.end(),
            [](const ConceptNode& a, const ConceptNode& b) { return a.unique_id < b.unique_id; });
  for (std::size_t i = 1; i < records.size(); ++i) {
    if (records[i].unique_id == records[i - 1].unique_id) {
      throw IntegrityError("taxonomy: duplicate unique_id " + records[i].unique_id);
    }
  }
  tax.nodes_ = std::move(records);
  tax.build_graph();
  return tax;
}

void Taxonomy::build_graph() {
  const int n = size();
  neighbors_.assign(n, {});
  parents_.assign(n, {});
  edge_count_ = 0;

  std::map<std::string, int> owner;
  for (int i = 0; i < n; ++i) {
    for (const std::string& t : nodes_[i].tree_numbers) {
      auto [it, inserted] = owner.emplace(t, i);
      if (!inserted) {
        throw IntegrityError("taxonomy: tree number " + t + " owned by both " +
                             nodes_[it->second].unique_id + " and " + nodes_[i].unique_id);
      }
    }
  }

  std::set<std::pair<int, int>> edges;
  for (int child = 0; child < n; ++child) {
    for (const std::string& t : nodes_[child].tree_numbers) {
      // Longest strict prefix of t (whole segments) owned by some record.
      std::string prefix = t;
      while (true) {
        const auto dot = prefix.rfind('.');
        if (dot == std::string::npos) break;
        prefix.resize(dot);
        const auto it = owner.find(prefix);
        if (it != owner.end()) {
          const int parent = it->second;
          if (parent != child) {
            edges.emplace(std::min(parent, child), std::max(parent, child));
            parents_[child].push_back(parent);
          }
          break;
        }
      }
    }
  }

  for (const auto& [a, b] : edges) {
    neighbors_[a].push_back(b);
    neighbors_[b].push_back(a);
  }
  edge_count_ = static_cast<int>(edges.size());
  for (auto& nbrs : neighbors_) std::sort(nbrs.begin(), nbrs.end());
  for (auto& ps : parents_) {
    std::sort(ps.begin(), ps.end());
    ps.erase(std::unique(ps.begin(), ps.end()), ps.end());
  }
}

int Taxonomy::edge_count() const { return edge_count_; }

int Taxonomy::index_of(std::string_view unique_id) const {
  const auto it = std::lower_bound(
      nodes_.begin(), nodes_.end(), unique_id,
      [](const ConceptNode& node, std::string_view id) { return node.unique_id < id; });
  if (it == nodes_.end() || it->unique_id != unique_id) {
    throw LookupError("taxonomy: unknown concept id '" + std::string(unique_id) + "'");
  }
  return static_cast<int>(it - nodes_.begin());
}

bool Taxonomy::contains(std::string_view unique_id) const {
  const auto it = std::lower_bound(
      nodes_.begin(), nodes_.end(), unique_id,
      [](const ConceptNode& node, std::string_view id) { return node.unique_id < id; });
  return it != nodes_.end() && it->unique_id == unique_id;
}

const std::vector<int>& Taxonomy::neighbors(int index) const { return neighbors_.at(index); }

std::vector<std::string> Taxonomy::neighbor_ids(std::string_view unique_id) const {
  std::vector<std::string> out;
  for (int nbr : neighbors(index_of(unique_id))) out.push_back(nodes_[nbr].unique_id);
  return out;
}

const std::vector<int>& Taxonomy::parents(int index) const { return parents_.at(index); }

Matrix Taxonomy::adjacency_with_self_loops() const {
  Matrix adj = adjacency_without_self_loops();
  adj.diagonal().setOnes();
  return adj;
}

Matrix Taxonomy::adjacency_without_self_loops() const {
  if (size() == 0) throw std::domain_error("adjacency: empty taxonomy");
  Matrix adj = Matrix::Zero(size(), size());
  for (int i = 0; i < size(); ++i) {
    for (int j : neighbors_[i]) adj(i, j) = 1.0;
  }
  return adj;
}

}  // namespace taxlink
