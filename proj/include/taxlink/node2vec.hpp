#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "taxlink/linalg.hpp"
#include "taxlink/rng.hpp"

namespace taxlink {

class Taxonomy;
class EmbeddingTable;

struct WalkConfig {
  int walks_per_node = 10;
  int walk_length = 80;
  double return_param_p = 1.0;
  double inout_param_q = 1.0;
  int window = 10;
  int negatives_per_positive = 5;
  int epochs = 100;
  double lr = 0.025;
  std::uint64_t seed = 1;
};

enum class NodeKind { type1, type2, gcn };

// Concept representations, row r aligned to taxonomy node_index r.
struct NodeEmbeddings {
  NodeKind kind = NodeKind::type1;
  Matrix matrix;

  int dim() const { return static_cast<int>(matrix.cols()); }
};

// Second-order walk bias over neighbors(cur), given the previous node:
// weight 1/p when the candidate is prev, 1 when it is adjacent to prev,
// 1/q otherwise; normalized. Entries follow the ascending neighbor order.
Vector transition_distribution(const Taxonomy& tax, int prev, int cur, const WalkConfig& cfg);

// walks_per_node walks from every node, each up to walk_length nodes, first
// step uniform. Walks truncate at isolated nodes. One derived rng per start
// node (seed ^ node_index) keeps the output independent of scheduling.
std::vector<std::vector<int>> generate_walks(const Taxonomy& tax, const WalkConfig& cfg);

// type1: uniform(-0.5/d, 0.5/d) entries; type2: row v is the scope-note
// encoding of node v (d must equal the table dim).
NodeEmbeddings init_node_embeddings(const Taxonomy& tax, NodeKind kind, int dim, Rng& rng,
                                    const EmbeddingTable* table = nullptr);

// All (center, context) pairs of one walk within the window, in scan order.
std::vector<std::pair<int, int>> skipgram_pairs(const std::vector<int>& walk, int window);

// Negative-sampling skip-gram loss for one pair:
//   -log sigmoid(u.v_pos) - sum_k log sigmoid(-u.v_neg_k)
// Gradient outputs are optional and sized like their inputs.
double sgns_loss(const Vector& center, const Vector& positive, const Matrix& negatives,
                 Vector* d_center = nullptr, Vector* d_positive = nullptr,
                 Matrix* d_negatives = nullptr);

// SGD over all walk pairs for cfg.epochs epochs, negatives drawn from the
// unigram^0.75 distribution of walk occurrences, learning rate decaying
// linearly to 1e-4 of its start value. Returns the input-vector matrix.
NodeEmbeddings train_skipgram(const std::vector<std::vector<int>>& walks, NodeEmbeddings init,
                              const WalkConfig& cfg, std::vector<double>* epoch_loss = nullptr);

}  // namespace taxlink
