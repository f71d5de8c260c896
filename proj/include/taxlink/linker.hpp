#pragma once

#include <optional>
#include <string>
#include <vector>

#include "taxlink/corpus.hpp"
#include "taxlink/gcn.hpp"
#include "taxlink/linalg.hpp"

namespace taxlink {

class Taxonomy;

// Identity on the top-left square block, zeros elsewhere: the bilinear form
// starts out as (truncated) dot-product matching.
Matrix identity_padded(Index rows, Index cols);

// Bilinear compatibility of one mention encoding against every node:
// score_y = enc^T W emb_y.
Vector link_scores(const Vector& mention_enc, const Matrix& nodes, const Matrix& bilinear_w);

// Softmax over the full node inventory, no candidate pre-selection.
Vector link_probabilities(const Vector& mention_enc, const Matrix& nodes,
                          const Matrix& bilinear_w);

struct LinkPrediction {
  std::vector<std::pair<int, double>> ranked;  // (node index, probability), top k
  int rank_of_gold = -1;                       // 1-based, over the full inventory
};

// Rank computed over all nodes before truncation to k; ties break toward the
// lower node index.
LinkPrediction rank_for_mention(const Vector& mention_enc, const Matrix& nodes,
                                const Matrix& bilinear_w, int k, int gold_node = -1);

enum class NodeSource { type1, type2, gcn_live, file };

// The linking model: the bilinear form plus whatever produces node vectors.
// For gcn_live, `base_nodes` holds H0 (scope-note encodings) and the node
// matrix is recomputed from the GCN parameters; otherwise `base_nodes` is the
// node matrix itself (frozen unless finetuning).
struct LinkerModel {
  NodeSource source = NodeSource::file;
  Matrix bilinear_w;
  Matrix base_nodes;
  std::optional<GcnParams> gcn;
  bool self_loops = true;

  int node_dim() const;
  Matrix node_matrix(const Matrix* adjacency) const;

  template <class F>
  void visit(F&& f) {
    f("el.bilinear_w", Eigen::Ref<Matrix>(bilinear_w));
    f("el.base_nodes", Eigen::Ref<Matrix>(base_nodes));
    if (gcn) gcn->visit(f);
  }
};

// One supervised linking instance.
struct ElExample {
  Vector enc;
  int gold_node = -1;
  std::string doc_id;
  Span char_span;
  std::string gold_id;
};

struct LinkerTrainConfig {
  int epochs = 500;
  double lr = 1e-3;
  int batch_size = 32;
  bool finetune_nodes = false;
  int eval_every = 1;
  int patience = 0;
  std::uint64_t seed = 1;
};

struct LinkerHistory {
  std::vector<double> epoch_loss;
  std::vector<double> val_mrr;
  int best_epoch = -1;
};

// Mini-batched Adam on the mean negative log-likelihood of gold nodes. With
// gcn_live the gradients reach the GCN parameters; with finetune_nodes they
// reach base_nodes. Keeps the best validation-MRR parameters when a
// validation set is given.
LinkerModel train_linker(const std::vector<ElExample>& train, const std::vector<ElExample>& val,
                         LinkerModel init, const Matrix* adjacency, const LinkerTrainConfig& cfg,
                         LinkerHistory* history = nullptr);

// Gold ranks over a set of examples given a fixed node matrix.
std::vector<int> linker_gold_ranks(const Matrix& nodes, const Matrix& bilinear_w,
                                   const std::vector<ElExample>& examples);

// Mean negative log-likelihood of the gold nodes.
double linker_mean_nll(const Matrix& nodes, const Matrix& bilinear_w,
                       const std::vector<ElExample>& examples);

// The training-step math at fixed parameters: mean NLL plus its gradients
// with respect to W and the node matrix (either output may be null).
double linker_loss_and_grads(const Matrix& nodes, const Matrix& bilinear_w,
                             const std::vector<const ElExample*>& batch, Matrix* d_w,
                             Matrix* d_nodes);

}  // namespace taxlink
