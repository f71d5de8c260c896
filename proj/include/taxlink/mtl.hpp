#pragma once

#include <string>
#include <vector>

#include "taxlink/linker.hpp"
#include "taxlink/metrics.hpp"
#include "taxlink/ner.hpp"

namespace taxlink {

class Taxonomy;
class ContextualStore;

enum class LossMix { sum, alternate };
enum class MtlElFeatures { shared, contextual };

struct MtlConfig {
  NerConfig ner;  // shared encoder + tagger settings; ner.epochs is ignored
  double el_weight = 1.0;
  LossMix loss_mix = LossMix::sum;
  MtlElFeatures el_features = MtlElFeatures::shared;
  int epochs = 300;
  int eval_every = 1;
  int patience = 0;
  int pre_at_k = 30;
  std::uint64_t seed = 1;
};

// Node representation wiring for the joint model's linking head.
struct MtlNodeSetup {
  NodeSource source = NodeSource::gcn_live;
  Matrix base_nodes;           // node matrix, or H0 when source is gcn_live
  std::vector<int> gcn_hidden_dims;  // gcn_live: hidden/output widths after H0's dim
  bool self_loops = true;
  bool finetune_nodes = false;
};

struct MtlModel {
  NerModel ner;       // shared encoder + tagger head
  LinkerModel linker; // linking head over shared mention features
  MtlElFeatures el_features = MtlElFeatures::shared;
};

// Average pooling of shared hidden states over the token range [first, last_ex).
Vector shared_mention_features(const Matrix& hidden, int first, int last_ex);

struct MtlHistory {
  std::vector<double> ner_loss;   // per epoch
  std::vector<double> el_loss;    // per epoch, mean over sentences with supervision
  std::vector<double> val_score;  // (F1 + MRR)/2 per evaluation
  int best_epoch = -1;
};

// Joint training: per sentence, loss = NLL_ner + el_weight * NLL_el (sum
// mode) or alternating task steps. Both losses' gradients reach the shared
// encoder; early stopping tracks (validation F1 + MRR)/2.
MtlModel mtl_train(const std::vector<TaggedDocument>& train,
                   const std::vector<TaggedDocument>& validation, const Taxonomy& tax,
                   const MtlNodeSetup& nodes, const MtlConfig& cfg, const std::string& charset,
                   const ContextualStore* contextual = nullptr, MtlHistory* history = nullptr);

struct JointReport {
  Prf ner;
  double el_mrr = 0.0;
  double el_pre1 = 0.0;
  double el_pre_k = 0.0;
  int el_mentions = 0;
  int gold_spans = 0;
  int predicted_spans = 0;
};

// Tagger metrics on predicted spans; linking metrics on gold spans (matching
// the standalone evaluation protocol). Empty corpora yield zero counts.
JointReport mtl_evaluate(const MtlModel& model, const std::vector<TaggedDocument>& docs,
                         const Taxonomy& tax, int pre_at_k = 30,
                         const ContextualStore* contextual = nullptr);

// Resolved gold mentions encoded with the model's mention features (shared
// eval-mode hidden states or contextual rows), for dumps and reports.
std::vector<ElExample> mtl_el_examples(const MtlModel& model,
                                       const std::vector<TaggedDocument>& docs,
                                       const ContextualStore* contextual = nullptr);

}  // namespace taxlink
