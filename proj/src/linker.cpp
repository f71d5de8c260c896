#include "taxlink/linker.hpp"

#include <algorithm>
#include <cmath>

#include "taxlink/errors.hpp"
#include "taxlink/metrics.hpp"
#include "taxlink/numerics.hpp"
#include "taxlink/taxonomy.hpp"

namespace taxlink {

Matrix identity_padded(Index rows, Index cols) {
  Matrix w = Matrix::Zero(rows, cols);
  const Index d = std::min(rows, cols);
  w.topLeftCorner(d, d).setIdentity();
  return w;
}

Vector link_scores(const Vector& mention_enc, const Matrix& nodes, const Matrix& bilinear_w) {
  if (mention_enc.size() != bilinear_w.rows()) {
    throw ConfigError("link_scores: mention dim " + std::to_string(mention_enc.size()) +
                      " does not match W rows " + std::to_string(bilinear_w.rows()));
  }
  if (nodes.cols() != bilinear_w.cols()) {
    throw ConfigError("link_scores: node dim " + std::to_string(nodes.cols()) +
                      " does not match W cols " + std::to_string(bilinear_w.cols()));
  }
  return nodes * (bilinear_w.transpose() * mention_enc);
}

Vector link_probabilities(const Vector& mention_enc, const Matrix& nodes,
                          const Matrix& bilinear_w) {
  return softmax(link_scores(mention_enc, nodes, bilinear_w));
}

LinkPrediction rank_for_mention(const Vector& mention_enc, const Matrix& nodes,
                                const Matrix& bilinear_w, int k, int gold_node) {
  if (k < 1) throw ConfigError("rank_for_mention: k must be >= 1");
  const Vector probs = link_probabilities(mention_enc, nodes, bilinear_w);
  const int n = static_cast<int>(probs.size());
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return probs(a) != probs(b) ? probs(a) > probs(b) : a < b;
  });
  LinkPrediction pred;
  const int keep = std::min(k, n);
  pred.ranked.reserve(keep);
  for (int i = 0; i < keep; ++i) pred.ranked.emplace_back(order[i], probs(order[i]));
  if (gold_node >= 0) {
    for (int i = 0; i < n; ++i) {
      if (order[i] == gold_node) {
        pred.rank_of_gold = i + 1;
        break;
      }
    }
  }
  return pred;
}

int LinkerModel::node_dim() const {
  if (source == NodeSource::gcn_live) return gcn->output_dim();
  return static_cast<int>(base_nodes.cols());
}

Matrix LinkerModel::node_matrix(const Matrix* adjacency) const {
  if (source != NodeSource::gcn_live) return base_nodes;
  if (!gcn) throw ConfigError("linker: gcn_live source without GCN parameters");
  if (!adjacency) throw ConfigError("linker: gcn_live source needs the adjacency matrix");
  return gcn_forward(base_nodes, *adjacency, *gcn);
}

std::vector<int> linker_gold_ranks(const Matrix& nodes, const Matrix& bilinear_w,
                                   const std::vector<ElExample>& examples) {
  std::vector<int> ranks;
  ranks.reserve(examples.size());
  for (const ElExample& ex : examples) {
    const Vector scores = link_scores(ex.enc, nodes, bilinear_w);
    int rank = 1;
    const double gold_score = scores(ex.gold_node);
    for (int i = 0; i < static_cast<int>(scores.size()); ++i) {
      if (i == ex.gold_node) continue;
      if (scores(i) > gold_score || (scores(i) == gold_score && i < ex.gold_node)) ++rank;
    }
    ranks.push_back(rank);
  }
  return ranks;
}

double linker_mean_nll(const Matrix& nodes, const Matrix& bilinear_w,
                       const std::vector<ElExample>& examples) {
  if (examples.empty()) throw std::domain_error("linker_mean_nll: no examples");
  double sum = 0.0;
  for (const ElExample& ex : examples) {
    const Vector probs = link_probabilities(ex.enc, nodes, bilinear_w);
    sum += -std::log(std::max(probs(ex.gold_node), 1e-300));
  }
  return sum / static_cast<double>(examples.size());
}

double linker_loss_and_grads(const Matrix& nodes, const Matrix& bilinear_w,
                             const std::vector<const ElExample*>& batch, Matrix* d_w,
                             Matrix* d_nodes) {
  if (batch.empty()) throw std::domain_error("linker_loss_and_grads: empty batch");
  if (d_w) d_w->setZero(bilinear_w.rows(), bilinear_w.cols());
  if (d_nodes) d_nodes->setZero(nodes.rows(), nodes.cols());
  const double inv = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  for (const ElExample* ex : batch) {
    const Vector wt_enc = bilinear_w.transpose() * ex->enc;
    Vector probs = softmax(Vector(nodes * wt_enc));
    loss += -std::log(std::max(probs(ex->gold_node), 1e-300)) * inv;
    probs(ex->gold_node) -= 1.0;  // d(nll)/d(scores)
    if (d_w) *d_w += inv * ex->enc * (nodes.transpose() * probs).transpose();
    if (d_nodes) *d_nodes += inv * probs * wt_enc.transpose();
  }
  return loss;
}

LinkerModel train_linker(const std::vector<ElExample>& train, const std::vector<ElExample>& val,
                         LinkerModel init, const Matrix* adjacency, const LinkerTrainConfig& cfg,
                         LinkerHistory* history) {
  if (train.empty()) throw TrainingError("train_linker: empty supervision");
  for (const ElExample& ex : train) {
    if (ex.gold_node < 0) throw TrainingError("train_linker: unresolved gold mention");
  }
  LinkerModel model = std::move(init);
  if (cfg.epochs <= 0) return model;

  const bool live_gcn = model.source == NodeSource::gcn_live;
  Adam adam(cfg.lr);
  Rng rng = Rng(cfg.seed).derive(0x656c5f747261696eULL);

  LinkerModel best = model;
  double best_mrr = -1.0;
  int best_epoch = -1;
  int evals_since_best = 0;

  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const int batch = std::max(1, cfg.batch_size);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle(order, rng);
    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += batch) {
      const std::size_t end = std::min(order.size(), begin + batch);

      GcnCache gcn_cache;
      Matrix nodes = live_gcn ? gcn_forward(model.base_nodes, *adjacency, *model.gcn, &gcn_cache)
                              : model.base_nodes;

      std::vector<const ElExample*> batch_examples;
      batch_examples.reserve(end - begin);
      for (std::size_t i = begin; i < end; ++i) batch_examples.push_back(&train[order[i]]);
      Matrix d_w, d_nodes;
      loss_sum += linker_loss_and_grads(nodes, model.bilinear_w, batch_examples, &d_w, &d_nodes);
      adam.step("el.bilinear_w", model.bilinear_w, d_w);
      if (live_gcn) {
        const GcnGrads grads = gcn_backward(gcn_cache, *adjacency, *model.gcn, d_nodes);
        for (std::size_t l = 0; l < model.gcn->layers.size(); ++l) {
          adam.step("el.gcn.layer" + std::to_string(l) + ".weight", model.gcn->layers[l].weight,
                    grads.layers[l].weight);
          adam.step("el.gcn.layer" + std::to_string(l) + ".bias", model.gcn->layers[l].bias,
                    grads.layers[l].bias);
        }
      } else if (cfg.finetune_nodes) {
        adam.step("el.base_nodes", model.base_nodes, d_nodes);
      }
    }
    if (!std::isfinite(loss_sum)) throw TrainingError("train_linker: non-finite loss");
    if (history) {
      history->epoch_loss.push_back(loss_sum /
                                    std::ceil(static_cast<double>(order.size()) / batch));
    }

    if (!val.empty() && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs)) {
      const Matrix nodes = model.node_matrix(adjacency);
      const double val_mrr = mrr(linker_gold_ranks(nodes, model.bilinear_w, val));
      if (history) history->val_mrr.push_back(val_mrr);
      if (val_mrr > best_mrr) {
        best_mrr = val_mrr;
        best = model;
        best_epoch = epoch;
        evals_since_best = 0;
      } else if (cfg.patience > 0 && ++evals_since_best >= cfg.patience) {
        break;
      }
    }
  }
  if (history) history->best_epoch = best_epoch;
  return val.empty() ? model : best;
}

}  // namespace taxlink
