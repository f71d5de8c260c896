#include "taxlink/node2vec.hpp"

#include <algorithm>
#include <cmath>

#include "taxlink/encoders.hpp"
#include "taxlink/errors.hpp"
#include "taxlink/numerics.hpp"
#include "taxlink/taxonomy.hpp"

namespace taxlink {

Vector transition_distribution(const Taxonomy& tax, int prev, int cur, const WalkConfig& cfg) {
  if (cfg.return_param_p <= 0.0 || cfg.inout_param_q <= 0.0) {
    throw ConfigError("transition_distribution: p and q must be > 0");
  }
  const auto& candidates = tax.neighbors(cur);
  if (candidates.empty()) {
    throw std::domain_error("transition_distribution: node " + std::to_string(cur) +
                            " has no neighbors (walk dead end)");
  }
  const auto& prev_nbrs = tax.neighbors(prev);
  Vector weights(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const int cand = candidates[i];
    if (cand == prev) {
      weights(i) = 1.0 / cfg.return_param_p;
    } else if (std::binary_search(prev_nbrs.begin(), prev_nbrs.end(), cand)) {
      weights(i) = 1.0;
    } else {
      weights(i) = 1.0 / cfg.inout_param_q;
    }
  }
  return weights / weights.sum();
}

namespace {

// Draws an index from an explicit distribution via its cumulative sums.
int sample_from(const Vector& probs, Rng& rng) {
  const double u = rng.uniform01();
  double acc = 0.0;
  for (Index i = 0; i < probs.size(); ++i) {
    acc += probs(i);
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(probs.size() - 1);
}

}  // namespace

std::vector<std::vector<int>> generate_walks(const Taxonomy& tax, const WalkConfig& cfg) {
  if (tax.size() == 0) throw std::domain_error("generate_walks: empty taxonomy");
  if (cfg.walk_length < 2) throw ConfigError("generate_walks: walk_length must be >= 2");
  std::vector<std::vector<int>> walks;
  walks.reserve(static_cast<std::size_t>(tax.size()) * cfg.walks_per_node);
  const Rng base(cfg.seed);
  for (int start = 0; start < tax.size(); ++start) {
    Rng rng = base.derive(static_cast<std::uint64_t>(start));
    for (int w = 0; w < cfg.walks_per_node; ++w) {
      std::vector<int> walk{start};
      while (static_cast<int>(walk.size()) < cfg.walk_length) {
        const int cur = walk.back();
        const auto& nbrs = tax.neighbors(cur);
        if (nbrs.empty()) break;
        int next;
        if (walk.size() == 1) {
          next = nbrs[rng.uniform_index(nbrs.size())];
        } else {
          const Vector probs = transition_distribution(tax, walk[walk.size() - 2], cur, cfg);
          next = nbrs[sample_from(probs, rng)];
        }
        walk.push_back(next);
      }
      walks.push_back(std::move(walk));
    }
  }
  return walks;
}

NodeEmbeddings init_node_embeddings(const Taxonomy& tax, NodeKind kind, int dim, Rng& rng,
                                    const EmbeddingTable* table) {
  if (kind == NodeKind::gcn) throw ConfigError("init_node_embeddings: gcn kind is not initialized here");
  if (dim <= 0) throw ConfigError("init_node_embeddings: dim must be positive");
  NodeEmbeddings emb;
  emb.kind = kind;
  emb.matrix.resize(tax.size(), dim);
  if (kind == NodeKind::type1) {
    const double bound = 0.5 / static_cast<double>(dim);
    for (int r = 0; r < tax.size(); ++r) {
      for (int c = 0; c < dim; ++c) emb.matrix(r, c) = rng.uniform(-bound, bound);
    }
  } else {
    if (!table) throw ConfigError("init_node_embeddings: type2 needs an embedding table");
    if (table->dim() != dim) {
      throw ConfigError("init_node_embeddings: type2 dim " + std::to_string(dim) +
                        " must equal table dim " + std::to_string(table->dim()));
    }
    for (int r = 0; r < tax.size(); ++r) {
      emb.matrix.row(r) = encode_scope_note(*table, tax.node(r).scope_note);
    }
  }
  return emb;
}

std::vector<std::pair<int, int>> skipgram_pairs(const std::vector<int>& walk, int window) {
  std::vector<std::pair<int, int>> pairs;
  const int n = static_cast<int>(walk.size());
  for (int c = 0; c < n; ++c) {
    const int lo = std::max(0, c - window);
    const int hi = std::min(n - 1, c + window);
    for (int k = lo; k <= hi; ++k) {
      if (k != c) pairs.emplace_back(walk[c], walk[k]);
    }
  }
  return pairs;
}

double sgns_loss(const Vector& center, const Vector& positive, const Matrix& negatives,
                 Vector* d_center, Vector* d_positive, Matrix* d_negatives) {
  double loss = 0.0;
  if (d_center) d_center->setZero(center.size());
  const double s_pos = sigmoid(center.dot(positive));
  loss -= std::log(std::max(s_pos, 1e-300));
  if (d_center) *d_center += (s_pos - 1.0) * positive;
  if (d_positive) *d_positive = (s_pos - 1.0) * center;
  if (d_negatives) d_negatives->setZero(negatives.rows(), negatives.cols());
  for (Index k = 0; k < negatives.rows(); ++k) {
    const double s_neg = sigmoid(center.dot(negatives.row(k)));
    loss -= std::log(std::max(1.0 - s_neg, 1e-300));
    if (d_center) *d_center += s_neg * negatives.row(k).transpose();
    if (d_negatives) d_negatives->row(k) = s_neg * center;
  }
  return loss;
}

NodeEmbeddings train_skipgram(const std::vector<std::vector<int>>& walks, NodeEmbeddings init,
                              const WalkConfig& cfg, std::vector<double>* epoch_loss) {
  if (epoch_loss) epoch_loss->clear();
  if (cfg.epochs <= 0) return init;
  const int n = static_cast<int>(init.matrix.rows());
  const int dim = init.dim();
  for (const auto& walk : walks) {
    for (int node : walk) {
      if (node < 0 || node >= n) throw ConfigError("train_skipgram: walk node outside embedding");
    }
  }

  // Unigram^0.75 sampling table over walk occurrences.
  Vector counts = Vector::Zero(n);
  for (const auto& walk : walks) {
    for (int node : walk) counts(node) += 1.0;
  }
  Vector cumulative(n);
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    acc += std::pow(counts(i), 0.75);
    cumulative(i) = acc;
  }
  if (acc <= 0.0) return init;
  auto sample_negative = [&](Rng& rng) {
    const double u = rng.uniform01() * acc;
    const double* begin = cumulative.data();
    return static_cast<int>(std::upper_bound(begin, begin + n, u) - begin);
  };

  Matrix& input = init.matrix;
  Matrix output = Matrix::Zero(n, dim);  // context vectors, zero-initialized as in word2vec

  long total_pairs = 0;
  for (const auto& walk : walks) total_pairs += static_cast<long>(skipgram_pairs(walk, cfg.window).size());
  const double total_updates = static_cast<double>(total_pairs) * cfg.epochs;
  if (total_updates == 0.0) {
    if (epoch_loss) epoch_loss->assign(cfg.epochs, 0.0);
    return init;
  }

  Rng rng = Rng(cfg.seed).derive(0x736770616972ULL);  // training stream, distinct from walkers
  long update = 0;
  Vector d_center(dim);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    long loss_count = 0;
    for (const auto& walk : walks) {
      for (const auto& [center, context] : skipgram_pairs(walk, cfg.window)) {
        const double lr =
            cfg.lr * std::max(1e-4, 1.0 - static_cast<double>(update) / total_updates);
        ++update;

        auto u = input.row(center);
        d_center.setZero();
        double loss = 0.0;

        const double s_pos = sigmoid(u.dot(output.row(context)));
        loss -= std::log(std::max(s_pos, 1e-300));
        d_center += (s_pos - 1.0) * output.row(context).transpose();
        output.row(context) += -lr * (s_pos - 1.0) * u;

        for (int k = 0; k < cfg.negatives_per_positive; ++k) {
          const int neg = sample_negative(rng);
          if (neg == context) continue;  // word2vec drops colliding draws
          const double s_neg = sigmoid(u.dot(output.row(neg)));
          loss -= std::log(std::max(1.0 - s_neg, 1e-300));
          d_center += s_neg * output.row(neg).transpose();
          output.row(neg) += -lr * s_neg * u;
        }

        input.row(center) -= lr * d_center.transpose();
        loss_sum += loss;
        ++loss_count;
      }
    }
    if (!std::isfinite(loss_sum)) throw TrainingError("train_skipgram: non-finite loss");
    if (epoch_loss) epoch_loss->push_back(loss_count ? loss_sum / loss_count : 0.0);
  }
  check_finite("node_embeddings", input);
  return init;
}

}  // namespace taxlink
