#include "taxlink/mtl.hpp"

#include <algorithm>
#include <cmath>

#include "taxlink/dataset.hpp"
#include "taxlink/encoders.hpp"
#include "taxlink/errors.hpp"
#include "taxlink/numerics.hpp"
#include "taxlink/taxonomy.hpp"

namespace taxlink {

Vector shared_mention_features(const Matrix& hidden, int first, int last_ex) {
  if (first < 0 || last_ex <= first || last_ex > hidden.rows()) {
    throw SpanError("shared_mention_features: span [" + std::to_string(first) + "," +
                    std::to_string(last_ex) + ") outside " + std::to_string(hidden.rows()) +
                    " tokens");
  }
  return pool_average(hidden.middleRows(first, last_ex - first));
}

namespace {

// Fixed (non-shared) mention encodings per sentence when the linking head
// reads contextual-file features instead of shared states.
std::vector<Vector> fixed_mention_encs(const TaggedSentence& sentence,
                                       const ContextualStore& store) {
  std::vector<Vector> encs;
  const Matrix* block = store.find(sentence.doc_id, sentence.sentence_index);
  if (!block) {
    throw IntegrityError("contextual encodings missing for doc " + sentence.doc_id +
                         " sentence " + std::to_string(sentence.sentence_index));
  }
  for (const TaggedSentence::MentionRef& m : sentence.mentions) {
    encs.push_back(encode_mention(*block, m.first_token, m.last_token + 1));
  }
  return encs;
}

// Linking loss and gradients over one sentence's resolved mentions.
// d_hidden, when non-null, receives the shared-feature gradient (unweighted).
struct ElStep {
  double loss = 0.0;  // mean NLL over resolved mentions
  int mention_count = 0;
  Matrix d_w;
  Matrix d_nodes;
};

ElStep el_forward_backward(const TaggedSentence& sentence, const Matrix& hidden,
                           const Matrix& nodes, const Matrix& bilinear_w,
                           MtlElFeatures el_features, const ContextualStore* contextual,
                           Matrix* d_hidden) {
  ElStep out;
  std::vector<const TaggedSentence::MentionRef*> resolved;
  for (const TaggedSentence::MentionRef& m : sentence.mentions) {
    if (m.gold_node >= 0) resolved.push_back(&m);
  }
  if (resolved.empty()) return out;

  std::vector<Vector> fixed;
  if (el_features == MtlElFeatures::contextual) {
    fixed = fixed_mention_encs(sentence, *contextual);
  }

  out.mention_count = static_cast<int>(resolved.size());
  out.d_w = Matrix::Zero(bilinear_w.rows(), bilinear_w.cols());
  out.d_nodes = Matrix::Zero(nodes.rows(), nodes.cols());
  const double inv = 1.0 / static_cast<double>(resolved.size());

  for (std::size_t i = 0; i < sentence.mentions.size(); ++i) {
    const TaggedSentence::MentionRef& m = sentence.mentions[i];
    if (m.gold_node < 0) continue;
    const Vector enc = el_features == MtlElFeatures::shared
                           ? shared_mention_features(hidden, m.first_token, m.last_token + 1)
                           : fixed[i];
    const Vector wt_enc = bilinear_w.transpose() * enc;
    Vector probs = softmax(Vector(nodes * wt_enc));
    out.loss += -std::log(std::max(probs(m.gold_node), 1e-300)) * inv;
    probs(m.gold_node) -= 1.0;
    out.d_w += inv * enc * (nodes.transpose() * probs).transpose();
    out.d_nodes += inv * probs * wt_enc.transpose();
    if (d_hidden && el_features == MtlElFeatures::shared) {
      const Vector d_enc = inv * (bilinear_w * (nodes.transpose() * probs));
      const double span_inv = 1.0 / static_cast<double>(m.last_token - m.first_token + 1);
      for (int t = m.first_token; t <= m.last_token; ++t) {
        d_hidden->row(t) += span_inv * d_enc.transpose();
      }
    }
  }
  return out;
}

void apply_el_grads(Adam& adam, LinkerModel& linker, const Matrix& adjacency,
                    const GcnCache* gcn_cache, const ElStep& step, double weight,
                    bool finetune_nodes) {
  adam.step("el.bilinear_w", linker.bilinear_w, weight * step.d_w);
  if (linker.source == NodeSource::gcn_live) {
    const GcnGrads grads = gcn_backward(*gcn_cache, adjacency, *linker.gcn, step.d_nodes);
    for (std::size_t l = 0; l < linker.gcn->layers.size(); ++l) {
      adam.step("el.gcn.layer" + std::to_string(l) + ".weight", linker.gcn->layers[l].weight,
                weight * grads.layers[l].weight);
      adam.step("el.gcn.layer" + std::to_string(l) + ".bias", linker.gcn->layers[l].bias,
                weight * grads.layers[l].bias);
    }
  } else if (finetune_nodes) {
    adam.step("el.base_nodes", linker.base_nodes, weight * step.d_nodes);
  }
}

}  // namespace

MtlModel mtl_train(const std::vector<TaggedDocument>& train,
                   const std::vector<TaggedDocument>& validation, const Taxonomy& tax,
                   const MtlNodeSetup& nodes, const MtlConfig& cfg, const std::string& charset,
                   const ContextualStore* contextual, MtlHistory* history) {
  if (cfg.el_weight < 0.0) throw ConfigError("mtl_train: el_weight must be >= 0");
  if (cfg.el_features == MtlElFeatures::contextual && !contextual) {
    throw ConfigError("mtl_train: contextual mention features need a contextual store");
  }

  std::vector<const TaggedSentence*> sentences;
  int base_dim = -1;
  for (const TaggedDocument& doc : train) {
    for (const TaggedSentence& s : doc.sentences) {
      sentences.push_back(&s);
      if (base_dim < 0) base_dim = static_cast<int>(s.base_features.cols());
    }
  }
  if (sentences.empty()) throw TrainingError("mtl_train: empty corpus");

  MtlModel model;
  model.el_features = cfg.el_features;
  // Tagger init consumes Rng(seed) exactly as train_ner does, so the
  // el_weight=0 trajectory is step-identical to the standalone tagger.
  {
    Rng init_rng(cfg.seed);
    model.ner = init_ner_model(cfg.ner, base_dim, charset, init_rng);
  }
  const Matrix adjacency =
      nodes.self_loops ? tax.adjacency_with_self_loops() : tax.adjacency_without_self_loops();
  {
    Rng el_rng = Rng(cfg.seed).derive(0x656c5f696e6974ULL);
    model.linker.source = nodes.source;
    model.linker.base_nodes = nodes.base_nodes;
    model.linker.self_loops = nodes.self_loops;
    if (nodes.source == NodeSource::gcn_live) {
      std::vector<int> dims{static_cast<int>(nodes.base_nodes.cols())};
      dims.insert(dims.end(), nodes.gcn_hidden_dims.begin(), nodes.gcn_hidden_dims.end());
      model.linker.gcn = init_gcn(dims, el_rng);
    }
    const int d_mention = cfg.el_features == MtlElFeatures::shared
                              ? model.ner.lstm.output_dim()
                              : (contextual ? contextual->dim() : 0);
    model.linker.bilinear_w = identity_padded(d_mention, model.linker.node_dim());
  }

  Adam adam(cfg.ner.lr);
  Rng train_rng = Rng(cfg.seed).derive(0x747261696eULL);

  MtlModel best = model;
  double best_score = -1.0;
  int best_epoch = -1;
  int evals_since_best = 0;

  std::vector<std::size_t> order(sentences.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  long step_counter = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle(order, train_rng);
    double ner_loss_sum = 0.0;
    double el_loss_sum = 0.0;
    long el_sentences = 0;

    for (std::size_t idx : order) {
      const TaggedSentence& sentence = *sentences[idx];
      const bool el_turn = cfg.loss_mix == LossMix::alternate && step_counter % 2 == 1;
      ++step_counter;

      if (cfg.loss_mix == LossMix::sum) {
        detail::ElHook hook;
        if (cfg.el_weight > 0.0) {
          hook = [&](const Matrix& hidden_dropped) -> Matrix {
            Matrix d_hidden = Matrix::Zero(hidden_dropped.rows(), hidden_dropped.cols());
            GcnCache gcn_cache;
            const Matrix node_matrix =
                model.linker.source == NodeSource::gcn_live
                    ? gcn_forward(model.linker.base_nodes, adjacency, *model.linker.gcn,
                                  &gcn_cache)
                    : model.linker.base_nodes;
            const ElStep step =
                el_forward_backward(sentence, hidden_dropped, node_matrix,
                                    model.linker.bilinear_w, cfg.el_features, contextual,
                                    &d_hidden);
            if (step.mention_count == 0) return d_hidden;
            el_loss_sum += step.loss;
            ++el_sentences;
            apply_el_grads(adam, model.linker, adjacency, &gcn_cache, step, cfg.el_weight,
                           nodes.finetune_nodes);
            return Matrix(cfg.el_weight * d_hidden);
          };
        }
        ner_loss_sum += detail::ner_sentence_step(model.ner, sentence, train_rng, adam, hook);
        continue;
      }

      // Alternating mode: even steps update the tagger, odd steps the linker
      // (both through the shared encoder).
      if (!el_turn) {
        ner_loss_sum += detail::ner_sentence_step(model.ner, sentence, train_rng, adam, {});
        continue;
      }
      detail::EncoderActivations acts;
      const Matrix hidden_dropped =
          detail::encode_tokens(model.ner, sentence, true, &train_rng, &acts);
      GcnCache gcn_cache;
      const Matrix node_matrix =
          model.linker.source == NodeSource::gcn_live
              ? gcn_forward(model.linker.base_nodes, adjacency, *model.linker.gcn, &gcn_cache)
              : model.linker.base_nodes;
      Matrix d_hidden = Matrix::Zero(hidden_dropped.rows(), hidden_dropped.cols());
      const ElStep step =
          el_forward_backward(sentence, hidden_dropped, node_matrix, model.linker.bilinear_w,
                              cfg.el_features, contextual, &d_hidden);
      if (step.mention_count == 0) continue;
      el_loss_sum += step.loss;
      ++el_sentences;
      apply_el_grads(adam, model.linker, adjacency, &gcn_cache, step, cfg.el_weight,
                     nodes.finetune_nodes);
      detail::EncoderGrads grads;
      detail::encode_tokens_backward(model.ner, acts, Matrix(cfg.el_weight * d_hidden), grads);
      detail::adam_step_encoder(adam, model.ner, grads);
    }

    if (!std::isfinite(ner_loss_sum) || !std::isfinite(el_loss_sum)) {
      throw TrainingError("mtl_train: non-finite loss");
    }
    if (history) {
      history->ner_loss.push_back(ner_loss_sum / static_cast<double>(sentences.size()));
      history->el_loss.push_back(el_sentences ? el_loss_sum / static_cast<double>(el_sentences)
                                              : 0.0);
    }

    if (!validation.empty() && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs)) {
      const JointReport report = mtl_evaluate(model, validation, tax, cfg.pre_at_k, contextual);
      const double score =
          report.el_mentions > 0 ? 0.5 * (report.ner.f1 + report.el_mrr) : report.ner.f1;
      if (history) history->val_score.push_back(score);
      if (score > best_score) {
        best_score = score;
        best = model;
        best_epoch = epoch;
        evals_since_best = 0;
      } else if (cfg.patience > 0 && ++evals_since_best >= cfg.patience) {
        break;
      }
    }
  }
  if (history) history->best_epoch = best_epoch;
  return validation.empty() ? model : best;
}

std::vector<ElExample> mtl_el_examples(const MtlModel& model,
                                       const std::vector<TaggedDocument>& docs,
                                       const ContextualStore* contextual) {
  std::vector<ElExample> examples;
  for (const TaggedDocument& doc : docs) {
    for (const TaggedSentence& sentence : doc.sentences) {
      const bool has_resolved =
          std::any_of(sentence.mentions.begin(), sentence.mentions.end(),
                      [](const auto& m) { return m.gold_node >= 0; });
      if (!has_resolved) continue;
      Matrix hidden;
      if (model.el_features == MtlElFeatures::shared) {
        hidden = detail::ner_hidden_states(model.ner, sentence);
      }
      std::vector<Vector> fixed;
      if (model.el_features == MtlElFeatures::contextual) {
        fixed = fixed_mention_encs(sentence, *contextual);
      }
      for (std::size_t i = 0; i < sentence.mentions.size(); ++i) {
        const TaggedSentence::MentionRef& m = sentence.mentions[i];
        if (m.gold_node < 0) continue;
        ElExample ex;
        ex.enc = model.el_features == MtlElFeatures::shared
                     ? shared_mention_features(hidden, m.first_token, m.last_token + 1)
                     : fixed[i];
        ex.gold_node = m.gold_node;
        ex.doc_id = doc.doc_id;
        ex.char_span = m.char_span;
        ex.gold_id = m.gold_id;
        examples.push_back(std::move(ex));
      }
    }
  }
  return examples;
}

JointReport mtl_evaluate(const MtlModel& model, const std::vector<TaggedDocument>& docs,
                         const Taxonomy& tax, int pre_at_k, const ContextualStore* contextual) {
  JointReport report;
  const Matrix adjacency = model.linker.source == NodeSource::gcn_live
                               ? (model.linker.self_loops ? tax.adjacency_with_self_loops()
                                                          : tax.adjacency_without_self_loops())
                               : Matrix();
  const Matrix nodes =
      model.linker.node_matrix(model.linker.source == NodeSource::gcn_live ? &adjacency : nullptr);

  std::vector<SpanRecord> gold, pred;
  std::vector<int> ranks;
  for (const TaggedDocument& doc : docs) {
    for (const Mention& m : doc.gold_mentions) gold.push_back({doc.doc_id, m.start, m.end});
    for (const Mention& m : predict_spans(model.ner, doc)) {
      pred.push_back({doc.doc_id, m.start, m.end});
    }
    for (const TaggedSentence& sentence : doc.sentences) {
      const bool has_resolved =
          std::any_of(sentence.mentions.begin(), sentence.mentions.end(),
                      [](const auto& m) { return m.gold_node >= 0; });
      if (!has_resolved) continue;
      Matrix hidden;
      if (model.el_features == MtlElFeatures::shared) {
        hidden = detail::ner_hidden_states(model.ner, sentence);
      }
      std::vector<Vector> fixed;
      if (model.el_features == MtlElFeatures::contextual) {
        fixed = fixed_mention_encs(sentence, *contextual);
      }
      for (std::size_t i = 0; i < sentence.mentions.size(); ++i) {
        const TaggedSentence::MentionRef& m = sentence.mentions[i];
        if (m.gold_node < 0) continue;
        const Vector enc = model.el_features == MtlElFeatures::shared
                               ? shared_mention_features(hidden, m.first_token, m.last_token + 1)
                               : fixed[i];
        const LinkPrediction lp =
            rank_for_mention(enc, nodes, model.linker.bilinear_w, 1, m.gold_node);
        ranks.push_back(lp.rank_of_gold);
      }
    }
  }
  report.gold_spans = static_cast<int>(gold.size());
  report.predicted_spans = static_cast<int>(pred.size());
  report.ner = span_micro_prf(gold, pred);
  report.el_mentions = static_cast<int>(ranks.size());
  if (!ranks.empty()) {
    report.el_mrr = mrr(ranks);
    report.el_pre1 = precision_at_k(ranks, 1);
    report.el_pre_k = precision_at_k(ranks, pre_at_k);
  }
  return report;
}

}  // namespace taxlink
