#include "taxlink/dataset.hpp"

#include "taxlink/errors.hpp"
#include "taxlink/taxonomy.hpp"

namespace taxlink {

std::vector<TaggedDocument> make_dataset(const Corpus& corpus, const FeatureConfig& features,
                                         const Taxonomy* taxonomy, CorpusStats* stats) {
  if (features.mode == FeatureMode::static_char && !features.table) {
    throw ConfigError("make_dataset: static feature mode needs an embedding table");
  }
  if (features.mode == FeatureMode::contextual && !features.contextual) {
    throw ConfigError("make_dataset: contextual feature mode needs a contextual store");
  }
  std::vector<TaggedDocument> docs;
  docs.reserve(corpus.abstracts.size());
  for (const Abstract& abstract : corpus.abstracts) {
    TaggedDocument doc;
    doc.doc_id = abstract.doc_id;
    doc.text = abstract.text();
    doc.gold_mentions = abstract.mentions;
    int sentence_index = 0;
    for (const SentenceView& view : sentence_views(abstract, stats)) {
      TaggedSentence sentence;
      sentence.doc_id = abstract.doc_id;
      sentence.sentence_index = sentence_index;
      sentence.tokens = view.token_texts;
      sentence.token_spans = view.tokens;
      sentence.gold = view.gold;
      const int t = static_cast<int>(view.tokens.size());

      if (features.mode == FeatureMode::static_char) {
        sentence.base_features.resize(t, features.table->dim());
        for (int i = 0; i < t; ++i) {
          sentence.base_features.row(i) = features.table->lookup(sentence.tokens[i]);
        }
      } else {
        const Matrix* block = features.contextual->find(abstract.doc_id, sentence_index);
        if (!block) {
          throw IntegrityError("contextual encodings missing for doc " + abstract.doc_id +
                               " sentence " + std::to_string(sentence_index));
        }
        if (block->rows() != t) {
          throw IntegrityError("contextual encodings for doc " + abstract.doc_id + " sentence " +
                               std::to_string(sentence_index) + " have " +
                               std::to_string(block->rows()) + " rows, tokenizer produced " +
                               std::to_string(t));
        }
        sentence.base_features = *block;
      }

      for (const SentenceView::MentionSpan& ms : view.mentions) {
        TaggedSentence::MentionRef ref;
        ref.first_token = ms.first_token;
        ref.last_token = ms.last_token;
        ref.char_span = {view.tokens[ms.first_token].begin, view.tokens[ms.last_token].end};
        ref.gold_id = ms.concept_id;
        if (taxonomy && ms.concept_id != kUnresolvedConceptId && taxonomy->contains(ms.concept_id)) {
          ref.gold_node = taxonomy->index_of(ms.concept_id);
        }
        sentence.mentions.push_back(std::move(ref));
      }
      doc.sentences.push_back(std::move(sentence));
      ++sentence_index;
    }
    docs.push_back(std::move(doc));
  }
  return docs;
}

std::vector<ElExample> make_el_examples(const std::vector<TaggedDocument>& docs,
                                        MentionSource source, const EmbeddingTable* table,
                                        const ContextualStore* contextual) {
  if (source == MentionSource::static_pool && !table) {
    throw ConfigError("make_el_examples: static_pool needs an embedding table");
  }
  if (source == MentionSource::contextual && !contextual) {
    throw ConfigError("make_el_examples: contextual needs a contextual store");
  }
  std::vector<ElExample> examples;
  for (const TaggedDocument& doc : docs) {
    for (const TaggedSentence& sentence : doc.sentences) {
      for (const TaggedSentence::MentionRef& m : sentence.mentions) {
        if (m.gold_node < 0) continue;  // unresolved: tagger-only supervision
        ElExample ex;
        ex.gold_node = m.gold_node;
        ex.doc_id = doc.doc_id;
        ex.char_span = m.char_span;
        ex.gold_id = m.gold_id;
        const int count = m.last_token - m.first_token + 1;
        if (source == MentionSource::static_pool) {
          Matrix rows(count, table->dim());
          for (int i = 0; i < count; ++i) {
            rows.row(i) = table->lookup(sentence.tokens[m.first_token + i]);
          }
          ex.enc = pool_average(rows);
        } else {
          const Matrix* block = contextual->find(doc.doc_id, sentence.sentence_index);
          if (!block) {
            throw IntegrityError("contextual encodings missing for doc " + doc.doc_id +
                                 " sentence " + std::to_string(sentence.sentence_index));
          }
          ex.enc = encode_mention(*block, m.first_token, m.last_token + 1);
        }
        examples.push_back(std::move(ex));
      }
    }
  }
  return examples;
}

Matrix scope_note_matrix(const Taxonomy& tax, const EmbeddingTable& table) {
  Matrix h0(tax.size(), table.dim());
  for (int i = 0; i < tax.size(); ++i) {
    h0.row(i) = encode_scope_note(table, tax.node(i).scope_note);
  }
  return h0;
}

}  // namespace taxlink
