#pragma once

#include <string>
#include <vector>

#include "taxlink/corpus.hpp"
#include "taxlink/encoders.hpp"
#include "taxlink/linker.hpp"
#include "taxlink/ner.hpp"

namespace taxlink {

class Taxonomy;

// How token-level base features are produced.
struct FeatureConfig {
  FeatureMode mode = FeatureMode::static_char;
  const EmbeddingTable* table = nullptr;        // static mode
  const ContextualStore* contextual = nullptr;  // contextual mode
};

// Sentence-splits, tokenizes, projects gold tags and attaches base features.
// Contextual blocks must match the tokenizer's token counts exactly.
// `taxonomy`, when given, resolves mention concept ids to node indices.
std::vector<TaggedDocument> make_dataset(const Corpus& corpus, const FeatureConfig& features,
                                         const Taxonomy* taxonomy = nullptr,
                                         CorpusStats* stats = nullptr);

enum class MentionSource { static_pool, contextual };

// Flattens resolved gold mentions into linking examples. static_pool
// averages table lookups over the mention tokens; contextual averages the
// precomputed rows.
std::vector<ElExample> make_el_examples(const std::vector<TaggedDocument>& docs,
                                        MentionSource source, const EmbeddingTable* table,
                                        const ContextualStore* contextual);

// Scope-note encodings for every taxonomy node, rows in node_index order.
Matrix scope_note_matrix(const Taxonomy& tax, const EmbeddingTable& table);

}  // namespace taxlink
