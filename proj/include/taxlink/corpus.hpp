#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace taxlink {

class Taxonomy;

// Concept id placeholder for mentions that could not be resolved against the
// taxonomy. Kept for tagger supervision, skipped by linker supervision.
inline constexpr const char* kUnresolvedConceptId = "-";

// Character-offset annotation inside an abstract (end exclusive).
struct Mention {
  int start = 0;
  int end = 0;
  std::string surface;
  std::string concept_id;

  bool resolved() const { return concept_id != kUnresolvedConceptId; }
};

struct Abstract {
  std::string doc_id;
  std::string title;
  std::string body;
  std::vector<Mention> mentions;  // sorted by start, non-overlapping

  // Offsets index into title + " " + body.
  std::string text() const { return body.empty() ? title : title + " " + body; }
};

// Loader warning counters; anything here is tolerated but worth surfacing.
struct CorpusStats {
  int composite_ids = 0;        // "id1|id2" or "id1+id2" annotations, first kept
  int unmapped_omim = 0;        // OMIM ids absent from the mapping file
  int unknown_concepts = 0;     // ids absent from the loaded taxonomy
  int dropped_duplicates = 0;   // repeated doc 8528200
  int cross_sentence = 0;       // mentions clipped at a sentence boundary
  int unaligned_mentions = 0;   // mentions widened to token boundaries
  int total() const {
    return composite_ids + unmapped_omim + unknown_concepts + dropped_duplicates +
           cross_sentence + unaligned_mentions;
  }
};

struct Corpus {
  std::string split;  // train | validation | test
  std::vector<Abstract> abstracts;
  CorpusStats stats;

  int mention_count() const;
};

using OmimMapping = std::map<std::string, std::string>;

// Two tab-separated columns: OMIM:id <TAB> taxonomy id.
OmimMapping load_omim_mapping(const std::string& path);

// PubTator-style blocks: PMID|t|title, PMID|a|abstract, then tab-separated
// mention lines, blank-line separated. `mapping` rewrites OMIM ids;
// `taxonomy`, when given, downgrades unknown ids to kUnresolvedConceptId.
Corpus load_corpus(const std::string& path, const std::string& split,
                   const OmimMapping* mapping = nullptr, const Taxonomy* taxonomy = nullptr);

// Half-open character span.
struct Span {
  int begin = 0;
  int end = 0;
  friend bool operator==(const Span&, const Span&) = default;
};

// Rule-based sentence splitter: a boundary sits after {. ! ?} followed by
// whitespace and an uppercase/digit start, unless the dot closes a known
// abbreviation or a single-capital initial. Returned spans are trimmed and
// partition the text up to whitespace.
std::vector<Span> split_sentences(std::string_view text);

// Whitespace split, then leading/trailing punctuation detached one char at a
// time and internal '/' split off as its own token. Hyphens stay inside
// tokens. Spans are relative to the given string and cover every
// non-whitespace character.
std::vector<Span> tokenize(std::string_view sentence);

enum class Tag : int { O = 0, B = 1, I = 2 };
inline constexpr int kTagCount = 3;

struct TagSequence {
  std::vector<Tag> tags;

  bool well_formed() const;  // I never follows O or start
  friend bool operator==(const TagSequence&, const TagSequence&) = default;
};

// Projects mentions onto token-level tags. Mentions must not overlap;
// mentions that do not align with token boundaries are widened to the
// covering tokens (counted in `unaligned` when provided).
TagSequence to_iob(const std::vector<Span>& tokens, const std::vector<Mention>& mentions,
                   int* unaligned = nullptr);

// Inverse of to_iob for round trips and prediction: one span per B..I run,
// covering the first through last token of the run. Orphan I tags are
// repaired to B first.
std::vector<Span> iob_to_spans(const std::vector<Span>& tokens, const TagSequence& tags);

// Token-aligned view of one sentence, the unit every model consumes.
struct SentenceView {
  Span span;                      // absolute, within Abstract::text()
  std::vector<Span> tokens;       // absolute
  std::vector<std::string> token_texts;
  TagSequence gold;
  struct MentionSpan {
    int first_token = 0;          // token indices within this sentence
    int last_token = 0;           // inclusive
    std::string concept_id;
  };
  std::vector<MentionSpan> mentions;
};

// Splits, tokenizes and projects gold mentions. Mentions crossing a sentence
// boundary belong to the sentence containing their start and are clipped.
std::vector<SentenceView> sentence_views(const Abstract& abstract, CorpusStats* stats = nullptr);

}  // namespace taxlink
