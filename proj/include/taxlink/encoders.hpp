#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "taxlink/linalg.hpp"

namespace taxlink {

// Average over rows; the pooling convention used everywhere a span of
// vectors becomes one vector.
Vector pool_average(const Matrix& rows);

// Fixed pre-trained word vectors. Lookups fall back to the lowercased token
// and finally to unk_row (the mean of all rows).
class EmbeddingTable {
 public:
  // Text format: header "vocab_size dim", then "token v1 ... v_dim" lines.
  static EmbeddingTable load(const std::string& path);
  static EmbeddingTable from_rows(std::vector<std::string> tokens, Matrix rows);

  void save(const std::string& path) const;

  int dim() const { return static_cast<int>(rows_.cols()); }
  int vocab_size() const { return static_cast<int>(rows_.rows()); }
  bool contains(std::string_view token) const;
  Vector lookup(std::string_view token) const;
  const Vector& unk_row() const { return unk_row_; }
  const Matrix& rows() const { return rows_; }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, int, std::less<>> index_;
  Matrix rows_;
  Vector unk_row_;
};

// Precomputed contextual token vectors for one sentence.
struct ContextualEncodings {
  std::string doc_id;
  int sentence_index = 0;
  Matrix vectors;  // tokens x dim
};

// All contextual blocks of a file, keyed by (doc_id, sentence_index).
// File format: "#DOC doc_id sentence_index" header lines, one
// "token<TAB>v1 ... v_dim" line per token, blocks blank-line separated.
class ContextualStore {
 public:
  static ContextualStore load(const std::string& path);

  int dim() const { return dim_; }
  std::size_t size() const { return blocks_.size(); }
  const Matrix* find(std::string_view doc_id, int sentence_index) const;

 private:
  int dim_ = 0;
  std::map<std::pair<std::string, int>, Matrix> blocks_;
};

// Mention vector: exact row average over the token range [first, last_ex).
Vector encode_mention(const Matrix& token_vectors, int first, int last_ex);
Vector encode_mention(const ContextualEncodings& ctx, int first, int last_ex);

// Scope-note vector: average of table lookups over the corpus tokenizer's
// tokens; an empty note degrades to unk_row.
Vector encode_scope_note(const EmbeddingTable& table, std::string_view note);

}  // namespace taxlink
