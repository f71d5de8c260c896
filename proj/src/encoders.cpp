#include "taxlink/encoders.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>

#include "taxlink/corpus.hpp"
#include "taxlink/errors.hpp"

namespace taxlink {
namespace {

std::string lowercase(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

double parse_double(std::string_view field, int line_no) {
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || ptr != field.data() + field.size()) {
    throw ParseError("embeddings line " + std::to_string(line_no) + ": non-numeric value '" +
                     std::string(field) + "'");
  }
  return value;
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && line[i] == ' ') ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

}  // namespace

Vector pool_average(const Matrix& rows) {
  if (rows.rows() == 0) throw std::domain_error("pool_average: no rows");
  return rows.colwise().mean();
}

EmbeddingTable EmbeddingTable::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("embeddings: cannot open " + path);
  std::string line;
  int line_no = 0;
  if (!std::getline(in, line)) throw ParseError("embeddings: empty file " + path);
  ++line_no;
  const auto header = split_ws(line);
  if (header.size() != 2) throw ParseError("embeddings line 1: expected 'vocab_size dim' header");
  const int vocab = static_cast<int>(parse_double(header[0], 1));
  const int dim = static_cast<int>(parse_double(header[1], 1));
  if (vocab <= 0 || dim <= 0) throw ParseError("embeddings line 1: counts must be positive");

  std::vector<std::string> tokens;
  Matrix rows(vocab, dim);
  int row = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (row >= vocab) {
      throw ParseError("embeddings line " + std::to_string(line_no) +
                       ": more rows than the declared vocab size " + std::to_string(vocab));
    }
    const auto fields = split_ws(line);
    if (static_cast<int>(fields.size()) != dim + 1) {
      throw ParseError("embeddings line " + std::to_string(line_no) + ": expected token plus " +
                       std::to_string(dim) + " values");
    }
    tokens.emplace_back(fields[0]);
    for (int d = 0; d < dim; ++d) rows(row, d) = parse_double(fields[d + 1], line_no);
    ++row;
  }
  if (row != vocab) {
    throw ParseError("embeddings: declared " + std::to_string(vocab) + " rows, found " +
                     std::to_string(row));
  }
  return from_rows(std::move(tokens), std::move(rows));
}

EmbeddingTable EmbeddingTable::from_rows(std::vector<std::string> tokens, Matrix rows) {
  if (static_cast<int>(tokens.size()) != rows.rows()) {
    throw DimError("embeddings: token/row count mismatch");
  }
  if (rows.cols() <= 0) throw DimError("embeddings: dim must be positive");
  EmbeddingTable table;
  table.tokens_ = std::move(tokens);
  table.rows_ = std::move(rows);
  for (int i = 0; i < static_cast<int>(table.tokens_.size()); ++i) {
    table.index_.emplace(table.tokens_[i], i);
  }
  table.unk_row_ = table.rows_.colwise().mean();
  return table;
}

void EmbeddingTable::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw ParseError("embeddings: cannot write " + path);
  out << vocab_size() << ' ' << dim() << '\n';
  char buf[64];
  for (int i = 0; i < vocab_size(); ++i) {
    out << tokens_[i];
    for (int d = 0; d < dim(); ++d) {
      std::snprintf(buf, sizeof(buf), "%.17g", rows_(i, d));
      out << ' ' << buf;
    }
    out << '\n';
  }
}

bool EmbeddingTable::contains(std::string_view token) const {
  return index_.find(token) != index_.end();
}

Vector EmbeddingTable::lookup(std::string_view token) const {
  auto it = index_.find(token);
  if (it == index_.end()) it = index_.find(lowercase(token));
  if (it == index_.end()) return unk_row_;
  return rows_.row(it->second);
}

ContextualStore ContextualStore::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("contextual encodings: cannot open " + path);
  ContextualStore store;
  std::string line;
  int line_no = 0;

  std::pair<std::string, int> key;
  std::vector<Vector> pending;
  bool in_block = false;

  auto flush = [&] {
    if (!in_block) return;
    Matrix block(pending.size(), store.dim_);
    for (std::size_t r = 0; r < pending.size(); ++r) block.row(r) = pending[r];
    if (!store.blocks_.emplace(key, std::move(block)).second) {
      throw IntegrityError("contextual encodings: duplicate block for doc " + key.first +
                           " sentence " + std::to_string(key.second));
    }
    pending.clear();
    in_block = false;
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      flush();
      continue;
    }
    if (line.rfind("#DOC ", 0) == 0) {
      flush();
      const auto fields = split_ws(std::string_view(line).substr(5));
      if (fields.size() != 2) {
        throw ParseError("contextual encodings line " + std::to_string(line_no) +
                         ": expected '#DOC doc_id sentence_index'");
      }
      key.first = std::string(fields[0]);
      key.second = static_cast<int>(parse_double(fields[1], line_no));
      in_block = true;
      continue;
    }
    if (!in_block) {
      throw ParseError("contextual encodings line " + std::to_string(line_no) +
                       ": token line outside a #DOC block");
    }
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw ParseError("contextual encodings line " + std::to_string(line_no) +
                       ": expected token<TAB>values");
    }
    const auto fields = split_ws(std::string_view(line).substr(tab + 1));
    if (fields.empty()) {
      throw ParseError("contextual encodings line " + std::to_string(line_no) + ": no values");
    }
    if (store.dim_ == 0) store.dim_ = static_cast<int>(fields.size());
    if (static_cast<int>(fields.size()) != store.dim_) {
      throw ParseError("contextual encodings line " + std::to_string(line_no) +
                       ": dim changed from " + std::to_string(store.dim_) + " to " +
                       std::to_string(fields.size()));
    }
    Vector v(store.dim_);
    for (int d = 0; d < store.dim_; ++d) v(d) = parse_double(fields[d], line_no);
    pending.push_back(std::move(v));
  }
  flush();
  return store;
}

const Matrix* ContextualStore::find(std::string_view doc_id, int sentence_index) const {
  const auto it = blocks_.find({std::string(doc_id), sentence_index});
  return it == blocks_.end() ? nullptr : &it->second;
}

Vector encode_mention(const Matrix& token_vectors, int first, int last_ex) {
  if (first < 0 || last_ex <= first || last_ex > token_vectors.rows()) {
    throw SpanError("encode_mention: span [" + std::to_string(first) + "," +
                    std::to_string(last_ex) + ") outside " +
                    std::to_string(token_vectors.rows()) + " tokens");
  }
  return pool_average(token_vectors.middleRows(first, last_ex - first));
}

Vector encode_mention(const ContextualEncodings& ctx, int first, int last_ex) {
  return encode_mention(ctx.vectors, first, last_ex);
}

Vector encode_scope_note(const EmbeddingTable& table, std::string_view note) {
  const auto spans = tokenize(note);
  if (spans.empty()) return table.unk_row();
  Matrix rows(spans.size(), table.dim());
  for (std::size_t i = 0; i < spans.size(); ++i) {
    rows.row(i) = table.lookup(note.substr(spans[i].begin, spans[i].end - spans[i].begin));
  }
  return pool_average(rows);
}

}  // namespace taxlink
