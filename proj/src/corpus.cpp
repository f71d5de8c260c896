#include "taxlink/corpus.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "taxlink/errors.hpp"
#include "taxlink/taxonomy.hpp"

namespace taxlink {
namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

// Non-ASCII bytes count as word characters so UTF-8 sequences never get
// split mid-codepoint.
bool is_word_byte(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) != 0 || static_cast<unsigned char>(c) >= 0x80;
}

std::string lowercase(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::vector<std::string> split_fields(const std::string& line, char sep) {
  std::vector<std::string> fields;
  std::size_t pos = 0;
  while (true) {
    const std::size_t next = line.find(sep, pos);
    if (next == std::string::npos) {
      fields.push_back(line.substr(pos));
      break;
    }
    fields.push_back(line.substr(pos, next - pos));
    pos = next + 1;
  }
  return fields;
}

// Abbreviations whose trailing dot does not end a sentence.
const std::array<std::string_view, 7> kAbbreviations = {"e.g.", "i.e.", "fig.", "figs.",
                                                        "cf.",  "vs.",  "al."};

bool dot_closes_abbreviation(std::string_view text, std::size_t dot) {
  std::size_t word_start = dot;
  while (word_start > 0 && !is_space(text[word_start - 1])) --word_start;
  std::string_view word = text.substr(word_start, dot - word_start + 1);
  while (!word.empty() && !is_word_byte(word.front()) && word.front() != '.') word.remove_prefix(1);
  if (word.size() == 2 && std::isupper(static_cast<unsigned char>(word[0]))) return true;
  const std::string lowered = lowercase(word);
  for (std::string_view abbr : kAbbreviations) {
    if (lowered == abbr) return true;
    // Also catch run-together forms like "e.g" already holding earlier dots.
    if (lowered.size() > abbr.size() &&
        lowered.compare(lowered.size() - abbr.size(), abbr.size(), abbr) == 0 &&
        lowered[lowered.size() - abbr.size() - 1] == '.') {
      return true;
    }
  }
  return false;
}

Span trimmed(std::string_view text, int begin, int end) {
  while (begin < end && is_space(text[begin])) ++begin;
  while (end > begin && is_space(text[end - 1])) --end;
  return {begin, end};
}

}  // namespace

std::vector<Span> split_sentences(std::string_view text) {
  std::vector<Span> spans;
  int sentence_start = 0;
  const int n = static_cast<int>(text.size());
  for (int i = 0; i < n; ++i) {
    const char c = text[i];
    if (c != '.' && c != '!' && c != '?') continue;
    if (i + 1 >= n || !is_space(text[i + 1])) continue;
    int next = i + 1;
    while (next < n && is_space(text[next])) ++next;
    if (next >= n) continue;
    const unsigned char head = static_cast<unsigned char>(text[next]);
    if (!std::isupper(head) && !std::isdigit(head)) continue;
    if (c == '.' && dot_closes_abbreviation(text, static_cast<std::size_t>(i))) continue;
    const Span s = trimmed(text, sentence_start, i + 1);
    if (s.begin < s.end) spans.push_back(s);
    sentence_start = next;
  }
  const Span last = trimmed(text, sentence_start, n);
  if (last.begin < last.end) spans.push_back(last);
  return spans;
}

std::vector<Span> tokenize(std::string_view sentence) {
  std::vector<Span> tokens;
  const int n = static_cast<int>(sentence.size());
  int i = 0;
  while (i < n) {
    if (is_space(sentence[i])) {
      ++i;
      continue;
    }
    int j = i;
    while (j < n && !is_space(sentence[j])) ++j;
    // Chunk [i, j): peel leading and trailing punctuation one char at a time.
    int core_begin = i;
    int core_end = j;
    while (core_begin < core_end && !is_word_byte(sentence[core_begin])) {
      tokens.push_back({core_begin, core_begin + 1});
      ++core_begin;
    }
    int trailing = 0;
    while (core_end > core_begin && !is_word_byte(sentence[core_end - 1])) {
      --core_end;
      ++trailing;
    }
    // Core split on '/' with the slash emitted as its own token.
    int piece = core_begin;
    for (int k = core_begin; k < core_end; ++k) {
      if (sentence[k] == '/') {
        if (k > piece) tokens.push_back({piece, k});
        tokens.push_back({k, k + 1});
        piece = k + 1;
      }
    }
    if (core_end > piece) tokens.push_back({piece, core_end});
    for (int k = 0; k < trailing; ++k) tokens.push_back({core_end + k, core_end + k + 1});
    i = j;
  }
  return tokens;
}

bool TagSequence::well_formed() const {
  for (std::size_t i = 0; i < tags.size(); ++i) {
    if (tags[i] == Tag::I && (i == 0 || tags[i - 1] == Tag::O)) return false;
  }
  return true;
}

TagSequence to_iob(const std::vector<Span>& tokens, const std::vector<Mention>& mentions,
                   int* unaligned) {
  TagSequence seq;
  seq.tags.assign(tokens.size(), Tag::O);
  for (const Mention& m : mentions) {
    int first = -1, last = -1;
    for (int t = 0; t < static_cast<int>(tokens.size()); ++t) {
      if (tokens[t].begin < m.end && tokens[t].end > m.start) {
        if (first < 0) first = t;
        last = t;
      }
    }
    if (first < 0) continue;  // whitespace-only slice, nothing to tag
    if ((tokens[first].begin != m.start || tokens[last].end != m.end) && unaligned) {
      ++*unaligned;
    }
    for (int t = first; t <= last; ++t) {
      if (seq.tags[t] != Tag::O) {
        throw IntegrityError("to_iob: overlapping mentions at token " + std::to_string(t));
      }
      seq.tags[t] = t == first ? Tag::B : Tag::I;
    }
  }
  return seq;
}

std::vector<Span> iob_to_spans(const std::vector<Span>& tokens, const TagSequence& tags) {
  std::vector<Span> spans;
  int first = -1;
  for (std::size_t t = 0; t < tags.tags.size(); ++t) {
    Tag tag = tags.tags[t];
    if (tag == Tag::I && (t == 0 || tags.tags[t - 1] == Tag::O)) tag = Tag::B;  // orphan repair
    if (tag == Tag::B) {
      if (first >= 0) spans.push_back({tokens[first].begin, tokens[t - 1].end});
      first = static_cast<int>(t);
    } else if (tag == Tag::O) {
      if (first >= 0) spans.push_back({tokens[first].begin, tokens[t - 1].end});
      first = -1;
    }
  }
  if (first >= 0) spans.push_back({tokens[first].begin, tokens.back().end});
  return spans;
}

std::vector<SentenceView> sentence_views(const Abstract& abstract, CorpusStats* stats) {
  const std::string text = abstract.text();
  std::vector<SentenceView> views;
  for (const Span& sentence : split_sentences(text)) {
    SentenceView view;
    view.span = sentence;
    const std::string_view slice(text.data() + sentence.begin,
                                 static_cast<std::size_t>(sentence.end - sentence.begin));
    for (const Span& tok : tokenize(slice)) {
      view.tokens.push_back({tok.begin + sentence.begin, tok.end + sentence.begin});
      view.token_texts.emplace_back(slice.substr(tok.begin, tok.end - tok.begin));
    }
    views.push_back(std::move(view));
  }

  // Assign each mention to the sentence containing its start; clip the end.
  std::vector<std::vector<Mention>> per_sentence(views.size());
  for (const Mention& m : abstract.mentions) {
    int home = -1;
    for (int s = 0; s < static_cast<int>(views.size()); ++s) {
      if (m.start >= views[s].span.begin && m.start < views[s].span.end) {
        home = s;
        break;
      }
    }
    if (home < 0) continue;  // mention entirely inside trimmed whitespace; unreachable for gold
    Mention clipped = m;
    if (clipped.end > views[home].span.end) {
      clipped.end = views[home].span.end;
      if (stats) ++stats->cross_sentence;
    }
    per_sentence[home].push_back(clipped);
  }

  for (std::size_t s = 0; s < views.size(); ++s) {
    SentenceView& view = views[s];
    int unaligned = 0;
    view.gold = to_iob(view.tokens, per_sentence[s], &unaligned);
    if (stats) stats->unaligned_mentions += unaligned;
    // Recover token ranges per mention for linker supervision.
    for (const Mention& m : per_sentence[s]) {
      SentenceView::MentionSpan ms;
      ms.first_token = -1;
      for (int t = 0; t < static_cast<int>(view.tokens.size()); ++t) {
        if (view.tokens[t].begin < m.end && view.tokens[t].end > m.start) {
          if (ms.first_token < 0) ms.first_token = t;
          ms.last_token = t;
        }
      }
      if (ms.first_token < 0) continue;
      ms.concept_id = m.concept_id;
      view.mentions.push_back(std::move(ms));
    }
    std::sort(view.mentions.begin(), view.mentions.end(),
              [](const auto& a, const auto& b) { return a.first_token < b.first_token; });
  }
  return views;
}

int Corpus::mention_count() const {
  int count = 0;
  for (const Abstract& a : abstracts) count += static_cast<int>(a.mentions.size());
  return count;
}

OmimMapping load_omim_mapping(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("omim mapping: cannot open " + path);
  OmimMapping mapping;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split_fields(line, '\t');
    if (fields.size() != 2 || fields[0].empty() || fields[1].empty()) {
      throw ParseError("omim mapping line " + std::to_string(line_no) +
                       ": expected two tab-separated columns");
    }
    mapping[fields[0]] = fields[1];
  }
  return mapping;
}

namespace {

// Normalizes one raw annotation id. Returns the resolved id or
// kUnresolvedConceptId, bumping warning counters.
std::string normalize_concept_id(std::string id, const OmimMapping* mapping,
                                 const Taxonomy* taxonomy, CorpusStats& stats) {
  const std::size_t sep = id.find_first_of("|+");
  if (sep != std::string::npos) {
    id = id.substr(0, sep);
    ++stats.composite_ids;
  }
  if (id.rfind("MESH:", 0) == 0) id = id.substr(5);
  if (id.rfind("OMIM:", 0) == 0) {
    const auto it = mapping ? mapping->find(id) : OmimMapping::const_iterator{};
    if (!mapping || it == mapping->end()) {
      ++stats.unmapped_omim;
      return kUnresolvedConceptId;
    }
    id = it->second;
  }
  if (id.empty()) return kUnresolvedConceptId;
  if (taxonomy && !taxonomy->contains(id)) {
    ++stats.unknown_concepts;
    return kUnresolvedConceptId;
  }
  return id;
}

}  // namespace

Corpus load_corpus(const std::string& path, const std::string& split, const OmimMapping* mapping,
                   const Taxonomy* taxonomy) {
  std::ifstream in(path);
  if (!in) throw ParseError("corpus: cannot open " + path);

  Corpus corpus;
  corpus.split = split;
  std::set<std::string> seen_ids;

  Abstract current;
  bool have_block = false;

  auto flush = [&] {
    if (!have_block) return;
    if (current.doc_id.empty()) throw ParseError("corpus: block without a document id");
    if (seen_ids.count(current.doc_id)) {
      // The known repeated training abstract is dropped; any other repeat is
      // a corrupt file.
      if (current.doc_id == "8528200") {
        ++corpus.stats.dropped_duplicates;
        current = {};
        have_block = false;
        return;
      }
      throw IntegrityError("corpus: duplicate doc_id " + current.doc_id + " in split " + split);
    }
    seen_ids.insert(current.doc_id);
    const std::string text = current.text();
    std::sort(current.mentions.begin(), current.mentions.end(),
              [](const Mention& a, const Mention& b) {
                return a.start != b.start ? a.start < b.start : a.end < b.end;
              });
    for (std::size_t i = 0; i < current.mentions.size(); ++i) {
      const Mention& m = current.mentions[i];
      if (m.start < 0 || m.end > static_cast<int>(text.size()) || m.start >= m.end) {
        throw IntegrityError("corpus doc " + current.doc_id + ": mention offsets [" +
                             std::to_string(m.start) + "," + std::to_string(m.end) +
                             ") outside document");
      }
      if (text.compare(m.start, m.end - m.start, m.surface) != 0) {
        throw IntegrityError("corpus doc " + current.doc_id + ": surface '" + m.surface +
                             "' does not match text at [" + std::to_string(m.start) + "," +
                             std::to_string(m.end) + ")");
      }
      if (i > 0 && m.start < current.mentions[i - 1].end) {
        throw IntegrityError("corpus doc " + current.doc_id + ": overlapping mentions");
      }
    }
    corpus.abstracts.push_back(std::move(current));
    current = {};
    have_block = false;
  };

  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      flush();
      continue;
    }
    have_block = true;
    const auto title_sep = line.find("|t|");
    const auto body_sep = line.find("|a|");
    if (title_sep != std::string::npos &&
        (body_sep == std::string::npos || title_sep < body_sep)) {
      current.doc_id = line.substr(0, title_sep);
      current.title = line.substr(title_sep + 3);
      continue;
    }
    if (body_sep != std::string::npos) {
      const std::string id = line.substr(0, body_sep);
      if (!current.doc_id.empty() && id != current.doc_id) {
        throw ParseError("corpus line " + std::to_string(line_no) + ": body id " + id +
                         " does not match title id " + current.doc_id);
      }
      current.doc_id = id;
      current.body = line.substr(body_sep + 3);
      continue;
    }
    const auto fields = split_fields(line, '\t');
    if (fields.size() < 6) {
      throw ParseError("corpus line " + std::to_string(line_no) +
                       ": expected 6 tab-separated mention fields");
    }
    Mention m;
    try {
      m.start = std::stoi(fields[1]);
      m.end = std::stoi(fields[2]);
    } catch (const std::exception&) {
      throw ParseError("corpus line " + std::to_string(line_no) + ": bad mention offsets");
    }
    m.surface = fields[3];
    m.concept_id = normalize_concept_id(fields[5], mapping, taxonomy, corpus.stats);
    if (!current.doc_id.empty() && fields[0] != current.doc_id) {
      throw ParseError("corpus line " + std::to_string(line_no) + ": mention id " + fields[0] +
                       " does not match block id " + current.doc_id);
    }
    current.mentions.push_back(std::move(m));
  }
  flush();
  return corpus;
}

}  // namespace taxlink
