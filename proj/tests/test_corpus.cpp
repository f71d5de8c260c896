#include <doctest.h>

#include "taxlink/corpus.hpp"
#include "taxlink/errors.hpp"
#include "taxlink/taxonomy.hpp"
#include "testutil.hpp"

using namespace taxlink;

namespace {

std::vector<std::string> token_strings(std::string_view text) {
  std::vector<std::string> out;
  for (const Span& s : tokenize(text)) out.emplace_back(text.substr(s.begin, s.end - s.begin));
  return out;
}

}  // namespace

TEST_CASE("sentence splitting on plain boundaries") {
  CHECK(split_sentences("A disease. Another one.").size() == 2);
  CHECK(split_sentences("no terminators here at all").size() == 1);
  CHECK(split_sentences("Results! More data? Yes.").size() == 3);
}

TEST_CASE("sentence splitting honors the abbreviation stop-list") {
  CHECK(split_sentences("mutations in the X gene (e.g. Exon 2) occur.").size() == 1);
  CHECK(split_sentences("the values differ, i.e. They do not match.").size() == 1);
  CHECK(split_sentences("see Fig. 2 for details.").size() == 1);
  CHECK(split_sentences("found by J. Smith last year.").size() == 1);
  // Lowercase continuation is never a boundary.
  CHECK(split_sentences("a bug. fixed in place.").size() == 1);
}

TEST_CASE("sentence spans partition the text modulo whitespace") {
  const std::string text = "First sentence here. Second one follows!  Third ends.";
  const auto spans = split_sentences(text);
  REQUIRE(spans.size() == 3);
  for (std::size_t i = 0; i < spans.size(); ++i) {
    CHECK(spans[i].begin < spans[i].end);
    CHECK(!std::isspace(static_cast<unsigned char>(text[spans[i].begin])));
    CHECK(!std::isspace(static_cast<unsigned char>(text[spans[i].end - 1])));
    if (i > 0) CHECK(spans[i].begin >= spans[i - 1].end);
  }
  CHECK(spans.front().begin == 0);
  CHECK(spans.back().end == static_cast<int>(text.size()));
}

TEST_CASE("tokenizer detaches punctuation and splits slashes, keeps hyphens") {
  CHECK(token_strings("ovarian cancer.") == std::vector<std::string>{"ovarian", "cancer", "."});
  CHECK(token_strings("T-PLL") == std::vector<std::string>{"T-PLL"});
  CHECK(token_strings("(B-NHL)") == std::vector<std::string>{"(", "B-NHL", ")"});
  CHECK(token_strings("and/or") == std::vector<std::string>{"and", "/", "or"});
  CHECK(token_strings("3.5 mg") == std::vector<std::string>{"3.5", "mg"});
  CHECK(token_strings("...") == std::vector<std::string>{".", ".", "."});
}

TEST_CASE("token spans are disjoint, ordered, and cover non-whitespace") {
  const std::string text = "Deletions of (exon 2) and/or exon-3 occur in 5/6 cases.";
  const auto spans = tokenize(text);
  int covered = 0;
  for (std::size_t i = 0; i < spans.size(); ++i) {
    CHECK(spans[i].begin < spans[i].end);
    if (i > 0) CHECK(spans[i].begin >= spans[i - 1].end);
    covered += spans[i].end - spans[i].begin;
  }
  int non_ws = 0;
  for (char c : text) non_ws += std::isspace(static_cast<unsigned char>(c)) ? 0 : 1;
  CHECK(covered == non_ws);
}

TEST_CASE("to_iob projects mentions onto B/I runs") {
  const std::string sentence = "Identification of APC2, a homologue of the "
                               "adenomatous polyposis coli tumour suppressor.";
  const auto tokens = tokenize(sentence);
  const int start = static_cast<int>(sentence.find("adenomatous"));
  const int end = static_cast<int>(sentence.find(" suppressor"));
  Mention m{start, end, sentence.substr(start, end - start), "D011125"};
  const TagSequence tags = to_iob(tokens, {m});
  REQUIRE(tags.tags.size() == tokens.size());
  int b = 0, i = 0;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    if (tags.tags[t] == Tag::B) {
      ++b;
      CHECK(tokens[t].begin == start);
    }
    if (tags.tags[t] == Tag::I) ++i;
  }
  CHECK(b == 1);
  CHECK(i == 3);  // polyposis coli tumour
  CHECK(tags.well_formed());

  CHECK(to_iob(tokens, {}).tags == std::vector<Tag>(tokens.size(), Tag::O));
}

TEST_CASE("adjacent distinct mentions produce B I B I") {
  const std::string sentence = "alpha beta gamma delta";
  const auto tokens = tokenize(sentence);
  Mention m1{0, 10, "alpha beta", "D1"};
  Mention m2{11, 22, "gamma delta", "D2"};
  const TagSequence tags = to_iob(tokens, {m1, m2});
  CHECK(tags.tags == std::vector<Tag>{Tag::B, Tag::I, Tag::B, Tag::I});
}

TEST_CASE("unaligned mentions widen to token boundaries with a warning") {
  const std::string sentence = "chromosome abnormality";
  const auto tokens = tokenize(sentence);
  Mention partial{3, 10, "omosome", "D1"};  // mid-token slice
  int warnings = 0;
  const TagSequence tags = to_iob(tokens, {partial}, &warnings);
  CHECK(warnings == 1);
  CHECK(tags.tags == std::vector<Tag>{Tag::B, Tag::O});
}

TEST_CASE("overlapping mentions are rejected") {
  const std::string sentence = "one two three";
  const auto tokens = tokenize(sentence);
  Mention a{0, 7, "one two", "D1"};
  Mention b{4, 13, "two three", "D2"};
  CHECK_THROWS_AS(to_iob(tokens, {a, b}), IntegrityError);
}

TEST_CASE("iob round trip recovers token-aligned mentions") {
  const std::string sentence = "the alpha syndrome affects beta fever patients";
  const auto tokens = tokenize(sentence);
  Mention m1{4, 18, "alpha syndrome", "D1"};
  Mention m2{27, 37, "beta fever", "D2"};
  const TagSequence tags = to_iob(tokens, {m1, m2});
  const auto spans = iob_to_spans(tokens, tags);
  REQUIRE(spans.size() == 2);
  CHECK(spans[0] == Span{4, 18});
  CHECK(spans[1] == Span{27, 37});
}

TEST_CASE("orphan I tags are repaired before span extraction") {
  const std::string sentence = "a b c";
  const auto tokens = tokenize(sentence);
  TagSequence tags;
  tags.tags = {Tag::O, Tag::I, Tag::I};
  const auto spans = iob_to_spans(tokens, tags);
  REQUIRE(spans.size() == 1);
  CHECK(spans[0] == Span{2, 5});
}

namespace {

const char* kTinyCorpus =
    "101|t|Study of alpha syndrome in adults.\n"
    "101|a|Patients with beta fever were examined.\n"
    "101\t9\t23\talpha syndrome\tDisease\tD000001\n"
    "101\t49\t59\tbeta fever\tDisease\tD000002\n"
    "\n"
    "102|t|Analysis of gamma plague cases.\n"
    "102|a|No mentions of known concepts here.\n"
    "102\t12\t24\tgamma plague\tDisease\tOMIM:600100\n";

}  // namespace

TEST_CASE("corpus loader parses blocks, sorts mentions, applies the OMIM map") {
  const auto dir = testutil::temp_dir("corpus");
  const std::string path = testutil::write_file(dir / "tiny.txt", kTinyCorpus);
  const std::string map_path =
      testutil::write_file(dir / "omim.tsv", "OMIM:600100\tD000003\n");
  const OmimMapping mapping = load_omim_mapping(map_path);

  const Corpus corpus = load_corpus(path, "train", &mapping);
  REQUIRE(corpus.abstracts.size() == 2);
  CHECK(corpus.split == "train");
  CHECK(corpus.mention_count() == 3);
  const Abstract& a = corpus.abstracts[0];
  CHECK(a.doc_id == "101");
  CHECK(a.title == "Study of alpha syndrome in adults.");
  REQUIRE(a.mentions.size() == 2);
  CHECK(a.mentions[0].start == 9);
  CHECK(a.mentions[0].surface == "alpha syndrome");
  CHECK(a.mentions[1].concept_id == "D000002");
  CHECK(corpus.abstracts[1].mentions[0].concept_id == "D000003");
  CHECK(corpus.stats.total() == 0);
}

TEST_CASE("corpus loader warning paths") {
  const auto dir = testutil::temp_dir("corpus_warn");
  const std::string content =
      "7|t|alpha syndrome and beta fever findings.\n"
      "7|a|body text.\n"
      "7\t0\t14\talpha syndrome\tDisease\tOMIM:999999\n"
      "7\t19\t29\tbeta fever\tDisease\tD000002|D000009\n";
  const std::string path = testutil::write_file(dir / "warn.txt", content);
  const Corpus corpus = load_corpus(path, "train", nullptr);
  CHECK(corpus.stats.unmapped_omim == 1);
  CHECK(corpus.stats.composite_ids == 1);
  CHECK(corpus.abstracts[0].mentions[0].concept_id == kUnresolvedConceptId);
  CHECK(!corpus.abstracts[0].mentions[0].resolved());
  CHECK(corpus.abstracts[0].mentions[1].concept_id == "D000002");
}

TEST_CASE("MESH prefixes are stripped and unknown ids downgraded with a taxonomy") {
  const auto dir = testutil::temp_dir("corpus_tax");
  ConceptNode n;
  n.unique_id = "D000002";
  n.heading = "beta fever";
  n.scope_note = "note";
  n.tree_numbers = {"C01"};
  const Taxonomy tax = Taxonomy::from_records({n});
  const std::string content =
      "7|t|alpha syndrome and beta fever findings.\n"
      "7|a|body.\n"
      "7\t0\t14\talpha syndrome\tDisease\tMESH:D999999\n"
      "7\t19\t29\tbeta fever\tDisease\tMESH:D000002\n";
  const Corpus corpus = load_corpus(testutil::write_file(dir / "t.txt", content), "test", nullptr,
                                    &tax);
  CHECK(corpus.abstracts[0].mentions[0].concept_id == kUnresolvedConceptId);
  CHECK(corpus.stats.unknown_concepts == 1);
  CHECK(corpus.abstracts[0].mentions[1].concept_id == "D000002");
}

TEST_CASE("empty corpus file loads as an empty corpus") {
  const auto dir = testutil::temp_dir("corpus_empty");
  const Corpus corpus = load_corpus(testutil::write_file(dir / "empty.txt", ""), "test");
  CHECK(corpus.abstracts.empty());
  CHECK(corpus.mention_count() == 0);
}

TEST_CASE("surface mismatches name the document") {
  const auto dir = testutil::temp_dir("corpus_mismatch");
  const std::string content =
      "55|t|alpha syndrome is studied.\n"
      "55|a|body.\n"
      "55\t0\t14\twrong surface!\tDisease\tD1\n";
  CHECK_THROWS_WITH_AS(load_corpus(testutil::write_file(dir / "m.txt", content), "train"),
                       doctest::Contains("55"), IntegrityError);
}

TEST_CASE("the known repeated training abstract is dropped, others rejected") {
  const auto dir = testutil::temp_dir("corpus_dup");
  const std::string dup_8528200 =
      "8528200|t|First copy.\n8528200|a|body.\n\n8528200|t|Second copy.\n8528200|a|body.\n";
  const Corpus corpus =
      load_corpus(testutil::write_file(dir / "dup.txt", dup_8528200), "train");
  CHECK(corpus.abstracts.size() == 1);
  CHECK(corpus.abstracts[0].title == "First copy.");
  CHECK(corpus.stats.dropped_duplicates == 1);

  const std::string dup_other = "9|t|One.\n9|a|b.\n\n9|t|Two.\n9|a|b.\n";
  CHECK_THROWS_AS(load_corpus(testutil::write_file(dir / "other.txt", dup_other), "train"),
                  IntegrityError);
}

TEST_CASE("sentence views clip cross-sentence mentions and index tokens") {
  Abstract a;
  a.doc_id = "3";
  a.title = "alpha syndrome studies. More text follows here.";
  a.body = "";
  const std::string text = a.text();
  a.mentions.push_back({0, 14, "alpha syndrome", "D1"});
  // Mention straddling the boundary gets clipped to its home sentence.
  const int cross_start = static_cast<int>(text.find("studies"));
  a.mentions.push_back(
      {cross_start, cross_start + 13, text.substr(cross_start, 13), "D2"});
  CorpusStats stats;
  const auto views = sentence_views(a, &stats);
  REQUIRE(views.size() == 2);
  CHECK(stats.cross_sentence == 1);
  REQUIRE(views[0].mentions.size() == 2);
  CHECK(views[0].token_texts[0] == "alpha");
  CHECK(views[0].gold.tags[0] == Tag::B);
  CHECK(views[0].gold.tags[1] == Tag::I);
  CHECK(views[0].gold.well_formed());
  CHECK(views[1].mentions.empty());
}

TEST_CASE("iob round trip holds corpus-wide") {
  const auto dir = testutil::temp_dir("corpus_roundtrip");
  const std::string path = testutil::write_file(dir / "tiny.txt", kTinyCorpus);
  const Corpus corpus = load_corpus(path, "train");
  for (const Abstract& abstract : corpus.abstracts) {
    std::vector<Span> recovered;
    for (const SentenceView& view : sentence_views(abstract)) {
      for (const Span& s : iob_to_spans(view.tokens, view.gold)) recovered.push_back(s);
    }
    REQUIRE(recovered.size() == abstract.mentions.size());
    for (std::size_t i = 0; i < recovered.size(); ++i) {
      CHECK(recovered[i].begin == abstract.mentions[i].start);
      CHECK(recovered[i].end == abstract.mentions[i].end);
    }
  }
}
