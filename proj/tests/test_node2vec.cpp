#include <doctest.h>

#include <cmath>

#include "taxlink/encoders.hpp"
#include "taxlink/errors.hpp"
#include "taxlink/node2vec.hpp"
#include "taxlink/taxonomy.hpp"
#include "testutil.hpp"

using namespace taxlink;

namespace {

ConceptNode rec(std::string id, std::vector<std::string> trees, std::string note = "note") {
  ConceptNode n;
  n.unique_id = std::move(id);
  n.heading = n.unique_id;
  n.scope_note = std::move(note);
  n.tree_numbers = std::move(trees);
  return n;
}

// Triangle a-b-c: every pair connected through prefix links.
Taxonomy triangle() {
  return Taxonomy::from_records({rec("a", {"C01"}), rec("b", {"C01.1"}),
                                 rec("c", {"C01.2", "C01.1.9"})});
}

// Path a-b-c.
Taxonomy path3() {
  return Taxonomy::from_records({rec("a", {"C01"}), rec("b", {"C01.1"}), rec("c", {"C01.1.1"})});
}

}  // namespace

TEST_CASE("transition distribution applies the p/q bias rule") {
  WalkConfig cfg;
  SUBCASE("p=q=1 is uniform") {
    const Taxonomy tax = path3();
    const Vector probs = transition_distribution(tax, tax.index_of("a"), tax.index_of("b"), cfg);
    CHECK(probs.size() == 2);
    CHECK(probs(0) == doctest::Approx(0.5));
    CHECK(probs(1) == doctest::Approx(0.5));
  }
  SUBCASE("triangle with p=2: return weight 1/2, common neighbor weight 1") {
    const Taxonomy tax = triangle();
    cfg.return_param_p = 2.0;
    const Vector probs = transition_distribution(tax, tax.index_of("a"), tax.index_of("b"), cfg);
    // Neighbors of b ascending: a, c; c is adjacent to a.
    CHECK(probs(0) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(probs(1) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  }
  SUBCASE("path with q=4: outward weight 1/4") {
    const Taxonomy tax = path3();
    cfg.inout_param_q = 4.0;
    const Vector probs = transition_distribution(tax, tax.index_of("a"), tax.index_of("b"), cfg);
    CHECK(probs(0) == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(probs(1) == doctest::Approx(0.2).epsilon(1e-12));
  }
  SUBCASE("isolated node is a dead end") {
    const Taxonomy tax = Taxonomy::from_records({rec("a", {"C01"}), rec("z", {"C09"})});
    CHECK_THROWS_AS(transition_distribution(tax, 0, tax.index_of("z"), cfg), std::domain_error);
  }
}

TEST_CASE("walks truncate at isolation and alternate on a single edge") {
  WalkConfig cfg;
  cfg.walks_per_node = 3;
  cfg.walk_length = 4;

  const Taxonomy lonely = Taxonomy::from_records({rec("a", {"C01"})});
  for (const auto& walk : generate_walks(lonely, cfg)) {
    CHECK(walk == std::vector<int>{0});
  }

  const Taxonomy pair = Taxonomy::from_records({rec("a", {"C01"}), rec("b", {"C01.1"})});
  const auto walks = generate_walks(pair, cfg);
  CHECK(walks.size() == 6);  // walks_per_node per node
  for (const auto& walk : walks) {
    REQUIRE(walk.size() == 4);
    for (std::size_t i = 1; i < walk.size(); ++i) CHECK(walk[i] == 1 - walk[i - 1]);
  }
}

TEST_CASE("walk generation is bit-reproducible under the seed") {
  const Taxonomy tax = path3();
  WalkConfig cfg;
  cfg.walks_per_node = 5;
  cfg.walk_length = 20;
  cfg.seed = 99;
  CHECK(generate_walks(tax, cfg) == generate_walks(tax, cfg));
  cfg.seed = 100;
  CHECK(generate_walks(tax, cfg) != generate_walks(path3(), WalkConfig{.walks_per_node = 5,
                                                                       .walk_length = 20,
                                                                       .seed = 99}));
}

TEST_CASE("type1 init is bounded and seeded; type2 rows are scope-note encodings") {
  const Taxonomy tax = path3();
  Rng r1(4), r2(4);
  const NodeEmbeddings e1 = init_node_embeddings(tax, NodeKind::type1, 16, r1);
  const NodeEmbeddings e2 = init_node_embeddings(tax, NodeKind::type1, 16, r2);
  CHECK((e1.matrix.array() == e2.matrix.array()).all());
  CHECK(e1.matrix.cwiseAbs().maxCoeff() <= 0.5 / 16.0);

  Matrix rows(2, 2);
  rows << 1, 0, 0, 1;
  const EmbeddingTable table = EmbeddingTable::from_rows({"alpha", "beta"}, rows);
  const Taxonomy lex = Taxonomy::from_records(
      {rec("a", {"C01"}, "alpha"), rec("b", {"C01.1"}, "beta")});
  Rng r3(4);
  const NodeEmbeddings e3 = init_node_embeddings(lex, NodeKind::type2, 2, r3, &table);
  CHECK(e3.matrix.row(0).isApprox(rows.row(0), 0.0));
  CHECK(e3.matrix.row(1).isApprox(rows.row(1), 0.0));
  CHECK_THROWS_AS(init_node_embeddings(lex, NodeKind::type2, 5, r3, &table), ConfigError);
}

TEST_CASE("window-1 pair enumeration on a 3-walk") {
  const std::vector<std::pair<int, int>> pairs = skipgram_pairs({7, 8, 9}, 1);
  const std::vector<std::pair<int, int>> expected{{7, 8}, {8, 7}, {8, 9}, {9, 8}};
  CHECK(pairs == expected);
}

TEST_CASE("sgns loss gradient matches finite differences") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);
    const int dim = 2 + static_cast<int>(rng.uniform_index(7));
    const int negs = 1 + static_cast<int>(rng.uniform_index(4));
    Vector center(dim), positive(dim);
    Matrix negatives(negs, dim);
    for (int d = 0; d < dim; ++d) {
      center(d) = rng.uniform(-1, 1);
      positive(d) = rng.uniform(-1, 1);
    }
    for (int k = 0; k < negs; ++k) {
      for (int d = 0; d < dim; ++d) negatives(k, d) = rng.uniform(-1, 1);
    }
    Vector d_center, d_positive;
    Matrix d_negatives;
    sgns_loss(center, positive, negatives, &d_center, &d_positive, &d_negatives);

    Matrix center_m = center;
    auto loss_center = [&] { return sgns_loss(Vector(center_m), positive, negatives); };
    CHECK(testutil::fd_check(center_m, d_center, loss_center) < 1e-4);

    Matrix pos_m = positive;
    auto loss_pos = [&] { return sgns_loss(center, Vector(pos_m), negatives); };
    CHECK(testutil::fd_check(pos_m, d_positive, loss_pos) < 1e-4);

    auto loss_neg = [&] { return sgns_loss(center, positive, negatives); };
    CHECK(testutil::fd_check(negatives, d_negatives, loss_neg) < 1e-4);
  }
}

TEST_CASE("zero-epoch training is the identity") {
  const Taxonomy tax = path3();
  WalkConfig cfg;
  cfg.epochs = 0;
  Rng rng(1);
  const NodeEmbeddings init = init_node_embeddings(tax, NodeKind::type1, 8, rng);
  const Matrix before = init.matrix;
  const NodeEmbeddings out = train_skipgram(generate_walks(tax, cfg), init, cfg);
  CHECK((out.matrix.array() == before.array()).all());
}

TEST_CASE("skip-gram training reduces the loss and moves connected rows") {
  const Taxonomy tax = Taxonomy::from_records({rec("a", {"C01"}), rec("b", {"C01.1"}),
                                               rec("c", {"C01.1.1"}), rec("d", {"C01.1.1.1"})});
  WalkConfig cfg;
  cfg.walks_per_node = 4;
  cfg.walk_length = 12;
  cfg.window = 3;
  cfg.epochs = 15;
  cfg.seed = 6;
  Rng rng(6);
  const NodeEmbeddings init = init_node_embeddings(tax, NodeKind::type1, 8, rng);
  const Matrix before = init.matrix;
  std::vector<double> losses;
  const NodeEmbeddings out = train_skipgram(generate_walks(tax, cfg), init, cfg, &losses);
  REQUIRE(losses.size() == 15);
  CHECK(losses.back() < losses.front());
  for (int r = 0; r < 4; ++r) {
    CHECK((out.matrix.row(r) - before.row(r)).norm() > 0.0);
  }

  // Bit-exact reproducibility of the whole pipeline.
  Rng rng2(6);
  const NodeEmbeddings init2 = init_node_embeddings(tax, NodeKind::type1, 8, rng2);
  const NodeEmbeddings out2 = train_skipgram(generate_walks(tax, cfg), init2, cfg);
  CHECK((out.matrix.array() == out2.matrix.array()).all());
}
