// Acceptance suite: one line per criterion, exit 0 only if every gated
// criterion passes. The real-data smoke check (criterion 9) is optional and
// reports SKIP unless the corpus paths are supplied via environment
// variables (see README).
//
// Needs TAXLINK_BIN (the CLI binary) and TAXLINK_DATA (the shipped
// data/sample directory).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "taxlink/corpus.hpp"
#include "taxlink/dataset.hpp"
#include "taxlink/encoders.hpp"
#include "taxlink/gcn.hpp"
#include "taxlink/linker.hpp"
#include "taxlink/metrics.hpp"
#include "taxlink/ner.hpp"
#include "taxlink/node2vec.hpp"
#include "taxlink/numerics.hpp"
#include "taxlink/taxonomy.hpp"

namespace fs = std::filesystem;
using namespace taxlink;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

void report(int id, bool pass, const std::string& name, const std::string& detail) {
  if (!pass) ++g_failures;
  std::printf("%s  c%d %s%s%s\n", pass ? "PASS" : "FAIL", id, name.c_str(),
              detail.empty() ? "" : " -- ", detail.c_str());
  std::fflush(stdout);
}

void report_skip(int id, const std::string& name, const std::string& why) {
  std::printf("SKIP  c%d %s -- %s\n", id, name.c_str(), why.c_str());
}

std::string env_or(const char* name, const std::string& fallback) {
  const char* v = std::getenv(name);
  return v ? v : fallback;
}

Matrix random_normal(int rows, int cols, Rng& rng) {
  Matrix m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) m(r, c) = rng.normal();
  }
  return m;
}

// ---- independent brute-force CRF oracle ----------------------------------

double bf_score(const Matrix& emissions, const std::vector<int>& tags, const Matrix& transitions) {
  const int t = static_cast<int>(emissions.rows());
  const int tag_count = static_cast<int>(emissions.cols());
  double score = transitions(tag_count, tags[0]) + emissions(0, tags[0]);
  for (int s = 1; s < t; ++s) score += transitions(tags[s - 1], tags[s]) + emissions(s, tags[s]);
  return score + transitions(tags[t - 1], tag_count + 1);
}

void enumerate_sequences(int length, int tag_count,
                         const std::function<void(const std::vector<int>&)>& fn) {
  std::vector<int> tags(length, 0);
  while (true) {
    fn(tags);
    int pos = length - 1;
    while (pos >= 0 && tags[pos] == tag_count - 1) tags[pos--] = 0;
    if (pos < 0) return;
    ++tags[pos];
  }
}

// ---- criteria -------------------------------------------------------------

void criterion1_and_2() {
  const auto start = Clock::now();
  Rng rng(20240601);
  double worst_logz = 0.0;
  double worst_mass = 0.0;
  bool viterbi_ok = true;
  for (int trial = 0; trial < 100; ++trial) {
    const int t = 1 + static_cast<int>(rng.uniform_index(6));
    const Matrix emissions = random_normal(t, 3, rng);
    const Matrix transitions = random_normal(5, 5, rng);

    std::vector<double> scores;
    enumerate_sequences(t, 3, [&](const std::vector<int>& tags) {
      scores.push_back(bf_score(emissions, tags, transitions));
    });
    double shift = scores[0];
    for (double s : scores) shift = std::max(shift, s);
    double acc = 0.0;
    std::size_t best_index = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      acc += std::exp(scores[i] - shift);
      if (scores[i] > scores[best_index]) best_index = i;
    }
    const double bf_logz = shift + std::log(acc);
    worst_logz = std::max(worst_logz,
                          std::abs(crf_log_partition(emissions, transitions) - bf_logz));

    std::vector<int> expected;
    std::size_t index = 0;
    enumerate_sequences(t, 3, [&](const std::vector<int>& tags) {
      if (index++ == best_index) expected = tags;
    });
    const TagSequence decoded = viterbi_decode(emissions, transitions);
    for (int s = 0; s < t; ++s) {
      if (static_cast<int>(decoded.tags[s]) != expected[s]) viterbi_ok = false;
    }

    // Criterion 2a: total probability mass over all tag sequences.
    CrfParams crf;
    crf.transitions = transitions;
    double mass = 0.0;
    enumerate_sequences(t, 3, [&](const std::vector<int>& tags) {
      TagSequence seq;
      for (int tag : tags) seq.tags.push_back(static_cast<Tag>(tag));
      mass += std::exp(crf_log_likelihood(emissions, seq, crf));
    });
    worst_mass = std::max(worst_mass, std::abs(mass - 1.0));
  }
  const double elapsed = seconds_since(start);

  char detail[160];
  std::snprintf(detail, sizeof(detail), "max |logZ - brute force| = %.2e, viterbi %s, %.2fs",
                worst_logz, viterbi_ok ? "exact on 100/100" : "MISMATCH", elapsed);
  report(1, worst_logz < 1e-8 && viterbi_ok && elapsed < 5.0, "crf exactness", detail);

  // Criterion 2b: linker normalization over a 50-node inventory.
  Rng nrng(7);
  std::vector<ConceptNode> records;
  std::vector<std::string> trees{"C01"};
  for (int i = 1; i < 50; ++i) {
    trees.push_back(trees[nrng.uniform_index(i)] + "." + std::to_string(i));
  }
  for (int i = 0; i < 50; ++i) {
    ConceptNode node;
    char id[16];
    std::snprintf(id, sizeof(id), "D%06d", i + 1);
    node.unique_id = id;
    node.heading = "node";
    node.scope_note = "note";
    node.tree_numbers = {trees[i]};
    records.push_back(std::move(node));
  }
  const Taxonomy tax = Taxonomy::from_records(std::move(records));
  Matrix nodes = random_normal(tax.size(), 6, nrng);
  Matrix w = random_normal(4, 6, nrng);
  double worst_sum = 0.0;
  for (int trial = 0; trial < 25; ++trial) {
    const Vector enc = random_normal(4, 1, nrng);
    worst_sum = std::max(worst_sum,
                         std::abs(link_probabilities(enc, nodes, w).sum() - 1.0));
  }
  char detail2[160];
  std::snprintf(detail2, sizeof(detail2),
                "max |sum(p) - 1| = %.2e over tag sequences, %.2e over 50 concepts", worst_mass,
                worst_sum);
  report(2, worst_mass < 1e-8 && worst_sum < 1e-6, "probability normalization", detail2);
}

// In-place finite-difference check against an analytic gradient.
template <class F>
double fd_error(Eigen::Ref<Matrix> tensor, const Matrix& analytic, F&& loss) {
  const double eps = 1e-5;
  double worst = 0.0;
  const double scale =
      std::max(analytic.cwiseAbs().maxCoeff(), 1e-8);
  Matrix numeric(tensor.rows(), tensor.cols());
  for (Index r = 0; r < tensor.rows(); ++r) {
    for (Index c = 0; c < tensor.cols(); ++c) {
      const double keep = tensor(r, c);
      tensor(r, c) = keep + eps;
      const double fp = loss();
      tensor(r, c) = keep - eps;
      const double fm = loss();
      tensor(r, c) = keep;
      numeric(r, c) = (fp - fm) / (2.0 * eps);
    }
  }
  worst = (numeric - analytic).cwiseAbs().maxCoeff() /
          std::max({scale, numeric.cwiseAbs().maxCoeff(), 1e-8});
  return worst;
}

void criterion3() {
  const auto start = Clock::now();
  double worst = 0.0;
  std::string worst_name = "none";
  auto track = [&](const std::string& name, double err) {
    if (err > worst) {
      worst = err;
      worst_name = name;
    }
  };

  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);

    // (a) bilinear W on random dims <= 8.
    {
      const int n = 2 + static_cast<int>(rng.uniform_index(6));
      const int dn = 1 + static_cast<int>(rng.uniform_index(7));
      const int dm = 1 + static_cast<int>(rng.uniform_index(7));
      Matrix nodes = random_normal(n, dn, rng);
      Matrix w = random_normal(dm, dn, rng);
      std::vector<ElExample> examples(3);
      for (auto& ex : examples) {
        ex.enc = random_normal(dm, 1, rng);
        ex.gold_node = static_cast<int>(rng.uniform_index(n));
      }
      std::vector<const ElExample*> batch;
      for (const auto& ex : examples) batch.push_back(&ex);
      Matrix d_w, d_nodes;
      linker_loss_and_grads(nodes, w, batch, &d_w, &d_nodes);
      auto loss = [&] { return linker_loss_and_grads(nodes, w, batch, nullptr, nullptr); };
      track("bilinear_w", fd_error(w, d_w, loss));
      track("node_matrix", fd_error(nodes, d_nodes, loss));
    }

    // (b) both GCN layers through the linking loss.
    {
      const int n = 4 + static_cast<int>(rng.uniform_index(3));
      Matrix adj = Matrix::Identity(n, n);
      for (int i = 0; i + 1 < n; ++i) adj(i, i + 1) = adj(i + 1, i) = 1.0;
      const int d0 = 2 + static_cast<int>(rng.uniform_index(3));
      const int dh = 2 + static_cast<int>(rng.uniform_index(5));
      const int dout = 2 + static_cast<int>(rng.uniform_index(5));
      GcnParams gcn = init_gcn({d0, dh, dout}, rng);
      const Matrix h0 = random_normal(n, d0, rng);
      const Matrix upstream = random_normal(n, dout, rng);
      auto loss = [&] { return gcn_forward(h0, adj, gcn).cwiseProduct(upstream).sum(); };
      GcnCache cache;
      gcn_forward(h0, adj, gcn, &cache);
      const GcnGrads grads = gcn_backward(cache, adj, gcn, upstream);
      track("gcn.w0", fd_error(gcn.layers[0].weight, grads.layers[0].weight, loss));
      track("gcn.b0", fd_error(gcn.layers[0].bias, grads.layers[0].bias, loss));
      track("gcn.w1", fd_error(gcn.layers[1].weight, grads.layers[1].weight, loss));
      track("gcn.b1", fd_error(gcn.layers[1].bias, grads.layers[1].bias, loss));
    }

    // (c)(d)(e): LSTM gates in both directions, CRF transitions and
    // projection, and the character encoder, all through one sentence loss.
    for (const CharEncoderKind kind : {CharEncoderKind::bilstm, CharEncoderKind::cnn}) {
      NerConfig cfg;
      cfg.hidden = 2 + static_cast<int>(rng.uniform_index(3));
      cfg.dropout = 0.0;
      cfg.char_cfg.kind = kind;
      cfg.char_cfg.char_dim = 2 + static_cast<int>(rng.uniform_index(4));
      cfg.char_cfg.char_hidden = 2 + static_cast<int>(rng.uniform_index(3));
      cfg.char_cfg.cnn_filters = 2 + static_cast<int>(rng.uniform_index(4));
      Rng init_rng(seed * 97 + static_cast<int>(kind));
      NerModel model = init_ner_model(cfg, 3, "aehlnprsty", init_rng);

      TaggedSentence sentence;
      sentence.tokens = {"alpha", "syn", "rest"};
      sentence.token_spans = {{0, 5}, {6, 9}, {10, 14}};
      sentence.base_features = random_normal(3, 3, rng);
      sentence.gold.tags = {Tag::B, Tag::I, Tag::O};

      auto loss = [&] {
        const Matrix hidden = detail::encode_tokens(model, sentence, false, nullptr, nullptr);
        return -crf_log_likelihood(hidden * model.crf.emission_proj, sentence.gold, model.crf);
      };
      detail::EncoderActivations acts;
      const Matrix hidden = detail::encode_tokens(model, sentence, false, nullptr, &acts);
      const Matrix emissions = hidden * model.crf.emission_proj;
      const CrfGrads crf_grads =
          crf_nll_backward(emissions, sentence.gold, model.crf.transitions);
      const Matrix d_hidden = crf_grads.d_emissions * model.crf.emission_proj.transpose();
      const Matrix d_proj = hidden.transpose() * crf_grads.d_emissions;
      detail::EncoderGrads grads;
      detail::encode_tokens_backward(model, acts, d_hidden, grads);

      track("crf.proj", fd_error(model.crf.emission_proj, d_proj, loss));
      track("crf.trans", fd_error(model.crf.transitions, crf_grads.d_transitions, loss));
      auto check_lstm = [&](const char* tag, LstmParams& p, const LstmParams& g) {
        track(std::string(tag) + ".wi", fd_error(p.wi, g.wi, loss));
        track(std::string(tag) + ".wf", fd_error(p.wf, g.wf, loss));
        track(std::string(tag) + ".wo", fd_error(p.wo, g.wo, loss));
        track(std::string(tag) + ".wg", fd_error(p.wg, g.wg, loss));
        track(std::string(tag) + ".ui", fd_error(p.ui, g.ui, loss));
        track(std::string(tag) + ".uf", fd_error(p.uf, g.uf, loss));
        track(std::string(tag) + ".uo", fd_error(p.uo, g.uo, loss));
        track(std::string(tag) + ".ug", fd_error(p.ug, g.ug, loss));
        track(std::string(tag) + ".bi", fd_error(p.bi, g.bi, loss));
        track(std::string(tag) + ".bf", fd_error(p.bf, g.bf, loss));
        track(std::string(tag) + ".bo", fd_error(p.bo, g.bo, loss));
        track(std::string(tag) + ".bg", fd_error(p.bg, g.bg, loss));
      };
      check_lstm("lstm.fwd", model.lstm.fwd, grads.lstm.params.fwd);
      check_lstm("lstm.bwd", model.lstm.bwd, grads.lstm.params.bwd);
      track("chars.embed", fd_error(model.chars->embeddings, grads.chars.d_embeddings, loss));
      if (kind == CharEncoderKind::bilstm) {
        check_lstm("chars.fwd", model.chars->fwd, grads.chars.d_fwd);
        check_lstm("chars.bwd", model.chars->bwd, grads.chars.d_bwd);
      } else {
        track("chars.filters", fd_error(model.chars->filters, grads.chars.d_filters, loss));
        track("chars.bias",
              fd_error(model.chars->filter_bias, grads.chars.d_filter_bias, loss));
      }
    }

    // (f) one skip-gram (center, context, negatives) step.
    {
      const int dim = 2 + static_cast<int>(rng.uniform_index(7));
      Vector center = random_normal(dim, 1, rng);
      const Vector positive = random_normal(dim, 1, rng);
      const Matrix negatives = random_normal(3, dim, rng);
      Vector d_center, d_positive;
      Matrix d_negatives;
      sgns_loss(center, positive, negatives, &d_center, &d_positive, &d_negatives);
      Matrix center_m = center;
      auto loss = [&] { return sgns_loss(Vector(center_m), positive, negatives); };
      track("sgns.center", fd_error(center_m, d_center, loss));
      Matrix negs = negatives;
      auto loss_negs = [&] { return sgns_loss(center, positive, negs); };
      track("sgns.negatives", fd_error(negs, d_negatives, loss_negs));
    }
  }

  const double elapsed = seconds_since(start);
  char detail[160];
  std::snprintf(detail, sizeof(detail), "worst rel. error %.2e (%s), 10 seeds, %.2fs", worst,
                worst_name.c_str(), elapsed);
  report(3, worst < 1e-4 && elapsed < 30.0, "gradient suite", detail);
}

void criterion4() {
  Rng rng(99);
  const int n = 8;
  // Random 8-node adjacency with self-loops.
  Matrix adj = Matrix::Identity(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (rng.uniform01() < 0.4) adj(i, j) = adj(j, i) = 1.0;
    }
  }
  // Dyadic parameters and inputs keep every sum exact in double, so a
  // reordering of the nodes cannot change a single bit.
  auto dyadic = [&](int rows, int cols) {
    Matrix m(rows, cols);
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) {
        m(r, c) = static_cast<double>(static_cast<int>(rng.uniform_index(129)) - 64) / 256.0;
      }
    }
    return m;
  };
  GcnParams params;
  params.layers.resize(2);
  params.layers[0].weight = dyadic(3, 5);
  params.layers[0].bias = dyadic(5, 1);
  params.layers[1].weight = dyadic(5, 2);
  params.layers[1].bias = dyadic(2, 1);
  const Matrix h0 = dyadic(n, 3);

  std::vector<int> perm(n);
  for (int i = 0; i < n; ++i) perm[i] = i;
  shuffle(perm, rng);
  Matrix p = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i) p(perm[i], i) = 1.0;

  const Matrix out = gcn_forward(h0, adj, params);
  const Matrix out_perm = gcn_forward(p.transpose() * h0, p.transpose() * adj * p, params);
  const bool equivariant = ((p * out_perm).array() == out.array()).all();

  // Receptive field on a 4-path with L=2: node 0 vs a 3-hop perturbation.
  Matrix path = Matrix::Identity(4, 4);
  path(0, 1) = path(1, 0) = path(1, 2) = path(2, 1) = path(2, 3) = path(3, 2) = 1.0;
  GcnParams params2;
  params2.layers.resize(2);
  params2.layers[0].weight = dyadic(3, 4);
  params2.layers[0].bias = dyadic(4, 1);
  params2.layers[1].weight = dyadic(4, 2);
  params2.layers[1].bias = dyadic(2, 1);
  Matrix h4 = dyadic(4, 3);
  const Matrix base = gcn_forward(h4, path, params2);
  h4.row(3) += Vector::Constant(3, 5.0).transpose();
  const Matrix shifted = gcn_forward(h4, path, params2);
  const bool receptive = (shifted.row(0).array() == base.row(0).array()).all() &&
                         (shifted.row(1) - base.row(1)).cwiseAbs().maxCoeff() > 0.0;

  report(4, equivariant && receptive, "gcn structure",
         std::string("permutation equivariance ") + (equivariant ? "bit-exact" : "BROKEN") +
             ", L-hop receptive field " + (receptive ? "bit-exact" : "BROKEN"));
}

void criterion5() {
  const auto start = Clock::now();
  // Barbell: two 5-cliques joined by one bridge edge, built from tree
  // numbers (extra numbers add the extra clique edges).
  auto clique = [](const std::string& p, std::vector<ConceptNode>& out,
                   const std::string& bridge) {
    auto rec = [&](std::string id, std::vector<std::string> trees) {
      ConceptNode n;
      n.unique_id = std::move(id);
      n.heading = n.unique_id;
      n.scope_note = "note";
      n.tree_numbers = std::move(trees);
      out.push_back(std::move(n));
    };
    std::vector<std::string> first = {p};
    if (!bridge.empty()) first.push_back(bridge);
    rec(p + "1", first);
    rec(p + "2", {p + ".1"});
    rec(p + "3", {p + ".1.1", p + ".2"});
    rec(p + "4", {p + ".1.2", p + ".1.1.1", p + ".3"});
    rec(p + "5", {p + ".1.3", p + ".1.1.2", p + ".1.2.1", p + ".4"});
  };
  std::vector<ConceptNode> records;
  clique("A", records, "");
  clique("B", records, "A.4.1");  // B1 hangs off A5's tree number A.4
  const Taxonomy tax = Taxonomy::from_records(std::move(records));

  WalkConfig cfg;  // defaults: 10 walks x 80, window 10, 5 negatives, lr 0.025
  cfg.epochs = 100;
  cfg.seed = 11;
  Rng init_rng(11);
  NodeEmbeddings emb = init_node_embeddings(tax, NodeKind::type1, 16, init_rng);
  emb = train_skipgram(generate_walks(tax, cfg), std::move(emb), cfg);

  auto cosine = [&](int a, int b) {
    const Vector u = emb.matrix.row(a), v = emb.matrix.row(b);
    return u.dot(v) / (u.norm() * v.norm());
  };
  double intra = 0.0, inter = 0.0;
  int intra_count = 0, inter_count = 0;
  for (int a = 0; a < 10; ++a) {
    for (int b = a + 1; b < 10; ++b) {
      const bool same = (a < 5) == (b < 5);
      if (same) {
        intra += cosine(a, b);
        ++intra_count;
      } else {
        inter += cosine(a, b);
        ++inter_count;
      }
    }
  }
  intra /= intra_count;
  inter /= inter_count;
  const double elapsed = seconds_since(start);
  char detail[160];
  std::snprintf(detail, sizeof(detail),
                "mean intra-clique cos %.3f vs inter %.3f (gap %.3f >= 0.2), %.2fs", intra, inter,
                intra - inter, elapsed);
  report(5, intra - inter >= 0.2 && elapsed < 10.0, "node2vec community separation", detail);
}

// ---- CLI-driven criteria ---------------------------------------------------

std::string g_bin, g_data, g_work;

int run_cli(const std::string& args, const std::string& log) {
  const std::string cmd = g_bin + " " + args + " >" + log + " 2>&1";
  return WEXITSTATUS(std::system(cmd.c_str()));
}

std::string fixture_paths(const std::string& out, bool val_is_train = true) {
  std::string s = " --paths.taxonomy " + g_data + "/taxonomy.jsonl --paths.train " + g_data +
                  "/train.pubtator --paths.embeddings " + g_data +
                  "/embeddings3d.txt --paths.omim_mapping " + g_data + "/omim2mesh.tsv";
  s += " --paths.validation " + g_data + (val_is_train ? "/train.pubtator" : "/validation.pubtator");
  s += " --paths.out " + out;
  return s;
}

std::map<std::string, double> read_kv(const std::string& path) {
  std::map<std::string, double> kv;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) continue;
    try {
      kv[line.substr(0, eq)] = std::stod(line.substr(eq + 3));
    } catch (const std::exception&) {
    }
  }
  return kv;
}

void criterion6() {
  struct Run {
    std::string name;
    std::string args;
    std::vector<std::pair<std::string, double>> thresholds;
  };
  const std::vector<Run> runs = {
      {"train-ner",
       "train-ner --ner.hidden 16 --ner.char_dim 8 --ner.char_hidden 4 --ner.epochs 300"
       " --ner.eval_every 10",
       {{"train.f1", 0.95}}},
      {"train-el type1",
       "train-el --el.node_source type1 --el.node_dim 16 --el.lr 0.01 --el.finetune_nodes true"
       " --el.epochs 300 --el.eval_every 10",
       {{"train.mrr", 0.95}}},
      {"train-el type2",
       "train-el --el.node_source type2 --el.lr 0.01 --el.finetune_nodes true"
       " --el.epochs 300 --el.eval_every 10",
       {{"train.mrr", 0.95}}},
      {"train-el gcn-live",
       "train-el --el.node_source gcn-live --gcn.hidden 16 --gcn.output 16 --el.lr 0.01"
       " --el.epochs 300 --el.eval_every 10",
       {{"train.mrr", 0.95}}},
      {"train-mtl",
       "train-mtl --el.node_source gcn-live --gcn.hidden 16 --gcn.output 16 --ner.hidden 16"
       " --ner.char_dim 8 --ner.char_hidden 4 --ner.lr 0.003 --mtl.el_weight 2"
       " --mtl.epochs 300 --mtl.eval_every 10",
       {{"train.f1", 0.95}, {"train.mrr", 0.95}}},
  };
  bool all_ok = true;
  std::ostringstream detail;
  for (const Run& run : runs) {
    const std::string out = g_work + "/c6_" + std::to_string(&run - runs.data());
    const auto start = Clock::now();
    const int code = run_cli(run.args + fixture_paths(out) + " --run.seed 1", out + ".log");
    const double elapsed = seconds_since(start);
    bool ok = code == 0 && elapsed < 120.0;
    const auto kv = read_kv(out + "/report.kv");
    for (const auto& [key, threshold] : run.thresholds) {
      const auto it = kv.find(key);
      ok = ok && it != kv.end() && it->second >= threshold;
      if (it != kv.end()) {
        detail << run.name << " " << key << "=" << it->second << " ";
      } else {
        detail << run.name << " " << key << "=missing ";
      }
    }
    detail << "(" << static_cast<int>(elapsed) << "s) ";
    all_ok = all_ok && ok;
  }
  report(6, all_ok, "end-to-end memorization", detail.str());
}

void criterion7() {
  const bool mrr_ok = mrr({1, 2, 4}) == 7.0 / 12.0;
  const bool pre_ok = precision_at_k({1, 31}, 30) == 0.5;
  const Prf prf = span_micro_prf({{"d", 0, 1}, {"d", 2, 3}}, {{"d", 2, 3}, {"d", 4, 5}});
  const bool prf_ok = prf.precision == 0.5 && prf.recall == 0.5 && prf.f1 == 0.5;
  report(7, mrr_ok && pre_ok && prf_ok, "metric formulas",
         "mrr([1,2,4])=7/12, pre@30([1,31])=0.5, prf=(0.5,0.5,0.5) all exact");
}

std::string file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void criterion8() {
  bool ok = true;
  std::ostringstream detail;
  const std::vector<std::pair<std::string, std::string>> runs = {
      {"train-ner", "train-ner --ner.hidden 8 --ner.char_dim 6 --ner.char_hidden 3"
                    " --ner.epochs 25 --ner.eval_every 5"},
      {"train-el", "train-el --el.node_source gcn-live --gcn.hidden 8 --gcn.output 8"
                   " --el.epochs 25 --el.eval_every 5"},
  };
  for (const auto& [name, args] : runs) {
    const std::string out1 = g_work + "/c8_" + name + "_1";
    const std::string out2 = g_work + "/c8_" + name + "_2";
    const std::string out3 = g_work + "/c8_" + name + "_3";
    ok = ok && run_cli(args + fixture_paths(out1) + " --run.seed 5", out1 + ".log") == 0;
    ok = ok && run_cli(args + fixture_paths(out2) + " --run.seed 5", out2 + ".log") == 0;
    // Third run re-reads the first run's manifest instead of flags.
    ok = ok && run_cli(name + " --config " + out1 + "/manifest.ini --paths.out " + out3,
                       out3 + ".log") == 0;
    const std::string ckpt1 = file_bytes(out1 + "/model.ckpt");
    const bool same_flags = ckpt1 == file_bytes(out2 + "/model.ckpt") &&
                            file_bytes(out1 + "/report.kv") == file_bytes(out2 + "/report.kv");
    const bool same_manifest = ckpt1 == file_bytes(out3 + "/model.ckpt") &&
                               file_bytes(out1 + "/report.kv") == file_bytes(out3 + "/report.kv");
    ok = ok && same_flags && same_manifest && !ckpt1.empty();
    detail << name << (same_flags ? " rerun=identical" : " rerun=DIFFERS")
           << (same_manifest ? " manifest=identical " : " manifest=DIFFERS ");
  }
  report(8, ok, "determinism", detail.str());
}

void criterion9() {
  const std::string train = env_or("TAXLINK_NCBI_TRAIN", "");
  const std::string dev = env_or("TAXLINK_NCBI_DEV", "");
  const std::string test = env_or("TAXLINK_NCBI_TEST", "");
  const std::string tax_path = env_or("TAXLINK_NCBI_TAXONOMY", "");
  const std::string emb = env_or("TAXLINK_NCBI_EMBEDDINGS", "");
  const std::string omim = env_or("TAXLINK_NCBI_OMIM", "");
  if (train.empty() || dev.empty() || test.empty()) {
    report_skip(9, "real-data smoke",
                "optional; set TAXLINK_NCBI_{TRAIN,DEV,TEST,TAXONOMY,EMBEDDINGS[,OMIM]} to run. "
                "Reference targets (not gated): tagger F1 0.867, linker MRR 0.757, joint F1 0.876");
    return;
  }
  bool ok = true;
  std::ostringstream detail;
  try {
    std::optional<OmimMapping> mapping;
    if (!omim.empty()) mapping = load_omim_mapping(omim);
    const struct {
      const char* path;
      const char* split;
      int abstracts;
      int mentions;
      int tokens;
    } expected[] = {
        {train.c_str(), "train", 592, 5134, 136088},
        {dev.c_str(), "validation", 100, 787, 23969},
        {test.c_str(), "test", 100, 960, 24497},
    };
    for (const auto& e : expected) {
      const Corpus corpus = load_corpus(e.path, e.split, mapping ? &*mapping : nullptr);
      int tokens = 0;
      for (const Abstract& abstract : corpus.abstracts) {
        for (const SentenceView& view : sentence_views(abstract)) {
          tokens += static_cast<int>(view.tokens.size());
        }
      }
      const bool counts_ok = static_cast<int>(corpus.abstracts.size()) == e.abstracts &&
                             corpus.mention_count() == e.mentions;
      const bool tokens_ok = std::abs(tokens - e.tokens) <= 0.02 * e.tokens;
      detail << e.split << ": " << corpus.abstracts.size() << " abstracts, "
             << corpus.mention_count() << " mentions, " << tokens << " tokens"
             << (counts_ok && tokens_ok ? " OK; " : " MISMATCH; ");
      ok = ok && counts_ok && tokens_ok;
    }
    if (!tax_path.empty() && !emb.empty()) {
      const std::string out = g_work + "/c9_el";
      const int code = run_cli(
          "train-el --paths.taxonomy " + tax_path + " --paths.train " + train +
              " --paths.validation " + dev + " --paths.embeddings " + emb +
              (omim.empty() ? "" : " --paths.omim_mapping " + omim) + " --paths.out " + out +
              " --el.node_source type2 --el.epochs 5 --el.eval_every 5",
          out + ".log");
      const auto kv = read_kv(out + "/report.kv");
      const bool schema_ok = code == 0 && kv.count("train.mrr") && kv.count("train.pre1") &&
                             kv.count("train.pre30");
      detail << "5-epoch train-el " << (schema_ok ? "completed with MRR/Pre@1/Pre@30 report" : "FAILED");
      ok = ok && schema_ok;
    }
  } catch (const std::exception& e) {
    ok = false;
    detail << "exception: " << e.what();
  }
  report(9, ok, "real-data smoke", detail.str());
}

}  // namespace

int main() {
  g_bin = env_or("TAXLINK_BIN", "");
  g_data = env_or("TAXLINK_DATA", "");
  if (g_bin.empty() || g_data.empty()) {
    std::cerr << "set TAXLINK_BIN and TAXLINK_DATA (see README)\n";
    return 1;
  }
  g_work = (fs::temp_directory_path() / "taxlink_acceptance").string();
  fs::remove_all(g_work);
  fs::create_directories(g_work);

  criterion1_and_2();
  criterion3();
  criterion4();
  criterion5();
  criterion6();
  criterion7();
  criterion8();
  criterion9();

  if (g_failures) {
    std::printf("%d criterion(s) failed\n", g_failures);
    return 1;
  }
  std::printf("all gated criteria passed\n");
  return 0;
}
