// taxlink: disease-mention tagging and taxonomy linking pipeline.
//
// Subcommands: validate, embed-graph, train-ner, train-el, train-mtl,
// evaluate, predict. All options can come from an INI config file
// (--config, or the TAXLINK_CONFIG environment variable); command-line
// flags override file values. Every run writes a manifest that can be fed
// back through --config to reproduce it bit-for-bit.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "taxlink/checkpoint.hpp"
#include "taxlink/corpus.hpp"
#include "taxlink/dataset.hpp"
#include "taxlink/encoders.hpp"
#include "taxlink/errors.hpp"
#include "taxlink/gcn.hpp"
#include "taxlink/linker.hpp"
#include "taxlink/metrics.hpp"
#include "taxlink/mtl.hpp"
#include "taxlink/ner.hpp"
#include "taxlink/node2vec.hpp"
#include "taxlink/numerics.hpp"
#include "taxlink/taxonomy.hpp"

namespace fs = std::filesystem;
using namespace taxlink;

namespace {

// CLI11 resolves "[section] key" against subcommands named like the section.
// Our sections are option-name prefixes instead ("--paths.taxonomy"), so
// re-join the parsed parents into the dotted option name.
struct SectionedIni : CLI::ConfigINI {
  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    auto items = CLI::ConfigINI::from_config(input);
    for (CLI::ConfigItem& item : items) {
      if (item.parents.empty()) continue;
      std::string joined;
      for (const std::string& parent : item.parents) joined += parent + ".";
      item.name = joined + item.name;
      item.parents.clear();
    }
    return items;
  }
};

struct RunConfig {
  // [paths]
  std::string taxonomy, train, validation, test;
  std::string embeddings, contextual, omim_mapping, node_embeddings, model;
  std::string out = "out";
  // [run]
  std::uint64_t seed = 1;
  std::string split = "test";
  int k = 30;
  // [ner]
  std::string ner_features = "static-char";
  bool ner_use_char = true;
  std::string ner_char_kind = "bilstm";
  int ner_char_dim = 60;
  int ner_char_hidden = 25;
  int ner_cnn_filters = 30;
  int ner_cnn_width = 3;
  int ner_hidden = 256;
  double ner_dropout = 0.5;
  double ner_lr = 1e-3;
  int ner_epochs = 100;
  int ner_eval_every = 1;
  int ner_patience = 0;
  // [el]
  std::string el_node_source = "type2";
  std::string el_mention_source = "static";
  int el_node_dim = 1024;
  int el_epochs = 500;
  double el_lr = 1e-3;
  int el_batch = 32;
  int el_eval_every = 1;
  int el_patience = 0;
  bool el_finetune_nodes = false;
  // [gcn]
  int gcn_hidden = 2048;
  int gcn_output = 1024;
  bool gcn_no_self_loops = false;
  // [node2vec]
  int n2v_walks = 10;
  int n2v_walk_length = 80;
  double n2v_p = 1.0;
  double n2v_q = 1.0;
  int n2v_window = 10;
  int n2v_negatives = 5;
  int n2v_epochs = 100;
  double n2v_lr = 0.025;
  // [mtl]
  double mtl_el_weight = 1.0;
  std::string mtl_loss_mix = "sum";
  std::string mtl_el_features = "shared";
  int mtl_epochs = 300;
  int mtl_eval_every = 1;
  int mtl_patience = 0;
};

void add_options(CLI::App& app, RunConfig& cfg) {
  app.add_option("--paths.taxonomy", cfg.taxonomy, "taxonomy record file (JSON lines)");
  app.add_option("--paths.train", cfg.train, "training corpus (PubTator-style)");
  app.add_option("--paths.validation", cfg.validation, "validation corpus");
  app.add_option("--paths.test", cfg.test, "test corpus");
  app.add_option("--paths.embeddings", cfg.embeddings, "static word embedding table");
  app.add_option("--paths.contextual", cfg.contextual, "contextual token encodings");
  app.add_option("--paths.omim_mapping", cfg.omim_mapping, "OMIM-to-taxonomy id map (TSV)");
  app.add_option("--paths.node_embeddings", cfg.node_embeddings,
                 "node embedding file for --el.node_source file");
  app.add_option("--paths.model", cfg.model, "checkpoint for evaluate/predict");
  app.add_option("--paths.out", cfg.out, "output directory");

  app.add_option("--run.seed", cfg.seed, "master seed");
  app.add_option("--run.split", cfg.split, "split for evaluate/predict")
      ->check(CLI::IsMember({"train", "validation", "test"}));
  app.add_option("--run.k", cfg.k, "k for precision-at-k reports");

  app.add_option("--ner.features", cfg.ner_features, "token features")
      ->check(CLI::IsMember({"static-char", "contextual"}));
  app.add_option("--ner.use_char", cfg.ner_use_char, "concatenate a character encoder");
  app.add_option("--ner.char_kind", cfg.ner_char_kind, "character encoder kind")
      ->check(CLI::IsMember({"bilstm", "cnn"}));
  app.add_option("--ner.char_dim", cfg.ner_char_dim, "character embedding dim");
  app.add_option("--ner.char_hidden", cfg.ner_char_hidden, "character LSTM hidden size");
  app.add_option("--ner.cnn_filters", cfg.ner_cnn_filters, "character CNN filter count");
  app.add_option("--ner.cnn_width", cfg.ner_cnn_width, "character CNN window width");
  app.add_option("--ner.hidden", cfg.ner_hidden, "biLSTM hidden size per direction");
  app.add_option("--ner.dropout", cfg.ner_dropout, "dropout on biLSTM inputs/outputs");
  app.add_option("--ner.lr", cfg.ner_lr, "learning rate");
  app.add_option("--ner.epochs", cfg.ner_epochs, "training epochs");
  app.add_option("--ner.eval_every", cfg.ner_eval_every, "validation cadence (epochs)");
  app.add_option("--ner.patience", cfg.ner_patience, "early-stop patience (0 = off)");

  app.add_option("--el.node_source", cfg.el_node_source,
                 "type1: node2vec from random init; type2: node2vec from scope-note init; "
                 "gcn-live: GCN trained on the linking objective; file: load embeddings")
      ->check(CLI::IsMember({"type1", "type2", "gcn-live", "file"}));
  app.add_option("--el.mention_source", cfg.el_mention_source, "mention encoder")
      ->check(CLI::IsMember({"static", "contextual"}));
  app.add_option("--el.node_dim", cfg.el_node_dim, "node embedding dim for type1");
  app.add_option("--el.epochs", cfg.el_epochs, "linker training epochs");
  app.add_option("--el.lr", cfg.el_lr, "linker learning rate");
  app.add_option("--el.batch", cfg.el_batch, "mention batch size");
  app.add_option("--el.eval_every", cfg.el_eval_every, "validation cadence (epochs)");
  app.add_option("--el.patience", cfg.el_patience, "early-stop patience (0 = off)");
  app.add_option("--el.finetune_nodes", cfg.el_finetune_nodes,
                 "update type1/type2/file node embeddings during linker training");

  app.add_option("--gcn.hidden", cfg.gcn_hidden, "GCN hidden units");
  app.add_option("--gcn.output", cfg.gcn_output, "GCN output units");
  app.add_option("--gcn.no_self_loops", cfg.gcn_no_self_loops,
                 "exclude each node from its own neighborhood sum");

  app.add_option("--n2v.walks", cfg.n2v_walks, "walks per node");
  app.add_option("--n2v.walk_length", cfg.n2v_walk_length, "walk length");
  app.add_option("--n2v.p", cfg.n2v_p, "return parameter p");
  app.add_option("--n2v.q", cfg.n2v_q, "in-out parameter q");
  app.add_option("--n2v.window", cfg.n2v_window, "skip-gram window");
  app.add_option("--n2v.negatives", cfg.n2v_negatives, "negatives per positive");
  app.add_option("--n2v.epochs", cfg.n2v_epochs, "skip-gram epochs");
  app.add_option("--n2v.lr", cfg.n2v_lr, "skip-gram start learning rate");

  app.add_option("--mtl.el_weight", cfg.mtl_el_weight, "linking loss weight");
  app.add_option("--mtl.loss_mix", cfg.mtl_loss_mix, "joint loss combination")
      ->check(CLI::IsMember({"sum", "alternate"}));
  app.add_option("--mtl.el_features", cfg.mtl_el_features, "linker mention features")
      ->check(CLI::IsMember({"shared", "contextual"}));
  app.add_option("--mtl.epochs", cfg.mtl_epochs, "joint training epochs");
  app.add_option("--mtl.eval_every", cfg.mtl_eval_every, "validation cadence (epochs)");
  app.add_option("--mtl.patience", cfg.mtl_patience, "early-stop patience (0 = off)");
}

// ---------------------------------------------------------------------------
// Manifest: a reloadable config snapshot plus the run's results.

std::string fmt_double(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string manifest_text(const RunConfig& c, const std::string& task,
                          const std::vector<std::pair<std::string, std::string>>& results) {
  std::ostringstream out;
  out << "# taxlink run manifest (task: " << task << ")\n";
  out << "# reload with: taxlink " << task << " --config <this file>\n";
  out << "[paths]\n";
  auto put = [&](const char* key, const std::string& value) {
    if (!value.empty()) out << key << " = " << value << "\n";
  };
  put("taxonomy", c.taxonomy);
  put("train", c.train);
  put("validation", c.validation);
  put("test", c.test);
  put("embeddings", c.embeddings);
  put("contextual", c.contextual);
  put("omim_mapping", c.omim_mapping);
  put("node_embeddings", c.node_embeddings);
  put("model", c.model);
  put("out", c.out);
  out << "[run]\n";
  out << "seed = " << c.seed << "\n";
  out << "split = " << c.split << "\n";
  out << "k = " << c.k << "\n";
  out << "[ner]\n";
  out << "features = " << c.ner_features << "\n";
  out << "use_char = " << (c.ner_use_char ? "true" : "false") << "\n";
  out << "char_kind = " << c.ner_char_kind << "\n";
  out << "char_dim = " << c.ner_char_dim << "\n";
  out << "char_hidden = " << c.ner_char_hidden << "\n";
  out << "cnn_filters = " << c.ner_cnn_filters << "\n";
  out << "cnn_width = " << c.ner_cnn_width << "\n";
  out << "hidden = " << c.ner_hidden << "\n";
  out << "dropout = " << fmt_double(c.ner_dropout) << "\n";
  out << "lr = " << fmt_double(c.ner_lr) << "\n";
  out << "epochs = " << c.ner_epochs << "\n";
  out << "eval_every = " << c.ner_eval_every << "\n";
  out << "patience = " << c.ner_patience << "\n";
  out << "[el]\n";
  out << "node_source = " << c.el_node_source << "\n";
  out << "mention_source = " << c.el_mention_source << "\n";
  out << "node_dim = " << c.el_node_dim << "\n";
  out << "epochs = " << c.el_epochs << "\n";
  out << "lr = " << fmt_double(c.el_lr) << "\n";
  out << "batch = " << c.el_batch << "\n";
  out << "eval_every = " << c.el_eval_every << "\n";
  out << "patience = " << c.el_patience << "\n";
  out << "finetune_nodes = " << (c.el_finetune_nodes ? "true" : "false") << "\n";
  out << "[gcn]\n";
  out << "hidden = " << c.gcn_hidden << "\n";
  out << "output = " << c.gcn_output << "\n";
  out << "no_self_loops = " << (c.gcn_no_self_loops ? "true" : "false") << "\n";
  out << "[n2v]\n";
  out << "walks = " << c.n2v_walks << "\n";
  out << "walk_length = " << c.n2v_walk_length << "\n";
  out << "p = " << fmt_double(c.n2v_p) << "\n";
  out << "q = " << fmt_double(c.n2v_q) << "\n";
  out << "window = " << c.n2v_window << "\n";
  out << "negatives = " << c.n2v_negatives << "\n";
  out << "epochs = " << c.n2v_epochs << "\n";
  out << "lr = " << fmt_double(c.n2v_lr) << "\n";
  out << "[mtl]\n";
  out << "el_weight = " << fmt_double(c.mtl_el_weight) << "\n";
  out << "loss_mix = " << c.mtl_loss_mix << "\n";
  out << "el_features = " << c.mtl_el_features << "\n";
  out << "epochs = " << c.mtl_epochs << "\n";
  out << "eval_every = " << c.mtl_eval_every << "\n";
  out << "patience = " << c.mtl_patience << "\n";
  if (!results.empty()) {
    out << "[results]\n";
    for (const auto& [key, value] : results) out << key << " = " << value << "\n";
  }
  return out.str();
}

void write_text(const fs::path& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << content;
}

void finish_run(const RunConfig& cfg, const std::string& task, const EvalReport* report) {
  fs::create_directories(cfg.out);
  std::vector<std::pair<std::string, std::string>> results;
  if (report) {
    for (const auto& [name, stat] : report->metrics) {
      results.emplace_back(name, fmt_double(stat.mean));
    }
    write_text(fs::path(cfg.out) / "report.txt", format_report_table(*report));
    write_text(fs::path(cfg.out) / "report.kv", format_report_kv(*report));
    std::cout << format_report_table(*report);
  }
  write_text(fs::path(cfg.out) / "manifest.ini", manifest_text(cfg, task, results));
}

// ---------------------------------------------------------------------------
// Data wiring

std::string require_path(const std::string& value, const std::string& what) {
  if (value.empty()) throw ConfigError("missing required path: " + what);
  if (!fs::exists(value)) throw ConfigError(what + " does not exist: " + value);
  return value;
}

Taxonomy load_taxonomy_required(const RunConfig& cfg) {
  return Taxonomy::load(require_path(cfg.taxonomy, "--paths.taxonomy"));
}

std::optional<OmimMapping> load_mapping(const RunConfig& cfg) {
  if (cfg.omim_mapping.empty()) return std::nullopt;
  return load_omim_mapping(require_path(cfg.omim_mapping, "--paths.omim_mapping"));
}

Corpus load_split(const RunConfig& cfg, const std::string& split, const Taxonomy* tax,
                  bool required) {
  const std::string* path = nullptr;
  if (split == "train") path = &cfg.train;
  else if (split == "validation") path = &cfg.validation;
  else path = &cfg.test;
  if (path->empty()) {
    if (required) throw ConfigError("missing required corpus path: --paths." + split);
    return Corpus{.split = split};
  }
  const auto mapping = load_mapping(cfg);
  return load_corpus(require_path(*path, "--paths." + split), split,
                     mapping ? &*mapping : nullptr, tax);
}

FeatureMode parse_features(const std::string& raw) {
  return raw == "contextual" ? FeatureMode::contextual : FeatureMode::static_char;
}

NodeSource parse_node_source(const std::string& raw) {
  if (raw == "type1") return NodeSource::type1;
  if (raw == "type2") return NodeSource::type2;
  if (raw == "gcn-live") return NodeSource::gcn_live;
  return NodeSource::file;
}

std::string node_source_name(NodeSource source) {
  switch (source) {
    case NodeSource::type1: return "type1";
    case NodeSource::type2: return "type2";
    case NodeSource::gcn_live: return "gcn-live";
    default: return "file";
  }
}

NerConfig make_ner_config(const RunConfig& cfg, int epochs) {
  NerConfig out;
  out.features = parse_features(cfg.ner_features);
  out.use_char = cfg.ner_use_char;
  out.char_cfg.kind =
      cfg.ner_char_kind == "cnn" ? CharEncoderKind::cnn : CharEncoderKind::bilstm;
  out.char_cfg.char_dim = cfg.ner_char_dim;
  out.char_cfg.char_hidden = cfg.ner_char_hidden;
  out.char_cfg.cnn_filters = cfg.ner_cnn_filters;
  out.char_cfg.cnn_width = cfg.ner_cnn_width;
  out.hidden = cfg.ner_hidden;
  out.dropout = cfg.ner_dropout;
  out.lr = cfg.ner_lr;
  out.epochs = epochs;
  out.eval_every = cfg.ner_eval_every;
  out.patience = cfg.ner_patience;
  out.seed = cfg.seed;
  return out;
}

struct Features {
  std::optional<EmbeddingTable> table;
  std::optional<ContextualStore> contextual;

  FeatureConfig config(FeatureMode mode) const {
    FeatureConfig fc;
    fc.mode = mode;
    fc.table = table ? &*table : nullptr;
    fc.contextual = contextual ? &*contextual : nullptr;
    return fc;
  }
};

Features load_features(const RunConfig& cfg, bool need_table, bool need_contextual) {
  Features f;
  if (need_table || !cfg.embeddings.empty()) {
    f.table = EmbeddingTable::load(require_path(cfg.embeddings, "--paths.embeddings"));
  }
  if (need_contextual || !cfg.contextual.empty()) {
    f.contextual = ContextualStore::load(require_path(cfg.contextual, "--paths.contextual"));
  }
  return f;
}

// ---------------------------------------------------------------------------
// Node representations for the linking head

NodeEmbeddings run_node2vec(const Taxonomy& tax, NodeKind kind, const RunConfig& cfg,
                            const EmbeddingTable* table) {
  WalkConfig wc;
  wc.walks_per_node = cfg.n2v_walks;
  wc.walk_length = cfg.n2v_walk_length;
  wc.return_param_p = cfg.n2v_p;
  wc.inout_param_q = cfg.n2v_q;
  wc.window = cfg.n2v_window;
  wc.negatives_per_positive = cfg.n2v_negatives;
  wc.epochs = cfg.n2v_epochs;
  wc.lr = cfg.n2v_lr;
  wc.seed = cfg.seed;
  const int dim = kind == NodeKind::type2 ? table->dim() : cfg.el_node_dim;
  Rng init_rng = Rng(cfg.seed).derive(0x6e6f6465696e6974ULL);
  NodeEmbeddings init = init_node_embeddings(tax, kind, dim, init_rng, table);
  return train_skipgram(generate_walks(tax, wc), std::move(init), wc);
}

Matrix node_matrix_from_file(const Taxonomy& tax, const std::string& path) {
  const EmbeddingTable table = EmbeddingTable::load(path);
  Matrix nodes(tax.size(), table.dim());
  for (int i = 0; i < tax.size(); ++i) {
    const std::string& id = tax.node(i).unique_id;
    if (!table.contains(id)) {
      throw ConfigError("node embedding file lacks a row for concept " + id);
    }
    nodes.row(i) = table.lookup(id);
  }
  return nodes;
}

void export_node_embeddings(const Taxonomy& tax, const Matrix& nodes, const fs::path& path) {
  std::vector<std::string> ids;
  ids.reserve(tax.size());
  for (int i = 0; i < tax.size(); ++i) ids.push_back(tax.node(i).unique_id);
  EmbeddingTable::from_rows(std::move(ids), nodes).save(path.string());
}

// Builds base_nodes (and GCN parameters for gcn-live) per the node source.
LinkerModel make_linker_model(const RunConfig& cfg, const Taxonomy& tax,
                              const EmbeddingTable* table, int mention_dim) {
  LinkerModel model;
  model.source = parse_node_source(cfg.el_node_source);
  model.self_loops = !cfg.gcn_no_self_loops;
  switch (model.source) {
    case NodeSource::type1:
      model.base_nodes = run_node2vec(tax, NodeKind::type1, cfg, nullptr).matrix;
      break;
    case NodeSource::type2:
      if (!table) throw ConfigError("type2 node source needs --paths.embeddings");
      model.base_nodes = run_node2vec(tax, NodeKind::type2, cfg, table).matrix;
      break;
    case NodeSource::gcn_live: {
      if (!table) throw ConfigError("gcn-live node source needs --paths.embeddings");
      model.base_nodes = scope_note_matrix(tax, *table);
      Rng gcn_rng = Rng(cfg.seed).derive(0x67636e696e6974ULL);
      model.gcn = init_gcn({table->dim(), cfg.gcn_hidden, cfg.gcn_output}, gcn_rng);
      break;
    }
    case NodeSource::file:
      model.base_nodes = node_matrix_from_file(
          tax, require_path(cfg.node_embeddings, "--paths.node_embeddings"));
      break;
  }
  model.bilinear_w = identity_padded(mention_dim, model.node_dim());
  return model;
}

// ---------------------------------------------------------------------------
// Checkpoints

Checkpoint ner_to_checkpoint(const NerModel& model, const RunConfig& cfg,
                             const std::string& charset, int base_dim) {
  Checkpoint ckpt;
  ckpt.task = "ner";
  ckpt.config = {
      {"features", cfg.ner_features},
      {"use_char", model.chars ? "1" : "0"},
      {"char_kind", cfg.ner_char_kind},
      {"char_dim", std::to_string(cfg.ner_char_dim)},
      {"char_hidden", std::to_string(cfg.ner_char_hidden)},
      {"cnn_filters", std::to_string(cfg.ner_cnn_filters)},
      {"cnn_width", std::to_string(cfg.ner_cnn_width)},
      {"hidden", std::to_string(cfg.ner_hidden)},
      {"dropout", fmt_double(model.dropout)},
      {"base_dim", std::to_string(base_dim)},
      {"charset", charset},
  };
  const_cast<NerModel&>(model).visit(
      [&](const std::string& name, Eigen::Ref<Matrix> tensor) { ckpt.add(name, tensor); });
  return ckpt;
}

NerModel ner_from_checkpoint(const Checkpoint& ckpt) {
  NerConfig cfg;
  cfg.features = parse_features(ckpt.config_value("features"));
  cfg.use_char = ckpt.config_value("use_char") == "1";
  cfg.char_cfg.kind = ckpt.config_value("char_kind") == "cnn" ? CharEncoderKind::cnn
                                                              : CharEncoderKind::bilstm;
  cfg.char_cfg.char_dim = std::stoi(ckpt.config_value("char_dim"));
  cfg.char_cfg.char_hidden = std::stoi(ckpt.config_value("char_hidden"));
  cfg.char_cfg.cnn_filters = std::stoi(ckpt.config_value("cnn_filters"));
  cfg.char_cfg.cnn_width = std::stoi(ckpt.config_value("cnn_width"));
  cfg.hidden = std::stoi(ckpt.config_value("hidden"));
  cfg.dropout = std::stod(ckpt.config_value("dropout"));
  const int base_dim = std::stoi(ckpt.config_value("base_dim"));
  Rng rng(0);
  NerModel model = init_ner_model(cfg, base_dim, ckpt.config_value("charset"), rng);
  model.visit([&](const std::string& name, Eigen::Ref<Matrix> tensor) {
    const Matrix& stored = ckpt.tensor(name);
    if (stored.rows() != tensor.rows() || stored.cols() != tensor.cols()) {
      throw IntegrityError("checkpoint tensor " + name + " has unexpected shape");
    }
    tensor = stored;
  });
  return model;
}

void add_linker_tensors(Checkpoint& ckpt, const LinkerModel& model) {
  ckpt.add("el.bilinear_w", model.bilinear_w);
  ckpt.add("el.base_nodes", model.base_nodes);
  if (model.gcn) {
    for (std::size_t l = 0; l < model.gcn->layers.size(); ++l) {
      ckpt.add("el.gcn.layer" + std::to_string(l) + ".weight", model.gcn->layers[l].weight);
      ckpt.add("el.gcn.layer" + std::to_string(l) + ".bias", model.gcn->layers[l].bias);
    }
  }
}

std::vector<std::pair<std::string, std::string>> linker_config(const LinkerModel& model,
                                                               const RunConfig& cfg) {
  return {
      {"node_source", node_source_name(model.source)},
      {"mention_source", cfg.el_mention_source},
      {"self_loops", model.self_loops ? "1" : "0"},
  };
}

LinkerModel linker_from_checkpoint(const Checkpoint& ckpt) {
  LinkerModel model;
  model.source = parse_node_source(ckpt.config_value("node_source"));
  model.self_loops = ckpt.config_value("self_loops") == "1";
  model.bilinear_w = ckpt.tensor("el.bilinear_w");
  model.base_nodes = ckpt.tensor("el.base_nodes");
  if (ckpt.has("el.gcn.layer0.weight")) {
    GcnParams gcn;
    for (int l = 0; ckpt.has("el.gcn.layer" + std::to_string(l) + ".weight"); ++l) {
      GcnLayer layer;
      layer.weight = ckpt.tensor("el.gcn.layer" + std::to_string(l) + ".weight");
      layer.bias = ckpt.tensor("el.gcn.layer" + std::to_string(l) + ".bias").col(0);
      gcn.layers.push_back(std::move(layer));
    }
    model.gcn = std::move(gcn);
  }
  return model;
}

// ---------------------------------------------------------------------------
// Evaluation plumbing shared by train/evaluate/predict

struct ElEvalOutcome {
  std::vector<int> ranks;
  std::vector<std::pair<int, int>> gold_pred;  // (gold, top1) node indices
  std::string dump;                            // prediction lines
};

ElEvalOutcome evaluate_el_examples(const Matrix& nodes, const Matrix& bilinear_w,
                                   const std::vector<ElExample>& examples, const Taxonomy& tax) {
  ElEvalOutcome out;
  std::ostringstream dump;
  char buf[32];
  for (const ElExample& ex : examples) {
    const LinkPrediction pred = rank_for_mention(ex.enc, nodes, bilinear_w, 1, ex.gold_node);
    out.ranks.push_back(pred.rank_of_gold);
    out.gold_pred.emplace_back(ex.gold_node, pred.ranked[0].first);
    std::snprintf(buf, sizeof(buf), "%.6g", pred.ranked[0].second);
    dump << ex.doc_id << '\t' << ex.char_span.begin << '\t' << ex.char_span.end << '\t'
         << ex.gold_id << '\t' << pred.rank_of_gold << '\t'
         << tax.node(pred.ranked[0].first).unique_id << '\t' << buf << '\n';
  }
  out.dump = dump.str();
  return out;
}

void append_el_metrics(std::vector<std::pair<std::string, std::vector<double>>>& rows,
                       const std::string& prefix, const ElEvalOutcome& outcome,
                       const Taxonomy& tax, int k, bool with_confusion) {
  if (outcome.ranks.empty()) return;
  rows.push_back({prefix + "mrr", {mrr(outcome.ranks)}});
  rows.push_back({prefix + "pre1", {precision_at_k(outcome.ranks, 1)}});
  rows.push_back({prefix + "pre" + std::to_string(k), {precision_at_k(outcome.ranks, k)}});
  if (with_confusion) {
    const ConfusionReport conf = confusion_report(outcome.gold_pred, tax);
    rows.push_back({prefix + "confusion.parent", {static_cast<double>(conf.parent)}});
    rows.push_back({prefix + "confusion.child", {static_cast<double>(conf.child)}});
    rows.push_back({prefix + "confusion.sibling", {static_cast<double>(conf.sibling)}});
    rows.push_back({prefix + "confusion.ancestry", {static_cast<double>(conf.ancestry)}});
    rows.push_back({prefix + "confusion.unrelated", {static_cast<double>(conf.unrelated)}});
    rows.push_back({prefix + "confusion.correct", {static_cast<double>(conf.correct)}});
  }
}

Prf evaluate_ner_prf(const NerModel& model, const std::vector<TaggedDocument>& docs) {
  std::vector<SpanRecord> gold, pred;
  for (const TaggedDocument& doc : docs) {
    for (const Mention& m : doc.gold_mentions) gold.push_back({doc.doc_id, m.start, m.end});
    for (const Mention& m : predict_spans(model, doc)) pred.push_back({doc.doc_id, m.start, m.end});
  }
  return span_micro_prf(gold, pred);
}

std::string ner_prediction_dump(const NerModel& model, const std::vector<TaggedDocument>& docs) {
  std::ostringstream out;
  for (const TaggedDocument& doc : docs) {
    for (const Mention& m : predict_spans(model, doc)) {
      out << doc.doc_id << '\t' << m.start << '\t' << m.end << '\t' << m.surface
          << "\tDisease\t" << kUnresolvedConceptId << '\n';
    }
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Subcommands

int cmd_validate(const RunConfig& cfg) {
  std::optional<Taxonomy> tax;
  if (!cfg.taxonomy.empty()) {
    tax = Taxonomy::load(require_path(cfg.taxonomy, "--paths.taxonomy"));
    std::cout << "taxonomy: " << tax->size() << " nodes, " << tax->edge_count() << " edges\n";
  }
  const Features features = load_features(cfg, false, false);
  if (features.table) {
    std::cout << "embeddings: " << features.table->vocab_size() << " tokens, dim "
              << features.table->dim() << "\n";
  }
  if (features.contextual) {
    std::cout << "contextual: " << features.contextual->size() << " sentence blocks, dim "
              << features.contextual->dim() << "\n";
  }
  for (const std::string split : {"train", "validation", "test"}) {
    const Corpus corpus = load_split(cfg, split, tax ? &*tax : nullptr, false);
    if (corpus.abstracts.empty() && corpus.stats.total() == 0) continue;
    int sentences = 0, tokens = 0, resolved = 0;
    for (const Abstract& abstract : corpus.abstracts) {
      for (const SentenceView& view : sentence_views(abstract)) {
        ++sentences;
        tokens += static_cast<int>(view.tokens.size());
      }
      for (const Mention& m : abstract.mentions) resolved += m.resolved() ? 1 : 0;
    }
    std::cout << split << ": " << corpus.abstracts.size() << " abstracts, "
              << corpus.mention_count() << " mentions (" << resolved << " resolved), "
              << sentences << " sentences, " << tokens << " tokens, " << corpus.stats.total()
              << " warnings\n";
  }
  finish_run(cfg, "validate", nullptr);
  return 0;
}

int cmd_embed_graph(const RunConfig& cfg) {
  const Taxonomy tax = load_taxonomy_required(cfg);
  const NodeSource source = parse_node_source(cfg.el_node_source);
  if (source != NodeSource::type1 && source != NodeSource::type2) {
    throw ConfigError("embed-graph supports --el.node_source type1 or type2");
  }
  NodeEmbeddings emb;
  if (source == NodeSource::type1) {
    emb = run_node2vec(tax, NodeKind::type1, cfg, nullptr);
  } else {
    const Features features = load_features(cfg, true, false);
    emb = run_node2vec(tax, NodeKind::type2, cfg, &*features.table);
  }
  fs::create_directories(cfg.out);
  export_node_embeddings(tax, emb.matrix, fs::path(cfg.out) / "node_embeddings.txt");
  std::cout << "wrote " << (fs::path(cfg.out) / "node_embeddings.txt").string() << " ("
            << emb.matrix.rows() << " x " << emb.matrix.cols() << ")\n";
  finish_run(cfg, "embed-graph", nullptr);
  return 0;
}

int cmd_train_ner(const RunConfig& cfg) {
  const NerConfig ner_cfg = make_ner_config(cfg, cfg.ner_epochs);
  const bool contextual = ner_cfg.features == FeatureMode::contextual;
  const Features features = load_features(cfg, !contextual, contextual);
  std::optional<Taxonomy> tax;
  if (!cfg.taxonomy.empty()) tax = load_taxonomy_required(cfg);

  const Corpus train = load_split(cfg, "train", tax ? &*tax : nullptr, true);
  const Corpus val = load_split(cfg, "validation", tax ? &*tax : nullptr, false);
  const FeatureConfig fc = features.config(ner_cfg.features);
  const auto train_docs = make_dataset(train, fc, tax ? &*tax : nullptr);
  const auto val_docs = make_dataset(val, fc, tax ? &*tax : nullptr);
  if (train_docs.empty()) throw TrainingError("train-ner: empty training corpus");

  const std::string charset = collect_charset(train_docs);
  NerHistory history;
  const NerModel model = train_ner(train_docs, val_docs, ner_cfg, charset, &history);

  const Prf train_prf = evaluate_ner_prf(model, train_docs);
  std::vector<std::pair<std::string, std::vector<double>>> rows{
      {"train.precision", {train_prf.precision}},
      {"train.recall", {train_prf.recall}},
      {"train.f1", {train_prf.f1}},
  };
  if (!val_docs.empty()) {
    const Prf val_prf = evaluate_ner_prf(model, val_docs);
    rows.push_back({"val.precision", {val_prf.precision}});
    rows.push_back({"val.recall", {val_prf.recall}});
    rows.push_back({"val.f1", {val_prf.f1}});
    rows.push_back({"best_epoch", {static_cast<double>(history.best_epoch)}});
  }
  const EvalReport report = aggregate_runs("ner", rows);

  fs::create_directories(cfg.out);
  const int base_dim = static_cast<int>(train_docs[0].sentences[0].base_features.cols());
  ner_to_checkpoint(model, cfg, charset, base_dim).save((fs::path(cfg.out) / "model.ckpt").string());
  finish_run(cfg, "train-ner", &report);
  return 0;
}

int cmd_train_el(const RunConfig& cfg) {
  const Taxonomy tax = load_taxonomy_required(cfg);
  const bool mention_contextual = cfg.el_mention_source == "contextual";
  const NodeSource source = parse_node_source(cfg.el_node_source);
  const bool need_table = !mention_contextual || source == NodeSource::type2 ||
                          source == NodeSource::gcn_live;
  const Features features = load_features(cfg, need_table, mention_contextual);

  const Corpus train = load_split(cfg, "train", &tax, true);
  const Corpus val = load_split(cfg, "validation", &tax, false);
  const FeatureConfig fc = features.config(FeatureMode::static_char);
  const auto train_docs = make_dataset(train, fc, &tax);
  const auto val_docs = make_dataset(val, fc, &tax);

  const MentionSource mention_source =
      mention_contextual ? MentionSource::contextual : MentionSource::static_pool;
  const EmbeddingTable* table = features.table ? &*features.table : nullptr;
  const ContextualStore* ctx = features.contextual ? &*features.contextual : nullptr;
  const auto train_examples = make_el_examples(train_docs, mention_source, table, ctx);
  const auto val_examples = make_el_examples(val_docs, mention_source, table, ctx);
  if (train_examples.empty()) throw TrainingError("train-el: no resolved training mentions");
  const int mention_dim = static_cast<int>(train_examples[0].enc.size());

  LinkerModel model = make_linker_model(cfg, tax, table, mention_dim);
  const Matrix adjacency =
      model.self_loops ? tax.adjacency_with_self_loops() : tax.adjacency_without_self_loops();

  LinkerTrainConfig train_cfg;
  train_cfg.epochs = cfg.el_epochs;
  train_cfg.lr = cfg.el_lr;
  train_cfg.batch_size = cfg.el_batch;
  train_cfg.finetune_nodes = cfg.el_finetune_nodes;
  train_cfg.eval_every = cfg.el_eval_every;
  train_cfg.patience = cfg.el_patience;
  train_cfg.seed = cfg.seed;
  LinkerHistory history;
  model = train_linker(train_examples, val_examples, std::move(model),
                       model.source == NodeSource::gcn_live ? &adjacency : nullptr, train_cfg,
                       &history);

  const Matrix nodes =
      model.node_matrix(model.source == NodeSource::gcn_live ? &adjacency : nullptr);
  const ElEvalOutcome train_eval =
      evaluate_el_examples(nodes, model.bilinear_w, train_examples, tax);
  std::vector<std::pair<std::string, std::vector<double>>> rows;
  append_el_metrics(rows, "train.", train_eval, tax, cfg.k, false);
  if (!val_examples.empty()) {
    const ElEvalOutcome val_eval =
        evaluate_el_examples(nodes, model.bilinear_w, val_examples, tax);
    append_el_metrics(rows, "val.", val_eval, tax, cfg.k, false);
    rows.push_back({"best_epoch", {static_cast<double>(history.best_epoch)}});
  }
  const EvalReport report = aggregate_runs("el", rows);

  fs::create_directories(cfg.out);
  Checkpoint ckpt;
  ckpt.task = "el";
  ckpt.config = linker_config(model, cfg);
  add_linker_tensors(ckpt, model);
  ckpt.save((fs::path(cfg.out) / "model.ckpt").string());
  export_node_embeddings(tax, nodes, fs::path(cfg.out) / "node_embeddings.txt");
  finish_run(cfg, "train-el", &report);
  return 0;
}

int cmd_train_mtl(const RunConfig& cfg) {
  const Taxonomy tax = load_taxonomy_required(cfg);
  const bool ner_contextual = cfg.ner_features == "contextual";
  const bool el_contextual = cfg.mtl_el_features == "contextual";
  const NodeSource source = parse_node_source(cfg.el_node_source);
  const bool need_table = !ner_contextual || source == NodeSource::type2 ||
                          source == NodeSource::gcn_live;
  const Features features = load_features(cfg, need_table, ner_contextual || el_contextual);
  const EmbeddingTable* table = features.table ? &*features.table : nullptr;
  const ContextualStore* ctx = features.contextual ? &*features.contextual : nullptr;

  const Corpus train = load_split(cfg, "train", &tax, true);
  const Corpus val = load_split(cfg, "validation", &tax, false);
  const FeatureConfig fc = features.config(parse_features(cfg.ner_features));
  const auto train_docs = make_dataset(train, fc, &tax);
  const auto val_docs = make_dataset(val, fc, &tax);
  if (train_docs.empty()) throw TrainingError("train-mtl: empty training corpus");

  MtlConfig mtl_cfg;
  mtl_cfg.ner = make_ner_config(cfg, cfg.mtl_epochs);
  mtl_cfg.el_weight = cfg.mtl_el_weight;
  mtl_cfg.loss_mix = cfg.mtl_loss_mix == "alternate" ? LossMix::alternate : LossMix::sum;
  mtl_cfg.el_features =
      el_contextual ? MtlElFeatures::contextual : MtlElFeatures::shared;
  mtl_cfg.epochs = cfg.mtl_epochs;
  mtl_cfg.eval_every = cfg.mtl_eval_every;
  mtl_cfg.patience = cfg.mtl_patience;
  mtl_cfg.pre_at_k = cfg.k;
  mtl_cfg.seed = cfg.seed;

  MtlNodeSetup setup;
  setup.source = source;
  setup.self_loops = !cfg.gcn_no_self_loops;
  setup.finetune_nodes = cfg.el_finetune_nodes;
  switch (source) {
    case NodeSource::type1:
      setup.base_nodes = run_node2vec(tax, NodeKind::type1, cfg, nullptr).matrix;
      break;
    case NodeSource::type2:
      setup.base_nodes = run_node2vec(tax, NodeKind::type2, cfg, table).matrix;
      break;
    case NodeSource::gcn_live:
      setup.base_nodes = scope_note_matrix(tax, *table);
      setup.gcn_hidden_dims = {cfg.gcn_hidden, cfg.gcn_output};
      break;
    case NodeSource::file:
      setup.base_nodes = node_matrix_from_file(
          tax, require_path(cfg.node_embeddings, "--paths.node_embeddings"));
      break;
  }

  const std::string charset = collect_charset(train_docs);
  MtlHistory history;
  const MtlModel model =
      mtl_train(train_docs, val_docs, tax, setup, mtl_cfg, charset, ctx, &history);

  const JointReport train_report = mtl_evaluate(model, train_docs, tax, cfg.k, ctx);
  std::vector<std::pair<std::string, std::vector<double>>> rows{
      {"train.precision", {train_report.ner.precision}},
      {"train.recall", {train_report.ner.recall}},
      {"train.f1", {train_report.ner.f1}},
      {"train.mrr", {train_report.el_mrr}},
      {"train.pre" + std::to_string(cfg.k), {train_report.el_pre_k}},
  };
  if (!val_docs.empty()) {
    const JointReport val_report = mtl_evaluate(model, val_docs, tax, cfg.k, ctx);
    rows.push_back({"val.f1", {val_report.ner.f1}});
    rows.push_back({"val.mrr", {val_report.el_mrr}});
    rows.push_back({"best_epoch", {static_cast<double>(history.best_epoch)}});
  }
  const EvalReport report = aggregate_runs("mtl", rows);

  fs::create_directories(cfg.out);
  Checkpoint ckpt;
  ckpt.task = "mtl";
  const int base_dim = static_cast<int>(train_docs[0].sentences[0].base_features.cols());
  Checkpoint ner_part = ner_to_checkpoint(model.ner, cfg, charset, base_dim);
  ckpt.config = ner_part.config;
  ckpt.config.emplace_back("el_features", cfg.mtl_el_features);
  for (const auto& [k2, v2] : linker_config(model.linker, cfg)) ckpt.config.emplace_back(k2, v2);
  ckpt.tensors = std::move(ner_part.tensors);
  add_linker_tensors(ckpt, model.linker);
  ckpt.save((fs::path(cfg.out) / "model.ckpt").string());
  finish_run(cfg, "train-mtl", &report);
  return 0;
}

// Rebuilds whatever the checkpoint holds and scores/dumps it on one split.
int evaluate_or_predict(const RunConfig& cfg, bool predict) {
  const Checkpoint ckpt = Checkpoint::load(require_path(cfg.model, "--paths.model"));
  std::optional<Taxonomy> tax;
  if (!cfg.taxonomy.empty()) tax = load_taxonomy_required(cfg);

  std::vector<std::pair<std::string, std::vector<double>>> rows;
  fs::create_directories(cfg.out);

  if (ckpt.task == "ner" || ckpt.task == "mtl") {
    const NerModel ner = ner_from_checkpoint(ckpt);
    const bool contextual = ner.features == FeatureMode::contextual;
    const Features features = load_features(cfg, !contextual, contextual);
    const Corpus corpus = load_split(cfg, cfg.split, tax ? &*tax : nullptr, true);
    const auto docs = make_dataset(corpus, features.config(ner.features), tax ? &*tax : nullptr);
    const Prf prf = evaluate_ner_prf(ner, docs);
    rows.push_back({"ner.precision", {prf.precision}});
    rows.push_back({"ner.recall", {prf.recall}});
    rows.push_back({"ner.f1", {prf.f1}});
    if (predict) {
      write_text(fs::path(cfg.out) / "ner_predictions.tsv", ner_prediction_dump(ner, docs));
    }

    if (ckpt.task == "mtl") {
      if (!tax) throw ConfigError("mtl evaluation needs --paths.taxonomy");
      MtlModel model;
      model.ner = ner;
      model.linker = linker_from_checkpoint(ckpt);
      model.el_features = ckpt.config_value("el_features") == "contextual"
                              ? MtlElFeatures::contextual
                              : MtlElFeatures::shared;
      const ContextualStore* ctx = features.contextual ? &*features.contextual : nullptr;
      const auto examples = mtl_el_examples(model, docs, ctx);
      const Matrix adjacency = model.linker.self_loops ? tax->adjacency_with_self_loops()
                                                       : tax->adjacency_without_self_loops();
      const Matrix nodes = model.linker.node_matrix(
          model.linker.source == NodeSource::gcn_live ? &adjacency : nullptr);
      const ElEvalOutcome outcome =
          evaluate_el_examples(nodes, model.linker.bilinear_w, examples, *tax);
      append_el_metrics(rows, "el.", outcome, *tax, cfg.k, true);
      if (predict) write_text(fs::path(cfg.out) / "el_predictions.tsv", outcome.dump);
    }
  } else if (ckpt.task == "el") {
    if (!tax) throw ConfigError("el evaluation needs --paths.taxonomy");
    const LinkerModel model = linker_from_checkpoint(ckpt);
    const bool mention_contextual = ckpt.config_value("mention_source") == "contextual";
    const Features features = load_features(cfg, !mention_contextual, mention_contextual);
    const Corpus corpus = load_split(cfg, cfg.split, &*tax, true);
    const auto docs = make_dataset(corpus, features.config(FeatureMode::static_char), &*tax);
    const auto examples = make_el_examples(
        docs, mention_contextual ? MentionSource::contextual : MentionSource::static_pool,
        features.table ? &*features.table : nullptr,
        features.contextual ? &*features.contextual : nullptr);
    const Matrix adjacency = model.self_loops ? tax->adjacency_with_self_loops()
                                              : tax->adjacency_without_self_loops();
    const Matrix nodes =
        model.node_matrix(model.source == NodeSource::gcn_live ? &adjacency : nullptr);
    const ElEvalOutcome outcome = evaluate_el_examples(nodes, model.bilinear_w, examples, *tax);
    append_el_metrics(rows, "el.", outcome, *tax, cfg.k, true);
    if (predict) write_text(fs::path(cfg.out) / "el_predictions.tsv", outcome.dump);
  } else {
    throw ConfigError("unknown checkpoint task '" + ckpt.task + "'");
  }

  const EvalReport report = aggregate_runs(ckpt.task, rows);
  finish_run(cfg, predict ? "predict" : "evaluate", &report);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"disease mention tagging and taxonomy linking"};
  app.require_subcommand(1);
  // Manifests carry a [results] section; ignore it when one is reloaded.
  app.allow_config_extras(CLI::config_extras_mode::ignore);
  app.config_formatter(std::make_shared<SectionedIni>());
  app.set_config("--config", "", "INI config file; flags override file values")
      ->envname("TAXLINK_CONFIG");

  RunConfig cfg;
  add_options(app, cfg);

  auto* validate = app.add_subcommand("validate", "load and sanity-check the configured data");
  auto* embed = app.add_subcommand("embed-graph", "train node2vec taxonomy embeddings");
  auto* tner = app.add_subcommand("train-ner", "train the biLSTM-CRF tagger");
  auto* tel = app.add_subcommand("train-el", "train the bilinear linker");
  auto* tmtl = app.add_subcommand("train-mtl", "train tagger and linker jointly");
  auto* evaluate = app.add_subcommand("evaluate", "score a checkpoint on one split");
  auto* predict = app.add_subcommand("predict", "dump predictions of a checkpoint");
  for (CLI::App* sub : {validate, embed, tner, tel, tmtl, evaluate, predict}) {
    sub->fallthrough();  // main-app options may follow the subcommand name
  }

  CLI11_PARSE(app, argc, argv);

  try {
    if (validate->parsed()) return cmd_validate(cfg);
    if (embed->parsed()) return cmd_embed_graph(cfg);
    if (tner->parsed()) return cmd_train_ner(cfg);
    if (tel->parsed()) return cmd_train_el(cfg);
    if (tmtl->parsed()) return cmd_train_mtl(cfg);
    if (evaluate->parsed()) return evaluate_or_predict(cfg, false);
    if (predict->parsed()) return evaluate_or_predict(cfg, true);
  } catch (const TrainingError& e) {
    std::cerr << "training error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
