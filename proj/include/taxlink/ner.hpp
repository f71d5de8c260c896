#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "taxlink/corpus.hpp"
#include "taxlink/linalg.hpp"
#include "taxlink/numerics.hpp"
#include "taxlink/rng.hpp"

namespace taxlink {

// ---------------------------------------------------------------------------
// LSTM cell

struct LstmParams {
  Matrix wi, wf, wo, wg;  // hidden x input
  Matrix ui, uf, uo, ug;  // hidden x hidden
  Vector bi, bf, bo, bg;

  int input_dim() const { return static_cast<int>(wi.cols()); }
  int hidden_dim() const { return static_cast<int>(wi.rows()); }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".wi", Eigen::Ref<Matrix>(wi));
    f(prefix + ".wf", Eigen::Ref<Matrix>(wf));
    f(prefix + ".wo", Eigen::Ref<Matrix>(wo));
    f(prefix + ".wg", Eigen::Ref<Matrix>(wg));
    f(prefix + ".ui", Eigen::Ref<Matrix>(ui));
    f(prefix + ".uf", Eigen::Ref<Matrix>(uf));
    f(prefix + ".uo", Eigen::Ref<Matrix>(uo));
    f(prefix + ".ug", Eigen::Ref<Matrix>(ug));
    f(prefix + ".bi", Eigen::Ref<Matrix>(bi));
    f(prefix + ".bf", Eigen::Ref<Matrix>(bf));
    f(prefix + ".bo", Eigen::Ref<Matrix>(bo));
    f(prefix + ".bg", Eigen::Ref<Matrix>(bg));
  }
};

LstmParams init_lstm(int input_dim, int hidden_dim, Rng& rng);

// Per-step activations kept for backpropagation through time.
struct LstmCache {
  Matrix inputs;                // t x input
  Matrix gi, gf, go, gg, c, h;  // t x hidden
};

// Standard recurrence with zero initial states; returns hidden states per step.
Matrix lstm_forward(const Matrix& inputs, const LstmParams& params, LstmCache* cache = nullptr);

struct LstmGrads {
  LstmParams params;  // gradient tensors, same shapes
  Matrix d_inputs;
};

LstmGrads lstm_backward(const LstmCache& cache, const LstmParams& params, const Matrix& d_hidden);

// ---------------------------------------------------------------------------
// biLSTM re-encoder: forward and backward passes over the sequence with the
// two hidden states concatenated per token.

struct BiLstmParams {
  LstmParams fwd, bwd;

  int output_dim() const { return 2 * fwd.hidden_dim(); }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    fwd.visit(prefix + ".fwd", f);
    bwd.visit(prefix + ".bwd", f);
  }
};

BiLstmParams init_bilstm(int input_dim, int hidden_dim, Rng& rng);

struct BiLstmCache {
  LstmCache fwd, bwd;
};

Matrix bilstm_forward(const Matrix& inputs, const BiLstmParams& params,
                      BiLstmCache* cache = nullptr);

struct BiLstmGrads {
  BiLstmParams params;
  Matrix d_inputs;
};

BiLstmGrads bilstm_backward(const BiLstmCache& cache, const BiLstmParams& params,
                            const Matrix& d_output);

// ---------------------------------------------------------------------------
// Character-level token encoder. Unknown characters share a reserved
// embedding row; the empty token encodes to a zero vector.

enum class CharEncoderKind { bilstm, cnn };

struct CharEncoderConfig {
  CharEncoderKind kind = CharEncoderKind::bilstm;
  int char_dim = 60;
  int char_hidden = 25;  // bilstm kind, per direction
  int cnn_filters = 30;
  int cnn_width = 3;
};

struct CharEncoderParams {
  CharEncoderKind kind = CharEncoderKind::bilstm;
  std::map<char, int> char_index;  // reserved index 0 = unknown
  Matrix embeddings;               // (1 + charset) x char_dim
  LstmParams fwd, bwd;             // bilstm kind
  Matrix filters;                  // cnn kind: filters x (width * char_dim)
  Vector filter_bias;
  int width = 3;

  int out_dim() const {
    return kind == CharEncoderKind::bilstm ? 2 * fwd.hidden_dim()
                                           : static_cast<int>(filters.rows());
  }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".embeddings", Eigen::Ref<Matrix>(embeddings));
    if (kind == CharEncoderKind::bilstm) {
      fwd.visit(prefix + ".fwd", f);
      bwd.visit(prefix + ".bwd", f);
    } else {
      f(prefix + ".filters", Eigen::Ref<Matrix>(filters));
      f(prefix + ".filter_bias", Eigen::Ref<Matrix>(filter_bias));
    }
  }
};

// `charset` is the set of characters observed in training tokens; it is
// sorted internally so the index assignment is reproducible.
CharEncoderParams init_char_encoder(const CharEncoderConfig& cfg, const std::string& charset,
                                    Rng& rng);

struct CharEncodeCache {
  std::string token;
  std::vector<int> char_rows;
  Matrix embedded;  // len x char_dim
  LstmCache fwd, bwd;
  Matrix conv_pre;            // positions x filters (cnn)
  std::vector<int> max_positions;  // per filter, -1 when the max was <= 0
};

Vector char_encode(const std::string& token, const CharEncoderParams& params,
                   CharEncodeCache* cache = nullptr);

struct CharEncoderGrads {
  Matrix d_embeddings;
  LstmParams d_fwd, d_bwd;
  Matrix d_filters;
  Vector d_filter_bias;
};

void char_encoder_grads_init(const CharEncoderParams& params, CharEncoderGrads& grads);
void char_encode_backward(const CharEncodeCache& cache, const CharEncoderParams& params,
                          const Vector& d_out, CharEncoderGrads& grads);

// ---------------------------------------------------------------------------
// Linear-chain CRF over the IOB tag set plus START/STOP states. All
// computations run in log space. T is taken from emissions.cols();
// transitions must be (T+2) x (T+2) with START = T, STOP = T+1.

struct CrfParams {
  Matrix emission_proj;  // encoder_dim x T
  Matrix transitions;    // (T+2) x (T+2), [from][to]

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".emission_proj", Eigen::Ref<Matrix>(emission_proj));
    f(prefix + ".transitions", Eigen::Ref<Matrix>(transitions));
  }
};

CrfParams init_crf(int encoder_dim, int tag_count, Rng& rng);

double crf_sequence_score(const Matrix& emissions, const TagSequence& tags,
                          const Matrix& transitions);
double crf_log_partition(const Matrix& emissions, const Matrix& transitions);
double crf_log_likelihood(const Matrix& emissions, const TagSequence& gold, const CrfParams& crf);

struct CrfGrads {
  Matrix d_emissions;
  Matrix d_transitions;
};

// Gradients of the negative log-likelihood via forward-backward marginals.
CrfGrads crf_nll_backward(const Matrix& emissions, const TagSequence& gold,
                          const Matrix& transitions);

// Exact argmax decoding; ties break toward the lower tag index. The raw
// argmax is returned; span extraction repairs orphan I tags.
TagSequence viterbi_decode(const Matrix& emissions, const Matrix& transitions);

// ---------------------------------------------------------------------------
// Full tagger: token features -> dropout -> biLSTM -> dropout -> emission
// projection -> CRF.

enum class FeatureMode { static_char, contextual };

struct NerConfig {
  FeatureMode features = FeatureMode::static_char;
  CharEncoderConfig char_cfg;
  bool use_char = true;  // static mode only
  int hidden = 256;
  double dropout = 0.5;
  double lr = 1e-3;
  int epochs = 100;
  int eval_every = 1;
  int patience = 0;  // 0 disables early abort; best-validation params are kept either way
  std::uint64_t seed = 1;
};

struct NerModel {
  FeatureMode features = FeatureMode::static_char;
  double dropout = 0.5;
  std::optional<CharEncoderParams> chars;
  BiLstmParams lstm;
  CrfParams crf;

  template <class F>
  void visit(F&& f) {
    if (chars) chars->visit("ner.chars", f);
    lstm.visit("ner.lstm", f);
    crf.visit("ner.crf", f);
  }
};

// One tokenized sentence with everything the models need.
struct TaggedSentence {
  std::string doc_id;
  int sentence_index = 0;
  std::vector<std::string> tokens;
  std::vector<Span> token_spans;  // absolute within the document text
  Matrix base_features;           // t x d_base (static table rows or contextual rows)
  TagSequence gold;
  struct MentionRef {
    int first_token = 0;
    int last_token = 0;  // inclusive
    int gold_node = -1;  // -1 when unresolved
    Span char_span;
    std::string gold_id;
  };
  std::vector<MentionRef> mentions;
};

struct TaggedDocument {
  std::string doc_id;
  std::string text;
  std::vector<TaggedSentence> sentences;
  std::vector<Mention> gold_mentions;
};

NerModel init_ner_model(const NerConfig& cfg, int base_feature_dim, const std::string& charset,
                        Rng& rng);

// Eval-mode tags for one sentence (no dropout).
TagSequence predict_tags(const NerModel& model, const TaggedSentence& sentence);

// Decoded spans mapped back to character offsets, concept ids unresolved.
std::vector<Mention> predict_spans(const NerModel& model, const TaggedDocument& doc);

struct NerHistory {
  std::vector<double> epoch_loss;
  std::vector<double> val_f1;  // one entry per evaluation
  int best_epoch = -1;
};

// Adam on every trainable tensor, per-sentence updates, sentence order
// shuffled each epoch from the seeded rng. When validation documents are
// given, the best span-F1 parameters are returned.
NerModel train_ner(const std::vector<TaggedDocument>& train,
                   const std::vector<TaggedDocument>& validation, const NerConfig& cfg,
                   const std::string& charset, NerHistory* history = nullptr);

// Span-level micro F1 of the model over documents.
double evaluate_ner_f1(const NerModel& model, const std::vector<TaggedDocument>& docs);

// Characters observed in the documents' tokens, sorted and deduplicated.
std::string collect_charset(const std::vector<TaggedDocument>& docs);

namespace detail {

// Joint-trainer plumbing, also handy for gradient verification in tests.

struct EncoderActivations {
  Matrix features;
  std::vector<CharEncodeCache> char_caches;
  Matrix feat_mask, hidden_mask;
  Matrix features_dropped, hidden_dropped;
  BiLstmCache lstm;
};

// Token features -> dropout -> biLSTM -> dropout; returns the dropout-scaled
// hidden states. rng may be null in eval mode.
Matrix encode_tokens(const NerModel& model, const TaggedSentence& sentence, bool training,
                     Rng* rng, EncoderActivations* acts);

struct EncoderGrads {
  CharEncoderGrads chars;
  BiLstmGrads lstm;
};

void encode_tokens_backward(const NerModel& model, const EncoderActivations& acts,
                            const Matrix& d_hidden_dropped, EncoderGrads& grads);

void adam_step_lstm(Adam& adam, const std::string& prefix, LstmParams& p, const LstmParams& g);
void adam_step_encoder(Adam& adam, NerModel& model, const EncoderGrads& grads);

// One per-sentence update. The hook sees the dropout-scaled hidden states and
// returns an extra gradient of the same shape (it may also update its own
// head's parameters); the returned value is the CRF negative log-likelihood.
using ElHook = std::function<Matrix(const Matrix& hidden_dropped)>;
double ner_sentence_step(NerModel& model, const TaggedSentence& sentence, Rng& rng, Adam& adam,
                         const ElHook& el_hook);

// Eval-mode hidden states (no dropout), for shared mention features.
Matrix ner_hidden_states(const NerModel& model, const TaggedSentence& sentence);

}  // namespace detail

}  // namespace taxlink
