#include "taxlink/ner.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "taxlink/errors.hpp"
#include "taxlink/metrics.hpp"
#include "taxlink/numerics.hpp"

namespace taxlink {

namespace {

Matrix glorot(int rows, int cols, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) m(r, c) = rng.uniform(-bound, bound);
  }
  return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// LSTM cell

LstmParams init_lstm(int input_dim, int hidden_dim, Rng& rng) {
  if (input_dim <= 0 || hidden_dim <= 0) throw ConfigError("init_lstm: dims must be positive");
  LstmParams p;
  p.wi = glorot(hidden_dim, input_dim, rng);
  p.wf = glorot(hidden_dim, input_dim, rng);
  p.wo = glorot(hidden_dim, input_dim, rng);
  p.wg = glorot(hidden_dim, input_dim, rng);
  p.ui = glorot(hidden_dim, hidden_dim, rng);
  p.uf = glorot(hidden_dim, hidden_dim, rng);
  p.uo = glorot(hidden_dim, hidden_dim, rng);
  p.ug = glorot(hidden_dim, hidden_dim, rng);
  p.bi = Vector::Zero(hidden_dim);
  p.bf = Vector::Zero(hidden_dim);
  p.bo = Vector::Zero(hidden_dim);
  p.bg = Vector::Zero(hidden_dim);
  return p;
}

Matrix lstm_forward(const Matrix& inputs, const LstmParams& params, LstmCache* cache) {
  const Index t = inputs.rows();
  const int h = params.hidden_dim();
  if (inputs.cols() != params.input_dim()) {
    throw DimError("lstm_forward: input dim " + std::to_string(inputs.cols()) +
                   " does not match parameters (" + std::to_string(params.input_dim()) + ")");
  }
  Matrix gi(t, h), gf(t, h), go(t, h), gg(t, h), c(t, h), hs(t, h);
  Vector h_prev = Vector::Zero(h);
  Vector c_prev = Vector::Zero(h);
  for (Index s = 0; s < t; ++s) {
    const Vector x = inputs.row(s);
    const Vector zi = params.wi * x + params.ui * h_prev + params.bi;
    const Vector zf = params.wf * x + params.uf * h_prev + params.bf;
    const Vector zo = params.wo * x + params.uo * h_prev + params.bo;
    const Vector zg = params.wg * x + params.ug * h_prev + params.bg;
    gi.row(s) = zi.array().logistic();
    gf.row(s) = zf.array().logistic();
    go.row(s) = zo.array().logistic();
    gg.row(s) = zg.array().tanh();
    c.row(s) = gf.row(s).cwiseProduct(c_prev.transpose()) + gi.row(s).cwiseProduct(gg.row(s));
    hs.row(s) = go.row(s).cwiseProduct(c.row(s).array().tanh().matrix());
    h_prev = hs.row(s);
    c_prev = c.row(s);
  }
  if (cache) {
    cache->inputs = inputs;
    cache->gi = std::move(gi);
    cache->gf = std::move(gf);
    cache->go = std::move(go);
    cache->gg = std::move(gg);
    cache->c = std::move(c);
    cache->h = hs;
  }
  return hs;
}

LstmGrads lstm_backward(const LstmCache& cache, const LstmParams& params, const Matrix& d_hidden) {
  const Index t = cache.inputs.rows();
  const int h = params.hidden_dim();
  const int in = params.input_dim();
  LstmGrads grads;
  grads.params.wi = Matrix::Zero(h, in);
  grads.params.wf = Matrix::Zero(h, in);
  grads.params.wo = Matrix::Zero(h, in);
  grads.params.wg = Matrix::Zero(h, in);
  grads.params.ui = Matrix::Zero(h, h);
  grads.params.uf = Matrix::Zero(h, h);
  grads.params.uo = Matrix::Zero(h, h);
  grads.params.ug = Matrix::Zero(h, h);
  grads.params.bi = Vector::Zero(h);
  grads.params.bf = Vector::Zero(h);
  grads.params.bo = Vector::Zero(h);
  grads.params.bg = Vector::Zero(h);
  grads.d_inputs = Matrix::Zero(t, in);

  Vector dh_rec = Vector::Zero(h);
  Vector dc_rec = Vector::Zero(h);
  for (Index s = t - 1; s >= 0; --s) {
    const Vector dh = d_hidden.row(s).transpose() + dh_rec;
    const Vector gi = cache.gi.row(s), gf = cache.gf.row(s), go = cache.go.row(s),
                 gg = cache.gg.row(s), c = cache.c.row(s);
    const Vector tanh_c = c.array().tanh();
    const Vector c_prev = s > 0 ? Vector(cache.c.row(s - 1)) : Vector(Vector::Zero(h));
    const Vector h_prev = s > 0 ? Vector(cache.h.row(s - 1)) : Vector(Vector::Zero(h));

    const Vector dzo =
        dh.cwiseProduct(tanh_c).cwiseProduct(go).cwiseProduct((1.0 - go.array()).matrix());
    Vector dc = dh.cwiseProduct(go).cwiseProduct((1.0 - tanh_c.array().square()).matrix()) + dc_rec;
    const Vector dzf =
        dc.cwiseProduct(c_prev).cwiseProduct(gf).cwiseProduct((1.0 - gf.array()).matrix());
    const Vector dzi =
        dc.cwiseProduct(gg).cwiseProduct(gi).cwiseProduct((1.0 - gi.array()).matrix());
    const Vector dzg = dc.cwiseProduct(gi).cwiseProduct((1.0 - gg.array().square()).matrix());

    const Vector x = cache.inputs.row(s);
    grads.params.wi += dzi * x.transpose();
    grads.params.wf += dzf * x.transpose();
    grads.params.wo += dzo * x.transpose();
    grads.params.wg += dzg * x.transpose();
    grads.params.ui += dzi * h_prev.transpose();
    grads.params.uf += dzf * h_prev.transpose();
    grads.params.uo += dzo * h_prev.transpose();
    grads.params.ug += dzg * h_prev.transpose();
    grads.params.bi += dzi;
    grads.params.bf += dzf;
    grads.params.bo += dzo;
    grads.params.bg += dzg;

    grads.d_inputs.row(s) = (params.wi.transpose() * dzi + params.wf.transpose() * dzf +
                             params.wo.transpose() * dzo + params.wg.transpose() * dzg)
                                .transpose();
    dh_rec = params.ui.transpose() * dzi + params.uf.transpose() * dzf +
             params.uo.transpose() * dzo + params.ug.transpose() * dzg;
    dc_rec = dc.cwiseProduct(gf);
  }
  return grads;
}

// ---------------------------------------------------------------------------
// biLSTM

BiLstmParams init_bilstm(int input_dim, int hidden_dim, Rng& rng) {
  BiLstmParams p;
  p.fwd = init_lstm(input_dim, hidden_dim, rng);
  p.bwd = init_lstm(input_dim, hidden_dim, rng);
  return p;
}

Matrix bilstm_forward(const Matrix& inputs, const BiLstmParams& params, BiLstmCache* cache) {
  if (inputs.rows() == 0) throw std::domain_error("bilstm_forward: empty sequence");
  const int h = params.fwd.hidden_dim();
  const Matrix reversed = inputs.colwise().reverse();
  const Matrix hf = lstm_forward(inputs, params.fwd, cache ? &cache->fwd : nullptr);
  const Matrix hb = lstm_forward(reversed, params.bwd, cache ? &cache->bwd : nullptr);
  Matrix out(inputs.rows(), 2 * h);
  out.leftCols(h) = hf;
  out.rightCols(h) = hb.colwise().reverse();
  return out;
}

BiLstmGrads bilstm_backward(const BiLstmCache& cache, const BiLstmParams& params,
                            const Matrix& d_output) {
  const int h = params.fwd.hidden_dim();
  BiLstmGrads grads;
  LstmGrads gf = lstm_backward(cache.fwd, params.fwd, d_output.leftCols(h));
  LstmGrads gb = lstm_backward(cache.bwd, params.bwd, d_output.rightCols(h).colwise().reverse());
  grads.params.fwd = std::move(gf.params);
  grads.params.bwd = std::move(gb.params);
  grads.d_inputs = gf.d_inputs + gb.d_inputs.colwise().reverse();
  return grads;
}

// ---------------------------------------------------------------------------
// Character encoder

CharEncoderParams init_char_encoder(const CharEncoderConfig& cfg, const std::string& charset,
                                    Rng& rng) {
  if (cfg.char_dim <= 0) throw ConfigError("char encoder: char_dim must be positive");
  CharEncoderParams p;
  p.kind = cfg.kind;
  std::set<char> unique(charset.begin(), charset.end());
  int next = 1;  // 0 reserved for unknown characters
  for (char c : unique) p.char_index[c] = next++;
  p.embeddings = Matrix(next, cfg.char_dim);
  const double bound = std::sqrt(3.0 / static_cast<double>(cfg.char_dim));
  for (int r = 0; r < next; ++r) {
    for (int c = 0; c < cfg.char_dim; ++c) p.embeddings(r, c) = rng.uniform(-bound, bound);
  }
  if (cfg.kind == CharEncoderKind::bilstm) {
    if (cfg.char_hidden <= 0) throw ConfigError("char encoder: char_hidden must be positive");
    p.fwd = init_lstm(cfg.char_dim, cfg.char_hidden, rng);
    p.bwd = init_lstm(cfg.char_dim, cfg.char_hidden, rng);
  } else {
    if (cfg.cnn_filters <= 0 || cfg.cnn_width <= 0 || cfg.cnn_width % 2 == 0) {
      throw ConfigError("char encoder: cnn needs positive filters and an odd width");
    }
    p.width = cfg.cnn_width;
    p.filters = glorot(cfg.cnn_filters, cfg.cnn_width * cfg.char_dim, rng);
    p.filter_bias = Vector::Zero(cfg.cnn_filters);
  }
  return p;
}

Vector char_encode(const std::string& token, const CharEncoderParams& params,
                   CharEncodeCache* cache) {
  if (cache) {
    *cache = {};
    cache->token = token;
  }
  if (token.empty()) return Vector::Zero(params.out_dim());

  const Index len = static_cast<Index>(token.size());
  const int dim = static_cast<int>(params.embeddings.cols());
  Matrix embedded(len, dim);
  std::vector<int> rows(token.size(), 0);
  for (Index i = 0; i < len; ++i) {
    const auto it = params.char_index.find(token[static_cast<std::size_t>(i)]);
    rows[static_cast<std::size_t>(i)] = it == params.char_index.end() ? 0 : it->second;
    embedded.row(i) = params.embeddings.row(rows[static_cast<std::size_t>(i)]);
  }
  if (cache) {
    cache->char_rows = rows;
    cache->embedded = embedded;
  }

  if (params.kind == CharEncoderKind::bilstm) {
    const Matrix hf = lstm_forward(embedded, params.fwd, cache ? &cache->fwd : nullptr);
    const Matrix hb =
        lstm_forward(embedded.colwise().reverse(), params.bwd, cache ? &cache->bwd : nullptr);
    Vector out(params.out_dim());
    out.head(params.fwd.hidden_dim()) = hf.row(len - 1);
    out.tail(params.bwd.hidden_dim()) = hb.row(len - 1);
    return out;
  }

  // CNN: zero-pad, slide width-sized windows, ReLU, max over positions.
  const int width = params.width;
  const int pad = (width - 1) / 2;
  Matrix padded = Matrix::Zero(len + 2 * pad, dim);
  padded.middleRows(pad, len) = embedded;
  const int filters = static_cast<int>(params.filters.rows());
  Matrix pre(len, filters);
  for (Index j = 0; j < len; ++j) {
    Vector window(width * dim);
    for (int w = 0; w < width; ++w) window.segment(w * dim, dim) = padded.row(j + w);
    pre.row(j) = (params.filters * window + params.filter_bias).transpose();
  }
  Vector out(filters);
  std::vector<int> max_positions(filters, 0);
  for (int f = 0; f < filters; ++f) {
    Index best = 0;
    pre.col(f).maxCoeff(&best);
    max_positions[f] = static_cast<int>(best);
    out(f) = std::max(0.0, pre(best, f));
  }
  if (cache) {
    cache->conv_pre = std::move(pre);
    cache->max_positions = std::move(max_positions);
  }
  return out;
}

void char_encoder_grads_init(const CharEncoderParams& params, CharEncoderGrads& grads) {
  grads.d_embeddings = Matrix::Zero(params.embeddings.rows(), params.embeddings.cols());
  if (params.kind == CharEncoderKind::bilstm) {
    const int h = params.fwd.hidden_dim();
    const int in = params.fwd.input_dim();
    auto zero_lstm = [&](LstmParams& g) {
      g.wi = Matrix::Zero(h, in);
      g.wf = Matrix::Zero(h, in);
      g.wo = Matrix::Zero(h, in);
      g.wg = Matrix::Zero(h, in);
      g.ui = Matrix::Zero(h, h);
      g.uf = Matrix::Zero(h, h);
      g.uo = Matrix::Zero(h, h);
      g.ug = Matrix::Zero(h, h);
      g.bi = Vector::Zero(h);
      g.bf = Vector::Zero(h);
      g.bo = Vector::Zero(h);
      g.bg = Vector::Zero(h);
    };
    zero_lstm(grads.d_fwd);
    zero_lstm(grads.d_bwd);
  } else {
    grads.d_filters = Matrix::Zero(params.filters.rows(), params.filters.cols());
    grads.d_filter_bias = Vector::Zero(params.filter_bias.size());
  }
}

namespace {

void accumulate_lstm(LstmParams& acc, const LstmParams& g) {
  acc.wi += g.wi;
  acc.wf += g.wf;
  acc.wo += g.wo;
  acc.wg += g.wg;
  acc.ui += g.ui;
  acc.uf += g.uf;
  acc.uo += g.uo;
  acc.ug += g.ug;
  acc.bi += g.bi;
  acc.bf += g.bf;
  acc.bo += g.bo;
  acc.bg += g.bg;
}

}  // namespace

void char_encode_backward(const CharEncodeCache& cache, const CharEncoderParams& params,
                          const Vector& d_out, CharEncoderGrads& grads) {
  if (cache.token.empty()) return;
  const Index len = static_cast<Index>(cache.token.size());
  const int dim = static_cast<int>(params.embeddings.cols());
  Matrix d_embedded = Matrix::Zero(len, dim);

  if (params.kind == CharEncoderKind::bilstm) {
    const int h = params.fwd.hidden_dim();
    Matrix d_hf = Matrix::Zero(len, h);
    d_hf.row(len - 1) = d_out.head(h);
    Matrix d_hb = Matrix::Zero(len, h);
    d_hb.row(len - 1) = d_out.tail(h);
    LstmGrads gf = lstm_backward(cache.fwd, params.fwd, d_hf);
    LstmGrads gb = lstm_backward(cache.bwd, params.bwd, d_hb);
    accumulate_lstm(grads.d_fwd, gf.params);
    accumulate_lstm(grads.d_bwd, gb.params);
    d_embedded = gf.d_inputs + gb.d_inputs.colwise().reverse();
  } else {
    const int width = params.width;
    const int pad = (width - 1) / 2;
    Matrix padded = Matrix::Zero(len + 2 * pad, dim);
    padded.middleRows(pad, len) = cache.embedded;
    Matrix d_padded = Matrix::Zero(len + 2 * pad, dim);
    for (int f = 0; f < static_cast<int>(params.filters.rows()); ++f) {
      const int j = cache.max_positions[f];
      if (cache.conv_pre(j, f) <= 0.0) continue;  // max landed on a clamped unit
      const double dp = d_out(f);
      grads.d_filter_bias(f) += dp;
      for (int w = 0; w < width; ++w) {
        grads.d_filters.row(f).segment(w * dim, dim) += dp * padded.row(j + w);
        d_padded.row(j + w) += dp * params.filters.row(f).segment(w * dim, dim);
      }
    }
    d_embedded = d_padded.middleRows(pad, len);
  }

  for (Index i = 0; i < len; ++i) {
    grads.d_embeddings.row(cache.char_rows[static_cast<std::size_t>(i)]) += d_embedded.row(i);
  }
}

// ---------------------------------------------------------------------------
// CRF

CrfParams init_crf(int encoder_dim, int tag_count, Rng& rng) {
  CrfParams crf;
  crf.emission_proj = glorot(encoder_dim, tag_count, rng);
  crf.transitions = Matrix::Zero(tag_count + 2, tag_count + 2);
  return crf;
}

namespace {

void check_crf_dims(const Matrix& emissions, const Matrix& transitions) {
  if (emissions.rows() == 0) throw std::domain_error("crf: empty sequence");
  const Index tags = emissions.cols();
  if (transitions.rows() != tags + 2 || transitions.cols() != tags + 2) {
    throw DimError("crf: transitions must be (T+2)x(T+2) with START/STOP states");
  }
}

}  // namespace

double crf_sequence_score(const Matrix& emissions, const TagSequence& tags,
                          const Matrix& transitions) {
  check_crf_dims(emissions, transitions);
  const Index t = emissions.rows();
  const int tag_count = static_cast<int>(emissions.cols());
  const int start = tag_count, stop = tag_count + 1;
  if (static_cast<Index>(tags.tags.size()) != t) {
    throw DimError("crf_sequence_score: tag/emission length mismatch");
  }
  double score = 0.0;
  int prev = start;
  for (Index s = 0; s < t; ++s) {
    const int y = static_cast<int>(tags.tags[static_cast<std::size_t>(s)]);
    if (y < 0 || y >= tag_count) throw DimError("crf_sequence_score: tag index out of range");
    score += transitions(prev, y) + emissions(s, y);
    prev = y;
  }
  return score + transitions(prev, stop);
}

double crf_log_partition(const Matrix& emissions, const Matrix& transitions) {
  check_crf_dims(emissions, transitions);
  const Index t = emissions.rows();
  const int tag_count = static_cast<int>(emissions.cols());
  const int start = tag_count, stop = tag_count + 1;
  Vector alpha = transitions.row(start).head(tag_count).transpose() + emissions.row(0).transpose();
  for (Index s = 1; s < t; ++s) {
    Vector next(tag_count);
    for (int j = 0; j < tag_count; ++j) {
      next(j) = emissions(s, j) +
                log_sum_exp(Vector(alpha + transitions.col(j).head(tag_count)));
    }
    alpha = std::move(next);
  }
  return log_sum_exp(Vector(alpha + transitions.col(stop).head(tag_count)));
}

double crf_log_likelihood(const Matrix& emissions, const TagSequence& gold, const CrfParams& crf) {
  return crf_sequence_score(emissions, gold, crf.transitions) -
         crf_log_partition(emissions, crf.transitions);
}

CrfGrads crf_nll_backward(const Matrix& emissions, const TagSequence& gold,
                          const Matrix& transitions) {
  check_crf_dims(emissions, transitions);
  const Index t = emissions.rows();
  const int tag_count = static_cast<int>(emissions.cols());
  const int start = tag_count, stop = tag_count + 1;
  if (static_cast<Index>(gold.tags.size()) != t) {
    throw DimError("crf_nll_backward: tag/emission length mismatch");
  }

  // Forward and backward log messages.
  Matrix alpha(t, tag_count), beta(t, tag_count);
  alpha.row(0) =
      transitions.row(start).head(tag_count) + emissions.row(0);
  for (Index s = 1; s < t; ++s) {
    for (int j = 0; j < tag_count; ++j) {
      alpha(s, j) = emissions(s, j) +
                    log_sum_exp(Vector(alpha.row(s - 1).transpose() +
                                       transitions.col(j).head(tag_count)));
    }
  }
  beta.row(t - 1) = transitions.col(stop).head(tag_count).transpose();
  for (Index s = t - 2; s >= 0; --s) {
    for (int i = 0; i < tag_count; ++i) {
      beta(s, i) = log_sum_exp(Vector(transitions.row(i).head(tag_count).transpose() +
                                      emissions.row(s + 1).transpose() +
                                      beta.row(s + 1).transpose()));
    }
  }
  const double log_z =
      log_sum_exp(Vector(alpha.row(t - 1).transpose() + transitions.col(stop).head(tag_count)));

  CrfGrads grads;
  grads.d_emissions = ((alpha + beta).array() - log_z).exp();
  grads.d_transitions = Matrix::Zero(tag_count + 2, tag_count + 2);

  // Expected transition counts.
  for (int j = 0; j < tag_count; ++j) {
    grads.d_transitions(start, j) = grads.d_emissions(0, j);
    grads.d_transitions(j, stop) = grads.d_emissions(t - 1, j);
  }
  for (Index s = 0; s + 1 < t; ++s) {
    for (int i = 0; i < tag_count; ++i) {
      for (int j = 0; j < tag_count; ++j) {
        grads.d_transitions(i, j) += std::exp(alpha(s, i) + transitions(i, j) +
                                              emissions(s + 1, j) + beta(s + 1, j) - log_z);
      }
    }
  }

  // Subtract the observed counts.
  int prev = start;
  for (Index s = 0; s < t; ++s) {
    const int y = static_cast<int>(gold.tags[static_cast<std::size_t>(s)]);
    grads.d_emissions(s, y) -= 1.0;
    grads.d_transitions(prev, y) -= 1.0;
    prev = y;
  }
  grads.d_transitions(prev, stop) -= 1.0;
  return grads;
}

TagSequence viterbi_decode(const Matrix& emissions, const Matrix& transitions) {
  check_crf_dims(emissions, transitions);
  const Index t = emissions.rows();
  const int tag_count = static_cast<int>(emissions.cols());
  const int start = tag_count, stop = tag_count + 1;

  Matrix delta(t, tag_count);
  Eigen::MatrixXi back(t, tag_count);
  delta.row(0) = transitions.row(start).head(tag_count) + emissions.row(0);
  for (Index s = 1; s < t; ++s) {
    for (int j = 0; j < tag_count; ++j) {
      int best_i = 0;
      double best = delta(s - 1, 0) + transitions(0, j);
      for (int i = 1; i < tag_count; ++i) {
        const double cand = delta(s - 1, i) + transitions(i, j);
        if (cand > best) {  // strict: ties keep the lower tag index
          best = cand;
          best_i = i;
        }
      }
      delta(s, j) = best + emissions(s, j);
      back(s, j) = best_i;
    }
  }
  int best_j = 0;
  double best = delta(t - 1, 0) + transitions(0, stop);
  for (int j = 1; j < tag_count; ++j) {
    const double cand = delta(t - 1, j) + transitions(j, stop);
    if (cand > best) {
      best = cand;
      best_j = j;
    }
  }
  TagSequence seq;
  seq.tags.assign(static_cast<std::size_t>(t), Tag::O);
  for (Index s = t - 1; s >= 0; --s) {
    seq.tags[static_cast<std::size_t>(s)] = static_cast<Tag>(best_j);
    if (s > 0) best_j = back(s, best_j);
  }
  return seq;
}

// ---------------------------------------------------------------------------
// Full tagger

NerModel init_ner_model(const NerConfig& cfg, int base_feature_dim, const std::string& charset,
                        Rng& rng) {
  if (base_feature_dim <= 0) throw ConfigError("init_ner_model: base feature dim must be > 0");
  if (cfg.hidden <= 0) throw ConfigError("init_ner_model: hidden must be > 0");
  NerModel model;
  model.features = cfg.features;
  model.dropout = cfg.dropout;
  int input_dim = base_feature_dim;
  if (cfg.features == FeatureMode::static_char && cfg.use_char) {
    model.chars = init_char_encoder(cfg.char_cfg, charset, rng);
    input_dim += model.chars->out_dim();
  }
  model.lstm = init_bilstm(input_dim, cfg.hidden, rng);
  model.crf = init_crf(2 * cfg.hidden, kTagCount, rng);
  return model;
}

namespace detail {

Matrix encode_tokens(const NerModel& model, const TaggedSentence& sentence, bool training,
                     Rng* rng, EncoderActivations* acts) {
  const Index t = sentence.base_features.rows();
  Matrix features;
  if (model.chars) {
    const int char_out = model.chars->out_dim();
    features.resize(t, sentence.base_features.cols() + char_out);
    features.leftCols(sentence.base_features.cols()) = sentence.base_features;
    if (acts) acts->char_caches.resize(static_cast<std::size_t>(t));
    for (Index i = 0; i < t; ++i) {
      features.row(i).tail(char_out) =
          char_encode(sentence.tokens[static_cast<std::size_t>(i)], *model.chars,
                      acts ? &acts->char_caches[static_cast<std::size_t>(i)] : nullptr);
    }
  } else {
    features = sentence.base_features;
  }

  Rng unused(0);
  Rng& r = rng ? *rng : unused;
  Matrix feat_mask, hidden_mask;
  const Matrix features_dropped =
      apply_dropout(features, model.dropout, r, training, acts ? &feat_mask : nullptr);
  const Matrix hidden =
      bilstm_forward(features_dropped, model.lstm, acts ? &acts->lstm : nullptr);
  const Matrix hidden_dropped =
      apply_dropout(hidden, model.dropout, r, training, acts ? &hidden_mask : nullptr);

  if (acts) {
    acts->features = std::move(features);
    acts->feat_mask = std::move(feat_mask);
    acts->hidden_mask = std::move(hidden_mask);
    acts->features_dropped = features_dropped;
    acts->hidden_dropped = hidden_dropped;
  }
  return hidden_dropped;
}

void encode_tokens_backward(const NerModel& model, const EncoderActivations& acts,
                            const Matrix& d_hidden_dropped, EncoderGrads& grads) {
  const Matrix d_hidden = d_hidden_dropped.cwiseProduct(acts.hidden_mask);
  grads.lstm = bilstm_backward(acts.lstm, model.lstm, d_hidden);
  if (!model.chars) return;
  const Matrix d_features = grads.lstm.d_inputs.cwiseProduct(acts.feat_mask);
  char_encoder_grads_init(*model.chars, grads.chars);
  const int char_out = model.chars->out_dim();
  for (Index i = 0; i < d_features.rows(); ++i) {
    char_encode_backward(acts.char_caches[static_cast<std::size_t>(i)], *model.chars,
                         d_features.row(i).tail(char_out), grads.chars);
  }
}

void adam_step_lstm(Adam& adam, const std::string& prefix, LstmParams& p, const LstmParams& g) {
  adam.step(prefix + ".wi", p.wi, g.wi);
  adam.step(prefix + ".wf", p.wf, g.wf);
  adam.step(prefix + ".wo", p.wo, g.wo);
  adam.step(prefix + ".wg", p.wg, g.wg);
  adam.step(prefix + ".ui", p.ui, g.ui);
  adam.step(prefix + ".uf", p.uf, g.uf);
  adam.step(prefix + ".uo", p.uo, g.uo);
  adam.step(prefix + ".ug", p.ug, g.ug);
  adam.step(prefix + ".bi", p.bi, g.bi);
  adam.step(prefix + ".bf", p.bf, g.bf);
  adam.step(prefix + ".bo", p.bo, g.bo);
  adam.step(prefix + ".bg", p.bg, g.bg);
}

void adam_step_encoder(Adam& adam, NerModel& model, const EncoderGrads& grads) {
  adam_step_lstm(adam, "ner.lstm.fwd", model.lstm.fwd, grads.lstm.params.fwd);
  adam_step_lstm(adam, "ner.lstm.bwd", model.lstm.bwd, grads.lstm.params.bwd);
  if (model.chars) {
    adam.step("ner.chars.embeddings", model.chars->embeddings, grads.chars.d_embeddings);
    if (model.chars->kind == CharEncoderKind::bilstm) {
      adam_step_lstm(adam, "ner.chars.fwd", model.chars->fwd, grads.chars.d_fwd);
      adam_step_lstm(adam, "ner.chars.bwd", model.chars->bwd, grads.chars.d_bwd);
    } else {
      adam.step("ner.chars.filters", model.chars->filters, grads.chars.d_filters);
      adam.step("ner.chars.filter_bias", model.chars->filter_bias, grads.chars.d_filter_bias);
    }
  }
}

// Shared by the standalone and the joint trainer: one per-sentence update.
// The hook, when set, contributes an extra hidden-state gradient before the
// encoder backward pass. Returns the CRF negative log-likelihood.
double ner_sentence_step(NerModel& model, const TaggedSentence& sentence, Rng& rng, Adam& adam,
                         const ElHook& el_hook) {
  EncoderActivations acts;
  const Matrix hidden_dropped = encode_tokens(model, sentence, true, &rng, &acts);
  const Matrix emissions = hidden_dropped * model.crf.emission_proj;
  const double nll = -crf_log_likelihood(emissions, sentence.gold, model.crf);
  CrfGrads crf_grads = crf_nll_backward(emissions, sentence.gold, model.crf.transitions);

  Matrix d_hidden_dropped = crf_grads.d_emissions * model.crf.emission_proj.transpose();
  const Matrix d_proj = hidden_dropped.transpose() * crf_grads.d_emissions;
  if (el_hook) d_hidden_dropped += el_hook(hidden_dropped);

  EncoderGrads grads;
  encode_tokens_backward(model, acts, d_hidden_dropped, grads);

  adam.step("ner.crf.emission_proj", model.crf.emission_proj, d_proj);
  adam.step("ner.crf.transitions", model.crf.transitions, crf_grads.d_transitions);
  adam_step_encoder(adam, model, grads);
  if (!std::isfinite(nll)) throw TrainingError("train_ner: non-finite loss");
  return nll;
}

Matrix ner_hidden_states(const NerModel& model, const TaggedSentence& sentence) {
  return encode_tokens(model, sentence, false, nullptr, nullptr);
}

}  // namespace detail

TagSequence predict_tags(const NerModel& model, const TaggedSentence& sentence) {
  const Matrix hidden = detail::encode_tokens(model, sentence, false, nullptr, nullptr);
  const Matrix emissions = hidden * model.crf.emission_proj;
  return viterbi_decode(emissions, model.crf.transitions);
}

std::vector<Mention> predict_spans(const NerModel& model, const TaggedDocument& doc) {
  std::vector<Mention> mentions;
  for (const TaggedSentence& sentence : doc.sentences) {
    const TagSequence tags = predict_tags(model, sentence);
    for (const Span& span : iob_to_spans(sentence.token_spans, tags)) {
      Mention m;
      m.start = span.begin;
      m.end = span.end;
      m.surface = doc.text.substr(span.begin, span.end - span.begin);
      m.concept_id = kUnresolvedConceptId;
      mentions.push_back(std::move(m));
    }
  }
  std::sort(mentions.begin(), mentions.end(),
            [](const Mention& a, const Mention& b) { return a.start < b.start; });
  return mentions;
}

double evaluate_ner_f1(const NerModel& model, const std::vector<TaggedDocument>& docs) {
  std::vector<SpanRecord> gold, pred;
  for (const TaggedDocument& doc : docs) {
    for (const Mention& m : doc.gold_mentions) gold.push_back({doc.doc_id, m.start, m.end});
    for (const Mention& m : predict_spans(model, doc)) pred.push_back({doc.doc_id, m.start, m.end});
  }
  return span_micro_prf(gold, pred).f1;
}

std::string collect_charset(const std::vector<TaggedDocument>& docs) {
  std::set<char> chars;
  for (const TaggedDocument& doc : docs) {
    for (const TaggedSentence& s : doc.sentences) {
      for (const std::string& tok : s.tokens) chars.insert(tok.begin(), tok.end());
    }
  }
  return std::string(chars.begin(), chars.end());
}

NerModel train_ner(const std::vector<TaggedDocument>& train,
                   const std::vector<TaggedDocument>& validation, const NerConfig& cfg,
                   const std::string& charset, NerHistory* history) {
  std::vector<const TaggedSentence*> sentences;
  int base_dim = -1;
  for (const TaggedDocument& doc : train) {
    for (const TaggedSentence& s : doc.sentences) {
      sentences.push_back(&s);
      if (base_dim < 0) base_dim = static_cast<int>(s.base_features.cols());
    }
  }
  if (sentences.empty()) throw TrainingError("train_ner: empty corpus");

  Rng init_rng(cfg.seed);
  NerModel model = init_ner_model(cfg, base_dim, charset, init_rng);
  Rng train_rng = Rng(cfg.seed).derive(0x747261696eULL);

  NerModel best = model;
  double best_f1 = -1.0;
  int best_epoch = -1;
  int evals_since_best = 0;
  Adam adam(cfg.lr);

  std::vector<std::size_t> order(sentences.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle(order, train_rng);
    double loss_sum = 0.0;
    for (std::size_t idx : order) {
      loss_sum += detail::ner_sentence_step(model, *sentences[idx], train_rng, adam, {});
    }
    if (history) history->epoch_loss.push_back(loss_sum / static_cast<double>(sentences.size()));

    if (!validation.empty() && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs)) {
      const double f1 = evaluate_ner_f1(model, validation);
      if (history) history->val_f1.push_back(f1);
      if (f1 > best_f1) {
        best_f1 = f1;
        best = model;
        best_epoch = epoch;
        evals_since_best = 0;
      } else if (cfg.patience > 0 && ++evals_since_best >= cfg.patience) {
        break;
      }
    }
  }
  if (history) history->best_epoch = best_epoch;
  return validation.empty() ? model : best;
}

}  // namespace taxlink
