#include "taxlink/gcn.hpp"

#include <cmath>

#include "taxlink/errors.hpp"
#include "taxlink/taxonomy.hpp"

namespace taxlink {

GcnParams init_gcn(const std::vector<int>& dims, Rng& rng) {
  if (dims.size() < 2) throw ConfigError("init_gcn: need at least one layer (two dims)");
  GcnParams params;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const int d_in = dims[l];
    const int d_out = dims[l + 1];
    if (d_in <= 0 || d_out <= 0) throw ConfigError("init_gcn: dims must be positive");
    GcnLayer layer;
    layer.weight.resize(d_in, d_out);
    const double bound = std::sqrt(6.0 / static_cast<double>(d_in + d_out));
    for (int r = 0; r < d_in; ++r) {
      for (int c = 0; c < d_out; ++c) layer.weight(r, c) = rng.uniform(-bound, bound);
    }
    layer.bias = Vector::Zero(d_out);
    params.layers.push_back(std::move(layer));
  }
  return params;
}

Matrix gcn_layer_forward(const Matrix& h, const Matrix& adjacency, const GcnLayer& layer) {
  if (adjacency.rows() != adjacency.cols() || adjacency.rows() != h.rows()) {
    throw ConfigError("gcn_layer_forward: adjacency must be n x n matching H's rows");
  }
  if (h.cols() != layer.weight.rows()) {
    throw ConfigError("gcn_layer_forward: input dim " + std::to_string(h.cols()) +
                      " does not match weight rows " + std::to_string(layer.weight.rows()));
  }
  if (layer.bias.size() != layer.weight.cols()) {
    throw ConfigError("gcn_layer_forward: bias/weight dim mismatch");
  }
  Matrix pre = adjacency * (h * layer.weight);
  pre.rowwise() += layer.bias.transpose();
  return pre.cwiseMax(0.0);
}

Matrix gcn_forward(const Matrix& h0, const Matrix& adjacency, const GcnParams& params,
                   GcnCache* cache) {
  if (params.layers.empty()) throw ConfigError("gcn_forward: no layers");
  if (cache) {
    cache->inputs.clear();
    cache->pre_activations.clear();
  }
  Matrix h = h0;
  for (const GcnLayer& layer : params.layers) {
    if (cache) cache->inputs.push_back(h);
    Matrix pre = adjacency * (h * layer.weight);
    pre.rowwise() += layer.bias.transpose();
    if (cache) cache->pre_activations.push_back(pre);
    h = pre.cwiseMax(0.0);
  }
  return h;
}

NodeEmbeddings gcn_encode(const Taxonomy& tax, const GcnParams& params, const Matrix& h0,
                          bool self_loops) {
  if (h0.rows() != tax.size()) {
    throw ConfigError("gcn_encode: H0 rows must match taxonomy size");
  }
  const Matrix adjacency =
      self_loops ? tax.adjacency_with_self_loops() : tax.adjacency_without_self_loops();
  NodeEmbeddings out;
  out.kind = NodeKind::gcn;
  out.matrix = gcn_forward(h0, adjacency, params);
  return out;
}

GcnGrads gcn_backward(const GcnCache& cache, const Matrix& adjacency, const GcnParams& params,
                      const Matrix& d_output) {
  const int layer_count = params.layer_count();
  if (static_cast<int>(cache.inputs.size()) != layer_count) {
    throw ConfigError("gcn_backward: cache does not match parameters");
  }
  GcnGrads grads;
  grads.layers.resize(layer_count);
  Matrix d_h = d_output;
  for (int l = layer_count - 1; l >= 0; --l) {
    // d_pre = d_h masked by the ReLU; subgradient 0 at exactly 0.
    const Matrix d_pre =
        (cache.pre_activations[l].array() > 0.0).cast<double>().matrix().cwiseProduct(d_h);
    const Matrix ah = adjacency * cache.inputs[l];
    grads.layers[l].weight = ah.transpose() * d_pre;
    grads.layers[l].bias = d_pre.colwise().sum();
    // A is symmetric, so d(H) = A^T * d_pre * W^T = A * d_pre * W^T.
    d_h = adjacency.transpose() * (d_pre * params.layers[l].weight.transpose());
  }
  grads.d_h0 = std::move(d_h);
  return grads;
}

}  // namespace taxlink
