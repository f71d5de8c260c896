#pragma once

#include <vector>

#include "taxlink/linalg.hpp"
#include "taxlink/node2vec.hpp"
#include "taxlink/rng.hpp"

namespace taxlink {

class Taxonomy;

// One graph-convolution layer: out = ReLU(A * H * W + b), i.e. every node
// ReLUs the summed linear transform of its neighborhood (A carries the
// self-loop when the neighborhood is meant to include the node itself).
struct GcnLayer {
  Matrix weight;  // d_in x d_out
  Vector bias;    // d_out
};

struct GcnParams {
  std::vector<GcnLayer> layers;

  int layer_count() const { return static_cast<int>(layers.size()); }
  int input_dim() const { return static_cast<int>(layers.front().weight.rows()); }
  int output_dim() const { return static_cast<int>(layers.back().weight.cols()); }

  template <class F>
  void visit(F&& f) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      f("gcn.layer" + std::to_string(l) + ".weight", Eigen::Ref<Matrix>(layers[l].weight));
      f("gcn.layer" + std::to_string(l) + ".bias", Eigen::Ref<Matrix>(layers[l].bias));
    }
  }
};

// Glorot-uniform weights, zero biases. dims = {d0, d1, ..., dL}.
GcnParams init_gcn(const std::vector<int>& dims, Rng& rng);

// Forward caches for the backward pass.
struct GcnCache {
  std::vector<Matrix> inputs;           // H^(l-1) per layer
  std::vector<Matrix> pre_activations;  // A*H*W + b per layer
};

Matrix gcn_layer_forward(const Matrix& h, const Matrix& adjacency, const GcnLayer& layer);

// L layers in sequence; `cache` enables gcn_backward.
Matrix gcn_forward(const Matrix& h0, const Matrix& adjacency, const GcnParams& params,
                   GcnCache* cache = nullptr);

// Encodes every taxonomy node from its initial representation.
NodeEmbeddings gcn_encode(const Taxonomy& tax, const GcnParams& params, const Matrix& h0,
                          bool self_loops = true);

struct GcnGrads {
  std::vector<GcnLayer> layers;  // same shapes as the parameters
  Matrix d_h0;
};

// Analytic gradients given d(loss)/d(output); ReLU subgradient 0 at 0.
GcnGrads gcn_backward(const GcnCache& cache, const Matrix& adjacency, const GcnParams& params,
                      const Matrix& d_output);

}  // namespace taxlink
