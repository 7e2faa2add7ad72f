#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "asw/matrix.hpp"
#include "asw/model.hpp"

namespace asw {

// A contiguous run of rows appended on top of an existing cache, with the
// activations needed to differentiate through them.
struct SegmentTape {
  std::size_t begin = 0;  // cache length before the segment
  std::vector<RowTape> rows;
};

SegmentTape forward_segment(const Transformer& model, const Matrix& inputs, KvCache& cache);

struct SegmentGrads {
  Matrix d_input;  // rows x dim: gradient w.r.t. the segment's input rows
  // Per layer, `begin x dim` gradients w.r.t. keys/values of rows that precede
  // the segment. Only filled when requested.
  std::vector<Matrix> d_prefix_keys;
  std::vector<Matrix> d_prefix_values;
};

struct BackwardRequest {
  // Gradient w.r.t. each segment row's final residual stream (rows x dim).
  const Matrix* d_hidden = nullptr;
  // Optional per-layer gradients w.r.t. this segment's keys/values that come
  // from rows appended after it (rows x dim each).
  const std::vector<Matrix>* ext_d_keys = nullptr;
  const std::vector<Matrix>* ext_d_values = nullptr;
  bool want_prefix_grads = false;
  // When non-empty, parameter gradients (excluding the token table) are
  // accumulated here using the model's ParamLayout.
  std::span<double> param_grads{};
};

// `cache` must hold at least begin + rows entries from the matching forward.
SegmentGrads backward_segment(const Transformer& model, const KvCache& cache,
                              const SegmentTape& tape, const BackwardRequest& request);

// Backpropagates d_logits through the final norm and output projection,
// accumulating into d_hidden (and param_grads when non-empty).
void head_backward(const Transformer& model, std::span<const double> hidden,
                   std::span<const double> d_logits, std::span<double> d_hidden,
                   std::span<double> param_grads);

}  // namespace asw
