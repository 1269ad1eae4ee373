#pragma once

// Batch-range kernel entry points used by the graph executor.

#include "subflow/nn.hpp"

namespace subflow::nn {

template <typename T>
Tensor4<T> make_output(const Tensor4<T>& input, const LayerSpec& spec);

template <typename T>
void conv_forward_range(const Tensor4<T>& input, const Layer<T>& layer, Tensor4<T>& out, int b0, int b1);
template <typename T>
void deconv_forward_range(const Tensor4<T>& input, const Layer<T>& layer, Tensor4<T>& out, int b0, int b1);
template <typename T>
void conv_backward_range(const Tensor4<T>& input, const Layer<T>& layer, const Tensor4<T>& grad_out,
                         Tensor4<T>* grad_in, std::vector<T>& grad_w, std::vector<T>& grad_b, int b0, int b1);
template <typename T>
void deconv_backward_range(const Tensor4<T>& input, const Layer<T>& layer, const Tensor4<T>& grad_out,
                           Tensor4<T>* grad_in, std::vector<T>& grad_w, int b0, int b1);

}  // namespace subflow::nn
