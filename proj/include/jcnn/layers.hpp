#pragma once

// Layer primitives of the network. Activations are NHWC; a rank-3 input
// [H,W,D] is accepted wherever a batch [B,H,W,D] is, and treated as B = 1.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "jcnn/tensor.hpp"

namespace jcnn {

enum class Mode { train, infer };

template <class T>
struct ConvParams {
  Tensor<T> kernels;  // [K1,K2,D1,D2]
  Tensor<T> bias;     // [D2]
};

template <class T>
struct ConvGrads {
  Tensor<T> input, kernels, bias;
};

/// Stride-1 convolution with SAME padding:
///   F_j(u,v) = sum_i sum_{m,n} R_i(u - m + K1/2, v - n + K2/2) w_{j,i}(m,n) + b_j
/// with R zero outside the feature map, so output extents equal input extents.
template <class T>
Tensor<T> conv2d_same(const Tensor<T>& input, const ConvParams<T>& p);

template <class T>
ConvGrads<T> conv2d_same_backward(const Tensor<T>& input, const ConvParams<T>& p,
                                  const Tensor<T>& upstream);

/// Learned affine parameters and running statistics of one BN layer.
/// The moving statistics are seeded from the first training batch and then
/// follow  avg_t = tau * avg_{t-1} + (1 - tau) * batch_t.
template <class T>
struct BnState {
  Tensor<T> gamma, beta;
  Tensor<T> moving_mean, moving_var;
  double tau = 0.999;
  double xi = 0.01;
  std::uint64_t updates = 0;  // training batches seen

  static BnState identity(std::size_t channels, double tau = 0.999, double xi = 0.01);
  std::size_t channels() const { return gamma.size(); }
  void validate() const;
};

template <class T>
struct BnCache {
  Tensor<T> normalized;          // x_hat
  std::vector<double> inv_std;   // per channel
  Mode mode = Mode::train;
};

template <class T>
struct BnGrads {
  Tensor<T> input, gamma, beta;
};

/// Train mode normalizes with the batch mean/variance and updates the moving
/// statistics; infer mode uses the moving statistics and leaves `state` alone.
template <class T>
Tensor<T> batchnorm(const Tensor<T>& batch, BnState<T>& state, Mode mode,
                    BnCache<T>* cache = nullptr);

template <class T>
BnGrads<T> batchnorm_backward(const BnCache<T>& cache, const BnState<T>& state,
                              const Tensor<T>& upstream);

template <class T>
Tensor<T> tanh_act(const Tensor<T>& x);
/// Takes the forward output y; d/dx tanh = 1 - y^2.
template <class T>
Tensor<T> tanh_backward(const Tensor<T>& y, const Tensor<T>& upstream);

template <class T>
Tensor<T> relu_act(const Tensor<T>& x);
/// Subgradient 0 at x = 0.
template <class T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& upstream);

/// Mean over the in-bounds part of each 3x3 stride-2 window.
template <class T>
Tensor<T> avgpool_3x3_s2(const Tensor<T>& input);
template <class T>
Tensor<T> avgpool_3x3_s2_backward(const Shape& input_shape, const Tensor<T>& upstream);

/// `argmax` (optional) receives the flat input index chosen for each output;
/// ties go to the first cell in row-major window order.
template <class T>
Tensor<T> maxpool_3x3_s2(const Tensor<T>& input, std::vector<std::uint32_t>* argmax = nullptr);
template <class T>
Tensor<T> maxpool_3x3_s2_backward(const Shape& input_shape, std::span<const std::uint32_t> argmax,
                                  const Tensor<T>& upstream);

template <class T>
struct FcParams {
  Tensor<T> weights;  // [M,N]
  Tensor<T> bias;     // [N]
};

template <class T>
struct FcGrads {
  Tensor<T> input, weights, bias;
};

/// a_n = sum_m a_m w_{m,n} + b_n for input [M] or [B,M]; no activation.
template <class T>
Tensor<T> fc(const Tensor<T>& input, const FcParams<T>& p);
template <class T>
FcGrads<T> fc_backward(const Tensor<T>& input, const FcParams<T>& p, const Tensor<T>& upstream);

/// Row-wise softmax over the last axis, max-subtracted.
template <class T>
Tensor<T> softmax(const Tensor<T>& logits);

/// -sum_n q_n log(max(p_n, 1e-12)) for one row. q must be one-hot.
template <class T>
double cross_entropy(std::span<const T> p, std::span<const T> q);

/// Mean cross-entropy of softmax(logits) against integer labels, and its
/// gradient with respect to the logits: (p - onehot) / B.
template <class T>
struct SoftmaxXent {
  Tensor<T> probabilities;
  Tensor<T> grad_logits;
  double loss = 0.0;
};
template <class T>
SoftmaxXent<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

/// A learnable tensor and the gradient buffer that mirrors it.
template <class T>
struct ParamRef {
  std::string name;
  Tensor<T>* value;
  Tensor<T>* grad;
};

/// w <- w - alpha * grad for every parameter.
template <class T>
void sgd_step(std::span<const ParamRef<T>> params, double alpha);

}  // namespace jcnn
