#pragma once

#include <span>
#include <vector>

#include "attn_tutor/tensor.hpp"

// Differentiable primitives. Every function records a tape node when any
// input requires grad; shape violations raise ShapeError naming the operands.
namespace attn_tutor {

// Elementwise with right-aligned (numpy style) broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double offset);
Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor square(const Tensor& x);
/// Gradient flows only where lo <= x <= hi.
Tensor clamp(const Tensor& x, double lo, double hi);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum(const Tensor& x, std::size_t axis, bool keepdim = false);
Tensor mean(const Tensor& x, std::size_t axis, bool keepdim = false);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& order);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);

/// [M,K]x[K,N], batched [B,M,K]x[B,K,N], or [B,M,K]x[K,N] (shared right operand).
Tensor matmul(const Tensor& a, const Tensor& b);

/// Stride-1 zero-padded 2-D convolution. x: [N,C,H,W], weight: [O,C,kh,kw],
/// bias: [O] or undefined.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t padding);
/// Stride-2 2x2 mean pooling over the last two axes (floor on odd extents).
Tensor avg_pool2(const Tensor& x);

Tensor softmax(const Tensor& x);      // over the last axis
Tensor log_softmax(const Tensor& x);  // over the last axis

/// Rows of table [V,E] selected by ids -> [ids.size(), E].
Tensor embedding(const Tensor& table, std::span<const int> ids);
/// x: [N,C] -> [N] with out[n] = x[n, index[n]].
Tensor gather(const Tensor& x, std::span<const int> index);

// Composites built from the primitives above.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

struct LstmState {
  Tensor hidden;
  Tensor cell;
};

/// One LSTM step. x: [N,E], state: [N,H], input_weight: [E,4H],
/// hidden_weight: [H,4H], bias: [4H]; gate order i, f, g, o.
LstmState lstm_step(const Tensor& x, const LstmState& state, const Tensor& input_weight,
                    const Tensor& hidden_weight, const Tensor& bias);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& x) { return neg(x); }
inline Tensor operator*(const Tensor& x, double c) { return scale(x, c); }
inline Tensor operator*(double c, const Tensor& x) { return scale(x, c); }
inline Tensor operator+(const Tensor& x, double c) { return add_scalar(x, c); }
inline Tensor operator-(const Tensor& x, double c) { return add_scalar(x, -c); }
inline Tensor operator-(double c, const Tensor& x) { return add_scalar(neg(x), c); }

}  // namespace attn_tutor
