#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "v2m/core/graph.hpp"

// Differentiable operations over Graph nodes. Binary elementwise ops follow
// right-aligned broadcasting; a size-1 dimension stretches to match.
namespace v2m {

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }

Var scale(Var x, double c);
Var add_scalar(Var x, double c);
inline Var operator-(Var x) { return scale(x, -1.0); }
inline Var operator*(double c, Var x) { return scale(x, c); }
inline Var operator*(Var x, double c) { return scale(x, c); }

Var exp(Var x);
Var log(Var x);
Var sigmoid(Var x);
Var square(Var x);
/// x * sigmoid(x), composed from the primitives above.
Var silu(Var x);

Var sum(Var x);
Var mean(Var x);
Var sum_axis(Var x, int axis, bool keepdim = false);
Var mean_axis(Var x, int axis, bool keepdim = false);

Var reshape(Var x, Shape shape);
Var permute(Var x, std::vector<std::size_t> perm);
/// Swaps the last two axes.
Var transpose(Var x);
Var slice(Var x, int axis, std::size_t begin, std::size_t end);
Var concat(std::span<const Var> parts, int axis);
/// Row lookup on a 2-D table; index -1 yields a zero row (used for padding).
Var gather_rows(Var table, std::vector<long> index);

/// a[..., m, k] x b[k, n] -> [..., m, n].
Var matmul(Var a, Var b);
/// a[B, m, k] x b[B, k, n] -> [B, m, n].
Var bmm(Var a, Var b);

Var softmax(Var x, int axis = -1);
Var log_softmax(Var x, int axis = -1);
/// x * gain / sqrt(mean(x^2) + eps) over the last axis.
Var rms_norm(Var x, Var gain, double eps);
/// Rotates consecutive pairs of x[N, heads, d] by pos * base^(-2j/d).
Var rope_apply(Var x, std::span<const long> positions, double base = 10000.0);
/// x / max(||x||, eps) over the last axis.
Var l2_normalize(Var x, double eps);
/// Cosine similarity over the last axis; result drops that axis.
Var cosine_similarity(Var a, Var b, double eps = 1e-8);

/// Linear layer helper: x[..., in] * w[in, out] (+ b[out]).
Var linear(Var x, Var w);
Var linear(Var x, Var w, Var b);

}  // namespace v2m
