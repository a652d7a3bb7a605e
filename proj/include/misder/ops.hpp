#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "misder/autodiff.hpp"

// Differentiable dense ops recorded on a Graph. Broadcasting is limited to
// row-wise bias addition (add_row).
namespace misder::ops {

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
/// Σ coeffs[i]·terms[i] over same-shaped terms.
Var lincomb(std::span<const Var> terms, std::span<const double> coeffs);

/// a (n×m) + row (1×m) broadcast over rows.
Var add_row(Var a, Var row);

Var tanh(Var a);
Var relu(Var a);
Var sigmoid(Var a);

Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_rows(Var a, Eigen::Index start, Eigen::Index count);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
/// Row-major reshape.
Var reshape(Var a, Eigen::Index rows, Eigen::Index cols);
/// Row r of the result is row (r + offset) of `a`; out-of-range rows are zero.
Var shift_rows(Var a, Eigen::Index offset);

Var sum(Var a);
Var mean(Var a);

/// Mean absolute error over all elements.
Var l1_loss(Var a, Var b);

inline constexpr double kProbClamp = 1e-7;
/// Mean binary cross-entropy of probabilities p (n×1) against 0/1 labels.
/// p is clamped to [kProbClamp, 1 - kProbClamp]; the clamp passes gradient
/// only where it is inactive.
Var bce_loss(Var p, std::span<const int> labels);

Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);

/// Row lookup: result row i is table row ids[i].
Var embedding(Var table, std::span<const std::int32_t> ids);

/// Multi-head scaled dot-product attention over `batch` independent blocks.
/// q has batch·q_len rows, k and v have batch·k_len rows, all with model
/// width divisible by `heads`. key_mask (batch·k_len entries, 1 = attend)
/// may be empty. Every query must see at least one unmasked key.
Var attention(Var q, Var k, Var v, int batch, int heads, std::span<const std::uint8_t> key_mask = {});

/// Per-block weighted mean of rows: x has batch·seq rows; weights has the
/// same row count. Result is batch×cols.
Var masked_mean_rows(Var x, int batch, std::span<const double> weights);

/// Builds batch blocks [prefix ; text_b] where text has batch·text_len rows.
Var prefix_rows(Var prefix, Var text, int batch);

}  // namespace misder::ops
