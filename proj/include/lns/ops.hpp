#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "lns/tensor.hpp"

// Reverse-mode differentiable primitives. The network topology is fixed, so
// instead of a general tape each op exposes an explicit forward and backward;
// callers chain the backwards in reverse order. All functions are pure.

namespace lns {

/// 3x3 dilated convolution description. Padding always equals the dilation,
/// which preserves the spatial size for a 3x3 kernel.
struct ConvSpec {
    int in_channels = 0;
    int out_channels = 0;
    int kernel_size = 3;
    int dilation = 1;
    bool has_bias = true;

    int padding() const { return dilation * (kernel_size - 1) / 2; }
};

namespace detail {

inline void check_conv_args(const Tensor& input, const ConvSpec& spec, const Tensor& weights,
                            const Tensor* bias) {
    if (input.rank() != 3) {
        throw InvalidArgument("conv2d: input must be rank 3 [C,H,W], got " +
                              shape_string(input.shape));
    }
    if (input.dim(0) != spec.in_channels) {
        throw InvalidArgument("conv2d: input channel count " + std::to_string(input.dim(0)) +
                              " does not match spec.in_channels " +
                              std::to_string(spec.in_channels));
    }
    const std::vector<int> want{spec.out_channels, spec.in_channels, spec.kernel_size,
                                spec.kernel_size};
    if (weights.shape != want) {
        throw InvalidArgument("conv2d: weight shape " + shape_string(weights.shape) +
                              " does not match " + shape_string(want));
    }
    if (bias && bias->shape != std::vector<int>{spec.out_channels}) {
        throw InvalidArgument("conv2d: bias shape " + shape_string(bias->shape) +
                              " does not match [" + std::to_string(spec.out_channels) + "]");
    }
}

}  // namespace detail

/// Zero-padded 3x3 dilated convolution, spatial size preserved.
/// weights: [C_out, C_in, k, k], bias: [C_out] or null.
inline Tensor conv2d_forward(const Tensor& input, const ConvSpec& spec, const Tensor& weights,
                             const Tensor* bias) {
    detail::check_conv_args(input, spec, weights, bias);
    const int H = input.dim(1), W = input.dim(2);
    const int k = spec.kernel_size, d = spec.dilation, p = spec.padding();
    Tensor out({spec.out_channels, H, W});
    for (int co = 0; co < spec.out_channels; ++co) {
        double* op = &out(co, 0, 0);
        if (bias) {
            const double b = (*bias)[static_cast<std::size_t>(co)];
            for (int i = 0; i < H * W; ++i) op[i] = b;
        }
        for (int ci = 0; ci < spec.in_channels; ++ci) {
            const double* ip = &input(ci, 0, 0);
            for (int ky = 0; ky < k; ++ky) {
                const int dy = ky * d - p;
                const int y0 = std::max(0, -dy), y1 = std::min(H, H - dy);
                for (int kx = 0; kx < k; ++kx) {
                    const int dx = kx * d - p;
                    const double w = weights.data[((static_cast<std::size_t>(co) *
                                                        spec.in_channels + ci) * k + ky) * k + kx];
                    if (w == 0.0) continue;
                    const int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
                    for (int y = y0; y < y1; ++y) {
                        double* orow = op + static_cast<std::size_t>(y) * W;
                        const double* irow = ip + static_cast<std::size_t>(y + dy) * W + dx;
                        for (int x = x0; x < x1; ++x) orow[x] += w * irow[x];
                    }
                }
            }
        }
    }
    return out;
}

struct ConvGrads {
    Tensor input;
    Tensor weights;
    Tensor bias;  // empty when spec.has_bias is false
};

inline ConvGrads conv2d_backward(const Tensor& grad_out, const Tensor& saved_input,
                                 const ConvSpec& spec, const Tensor& weights) {
    detail::check_conv_args(saved_input, spec, weights, nullptr);
    const int H = saved_input.dim(1), W = saved_input.dim(2);
    if (grad_out.shape != std::vector<int>{spec.out_channels, H, W}) {
        throw InvalidArgument("conv2d_backward: grad_out shape " + shape_string(grad_out.shape) +
                              " does not match forward output [" +
                              std::to_string(spec.out_channels) + "," + std::to_string(H) + "," +
                              std::to_string(W) + "]");
    }
    const int k = spec.kernel_size, d = spec.dilation, p = spec.padding();
    ConvGrads g;
    g.input = Tensor(saved_input.shape);
    g.weights = Tensor(weights.shape);
    if (spec.has_bias) {
        g.bias = Tensor({spec.out_channels});
        for (int co = 0; co < spec.out_channels; ++co) {
            const double* gp = &grad_out(co, 0, 0);
            double acc = 0.0;
            for (int i = 0; i < H * W; ++i) acc += gp[i];
            g.bias[static_cast<std::size_t>(co)] = acc;
        }
    }
    for (int co = 0; co < spec.out_channels; ++co) {
        const double* gp = &grad_out(co, 0, 0);
        for (int ci = 0; ci < spec.in_channels; ++ci) {
            const double* ip = &saved_input(ci, 0, 0);
            double* gip = &g.input(ci, 0, 0);
            for (int ky = 0; ky < k; ++ky) {
                const int dy = ky * d - p;
                const int y0 = std::max(0, -dy), y1 = std::min(H, H - dy);
                for (int kx = 0; kx < k; ++kx) {
                    const int dx = kx * d - p;
                    const int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
                    const std::size_t wi = ((static_cast<std::size_t>(co) * spec.in_channels + ci) *
                                                k + ky) * k + kx;
                    const double w = weights.data[wi];
                    double wacc = 0.0;
                    for (int y = y0; y < y1; ++y) {
                        const double* grow = gp + static_cast<std::size_t>(y) * W;
                        const double* irow = ip + static_cast<std::size_t>(y + dy) * W + dx;
                        double* girow = gip + static_cast<std::size_t>(y + dy) * W + dx;
                        for (int x = x0; x < x1; ++x) {
                            wacc += grow[x] * irow[x];
                            girow[x] += w * grow[x];
                        }
                    }
                    g.weights.data[wi] = wacc;
                }
            }
        }
    }
    return g;
}

/// input [N, C_in] x weights [C_in, C_out] -> [N, C_out].
inline Tensor linear_forward(const Tensor& input, const Tensor& weights) {
    if (input.rank() != 2 || weights.rank() != 2) {
        throw InvalidArgument("linear: expects rank-2 input and weights");
    }
    if (input.dim(1) != weights.dim(0)) {
        throw InvalidArgument("linear: inner dimensions disagree, input " +
                              shape_string(input.shape) + " vs weights " +
                              shape_string(weights.shape));
    }
    const int N = input.dim(0), Cin = input.dim(1), Cout = weights.dim(1);
    Tensor out({N, Cout});
    for (int i = 0; i < N; ++i) {
        const double* irow = &input(i, 0);
        double* orow = &out(i, 0);
        for (int c = 0; c < Cin; ++c) {
            const double v = irow[c];
            const double* wrow = &weights(c, 0);
            for (int j = 0; j < Cout; ++j) orow[j] += v * wrow[j];
        }
    }
    return out;
}

struct LinearGrads {
    Tensor input;
    Tensor weights;
};

inline LinearGrads linear_backward(const Tensor& grad_out, const Tensor& saved_input,
                                   const Tensor& weights) {
    const int N = saved_input.dim(0), Cin = saved_input.dim(1), Cout = weights.dim(1);
    if (grad_out.shape != std::vector<int>{N, Cout}) {
        throw InvalidArgument("linear_backward: grad_out shape " + shape_string(grad_out.shape) +
                              " does not match output [" + std::to_string(N) + "," +
                              std::to_string(Cout) + "]");
    }
    LinearGrads g;
    g.input = Tensor({N, Cin});
    g.weights = Tensor({Cin, Cout});
    for (int i = 0; i < N; ++i) {
        const double* grow = &grad_out(i, 0);
        const double* irow = &saved_input(i, 0);
        double* girow = &g.input(i, 0);
        for (int c = 0; c < Cin; ++c) {
            const double* wrow = &weights(c, 0);
            double* gwrow = &g.weights(c, 0);
            double acc = 0.0;
            for (int j = 0; j < Cout; ++j) {
                acc += grow[j] * wrow[j];
                gwrow[j] += irow[c] * grow[j];
            }
            girow[c] = acc;
        }
    }
    return g;
}

inline Tensor relu_forward(const Tensor& input) {
    Tensor out(input.shape);
    for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > 0.0 ? input[i] : 0.0;
    return out;
}

/// Gradient passes only where the saved pre-activation was strictly positive.
inline Tensor relu_backward(const Tensor& grad_out, const Tensor& saved_input) {
    if (!grad_out.same_shape(saved_input)) {
        throw InvalidArgument("relu_backward: shape mismatch");
    }
    Tensor g(grad_out.shape);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = saved_input[i] > 0.0 ? grad_out[i] : 0.0;
    return g;
}

inline Tensor sigmoid_forward(const Tensor& input) {
    Tensor out(input.shape);
    for (std::size_t i = 0; i < input.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-input[i]));
    return out;
}

/// Backward in terms of the saved forward output s: grad * s * (1 - s).
inline Tensor sigmoid_backward(const Tensor& grad_out, const Tensor& saved_output) {
    if (!grad_out.same_shape(saved_output)) {
        throw InvalidArgument("sigmoid_backward: shape mismatch");
    }
    Tensor g(grad_out.shape);
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double s = saved_output[i];
        g[i] = grad_out[i] * s * (1.0 - s);
    }
    return g;
}

namespace detail {

inline int cell_lo(int index, int cells, int extent) {
    return static_cast<int>((static_cast<long long>(index) * extent) / cells);
}
inline int cell_hi(int index, int cells, int extent) {
    return static_cast<int>((static_cast<long long>(index + 1) * extent) / cells);
}

}  // namespace detail

/// Pools [C,H,W] onto a (rows x cols) grid of near-equal cells; output row
/// r*cols+c holds the per-channel mean over cell (r,c), shape [rows*cols, C].
inline Tensor adaptive_avg_pool_forward(const Tensor& input, int grid_rows, int grid_cols) {
    if (input.rank() != 3) throw InvalidArgument("adaptive_avg_pool: input must be [C,H,W]");
    const int C = input.dim(0), H = input.dim(1), W = input.dim(2);
    if (grid_rows < 1 || grid_cols < 1 || grid_rows > H || grid_cols > W) {
        throw InvalidArgument("adaptive_avg_pool: grid " + std::to_string(grid_rows) + "x" +
                              std::to_string(grid_cols) + " does not fit image " +
                              std::to_string(H) + "x" + std::to_string(W));
    }
    Tensor out({grid_rows * grid_cols, C});
    for (int a = 0; a < grid_rows; ++a) {
        const int y0 = detail::cell_lo(a, grid_rows, H), y1 = detail::cell_hi(a, grid_rows, H);
        for (int b = 0; b < grid_cols; ++b) {
            const int x0 = detail::cell_lo(b, grid_cols, W), x1 = detail::cell_hi(b, grid_cols, W);
            const double inv = 1.0 / (static_cast<double>(y1 - y0) * (x1 - x0));
            double* orow = &out(a * grid_cols + b, 0);
            for (int c = 0; c < C; ++c) {
                double acc = 0.0;
                for (int y = y0; y < y1; ++y) {
                    const double* irow = &input(c, y, x0);
                    for (int x = x0; x < x1; ++x) acc += irow[x - x0];
                }
                orow[c] = acc * inv;
            }
        }
    }
    return out;
}

/// Distributes each pooled gradient uniformly over its source cell.
inline Tensor adaptive_avg_pool_backward(const Tensor& grad_out, int channels, int H, int W,
                                         int grid_rows, int grid_cols) {
    if (grad_out.shape != std::vector<int>{grid_rows * grid_cols, channels}) {
        throw InvalidArgument("adaptive_avg_pool_backward: grad_out shape " +
                              shape_string(grad_out.shape) + " does not match pooled output");
    }
    Tensor g({channels, H, W});
    for (int a = 0; a < grid_rows; ++a) {
        const int y0 = detail::cell_lo(a, grid_rows, H), y1 = detail::cell_hi(a, grid_rows, H);
        for (int b = 0; b < grid_cols; ++b) {
            const int x0 = detail::cell_lo(b, grid_cols, W), x1 = detail::cell_hi(b, grid_cols, W);
            const double inv = 1.0 / (static_cast<double>(y1 - y0) * (x1 - x0));
            const double* grow = &grad_out(a * grid_cols + b, 0);
            for (int c = 0; c < channels; ++c) {
                const double v = grow[c] * inv;
                for (int y = y0; y < y1; ++y) {
                    double* row = &g(c, y, 0);
                    for (int x = x0; x < x1; ++x) row[x] += v;
                }
            }
        }
    }
    return g;
}

}  // namespace lns
