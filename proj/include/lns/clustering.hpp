#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "lns/ops.hpp"
#include "lns/tensor.hpp"

// Non-iterative clustering: a regular grid supplies coarse centers, a learned
// sigmoid offset shifts each center inside its own cell, and a t-kernel over
// the embedding assigns every pixel to a seed in a single pass.

namespace lns {

/// Regular seed grid. Cell (a,b) covers rows floor(a*H/rows) ..
/// floor((a+1)*H/rows)-1, analogously for columns; seed k = a*cols + b.
struct SeedGrid {
    int image_h = 0, image_w = 0;
    int rows = 0, cols = 0;
    double cell_h = 0.0, cell_w = 0.0;    // mean cell extents in pixels
    std::vector<int> row_lo, row_hi;      // per grid row, hi exclusive
    std::vector<int> col_lo, col_hi;      // per grid col, hi exclusive
    std::vector<int> center_row, center_col, center_index;  // per seed

    int count() const { return rows * cols; }
};

inline SeedGrid make_grid(int H, int W, int requested_k) {
    if (requested_k < 2) {
        throw InvalidArgument("requested superpixel count must be at least 2, got " +
                              std::to_string(requested_k));
    }
    if (requested_k > H * W) {
        throw InvalidArgument("requested superpixel count " + std::to_string(requested_k) +
                              " exceeds pixel count " + std::to_string(H * W));
    }
    SeedGrid g;
    g.image_h = H;
    g.image_w = W;
    g.rows = std::clamp(static_cast<int>(std::llround(std::sqrt(
                            static_cast<double>(requested_k) * H / W))), 1, H);
    g.cols = std::clamp(static_cast<int>(std::llround(
                            static_cast<double>(requested_k) / g.rows)), 1, W);
    g.cell_h = static_cast<double>(H) / g.rows;
    g.cell_w = static_cast<double>(W) / g.cols;
    g.row_lo.resize(g.rows);
    g.row_hi.resize(g.rows);
    for (int a = 0; a < g.rows; ++a) {
        g.row_lo[a] = static_cast<int>(static_cast<long long>(a) * H / g.rows);
        g.row_hi[a] = static_cast<int>(static_cast<long long>(a + 1) * H / g.rows);
    }
    g.col_lo.resize(g.cols);
    g.col_hi.resize(g.cols);
    for (int b = 0; b < g.cols; ++b) {
        g.col_lo[b] = static_cast<int>(static_cast<long long>(b) * W / g.cols);
        g.col_hi[b] = static_cast<int>(static_cast<long long>(b + 1) * W / g.cols);
    }
    for (int a = 0; a < g.rows; ++a) {
        for (int b = 0; b < g.cols; ++b) {
            const int cy = (g.row_lo[a] + g.row_hi[a]) / 2;
            const int cx = (g.col_lo[b] + g.col_hi[b]) / 2;
            g.center_row.push_back(cy);
            g.center_col.push_back(cx);
            g.center_index.push_back(cy * W + cx);
        }
    }
    return g;
}

/// Seeds after the learned shift. `shift` keeps the sigmoid outputs for the
/// backward pass; integer positions are clamped into the originating cell.
struct SeedSet {
    std::vector<int> index;  // flat pixel index per seed
    std::vector<int> row, col;
    std::vector<double> delta_row, delta_col;  // continuous offsets in pixels
    Tensor shift;                              // [K,2] sigmoid outputs
};

/// shift = sigmoid(z_pooled * w_s); offsets (shift - 0.5) scaled by the cell
/// extents; the rounded position is clamped so each seed stays inside its own
/// grid cell. Index rounding is a straight-through lookup: gradients reach
/// w_s through `shift` during the seed-update phase.
inline SeedSet seed_offsets(const Tensor& z_pooled, const Tensor& w_s, const SeedGrid& grid) {
    const int K = grid.count();
    if (z_pooled.rank() != 2 || z_pooled.dim(0) != K) {
        throw InvalidArgument("seed_offsets: pooled features must have one row per seed");
    }
    SeedSet s;
    s.shift = sigmoid_forward(linear_forward(z_pooled, w_s));
    s.index.resize(K);
    s.row.resize(K);
    s.col.resize(K);
    s.delta_row.resize(K);
    s.delta_col.resize(K);
    for (int a = 0; a < grid.rows; ++a) {
        for (int b = 0; b < grid.cols; ++b) {
            const int k = a * grid.cols + b;
            const double dr = (s.shift(k, 0) - 0.5) * grid.cell_h;
            const double dc = (s.shift(k, 1) - 0.5) * grid.cell_w;
            s.delta_row[k] = dr;
            s.delta_col[k] = dc;
            const int r = std::clamp(static_cast<int>(std::llround(grid.center_row[k] + dr)),
                                     grid.row_lo[a], grid.row_hi[a] - 1);
            const int c = std::clamp(static_cast<int>(std::llround(grid.center_col[k] + dc)),
                                     grid.col_lo[b], grid.col_hi[b] - 1);
            s.row[k] = r;
            s.col[k] = c;
            s.index[k] = r * grid.image_w + c;
        }
    }
    return s;
}

/// Soft assignment P[i,k] from the t-kernel similarity between pixel i and
/// seed k in embedding space; rows sum to 1. When `row_norm` is given it
/// receives the pre-normalization row sums (needed by the loss backward).
inline Tensor soft_assign(const Tensor& z, const std::vector<int>& seed_index,
                          Tensor* row_norm = nullptr) {
    const int C = z.dim(0);
    const std::size_t N = static_cast<std::size_t>(z.dim(1)) * z.dim(2);
    const int K = static_cast<int>(seed_index.size());
    for (int idx : seed_index) {
        if (idx < 0 || static_cast<std::size_t>(idx) >= N) {
            throw InvalidArgument("soft_assign: seed index out of image bounds");
        }
    }
    Tensor p({static_cast<int>(N), K});
    std::vector<double> dist(N);
    for (int k = 0; k < K; ++k) {
        std::fill(dist.begin(), dist.end(), 0.0);
        for (int c = 0; c < C; ++c) {
            const double* plane = z.data.data() + static_cast<std::size_t>(c) * N;
            const double zs = plane[static_cast<std::size_t>(seed_index[k])];
            for (std::size_t i = 0; i < N; ++i) {
                const double d = plane[i] - zs;
                dist[i] += d * d;
            }
        }
        double* col = p.data.data() + k;
        for (std::size_t i = 0; i < N; ++i) {
            col[i * K] = 1.0 / std::sqrt(1.0 + dist[i]);
        }
    }
    if (row_norm) *row_norm = Tensor({static_cast<int>(N)});
    for (std::size_t i = 0; i < N; ++i) {
        double* row = p.data.data() + i * K;
        double sum = 0.0;
        for (int k = 0; k < K; ++k) sum += row[k];
        const double inv = 1.0 / sum;
        for (int k = 0; k < K; ++k) row[k] *= inv;
        if (row_norm) (*row_norm)[i] = sum;
    }
    return p;
}

/// Hard label per pixel: argmax over seeds, ties to the lowest index.
inline std::vector<int> hard_labels(const Tensor& p) {
    const int N = p.dim(0), K = p.dim(1);
    std::vector<int> labels(static_cast<std::size_t>(N));
    for (int i = 0; i < N; ++i) {
        const double* row = &p(i, 0);
        int best = 0;
        for (int k = 1; k < K; ++k) {
            if (row[k] > row[best]) best = k;
        }
        labels[static_cast<std::size_t>(i)] = best;
    }
    return labels;
}

/// Mask of each pixel's n spatially nearest seeds under l1 distance; ties
/// break toward the lower seed index. Every row has exactly n ones.
inline Tensor topn_mask(const SeedSet& seeds, int H, int W, int n) {
    const int K = static_cast<int>(seeds.index.size());
    if (n < 1 || n > K) {
        throw InvalidArgument("topn_mask: n must be in [1," + std::to_string(K) + "], got " +
                              std::to_string(n));
    }
    Tensor m({H * W, K});
    std::vector<std::pair<int, int>> order(static_cast<std::size_t>(K));  // (distance, seed)
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            for (int k = 0; k < K; ++k) {
                order[static_cast<std::size_t>(k)] = {std::abs(y - seeds.row[k]) +
                                                          std::abs(x - seeds.col[k]), k};
            }
            std::partial_sort(order.begin(), order.begin() + n, order.end());
            double* row = &m(y * W + x, 0);
            for (int j = 0; j < n; ++j) row[order[static_cast<std::size_t>(j)].second] = 1.0;
        }
    }
    return m;
}

}  // namespace lns
