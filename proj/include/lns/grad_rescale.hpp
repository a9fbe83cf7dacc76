#pragma once

#include <cmath>

#include "lns/tensor.hpp"

// Gradient rescaling: a linear head reconstructs the 5 input channels from
// the embedding; its weight magnitudes define a per-channel importance g.
// An exponential memory m of past importance drives the channel-wise scale
// g/(g+m) applied to gradients entering the embedder, and the contour map
// drives a per-pixel bi-directional scale on the spatial reconstruction
// gradient. Both layers are identities in the forward direction.

namespace lns {

/// Lifelong channel memory: starts at all ones and tracks the reconstruction
/// strength with an exponential moving average. Stays positive.
struct ChannelMemory {
    Tensor m;             // [C2]
    double lambda = 0.1;  // EMA coefficient in (0,1)

    static ChannelMemory ones(int channels, double lambda) {
        ChannelMemory mem;
        mem.m = Tensor({channels}, 1.0);
        mem.lambda = lambda;
        return mem;
    }
};

/// Per-pixel linear reconstruction of the 5 input channels: x_r = z . w_r,
/// w_r shaped [C2, 5]; channels 0..2 are color, 3..4 position.
inline Tensor recon_forward(const Tensor& z, const Tensor& w_r) {
    if (z.rank() != 3 || w_r.rank() != 2 || w_r.dim(0) != z.dim(0)) {
        throw InvalidArgument("recon_forward: embedding " + shape_string(z.shape) +
                              " does not match head " + shape_string(w_r.shape));
    }
    const int C = z.dim(0), H = z.dim(1), W = z.dim(2), F = w_r.dim(1);
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    Tensor out({F, H, W});
    for (int c = 0; c < C; ++c) {
        const double* zp = z.data.data() + static_cast<std::size_t>(c) * plane;
        for (int j = 0; j < F; ++j) {
            const double w = w_r(c, j);
            if (w == 0.0) continue;
            double* op = out.data.data() + static_cast<std::size_t>(j) * plane;
            for (std::size_t i = 0; i < plane; ++i) op[i] += w * zp[i];
        }
    }
    return out;
}

struct ReconGrads {
    Tensor z;    // [C2,H,W]
    Tensor w_r;  // [C2,5]
};

inline ReconGrads recon_backward(const Tensor& grad_out, const Tensor& z, const Tensor& w_r) {
    const int C = z.dim(0), H = z.dim(1), W = z.dim(2), F = w_r.dim(1);
    if (grad_out.shape != std::vector<int>{F, H, W}) {
        throw InvalidArgument("recon_backward: grad shape " + shape_string(grad_out.shape) +
                              " does not match reconstruction output");
    }
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    ReconGrads g;
    g.z = Tensor(z.shape);
    g.w_r = Tensor(w_r.shape);
    for (int c = 0; c < C; ++c) {
        const double* zp = z.data.data() + static_cast<std::size_t>(c) * plane;
        double* gzp = g.z.data.data() + static_cast<std::size_t>(c) * plane;
        for (int j = 0; j < F; ++j) {
            const double* gop = grad_out.data.data() + static_cast<std::size_t>(j) * plane;
            const double w = w_r(c, j);
            double acc = 0.0;
            for (std::size_t i = 0; i < plane; ++i) {
                acc += zp[i] * gop[i];
                gzp[i] += w * gop[i];
            }
            g.w_r(c, j) = acc;
        }
    }
    return g;
}

/// Mean reconstruction strength per embedding channel: the mean absolute
/// color weight times the mean absolute spatial weight. Non-negative.
inline Tensor channel_strength(const Tensor& w_r) {
    if (w_r.rank() != 2 || w_r.dim(1) != 5) {
        throw InvalidArgument("channel_strength: head must be [C2,5], got " +
                              shape_string(w_r.shape));
    }
    const int C = w_r.dim(0);
    Tensor g({C});
    for (int c = 0; c < C; ++c) {
        const double color = (std::fabs(w_r(c, 0)) + std::fabs(w_r(c, 1)) +
                              std::fabs(w_r(c, 2))) / 3.0;
        const double spatial = (std::fabs(w_r(c, 3)) + std::fabs(w_r(c, 4))) / 2.0;
        g[c] = color * spatial;
    }
    return g;
}

/// m <- lambda * g + (1 - lambda) * m, applied once per epoch between the
/// forward and backward passes.
inline void update_memory(ChannelMemory& mem, const Tensor& g) {
    if (!mem.m.same_shape(g)) throw InvalidArgument("update_memory: strength shape mismatch");
    for (std::size_t c = 0; c < g.size(); ++c) {
        if (g[c] < 0.0) throw InvalidArgument("update_memory: strength must be non-negative");
        mem.m[c] = mem.lambda * g[c] + (1.0 - mem.lambda) * mem.m[c];
    }
}

/// Channel-wise gradient scale g/(g+m) in [0,1); identity in the forward
/// direction, applied in place to the gradient entering the embedder.
inline void gal_scale(Tensor& grad_z, const Tensor& g, const Tensor& m) {
    const int C = grad_z.dim(0);
    if (g.size() != static_cast<std::size_t>(C) || m.size() != static_cast<std::size_t>(C)) {
        throw InvalidArgument("gal_scale: strength/memory length must equal channel count");
    }
    const std::size_t plane = grad_z.size() / static_cast<std::size_t>(C);
    for (int c = 0; c < C; ++c) {
        const double scale = g[c] / (g[c] + m[c]);  // m > 0 guards the denominator
        double* p = grad_z.data.data() + static_cast<std::size_t>(c) * plane;
        for (std::size_t i = 0; i < plane; ++i) p[i] *= scale;
    }
}

/// Per-pixel bi-directional multiplier for the spatial-reconstruction
/// gradient: 1 below the contour threshold, -B_n above it. Identity forward.
inline double gbl_multiplier(double contour, double epsilon) {
    return contour <= epsilon ? 1.0 : -contour;
}

/// Applies the bi-directional scale in place to a [C,H,W] gradient whose
/// channels all live on the spatial-reconstruction branch.
inline void gbl_scale(Tensor& grad_spatial, const Tensor& contour, double epsilon) {
    const int C = grad_spatial.dim(0);
    const std::size_t plane = contour.size();
    if (grad_spatial.size() != plane * static_cast<std::size_t>(C)) {
        throw InvalidArgument("gbl_scale: contour map does not match gradient extent");
    }
    for (int c = 0; c < C; ++c) {
        double* p = grad_spatial.data.data() + static_cast<std::size_t>(c) * plane;
        for (std::size_t i = 0; i < plane; ++i) p[i] *= gbl_multiplier(contour[i], epsilon);
    }
}

}  // namespace lns
