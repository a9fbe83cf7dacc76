#pragma once

#include <cmath>
#include <vector>

#include "lns/error.hpp"
#include "lns/grad_rescale.hpp"
#include "lns/tensor.hpp"

// Unsupervised objective: a range-limited cluster loss (KL divergence of the
// masked soft assignment against its sharpened target, plus an out-of-range
// penalty) balanced against the color/position reconstruction loss.

namespace lns {

struct LossConfig {
    double beta = 10.0;        // cluster/reconstruction balance
    double phi = 1.0;          // color/spatial reconstruction balance
    int topn = 9;              // spatial neighbourhood size
    double epsilon_div = 1e-12;

    void validate() const {
        if (beta <= 0.0 || phi <= 0.0) throw InvalidArgument("beta and phi must be positive");
        if (topn < 1) throw InvalidArgument("topn must be at least 1");
        if (epsilon_div <= 0.0) throw InvalidArgument("epsilon_div must be positive");
    }
};

/// Masks the soft assignment to each pixel's Top-n seeds and renormalizes the
/// rows; rows of the result sum to 1 on their support.
inline Tensor range_limited_assign(const Tensor& p, const Tensor& mask) {
    if (!p.same_shape(mask)) throw InvalidArgument("range_limited_assign: shape mismatch");
    const int N = p.dim(0), K = p.dim(1);
    Tensor out(p.shape);
    for (int i = 0; i < N; ++i) {
        const double* prow = &p(i, 0);
        const double* mrow = &mask(i, 0);
        double* orow = &out(i, 0);
        double s = 0.0;
        for (int k = 0; k < K; ++k) s += prow[k] * mrow[k];
        if (s <= 0.0) {
            throw Error("range_limited_assign: row " + std::to_string(i) +
                        " lost all mass after masking");
        }
        const double inv = 1.0 / s;
        for (int k = 0; k < K; ++k) orow[k] = prow[k] * mrow[k] * inv;
    }
    return out;
}

/// Sharpened, cluster-size-normalized target: q_ik proportional to
/// p_ik^2 / f_k with f_k the soft cluster size. Zero wherever p is zero;
/// treated as a constant during backpropagation.
inline Tensor target_distribution(const Tensor& p_limited, double epsilon_div) {
    const int N = p_limited.dim(0), K = p_limited.dim(1);
    std::vector<double> cluster_size(static_cast<std::size_t>(K), 0.0);
    for (int i = 0; i < N; ++i) {
        const double* row = &p_limited(i, 0);
        for (int k = 0; k < K; ++k) cluster_size[static_cast<std::size_t>(k)] += row[k];
    }
    Tensor q(p_limited.shape);
    for (int i = 0; i < N; ++i) {
        const double* row = &p_limited(i, 0);
        double* qrow = &q(i, 0);
        double den = 0.0;
        for (int k = 0; k < K; ++k) {
            const double t = row[k] * row[k] / (cluster_size[static_cast<std::size_t>(k)] +
                                                epsilon_div);
            qrow[k] = t;
            den += t;
        }
        if (den > 0.0) {
            const double inv = 1.0 / den;
            for (int k = 0; k < K; ++k) qrow[k] *= inv;
        }
    }
    return q;
}

/// Cluster loss: per-pixel mean of the KL divergence q(log q - log p_limited)
/// over seeds, with 0 log 0 = 0, plus the mean per-pixel ratio of
/// out-of-range to in-range assignment mass. Both terms are averaged over
/// pixels so that the balance weight against the (mean-squared)
/// reconstruction loss is independent of the image size.
inline double cluster_loss(const Tensor& p, const Tensor& p_limited, const Tensor& q,
                           const Tensor& mask, double epsilon_div) {
    const int N = p.dim(0), K = p.dim(1);
    double kl = 0.0, penalty = 0.0;
    for (int i = 0; i < N; ++i) {
        const double* prow = &p(i, 0);
        const double* ptrow = &p_limited(i, 0);
        const double* qrow = &q(i, 0);
        const double* mrow = &mask(i, 0);
        double in_mass = 0.0, out_mass = 0.0;
        for (int k = 0; k < K; ++k) {
            if (qrow[k] > 0.0) {
                kl += qrow[k] * (std::log(qrow[k]) -
                                 std::log(std::max(ptrow[k], epsilon_div)));
            }
            in_mass += prow[k] * mrow[k];
            out_mass += prow[k] * (1.0 - mrow[k]);
        }
        penalty += out_mass / (in_mass + epsilon_div);
    }
    return (kl + penalty) / N;
}

/// Gradient of the cluster loss through the t-kernel assignment, with the
/// target held constant. `row_norm` is the pre-normalization row sum captured
/// by soft_assign. Yields both the dense per-pixel gradient and the gradient
/// with respect to each looked-up seed feature.
struct ClusterGrad {
    Tensor z;             // [C2,H,W]
    Tensor seed_feature;  // [K,C2]
};

inline ClusterGrad cluster_loss_grad(const Tensor& z, const std::vector<int>& seed_index,
                                     const Tensor& p, const Tensor& row_norm, const Tensor& q,
                                     const Tensor& mask, double epsilon_div) {
    const int C = z.dim(0);
    const std::size_t plane = static_cast<std::size_t>(z.dim(1)) * z.dim(2);
    const int N = p.dim(0), K = p.dim(1);
    ClusterGrad g;
    g.z = Tensor(z.shape);
    g.seed_feature = Tensor({K, C});
    std::vector<double> grad_p(static_cast<std::size_t>(K));
    for (int i = 0; i < N; ++i) {
        const double* prow = &p(i, 0);
        const double* qrow = &q(i, 0);
        const double* mrow = &mask(i, 0);
        double in_mass = 0.0, out_mass = 0.0, q_sum = 0.0;
        for (int k = 0; k < K; ++k) {
            in_mass += prow[k] * mrow[k];
            out_mass += prow[k] * (1.0 - mrow[k]);
            q_sum += qrow[k];
        }
        const double guarded = in_mass + epsilon_div;
        double dot = 0.0;
        for (int k = 0; k < K; ++k) {
            double d = mrow[k] * q_sum / in_mass;
            if (qrow[k] > 0.0) d -= qrow[k] / std::max(prow[k], epsilon_div);
            d /= N;  // KL term is a per-pixel mean
            // out-of-range penalty, also averaged over pixels
            d += ((1.0 - mrow[k]) * guarded - out_mass * mrow[k]) / (guarded * guarded * N);
            grad_p[static_cast<std::size_t>(k)] = d;
            dot += d * prow[k];
        }
        const double t_i = row_norm[static_cast<std::size_t>(i)];
        for (int k = 0; k < K; ++k) {
            const double grad_u = (grad_p[static_cast<std::size_t>(k)] - dot) / t_i;
            const double u = prow[k] * t_i;
            const double grad_dist = grad_u * (-0.5) * u * u * u;
            if (grad_dist == 0.0) continue;
            const std::size_t si = static_cast<std::size_t>(seed_index[static_cast<std::size_t>(k)]);
            for (int c = 0; c < C; ++c) {
                const double* zp = z.data.data() + static_cast<std::size_t>(c) * plane;
                const double diff = zp[static_cast<std::size_t>(i)] - zp[si];
                const double v = grad_dist * 2.0 * diff;
                g.z.data[static_cast<std::size_t>(c) * plane + i] += v;
                g.seed_feature(k, c) -= v;
            }
        }
    }
    return g;
}

struct ReconLoss {
    double color = 0.0;    // mean squared error over the 3 color channels
    double spatial = 0.0;  // mean squared error over the 2 position channels

    double combined(double phi) const { return color + phi * spatial; }
};

inline ReconLoss recon_loss(const Tensor& recon, const Tensor& input) {
    if (!recon.same_shape(input) || recon.dim(0) != 5) {
        throw InvalidArgument("recon_loss: expected matching [5,H,W] tensors");
    }
    const std::size_t plane = static_cast<std::size_t>(recon.dim(1)) * recon.dim(2);
    ReconLoss out;
    for (int j = 0; j < 5; ++j) {
        const double* rp = recon.data.data() + static_cast<std::size_t>(j) * plane;
        const double* xp = input.data.data() + static_cast<std::size_t>(j) * plane;
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) {
            const double d = rp[i] - xp[i];
            acc += d * d;
        }
        if (j < 3) {
            out.color += acc;
        } else {
            out.spatial += acc;
        }
    }
    out.color /= 3.0 * plane;
    out.spatial /= 2.0 * plane;
    return out;
}

/// Gradient of color + phi * spatial reconstruction with respect to the
/// reconstruction output. When `gbl_enabled`, the spatial half is routed
/// through the per-pixel bi-directional multiplier, which realizes the
/// contour-driven sign flip.
inline Tensor recon_loss_grad(const Tensor& recon, const Tensor& input, const Tensor& contour,
                              double phi, bool gbl_enabled, double contour_epsilon) {
    const std::size_t plane = static_cast<std::size_t>(recon.dim(1)) * recon.dim(2);
    Tensor g(recon.shape);
    for (int j = 0; j < 5; ++j) {
        const double* rp = recon.data.data() + static_cast<std::size_t>(j) * plane;
        const double* xp = input.data.data() + static_cast<std::size_t>(j) * plane;
        double* gp = g.data.data() + static_cast<std::size_t>(j) * plane;
        const double scale = j < 3 ? 2.0 / (3.0 * plane) : phi * 2.0 / (2.0 * plane);
        for (std::size_t i = 0; i < plane; ++i) {
            double v = scale * (rp[i] - xp[i]);
            if (j >= 3 && gbl_enabled) v *= gbl_multiplier(contour[i], contour_epsilon);
            gp[i] = v;
        }
    }
    return g;
}

/// Combines the cluster and reconstruction terms; rejects non-finite values
/// with an error carrying the task/epoch that produced them.
inline double total_loss(double cluster, double recon, double beta, int task_id = -1,
                         int epoch = -1) {
    const double total = cluster + beta * recon;
    if (!std::isfinite(total)) {
        throw Diverged("non-finite loss (cluster " + std::to_string(cluster) + ", recon " +
                       std::to_string(recon) + ") at task " + std::to_string(task_id) +
                       " epoch " + std::to_string(epoch), task_id, epoch);
    }
    return total;
}

}  // namespace lns
