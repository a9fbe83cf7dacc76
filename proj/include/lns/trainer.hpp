#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "lns/clustering.hpp"
#include "lns/loss.hpp"
#include "lns/model.hpp"

// Lifelong optimization loop: one task per image, a fixed number of epochs
// per task, a two-phase schedule (feature learning with the seed projection
// locked, then seed updating with the embedder locked), Adam updates, and the
// gradient-rescaling hooks between the loss and the embedder.

namespace lns {

struct Schedule {
    int max_epochs = 50;
    int feature_epochs = 40;
    int seed_epochs = 10;
    double learning_rate = 3e-4;

    void validate() const {
        if (max_epochs < 1 || feature_epochs < 0 || seed_epochs < 0) {
            throw InvalidArgument("schedule epochs must be non-negative, total at least 1");
        }
        if (feature_epochs + seed_epochs != max_epochs) {
            throw InvalidArgument("feature epochs " + std::to_string(feature_epochs) +
                                  " plus seed epochs " + std::to_string(seed_epochs) +
                                  " must equal max epochs " + std::to_string(max_epochs));
        }
        if (learning_rate < 0.0) throw InvalidArgument("learning rate must be non-negative");
    }

    static Schedule with_epochs(int max, int feature, double lr) {
        Schedule s{max, feature, max - feature, lr};
        s.validate();
        return s;
    }
};

struct TrainOptions {
    bool enable_gal = true;
    bool enable_gbl = true;
    bool reset_adam_per_task = false;
};

enum class Phase { feature, seed };

struct EpochRecord {
    int task_id = 0;
    int epoch = 0;  // 1-based
    Phase phase = Phase::feature;
    double cluster = 0.0, color = 0.0, spatial = 0.0, total = 0.0;
};

/// Everything one epoch's forward computes, kept for the backward pass.
struct ForwardPass {
    EmbedderActivations emb;
    SeedGrid grid;
    Tensor z_pooled;  // [K,C2]
    SeedSet seeds;
    Tensor p;         // [N,K]
    Tensor row_norm;  // [N] pre-normalization row sums
    Tensor mask;      // [N,K]
    Tensor p_limited;
    Tensor q;
    Tensor recon;     // [5,H,W]
    ReconLoss recon_terms;
    double cluster = 0.0;
    double total = 0.0;
    int effective_topn = 0;
};

inline ForwardPass forward_pass(const ModelState& s, const FeatureImage& img, int requested_k,
                                int task_id = -1, int epoch = -1) {
    ForwardPass fp;
    fp.emb = embedder_forward(img.features, s.embedder, s.config.embedder);
    fp.grid = make_grid(img.height, img.width, requested_k);
    fp.z_pooled = adaptive_avg_pool_forward(fp.emb.z, fp.grid.rows, fp.grid.cols);
    fp.seeds = seed_offsets(fp.z_pooled, s.seed_weight, fp.grid);
    fp.p = soft_assign(fp.emb.z, fp.seeds.index, &fp.row_norm);
    fp.effective_topn = std::min(s.config.loss.topn, fp.grid.count());
    fp.mask = topn_mask(fp.seeds, img.height, img.width, fp.effective_topn);
    fp.p_limited = range_limited_assign(fp.p, fp.mask);
    fp.q = target_distribution(fp.p_limited, s.config.loss.epsilon_div);
    fp.recon = recon_forward(fp.emb.z, s.recon_weight);
    fp.recon_terms = recon_loss(fp.recon, img.features);
    fp.cluster = cluster_loss(fp.p, fp.p_limited, fp.q, fp.mask, s.config.loss.epsilon_div);
    fp.total = total_loss(fp.cluster, fp.recon_terms.combined(s.config.loss.phi),
                          s.config.loss.beta, task_id, epoch);
    return fp;
}

/// Gradient mirror of the learnable state.
struct Gradients {
    EmbedderWeights embedder;
    Tensor seed_weight;
    Tensor recon_weight;

    static Gradients zeros(const ModelConfig& cfg) {
        Gradients g;
        g.embedder = EmbedderWeights::zeros(cfg.embedder);
        g.seed_weight = Tensor({cfg.embedder.c2, 2});
        g.recon_weight = Tensor({cfg.embedder.c2, 5});
        return g;
    }
};

namespace detail {

/// d(loss)/d(seed position) via central spatial differences of the embedding
/// at the seed pixel, contracted with the seed-feature gradient. This is the
/// straight-through surrogate for the non-differentiable index lookup.
inline void seed_position_grad(const Tensor& z, const SeedSet& seeds, const Tensor& seed_feat_grad,
                               std::vector<double>& d_row, std::vector<double>& d_col) {
    const int C = z.dim(0), H = z.dim(1), W = z.dim(2);
    const int K = static_cast<int>(seeds.index.size());
    d_row.assign(static_cast<std::size_t>(K), 0.0);
    d_col.assign(static_cast<std::size_t>(K), 0.0);
    for (int k = 0; k < K; ++k) {
        const int r = seeds.row[k], c0 = seeds.col[k];
        const int r_up = std::max(r - 1, 0), r_dn = std::min(r + 1, H - 1);
        const int c_lf = std::max(c0 - 1, 0), c_rt = std::min(c0 + 1, W - 1);
        const double inv_dr = r_dn > r_up ? 1.0 / (r_dn - r_up) : 0.0;
        const double inv_dc = c_rt > c_lf ? 1.0 / (c_rt - c_lf) : 0.0;
        for (int c = 0; c < C; ++c) {
            const double dz_dr = (z(c, r_dn, c0) - z(c, r_up, c0)) * inv_dr;
            const double dz_dc = (z(c, r, c_rt) - z(c, r, c_lf)) * inv_dc;
            d_row[static_cast<std::size_t>(k)] += seed_feat_grad(k, c) * dz_dr;
            d_col[static_cast<std::size_t>(k)] += seed_feat_grad(k, c) * dz_dc;
        }
    }
}

}  // namespace detail

/// Assembles all gradients for one epoch. The embedder gradient is produced
/// only in the feature phase, the seed-projection gradient only in the seed
/// phase; the reconstruction head always trains. GAL rescales the gradient
/// entering the embedder, GBL the spatial reconstruction branch.
inline Gradients backward_pass(const ModelState& s, const ForwardPass& fp,
                               const FeatureImage& img, Phase phase, const TrainOptions& opts) {
    const ModelConfig& cfg = s.config;
    Gradients g = Gradients::zeros(cfg);

    // reconstruction branch (carries the total-loss weight beta)
    Tensor grad_recon_out = recon_loss_grad(fp.recon, img.features, img.contour, cfg.loss.phi,
                                            opts.enable_gbl, cfg.contour_epsilon);
    for (auto& v : grad_recon_out.data) v *= cfg.loss.beta;
    ReconGrads rec = recon_backward(grad_recon_out, fp.emb.z, s.recon_weight);
    g.recon_weight = std::move(rec.w_r);

    // cluster branch
    ClusterGrad cg = cluster_loss_grad(fp.emb.z, fp.seeds.index, fp.p, fp.row_norm, fp.q, fp.mask,
                                       cfg.loss.epsilon_div);

    Tensor grad_z = std::move(rec.z);
    for (std::size_t i = 0; i < grad_z.size(); ++i) grad_z[i] += cg.z[i];
    // the seed lookup scatters its gradient back into the embedding
    const std::size_t plane = static_cast<std::size_t>(img.height) * img.width;
    const int K = fp.grid.count();
    for (int k = 0; k < K; ++k) {
        const std::size_t pix = static_cast<std::size_t>(fp.seeds.index[k]);
        for (int c = 0; c < cfg.embedder.c2; ++c) {
            grad_z.data[static_cast<std::size_t>(c) * plane + pix] += cg.seed_feature(k, c);
        }
    }

    if (phase == Phase::seed) {
        // straight-through path: loss -> seed feature -> seed position ->
        // shift ratios -> projection weights
        std::vector<double> d_row, d_col;
        detail::seed_position_grad(fp.emb.z, fp.seeds, cg.seed_feature, d_row, d_col);
        Tensor grad_shift({K, 2});
        for (int k = 0; k < K; ++k) {
            grad_shift(k, 0) = d_row[static_cast<std::size_t>(k)] * fp.grid.cell_h;
            grad_shift(k, 1) = d_col[static_cast<std::size_t>(k)] * fp.grid.cell_w;
        }
        Tensor grad_pre = sigmoid_backward(grad_shift, fp.seeds.shift);
        g.seed_weight = linear_backward(grad_pre, fp.z_pooled, s.seed_weight).weights;
    } else {
        if (opts.enable_gal) {
            gal_scale(grad_z, channel_strength(s.recon_weight), s.memory.m);
        }
        g.embedder = embedder_backward(grad_z, fp.emb, s.embedder, cfg.embedder);
    }
    return g;
}

/// Standard bias-corrected Adam update, in place.
inline void adam_step(Tensor& param, const Tensor& grad, Tensor& m1, Tensor& m2, std::uint64_t t,
                      double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
    if (!param.same_shape(grad)) throw InvalidArgument("adam_step: gradient shape mismatch");
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < param.size(); ++i) {
        m1[i] = beta1 * m1[i] + (1.0 - beta1) * grad[i];
        m2[i] = beta2 * m2[i] + (1.0 - beta2) * grad[i] * grad[i];
        const double mhat = m1[i] / c1;
        const double vhat = m2[i] / c2;
        param[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

namespace detail {

inline bool group_trains(ParamGroup group, Phase phase) {
    switch (group) {
        case ParamGroup::embedder: return phase == Phase::feature;
        case ParamGroup::seed: return phase == Phase::seed;
        case ParamGroup::recon: return true;  // the head powers the channel strength every epoch
    }
    return false;
}

}  // namespace detail

/// Trains one task (one image) for the scheduled number of epochs. On a
/// non-finite loss the state is rolled back to the task start and the
/// divergence error is rethrown.
inline std::vector<EpochRecord> train_task(ModelState& s, const FeatureImage& img,
                                           int requested_k, const Schedule& schedule,
                                           const TrainOptions& opts, int task_id = 0) {
    schedule.validate();
    const ModelState snapshot = s;
    if (opts.reset_adam_per_task) {
        for (auto& t : s.adam.m1) std::fill(t.data.begin(), t.data.end(), 0.0);
        for (auto& t : s.adam.m2) std::fill(t.data.begin(), t.data.end(), 0.0);
        s.adam.step = 0;
    }
    std::vector<EpochRecord> log;
    log.reserve(static_cast<std::size_t>(schedule.max_epochs));
    try {
        for (int epoch = 1; epoch <= schedule.max_epochs; ++epoch) {
            const Phase phase = epoch <= schedule.feature_epochs ? Phase::feature : Phase::seed;
            ForwardPass fp = forward_pass(s, img, requested_k, task_id, epoch);
            update_memory(s.memory, channel_strength(s.recon_weight));
            Gradients grads = backward_pass(s, fp, img, phase, opts);

            s.adam.step += 1;
            std::size_t pi = 0;
            visit_params(s, [&](const char* name, Tensor& param, ParamGroup group) {
                if (detail::group_trains(group, phase)) {
                    Tensor* grad = nullptr;
                    visit_params(grads, [&](const char* n2, Tensor& t, ParamGroup) {
                        if (std::strcmp(name, n2) == 0) grad = &t;
                    });
                    adam_step(param, *grad, s.adam.m1[pi], s.adam.m2[pi], s.adam.step,
                              schedule.learning_rate);
                }
                ++pi;
            });
            log.push_back({task_id, epoch, phase, fp.cluster, fp.recon_terms.color,
                           fp.recon_terms.spatial, fp.total});
        }
    } catch (const Diverged&) {
        s = snapshot;
        throw;
    }
    s.tasks_seen += 1;
    return log;
}

struct StreamTaskResult {
    int task_id = 0;
    std::string path;
    bool loaded = false;
    bool diverged = false;
    double final_cluster = 0.0, final_total = 0.0;
    std::string error;
};

struct StreamLog {
    std::vector<EpochRecord> epochs;
    std::vector<StreamTaskResult> tasks;
    int failures = 0;
};

/// Sequentially trains one unified model over an ordered image stream. Images
/// that fail to load are reported and skipped; a diverged task leaves the
/// state rolled back and the stream moves on.
inline StreamLog train_stream(ModelState& s, const std::vector<std::string>& paths,
                              int requested_k, const Schedule& schedule,
                              const TrainOptions& opts) {
    if (paths.empty()) throw InvalidArgument("image stream is empty");
    StreamLog log;
    int task_id = 0;
    for (const auto& path : paths) {
        StreamTaskResult result;
        result.task_id = task_id;
        result.path = path;
        try {
            const Raster raster = load_image(path);
            const FeatureImage img = prepare_image(raster, s.config.color_space);
            result.loaded = true;
            auto epochs = train_task(s, img, requested_k, schedule, opts, task_id);
            result.final_cluster = epochs.back().cluster;
            result.final_total = epochs.back().total;
            log.epochs.insert(log.epochs.end(), epochs.begin(), epochs.end());
        } catch (const Diverged& e) {
            result.diverged = true;
            result.error = e.what();
            log.failures += 1;
        } catch (const Error& e) {
            result.error = e.what();
            log.failures += 1;
        }
        log.tasks.push_back(std::move(result));
        ++task_id;
    }
    return log;
}

/// Forward-only loss evaluation (for retention measurements).
struct LossReport {
    double cluster = 0.0, color = 0.0, spatial = 0.0, total = 0.0;
};

inline LossReport evaluate_losses(const ModelState& s, const FeatureImage& img, int requested_k) {
    ForwardPass fp = forward_pass(s, img, requested_k);
    return {fp.cluster, fp.recon_terms.color, fp.recon_terms.spatial, fp.total};
}

/// Inference: embed, estimate seeds, assign, argmax. Skips the loss
/// machinery entirely; connectivity enforcement is a separate
/// post-processing step.
inline std::vector<int> segment_labels(const ModelState& s, const FeatureImage& img,
                                       int requested_k) {
    const EmbedderActivations emb = embedder_forward(img.features, s.embedder, s.config.embedder);
    const SeedGrid grid = make_grid(img.height, img.width, requested_k);
    const Tensor z_pooled = adaptive_avg_pool_forward(emb.z, grid.rows, grid.cols);
    const SeedSet seeds = seed_offsets(z_pooled, s.seed_weight, grid);
    return hard_labels(soft_assign(emb.z, seeds.index));
}

}  // namespace lns
