#pragma once

#include <algorithm>
#include <cstdint>
#include <queue>
#include <set>
#include <unordered_map>
#include <vector>

#include "lns/error.hpp"

// Post-processing and benchmark metrics for label maps: 4-connected
// component analysis with small-fragment merging, boundary maps, boundary
// recall/precision under a pixel tolerance, achievable segmentation accuracy
// and the recall-weighted F score, with best-of-many ground-truth selection.

namespace lns {

/// Per-pixel superpixel index map. After enforce_connectivity every label is
/// one 4-connected component and labels are consecutive 0..num_segments-1.
struct LabelMap {
    int height = 0;
    int width = 0;
    std::vector<int> labels;
    int num_segments = 0;

    static LabelMap from_labels(std::vector<int> l, int h, int w) {
        if (l.size() != static_cast<std::size_t>(h) * w) {
            throw InvalidArgument("label buffer does not match dimensions");
        }
        LabelMap m;
        m.height = h;
        m.width = w;
        m.labels = std::move(l);
        int hi = 0;
        for (int v : m.labels) {
            if (v < 0) throw InvalidArgument("labels must be non-negative");
            hi = std::max(hi, v);
        }
        m.num_segments = hi + 1;
        return m;
    }
};

struct MetricReport {
    double br = 0.0, bp = 0.0, asa = 0.0, f_beta = 0.0;
    double beta = 4.0;
    int boundary_tolerance = 2;
    int num_segments = 0;
    int chosen_gt = 0;
    bool empty_gt_boundary = false;
    bool empty_pred_boundary = false;
};

namespace detail {

struct CompGraph {
    std::vector<int> comp_of;                              // per pixel
    std::vector<int> parent, size, label, first;           // per component
    std::vector<std::unordered_map<int, long>> adjacency;  // boundary lengths

    int find(int c) {
        while (parent[static_cast<std::size_t>(c)] != c) {
            parent[static_cast<std::size_t>(c)] =
                parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(c)])];
            c = parent[static_cast<std::size_t>(c)];
        }
        return c;
    }
};

inline CompGraph build_components(const std::vector<int>& labels, int H, int W) {
    CompGraph g;
    g.comp_of.assign(labels.size(), -1);
    std::vector<int> stack;
    for (int start = 0; start < static_cast<int>(labels.size()); ++start) {
        if (g.comp_of[static_cast<std::size_t>(start)] >= 0) continue;
        const int id = static_cast<int>(g.parent.size());
        g.parent.push_back(id);
        g.size.push_back(0);
        g.label.push_back(labels[static_cast<std::size_t>(start)]);
        g.first.push_back(start);
        stack.push_back(start);
        g.comp_of[static_cast<std::size_t>(start)] = id;
        while (!stack.empty()) {
            const int p = stack.back();
            stack.pop_back();
            g.size[static_cast<std::size_t>(id)] += 1;
            const int y = p / W, x = p % W;
            const int neighbors[4] = {y > 0 ? p - W : -1, y + 1 < H ? p + W : -1,
                                      x > 0 ? p - 1 : -1, x + 1 < W ? p + 1 : -1};
            for (int q : neighbors) {
                if (q < 0 || g.comp_of[static_cast<std::size_t>(q)] >= 0) continue;
                if (labels[static_cast<std::size_t>(q)] != labels[static_cast<std::size_t>(p)])
                    continue;
                g.comp_of[static_cast<std::size_t>(q)] = id;
                stack.push_back(q);
            }
        }
    }
    g.adjacency.resize(g.parent.size());
    auto touch = [&](int p, int q) {
        const int a = g.comp_of[static_cast<std::size_t>(p)];
        const int b = g.comp_of[static_cast<std::size_t>(q)];
        if (a == b) return;
        g.adjacency[static_cast<std::size_t>(a)][b] += 1;
        g.adjacency[static_cast<std::size_t>(b)][a] += 1;
    };
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const int p = y * W + x;
            if (x + 1 < W) touch(p, p + 1);
            if (y + 1 < H) touch(p, p + W);
        }
    return g;
}

}  // namespace detail

/// Merges every 4-connected component smaller than
/// min_size_fraction * (pixels / segment count) into the neighboring
/// component it shares the longest boundary with (ties toward the lower
/// original label). Output labels are compacted to 0..num_segments-1 in
/// scan order. `expected_segments` defaults to the number of distinct input
/// labels.
inline LabelMap enforce_connectivity(const std::vector<int>& labels, int H, int W,
                                     double min_size_fraction = 0.25,
                                     int expected_segments = 0) {
    if (labels.size() != static_cast<std::size_t>(H) * W) {
        throw InvalidArgument("label buffer does not match dimensions");
    }
    detail::CompGraph g = detail::build_components(labels, H, W);

    int k = expected_segments;
    if (k <= 0) {
        std::set<int> distinct(labels.begin(), labels.end());
        k = static_cast<int>(distinct.size());
    }
    const double threshold = min_size_fraction * (static_cast<double>(labels.size()) / k);

    std::set<int> pending;
    for (int c = 0; c < static_cast<int>(g.parent.size()); ++c) {
        if (g.size[static_cast<std::size_t>(c)] < threshold) pending.insert(c);
    }
    while (!pending.empty()) {
        const int c = *pending.begin();
        pending.erase(pending.begin());
        if (g.find(c) != c) continue;  // already absorbed
        // canonicalize neighbor counts to current roots
        std::unordered_map<int, long> neighbors;
        for (const auto& [n, count] : g.adjacency[static_cast<std::size_t>(c)]) {
            const int root = g.find(n);
            if (root != c) neighbors[root] += count;
        }
        if (neighbors.empty()) continue;  // nothing to merge into
        int best = -1;
        long best_count = -1;
        for (const auto& [n, count] : neighbors) {
            if (count > best_count) {
                best = n;
                best_count = count;
            } else if (count == best_count) {
                const auto nl = g.label[static_cast<std::size_t>(n)];
                const auto bl = g.label[static_cast<std::size_t>(best)];
                if (nl < bl || (nl == bl && n < best)) best = n;
            }
        }
        // absorb c into best; the survivor keeps best's label
        pending.erase(best);
        g.parent[static_cast<std::size_t>(c)] = best;
        g.size[static_cast<std::size_t>(best)] += g.size[static_cast<std::size_t>(c)];
        g.first[static_cast<std::size_t>(best)] = std::min(g.first[static_cast<std::size_t>(best)],
                                                           g.first[static_cast<std::size_t>(c)]);
        auto& dst = g.adjacency[static_cast<std::size_t>(best)];
        for (const auto& [n, count] : g.adjacency[static_cast<std::size_t>(c)]) {
            if (g.find(n) != best) dst[n] += count;
        }
        g.adjacency[static_cast<std::size_t>(c)].clear();
        if (g.size[static_cast<std::size_t>(best)] < threshold) pending.insert(best);
    }

    // compact to consecutive labels in first-pixel scan order
    std::vector<std::pair<int, int>> roots;  // (first pixel, root)
    for (int c = 0; c < static_cast<int>(g.parent.size()); ++c) {
        if (g.find(c) == c) roots.emplace_back(g.first[static_cast<std::size_t>(c)], c);
    }
    std::sort(roots.begin(), roots.end());
    std::unordered_map<int, int> compact;
    for (std::size_t i = 0; i < roots.size(); ++i) compact[roots[i].second] = static_cast<int>(i);

    LabelMap out;
    out.height = H;
    out.width = W;
    out.num_segments = static_cast<int>(roots.size());
    out.labels.resize(labels.size());
    for (std::size_t p = 0; p < labels.size(); ++p) {
        out.labels[p] = compact[g.find(g.comp_of[p])];
    }
    return out;
}

/// Marks a pixel iff its right or down 4-neighbor carries a different label.
inline std::vector<std::uint8_t> boundary_map(const std::vector<int>& labels, int H, int W) {
    std::vector<std::uint8_t> b(labels.size(), 0);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const std::size_t p = static_cast<std::size_t>(y) * W + x;
            if (x + 1 < W && labels[p] != labels[p + 1]) b[p] = 1;
            if (y + 1 < H && labels[p] != labels[p + static_cast<std::size_t>(W)]) b[p] = 1;
        }
    return b;
}

namespace detail {

/// Chebyshev dilation by `radius`, separable box max.
inline std::vector<std::uint8_t> dilate(const std::vector<std::uint8_t>& b, int H, int W,
                                        int radius) {
    if (radius <= 0) return b;
    std::vector<std::uint8_t> tmp(b.size(), 0), out(b.size(), 0);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            std::uint8_t v = 0;
            for (int d = -radius; d <= radius && !v; ++d) {
                const int xx = x + d;
                if (xx >= 0 && xx < W) v = b[static_cast<std::size_t>(y) * W + xx];
            }
            tmp[static_cast<std::size_t>(y) * W + x] = v;
        }
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            std::uint8_t v = 0;
            for (int d = -radius; d <= radius && !v; ++d) {
                const int yy = y + d;
                if (yy >= 0 && yy < H) v = tmp[static_cast<std::size_t>(yy) * W + x];
            }
            out[static_cast<std::size_t>(y) * W + x] = v;
        }
    return out;
}

}  // namespace detail

struct BoundaryScore {
    double recall = 0.0;
    double precision = 0.0;
    bool empty_gt = false;
    bool empty_pred = false;
};

/// Recall: fraction of ground-truth boundary pixels with a predicted boundary
/// pixel within Chebyshev distance <= tolerance; precision symmetrically. An
/// empty side scores 1 and is flagged.
inline BoundaryScore boundary_recall_precision(const std::vector<std::uint8_t>& pred,
                                               const std::vector<std::uint8_t>& gt, int H, int W,
                                               int tolerance = 2) {
    if (pred.size() != gt.size() || pred.size() != static_cast<std::size_t>(H) * W) {
        throw InvalidArgument("boundary maps must share dimensions");
    }
    BoundaryScore s;
    const auto pred_wide = detail::dilate(pred, H, W, tolerance);
    const auto gt_wide = detail::dilate(gt, H, W, tolerance);
    long gt_total = 0, gt_hit = 0, pred_total = 0, pred_hit = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        if (gt[i]) {
            ++gt_total;
            if (pred_wide[i]) ++gt_hit;
        }
        if (pred[i]) {
            ++pred_total;
            if (gt_wide[i]) ++pred_hit;
        }
    }
    s.empty_gt = gt_total == 0;
    s.empty_pred = pred_total == 0;
    s.recall = gt_total ? static_cast<double>(gt_hit) / gt_total : 1.0;
    s.precision = pred_total ? static_cast<double>(pred_hit) / pred_total : 1.0;
    return s;
}

/// Achievable segmentation accuracy: each predicted segment is credited with
/// its largest overlap against any ground-truth segment.
inline double asa(const std::vector<int>& pred, const std::vector<int>& gt, int H, int W) {
    if (pred.size() != gt.size() || pred.size() != static_cast<std::size_t>(H) * W) {
        throw InvalidArgument("label maps must share dimensions");
    }
    std::unordered_map<std::uint64_t, long> overlap;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        overlap[(static_cast<std::uint64_t>(pred[i]) << 32) |
                static_cast<std::uint32_t>(gt[i])] += 1;
    }
    std::unordered_map<std::uint32_t, long> best;
    for (const auto& [key, count] : overlap) {
        auto& b = best[static_cast<std::uint32_t>(key >> 32)];
        b = std::max(b, count);
    }
    long covered = 0;
    for (const auto& [label, count] : best) covered += count;
    return static_cast<double>(covered) / pred.size();
}

/// Recall-weighted F score; zero when the denominator vanishes.
inline double f_beta_score(double precision, double recall, double beta = 4.0) {
    const double denom = beta * beta * precision + recall;
    if (denom <= 0.0) return 0.0;
    return (1.0 + beta * beta) * precision * recall / denom;
}

inline MetricReport evaluate(const LabelMap& pred, const LabelMap& gt, double beta = 4.0,
                             int tolerance = 2) {
    if (pred.height != gt.height || pred.width != gt.width) {
        throw InvalidArgument("prediction is " + std::to_string(pred.width) + "x" +
                              std::to_string(pred.height) + " but ground truth is " +
                              std::to_string(gt.width) + "x" + std::to_string(gt.height));
    }
    MetricReport r;
    r.beta = beta;
    r.boundary_tolerance = tolerance;
    r.num_segments = pred.num_segments;
    const auto pb = boundary_map(pred.labels, pred.height, pred.width);
    const auto gb = boundary_map(gt.labels, gt.height, gt.width);
    const auto score = boundary_recall_precision(pb, gb, pred.height, pred.width, tolerance);
    r.br = score.recall;
    r.bp = score.precision;
    r.empty_gt_boundary = score.empty_gt;
    r.empty_pred_boundary = score.empty_pred;
    r.asa = asa(pred.labels, gt.labels, pred.height, pred.width);
    r.f_beta = f_beta_score(r.bp, r.br, beta);
    return r;
}

/// Scores against every ground truth and reports the one whose F score is
/// highest (ties toward the earlier entry); the choice is recorded.
inline MetricReport evaluate_multi_gt(const LabelMap& pred, const std::vector<LabelMap>& gts,
                                      double beta = 4.0, int tolerance = 2) {
    if (gts.empty()) throw InvalidArgument("at least one ground truth is required");
    MetricReport best;
    for (std::size_t i = 0; i < gts.size(); ++i) {
        MetricReport r = evaluate(pred, gts[i], beta, tolerance);
        r.chosen_gt = static_cast<int>(i);
        if (i == 0 || r.f_beta > best.f_beta) best = r;
    }
    return best;
}

}  // namespace lns
