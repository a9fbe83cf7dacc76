#pragma once

#include <array>
#include <numeric>

#include "lns/ops.hpp"
#include "lns/tensor.hpp"

// Feature embedder: three parallel dilated 3x3 convolutions over the
// 5-channel input are concatenated into a multi-scale stack, then two plain
// 3x3 convolutions map it into the cluster-friendly embedding. Shallow on
// purpose; the receptive field grows through dilation, not depth.

namespace lns {

struct EmbedderConfig {
    int input_channels = 5;
    std::array<int, 3> aspp_channels{4, 3, 3};  // smallest dilation gets the extra channel
    std::array<int, 3> dilations{1, 2, 4};
    int c1 = 10;
    int c2 = 20;

    int multi_scale_channels() const {
        return aspp_channels[0] + aspp_channels[1] + aspp_channels[2];
    }
    ConvSpec aspp_spec(int branch) const {
        return ConvSpec{input_channels, aspp_channels[static_cast<std::size_t>(branch)], 3,
                        dilations[static_cast<std::size_t>(branch)], true};
    }
    ConvSpec conv1_spec() const { return ConvSpec{multi_scale_channels(), c1, 3, 1, true}; }
    ConvSpec conv2_spec() const { return ConvSpec{c1, c2, 3, 1, true}; }
};

/// Learnable tensors of the embedder; also reused as the gradient container.
struct EmbedderWeights {
    std::array<Tensor, 3> aspp_weight;
    std::array<Tensor, 3> aspp_bias;
    Tensor conv1_weight, conv1_bias;
    Tensor conv2_weight, conv2_bias;

    static EmbedderWeights zeros(const EmbedderConfig& cfg) {
        EmbedderWeights w;
        for (int b = 0; b < 3; ++b) {
            const ConvSpec s = cfg.aspp_spec(b);
            w.aspp_weight[b] = Tensor({s.out_channels, s.in_channels, 3, 3});
            w.aspp_bias[b] = Tensor({s.out_channels});
        }
        w.conv1_weight = Tensor({cfg.c1, cfg.multi_scale_channels(), 3, 3});
        w.conv1_bias = Tensor({cfg.c1});
        w.conv2_weight = Tensor({cfg.c2, cfg.c1, 3, 3});
        w.conv2_bias = Tensor({cfg.c2});
        return w;
    }
};

/// Visits every embedder tensor with a stable name, in serialization order.
template <class W, class F>
void visit_embedder(W& w, F&& f) {
    f("embed.aspp0.weight", w.aspp_weight[0]);
    f("embed.aspp0.bias", w.aspp_bias[0]);
    f("embed.aspp1.weight", w.aspp_weight[1]);
    f("embed.aspp1.bias", w.aspp_bias[1]);
    f("embed.aspp2.weight", w.aspp_weight[2]);
    f("embed.aspp2.bias", w.aspp_bias[2]);
    f("embed.conv1.weight", w.conv1_weight);
    f("embed.conv1.bias", w.conv1_bias);
    f("embed.conv2.weight", w.conv2_weight);
    f("embed.conv2.bias", w.conv2_bias);
}

/// Saved forward activations, consumed by the backward pass.
struct EmbedderActivations {
    Tensor input;      // [5,H,W]
    Tensor stack_pre;  // [Cm,H,W] multi-scale concat before ReLU
    Tensor stack;      // ReLU(stack_pre)
    Tensor h1_pre;     // conv1 output before ReLU
    Tensor h1;
    Tensor z_pre;      // conv2 output before ReLU
    Tensor z;          // [C2,H,W] embedding
};

inline EmbedderActivations embedder_forward(const Tensor& features, const EmbedderWeights& w,
                                            const EmbedderConfig& cfg) {
    if (features.rank() != 3 || features.dim(0) != cfg.input_channels) {
        throw InvalidArgument("embedder: expected [" + std::to_string(cfg.input_channels) +
                              ",H,W] input, got " + shape_string(features.shape));
    }
    const int H = features.dim(1), W = features.dim(2);
    EmbedderActivations act;
    act.input = features;
    act.stack_pre = Tensor({cfg.multi_scale_channels(), H, W});
    int offset = 0;
    for (int b = 0; b < 3; ++b) {
        const ConvSpec spec = cfg.aspp_spec(b);
        Tensor branch = conv2d_forward(features, spec, w.aspp_weight[b], &w.aspp_bias[b]);
        std::copy(branch.data.begin(), branch.data.end(),
                  act.stack_pre.data.begin() +
                      static_cast<std::size_t>(offset) * H * W);
        offset += spec.out_channels;
    }
    act.stack = relu_forward(act.stack_pre);
    act.h1_pre = conv2d_forward(act.stack, cfg.conv1_spec(), w.conv1_weight, &w.conv1_bias);
    act.h1 = relu_forward(act.h1_pre);
    act.z_pre = conv2d_forward(act.h1, cfg.conv2_spec(), w.conv2_weight, &w.conv2_bias);
    act.z = relu_forward(act.z_pre);
    return act;
}

/// Reverse pass through the whole embedder; consumes the (possibly rescaled)
/// gradient at the embedding and produces gradients for every weight.
inline EmbedderWeights embedder_backward(const Tensor& grad_z, const EmbedderActivations& act,
                                         const EmbedderWeights& w, const EmbedderConfig& cfg) {
    if (grad_z.shape != act.z.shape) {
        throw InvalidArgument("embedder_backward: grad shape " + shape_string(grad_z.shape) +
                              " does not match embedding " + shape_string(act.z.shape));
    }
    const int H = act.input.dim(1), W = act.input.dim(2);
    EmbedderWeights g = EmbedderWeights::zeros(cfg);

    Tensor gz_pre = relu_backward(grad_z, act.z_pre);
    ConvGrads c2 = conv2d_backward(gz_pre, act.h1, cfg.conv2_spec(), w.conv2_weight);
    g.conv2_weight = std::move(c2.weights);
    g.conv2_bias = std::move(c2.bias);

    Tensor gh1_pre = relu_backward(c2.input, act.h1_pre);
    ConvGrads c1 = conv2d_backward(gh1_pre, act.stack, cfg.conv1_spec(), w.conv1_weight);
    g.conv1_weight = std::move(c1.weights);
    g.conv1_bias = std::move(c1.bias);

    Tensor gstack_pre = relu_backward(c1.input, act.stack_pre);
    int offset = 0;
    for (int b = 0; b < 3; ++b) {
        const ConvSpec spec = cfg.aspp_spec(b);
        Tensor slice({spec.out_channels, H, W});
        std::copy(gstack_pre.data.begin() + static_cast<std::size_t>(offset) * H * W,
                  gstack_pre.data.begin() +
                      static_cast<std::size_t>(offset + spec.out_channels) * H * W,
                  slice.data.begin());
        ConvGrads cb = conv2d_backward(slice, act.input, spec, w.aspp_weight[b]);
        g.aspp_weight[b] = std::move(cb.weights);
        g.aspp_bias[b] = std::move(cb.bias);
        offset += spec.out_channels;
    }
    return g;
}

}  // namespace lns
