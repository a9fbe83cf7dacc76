#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <random>
#include <string>
#include <vector>

#include "lns/embedder.hpp"
#include "lns/error.hpp"
#include "lns/features.hpp"
#include "lns/grad_rescale.hpp"
#include "lns/image_io.hpp"
#include "lns/loss.hpp"
#include "lns/tensor.hpp"

// The full learnable state: embedder weights, seed-offset projection,
// reconstruction head, lifelong channel memory and Adam moments, plus the
// configuration snapshot. Serialized as a little-endian binary file with
// 32-bit float payloads.

namespace lns {

struct ModelConfig {
    EmbedderConfig embedder;
    double lambda = 0.1;           // channel-memory EMA coefficient
    double contour_epsilon = 0.1;  // contour threshold on the normalized map
    LossConfig loss;
    ColorSpace color_space = ColorSpace::lab;

    void validate() const {
        if (lambda <= 0.0 || lambda >= 1.0) throw InvalidArgument("lambda must be in (0,1)");
        if (contour_epsilon < 0.0 || contour_epsilon > 1.0) {
            throw InvalidArgument("contour epsilon must be in [0,1]");
        }
        loss.validate();
    }
};

/// Adam first/second moments, parallel to the parameter visit order, plus the
/// shared step counter (total number of optimizer steps taken).
struct AdamMoments {
    std::vector<Tensor> m1, m2;
    std::uint64_t step = 0;
};

enum class ParamGroup { embedder, seed, recon };

struct ModelState {
    ModelConfig config;
    EmbedderWeights embedder;
    Tensor seed_weight;   // [C2,2]
    Tensor recon_weight;  // [C2,5]
    ChannelMemory memory;
    AdamMoments adam;
    std::uint64_t tasks_seen = 0;
};

/// Visits every learnable tensor with a stable name and its freeze group, in
/// serialization order. Works on both ModelState and gradient mirrors.
template <class State, class F>
void visit_params(State& s, F&& f) {
    visit_embedder(s.embedder, [&](const char* name, auto& t) {
        f(name, t, ParamGroup::embedder);
    });
    f("seed.weight", s.seed_weight, ParamGroup::seed);
    f("recon.weight", s.recon_weight, ParamGroup::recon);
}

inline std::size_t parameter_count(const ModelState& s) {
    std::size_t n = 0;
    visit_params(const_cast<ModelState&>(s), [&](const char*, Tensor& t, ParamGroup) {
        n += t.size();
    });
    return n;
}

/// Fresh model: weights uniform in +-sqrt(1/fan_in) from a seeded generator,
/// biases zero, memory all ones, Adam moments zero.
inline ModelState init_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    ModelState s;
    s.config = config;
    s.embedder = EmbedderWeights::zeros(config.embedder);
    s.seed_weight = Tensor({config.embedder.c2, 2});
    s.recon_weight = Tensor({config.embedder.c2, 5});
    s.memory = ChannelMemory::ones(config.embedder.c2, config.lambda);

    std::mt19937_64 rng(seed);
    auto unit = [&rng] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
    visit_params(s, [&](const char* name, Tensor& t, ParamGroup) {
        if (std::string(name).ends_with("bias")) return;  // biases stay zero
        const int fan_in = t.rank() == 4 ? t.dim(1) * t.dim(2) * t.dim(3) : t.dim(0);
        const double bound = std::sqrt(1.0 / fan_in);
        for (auto& v : t.data) v = bound * (2.0 * unit() - 1.0);
    });
    visit_params(s, [&](const char*, Tensor& t, ParamGroup) {
        s.adam.m1.emplace_back(t.shape);
        s.adam.m2.emplace_back(t.shape);
    });
    return s;
}

namespace detail {

constexpr char kModelMagic[4] = {'L', 'N', 'S', 'M'};
constexpr std::uint32_t kModelVersion = 1;

inline void write_exact(std::FILE* f, const void* p, std::size_t n) {
    if (std::fwrite(p, 1, n, f) != n) throw Error("model write failed");
}
inline void read_exact(std::FILE* f, void* p, std::size_t n, const std::string& path) {
    if (std::fread(p, 1, n, f) != n) {
        throw TruncatedFile("model file '" + path + "' ends prematurely");
    }
}

template <class T>
void write_pod(std::FILE* f, T v) {
    write_exact(f, &v, sizeof v);
}
template <class T>
T read_pod(std::FILE* f, const std::string& path) {
    T v;
    read_exact(f, &v, sizeof v, path);
    return v;
}

inline void write_tensor_record(std::FILE* f, const std::string& name, const Tensor& t) {
    write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(name.size()));
    write_exact(f, name.data(), name.size());
    write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) write_pod<std::int64_t>(f, t.dim(i));
    std::vector<float> payload(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) payload[i] = static_cast<float>(t[i]);
    write_exact(f, payload.data(), payload.size() * sizeof(float));
}

inline void read_tensor_record(std::FILE* f, const std::string& path, const std::string& want,
                               Tensor& t) {
    const auto name_len = read_pod<std::uint32_t>(f, path);
    if (name_len > 256) throw CorruptData("model file '" + path + "': absurd record name");
    std::string name(name_len, '\0');
    read_exact(f, name.data(), name_len, path);
    if (name != want) {
        throw CorruptData("model file '" + path + "': expected record '" + want + "', found '" +
                          name + "'");
    }
    const auto rank = read_pod<std::uint32_t>(f, path);
    if (rank != static_cast<std::uint32_t>(t.rank())) {
        throw CorruptData("model file '" + path + "': rank mismatch for '" + name + "'");
    }
    for (int i = 0; i < t.rank(); ++i) {
        if (read_pod<std::int64_t>(f, path) != t.dim(i)) {
            throw CorruptData("model file '" + path + "': extent mismatch for '" + name + "'");
        }
    }
    std::vector<float> payload(t.size());
    read_exact(f, payload.data(), payload.size() * sizeof(float), path);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = payload[i];
}

}  // namespace detail

inline void save_model(const ModelState& s, const std::string& path) {
    auto f = detail::open_checked(path, "wb");
    detail::write_exact(f.get(), detail::kModelMagic, 4);
    detail::write_pod<std::uint32_t>(f.get(), detail::kModelVersion);

    const ModelConfig& c = s.config;
    for (int i = 0; i < 3; ++i) {
        detail::write_pod<std::int64_t>(f.get(), c.embedder.aspp_channels[i]);
    }
    for (int i = 0; i < 3; ++i) detail::write_pod<std::int64_t>(f.get(), c.embedder.dilations[i]);
    detail::write_pod<std::int64_t>(f.get(), c.embedder.c1);
    detail::write_pod<std::int64_t>(f.get(), c.embedder.c2);
    detail::write_pod<std::int64_t>(f.get(), c.loss.topn);
    detail::write_pod<std::int64_t>(f.get(), c.color_space == ColorSpace::lab ? 0 : 1);
    detail::write_pod<double>(f.get(), c.lambda);
    detail::write_pod<double>(f.get(), c.contour_epsilon);
    detail::write_pod<double>(f.get(), c.loss.beta);
    detail::write_pod<double>(f.get(), c.loss.phi);
    detail::write_pod<double>(f.get(), c.loss.epsilon_div);

    visit_params(const_cast<ModelState&>(s), [&](const char* name, Tensor& t, ParamGroup) {
        detail::write_tensor_record(f.get(), name, t);
    });
    detail::write_tensor_record(f.get(), "memory.m", s.memory.m);
    std::size_t pi = 0;
    visit_params(const_cast<ModelState&>(s), [&](const char* name, Tensor&, ParamGroup) {
        detail::write_tensor_record(f.get(), std::string("adam.m1.") + name, s.adam.m1[pi]);
        detail::write_tensor_record(f.get(), std::string("adam.m2.") + name, s.adam.m2[pi]);
        ++pi;
    });
    detail::write_pod<std::uint64_t>(f.get(), s.adam.step);
    detail::write_pod<std::uint64_t>(f.get(), s.tasks_seen);
}

inline ModelState load_model(const std::string& path) {
    auto f = detail::open_checked(path, "rb");
    char magic[4];
    detail::read_exact(f.get(), magic, 4, path);
    if (std::memcmp(magic, detail::kModelMagic, 4) != 0) {
        throw FormatMismatch("'" + path + "' is not a model file (bad magic)");
    }
    const auto version = detail::read_pod<std::uint32_t>(f.get(), path);
    if (version != detail::kModelVersion) {
        throw FormatMismatch("model file '" + path + "' has version " + std::to_string(version) +
                             ", this build reads " + std::to_string(detail::kModelVersion));
    }
    ModelConfig c;
    for (int i = 0; i < 3; ++i) {
        c.embedder.aspp_channels[i] =
            static_cast<int>(detail::read_pod<std::int64_t>(f.get(), path));
    }
    for (int i = 0; i < 3; ++i) {
        c.embedder.dilations[i] = static_cast<int>(detail::read_pod<std::int64_t>(f.get(), path));
    }
    c.embedder.c1 = static_cast<int>(detail::read_pod<std::int64_t>(f.get(), path));
    c.embedder.c2 = static_cast<int>(detail::read_pod<std::int64_t>(f.get(), path));
    c.loss.topn = static_cast<int>(detail::read_pod<std::int64_t>(f.get(), path));
    c.color_space = detail::read_pod<std::int64_t>(f.get(), path) == 0 ? ColorSpace::lab
                                                                       : ColorSpace::rgb;
    c.lambda = detail::read_pod<double>(f.get(), path);
    c.contour_epsilon = detail::read_pod<double>(f.get(), path);
    c.loss.beta = detail::read_pod<double>(f.get(), path);
    c.loss.phi = detail::read_pod<double>(f.get(), path);
    c.loss.epsilon_div = detail::read_pod<double>(f.get(), path);
    c.validate();

    ModelState s;
    s.config = c;
    s.embedder = EmbedderWeights::zeros(c.embedder);
    s.seed_weight = Tensor({c.embedder.c2, 2});
    s.recon_weight = Tensor({c.embedder.c2, 5});
    s.memory = ChannelMemory::ones(c.embedder.c2, c.lambda);
    visit_params(s, [&](const char* name, Tensor& t, ParamGroup) {
        detail::read_tensor_record(f.get(), path, name, t);
    });
    detail::read_tensor_record(f.get(), path, "memory.m", s.memory.m);
    visit_params(s, [&](const char* name, Tensor& t, ParamGroup) {
        Tensor m1(t.shape), m2(t.shape);
        detail::read_tensor_record(f.get(), path, std::string("adam.m1.") + name, m1);
        detail::read_tensor_record(f.get(), path, std::string("adam.m2.") + name, m2);
        s.adam.m1.push_back(std::move(m1));
        s.adam.m2.push_back(std::move(m2));
    });
    s.adam.step = detail::read_pod<std::uint64_t>(f.get(), path);
    s.tasks_seen = detail::read_pod<std::uint64_t>(f.get(), path);
    return s;
}

}  // namespace lns
