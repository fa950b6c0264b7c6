#pragma once

#include <cstdint>
#include <random>

#include "archoscope/arch.hpp"
#include "archoscope/emulate.hpp"
#include "archoscope/render.hpp"

namespace fixtures {

using namespace archoscope;

// The three models studied in the source material plus the small MLP
// with remainder-heavy dense widths. Dense widths of the two MNIST
// classifiers beyond the documented ones follow the consistent reading
// (10-label heads).
inline Architecture mnist_mlp() {
    Architecture a;
    a.input = {28, 1};
    a.layers = {DenseSpec{32}, ActivationSpec{ActivationKind::ReLU},
                DenseSpec{16}, ActivationSpec{ActivationKind::ReLU},
                DenseSpec{10}, ActivationSpec{ActivationKind::Softmax}};
    return a;
}

inline Architecture mnist_cnn() {
    Architecture a;
    a.input = {28, 1};
    a.layers = {ConvSpec{16, 3, 1, 1}, ActivationSpec{ActivationKind::ReLU}, MaxPoolSpec{2},
                ConvSpec{32, 3, 1, 1}, ActivationSpec{ActivationKind::ReLU}, MaxPoolSpec{2},
                DenseSpec{10},         ActivationSpec{ActivationKind::Softmax}};
    return a;
}

inline Architecture cifar_cnn() {
    Architecture a;
    a.input = {32, 3};
    a.layers = {ConvSpec{16, 3, 1, 1}, ActivationSpec{ActivationKind::ReLU}, MaxPoolSpec{2},
                ConvSpec{32, 3, 1, 1}, ActivationSpec{ActivationKind::ReLU}, MaxPoolSpec{2},
                ConvSpec{64, 3, 1, 1}, ActivationSpec{ActivationKind::ReLU}, MaxPoolSpec{2},
                DenseSpec{32},         ActivationSpec{ActivationKind::ReLU},
                DenseSpec{10},         ActivationSpec{ActivationKind::Softmax}};
    return a;
}

inline Architecture sp_mlp() {
    Architecture a;
    a.input = {28, 1};
    a.layers = {DenseSpec{23}, ActivationSpec{ActivationKind::ReLU},
                DenseSpec{18}, ActivationSpec{ActivationKind::ReLU},
                DenseSpec{13}, ActivationSpec{ActivationKind::ReLU},
                DenseSpec{10}, ActivationSpec{ActivationKind::Softmax}};
    return a;
}

// Render with the default cost model; noise given as a multiple of the
// smallest class amplitude.
inline Trace render_arch(const Architecture &arch, double noise_mult = 0.2, int n_average = 16,
                         std::uint64_t seed = 1) {
    const CostModel cost;
    RenderParams params;
    params.noise_sigma = noise_mult * params.min_class_amplitude();
    params.n_average = n_average;
    params.rng_seed = seed;
    return render_trace(emulate_inference(arch, cost), params);
}

// Random architectures from the supported grammar: conv Z in {1,3,5},
// K in [2,64] with even output sides and a unique (s,p) readback, pools
// of 2, dense widths in [4,256], ReLU/Sigmoid activations, L <= 12.
class GrammarSampler {
  public:
    explicit GrammarSampler(std::uint64_t seed, double max_trace_us = 12000.0)
        : rng_(seed), max_trace_us_(max_trace_us) {}

    Architecture sample() {
        for (;;) {
            Architecture arch = propose();
            if (estimate_us(arch) <= max_trace_us_)
                return arch;
        }
    }

  private:
    std::mt19937_64 rng_;
    double max_trace_us_;

    int pick(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
    bool chance(double p) { return std::uniform_real_distribution<>(0.0, 1.0)(rng_) < p; }

    ActivationSpec random_act() {
        return ActivationSpec{chance(0.7) ? ActivationKind::ReLU : ActivationKind::Sigmoid};
    }

    // A conv spec is adopted only when the output side is even and the
    // (s, p) pair is the unique solution for (h_in, h_out, z); otherwise
    // no extractor could decide the tie.
    std::optional<ConvSpec> random_conv(int h_in, int c_in, int &h_out) {
        const int zs[] = {1, 3, 5};
        for (int attempt = 0; attempt < 24; ++attempt) {
            const int z = zs[pick(0, 2)];
            if (z > h_in)
                continue;
            if (c_in * z * z < 4)
                continue; // below one SIMD group: nothing periodic to count
            const int s = pick(1, 3);
            const int p = pick(0, z - 1);
            const int span = h_in - z + 2 * p;
            if (span < s || span % s != 0)
                continue;
            const int ho = span / s + 1;
            if (ho < 2 || ho % 2 != 0 || ho > 2 * h_in)
                continue;
            int solutions = 0;
            for (int pp = 0; pp < z; ++pp) {
                const int num = h_in - z + 2 * pp;
                if (num >= ho - 1 && num % (ho - 1) == 0)
                    ++solutions;
            }
            if (solutions != 1)
                continue;
            h_out = ho;
            return ConvSpec{pick(2, 64), z, s, p};
        }
        return std::nullopt;
    }

    Architecture propose() {
        Architecture arch;
        const bool cnn = chance(0.55);
        if (!cnn) {
            const int sides[] = {8, 12, 16, 28};
            arch.input = {sides[pick(0, 3)], chance(0.8) ? 1 : 3};
            const int n_dense = pick(1, 4);
            for (int i = 0; i < n_dense && int(arch.layers.size()) < 11; ++i) {
                arch.layers.push_back(DenseSpec{pick(4, 256)});
                if (chance(0.7))
                    arch.layers.push_back(random_act());
            }
            if (arch.layers.empty())
                arch.layers.push_back(DenseSpec{pick(4, 256)});
            return arch;
        }
        const int sides[] = {8, 12, 16, 20, 28, 32};
        arch.input = {sides[pick(0, 5)], chance(0.5) ? 1 : 3};
        int h = arch.input.h;
        int c = arch.input.c;
        const int blocks = pick(1, 3);
        for (int b = 0; b < blocks && int(arch.layers.size()) < 9; ++b) {
            int h_out = 0;
            const auto conv = random_conv(h, c, h_out);
            if (!conv)
                break;
            c = conv->k;
            arch.layers.push_back(*conv);
            h = h_out;
            if (chance(0.7))
                arch.layers.push_back(random_act());
            if (h % 2 == 0 && h >= 4 && chance(0.7)) {
                arch.layers.push_back(MaxPoolSpec{2});
                h /= 2;
            }
        }
        if (arch.layers.empty()) {
            arch.layers.push_back(DenseSpec{pick(4, 256)});
            return arch;
        }
        if (chance(0.8) && int(arch.layers.size()) < 11) {
            arch.layers.push_back(DenseSpec{pick(4, 128)});
            if (chance(0.5) && int(arch.layers.size()) < 12)
                arch.layers.push_back(random_act());
        }
        return arch;
    }

    double estimate_us(const Architecture &arch) const {
        const CostModel cost;
        double total = cost.layer_gap_us;
        TensorShape in = arch.input;
        for (const LayerSpec &layer : arch.layers) {
            const TensorShape out = propagate_shapes(Architecture{in, {layer}}).back();
            if (const auto *c = std::get_if<ConvSpec>(&layer)) {
                const double positions = double(out.h) * out.h;
                const double col = double(in.c) * c->z * c->z;
                const double pair = std::floor(col / 4) * cost.simd_mac_group_us +
                                    (std::int64_t(col) % 4 ? cost.gemm_remainder_us : 0.0);
                const double call = std::floor(c->k / 2) * pair +
                                    (c->k % 2 ? std::ceil(col / 4) * cost.gemm_remainder_us : 0.0);
                total += positions * cost.im2col_column_us + std::floor(positions / 2) * call;
            } else if (std::holds_alternative<MaxPoolSpec>(layer)) {
                total += double(in.h) * out.h * cost.pool_x_step_us +
                         double(out.h) * cost.pool_y_step_us + cost.pool_block_gap_us;
            } else if (const auto *d = std::get_if<DenseSpec>(&layer)) {
                total += std::floor(d->n_e / 4) * std::floor(double(in.flat_len()) / 4) *
                             cost.dense_mac_group_us +
                         double(d->n_e % 4) * cost.dense_remainder_neuron_us;
            } else {
                const auto &a = std::get<ActivationSpec>(layer);
                const double unit = a.kind == ActivationKind::ReLU ? cost.act_relu_elem_us
                                    : a.kind == ActivationKind::Tanh ? cost.act_tanh_elem_us
                                                                     : cost.act_sigmoid_elem_us;
                total += double(out.flat_len()) * unit;
            }
            total += cost.layer_gap_us;
            in = out;
        }
        return total;
    }
};

} // namespace fixtures
