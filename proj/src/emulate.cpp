#include "archoscope/emulate.hpp"

namespace archoscope {

namespace {

EventNode leaf(EventClass cls, double duration_us) {
    EventNode node;
    node.cls = cls;
    node.duration_us = duration_us;
    return node;
}

EventNode group(std::string label, EventClass cls, std::vector<EventNode> children) {
    EventNode node;
    node.label = std::move(label);
    node.cls = cls;
    node.children = std::move(children);
    for (const EventNode &child : node.children)
        node.duration_us += child.duration_us;
    return node;
}

void layout(EventNode &node, double t0) {
    node.start_us = t0;
    double cursor = t0;
    for (EventNode &child : node.children) {
        layout(child, cursor);
        cursor = child.end_us();
    }
}

// One GeMM invocation: rowCnt = K/2 kernel pairs, each running
// colCnt = (C_in * Z^2) / 4 SIMD accumulations plus a remainder tail
// when the division is inexact; a final remainder block handles the
// odd kernel.
EventNode make_gemm_call(const ConvSpec &spec, int c_in, const CostModel &cost) {
    const std::int64_t col_elems = std::int64_t(c_in) * spec.z * spec.z;
    const std::int64_t col_cnt = col_elems / 4;
    const bool col_rem = (col_elems % 4) != 0;

    std::vector<EventNode> pairs;
    for (int r = 0; r < spec.k / 2; ++r) {
        std::vector<EventNode> macs;
        macs.reserve(std::size_t(col_cnt) + 1);
        for (std::int64_t m = 0; m < col_cnt; ++m)
            macs.push_back(leaf(EventClass::SimdMacGroup, cost.simd_mac_group_us));
        if (col_rem)
            macs.push_back(leaf(EventClass::GemmRemainder, cost.gemm_remainder_us));
        pairs.push_back(group("pair", EventClass::GemmKernelPair, std::move(macs)));
    }
    if (spec.k % 2 != 0) {
        const std::int64_t rem_steps = (col_elems + 3) / 4;
        std::vector<EventNode> steps;
        steps.reserve(std::size_t(rem_steps));
        for (std::int64_t m = 0; m < rem_steps; ++m)
            steps.push_back(leaf(EventClass::GemmRemainder, cost.gemm_remainder_us));
        pairs.push_back(group("kernel_rem", EventClass::GemmRemainder, std::move(steps)));
    }
    return group("gemm_call", EventClass::GemmCall, std::move(pairs));
}

} // namespace

EventNode emulate_conv(const ConvSpec &spec, const TensorShape &in_shape, const CostModel &cost) {
    const int h_out = conv_output_side(in_shape.h, spec.z, spec.p, spec.s);
    const std::int64_t positions = std::int64_t(h_out) * h_out;

    std::vector<EventNode> seq;
    for (std::int64_t i = 0; i < positions; ++i) {
        seq.push_back(leaf(EventClass::Im2colColumn, cost.im2col_column_us));
        if (i % 2 == 1)
            seq.push_back(make_gemm_call(spec, in_shape.c, cost));
    }
    if (positions % 2 != 0) {
        // Single buffered column left over: one half-width GeMM pass on
        // the remainder path.
        const std::int64_t col_elems = std::int64_t(in_shape.c) * spec.z * spec.z;
        const std::int64_t steps = std::max<std::int64_t>(1, spec.k * col_elems / 8);
        std::vector<EventNode> rem;
        rem.reserve(std::size_t(steps));
        for (std::int64_t m = 0; m < steps; ++m)
            rem.push_back(leaf(EventClass::GemmRemainder, cost.gemm_remainder_us));
        seq.push_back(group("gemm_call_rem", EventClass::GemmRemainder, std::move(rem)));
    }
    EventNode node = group("conv2d", EventClass::Composite, std::move(seq));
    layout(node, 0.0);
    return node;
}

EventNode emulate_maxpool(const MaxPoolSpec &spec, const TensorShape &in_shape,
                          const CostModel &cost) {
    if (in_shape.h % spec.z_pool != 0)
        throw DivisibilityError("pooling side " + std::to_string(spec.z_pool) +
                                " does not divide input side " + std::to_string(in_shape.h));
    const int h_out = in_shape.h / spec.z_pool;

    std::vector<EventNode> xs;
    xs.reserve(std::size_t(in_shape.h) * h_out);
    for (int i = 0; i < in_shape.h * h_out; ++i)
        xs.push_back(leaf(EventClass::PoolXStep, cost.pool_x_step_us));

    std::vector<EventNode> ys;
    ys.reserve(std::size_t(h_out));
    for (int i = 0; i < h_out; ++i)
        ys.push_back(leaf(EventClass::PoolYStep, cost.pool_y_step_us));

    std::vector<EventNode> blocks;
    blocks.push_back(group("pool_x", EventClass::Composite, std::move(xs)));
    blocks.push_back(leaf(EventClass::LayerGap, cost.pool_block_gap_us));
    blocks.push_back(group("pool_y", EventClass::Composite, std::move(ys)));

    EventNode node = group("maxpool", EventClass::Composite, std::move(blocks));
    layout(node, 0.0);
    return node;
}

EventNode emulate_dense(const DenseSpec &spec, std::int64_t in_len, const CostModel &cost) {
    if (in_len < 1)
        throw SchemaError("dense layer needs in_len >= 1");
    const std::int64_t groups = spec.n_e / 4;
    const int remainders = spec.n_e % 4;
    const std::int64_t col_cnt = in_len / 4;

    std::vector<EventNode> seq;
    for (std::int64_t g = 0; g < groups; ++g) {
        std::vector<EventNode> macs;
        macs.reserve(std::size_t(col_cnt));
        for (std::int64_t m = 0; m < col_cnt; ++m)
            macs.push_back(leaf(EventClass::DenseMacGroup, cost.dense_mac_group_us));
        seq.push_back(group("neuron_group", EventClass::DenseNeuronGroup, std::move(macs)));
    }
    for (int r = 0; r < remainders; ++r)
        seq.push_back(leaf(EventClass::DenseRemainderNeuron, cost.dense_remainder_neuron_us));

    EventNode node = group("dense", EventClass::Composite, std::move(seq));
    layout(node, 0.0);
    return node;
}

EventNode emulate_activation(const ActivationSpec &spec, std::int64_t n_elems,
                             const CostModel &cost) {
    if (n_elems < 1)
        throw SchemaError("activation layer needs n_elems >= 1");
    EventClass cls;
    double unit;
    switch (spec.kind) {
    case ActivationKind::ReLU:
        cls = EventClass::ActReluElem;
        unit = cost.act_relu_elem_us;
        break;
    case ActivationKind::Tanh:
        cls = EventClass::ActTanhElem;
        unit = cost.act_tanh_elem_us;
        break;
    default:
        // Sigmoid, and Softmax which shares its cost class.
        cls = EventClass::ActSigmoidElem;
        unit = cost.act_sigmoid_elem_us;
        break;
    }
    std::vector<EventNode> elems;
    elems.reserve(std::size_t(n_elems));
    for (std::int64_t i = 0; i < n_elems; ++i)
        elems.push_back(leaf(cls, unit));
    EventNode node = group("activation:" + to_string(spec.kind), EventClass::Composite,
                           std::move(elems));
    layout(node, 0.0);
    return node;
}

EventNode emulate_inference(const Architecture &arch, const CostModel &cost) {
    validate(arch);
    cost.check();

    std::vector<EventNode> seq;
    seq.push_back(leaf(EventClass::LayerGap, cost.layer_gap_us));
    TensorShape in = arch.input;
    std::size_t idx = 0;
    for (const LayerSpec &layer : arch.layers) {
        EventNode node = std::visit(
            [&](const auto &spec) -> EventNode {
                using T = std::decay_t<decltype(spec)>;
                if constexpr (std::is_same_v<T, ConvSpec>)
                    return emulate_conv(spec, in, cost);
                else if constexpr (std::is_same_v<T, MaxPoolSpec>)
                    return emulate_maxpool(spec, in, cost);
                else if constexpr (std::is_same_v<T, DenseSpec>)
                    return emulate_dense(spec, in.flat_len(), cost);
                else
                    return emulate_activation(spec, in.flat_len(), cost);
            },
            layer);
        node.label = "layer" + std::to_string(idx) + ":" + node.label;
        seq.push_back(std::move(node));
        seq.push_back(leaf(EventClass::LayerGap, cost.layer_gap_us));

        in = propagate_shapes(Architecture{in, {layer}}).back();
        ++idx;
    }

    EventNode root;
    root.label = "inference";
    root.children = std::move(seq);
    for (const EventNode &child : root.children)
        root.duration_us += child.duration_us;
    layout(root, 0.0);
    return root;
}

} // namespace archoscope
