#include <doctest.h>

#include "fixtures.hpp"

#include "archoscope/emulate.hpp"

using namespace archoscope;

namespace {

const CostModel kCost;

// Direct children of a conv node with GeMM-call class.
std::int64_t gemm_calls(const EventNode &conv) {
    return count_children(conv, EventClass::GemmCall);
}

} // namespace

TEST_CASE("conv event tree: mnist conv1") {
    const EventNode tree = emulate_conv(ConvSpec{16, 3, 1, 1}, {28, 1}, kCost);
    CHECK(gemm_calls(tree) == 392);
    CHECK(count_leaves(tree, EventClass::Im2colColumn) == 784);
    for (const EventNode &child : tree.children) {
        if (child.cls != EventClass::GemmCall)
            continue;
        CHECK(count_children(child, EventClass::GemmKernelPair) == 8);
        // C_in * Z^2 = 9: two SIMD groups and one remainder per pair.
        const EventNode &pair = child.children.front();
        CHECK(count_children(pair, EventClass::SimdMacGroup) == 2);
        CHECK(count_children(pair, EventClass::GemmRemainder) == 1);
    }
    CHECK(spans_consistent(tree));
}

TEST_CASE("conv event tree: cifar layers") {
    const EventNode conv2 = emulate_conv(ConvSpec{32, 3, 1, 1}, {16, 16}, kCost);
    CHECK(gemm_calls(conv2) == 128);
    const EventNode &call2 = *std::find_if(conv2.children.begin(), conv2.children.end(),
                                           [](const EventNode &n) {
                                               return n.cls == EventClass::GemmCall;
                                           });
    CHECK(count_children(call2, EventClass::GemmKernelPair) == 16);
    const EventNode &pair2 = call2.children.front();
    CHECK(count_children(pair2, EventClass::SimdMacGroup) == 36);
    CHECK(count_children(pair2, EventClass::GemmRemainder) == 0);

    const EventNode conv3 = emulate_conv(ConvSpec{64, 3, 1, 1}, {8, 32}, kCost);
    CHECK(gemm_calls(conv3) == 32);
    const EventNode &call3 = *std::find_if(conv3.children.begin(), conv3.children.end(),
                                           [](const EventNode &n) {
                                               return n.cls == EventClass::GemmCall;
                                           });
    CHECK(count_children(call3, EventClass::GemmKernelPair) == 32);
    CHECK(count_children(call3.children.front(), EventClass::SimdMacGroup) == 72);
}

TEST_CASE("conv event tree: degenerate and odd cases") {
    SUBCASE("K=1 leaves only the remainder block per call") {
        const EventNode tree = emulate_conv(ConvSpec{1, 3, 1, 1}, {4, 1}, kCost);
        for (const EventNode &child : tree.children) {
            if (child.cls != EventClass::GemmCall)
                continue;
            CHECK(count_children(child, EventClass::GemmKernelPair) == 0);
            CHECK(count_children(child, EventClass::GemmRemainder) == 1);
        }
    }
    SUBCASE("odd K appends a remainder block after the pairs") {
        const EventNode tree = emulate_conv(ConvSpec{5, 3, 1, 1}, {4, 4}, kCost);
        for (const EventNode &child : tree.children) {
            if (child.cls != EventClass::GemmCall)
                continue;
            CHECK(count_children(child, EventClass::GemmKernelPair) == 2);
            CHECK(child.children.back().cls == EventClass::GemmRemainder);
        }
    }
    SUBCASE("odd H_out^2 appends one remainder call") {
        const EventNode tree = emulate_conv(ConvSpec{4, 3, 1, 1}, {3, 1}, kCost);
        CHECK(gemm_calls(tree) == 4); // floor(9/2)
        CHECK(tree.children.back().cls == EventClass::GemmRemainder);
        CHECK(count_leaves(tree, EventClass::Im2colColumn) == 9);
    }
}

TEST_CASE("conv pattern-count closed forms hold for random specs") {
    std::mt19937 rng(11);
    for (int trial = 0; trial < 120; ++trial) {
        const int z = std::uniform_int_distribution<>(1, 5)(rng);
        const int c_in = std::uniform_int_distribution<>(1, 48)(rng);
        const int k = std::uniform_int_distribution<>(1, 64)(rng);
        const int h_in = std::uniform_int_distribution<>(z, 20)(rng);
        const int p = std::uniform_int_distribution<>(0, z - 1)(rng);
        const int span = h_in - z + 2 * p;
        if (span < 0)
            continue;
        const ConvSpec spec{k, z, 1, p};
        const EventNode tree = emulate_conv(spec, {h_in, c_in}, kCost);
        const std::int64_t h_out = span + 1;
        const std::int64_t positions = h_out * h_out;
        CHECK(gemm_calls(tree) == positions / 2);
        CHECK(count_children(tree, EventClass::GemmRemainder) == positions % 2);
        CHECK(count_leaves(tree, EventClass::Im2colColumn) == positions);
        for (const EventNode &child : tree.children) {
            if (child.cls != EventClass::GemmCall)
                continue;
            CHECK(count_children(child, EventClass::GemmKernelPair) == k / 2);
            for (const EventNode &pair : child.children) {
                if (pair.cls != EventClass::GemmKernelPair)
                    continue;
                CHECK(count_children(pair, EventClass::SimdMacGroup) ==
                      (std::int64_t(c_in) * z * z) / 4);
                CHECK(count_children(pair, EventClass::GemmRemainder) ==
                      ((std::int64_t(c_in) * z * z) % 4 != 0 ? 1 : 0));
            }
            break;
        }
        CHECK(spans_consistent(tree));
    }
}

TEST_CASE("maxpool event tree") {
    const EventNode cifar_pool1 = emulate_maxpool(MaxPoolSpec{2}, {32, 16}, kCost);
    CHECK(count_leaves(cifar_pool1, EventClass::PoolXStep) == 512);
    CHECK(count_leaves(cifar_pool1, EventClass::PoolYStep) == 16);
    CHECK(count_leaves(cifar_pool1, EventClass::LayerGap) == 1); // block separator

    const EventNode mnist_pool2 = emulate_maxpool(MaxPoolSpec{2}, {14, 32}, kCost);
    CHECK(count_leaves(mnist_pool2, EventClass::PoolXStep) == 98);
    CHECK(count_leaves(mnist_pool2, EventClass::PoolYStep) == 7);

    const EventNode tiny = emulate_maxpool(MaxPoolSpec{2}, {2, 4}, kCost);
    CHECK(count_leaves(tiny, EventClass::PoolYStep) == 1);

    CHECK_THROWS_AS(emulate_maxpool(MaxPoolSpec{2}, {7, 4}, kCost), DivisibilityError);
    CHECK(spans_consistent(cifar_pool1));
}

TEST_CASE("dense event tree") {
    const EventNode d32 = emulate_dense(DenseSpec{32}, 784, kCost);
    CHECK(count_children(d32, EventClass::DenseNeuronGroup) == 8);
    CHECK(count_children(d32, EventClass::DenseRemainderNeuron) == 0);
    for (const EventNode &g : d32.children)
        CHECK(count_children(g, EventClass::DenseMacGroup) == 196);

    const EventNode d23 = emulate_dense(DenseSpec{23}, 784, kCost);
    CHECK(count_children(d23, EventClass::DenseNeuronGroup) == 5);
    CHECK(count_children(d23, EventClass::DenseRemainderNeuron) == 3);

    const EventNode d3 = emulate_dense(DenseSpec{3}, 16, kCost);
    CHECK(count_children(d3, EventClass::DenseNeuronGroup) == 0);
    CHECK(count_children(d3, EventClass::DenseRemainderNeuron) == 3);

    for (int n_e = 1; n_e <= 512; ++n_e) {
        const EventNode tree = emulate_dense(DenseSpec{n_e}, 64, kCost);
        CHECK(4 * count_children(tree, EventClass::DenseNeuronGroup) +
                  count_children(tree, EventClass::DenseRemainderNeuron) == n_e);
    }
    CHECK(spans_consistent(d23));
}

TEST_CASE("activation event tree") {
    const EventNode relu = emulate_activation(ActivationSpec{ActivationKind::ReLU}, 12544, kCost);
    const EventNode tanh = emulate_activation(ActivationSpec{ActivationKind::Tanh}, 12544, kCost);
    const EventNode sigm = emulate_activation(ActivationSpec{ActivationKind::Sigmoid}, 12544, kCost);
    CHECK(relu.duration_us < tanh.duration_us);
    CHECK(tanh.duration_us < sigm.duration_us);
    CHECK(sigm.duration_us / relu.duration_us ==
          doctest::Approx(kCost.act_sigmoid_elem_us / kCost.act_relu_elem_us));

    const EventNode one = emulate_activation(ActivationSpec{ActivationKind::ReLU}, 1, kCost);
    CHECK(one.children.size() == 1);
    CHECK(one.duration_us == doctest::Approx(kCost.act_relu_elem_us));

    // Softmax shares the sigmoid cost class.
    const EventNode soft = emulate_activation(ActivationSpec{ActivationKind::Softmax}, 10, kCost);
    CHECK(count_leaves(soft, EventClass::ActSigmoidElem) == 10);
}

TEST_CASE("full inference event tree") {
    const EventNode mlp = emulate_inference(fixtures::mnist_mlp(), kCost);
    std::int64_t layer_children = 0;
    for (const EventNode &child : mlp.children)
        if (child.cls != EventClass::LayerGap)
            ++layer_children;
    CHECK(layer_children == 6);
    CHECK(spans_consistent(mlp));

    const EventNode single = emulate_inference(Architecture{{8, 1}, {DenseSpec{4}}}, kCost);
    std::int64_t single_layers = 0;
    for (const EventNode &child : single.children)
        if (child.cls != EventClass::LayerGap)
            ++single_layers;
    CHECK(single_layers == 1);

    const EventNode cifar = emulate_inference(fixtures::cifar_cnn(), kCost);
    CHECK(count_nodes(cifar, EventClass::GemmCall) == 672); // 512 + 128 + 32
    CHECK(spans_consistent(cifar));

    // Event-tree JSON round-trip preserves structure.
    const EventNode back = event_tree_from_json(event_tree_to_json(mlp));
    CHECK(count_nodes(back, EventClass::DenseNeuronGroup) ==
          count_nodes(mlp, EventClass::DenseNeuronGroup));
    CHECK(back.duration_us == doctest::Approx(mlp.duration_us));
}
