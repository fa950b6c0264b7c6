#include <doctest.h>

#include "fixtures.hpp"

#include "archoscope/arch.hpp"

using namespace archoscope;

TEST_CASE("conv_output_side matches the output-shape equation") {
    CHECK(conv_output_side(28, 3, 1, 1) == 28);
    for (int h : {1, 5, 17, 64})
        CHECK(conv_output_side(h, 1, 0, 1) == h);
    CHECK(conv_output_side(32, 5, 0, 3) == 10);
    CHECK(conv_output_side(32, 3, 1, 1) == 32);
    CHECK(conv_output_side(8, 3, 0, 1) == 6);

    CHECK_THROWS_AS(conv_output_side(28, 3, 0, 2), NonIntegralShape);
    CHECK_THROWS_AS(conv_output_side(3, 5, 0, 1), NonIntegralShape);
    CHECK_THROWS_AS(conv_output_side(28, 3, 3, 1), SchemaError); // p >= z
}

TEST_CASE("conv_output_side re-substitutes for random valid params") {
    std::mt19937 rng(7);
    int checked = 0;
    while (checked < 300) {
        const int h = std::uniform_int_distribution<>(1, 64)(rng);
        const int z = std::uniform_int_distribution<>(1, 7)(rng);
        if (z > h)
            continue;
        const int p = std::uniform_int_distribution<>(0, z - 1)(rng);
        const int s = std::uniform_int_distribution<>(1, 8)(rng);
        const int span = h - z + 2 * p;
        if (span < 0 || span % s != 0)
            continue;
        const int out = conv_output_side(h, z, p, s);
        CHECK(out == span / s + 1);
        CHECK((out - 1) * s + z - 2 * p == h);
        ++checked;
    }
}

TEST_CASE("propagate_shapes on the documented models") {
    SUBCASE("single conv") {
        Architecture a{{28, 1}, {ConvSpec{16, 3, 1, 1}}};
        const auto shapes = propagate_shapes(a);
        CHECK(shapes.size() == 1);
        CHECK(shapes[0] == TensorShape{28, 16});
    }
    SUBCASE("pooling") {
        Architecture a{{32, 16}, {MaxPoolSpec{2}}};
        CHECK(propagate_shapes(a)[0] == TensorShape{16, 16});
    }
    SUBCASE("empty layer list echoes the input") {
        Architecture a{{28, 1}, {}};
        const auto shapes = propagate_shapes(a);
        CHECK(shapes.size() == 1);
        CHECK(shapes[0] == TensorShape{28, 1});
    }
    SUBCASE("mnist cnn golden shapes") {
        const auto shapes = propagate_shapes(fixtures::mnist_cnn());
        const std::vector<TensorShape> expect = {{28, 16}, {28, 16}, {14, 16}, {14, 32},
                                                 {14, 32}, {7, 32},  {1, 10},  {1, 10}};
        CHECK(shapes == expect);
    }
    SUBCASE("cifar cnn golden shapes") {
        const auto shapes = propagate_shapes(fixtures::cifar_cnn());
        const std::vector<TensorShape> expect = {{32, 16}, {32, 16}, {16, 16}, {16, 32},
                                                 {16, 32}, {8, 32},  {8, 64},  {8, 64},
                                                 {4, 64},  {1, 32},  {1, 32},  {1, 10},
                                                 {1, 10}};
        CHECK(shapes == expect);
    }
    SUBCASE("mnist mlp golden shapes") {
        const auto shapes = propagate_shapes(fixtures::mnist_mlp());
        const std::vector<TensorShape> expect = {{1, 32}, {1, 32}, {1, 16},
                                                 {1, 16}, {1, 10}, {1, 10}};
        CHECK(shapes == expect);
    }
    SUBCASE("divisibility error") {
        Architecture a{{7, 4}, {MaxPoolSpec{2}}};
        CHECK_THROWS_AS(propagate_shapes(a), DivisibilityError);
    }
}

TEST_CASE("mac_complexity reproduces the documented counts") {
    CHECK(mac_complexity(ConvSpec{16, 3, 1, 1}, {28, 1}) == 112896);
    CHECK(mac_complexity(DenseSpec{32}, {28, 1}) == 25088);
    CHECK(mac_complexity(DenseSpec{1}, {1, 1}) == 1);
    CHECK(double(mac_complexity(ConvSpec{16, 3, 1, 1}, {28, 1})) /
              double(mac_complexity(DenseSpec{32}, {28, 1})) == doctest::Approx(4.5));

    CHECK(is_mac_complexity(LayerSpec{ConvSpec{16, 3, 1, 1}}));
    CHECK(is_mac_complexity(LayerSpec{DenseSpec{32}}));
    CHECK_FALSE(is_mac_complexity(LayerSpec{MaxPoolSpec{2}}));
    CHECK_FALSE(is_mac_complexity(LayerSpec{ActivationSpec{ActivationKind::ReLU}}));

    // Proxy complexity: number of output elements.
    CHECK(mac_complexity(MaxPoolSpec{2}, {28, 16}) == 14 * 14 * 16);
    CHECK(mac_complexity(ActivationSpec{ActivationKind::ReLU}, {28, 16}) == 28 * 28 * 16);
}

TEST_CASE("select_conv_variant follows the dispatch rules") {
    CHECK(select_conv_variant(16, 32) == ConvVariant::Fast);
    CHECK(select_conv_variant(3, 16) == ConvVariant::Rgb);
    CHECK(select_conv_variant(1, 16) == ConvVariant::Basic);
    CHECK(select_conv_variant(4, 3) == ConvVariant::Basic);  // odd C_out blocks fast
    CHECK(select_conv_variant(3, 4) == ConvVariant::Rgb);
    CHECK(select_conv_variant(12, 2) == ConvVariant::Fast);

    // Total and deterministic over a grid.
    for (int c_in = 1; c_in <= 32; ++c_in)
        for (int c_out = 1; c_out <= 32; ++c_out)
            CHECK(select_conv_variant(c_in, c_out) == select_conv_variant(c_in, c_out));

    ConvSpec forced{16, 3, 1, 1, ConvVariant::Basic};
    CHECK(resolve_conv_variant(forced, 16) == ConvVariant::Basic);
    CHECK(resolve_conv_variant(ConvSpec{16, 3, 1, 1}, 16) == ConvVariant::Fast);
}

TEST_CASE("architecture json round-trip and schema rejection") {
    const Architecture a = fixtures::cifar_cnn();
    const Architecture b = architecture_from_json(architecture_to_json(a));
    CHECK(a == b);

    auto parse = [](const char *text) { return architecture_from_json(nlohmann::json::parse(text)); };

    CHECK_THROWS_AS(parse(R"({"input":{"h":28,"c":1},"layers":[{"type":"conv2d","k":4,"z":3,"s":1,"p":1,"bogus":1}]})"),
                    SchemaError);
    CHECK_THROWS_AS(parse(R"({"input":{"h":28,"c":1},"layers":[{"type":"conv2d","k":4,"z":3}]})"),
                    SchemaError);
    CHECK_THROWS_AS(parse(R"({"input":{"h":28},"layers":[]})"), SchemaError);
    CHECK_THROWS_AS(parse(R"({"input":{"h":28,"c":1},"layers":[{"type":"pool"}]})"), SchemaError);
    CHECK_THROWS_AS(parse(R"({"input":{"h":28,"c":1},"layers":[{"type":"conv2d","k":4,"z":3,"s":1,"p":5}]})"),
                    SchemaError);
    CHECK_THROWS_AS(parse(R"({"extra":1,"input":{"h":28,"c":1},"layers":[]})"), SchemaError);
    // Shape propagation failures surface at load time.
    CHECK_THROWS_AS(parse(R"({"input":{"h":28,"c":1},"layers":[{"type":"conv2d","k":4,"z":3,"s":2,"p":0}]})"),
                    NonIntegralShape);
}

TEST_CASE("diff_architectures") {
    const Architecture a = fixtures::mnist_cnn();
    CHECK(diff_architectures(a, a).empty());

    Architecture b = a;
    std::get<ConvSpec>(b.layers[0]).k = 32;
    const auto d = diff_architectures(a, b);
    REQUIRE(d.size() == 1);
    CHECK(d[0].location == "layer 0");
    CHECK(d[0].field == "k");

    // ReLU-vs-not: softmax and sigmoid compare equal, relu does not.
    Architecture c = a;
    std::get<ActivationSpec>(c.layers[7]).kind = ActivationKind::Sigmoid;
    CHECK(diff_architectures(a, c).empty());
    std::get<ActivationSpec>(c.layers[7]).kind = ActivationKind::ReLU;
    CHECK(diff_architectures(a, c).size() == 1);

    Architecture e = a;
    e.layers.pop_back();
    CHECK(diff_architectures(a, e).size() == 1);
}
