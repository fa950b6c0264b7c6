#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "archoscope/errors.hpp"

#include <json.hpp>

namespace archoscope {

// Square spatial tensor: h x h x c. A flat vector of length n is the
// degenerate tensor 1 x 1 x n, so flat_len() is uniform across both.
struct TensorShape {
    int h = 1;
    int c = 1;

    std::int64_t flat_len() const {
        return std::int64_t(h) * std::int64_t(h) * std::int64_t(c);
    }
    bool spatial() const { return h > 1; }
    bool operator==(const TensorShape &) const = default;
};

enum class ConvVariant { Auto, Basic, Fast, Rgb };

struct ConvSpec {
    int k = 1; // kernel count (= C_out)
    int z = 1; // kernel side
    int s = 1; // stride
    int p = 0; // padding, 0 <= p < z
    ConvVariant variant = ConvVariant::Auto;
    bool operator==(const ConvSpec &) const = default;
};

// Stride always equals z_pool (non-overlapping windows).
struct MaxPoolSpec {
    int z_pool = 2;
    bool operator==(const MaxPoolSpec &) const = default;
};

struct DenseSpec {
    int n_e = 1; // neuron count
    bool operator==(const DenseSpec &) const = default;
};

enum class ActivationKind { ReLU, Sigmoid, Tanh, Softmax };

struct ActivationSpec {
    ActivationKind kind = ActivationKind::ReLU;
    bool operator==(const ActivationSpec &) const = default;
};

using LayerSpec = std::variant<ConvSpec, MaxPoolSpec, DenseSpec, ActivationSpec>;

struct Architecture {
    TensorShape input;
    std::vector<LayerSpec> layers;
    bool operator==(const Architecture &) const = default;
};

// Eq.-style output side: (h_in - z + 2p)/s + 1. Throws NonIntegralShape
// when s does not divide exactly or the result is not positive.
int conv_output_side(int h_in, int z, int p, int s);

// Output shape of every layer, in order. Dense flattens implicitly when it
// follows a spatial shape. Empty layer list echoes the input shape.
std::vector<TensorShape> propagate_shapes(const Architecture &arch);

// MACs for conv and dense; element count for pooling and activations
// (proxy complexity, see is_mac_complexity).
std::uint64_t mac_complexity(const LayerSpec &layer, const TensorShape &in_shape);
bool is_mac_complexity(const LayerSpec &layer);

// CMSIS-style dispatch: fast for C_in % 4 == 0 and C_out % 2 == 0,
// RGB for C_in == 3, basic otherwise.
ConvVariant select_conv_variant(int c_in, int c_out);

// Explicit variant wins; Auto resolves through select_conv_variant.
ConvVariant resolve_conv_variant(const ConvSpec &spec, int c_in);

// Throws SchemaError / NonIntegralShape / DivisibilityError when the
// architecture violates an invariant or does not propagate.
void validate(const Architecture &arch);

std::string to_string(ConvVariant v);
std::string to_string(ActivationKind k);
std::string layer_type_name(const LayerSpec &layer);

// JSON schema:
//   {"input": {"h": int, "c": int},
//    "layers": [{"type": "conv2d"|"maxpool"|"dense"|"activation", ...}]}
// Unknown fields are rejected.
Architecture architecture_from_json(const nlohmann::json &j);
nlohmann::json architecture_to_json(const Architecture &arch);
Architecture load_architecture(const std::filesystem::path &path);
void save_architecture(const Architecture &arch, const std::filesystem::path &path);

// Field-level structural diff. Activation kinds compare on the
// ReLU-vs-not axis only: sigmoid/tanh/softmax are one equivalence class,
// which is all a trace can testify to. Auto conv variants are resolved
// through the propagated input shape before comparison.
struct ArchDiffEntry {
    std::string location; // e.g. "layer 1"
    std::string field;    // e.g. "k"
    std::string lhs;
    std::string rhs;
};

std::vector<ArchDiffEntry> diff_architectures(const Architecture &a, const Architecture &b);

} // namespace archoscope
