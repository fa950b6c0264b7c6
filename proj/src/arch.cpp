#include "archoscope/arch.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace archoscope {

int conv_output_side(int h_in, int z, int p, int s) {
    if (h_in < 1 || z < 1 || s < 1 || p < 0 || p >= z)
        throw SchemaError("conv_output_side: invalid (h_in=" + std::to_string(h_in) +
                          ", z=" + std::to_string(z) + ", p=" + std::to_string(p) +
                          ", s=" + std::to_string(s) + ")");
    const int span = h_in - z + 2 * p;
    if (span < 0)
        throw NonIntegralShape("kernel larger than padded input (h_in=" + std::to_string(h_in) +
                               ", z=" + std::to_string(z) + ", p=" + std::to_string(p) + ")");
    if (span % s != 0)
        throw NonIntegralShape("stride " + std::to_string(s) + " does not divide " +
                               std::to_string(span));
    return span / s + 1;
}

namespace {

TensorShape layer_output_shape(const LayerSpec &layer, const TensorShape &in) {
    return std::visit(
        [&](const auto &spec) -> TensorShape {
            using T = std::decay_t<decltype(spec)>;
            if constexpr (std::is_same_v<T, ConvSpec>) {
                return {conv_output_side(in.h, spec.z, spec.p, spec.s), spec.k};
            } else if constexpr (std::is_same_v<T, MaxPoolSpec>) {
                if (in.h % spec.z_pool != 0)
                    throw DivisibilityError("pooling side " + std::to_string(spec.z_pool) +
                                            " does not divide input side " + std::to_string(in.h));
                return {in.h / spec.z_pool, in.c};
            } else if constexpr (std::is_same_v<T, DenseSpec>) {
                // Implicit flatten: output is a 1 x 1 x n_e vector.
                return {1, spec.n_e};
            } else {
                return in;
            }
        },
        layer);
}

void validate_layer(const LayerSpec &layer) {
    std::visit(
        [](const auto &spec) {
            using T = std::decay_t<decltype(spec)>;
            if constexpr (std::is_same_v<T, ConvSpec>) {
                if (spec.k < 1 || spec.z < 1 || spec.s < 1 || spec.p < 0 || spec.p >= spec.z)
                    throw SchemaError("conv2d: need k >= 1, z >= 1, s >= 1, 0 <= p < z");
            } else if constexpr (std::is_same_v<T, MaxPoolSpec>) {
                if (spec.z_pool < 2)
                    throw SchemaError("maxpool: need z_pool >= 2");
            } else if constexpr (std::is_same_v<T, DenseSpec>) {
                if (spec.n_e < 1)
                    throw SchemaError("dense: need n_e >= 1");
            }
        },
        layer);
}

} // namespace

std::vector<TensorShape> propagate_shapes(const Architecture &arch) {
    if (arch.input.h < 1 || arch.input.c < 1)
        throw SchemaError("input shape must have h >= 1 and c >= 1");
    std::vector<TensorShape> out;
    if (arch.layers.empty()) {
        out.push_back(arch.input);
        return out;
    }
    out.reserve(arch.layers.size());
    TensorShape cur = arch.input;
    for (const LayerSpec &layer : arch.layers) {
        validate_layer(layer);
        cur = layer_output_shape(layer, cur);
        out.push_back(cur);
    }
    return out;
}

std::uint64_t mac_complexity(const LayerSpec &layer, const TensorShape &in_shape) {
    return std::visit(
        [&](const auto &spec) -> std::uint64_t {
            using T = std::decay_t<decltype(spec)>;
            if constexpr (std::is_same_v<T, ConvSpec>) {
                const std::uint64_t h_out = conv_output_side(in_shape.h, spec.z, spec.p, spec.s);
                const std::uint64_t per_output = std::uint64_t(spec.z) * spec.z * in_shape.c;
                return per_output * (h_out * h_out * std::uint64_t(spec.k));
            } else if constexpr (std::is_same_v<T, DenseSpec>) {
                return std::uint64_t(in_shape.flat_len()) * std::uint64_t(spec.n_e);
            } else {
                return std::uint64_t(layer_output_shape(spec, in_shape).flat_len());
            }
        },
        layer);
}

bool is_mac_complexity(const LayerSpec &layer) {
    return std::holds_alternative<ConvSpec>(layer) || std::holds_alternative<DenseSpec>(layer);
}

ConvVariant select_conv_variant(int c_in, int c_out) {
    if (c_in % 4 == 0 && c_out % 2 == 0)
        return ConvVariant::Fast;
    if (c_in == 3)
        return ConvVariant::Rgb;
    return ConvVariant::Basic;
}

ConvVariant resolve_conv_variant(const ConvSpec &spec, int c_in) {
    if (spec.variant != ConvVariant::Auto)
        return spec.variant;
    return select_conv_variant(c_in, spec.k);
}

void validate(const Architecture &arch) {
    if (arch.layers.empty())
        throw SchemaError("architecture needs at least one layer");
    propagate_shapes(arch); // throws on any inconsistency
}

std::string to_string(ConvVariant v) {
    switch (v) {
    case ConvVariant::Auto: return "auto";
    case ConvVariant::Basic: return "basic";
    case ConvVariant::Fast: return "fast";
    case ConvVariant::Rgb: return "rgb";
    }
    return "auto";
}

std::string to_string(ActivationKind k) {
    switch (k) {
    case ActivationKind::ReLU: return "relu";
    case ActivationKind::Sigmoid: return "sigmoid";
    case ActivationKind::Tanh: return "tanh";
    case ActivationKind::Softmax: return "softmax";
    }
    return "relu";
}

std::string layer_type_name(const LayerSpec &layer) {
    if (std::holds_alternative<ConvSpec>(layer)) return "conv2d";
    if (std::holds_alternative<MaxPoolSpec>(layer)) return "maxpool";
    if (std::holds_alternative<DenseSpec>(layer)) return "dense";
    return "activation";
}

namespace {

using nlohmann::json;

ConvVariant variant_from_string(const std::string &s) {
    if (s == "auto") return ConvVariant::Auto;
    if (s == "basic") return ConvVariant::Basic;
    if (s == "fast") return ConvVariant::Fast;
    if (s == "rgb") return ConvVariant::Rgb;
    throw SchemaError("unknown conv variant: " + s);
}

ActivationKind activation_from_string(const std::string &s) {
    if (s == "relu") return ActivationKind::ReLU;
    if (s == "sigmoid") return ActivationKind::Sigmoid;
    if (s == "tanh") return ActivationKind::Tanh;
    if (s == "softmax") return ActivationKind::Softmax;
    throw SchemaError("unknown activation kind: " + s);
}

void reject_unknown_fields(const json &j, const std::set<std::string> &allowed,
                           const std::string &where) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key()))
            throw SchemaError("unknown field \"" + it.key() + "\" in " + where);
}

int require_int(const json &j, const std::string &key, const std::string &where) {
    if (!j.contains(key))
        throw SchemaError("missing field \"" + key + "\" in " + where);
    if (!j.at(key).is_number_integer())
        throw SchemaError("field \"" + key + "\" in " + where + " must be an integer");
    return j.at(key).get<int>();
}

LayerSpec layer_from_json(const json &j, std::size_t index) {
    const std::string where = "layer " + std::to_string(index);
    if (!j.is_object() || !j.contains("type") || !j.at("type").is_string())
        throw SchemaError(where + " must be an object with a string \"type\"");
    const std::string type = j.at("type").get<std::string>();
    if (type == "conv2d") {
        reject_unknown_fields(j, {"type", "k", "z", "s", "p", "variant"}, where);
        ConvSpec spec;
        spec.k = require_int(j, "k", where);
        spec.z = require_int(j, "z", where);
        spec.s = require_int(j, "s", where);
        spec.p = require_int(j, "p", where);
        if (j.contains("variant"))
            spec.variant = variant_from_string(j.at("variant").get<std::string>());
        return spec;
    }
    if (type == "maxpool") {
        reject_unknown_fields(j, {"type", "z_pool"}, where);
        return MaxPoolSpec{require_int(j, "z_pool", where)};
    }
    if (type == "dense") {
        reject_unknown_fields(j, {"type", "n_e"}, where);
        return DenseSpec{require_int(j, "n_e", where)};
    }
    if (type == "activation") {
        reject_unknown_fields(j, {"type", "kind"}, where);
        if (!j.contains("kind") || !j.at("kind").is_string())
            throw SchemaError(where + ": activation needs a string \"kind\"");
        return ActivationSpec{activation_from_string(j.at("kind").get<std::string>())};
    }
    throw SchemaError(where + ": unknown layer type \"" + type + "\"");
}

json layer_to_json(const LayerSpec &layer) {
    json j;
    j["type"] = layer_type_name(layer);
    std::visit(
        [&](const auto &spec) {
            using T = std::decay_t<decltype(spec)>;
            if constexpr (std::is_same_v<T, ConvSpec>) {
                j["k"] = spec.k;
                j["z"] = spec.z;
                j["s"] = spec.s;
                j["p"] = spec.p;
                j["variant"] = to_string(spec.variant);
            } else if constexpr (std::is_same_v<T, MaxPoolSpec>) {
                j["z_pool"] = spec.z_pool;
            } else if constexpr (std::is_same_v<T, DenseSpec>) {
                j["n_e"] = spec.n_e;
            } else {
                j["kind"] = to_string(spec.kind);
            }
        },
        layer);
    return j;
}

} // namespace

Architecture architecture_from_json(const nlohmann::json &j) {
    if (!j.is_object())
        throw SchemaError("architecture document must be a JSON object");
    reject_unknown_fields(j, {"input", "layers"}, "architecture");
    if (!j.contains("input") || !j.contains("layers"))
        throw SchemaError("architecture needs \"input\" and \"layers\"");
    const json &in = j.at("input");
    if (!in.is_object())
        throw SchemaError("\"input\" must be an object");
    reject_unknown_fields(in, {"h", "c"}, "input");
    Architecture arch;
    arch.input.h = require_int(in, "h", "input");
    arch.input.c = require_int(in, "c", "input");
    if (!j.at("layers").is_array())
        throw SchemaError("\"layers\" must be an array");
    std::size_t idx = 0;
    for (const json &lj : j.at("layers"))
        arch.layers.push_back(layer_from_json(lj, idx++));
    validate(arch);
    return arch;
}

nlohmann::json architecture_to_json(const Architecture &arch) {
    nlohmann::json j;
    j["input"] = {{"h", arch.input.h}, {"c", arch.input.c}};
    j["layers"] = nlohmann::json::array();
    for (const LayerSpec &layer : arch.layers)
        j["layers"].push_back(layer_to_json(layer));
    return j;
}

Architecture load_architecture(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in)
        throw FormatError("cannot open " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception &e) {
        throw SchemaError("invalid JSON in " + path.string() + ": " + e.what());
    }
    return architecture_from_json(j);
}

void save_architecture(const Architecture &arch, const std::filesystem::path &path) {
    std::ofstream out(path);
    if (!out)
        throw FormatError("cannot write " + path.string());
    out << architecture_to_json(arch).dump(2) << "\n";
}

namespace {

bool relu_vs_not_equal(ActivationKind a, ActivationKind b) {
    return (a == ActivationKind::ReLU) == (b == ActivationKind::ReLU);
}

void diff_field(std::vector<ArchDiffEntry> &out, const std::string &loc, const std::string &field,
                long long lhs, long long rhs) {
    if (lhs != rhs)
        out.push_back({loc, field, std::to_string(lhs), std::to_string(rhs)});
}

} // namespace

std::vector<ArchDiffEntry> diff_architectures(const Architecture &a, const Architecture &b) {
    std::vector<ArchDiffEntry> out;
    diff_field(out, "input", "h", a.input.h, b.input.h);
    diff_field(out, "input", "c", a.input.c, b.input.c);
    if (a.layers.size() != b.layers.size()) {
        out.push_back({"architecture", "layer_count", std::to_string(a.layers.size()),
                       std::to_string(b.layers.size())});
        return out;
    }
    std::vector<TensorShape> shapes_a;
    try {
        shapes_a = propagate_shapes(a);
    } catch (const Error &) {
        shapes_a.assign(a.layers.size(), TensorShape{});
    }
    TensorShape in_a = a.input;
    for (std::size_t i = 0; i < a.layers.size(); ++i) {
        const std::string loc = "layer " + std::to_string(i);
        const LayerSpec &la = a.layers[i];
        const LayerSpec &lb = b.layers[i];
        if (layer_type_name(la) != layer_type_name(lb)) {
            out.push_back({loc, "type", layer_type_name(la), layer_type_name(lb)});
        } else if (const auto *ca = std::get_if<ConvSpec>(&la)) {
            const auto &cb = std::get<ConvSpec>(lb);
            diff_field(out, loc, "k", ca->k, cb.k);
            diff_field(out, loc, "z", ca->z, cb.z);
            diff_field(out, loc, "s", ca->s, cb.s);
            diff_field(out, loc, "p", ca->p, cb.p);
            const ConvVariant va = resolve_conv_variant(*ca, in_a.c);
            const ConvVariant vb = resolve_conv_variant(cb, in_a.c);
            if (va != vb)
                out.push_back({loc, "variant", to_string(va), to_string(vb)});
        } else if (const auto *pa = std::get_if<MaxPoolSpec>(&la)) {
            diff_field(out, loc, "z_pool", pa->z_pool, std::get<MaxPoolSpec>(lb).z_pool);
        } else if (const auto *da = std::get_if<DenseSpec>(&la)) {
            diff_field(out, loc, "n_e", da->n_e, std::get<DenseSpec>(lb).n_e);
        } else {
            const auto &aa = std::get<ActivationSpec>(la);
            const auto &ab = std::get<ActivationSpec>(lb);
            if (!relu_vs_not_equal(aa.kind, ab.kind))
                out.push_back({loc, "kind", to_string(aa.kind), to_string(ab.kind)});
        }
        if (i < shapes_a.size())
            in_a = shapes_a[i];
    }
    return out;
}

} // namespace archoscope
