#include "archoscope/events.hpp"

#include <cmath>

namespace archoscope {

namespace {

const char *kClassNames[kNumEventClasses] = {
    "composite",        "im2col_column",    "gemm_call",
    "gemm_kernel_pair", "simd_mac_group",   "gemm_remainder",
    "pool_x_step",      "pool_y_step",      "dense_neuron_group",
    "dense_mac_group",  "dense_remainder_neuron",
    "act_relu_elem",    "act_sigmoid_elem", "act_tanh_elem",
    "layer_gap",
};

} // namespace

const char *event_class_name(EventClass cls) {
    return kClassNames[static_cast<int>(cls)];
}

EventClass event_class_from_name(const std::string &name) {
    for (int i = 0; i < kNumEventClasses; ++i)
        if (name == kClassNames[i])
            return static_cast<EventClass>(i);
    throw SchemaError("unknown event class: " + name);
}

double CostModel::leaf_cost_us(EventClass cls) const {
    switch (cls) {
    case EventClass::Im2colColumn: return im2col_column_us;
    case EventClass::SimdMacGroup: return simd_mac_group_us;
    case EventClass::GemmRemainder: return gemm_remainder_us;
    case EventClass::PoolXStep: return pool_x_step_us;
    case EventClass::PoolYStep: return pool_y_step_us;
    case EventClass::DenseMacGroup: return dense_mac_group_us;
    case EventClass::DenseRemainderNeuron: return dense_remainder_neuron_us;
    case EventClass::ActReluElem: return act_relu_elem_us;
    case EventClass::ActTanhElem: return act_tanh_elem_us;
    case EventClass::ActSigmoidElem: return act_sigmoid_elem_us;
    case EventClass::LayerGap: return layer_gap_us;
    default:
        throw SchemaError(std::string("no leaf cost for class ") + event_class_name(cls));
    }
}

void CostModel::check() const {
    const double costs[] = {im2col_column_us,  simd_mac_group_us, gemm_remainder_us,
                            pool_x_step_us,    pool_y_step_us,    dense_mac_group_us,
                            dense_remainder_neuron_us, act_relu_elem_us, act_tanh_elem_us,
                            act_sigmoid_elem_us, layer_gap_us,    pool_block_gap_us};
    for (double c : costs)
        if (!(c > 0.0))
            throw SchemaError("cost model durations must all be positive");
    if (!(act_relu_elem_us < act_tanh_elem_us && act_tanh_elem_us < act_sigmoid_elem_us))
        throw SchemaError("cost model must keep relu < tanh < sigmoid element cost");
}

namespace {

struct CostField {
    const char *name;
    double CostModel::*member;
};

const CostField kCostFields[] = {
    {"im2col_column_us", &CostModel::im2col_column_us},
    {"simd_mac_group_us", &CostModel::simd_mac_group_us},
    {"gemm_remainder_us", &CostModel::gemm_remainder_us},
    {"pool_x_step_us", &CostModel::pool_x_step_us},
    {"pool_y_step_us", &CostModel::pool_y_step_us},
    {"dense_mac_group_us", &CostModel::dense_mac_group_us},
    {"dense_remainder_neuron_us", &CostModel::dense_remainder_neuron_us},
    {"act_relu_elem_us", &CostModel::act_relu_elem_us},
    {"act_tanh_elem_us", &CostModel::act_tanh_elem_us},
    {"act_sigmoid_elem_us", &CostModel::act_sigmoid_elem_us},
    {"layer_gap_us", &CostModel::layer_gap_us},
    {"pool_block_gap_us", &CostModel::pool_block_gap_us},
};

} // namespace

CostModel cost_model_from_json(const nlohmann::json &j) {
    if (!j.is_object())
        throw SchemaError("cost model must be a JSON object");
    CostModel cost;
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const CostField &f : kCostFields) {
            if (it.key() == f.name) {
                if (!it.value().is_number())
                    throw SchemaError("cost model field " + it.key() + " must be a number");
                cost.*(f.member) = it.value().get<double>();
                known = true;
                break;
            }
        }
        if (!known)
            throw SchemaError("unknown cost model field: " + it.key());
    }
    cost.check();
    return cost;
}

nlohmann::json cost_model_to_json(const CostModel &cost) {
    nlohmann::json j;
    for (const CostField &f : kCostFields)
        j[f.name] = cost.*(f.member);
    return j;
}

void visit_events(const EventNode &root, const std::function<void(const EventNode &)> &fn) {
    fn(root);
    for (const EventNode &child : root.children)
        visit_events(child, fn);
}

std::int64_t count_nodes(const EventNode &root, EventClass cls) {
    std::int64_t n = 0;
    visit_events(root, [&](const EventNode &node) {
        if (node.cls == cls)
            ++n;
    });
    return n;
}

std::int64_t count_children(const EventNode &node, EventClass cls) {
    std::int64_t n = 0;
    for (const EventNode &child : node.children)
        if (child.cls == cls)
            ++n;
    return n;
}

std::int64_t count_leaves(const EventNode &root, EventClass cls) {
    std::int64_t n = 0;
    visit_events(root, [&](const EventNode &node) {
        if (node.leaf() && node.cls == cls)
            ++n;
    });
    return n;
}

bool spans_consistent(const EventNode &root, double tol_us) {
    if (root.leaf())
        return root.duration_us >= 0.0;
    double sum = 0.0;
    double cursor = root.start_us;
    for (const EventNode &child : root.children) {
        if (std::abs(child.start_us - cursor) > tol_us)
            return false;
        if (!spans_consistent(child, tol_us))
            return false;
        cursor = child.end_us();
        sum += child.duration_us;
    }
    return std::abs(sum - root.duration_us) <= tol_us * std::max<double>(1, root.children.size());
}

nlohmann::json event_tree_to_json(const EventNode &root) {
    nlohmann::json j;
    j["label"] = root.label;
    j["class"] = event_class_name(root.cls);
    j["start_us"] = root.start_us;
    j["duration_us"] = root.duration_us;
    if (!root.children.empty()) {
        nlohmann::json kids = nlohmann::json::array();
        for (const EventNode &child : root.children)
            kids.push_back(event_tree_to_json(child));
        j["children"] = std::move(kids);
    }
    return j;
}

EventNode event_tree_from_json(const nlohmann::json &j) {
    EventNode node;
    node.label = j.at("label").get<std::string>();
    node.cls = event_class_from_name(j.at("class").get<std::string>());
    node.start_us = j.at("start_us").get<double>();
    node.duration_us = j.at("duration_us").get<double>();
    if (j.contains("children"))
        for (const nlohmann::json &cj : j.at("children"))
            node.children.push_back(event_tree_from_json(cj));
    return node;
}

} // namespace archoscope
