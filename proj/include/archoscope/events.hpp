#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "archoscope/errors.hpp"

#include <json.hpp>

namespace archoscope {

// One class per repeated computation motif. Composite tags an internal
// grouping node with no activity of its own; classed internal nodes
// (GemmCall, GemmKernelPair, DenseNeuronGroup, GemmRemainder blocks)
// carry children plus an onset marker when rendered.
enum class EventClass : int {
    Composite = 0,
    Im2colColumn,
    GemmCall,
    GemmKernelPair,
    SimdMacGroup,
    GemmRemainder,
    PoolXStep,
    PoolYStep,
    DenseNeuronGroup,
    DenseMacGroup,
    DenseRemainderNeuron,
    ActReluElem,
    ActSigmoidElem,
    ActTanhElem,
    LayerGap,
};

constexpr int kNumEventClasses = 15;

const char *event_class_name(EventClass cls);
EventClass event_class_from_name(const std::string &name);

struct EventNode {
    std::string label;
    EventClass cls = EventClass::Composite;
    double start_us = 0.0;
    double duration_us = 0.0;
    std::vector<EventNode> children;

    bool leaf() const { return children.empty(); }
    double end_us() const { return start_us + duration_us; }
};

// Per-leaf durations in microseconds. Magnitudes are calibration knobs,
// not measured values; the only hard ordering is relu < tanh < sigmoid.
struct CostModel {
    double im2col_column_us = 0.5;
    double simd_mac_group_us = 0.25;
    double gemm_remainder_us = 0.15;
    double pool_x_step_us = 0.2;
    double pool_y_step_us = 1.0;
    double dense_mac_group_us = 0.25;
    double dense_remainder_neuron_us = 0.3;
    double act_relu_elem_us = 0.05;
    double act_tanh_elem_us = 0.4;
    double act_sigmoid_elem_us = 0.8;
    double layer_gap_us = 50.0;
    double pool_block_gap_us = 8.0;

    double leaf_cost_us(EventClass cls) const;
    void check() const; // throws SchemaError when a duration or the AF ordering is broken
};

CostModel cost_model_from_json(const nlohmann::json &j);
nlohmann::json cost_model_to_json(const CostModel &cost);

// Tree helpers shared by tests, the extractor calibration and the CLI
// summary printer.
void visit_events(const EventNode &root, const std::function<void(const EventNode &)> &fn);
std::int64_t count_nodes(const EventNode &root, EventClass cls);
std::int64_t count_children(const EventNode &node, EventClass cls);
std::int64_t count_leaves(const EventNode &root, EventClass cls);

// True when every internal node's duration equals the sum of its
// children and children are contiguous within the parent span.
bool spans_consistent(const EventNode &root, double tol_us = 1e-9);

nlohmann::json event_tree_to_json(const EventNode &root);
EventNode event_tree_from_json(const nlohmann::json &j);

} // namespace archoscope
