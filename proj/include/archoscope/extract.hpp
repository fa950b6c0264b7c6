#pragma once

#include <map>
#include <optional>

#include "archoscope/arch.hpp"
#include "archoscope/detect.hpp"
#include "archoscope/events.hpp"
#include "archoscope/trace.hpp"

namespace archoscope {

enum class LayerKind { Conv, Dense, MaxPool, Activation, Unknown };

const char *layer_kind_name(LayerKind kind);

// Recovered hyper-parameters; only the fields matching the kind get set.
// relu is the ReLU-vs-not verdict: sigmoid, tanh and softmax are one
// merged class as far as the trace can tell.
struct RecoveredParams {
    std::optional<int> h_out;
    std::optional<int> k;
    std::optional<int> z;
    std::optional<int> s;
    std::optional<int> p;
    std::optional<int> n_e;
    std::optional<int> z_pool;
    std::optional<bool> relu;
    bool multiple_sp = false; // stride/padding underdetermined by (h_in, h_out, z)
};

struct LayerHypothesis {
    LayerKind kind = LayerKind::Unknown;
    double kind_confidence = 0.0;
    RecoveredParams params;
    std::map<std::string, std::int64_t> pattern_counts;
    double confidence = 0.0;
    Segment segment;
    std::string note;
    bool resolved = false;
};

struct ExtractPrior {
    TensorShape input_shape;
    std::string task_hint; // "", "vision" or "tabular"
};

// Shared state while walking layers left to right.
struct ExtractionContext {
    TensorShape in_shape;
    bool shape_known = true;
    LayerKind prev_kind = LayerKind::Unknown;
    CostModel calibration;
    DetectorParams det;
};

struct ExtractionReport {
    std::vector<LayerHypothesis> hypotheses;
    std::optional<Architecture> recovered;
    bool fully_resolved = false;
    std::string prior_used;
    std::string error;
};

// Step 1: layer segmentation with the extraction defaults.
std::vector<Segment> split_layers(const Trace &trace, const DetectorParams &det = {});

// Step 2: two-feature vote (duration vs complexity-predicted durations,
// pattern signature), ties broken by the logical-order prior.
std::pair<LayerKind, double> classify_layer(const Trace &trace, const Segment &seg,
                                            const ExtractionContext &ctx);

// Step 3 per-kind recovery.
LayerHypothesis extract_conv(const Trace &trace, const Segment &seg, int c_in, int h_in,
                             const ExtractionContext &ctx);
LayerHypothesis extract_maxpool(const Trace &trace, const Segment &seg, int h_in,
                                const ExtractionContext &ctx);
LayerHypothesis extract_dense(const Trace &trace, const Segment &seg,
                              const ExtractionContext &ctx);
LayerHypothesis classify_activation(const Trace &trace, const Segment &seg, std::int64_t n_elems,
                                    const ExtractionContext &ctx);

struct StridePadding {
    std::vector<std::pair<int, int>> solutions; // (s, p)
    bool multiple = false;
};

// Brute force over p in [0, z) against the output-side equation.
// Throws NoSolution; multiple consistent pairs are all reported.
StridePadding solve_stride_padding(int h_in, int h_out, int z);

ExtractionReport extract_architecture(const Trace &trace, const ExtractPrior &prior,
                                      const DetectorParams &det = {},
                                      const CostModel &calibration = {});

nlohmann::json report_to_json(const ExtractionReport &report, const DetectorParams &det,
                              const CostModel &calibration);

} // namespace archoscope
