#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "archoscope/arch.hpp"
#include "archoscope/config.hpp"
#include "archoscope/emulate.hpp"
#include "archoscope/extract.hpp"
#include "archoscope/render.hpp"
#include "archoscope/spectro_export.hpp"
#include "archoscope/trace.hpp"

namespace {

using namespace archoscope;

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitSynthesis = 3;
constexpr int kExitUnresolved = 4;

struct LayerSummary {
    const EventNode *node;
};

void print_layer_counts(const EventNode &layer) {
    const std::int64_t calls = count_children(layer, EventClass::GemmCall);
    if (calls > 0) {
        std::int64_t pairs = 0, simd = 0;
        for (const EventNode &call : layer.children) {
            if (call.cls != EventClass::GemmCall)
                continue;
            pairs = count_children(call, EventClass::GemmKernelPair);
            for (const EventNode &pair : call.children)
                if (pair.cls == EventClass::GemmKernelPair) {
                    simd = count_children(pair, EventClass::SimdMacGroup);
                    break;
                }
            break;
        }
        std::printf("  gemm_calls=%lld kernel_pairs_per_call=%lld mac_groups_per_pair=%lld\n",
                    (long long)calls, (long long)pairs, (long long)simd);
        return;
    }
    const std::int64_t groups = count_children(layer, EventClass::DenseNeuronGroup);
    const std::int64_t rems = count_children(layer, EventClass::DenseRemainderNeuron);
    if (groups > 0 || rems > 0) {
        std::printf("  neuron_groups=%lld remainder_neurons=%lld\n", (long long)groups,
                    (long long)rems);
        return;
    }
    const std::int64_t px = count_leaves(layer, EventClass::PoolXStep);
    const std::int64_t py = count_leaves(layer, EventClass::PoolYStep);
    if (px > 0 || py > 0) {
        std::printf("  pool_x_steps=%lld pool_y_steps=%lld\n", (long long)px, (long long)py);
        return;
    }
    const std::int64_t elems = count_leaves(layer, EventClass::ActReluElem) +
                               count_leaves(layer, EventClass::ActSigmoidElem) +
                               count_leaves(layer, EventClass::ActTanhElem);
    if (elems > 0)
        std::printf("  elements=%lld\n", (long long)elems);
}

void print_tree_summary(const EventNode &root) {
    std::printf("event tree: %.1f us total\n", root.duration_us);
    int idx = 0;
    for (const EventNode &child : root.children) {
        if (child.cls == EventClass::LayerGap)
            continue;
        std::printf("layer %d (%s): start=%.1f us duration=%.1f us\n", idx, child.label.c_str(),
                    child.start_us, child.duration_us);
        print_layer_counts(child);
        ++idx;
    }
}

bool parse_shape(const std::string &text, TensorShape &shape) {
    const auto x = text.find('x');
    if (x == std::string::npos)
        return false;
    try {
        shape.h = std::stoi(text.substr(0, x));
        shape.c = std::stoi(text.substr(x + 1));
    } catch (...) {
        return false;
    }
    return shape.h >= 1 && shape.c >= 1;
}

int cmd_synth(const std::string &arch_path, const std::string &out_path,
              const std::optional<std::string> &config_path,
              const std::optional<std::string> &cost_path, std::optional<double> noise,
              std::optional<int> average, std::optional<std::uint64_t> seed,
              std::optional<double> sample_rate, bool annotate) {
    ToolConfig cfg;
    Architecture arch;
    try {
        cfg = load_tool_config(config_path ? std::optional<std::filesystem::path>(*config_path)
                                           : std::nullopt);
        if (cost_path) {
            std::ifstream in(*cost_path);
            if (!in)
                throw FormatError("cannot open cost model " + *cost_path);
            nlohmann::json j;
            in >> j;
            cfg.cost = cost_model_from_json(j);
        }
        arch = load_architecture(arch_path);
    } catch (const Error &e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitInput;
    } catch (const nlohmann::json::exception &e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitInput;
    }

    if (noise)
        cfg.render.noise_sigma = *noise;
    if (average)
        cfg.render.n_average = *average;
    if (seed)
        cfg.render.rng_seed = *seed;
    if (sample_rate)
        cfg.render.sample_rate_hz = *sample_rate;

    try {
        const EventNode tree = emulate_inference(arch, cfg.cost);
        Trace trace = render_trace(tree, cfg.render);
        write_trace(trace, out_path, annotate);
        print_tree_summary(tree);
        std::printf("wrote %s (%lld samples at %.0f MS/s)\n", out_path.c_str(),
                    (long long)trace.size(), trace.sample_rate_hz / 1e6);
    } catch (const Error &e) {
        std::fprintf(stderr, "synthesis error: %s\n", e.what());
        return kExitSynthesis;
    }
    return kExitOk;
}

int cmd_extract(const std::string &trace_path, const std::string &shape_text,
                const std::optional<std::string> &report_path,
                const std::optional<std::string> &thresholds_path,
                const std::optional<std::string> &config_path, const std::string &task_hint) {
    ToolConfig cfg;
    Trace trace;
    ExtractPrior prior;
    try {
        cfg = load_tool_config(config_path ? std::optional<std::filesystem::path>(*config_path)
                                           : std::nullopt);
        if (thresholds_path) {
            std::ifstream in(*thresholds_path);
            if (!in)
                throw FormatError("cannot open thresholds file " + *thresholds_path);
            nlohmann::json j;
            in >> j;
            cfg.detect = detector_params_from_json(j);
        }
        if (!parse_shape(shape_text, prior.input_shape))
            throw SchemaError("--input-shape must look like 28x1");
        prior.task_hint = task_hint;
        trace = read_trace(trace_path);
    } catch (const Error &e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitInput;
    } catch (const nlohmann::json::exception &e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitInput;
    }

    const ExtractionReport report = extract_architecture(trace, prior, cfg.detect, cfg.cost);

    if (report_path) {
        std::ofstream out(*report_path);
        if (!out) {
            std::fprintf(stderr, "error: cannot write %s\n", report_path->c_str());
            return kExitInput;
        }
        out << report_to_json(report, cfg.detect, cfg.cost).dump(2) << "\n";
    }

    std::printf("%-6s %-11s %-40s %10s\n", "layer", "kind", "params", "confidence");
    int idx = 0;
    for (const LayerHypothesis &h : report.hypotheses) {
        std::string params;
        const RecoveredParams &p = h.params;
        auto add = [&](const std::string &name, auto value) {
            if (!params.empty())
                params += " ";
            params += name + "=" + std::to_string(value);
        };
        if (p.h_out) add("h_out", *p.h_out);
        if (p.k) add("k", *p.k);
        if (p.z) add("z", *p.z);
        if (p.s) add("s", *p.s);
        if (p.p) add("p", *p.p);
        if (p.n_e) add("n_e", *p.n_e);
        if (p.z_pool) add("z_pool", *p.z_pool);
        if (p.relu)
            params += (params.empty() ? "" : " ") + std::string(*p.relu ? "relu" : "non-relu");
        if (!h.resolved)
            params = "(unresolved" + (h.note.empty() ? "" : ": " + h.note) + ")";
        std::printf("%-6d %-11s %-40s %10.2f\n", idx++, layer_kind_name(h.kind), params.c_str(),
                    h.confidence);
    }
    if (!report.error.empty())
        std::printf("note: %s\n", report.error.c_str());
    std::printf("%s\n", report.fully_resolved ? "fully resolved" : "unresolved layers remain");
    return report.fully_resolved ? kExitOk : kExitUnresolved;
}

int cmd_diff(const std::string &a_path, const std::string &b_path) {
    Architecture a, b;
    try {
        a = load_architecture(a_path);
        b = load_architecture(b_path);
    } catch (const Error &e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitInput;
    }
    const std::vector<ArchDiffEntry> diff = diff_architectures(a, b);
    for (const ArchDiffEntry &d : diff)
        std::printf("%s: %s: %s != %s\n", d.location.c_str(), d.field.c_str(), d.lhs.c_str(),
                    d.rhs.c_str());
    if (diff.empty()) {
        std::printf("identical\n");
        return kExitOk;
    }
    return 1;
}

int cmd_spectro(const std::string &trace_path, const std::string &out_path, int window, int hop) {
    try {
        const Trace trace = read_trace(trace_path);
        const std::span<const float> x(trace.samples.data(), trace.samples.size());
        const Spectrogram spec = spectrogram(x, window, hop, trace.sample_rate_hz);
        const std::filesystem::path out(out_path);
        if (out.extension() == ".png")
            write_spectrogram_png(spec, out);
        else if (out.extension() == ".csv")
            write_spectrogram_csv(spec, out);
        else
            throw SchemaError("output must end in .csv or .png");
        std::printf("wrote %s (%lld frames x %d bins)\n", out_path.c_str(),
                    (long long)spec.n_frames, spec.n_bins);
    } catch (const Error &e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitInput;
    }
    return kExitOk;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"archoscope: loop-structure trace synthesis and blind architecture extraction"};
    app.require_subcommand(1);

    std::string arch_path, out_path, trace_path, shape_text, a_path, b_path;
    std::optional<std::string> config_path, cost_path, report_path, thresholds_path;
    std::optional<double> noise, sample_rate;
    std::optional<int> average;
    std::optional<std::uint64_t> seed;
    std::string task_hint;
    bool annotate = false;
    int window = 512, hop = 256;

    CLI::App *synth = app.add_subcommand("synth", "render an architecture to an EMT1 trace");
    synth->add_option("arch", arch_path, "architecture JSON")->required();
    synth->add_option("out", out_path, "output trace file")->required();
    synth->add_option("--seed", seed, "render RNG seed");
    synth->add_option("--noise", noise, "noise sigma before averaging");
    synth->add_option("--average", average, "number of averaged acquisitions");
    synth->add_option("--sample-rate", sample_rate, "sample rate in Hz");
    synth->add_option("--cost-model", cost_path, "cost model JSON file");
    synth->add_option("--config", config_path, "config file (default $ARCHOSCOPE_CONFIG)");
    synth->add_flag("--annotate", annotate, "append the event-tree annotation chunk");

    CLI::App *extract = app.add_subcommand("extract", "recover an architecture from a trace");
    extract->add_option("trace", trace_path, "input EMT1 trace")->required();
    extract->add_option("--input-shape", shape_text, "model input shape, e.g. 28x1")->required();
    extract->add_option("--report", report_path, "write the extraction report JSON here");
    extract->add_option("--thresholds", thresholds_path, "detector thresholds JSON file");
    extract->add_option("--config", config_path, "config file (default $ARCHOSCOPE_CONFIG)");
    extract->add_option("--task-hint", task_hint, "optional prior: vision or tabular");

    CLI::App *diff = app.add_subcommand("diff", "structural diff of two architecture files");
    diff->add_option("a", a_path, "first architecture JSON")->required();
    diff->add_option("b", b_path, "second architecture JSON")->required();

    CLI::App *spectro = app.add_subcommand("spectro", "export a spectrogram as CSV or PNG");
    spectro->add_option("trace", trace_path, "input EMT1 trace")->required();
    spectro->add_option("out", out_path, "output .csv or .png")->required();
    spectro->add_option("--window", window, "STFT window (samples)");
    spectro->add_option("--hop", hop, "STFT hop (samples)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitInput;
    }

    if (synth->parsed())
        return cmd_synth(arch_path, out_path, config_path, cost_path, noise, average, seed,
                         sample_rate, annotate);
    if (extract->parsed())
        return cmd_extract(trace_path, shape_text, report_path, thresholds_path, config_path,
                           task_hint);
    if (diff->parsed())
        return cmd_diff(a_path, b_path);
    if (spectro->parsed())
        return cmd_spectro(trace_path, out_path, window, hop);
    return kExitInput;
}
