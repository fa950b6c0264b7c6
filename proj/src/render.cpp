#include "archoscope/render.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace archoscope {

namespace {

constexpr double kTau = 6.283185307179586;

// Leaf body shaping: a short onset bump and a quieter guard tail give
// same-class leaf trains their repetition texture.
constexpr double kLeafOnsetGain = 0.7;
constexpr double kLeafOnsetTauSamples = 4.0;
constexpr double kGuardFraction = 0.12;
constexpr double kGuardScale = 0.35;

// Classed internal nodes contribute a decaying onset transient, the
// "spike before the lower-frequency activity" look of loop headers.
constexpr double kSpikeTauCapSamples = 16.0;

struct ClassDefault {
    EventClass cls;
    double amp;
    double carrier;
};

// Carrier periods stay below twice the finest analysis window so RMS
// envelopes see flat plateaus instead of carrier ripple, while the
// periods remain pairwise distinct for spectrogram contrast.
const ClassDefault kClassDefaults[] = {
    {EventClass::Composite, 0.0, 4.0},
    {EventClass::Im2colColumn, 0.05, 13.0},
    {EventClass::GemmCall, 2.10, 3.2},
    {EventClass::GemmKernelPair, 1.30, 3.7},
    {EventClass::SimdMacGroup, 0.40, 6.1},
    {EventClass::GemmRemainder, 0.10, 9.3},
    {EventClass::PoolXStep, 0.16, 11.2},
    {EventClass::PoolYStep, 0.64, 7.1},
    {EventClass::DenseNeuronGroup, 1.65, 4.3},
    {EventClass::DenseMacGroup, 0.51, 5.2},
    {EventClass::DenseRemainderNeuron, 0.127, 10.1},
    {EventClass::ActReluElem, 0.20, 3.4},
    {EventClass::ActSigmoidElem, 0.32, 8.2},
    {EventClass::ActTanhElem, 0.25, 6.7},
    {EventClass::LayerGap, 0.0, 4.0},
};

// splitmix64; chunk seeds derive from (seed, chunk index) so the noise
// stream is independent of thread count.
std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

struct NoiseStream {
    std::uint64_t state;
    bool have_spare = false;
    double spare = 0.0;

    explicit NoiseStream(std::uint64_t seed) : state(seed) {}

    double uniform() {
        state = mix64(state);
        return (double(state >> 11) + 0.5) * 0x1.0p-53;
    }

    double gauss() {
        if (have_spare) {
            have_spare = false;
            return spare;
        }
        const double u = uniform();
        const double v = uniform();
        const double r = std::sqrt(-2.0 * std::log(u));
        spare = r * std::sin(kTau * v);
        have_spare = true;
        return r * std::cos(kTau * v);
    }
};

enum class BurstKind { LeafBody, OnsetSpike };

struct Burst {
    std::int64_t start = 0;
    std::int64_t len = 0;
    float amp = 0.0f;
    float carrier = 1.0f;
    float tau = 1.0f;
    BurstKind kind = BurstKind::LeafBody;
};

void collect_bursts(const EventNode &node, const RenderParams &params, double rate,
                    std::vector<Burst> &out) {
    const auto to_samples = [&](double us) { return std::int64_t(std::llround(us * 1e-6 * rate)); };
    const std::int64_t start = to_samples(node.start_us);
    const std::int64_t end = to_samples(node.end_us());
    const std::int64_t len = end - start;
    const double amp = params.amp(node.cls);

    if (node.leaf()) {
        if (amp > 0.0 && len > 0)
            out.push_back({start, len, float(amp), float(params.carrier(node.cls)),
                           float(std::min(kLeafOnsetTauSamples, 0.1 * double(len))),
                           BurstKind::LeafBody});
        return;
    }
    if (node.cls != EventClass::Composite && amp > 0.0 && len > 0) {
        const double tau = std::min(kSpikeTauCapSamples, 0.2 * double(len));
        const std::int64_t spike_len = std::min<std::int64_t>(len, std::int64_t(5.0 * tau) + 1);
        out.push_back({start, spike_len, float(amp), float(params.carrier(node.cls)), float(tau),
                       BurstKind::OnsetSpike});
    }
    for (const EventNode &child : node.children)
        collect_bursts(child, params, rate, out);
}

void add_burst(const Burst &b, std::int64_t lo, std::int64_t hi, std::vector<float> &samples) {
    const std::int64_t from = std::max(lo, b.start);
    const std::int64_t to = std::min(hi, b.start + b.len);
    const double guard_start = double(b.len) * (1.0 - kGuardFraction);
    for (std::int64_t i = from; i < to; ++i) {
        const double t = double(i - b.start);
        const double osc = std::sin(kTau * t / b.carrier);
        double v;
        if (b.kind == BurstKind::LeafBody) {
            double env = 1.0 + kLeafOnsetGain * std::exp(-t / b.tau);
            if (t >= guard_start)
                env *= kGuardScale;
            v = b.amp * env * osc;
        } else {
            v = b.amp * std::exp(-t / b.tau) * osc;
        }
        samples[std::size_t(i)] += float(v);
    }
}

double shortest_leaf_us(const EventNode &root) {
    double best = std::numeric_limits<double>::infinity();
    visit_events(root, [&](const EventNode &node) {
        if (node.leaf() && node.duration_us > 0)
            best = std::min(best, node.duration_us);
    });
    return best;
}

} // namespace

RenderParams::RenderParams() {
    for (const ClassDefault &d : kClassDefaults) {
        amplitude[static_cast<int>(d.cls)] = d.amp;
        carrier_period_samples[static_cast<int>(d.cls)] = d.carrier;
    }
}

double RenderParams::min_class_amplitude() const {
    double best = std::numeric_limits<double>::infinity();
    for (double a : amplitude)
        if (a > 0.0)
            best = std::min(best, a);
    return best;
}

void RenderParams::check() const {
    if (!(sample_rate_hz > 0))
        throw SchemaError("sample_rate_hz must be positive");
    if (n_average < 1)
        throw SchemaError("n_average must be >= 1");
    if (noise_sigma < 0)
        throw SchemaError("noise_sigma must be >= 0");
    for (double c : carrier_period_samples)
        if (!(c >= 2.0))
            throw SchemaError("carrier periods must be >= 2 samples");
}

RenderParams render_params_from_json(const nlohmann::json &j) {
    if (!j.is_object())
        throw SchemaError("render params must be a JSON object");
    RenderParams p;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string &key = it.key();
        if (key == "sample_rate_hz")
            p.sample_rate_hz = it.value().get<double>();
        else if (key == "noise_sigma")
            p.noise_sigma = it.value().get<double>();
        else if (key == "n_average")
            p.n_average = it.value().get<int>();
        else if (key == "rng_seed")
            p.rng_seed = it.value().get<std::uint64_t>();
        else if (key == "amplitude" || key == "carrier_period_samples") {
            if (!it.value().is_object())
                throw SchemaError("render params \"" + key + "\" must map class names to numbers");
            for (auto cit = it.value().begin(); cit != it.value().end(); ++cit) {
                const EventClass cls = event_class_from_name(cit.key());
                if (key == "amplitude")
                    p.amp(cls) = cit.value().get<double>();
                else
                    p.carrier(cls) = cit.value().get<double>();
            }
        } else {
            throw SchemaError("unknown render params field: " + key);
        }
    }
    p.check();
    return p;
}

nlohmann::json render_params_to_json(const RenderParams &params) {
    nlohmann::json amps, carriers;
    for (int i = 0; i < kNumEventClasses; ++i) {
        amps[event_class_name(static_cast<EventClass>(i))] = params.amplitude[i];
        carriers[event_class_name(static_cast<EventClass>(i))] = params.carrier_period_samples[i];
    }
    return {{"sample_rate_hz", params.sample_rate_hz},
            {"noise_sigma", params.noise_sigma},
            {"n_average", params.n_average},
            {"rng_seed", params.rng_seed},
            {"amplitude", amps},
            {"carrier_period_samples", carriers}};
}

Trace render_trace(const EventNode &root, const RenderParams &params) {
    params.check();
    const double rate = params.sample_rate_hz;
    const double shortest = shortest_leaf_us(root);
    if (shortest * 1e-6 * rate < 8.0)
        throw SampleRateTooLow("shortest leaf event spans fewer than 8 samples at " +
                               std::to_string(rate * 1e-6) + " MS/s");

    Trace trace;
    trace.sample_rate_hz = rate;
    const std::int64_t n = std::int64_t(std::llround(root.duration_us * 1e-6 * rate));
    trace.samples.assign(std::size_t(n), 0.0f);

    std::vector<Burst> bursts;
    collect_bursts(root, params, rate, bursts);

    // Bursts are short and sorted by start; chunked rendering keeps every
    // output sample owned by exactly one chunk.
    const std::int64_t chunk = 1 << 16;
    const std::int64_t n_chunks = (n + chunk - 1) / chunk;

    std::vector<std::size_t> chunk_lo(static_cast<std::size_t>(n_chunks));
    std::vector<std::size_t> chunk_hi(static_cast<std::size_t>(n_chunks));
    {
        std::size_t lo = 0, hi = 0;
        for (std::int64_t k = 0; k < n_chunks; ++k) {
            const std::int64_t c0 = k * chunk;
            const std::int64_t c1 = std::min(n, c0 + chunk);
            while (lo < bursts.size() && bursts[lo].start + bursts[lo].len <= c0)
                ++lo;
            if (hi < lo)
                hi = lo;
            while (hi < bursts.size() && bursts[hi].start < c1)
                ++hi;
            chunk_lo[std::size_t(k)] = lo;
            chunk_hi[std::size_t(k)] = hi;
        }
    }

    // Averaging n independent noise realizations leaves Gaussian noise of
    // std noise_sigma / sqrt(n_average); drawn directly at that level.
    const double residual = params.noise_sigma / std::sqrt(double(params.n_average));

#pragma omp parallel for schedule(dynamic, 4)
    for (std::int64_t k = 0; k < n_chunks; ++k) {
        const std::int64_t c0 = k * chunk;
        const std::int64_t c1 = std::min(n, c0 + chunk);
        for (std::size_t b = chunk_lo[std::size_t(k)]; b < chunk_hi[std::size_t(k)]; ++b)
            add_burst(bursts[b], c0, c1, trace.samples);
        if (residual > 0.0) {
            NoiseStream noise(mix64(params.rng_seed ^ mix64(std::uint64_t(k) + 1)));
            for (std::int64_t i = c0; i < c1; ++i)
                trace.samples[std::size_t(i)] += float(residual * noise.gauss());
        }
    }

    trace.annotation_json = event_tree_to_json(root).dump();
    return trace;
}

} // namespace archoscope
