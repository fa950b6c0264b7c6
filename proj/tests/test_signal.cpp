#include <doctest.h>

#include <cmath>
#include <random>

#include "fixtures.hpp"

#include "archoscope/detect.hpp"
#include "archoscope/dsp.hpp"
#include "archoscope/emulate.hpp"
#include "archoscope/extract.hpp"

using namespace archoscope;

namespace {

constexpr double kPi = 3.141592653589793;

std::vector<float> sine(std::int64_t n, double period, float amp = 1.0f) {
    std::vector<float> x(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i)
        x[std::size_t(i)] = amp * float(std::sin(2.0 * kPi * double(i) / period));
    return x;
}

Trace as_trace(std::vector<float> samples, double rate = 200e6) {
    Trace t;
    t.sample_rate_hz = rate;
    t.samples = std::move(samples);
    return t;
}

// Span of a tree node selected by a path of (class, occurrence index).
struct NodeQuery {
    EventClass cls;
    int index;
};

const EventNode *find_node(const EventNode &root, std::span<const NodeQuery> path) {
    const EventNode *cur = &root;
    for (const NodeQuery &q : path) {
        int seen = 0;
        const EventNode *next = nullptr;
        for (const EventNode &child : cur->children) {
            if (child.cls == q.cls && seen++ == q.index) {
                next = &child;
                break;
            }
        }
        if (!next)
            return nullptr;
        cur = next;
    }
    return cur;
}

Segment node_segment(const Trace &trace, const EventNode &node) {
    return {trace.us_to_samples(node.start_us), trace.us_to_samples(node.end_us())};
}

// Layer nodes = non-gap children of the inference root.
std::vector<const EventNode *> layer_nodes(const EventNode &root) {
    std::vector<const EventNode *> out;
    for (const EventNode &child : root.children)
        if (child.cls != EventClass::LayerGap)
            out.push_back(&child);
    return out;
}

} // namespace

TEST_CASE("envelope basics") {
    SUBCASE("constant signal") {
        std::vector<float> x(1000, -3.0f);
        const Envelope env = envelope(x, 16, 4);
        for (double v : env.values)
            CHECK(v == doctest::Approx(3.0));
    }
    SUBCASE("zero signal") {
        std::vector<float> x(500, 0.0f);
        const Envelope env = envelope(x, 16, 4);
        for (double v : env.values)
            CHECK(v == 0.0);
    }
    SUBCASE("unit burst in silence") {
        std::vector<float> x(2000, 0.0f);
        for (int i = 800; i < 1000; ++i)
            x[std::size_t(i)] = 1.0f;
        const Envelope env = envelope(x, 16, 4);
        std::int64_t first = -1, last = -1;
        for (std::int64_t i = 0; i < env.size(); ++i) {
            if (env.values[std::size_t(i)] > 0.5) {
                if (first < 0)
                    first = i;
                last = i;
            }
        }
        REQUIRE(first >= 0);
        CHECK(std::abs(first * 4 - 800) <= 16);
        CHECK(std::abs((last * 4 + 16) - 1000) <= 16);
    }
    SUBCASE("window larger than trace") {
        std::vector<float> x(8, 1.0f);
        CHECK_THROWS_AS(envelope(x, 16, 4), WindowLargerThanTrace);
    }
}

TEST_CASE("parallel kernels match the serial references") {
    std::mt19937 rng(3);
    std::normal_distribution<float> dist(0.0f, 1.0f);
    std::vector<float> x(20000);
    for (float &v : x)
        v = dist(rng);

    const Envelope e1 = envelope(x, 32, 8);
    const Envelope e2 = reference::envelope(x, 32, 8);
    REQUIRE(e1.values.size() == e2.values.size());
    for (std::size_t i = 0; i < e1.values.size(); ++i)
        CHECK(e1.values[i] == doctest::Approx(e2.values[i]).epsilon(1e-12));

    const Spectrogram s1 = spectrogram(std::span<const float>(x.data(), 4096), 256, 128);
    const Spectrogram s2 = reference::spectrogram(std::span<const float>(x.data(), 4096), 256, 128);
    REQUIRE(s1.magnitudes.size() == s2.magnitudes.size());
    for (std::size_t i = 0; i < s1.magnitudes.size(); ++i)
        CHECK(s1.magnitudes[i] == doctest::Approx(s2.magnitudes[i]).epsilon(1e-7));

    std::vector<double> series(2048);
    for (std::size_t i = 0; i < series.size(); ++i)
        series[i] = std::sin(0.1 * double(i)) + 0.3 * std::sin(0.9 * double(i));
    const auto a1 = autocorrelation(series, 512);
    const auto a2 = reference::autocorrelation(series, 512);
    for (std::size_t i = 0; i < a2.size(); ++i)
        CHECK(a1[i] == doctest::Approx(a2[i]).epsilon(1e-9));
}

TEST_CASE("spectrogram landmarks") {
    SUBCASE("pure sinusoid concentrates at its bin") {
        const double period = 32.0;
        const Spectrogram spec = spectrogram(sine(8192, period), 512, 128);
        const int expected_bin = int(512.0 / period + 0.5);
        for (std::int64_t f = 0; f < spec.n_frames; ++f) {
            int best = 0;
            for (int b = 1; b < spec.n_bins; ++b)
                if (spec.at(f, b) > spec.at(f, best))
                    best = b;
            CHECK(std::abs(best - expected_bin) <= 1);
        }
    }
    SUBCASE("concatenated sinusoids switch energy at the junction") {
        std::vector<float> x = sine(4096, 64.0);
        const std::vector<float> y = sine(4096, 8.0);
        x.insert(x.end(), y.begin(), y.end());
        const Spectrogram spec = spectrogram(x, 512, 128);
        const int bin_lo = 8, bin_hi = 64;
        const std::int64_t junction_frame = (4096 - 512) / 128;
        for (std::int64_t f = 0; f < spec.n_frames; ++f) {
            if (f < junction_frame - 1)
                CHECK(spec.at(f, bin_lo) > spec.at(f, bin_hi));
            else if (f > junction_frame + 4)
                CHECK(spec.at(f, bin_hi) > spec.at(f, bin_lo));
        }
    }
    SUBCASE("white noise is flat within tolerance") {
        std::mt19937 rng(9);
        std::normal_distribution<float> dist(0.0f, 1.0f);
        std::vector<float> x(1 << 16);
        for (float &v : x)
            v = dist(rng);
        const Spectrogram spec = spectrogram(x, 256, 64);
        std::vector<double> bin_mean(std::size_t(spec.n_bins), 0.0);
        for (std::int64_t f = 0; f < spec.n_frames; ++f)
            for (int b = 0; b < spec.n_bins; ++b)
                bin_mean[std::size_t(b)] += spec.at(f, b) * spec.at(f, b);
        // Interior bins share the expected power (edge bins hold half).
        double lo = 1e300, hi = 0;
        for (int b = 2; b + 2 < spec.n_bins; ++b) {
            lo = std::min(lo, bin_mean[std::size_t(b)]);
            hi = std::max(hi, bin_mean[std::size_t(b)]);
        }
        CHECK(hi / lo < 1.6);
    }
    SUBCASE("sign flip leaves envelope and spectrogram unchanged") {
        std::vector<float> x = sine(4096, 48.0, 0.7f);
        std::vector<float> neg(x);
        for (float &v : neg)
            v = -v;
        const Envelope e1 = envelope(x, 32, 8), e2 = envelope(neg, 32, 8);
        for (std::size_t i = 0; i < e1.values.size(); ++i)
            CHECK(e1.values[i] == doctest::Approx(e2.values[i]));
        const Spectrogram s1 = spectrogram(x, 256, 128), s2 = spectrogram(neg, 256, 128);
        for (std::size_t i = 0; i < s1.magnitudes.size(); ++i)
            CHECK(s1.magnitudes[i] == doctest::Approx(s2.magnitudes[i]).epsilon(1e-9));
    }
}

TEST_CASE("segment_boundaries") {
    const DetectorParams det;
    SUBCASE("six-layer MLP splits into six segments") {
        const Trace trace = fixtures::render_arch(fixtures::mnist_mlp());
        const auto segs = split_layers(trace, det);
        CHECK(segs.size() == 6);
    }
    SUBCASE("silence raises NoActivityDetected") {
        std::mt19937 rng(4);
        std::normal_distribution<float> dist(0.0f, 0.002f);
        std::vector<float> x(200000);
        for (float &v : x)
            v = dist(rng);
        const Trace trace = as_trace(std::move(x));
        CHECK_THROWS_AS(split_layers(trace, det), NoActivityDetected);
    }
    SUBCASE("two bursts separated by exactly min_gap stay separate") {
        const double rate = 200e6;
        const std::int64_t gap = std::int64_t(det.min_gap_us * 1e-6 * rate); // 4000 samples
        std::vector<float> x;
        auto burst = [&](std::int64_t n) {
            for (std::int64_t i = 0; i < n; ++i)
                x.push_back(0.5f * float(std::sin(2 * kPi * double(i) / 16.0)));
        };
        auto silence = [&](std::int64_t n) { x.insert(x.end(), std::size_t(n), 0.0f); };
        silence(8000);
        burst(4000);
        silence(gap);
        burst(4000);
        silence(8000);
        const Trace trace = as_trace(std::move(x), rate);
        const auto segs = split_layers(trace, det);
        CHECK(segs.size() == 2);

        // Re-application to the already-silenced complement is idempotent.
        std::vector<float> kept(trace.samples.size(), 0.0f);
        for (const Segment &s : segs)
            for (std::int64_t i = s.start; i < s.end; ++i)
                kept[std::size_t(i)] = trace.samples[std::size_t(i)];
        const auto again = split_layers(as_trace(std::move(kept), rate), det);
        REQUIRE(again.size() == segs.size());
        for (std::size_t i = 0; i < segs.size(); ++i) {
            CHECK(std::abs(again[i].start - segs[i].start) <= 2 * det.seg_env_hop);
            CHECK(std::abs(again[i].end - segs[i].end) <= 2 * det.seg_env_hop);
        }
    }
}

TEST_CASE("count_patterns on rendered fixtures") {
    const DetectorParams det;
    const CostModel cost;

    SUBCASE("mnist conv1 segment counts 392 GeMM calls") {
        const Trace trace = fixtures::render_arch(fixtures::mnist_cnn());
        const EventNode tree = event_tree_from_json(nlohmann::json::parse(*trace.annotation_json));
        const auto layers = layer_nodes(tree);
        const Segment seg = node_segment(trace, *layers[0]);
        const PatternCount pc = count_patterns(trace, seg, std::nullopt, det);
        CHECK(pc.count == 392);
        CHECK(pc.confidence > 0.5);
    }

    SUBCASE("one GeMM call of mnist conv2 counts 16 kernel pairs") {
        const Trace trace = fixtures::render_arch(fixtures::mnist_cnn());
        const EventNode tree = event_tree_from_json(nlohmann::json::parse(*trace.annotation_json));
        const auto layers = layer_nodes(tree);
        const NodeQuery path[] = {{EventClass::GemmCall, 3}};
        const EventNode *call = find_node(*layers[3], path);
        REQUIRE(call != nullptr);
        const PatternCount pc = count_patterns(trace, node_segment(trace, *call), std::nullopt, det);
        CHECK(pc.count == 16);
    }

    SUBCASE("pure tone of n periods counts n") {
        const std::int64_t n_periods = 50;
        const double period = 16.0;
        const Trace trace = as_trace(sine(n_periods * std::int64_t(period), period));
        const PatternCount pc =
            count_patterns(trace, {0, trace.size()}, std::nullopt, det);
        CHECK(pc.count == n_periods);
        CHECK(pc.period_samples == doctest::Approx(period).epsilon(0.07));
    }

    SUBCASE("white noise has no periodicity") {
        std::mt19937 rng(5);
        std::normal_distribution<float> dist(0.0f, 1.0f);
        std::vector<float> x(40000);
        for (float &v : x)
            v = dist(rng);
        const Trace trace = as_trace(std::move(x));
        CHECK_THROWS_AS(count_patterns(trace, {0, trace.size()}, std::nullopt, det),
                        NoPeriodicity);
    }
}

TEST_CASE("count_patterns equals annotated counts at the calibration noise bound") {
    // Property suite: rendered segments count exactly whenever residual
    // noise <= 0.3 x the smallest class amplitude.
    const DetectorParams det;
    const CostModel cost;
    std::mt19937 rng(21);

    for (int trial = 0; trial < 12; ++trial) {
        const int n_y = std::uniform_int_distribution<>(3, 24)(rng);
        const int h_in = 2 * n_y;
        const Architecture arch{{h_in, 4}, {MaxPoolSpec{2}}};
        const EventNode root = emulate_inference(arch, cost);

        RenderParams params;
        params.noise_sigma =
            0.3 * params.min_class_amplitude() * std::sqrt(double(params.n_average));
        params.rng_seed = std::uint64_t(trial) + 1;
        const Trace trace = render_trace(root, params);

        const auto layers = layer_nodes(root);
        REQUIRE(layers.size() == 1);
        const EventNode *block2 = &layers[0]->children[2];
        const double cal_y = cost.pool_y_step_us * 1e-6 * trace.sample_rate_hz;
        const PatternCount pc = count_patterns(trace, node_segment(trace, *block2),
                                               std::make_pair(cal_y * 0.4, cal_y * 2.5), det);
        CHECK(pc.count == n_y);
    }
}

TEST_CASE("period estimate is within one sample on noiseless renders") {
    const CostModel cost;
    const EventNode pool = emulate_maxpool(MaxPoolSpec{2}, {16, 4}, cost);
    EventNode root{"root", EventClass::Composite, 0, pool.duration_us, {pool}};
    RenderParams params;
    params.noise_sigma = 0.0;
    const Trace trace = render_trace(root, params);
    const EventNode *block2 = &root.children[0].children[2];
    const double cal_y = cost.pool_y_step_us * 1e-6 * trace.sample_rate_hz;
    const PatternCount pc = count_patterns(trace, node_segment(trace, *block2),
                                           std::make_pair(cal_y * 0.4, cal_y * 2.5),
                                           DetectorParams{});
    CHECK(pc.period_samples == doctest::Approx(cal_y).epsilon(0.005));
}

TEST_CASE("detect_spikes") {
    const DetectorParams det;
    SUBCASE("flat signal yields nothing") {
        std::vector<float> x(20000, 0.25f);
        const Trace trace = as_trace(std::move(x));
        CHECK(detect_spikes(trace, {0, trace.size()}, 3.0, det).empty());
    }
    SUBCASE("one impulse yields one index at the impulse") {
        std::vector<float> x(20000, 0.0f);
        for (int i = 10000; i < 10016; ++i)
            x[std::size_t(i)] = 1.0f;
        const Trace trace = as_trace(std::move(x));
        const auto spikes = detect_spikes(trace, {0, trace.size()}, 3.0, det);
        REQUIRE(spikes.size() == 1);
        CHECK(std::abs(spikes[0] - 10008) < 32);
    }
    SUBCASE("kernel-pair spikes per GeMM call") {
        // Fast-variant conv layers, where the pair loop dominates the call.
        const Trace mnist = fixtures::render_arch(fixtures::mnist_cnn());
        const EventNode mtree = event_tree_from_json(nlohmann::json::parse(*mnist.annotation_json));
        const NodeQuery path[] = {{EventClass::GemmCall, 5}};
        const EventNode *mcall = find_node(*layer_nodes(mtree)[3], path);
        REQUIRE(mcall != nullptr);
        const auto mspikes = detect_spikes(mnist, node_segment(mnist, *mcall), 3.0, det);
        CHECK(std::int64_t(mspikes.size()) == 16); // K = 32

        const Trace cifar = fixtures::render_arch(fixtures::cifar_cnn());
        const EventNode ctree = event_tree_from_json(nlohmann::json::parse(*cifar.annotation_json));
        const EventNode *ccall = find_node(*layer_nodes(ctree)[6], path);
        REQUIRE(ccall != nullptr);
        const auto cspikes = detect_spikes(cifar, node_segment(cifar, *ccall), 3.0, det);
        CHECK(std::int64_t(cspikes.size()) == 32); // K = 64
    }
}
