#include "archoscope/extract.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <sstream>

namespace archoscope {

const char *layer_kind_name(LayerKind kind) {
    switch (kind) {
    case LayerKind::Conv: return "conv";
    case LayerKind::Dense: return "dense";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::Activation: return "activation";
    case LayerKind::Unknown: return "unknown";
    }
    return "unknown";
}

namespace {

using detail::ac_fundamental;
using detail::quantile;
using detail::Run;
using detail::runs_above;

constexpr double kSpikeSigma = 1.5;     // loop-header onsets against the segment spread

double us_to_samples(const Trace &trace, double us) {
    return us * 1e-6 * trace.sample_rate_hz;
}

double samples_to_us(const Trace &trace, double n) {
    return n / trace.sample_rate_hz * 1e6;
}

struct SegView {
    Segment seg;
    Envelope fine;   // spike/texture resolution
    Envelope coarse; // plateau resolution
    double q02 = 0, q75 = 0, q90 = 0, q95 = 0, q98 = 0;
    double min_plateau = 0;
};

// Segment boundaries from the splitter overhang into the surrounding
// silence by up to an envelope window; shrink to the active core so
// plateau minima and durations read the layer, not the gap.
Segment trim_to_activity(const Trace &trace, const Segment &seg, const DetectorParams &det) {
    if (seg.start < 0 || seg.end > trace.size() || seg.start >= seg.end)
        throw SchemaError("segment outside trace bounds");
    const std::span<const float> x(trace.samples.data() + seg.start, std::size_t(seg.len()));
    if (std::int64_t(x.size()) < 2 * det.fine_env_window)
        return seg;
    const Envelope env = envelope(x, det.fine_env_window, det.fine_env_hop,
                                  trace.sample_rate_hz, seg.start);
    const double thr = 0.05 * quantile(env.values, 0.9);
    std::int64_t first = 0, last = env.size() - 1;
    while (first < last && env.values[std::size_t(first)] <= thr)
        ++first;
    while (last > first && env.values[std::size_t(last)] <= thr)
        --last;
    Segment out{env.start_sample + first * env.hop,
                env.start_sample + last * env.hop + env.window};
    out.start = std::max(out.start, seg.start);
    out.end = std::min(out.end, seg.end);
    if (out.len() < 2 * det.fine_env_window)
        return seg;
    return out;
}

SegView make_view(const Trace &trace, const Segment &seg, const DetectorParams &det) {
    if (seg.start < 0 || seg.end > trace.size() || seg.start >= seg.end)
        throw SchemaError("segment outside trace bounds");
    SegView view;
    view.seg = seg;
    const std::span<const float> x(trace.samples.data() + seg.start, std::size_t(seg.len()));
    int fine_hop = det.fine_env_hop;
    while (seg.len() / fine_hop > (std::int64_t(1) << 21))
        fine_hop *= 2;
    view.fine = envelope(x, det.fine_env_window, fine_hop, trace.sample_rate_hz, seg.start);
    const int cw = std::max(det.fine_env_window * 4, 16);
    if (seg.len() >= 2 * cw)
        view.coarse = envelope(x, cw, std::max(1, cw / 4), trace.sample_rate_hz, seg.start);
    else
        view.coarse = view.fine;
    view.q02 = quantile(view.fine.values, 0.02);
    view.q75 = quantile(view.fine.values, 0.75);
    view.q90 = quantile(view.fine.values, 0.90);
    view.q95 = quantile(view.fine.values, 0.95);
    view.q98 = quantile(view.fine.values, 0.98);
    // The quietest plateau can occupy a sliver of the segment (two im2col
    // columns against an arbitrarily long GeMM call), so a fixed quantile
    // misses it; the minimum alone lands on a guard-dip outlier. Take the
    // median level of the bins near the minimum.
    const double raw_min =
        *std::min_element(view.coarse.values.begin(), view.coarse.values.end());
    std::vector<double> low_bins;
    for (double v : view.coarse.values)
        if (v <= 1.6 * raw_min + 1e-12)
            low_bins.push_back(v);
    view.min_plateau = low_bins.empty() ? raw_min : quantile(low_bins, 0.5);
    return view;
}

std::vector<Segment> runs_to_segments(const Envelope &env, const std::vector<Run> &runs) {
    std::vector<Segment> out;
    out.reserve(runs.size());
    for (const Run &r : runs)
        out.push_back({env.start_sample + r.first_bin * env.hop,
                       env.start_sample + r.last_bin * env.hop + env.window});
    return out;
}

// Runs above the low-plateau split level. Only meaningful when the
// quietest plateau sits well below the loud body; otherwise the whole
// segment is one run.
std::vector<Segment> plateau_runs(const SegView &view, const DetectorParams &det,
                                  double min_len_samples) {
    if (view.min_plateau > 0.5 * view.q75)
        return {view.seg};
    const double thr = std::max(view.min_plateau, 1e-9) * det.plateau_split_ratio;
    std::vector<Run> runs = runs_above(view.coarse.values, thr);
    std::vector<Segment> segs = runs_to_segments(view.coarse, runs);
    std::vector<Segment> kept;
    for (const Segment &s : segs)
        if (double(s.len()) >= min_len_samples)
            kept.push_back(s);
    if (kept.empty())
        return {view.seg};
    return kept;
}

double length_cv(const std::vector<Segment> &segs) {
    if (segs.size() < 2)
        return 0.0;
    double mean = 0;
    for (const Segment &s : segs)
        mean += double(s.len());
    mean /= double(segs.size());
    double var = 0;
    for (const Segment &s : segs)
        var += (double(s.len()) - mean) * (double(s.len()) - mean);
    return std::sqrt(var / double(segs.size())) / mean;
}

// Spike positions (sample indices) kept relative to the tallest one.
struct SpikeSet {
    std::vector<std::int64_t> pos;
    double median_spacing = 0.0;
};

SpikeSet find_major_spikes(const Trace &trace, const Segment &seg, const ExtractionContext &ctx) {
    SpikeSet out;
    std::vector<std::int64_t> raw = detect_spikes(trace, seg, kSpikeSigma, ctx.det);
    if (raw.empty())
        return out;
    const SegView view = make_view(trace, seg, ctx.det);
    const Envelope &env = view.fine;
    std::vector<double> heights;
    heights.reserve(raw.size());
    for (std::int64_t p : raw) {
        const std::int64_t bin =
            std::clamp<std::int64_t>((p - env.start_sample - env.window / 2) / env.hop, 0,
                                     env.size() - 1);
        heights.push_back(env.values[std::size_t(bin)]);
    }
    // Body-ripple maxima sneak past a k-sigma rule when the body is flat,
    // and the stacked first onset towers over its siblings. A two-cluster
    // height split handles both: drop the low cluster only when the high
    // one is a real population, not a lone stacked onset.
    std::vector<double> sorted(heights);
    std::sort(sorted.begin(), sorted.end());
    double keep_above = 0.0;
    if (sorted.size() >= 3) {
        const std::size_t n = sorted.size();
        std::vector<double> prefix(n + 1, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            prefix[i + 1] = prefix[i] + sorted[i];
        // Best split among the splits that pass the acceptance rules: a
        // stacked parent-onset outlier is at most ~2x its siblings, so a
        // lone high point needs strong contrast, while a populous high
        // cluster needs only clear separation from body bumps.
        double best_score = 0.0;
        for (std::size_t k = 1; k < n; ++k) {
            const double m_lo = prefix[k] / double(k);
            const double m_hi = (prefix[n] - prefix[k]) / double(n - k);
            const std::size_t high_count = n - k;
            const bool strong_contrast = m_hi >= 2.6 * m_lo;
            const bool populous =
                m_hi >= 1.8 * m_lo && high_count >= std::max<std::size_t>(2, n * 35 / 100);
            if (!strong_contrast && !populous)
                continue;
            const double score = double(k) * double(n - k) * (m_hi - m_lo) * (m_hi - m_lo);
            if (score > best_score) {
                best_score = score;
                keep_above = 0.5 * (m_lo + m_hi);
            }
        }
    }
    for (std::size_t i = 0; i < raw.size(); ++i)
        if (heights[i] > keep_above)
            out.pos.push_back(raw[i]);
    if (out.pos.size() >= 2) {
        std::vector<double> gaps;
        for (std::size_t i = 1; i < out.pos.size(); ++i)
            gaps.push_back(double(out.pos[i] - out.pos[i - 1]));
        out.median_spacing = quantile(gaps, 0.5);
    }
    return out;
}

// Last sample of the loud body; everything after it sits on a quieter
// plateau (remainder events). Works backwards on the coarse envelope.
std::int64_t trailing_low_boundary(const SegView &view, double body_level) {
    const Envelope &env = view.coarse;
    const double thr = 0.5 * body_level;
    std::int64_t bin = env.size() - 1;
    while (bin >= 0 && env.values[std::size_t(bin)] < thr)
        --bin;
    if (bin < 0)
        return view.seg.start;
    return std::min<std::int64_t>(view.seg.end, env.start_sample + bin * env.hop + env.window);
}

struct CallMeasurement {
    int pairs = 0;
    bool k_odd = false;
    std::int64_t simd_per_pair = -1; // -1 = not measured
    bool col_rem = false;
    double pair_len = 0.0; // samples spanned by one kernel pair
};

// SIMD mac-group patterns inside one kernel-pair span: the loud prefix up
// to the first sustained drop is the mac-group zone, any quieter interior
// stretch before the next onset is the colCnt remainder. The span may end
// in the next pair's onset rise, which both scans ignore.
struct PairReadout {
    std::int64_t simd_count = 0;
    bool col_rem = false;
    double simd_len = 0.0;
};

PairReadout read_pair(const Trace &trace, const Segment &pair_span,
                      const ExtractionContext &ctx, double i2c_level) {
    const double cal_simd = us_to_samples(trace, ctx.calibration.simd_mac_group_us);
    const double cal_rem = us_to_samples(trace, ctx.calibration.gemm_remainder_us);
    const DetectorParams &det = ctx.det;

    // Smoothing sized between the leaf guard tails (washed out) and the
    // remainder stretch (still resolved).
    const int w = std::max(det.fine_env_window * 2 + 4,
                           int(std::llround(cal_rem * 2.0 / 3.0)));
    const int h = std::max(1, w / 5);
    const std::span<const float> x(trace.samples.data() + pair_span.start,
                                   std::size_t(pair_span.len()));
    if (std::int64_t(x.size()) < 2 * w)
        return {};
    const Envelope env = envelope(x, w, h, trace.sample_rate_hz, pair_span.start);
    const std::int64_t n = env.size();

    // The onset transient can cover most of a short pair; level estimates
    // come from the trailing part of the span, which it never reaches.
    std::vector<double> tail_vals(env.values.begin() + std::ptrdiff_t(0.4 * double(n)),
                                  env.values.end());
    const double hi = quantile(tail_vals, 0.9);
    const double lo = *std::min_element(env.values.begin(), env.values.end());

    PairReadout out;

    // Entire pair on the remainder rung of the amplitude ladder (the
    // mac-group body sits well above the im2col floor, remainders do not).
    if (i2c_level > 0 && quantile(tail_vals, 0.6) < 3.0 * i2c_level) {
        out.simd_count = 0;
        out.simd_len = 0;
        out.col_rem = double(pair_span.len()) >= 0.6 * cal_rem;
        return out;
    }

    double rise_len = 0.0, rem_len = 0.0;
    if (lo < 0.42 * hi) {
        // A distinct quiet plateau exists. Scanning from the end: first
        // skip the next pair's onset rise, then measure the low zone.
        const double thr = lo + 0.33 * (hi - lo);
        std::int64_t bin = n - 1;
        const std::int64_t skip_limit = std::max<std::int64_t>(1, (w + 3 * h) / h);
        std::int64_t skipped = 0;
        while (bin >= 0 && env.values[std::size_t(bin)] > thr && skipped < skip_limit) {
            --bin;
            ++skipped;
        }
        std::int64_t low_bins = 0;
        while (bin >= 0 && env.values[std::size_t(bin)] <= thr) {
            --bin;
            ++low_bins;
        }
        rise_len = double(skipped) * h;
        rem_len = low_bins > 0 ? double(low_bins) * h + double(w - h) : 0.0;
    } else {
        rise_len = double(w) / 2.0;
    }

    out.simd_len = std::max(0.0, double(pair_span.len()) - rise_len - rem_len);
    out.col_rem = rem_len >= 0.6 * cal_rem;
    if (out.simd_len < 0.5 * cal_simd) {
        out.simd_count = 0;
        out.col_rem = double(pair_span.len()) >= 0.6 * cal_rem;
        return out;
    }
    const Segment simd_span{pair_span.start,
                            pair_span.start + std::int64_t(out.simd_len)};
    const std::int64_t by_duration = std::llround(out.simd_len / cal_simd);
    try {
        PatternCount pc = count_patterns(trace, simd_span,
                                         std::make_pair(cal_simd * 0.5, cal_simd * 2.0), ctx.det);
        if (pc.count >= 2 &&
            std::llabs(pc.count - by_duration) <=
                std::max<std::int64_t>(1, std::int64_t(0.25 * double(by_duration)))) {
            out.simd_count = pc.count;
            return out;
        }
    } catch (const Error &) {
    }
    out.simd_count = by_duration;
    return out;
}

CallMeasurement measure_call(const Trace &trace, const Segment &call,
                             const ExtractionContext &ctx, double i2c_level) {
    CallMeasurement m;
    const SpikeSet spikes = find_major_spikes(trace, call, ctx);
    if (spikes.pos.empty())
        throw NoPeriodicity("no kernel-pair spikes inside GeMM call");
    m.pairs = int(spikes.pos.size());

    const double cal_rem = us_to_samples(trace, ctx.calibration.gemm_remainder_us);

    // Pair span: between consecutive spikes when possible, else the whole
    // call (read_pair separates mac groups from the remainder plateau).
    Segment pair_span;
    if (spikes.pos.size() >= 2) {
        const std::size_t mid = spikes.pos.size() / 2;
        pair_span = {spikes.pos[mid - 1], spikes.pos[mid]};
    } else {
        pair_span = {spikes.pos[0], call.end};
    }
    const PairReadout pr = read_pair(trace, pair_span, ctx, i2c_level);
    m.simd_per_pair = pr.simd_count;
    m.col_rem = pr.col_rem;
    m.pair_len = spikes.pos.size() >= 2 ? spikes.median_spacing
                                        : pr.simd_len + (pr.col_rem ? cal_rem : 0.0);

    // Odd kernel counts leave a remainder block after the last pair.
    const double expected_end = double(spikes.pos.back()) + m.pair_len;
    const double trailing = double(call.end) - expected_end;
    m.k_odd = trailing > std::max(0.35 * m.pair_len, 2.0 * cal_rem);
    return m;
}

int solve_kernel_side(std::int64_t simd_count, int c_in, double pair_len_samples,
                      const Trace &trace, const ExtractionContext &ctx) {
    constexpr int kMaxZ = 12;
    int best_z = -1;
    std::int64_t best_err = -1;
    std::vector<int> tied;
    for (int z = 1; z <= kMaxZ; ++z) {
        const std::int64_t predicted = (std::int64_t(c_in) * z * z) / 4;
        const std::int64_t err = std::llabs(predicted - simd_count);
        if (best_err < 0 || err < best_err) {
            best_err = err;
            best_z = z;
            tied.assign(1, z);
        } else if (err == best_err) {
            tied.push_back(z);
        }
    }
    if (tied.size() == 1)
        return best_z;

    // Tie on the pattern count alone: the measured pair extent against the
    // calibrated per-pair duration decides.
    const double cal_simd = us_to_samples(trace, ctx.calibration.simd_mac_group_us);
    const double cal_rem = us_to_samples(trace, ctx.calibration.gemm_remainder_us);
    int dur_z = -1;
    double dur_err = 0.0;
    bool dur_tie = false;
    for (int z : tied) {
        const std::int64_t col = std::int64_t(c_in) * z * z;
        const double predicted = double(col / 4) * cal_simd + (col % 4 != 0 ? cal_rem : 0.0);
        const double err = std::abs(predicted - pair_len_samples);
        if (dur_z < 0 || err < dur_err - 1e-9) {
            dur_err = err;
            dur_z = z;
            dur_tie = false;
        } else if (std::abs(err - dur_err) <= 1e-9) {
            dur_tie = true;
        }
    }
    if (dur_z > 0 && !dur_tie)
        return dur_z;
    throw AmbiguousKernelSize("kernel-size search has no unique minimizer for " +
                              std::to_string(simd_count) + " mac-group patterns at c_in=" +
                              std::to_string(c_in));
}

double combine_conf(std::initializer_list<double> parts) {
    double c = 1.0;
    for (double p : parts)
        c *= std::clamp(p, 0.0, 1.0);
    return std::clamp(c, 0.0, 1.0);
}

} // namespace

std::vector<Segment> split_layers(const Trace &trace, const DetectorParams &det) {
    if (trace.size() == 0)
        throw NoActivityDetected("empty trace");
    const std::span<const float> x(trace.samples.data(), trace.samples.size());
    const Envelope env =
        envelope(x, det.seg_env_window, det.seg_env_hop, trace.sample_rate_hz, 0);
    Spectrogram spec;
    if (trace.size() >= det.spectro_window)
        spec = spectrogram(x, det.spectro_window, det.spectro_hop, trace.sample_rate_hz);
    return segment_boundaries(env, spec, det.min_gap_us, det.k_sigma, det.min_segment_us);
}

StridePadding solve_stride_padding(int h_in, int h_out, int z) {
    if (h_in < 1 || h_out < 1 || z < 1)
        throw SchemaError("solve_stride_padding: invalid inputs");
    StridePadding out;
    if (h_out == 1) {
        // Output side 1 leaves the stride unconstrained; report the
        // s = z - 2p convention and flag the ambiguity.
        for (int p = 0; p < z; ++p)
            if (h_in == z - 2 * p)
                out.solutions.push_back({z - 2 * p, p});
        if (out.solutions.empty())
            throw NoSolution("no padding yields output side 1 for h_in=" + std::to_string(h_in) +
                             ", z=" + std::to_string(z));
        out.multiple = true;
        return out;
    }
    for (int p = 0; p < z; ++p) {
        const int num = h_in - z + 2 * p;
        const int den = h_out - 1;
        if (num < den || num % den != 0)
            continue;
        const int s = num / den;
        try {
            if (conv_output_side(h_in, z, p, s) == h_out)
                out.solutions.push_back({s, p});
        } catch (const Error &) {
        }
    }
    if (out.solutions.empty())
        throw NoSolution("no (s, p) with p < z satisfies the output-side equation for h_in=" +
                         std::to_string(h_in) + ", h_out=" + std::to_string(h_out) +
                         ", z=" + std::to_string(z));
    out.multiple = out.solutions.size() > 1;
    return out;
}

LayerHypothesis extract_conv(const Trace &trace, const Segment &raw_seg, int c_in, int h_in,
                             const ExtractionContext &ctx) {
    LayerHypothesis hyp;
    hyp.kind = LayerKind::Conv;
    const Segment seg = trim_to_activity(trace, raw_seg, ctx.det);
    hyp.segment = seg;

    const SegView view = make_view(trace, seg, ctx.det);

    // Scale 1: GeMM calls, separated by the quiet im2col stretches.
    const std::vector<Segment> calls = plateau_runs(view, ctx.det, 24.0);
    const double cv = length_cv(calls);

    const double n_max = (double(h_in) + 11.0) * (double(h_in) + 11.0) / 2.0 + 2.0;
    std::int64_t n_calls = std::int64_t(calls.size());
    double ac_conf = 0.7;
    try {
        PatternCount pc = count_patterns(
            trace, seg, std::make_pair(double(seg.len()) / n_max, double(seg.len()) * 1.01),
            ctx.det);
        if (pc.count != n_calls) {
            if (calls.size() < 2 || cv > 0.05)
                n_calls = pc.count;
        }
        ac_conf = std::max(0.4, pc.confidence);
    } catch (const Error &) {
        if (calls.size() < 2)
            throw;
    }
    hyp.pattern_counts["gemm_calls"] = n_calls;

    const double h_est = std::sqrt(2.0 * double(n_calls));
    const int h_out = std::max(1, int(std::llround(h_est)));
    hyp.params.h_out = h_out;

    // Scales 2 and 3 on a sample of call instances, majority vote.
    std::vector<CallMeasurement> measured;
    const std::size_t step = std::max<std::size_t>(1, calls.size() / 7);
    for (std::size_t i = 0; i < calls.size() && measured.size() < 8; i += step)
        measured.push_back(measure_call(trace, calls[i], ctx, view.min_plateau));
    if (measured.empty())
        throw InconsistentCounts("no GeMM call could be measured");

    auto majority = [&](auto getter) {
        std::map<std::int64_t, int> votes;
        for (const CallMeasurement &m : measured)
            ++votes[getter(m)];
        std::int64_t best = 0;
        int best_n = -1;
        for (const auto &[value, n] : votes)
            if (n > best_n) {
                best = value;
                best_n = n;
            }
        // Per-call counts must agree: a >5% dissent is a broken readout.
        const double dissent = 1.0 - double(best_n) / double(measured.size());
        if (dissent > 0.05)
            throw InconsistentCounts("per-call pattern counts disagree beyond 5%");
        return best;
    };

    const std::int64_t pairs = majority([](const CallMeasurement &m) { return std::int64_t(m.pairs); });
    const bool k_odd = majority([](const CallMeasurement &m) { return std::int64_t(m.k_odd); }) != 0;
    const std::int64_t simd = majority([](const CallMeasurement &m) { return m.simd_per_pair; });
    const bool col_rem = majority([](const CallMeasurement &m) { return std::int64_t(m.col_rem); }) != 0;
    std::vector<double> pair_lens;
    for (const CallMeasurement &m : measured)
        pair_lens.push_back(m.pair_len);
    const double pair_len = quantile(pair_lens, 0.5);

    hyp.pattern_counts["kernel_pairs_per_call"] = pairs;
    hyp.pattern_counts["mac_groups_per_pair"] = simd;
    if (k_odd)
        hyp.pattern_counts["kernel_remainder"] = 1;
    if (col_rem)
        hyp.pattern_counts["mac_group_remainder"] = 1;

    const int k = int(2 * pairs + (k_odd ? 1 : 0));
    hyp.params.k = k;

    const int z = solve_kernel_side(simd, c_in, pair_len, trace, ctx);
    // The remainder signature must agree with the recovered kernel size.
    const bool rem_expected = (std::int64_t(c_in) * z * z) % 4 != 0;
    double rem_conf = rem_expected == col_rem ? 1.0 : 0.6;
    hyp.params.z = z;

    const StridePadding sp = solve_stride_padding(h_in, h_out, z);
    hyp.params.multiple_sp = sp.multiple;
    hyp.params.s = sp.solutions.front().first;
    hyp.params.p = sp.solutions.front().second;
    if (sp.multiple) {
        std::ostringstream oss;
        oss << "stride/padding underdetermined:";
        for (const auto &[s, p] : sp.solutions)
            oss << " (s=" << s << ",p=" << p << ")";
        hyp.note = oss.str();
    }

    const double h_round_err = std::abs(h_est - double(h_out));
    hyp.confidence = combine_conf({ac_conf, rem_conf, 1.0 - cv, 1.0 - h_round_err,
                                   sp.multiple ? 0.45 : 1.0});
    hyp.resolved = true;
    return hyp;
}

LayerHypothesis extract_maxpool(const Trace &trace, const Segment &raw_seg, int h_in,
                                const ExtractionContext &ctx) {
    LayerHypothesis hyp;
    hyp.kind = LayerKind::MaxPool;
    const Segment seg = trim_to_activity(trace, raw_seg, ctx.det);
    hyp.segment = seg;

    const SegView view = make_view(trace, seg, ctx.det);
    const double base = view.q02;
    const double thr = base + 0.1 * (view.q95 - base);
    std::vector<Run> runs = runs_above(view.coarse.values, thr);
    std::vector<Segment> blocks = runs_to_segments(view.coarse, runs);
    std::erase_if(blocks, [&](const Segment &s) {
        return double(s.len()) < us_to_samples(trace, 0.2);
    });
    if (blocks.size() != 2)
        throw BlocksNotFound("expected two pooling blocks, found " +
                             std::to_string(blocks.size()));

    const double cal_y = us_to_samples(trace, ctx.calibration.pool_y_step_us);
    PatternCount pc;
    try {
        pc = count_patterns(trace, blocks[1], std::make_pair(cal_y * 0.6, cal_y * 2.5), ctx.det);
    } catch (const NoPeriodicity &) {
        pc = {1, double(blocks[1].len()), 0.4}; // single output row
    }
    int h_out = int(pc.count);
    // A count the input side cannot contain is a readback artifact; fall
    // back to the calibrated row duration before flagging.
    if (h_in % h_out != 0) {
        const int cal_count =
            std::max(1, int(std::llround(double(blocks[1].len()) / cal_y)));
        if (h_in % cal_count == 0 && cal_count != h_out) {
            h_out = cal_count;
            pc.confidence *= 0.8;
            hyp.note = "pattern count rejected against the input side; used calibrated row count";
        }
    }
    hyp.pattern_counts["pool_y_steps"] = h_out;
    hyp.params.h_out = h_out;

    const int z_pool = std::max(1, int(std::llround(double(h_in) / double(h_out))));
    hyp.params.z_pool = z_pool;
    double div_conf = 1.0;
    if (h_in % h_out != 0) {
        div_conf = 0.4;
        hyp.note = "input side " + std::to_string(h_in) + " not divisible by recovered H_out " +
                   std::to_string(h_out);
    }

    // First block cross-check: H_in * H_out x-steps.
    double block1_conf = 0.9;
    try {
        const double cal_x = us_to_samples(trace, ctx.calibration.pool_x_step_us);
        PatternCount px = count_patterns(trace, blocks[0],
                                         std::make_pair(cal_x * 0.35, cal_x * 3.0), ctx.det);
        hyp.pattern_counts["pool_x_steps"] = px.count;
        block1_conf = (px.count == std::int64_t(h_in) * h_out) ? 1.0 : 0.7;
    } catch (const Error &) {
    }

    hyp.confidence = combine_conf({pc.confidence * 1.2, div_conf, block1_conf});
    hyp.resolved = true;
    return hyp;
}

LayerHypothesis extract_dense(const Trace &trace, const Segment &raw_seg,
                              const ExtractionContext &ctx) {
    LayerHypothesis hyp;
    hyp.kind = LayerKind::Dense;
    const Segment seg = trim_to_activity(trace, raw_seg, ctx.det);
    hyp.segment = seg;

    const SegView view = make_view(trace, seg, ctx.det);
    const double body = view.q75;

    // Trailing remainder neurons sit on a quieter plateau.
    const std::int64_t tail_start = trailing_low_boundary(view, body);
    const std::int64_t tail_len = seg.end - tail_start;
    const double cal_rem = us_to_samples(trace, ctx.calibration.dense_remainder_neuron_us);
    int n_rem = int(std::llround(double(tail_len) / cal_rem));
    double rem_conf = 1.0;
    if (n_rem > 3) {
        rem_conf = 0.4;
        hyp.note = "remainder tail longer than 3 neurons";
        n_rem = 3;
    }
    n_rem = std::clamp(n_rem, 0, 3);

    const Segment groups_span{seg.start, tail_start};
    if (groups_span.len() <= 0)
        throw NoPeriodicity("dense segment has no neuron-group body");

    // The group onsets carry the init/apply spike; they are the primary
    // count. The autocorrelation period only cross-checks.
    const SpikeSet spikes = find_major_spikes(trace, groups_span, ctx);
    std::int64_t n_groups = std::int64_t(spikes.pos.size());

    double group_period = n_groups >= 2 ? spikes.median_spacing
                                        : double(groups_span.len()) / std::max<std::int64_t>(1, n_groups);
    double ac_conf = 0.6;
    try {
        PatternCount pc = count_patterns(trace, groups_span,
                                         std::make_pair(double(ctx.det.fine_env_hop) * 3.0,
                                                        double(groups_span.len()) * 1.01),
                                         ctx.det);
        if (n_groups == 0) {
            n_groups = pc.count;
            group_period = pc.period_samples;
            ac_conf = pc.confidence;
        } else if (pc.count == n_groups) {
            ac_conf = std::max(0.75, pc.confidence);
        } else {
            ac_conf = 0.55; // spike and period counts disagree
        }
    } catch (const NoPeriodicity &) {
        if (n_groups == 0) {
            n_groups = 1; // single homogeneous body, one neuron group
            group_period = double(groups_span.len());
            ac_conf = 0.5;
        }
    }
    if (n_groups < 1)
        throw NoPeriodicity("no neuron-group patterns found");

    hyp.pattern_counts["neuron_groups"] = n_groups;
    hyp.pattern_counts["remainder_neurons"] = n_rem;
    hyp.params.n_e = int(4 * n_groups + n_rem);

    // Below this period the per-group patterns approach the detectability
    // floor (short input vectors), so the verdict is kept low-confidence.
    double floor_conf = 1.0;
    if (group_period < us_to_samples(trace, ctx.det.dense_conf_period_floor_us))
        floor_conf = 0.42;

    hyp.confidence = combine_conf({std::max(ac_conf, 0.5), rem_conf, floor_conf, 0.98});
    hyp.resolved = true;
    return hyp;
}

LayerHypothesis classify_activation(const Trace &trace, const Segment &raw_seg, std::int64_t n_elems,
                                    const ExtractionContext &ctx) {
    if (n_elems < 1)
        throw SchemaError("classify_activation needs n_elems >= 1");
    LayerHypothesis hyp;
    hyp.kind = LayerKind::Activation;
    const Segment seg = trim_to_activity(trace, raw_seg, ctx.det);
    hyp.segment = seg;

    const double per_elem_us = samples_to_us(trace, double(seg.len())) / double(n_elems);
    double cutoff = ctx.det.relu_cutoff_us_per_elem;
    if (cutoff <= 0.0)
        cutoff = std::sqrt(ctx.calibration.act_relu_elem_us * ctx.calibration.act_tanh_elem_us);

    const bool relu = per_elem_us < cutoff;
    hyp.params.relu = relu;
    hyp.pattern_counts["elements"] = n_elems;

    // Distance from the cutoff on a log scale drives the confidence; the
    // pattern-regularity score adds a small secondary vote.
    const double dist = std::abs(std::log(per_elem_us / cutoff));
    const double span = 0.5 * std::log(ctx.calibration.act_tanh_elem_us /
                                       ctx.calibration.act_relu_elem_us);
    double conf = 0.5 + 0.49 * std::min(1.0, dist / span);

    const double cal_elem_us = relu ? ctx.calibration.act_relu_elem_us
                                    : ctx.calibration.act_sigmoid_elem_us;
    try {
        const double cal = us_to_samples(trace, cal_elem_us);
        PatternCount pc = count_patterns(trace, seg, std::make_pair(cal * 0.4, cal * 2.5), ctx.det);
        if (pc.confidence > 0.5)
            conf = std::min(1.0, conf + 0.05);
    } catch (const Error &) {
    }

    hyp.confidence = conf;
    hyp.resolved = true;
    return hyp;
}

namespace {

struct KindScores {
    double conv = 0, dense = 0, pool = 0, act = 0;

    double best() const { return std::max({conv, dense, pool, act}); }
    LayerKind best_kind() const {
        const double b = best();
        if (b == conv) return LayerKind::Conv;
        if (b == dense) return LayerKind::Dense;
        if (b == pool) return LayerKind::MaxPool;
        return LayerKind::Activation;
    }
    double second_best() const {
        std::array<double, 4> v{conv, dense, pool, act};
        std::sort(v.begin(), v.end());
        return v[2];
    }
};

double log_match(double measured, double predicted, double sharpness) {
    if (measured <= 0 || predicted <= 0)
        return 0.0;
    return std::exp(-sharpness * std::abs(std::log(measured / predicted)));
}

} // namespace

std::pair<LayerKind, double> classify_layer(const Trace &trace, const Segment &seg,
                                            const ExtractionContext &ctx) {
    SegView view;
    try {
        view = make_view(trace, seg, ctx.det);
    } catch (const Error &e) {
        if (std::getenv("ARCHOSCOPE_DEBUG_CLASSIFY"))
            std::fprintf(stderr, "[classify] make_view failed: %s\n", e.what());
        return {LayerKind::Unknown, 0.0};
    }
    const CostModel &cal = ctx.calibration;
    const double dur_us = samples_to_us(trace, double(seg.len()));

    // Coarse runs split only at near-silence (the pooling block gap).
    const double noise_thr = view.q02 + 0.1 * (view.q95 - view.q02);
    std::vector<Run> coarse = runs_above(view.coarse.values, noise_thr);
    std::vector<Segment> coarse_segs = runs_to_segments(view.coarse, coarse);
    std::erase_if(coarse_segs, [&](const Segment &s) {
        return double(s.len()) < us_to_samples(trace, 0.15);
    });

    const std::vector<Segment> fine_runs = plateau_runs(view, ctx.det, 24.0);
    const double fine_cv = length_cv(fine_runs);

    const double q997 = detail::quantile(view.fine.values, 0.997);
    const bool has_spikes = q997 > 1.8 * std::max(view.q75, 1e-12);
    const bool spatial = ctx.shape_known && ctx.in_shape.spatial();

    KindScores score;

    // MaxPool: exactly two unequal sub-blocks whose combined duration
    // matches the closed form for some divisor of the input side.
    if (spatial && coarse_segs.size() == 2) {
        const double l0 = double(coarse_segs[0].len());
        const double l1 = double(coarse_segs[1].len());
        const bool unequal = std::abs(l0 - l1) > 0.1 * std::max(l0, l1);
        double best = 0;
        for (int zp = 2; zp <= ctx.in_shape.h; ++zp) {
            if (ctx.in_shape.h % zp != 0)
                continue;
            const int ho = ctx.in_shape.h / zp;
            const double pred = double(ctx.in_shape.h) * ho * cal.pool_x_step_us +
                                double(ho) * cal.pool_y_step_us + cal.pool_block_gap_us;
            best = std::max(best, log_match(dur_us, pred, 6.0));
        }
        score.pool = best * (unequal ? 1.0 : 0.4);
    }

    // Activation: per-element duration lands on one of the three class
    // costs, and the envelope has no tall loop-header spikes.
    if (ctx.shape_known) {
        const double n = double(ctx.in_shape.flat_len());
        const double candidates[] = {cal.act_relu_elem_us, cal.act_tanh_elem_us,
                                     cal.act_sigmoid_elem_us};
        double best = 0;
        for (double c : candidates)
            best = std::max(best, log_match(dur_us / n, c, 5.0));
        score.act = best * (has_spikes ? 0.25 : 1.0) * (coarse_segs.size() == 1 ? 1.0 : 0.5);
    }

    // Conv: several equal-length GeMM call runs over a quiet im2col floor.
    if (spatial && fine_runs.size() >= 2 && fine_cv < 0.12) {
        score.conv = 0.9;
    } else if (spatial && fine_runs.size() >= 3 && fine_cv < 0.3) {
        score.conv = 0.45;
    }

    // Dense: one contiguous body with spike-separated uniform blocks.
    if (coarse_segs.size() == 1 && fine_runs.size() <= 1) {
        score.dense = has_spikes ? 0.75 : 0.35;
        if (!ctx.shape_known)
            score.dense = std::max(score.dense, 0.4);
    }

    // Logical-order prior breaks ties.
    const double bonus = 0.08;
    switch (ctx.prev_kind) {
    case LayerKind::Conv:
        score.act += bonus;
        score.pool += bonus;
        score.conv += bonus * 0.5;
        break;
    case LayerKind::Dense:
        score.act += bonus;
        score.dense += bonus * 0.5;
        break;
    case LayerKind::Activation:
        score.pool += bonus * 0.5;
        score.conv += bonus * 0.5;
        score.dense += bonus * 0.5;
        break;
    default:
        break;
    }

    if (std::getenv("ARCHOSCOPE_DEBUG_CLASSIFY"))
        std::fprintf(stderr,
                     "[classify] dur=%.1fus coarse=%zu fine=%zu cv=%.3f spikes=%d spatial=%d "
                     "min_plateau=%.4f q75=%.3f scores c=%.2f d=%.2f p=%.2f a=%.2f\n",
                     dur_us, coarse_segs.size(), fine_runs.size(), fine_cv, (int)has_spikes,
                     (int)spatial, view.min_plateau, view.q75, score.conv, score.dense,
                     score.pool, score.act);
    if (score.best() < 0.25)
        return {LayerKind::Unknown, 0.0};
    const double conf = std::clamp(score.best() - 0.5 * score.second_best(), 0.05, 1.0);
    return {score.best_kind(), conf};
}

ExtractionReport extract_architecture(const Trace &trace, const ExtractPrior &prior,
                                      const DetectorParams &det, const CostModel &calibration) {
    ExtractionReport report;
    std::ostringstream prior_notes;
    prior_notes << "input_shape=" << prior.input_shape.h << "x" << prior.input_shape.h << "x"
                << prior.input_shape.c;
    if (!prior.task_hint.empty())
        prior_notes << ", task_hint=" << prior.task_hint;
    prior_notes << ", order prior: conv->(act|pool|conv), dense->(act|dense)";

    std::vector<Segment> segments;
    try {
        segments = split_layers(trace, det);
    } catch (const NoActivityDetected &e) {
        report.error = e.what();
        report.prior_used = prior_notes.str();
        return report;
    }

    // Blind measurement-quality estimate: the noise floor against the
    // quietest activity plateau. Confidences scale down as the floor
    // approaches the plateaus the read-outs depend on.
    double quality = 1.0;
    {
        const std::span<const float> x(trace.samples.data(), trace.samples.size());
        const Envelope env =
            envelope(x, det.seg_env_window, det.seg_env_hop, trace.sample_rate_hz, 0);
        std::vector<double> inside;
        double floor_sum = 0.0;
        std::int64_t floor_n = 0;
        std::size_t si = 0;
        for (std::int64_t b = 0; b < env.size(); ++b) {
            const std::int64_t s = b * env.hop;
            while (si < segments.size() && s >= segments[si].end)
                ++si;
            if (si < segments.size() && s >= segments[si].start && s < segments[si].end) {
                inside.push_back(env.values[std::size_t(b)]);
            } else {
                floor_sum += env.values[std::size_t(b)];
                ++floor_n;
            }
        }
        if (floor_n > 16 && !inside.empty()) {
            const double floor_level = floor_sum / double(floor_n);
            const double activity = detail::quantile(inside, 0.5);
            const double ratio = activity > 0 ? floor_level / activity : 1.0;
            quality = std::clamp((0.25 - ratio) / (0.25 - 0.08), 0.25, 1.0);
        }
    }

    ExtractionContext ctx;
    ctx.in_shape = prior.input_shape;
    ctx.shape_known = true;
    ctx.prev_kind = LayerKind::Unknown;
    ctx.calibration = calibration;
    ctx.det = det;

    for (const Segment &raw_seg : segments) {
        const Segment seg = trim_to_activity(trace, raw_seg, det);
        auto [kind, kconf] = classify_layer(trace, seg, ctx);
        LayerHypothesis hyp;
        hyp.kind = kind;
        hyp.kind_confidence = kconf;
        hyp.segment = seg;
        bool shape_still_known = ctx.shape_known;
        try {
            switch (kind) {
            case LayerKind::Conv:
                if (!ctx.shape_known)
                    throw InconsistentCounts("input shape unknown for conv layer");
                hyp = extract_conv(trace, seg, ctx.in_shape.c, ctx.in_shape.h, ctx);
                ctx.in_shape = {hyp.params.h_out.value(), hyp.params.k.value()};
                break;
            case LayerKind::MaxPool:
                if (!ctx.shape_known)
                    throw InconsistentCounts("input shape unknown for pooling layer");
                hyp = extract_maxpool(trace, seg, ctx.in_shape.h, ctx);
                ctx.in_shape = {ctx.in_shape.h / hyp.params.z_pool.value(), ctx.in_shape.c};
                break;
            case LayerKind::Dense:
                hyp = extract_dense(trace, seg, ctx);
                ctx.in_shape = {1, hyp.params.n_e.value()};
                break;
            case LayerKind::Activation:
                if (!ctx.shape_known)
                    throw InconsistentCounts("input shape unknown for activation layer");
                hyp = classify_activation(trace, seg, ctx.in_shape.flat_len(), ctx);
                break;
            case LayerKind::Unknown:
                hyp.note = "unclassified segment";
                shape_still_known = false;
                break;
            }
            hyp.kind = kind;
            hyp.kind_confidence = kconf;
        } catch (const Error &e) {
            hyp.kind = kind;
            hyp.kind_confidence = kconf;
            hyp.resolved = false;
            hyp.confidence = 0.0;
            hyp.note = e.what();
            if (kind != LayerKind::Activation)
                shape_still_known = false;
        }
        ctx.shape_known = shape_still_known;
        ctx.prev_kind = kind;
        report.hypotheses.push_back(std::move(hyp));
    }

    // Build the recovered architecture when every layer resolved; the
    // confidence floor gates the fully_resolved verdict (and the CLI exit
    // code), not the best-effort reconstruction.
    bool all_resolved = !report.hypotheses.empty();
    double min_conf = 1.0;
    for (const LayerHypothesis &h : report.hypotheses) {
        all_resolved = all_resolved && h.resolved;
        min_conf = std::min(min_conf, h.confidence);
    }
    if (all_resolved) {
        Architecture arch;
        arch.input = prior.input_shape;
        for (const LayerHypothesis &h : report.hypotheses) {
            switch (h.kind) {
            case LayerKind::Conv:
                arch.layers.push_back(ConvSpec{h.params.k.value(), h.params.z.value(),
                                               h.params.s.value(), h.params.p.value(),
                                               ConvVariant::Auto});
                break;
            case LayerKind::MaxPool:
                arch.layers.push_back(MaxPoolSpec{h.params.z_pool.value()});
                break;
            case LayerKind::Dense:
                arch.layers.push_back(DenseSpec{h.params.n_e.value()});
                break;
            case LayerKind::Activation:
                // Sigmoid stands in for the merged non-ReLU class.
                arch.layers.push_back(ActivationSpec{h.params.relu.value()
                                                         ? ActivationKind::ReLU
                                                         : ActivationKind::Sigmoid});
                break;
            default:
                all_resolved = false;
                break;
            }
        }
        if (all_resolved) {
            try {
                validate(arch);
                report.recovered = std::move(arch);
            } catch (const Error &e) {
                report.error = std::string("recovered architecture inconsistent: ") + e.what();
            }
        }
    }
    report.fully_resolved = report.recovered.has_value() && min_conf >= det.confidence_floor;
    report.prior_used = prior_notes.str();
    return report;
}

nlohmann::json report_to_json(const ExtractionReport &report, const DetectorParams &det,
                              const CostModel &calibration) {
    nlohmann::json j;
    j["hypotheses"] = nlohmann::json::array();
    for (const LayerHypothesis &h : report.hypotheses) {
        nlohmann::json hj;
        hj["kind"] = layer_kind_name(h.kind);
        hj["kind_confidence"] = h.kind_confidence;
        hj["confidence"] = h.confidence;
        hj["resolved"] = h.resolved;
        hj["segment"] = {{"start", h.segment.start}, {"end", h.segment.end}};
        nlohmann::json pj = nlohmann::json::object();
        const RecoveredParams &p = h.params;
        if (p.h_out) pj["h_out"] = *p.h_out;
        if (p.k) pj["k"] = *p.k;
        if (p.z) pj["z"] = *p.z;
        if (p.s) pj["s"] = *p.s;
        if (p.p) pj["p"] = *p.p;
        if (p.n_e) pj["n_e"] = *p.n_e;
        if (p.z_pool) pj["z_pool"] = *p.z_pool;
        if (p.relu) pj["relu"] = *p.relu;
        if (p.multiple_sp) pj["multiple_sp"] = true;
        hj["params"] = pj;
        hj["pattern_counts"] = h.pattern_counts;
        if (!h.note.empty())
            hj["note"] = h.note;
        j["hypotheses"].push_back(hj);
    }
    j["recovered"] = report.recovered ? architecture_to_json(*report.recovered)
                                      : nlohmann::json(nullptr);
    j["fully_resolved"] = report.fully_resolved;
    j["prior_used"] = report.prior_used;
    if (!report.error.empty())
        j["error"] = report.error;
    j["config"] = {{"detect", detector_params_to_json(det)},
                   {"calibration_cost_model", cost_model_to_json(calibration)}};
    return j;
}

} // namespace archoscope
