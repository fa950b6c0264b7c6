#include "archoscope/detect.hpp"

#include <algorithm>
#include <cmath>

namespace archoscope {

void DetectorParams::check() const {
    if (k_sigma <= 0 || min_gap_us <= 0 || prominence_min <= 0 || prominence_min >= 1)
        throw SchemaError("detector params out of range");
    if (seg_env_window < 2 || fine_env_window < 2 || seg_env_hop < 1 || fine_env_hop < 1 ||
        spectro_window < 4 || spectro_hop < 1)
        throw SchemaError("detector window/hop params out of range");
    if (ac_margin < 0 || ac_margin > 0.5 || env_depth_min < 0 || env_depth_min > 1)
        throw SchemaError("detector margin params out of range");
    if (confidence_floor < 0 || confidence_floor > 1)
        throw SchemaError("confidence_floor must be in [0, 1]");
}

namespace {

struct DetField {
    const char *name;
    double DetectorParams::*dmember;
    int DetectorParams::*imember;
};

const DetField kDetFields[] = {
    {"k_sigma", &DetectorParams::k_sigma, nullptr},
    {"min_gap_us", &DetectorParams::min_gap_us, nullptr},
    {"min_segment_us", &DetectorParams::min_segment_us, nullptr},
    {"seg_env_window", nullptr, &DetectorParams::seg_env_window},
    {"seg_env_hop", nullptr, &DetectorParams::seg_env_hop},
    {"fine_env_window", nullptr, &DetectorParams::fine_env_window},
    {"fine_env_hop", nullptr, &DetectorParams::fine_env_hop},
    {"spectro_window", nullptr, &DetectorParams::spectro_window},
    {"spectro_hop", nullptr, &DetectorParams::spectro_hop},
    {"prominence_min", &DetectorParams::prominence_min, nullptr},
    {"ac_margin", &DetectorParams::ac_margin, nullptr},
    {"env_depth_min", &DetectorParams::env_depth_min, nullptr},
    {"run_threshold_frac", &DetectorParams::run_threshold_frac, nullptr},
    {"plateau_split_ratio", &DetectorParams::plateau_split_ratio, nullptr},
    {"confidence_floor", &DetectorParams::confidence_floor, nullptr},
    {"relu_cutoff_us_per_elem", &DetectorParams::relu_cutoff_us_per_elem, nullptr},
    {"dense_conf_period_floor_us", &DetectorParams::dense_conf_period_floor_us, nullptr},
};

} // namespace

DetectorParams detector_params_from_json(const nlohmann::json &j) {
    if (!j.is_object())
        throw SchemaError("detector params must be a JSON object");
    DetectorParams det;
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const DetField &f : kDetFields) {
            if (it.key() != f.name)
                continue;
            if (f.dmember)
                det.*(f.dmember) = it.value().get<double>();
            else
                det.*(f.imember) = it.value().get<int>();
            known = true;
            break;
        }
        if (!known)
            throw SchemaError("unknown detector param: " + it.key());
    }
    det.check();
    return det;
}

nlohmann::json detector_params_to_json(const DetectorParams &det) {
    nlohmann::json j;
    for (const DetField &f : kDetFields) {
        if (f.dmember)
            j[f.name] = det.*(f.dmember);
        else
            j[f.name] = det.*(f.imember);
    }
    return j;
}

namespace detail {

double quantile(std::vector<double> values, double q) {
    if (values.empty())
        return 0.0;
    q = std::clamp(q, 0.0, 1.0);
    const std::size_t idx = std::size_t(q * double(values.size() - 1) + 0.5);
    std::nth_element(values.begin(), values.begin() + std::ptrdiff_t(idx), values.end());
    return values[idx];
}

std::vector<Run> runs_above(const std::vector<double> &values, double threshold) {
    std::vector<Run> runs;
    bool in_run = false;
    for (std::int64_t i = 0; i < std::int64_t(values.size()); ++i) {
        if (values[std::size_t(i)] > threshold) {
            if (!in_run) {
                runs.push_back({i, i});
                in_run = true;
            } else {
                runs.back().last_bin = i;
            }
        } else {
            in_run = false;
        }
    }
    return runs;
}

AcPeak ac_fundamental(const std::vector<double> &series, std::int64_t lo_steps,
                      std::int64_t hi_steps, const DetectorParams &det) {
    AcPeak out;
    const std::int64_t n = std::int64_t(series.size());
    hi_steps = std::min(hi_steps, std::int64_t(double(n) * 0.75));
    lo_steps = std::max<std::int64_t>(lo_steps, 2);
    if (n < 8 || hi_steps <= lo_steps)
        return out;

    const std::vector<double> rho =
        autocorrelation(std::span<const double>(series.data(), series.size()), hi_steps);

    struct Peak {
        std::int64_t lag;
        double value;
        double prominence;
    };
    std::vector<Peak> peaks;
    double valley = rho[std::size_t(std::max<std::int64_t>(1, lo_steps - 1))];
    for (std::int64_t k = lo_steps; k < hi_steps; ++k) {
        const double v = rho[std::size_t(k)];
        valley = std::min(valley, v);
        if (v >= rho[std::size_t(k - 1)] && v > rho[std::size_t(k + 1)]) {
            peaks.push_back({k, v, v - valley});
            valley = v;
        }
    }
    if (peaks.empty())
        return out;

    double best = -2.0;
    for (const Peak &p : peaks)
        if (p.prominence >= det.prominence_min)
            best = std::max(best, p.value);
    if (best <= -2.0)
        return out;

    const Peak *chosen = nullptr;
    for (const Peak &p : peaks) {
        if (p.prominence < det.prominence_min || p.value < best - det.ac_margin)
            continue;
        chosen = &p;
        break; // peaks are in increasing lag order; first qualifying = smallest lag
    }
    if (!chosen)
        return out;

    // Parabolic refinement around the integer-lag peak.
    double lag = double(chosen->lag);
    if (chosen->lag + 1 < hi_steps && chosen->lag >= 1) {
        const double ym = rho[std::size_t(chosen->lag - 1)];
        const double y0 = rho[std::size_t(chosen->lag)];
        const double yp = rho[std::size_t(chosen->lag + 1)];
        const double denom = ym - 2 * y0 + yp;
        if (std::abs(denom) > 1e-12) {
            const double delta = 0.5 * (ym - yp) / denom;
            if (std::abs(delta) <= 1.0)
                lag += delta;
        }
    }
    out.lag_steps = lag;
    out.value = chosen->value;
    out.prominence = std::clamp(chosen->prominence, 0.0, 1.0);
    out.found = true;
    return out;
}

} // namespace detail

std::vector<Segment> segment_boundaries(const Envelope &env, const Spectrogram &spec,
                                        double min_gap_us, double k_sigma,
                                        double min_segment_us) {
    using detail::runs_above;
    if (env.values.empty())
        throw NoActivityDetected("empty envelope");
    if (!(env.sample_rate_hz > 0))
        throw SchemaError("segment_boundaries needs an envelope with a sample rate");

    // Quiet-decile baseline. In compute-dominated traces the gaps cover
    // far less than a decile, leaving the decile bimodal (true silence
    // plus the quietest activity); the silence mode alone is the floor.
    std::vector<double> sorted(env.values);
    std::sort(sorted.begin(), sorted.end());
    std::size_t decile = std::max<std::size_t>(1, sorted.size() / 10);
    {
        // The silence mode ends at the first clear step in the sorted
        // decile; everything above it is already activity.
        double running = 0.0;
        for (std::size_t k = 0; k < decile; ++k) {
            if (k >= 8 && sorted[k] >= 2.0 * sorted[k - 1] + 1e-12 &&
                sorted[k] >= 3.0 * (running / double(k)) + 1e-12) {
                decile = k;
                break;
            }
            running += sorted[k];
        }
    }
    double base = 0.0, base2 = 0.0;
    for (std::size_t i = 0; i < decile; ++i) {
        base += sorted[i];
        base2 += sorted[i] * sorted[i];
    }
    base /= double(decile);
    base2 = std::sqrt(std::max(0.0, base2 / double(decile) - base * base));
    // The quiet decile clips the noise distribution, so its own std badly
    // underestimates the floor spread; 0.27 * base restores roughly the
    // full RMS-window spread for Gaussian noise.
    const double thr = base + k_sigma * std::max(base2, 0.27 * base) + 1e-12;

    std::vector<char> env_active(env.values.size(), 0);
    for (std::size_t i = 0; i < env.values.size(); ++i)
        env_active[i] = env.values[i] > thr;
    std::vector<char> active(env_active);

    // Spectrogram vote: a frame is active when its strongest non-DC bin
    // stands above the floor of the quietest frames.
    if (spec.n_frames > 0 && spec.n_bins > 2) {
        std::vector<double> frame_max(std::size_t(spec.n_frames), 0.0);
        for (std::int64_t f = 0; f < spec.n_frames; ++f) {
            double m = 0.0;
            for (int b = 1; b < spec.n_bins; ++b)
                m = std::max(m, spec.at(f, b));
            frame_max[std::size_t(f)] = m;
        }
        std::vector<double> fs(frame_max);
        std::sort(fs.begin(), fs.end());
        std::size_t fdec = std::max<std::size_t>(1, fs.size() / 10);
        {
            double running = 0.0;
            for (std::size_t k = 0; k < fdec; ++k) {
                if (k >= 8 && fs[k] >= 2.0 * fs[k - 1] + 1e-12 &&
                    fs[k] >= 3.0 * (running / double(k)) + 1e-12) {
                    fdec = k;
                    break;
                }
                running += fs[k];
            }
        }
        double fb = 0.0, fb2 = 0.0;
        for (std::size_t i = 0; i < fdec; ++i) {
            fb += fs[i];
            fb2 += fs[i] * fs[i];
        }
        fb /= double(fdec);
        fb2 = std::sqrt(std::max(0.0, fb2 / double(fdec) - fb * fb));
        // Sharp contrast required: the max-over-bins statistic of plain
        // noise fluctuates too tightly for a k-sigma rule alone.
        const double fthr =
            std::max(fb + k_sigma * std::max(fb2, 0.1 * fb), 2.5 * fb) + 1e-12;
        for (std::int64_t f = 0; f < spec.n_frames; ++f) {
            if (frame_max[std::size_t(f)] <= fthr)
                continue;
            const std::int64_t s0 = f * spec.hop;
            const std::int64_t s1 = s0 + spec.window;
            const std::int64_t b0 = std::max<std::int64_t>(0, (s0 - env.window) / env.hop + 1);
            const std::int64_t b1 = std::min<std::int64_t>(env.size() - 1, s1 / env.hop);
            for (std::int64_t b = b0; b <= b1; ++b)
                active[std::size_t(b)] = 1;
        }
    }

    std::vector<double> act(active.begin(), active.end());
    std::vector<detail::Run> runs = runs_above(act, 0.5);

    // Isolated one- or two-bin excursions are noise-tail artifacts; real
    // activity spans at least min_segment_us of contiguous bins. Filtering
    // before the merge keeps stray blips from bridging genuine gaps.
    const double rate = env.sample_rate_hz;
    const std::int64_t min_len = std::max<std::int64_t>(
        std::int64_t(min_segment_us * 1e-6 * rate), 2 * env.hop);
    std::erase_if(runs, [&](const detail::Run &r) {
        return r.last_bin - r.first_bin + 1 < 3 ||
               (r.last_bin - r.first_bin) * env.hop + env.window < min_len;
    });
    if (runs.empty())
        throw NoActivityDetected("no envelope bins above baseline");

    const auto run_start = [&](const detail::Run &r) { return r.first_bin * env.hop; };
    const auto run_end = [&](const detail::Run &r) { return r.last_bin * env.hop + env.window; };

    // Gap length between runs comes from the envelope evidence alone
    // (quiet bins, plus the window - hop the boundary bins smear); the
    // coarser spectrogram frames vote on activity, not on geometry, so a
    // run boundary they extended is first trimmed back to envelope bins.
    const auto true_gap = [&](const detail::Run &a, const detail::Run &b) {
        std::int64_t lo = a.last_bin;
        while (lo > a.first_bin && !env_active[std::size_t(lo)])
            --lo;
        std::int64_t hi = b.first_bin;
        while (hi < b.last_bin && !env_active[std::size_t(hi)])
            ++hi;
        std::int64_t quiet = 0;
        for (std::int64_t bin = lo + 1; bin < hi; ++bin)
            if (!env_active[std::size_t(bin)])
                ++quiet;
        return quiet * env.hop + std::int64_t(env.window - env.hop);
    };
    const std::int64_t min_gap_samples = std::int64_t(min_gap_us * 1e-6 * rate);
    std::vector<detail::Run> merged;
    for (const detail::Run &r : runs) {
        if (!merged.empty() && true_gap(merged.back(), r) < min_gap_samples)
            merged.back().last_bin = r.last_bin;
        else
            merged.push_back(r);
    }

    std::vector<Segment> segments;
    for (const detail::Run &r : merged)
        segments.push_back({env.start_sample + run_start(r), env.start_sample + run_end(r)});
    if (segments.empty())
        throw NoActivityDetected("only sub-minimum activity found");
    return segments;
}

namespace {

std::vector<double> to_double(std::span<const float> x) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
        out[i] = x[i];
    return out;
}

void check_segment(const Trace &trace, const Segment &seg) {
    if (seg.start < 0 || seg.end > trace.size() || seg.start >= seg.end)
        throw SchemaError("segment outside trace bounds");
}

} // namespace

PatternCount count_patterns(const Trace &trace, const Segment &seg,
                            std::optional<std::pair<double, double>> period_range,
                            const DetectorParams &det) {
    // An explicit period range may extend past the default lag cap; the
    // caller vouches for the scale.
    using detail::ac_fundamental;
    using detail::quantile;
    using detail::runs_above;
    check_segment(trace, seg);
    const std::int64_t len = seg.len();
    if (len < 2 * det.fine_env_window)
        throw NoPeriodicity("segment too short for pattern analysis");

    const std::span<const float> x(trace.samples.data() + seg.start, std::size_t(len));

    // Decimate very long segments; period resolution stays far below one
    // pattern because counts are bounded by the segment length ratio.
    int hop = det.fine_env_hop;
    while ((len / hop) > (std::int64_t(1) << 21))
        hop *= 2;
    const Envelope env = envelope(x, det.fine_env_window, hop, trace.sample_rate_hz, seg.start);

    const double q95 = quantile(env.values, 0.95);
    const double q05 = quantile(env.values, 0.05);
    const double depth = q95 > 0 ? (q95 - q05) / q95 : 0.0;

    const bool use_env = depth >= det.env_depth_min;
    std::vector<double> series;
    double step;
    if (use_env) {
        series = env.values;
        step = double(hop);
    } else {
        series = to_double(x);
        step = 1.0;
    }

    std::int64_t lo = 2, hi = std::int64_t(double(series.size()) * 0.6);
    if (period_range) {
        lo = std::max<std::int64_t>(2, std::int64_t(std::floor(period_range->first / step)));
        hi = std::min<std::int64_t>(std::int64_t(double(series.size()) * 0.75),
                                    std::int64_t(std::ceil(period_range->second / step)));
    }

    const auto single_burst = [&]() -> PatternCount {
        const double lo_level = quantile(env.values, 0.02);
        const double thr = lo_level + det.run_threshold_frac * (q95 - lo_level);
        const std::vector<detail::Run> runs = runs_above(env.values, thr);
        if (runs.size() == 1)
            return {1, double(len), 0.4};
        throw NoPeriodicity("no autocorrelation peak with prominence >= " +
                            std::to_string(det.prominence_min));
    };

    if (hi <= lo)
        return single_burst();

    const detail::AcPeak peak = ac_fundamental(series, lo, hi, det);
    if (!peak.found)
        return single_burst();
    if (peak.value < 0.7) {
        // Weak self-similarity is intra-pattern texture, not repetition;
        // prefer the single-pattern reading when the segment is one run.
        try {
            return single_burst();
        } catch (const NoPeriodicity &) {
        }
    }

    const double period = peak.lag_steps * step;
    const std::int64_t count_len = std::max<std::int64_t>(1, std::llround(double(len) / period));

    // Matched thresholding: dip-separated patterns appear as runs above a
    // threshold between the quietest plateau and the loud body.
    const double lo_level = quantile(env.values, 0.02);
    const double q90 = quantile(env.values, 0.90);
    const double thr = lo_level + det.run_threshold_frac * (q90 - lo_level);
    std::vector<detail::Run> runs = runs_above(env.values, thr);
    const double period_bins = period / double(hop);
    std::int64_t count_runs = 0;
    for (const detail::Run &r : runs)
        if (double(r.last_bin - r.first_bin + 1) >= 0.2 * period_bins)
            ++count_runs;

    PatternCount out;
    out.period_samples = period;
    if (count_runs == count_len) {
        out.count = count_runs;
        out.confidence = peak.prominence;
    } else if (count_runs <= 2) {
        // Contiguous patterns with no silent separators: trust the period.
        out.count = count_len;
        out.confidence = peak.prominence * 0.9;
    } else if (std::abs(double(count_runs - count_len)) <= 0.5 * double(count_len)) {
        // Partial dip visibility (guard tails riding the threshold).
        out.count = count_len;
        out.confidence = peak.prominence * 0.75;
    } else {
        out.count = count_len;
        out.confidence = peak.prominence * 0.5;
    }
    out.confidence = std::clamp(out.confidence, 0.0, 1.0);
    return out;
}

std::vector<std::int64_t> detect_spikes(const Trace &trace, const Segment &seg, double k_sigma,
                                        const DetectorParams &det) {
    check_segment(trace, seg);
    const std::int64_t len = seg.len();
    std::vector<std::int64_t> out;
    if (len < det.fine_env_window + det.fine_env_hop)
        return out;
    const std::span<const float> x(trace.samples.data() + seg.start, std::size_t(len));
    const Envelope env = envelope(x, det.fine_env_window, det.fine_env_hop, trace.sample_rate_hz,
                                  seg.start);

    double mean = 0.0;
    for (double v : env.values)
        mean += v;
    mean /= double(env.values.size());
    double var = 0.0;
    for (double v : env.values)
        var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / double(env.values.size()));
    const double thr = mean + k_sigma * sd;

    struct Max {
        std::int64_t bin;
        double value;
    };
    std::vector<Max> maxima;
    for (std::int64_t i = 0; i < env.size(); ++i) {
        const double v = env.values[std::size_t(i)];
        const double left = i > 0 ? env.values[std::size_t(i - 1)] : -1.0;
        const double right = i + 1 < env.size() ? env.values[std::size_t(i + 1)] : -1.0;
        if (v > thr && v >= left && v > right)
            maxima.push_back({i, v});
    }
    if (maxima.empty())
        return out;

    double nms_bins = double(det.fine_env_window) / det.fine_env_hop;
    const detail::AcPeak peak =
        detail::ac_fundamental(env.values, 2, std::int64_t(double(env.size()) * 0.8), det);
    if (peak.found)
        nms_bins = std::max(nms_bins, 0.5 * peak.lag_steps);

    std::sort(maxima.begin(), maxima.end(), [](const Max &a, const Max &b) {
        return a.value > b.value;
    });
    std::vector<std::int64_t> kept_bins;
    for (const Max &m : maxima) {
        bool clash = false;
        for (std::int64_t kb : kept_bins)
            if (std::abs(kb - m.bin) < std::int64_t(nms_bins))
                clash = true;
        if (!clash)
            kept_bins.push_back(m.bin);
    }
    std::sort(kept_bins.begin(), kept_bins.end());
    out.reserve(kept_bins.size());
    for (std::int64_t b : kept_bins)
        out.push_back(env.bin_to_sample(b));
    return out;
}

} // namespace archoscope
