#pragma once

#include "archoscope/dsp.hpp"

#include <json.hpp>

namespace archoscope {

// Detector thresholds. The paper's attacker counts patterns visually, so
// every number here is a calibration of this toolkit, not a published
// value; all of them can be overridden from a config file.
struct DetectorParams {
    double k_sigma = 3.0;
    double min_gap_us = 20.0;
    double min_segment_us = 0.1;

    int seg_env_window = 64;
    int seg_env_hop = 16;
    int fine_env_window = 8;
    int fine_env_hop = 2;
    int spectro_window = 512;
    int spectro_hop = 256;

    double prominence_min = 0.2;
    double ac_margin = 0.02;       // absolute margin when picking the fundamental
    double env_depth_min = 0.15;   // below this the envelope is treated as unmodulated
    double run_threshold_frac = 0.3;
    double plateau_split_ratio = 1.45; // geometric mid between adjacent amplitude rungs

    double confidence_floor = 0.5;
    double relu_cutoff_us_per_elem = 0.0; // 0 = derive from the calibration cost model
    double dense_conf_period_floor_us = 4.0;

    void check() const;
};

DetectorParams detector_params_from_json(const nlohmann::json &j);
nlohmann::json detector_params_to_json(const DetectorParams &det);

// Activity segmentation: env above its quiet-decile baseline OR a
// spectrogram frame whose non-DC peak stands out of the floor. Runs merge
// unless separated by at least min_gap_us of silence.
std::vector<Segment> segment_boundaries(const Envelope &env, const Spectrogram &spec,
                                        double min_gap_us, double k_sigma,
                                        double min_segment_us = 0.1);

struct PatternCount {
    std::int64_t count = 0;
    double period_samples = 0.0;
    double confidence = 0.0;
};

// Fundamental repetition period from the autocorrelation of the segment
// envelope (raw samples when the envelope carries no modulation), then a
// count from matched thresholding / period division. period_range, when
// given, restricts the period search (in samples).
PatternCount count_patterns(const Trace &trace, const Segment &seg,
                            std::optional<std::pair<double, double>> period_range = std::nullopt,
                            const DetectorParams &det = {});

// Envelope maxima above mean + k_sigma * std, non-maximum-suppressed
// within half the dominant period. Returns absolute sample indices.
std::vector<std::int64_t> detect_spikes(const Trace &trace, const Segment &seg, double k_sigma,
                                        const DetectorParams &det = {});

// Shared helpers (also used by the extractor).
namespace detail {
double quantile(std::vector<double> values, double q);

struct Run {
    std::int64_t first_bin = 0;
    std::int64_t last_bin = 0; // inclusive
};

// Maximal runs of env bins strictly above threshold.
std::vector<Run> runs_above(const std::vector<double> &values, double threshold);

struct AcPeak {
    double lag_steps = 0.0; // parabolic-refined
    double value = 0.0;
    double prominence = 0.0;
    bool found = false;
};

// Smallest-lag peak within ac_margin of the strongest peak in
// [lo_steps, hi_steps].
AcPeak ac_fundamental(const std::vector<double> &series, std::int64_t lo_steps,
                      std::int64_t hi_steps, const DetectorParams &det);
} // namespace detail

} // namespace archoscope
