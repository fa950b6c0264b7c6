#pragma once

#include <array>

#include "archoscope/events.hpp"
#include "archoscope/trace.hpp"

#include <json.hpp>

namespace archoscope {

// Waveform synthesis knobs. Per-class amplitudes sit on a ladder spaced
// >= 2 dB so classes separate in an envelope without being labelled;
// carrier periods differ per class so a spectrogram has frequency
// contrast across layer boundaries. LayerGap renders near-zero.
struct RenderParams {
    double sample_rate_hz = 200e6;
    std::array<double, kNumEventClasses> amplitude;
    std::array<double, kNumEventClasses> carrier_period_samples;
    double noise_sigma = 0.01; // 0.2 x the smallest active class amplitude
    int n_average = 16;
    std::uint64_t rng_seed = 1;

    RenderParams();

    double &amp(EventClass cls) { return amplitude[static_cast<int>(cls)]; }
    double amp(EventClass cls) const { return amplitude[static_cast<int>(cls)]; }
    double &carrier(EventClass cls) { return carrier_period_samples[static_cast<int>(cls)]; }
    double carrier(EventClass cls) const { return carrier_period_samples[static_cast<int>(cls)]; }

    // Smallest non-zero class amplitude; the reference point for noise
    // levels quoted as multiples of it.
    double min_class_amplitude() const;

    void check() const;
};

RenderParams render_params_from_json(const nlohmann::json &j);
nlohmann::json render_params_to_json(const RenderParams &params);

// Deterministic for a fixed seed. Throws SampleRateTooLow when any leaf
// would span fewer than 8 samples. The trace carries the annotation of
// the tree it was rendered from.
Trace render_trace(const EventNode &root, const RenderParams &params);

} // namespace archoscope
