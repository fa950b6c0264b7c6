#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "archoscope/errors.hpp"
#include "archoscope/trace.hpp"

namespace archoscope {

// Sliding RMS. values[i] covers samples [i*hop, i*hop + window).
struct Envelope {
    int window = 0;
    int hop = 1;
    double sample_rate_hz = 0.0;
    std::int64_t start_sample = 0; // offset of bin 0 in the source trace
    std::vector<double> values;

    std::int64_t size() const { return std::int64_t(values.size()); }
    std::int64_t bin_to_sample(std::int64_t bin) const {
        return start_sample + bin * hop + window / 2;
    }
};

// Hann-weighted short-time Fourier magnitudes, frame-major.
struct Spectrogram {
    int window = 0;
    int hop = 1;
    double sample_rate_hz = 0.0;
    std::int64_t n_frames = 0;
    int n_bins = 0;
    std::vector<double> magnitudes;

    double at(std::int64_t frame, int bin) const {
        return magnitudes[std::size_t(frame) * std::size_t(n_bins) + std::size_t(bin)];
    }
};

// Half-open sample interval.
struct Segment {
    std::int64_t start = 0;
    std::int64_t end = 0;
    std::int64_t len() const { return end - start; }
};

Envelope envelope(std::span<const float> x, int window, int hop, double sample_rate_hz = 0.0,
                  std::int64_t start_sample = 0);
Spectrogram spectrogram(std::span<const float> x, int window, int hop,
                        double sample_rate_hz = 0.0);

// Normalized autocorrelation of the mean-removed series for lags
// [0, max_lag]; rho[0] == 1. FFT-backed, O(n log n).
std::vector<double> autocorrelation(std::span<const double> x, std::int64_t max_lag);

// Serial implementations kept as oracles for the parallel kernels; the
// benchmark tool compares the two.
namespace reference {
Envelope envelope(std::span<const float> x, int window, int hop, double sample_rate_hz = 0.0,
                  std::int64_t start_sample = 0);
Spectrogram spectrogram(std::span<const float> x, int window, int hop,
                        double sample_rate_hz = 0.0);
std::vector<double> autocorrelation(std::span<const double> x, std::int64_t max_lag);
} // namespace reference

} // namespace archoscope
