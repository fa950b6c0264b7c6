#include "archoscope/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <mutex>

#include <fftw3.h>

namespace archoscope {

namespace {

constexpr double kPi = 3.141592653589793;

void check_window(std::int64_t n, int window, int hop) {
    if (window < 2)
        throw SchemaError("window must be >= 2 samples");
    if (hop < 1)
        throw SchemaError("hop must be >= 1 sample");
    if (window > n)
        throw WindowLargerThanTrace("window of " + std::to_string(window) +
                                    " samples exceeds trace length " + std::to_string(n));
}

// FFTW planning is not thread-safe; execution with per-call buffers is.
class FftPlans {
  public:
    static FftPlans &instance() {
        static FftPlans plans;
        return plans;
    }

    void forward(const std::vector<double> &in, std::vector<std::complex<double>> &out) {
        const std::size_t n = in.size();
        out.resize(n / 2 + 1);
        fftw_plan plan = plan_for(n);
        fftw_execute_dft_r2c(plan, const_cast<double *>(in.data()),
                             reinterpret_cast<fftw_complex *>(out.data()));
    }

    void inverse(const std::vector<std::complex<double>> &in, std::vector<double> &out,
                 std::size_t n) {
        out.resize(n);
        fftw_plan plan = inverse_plan_for(n);
        std::vector<std::complex<double>> tmp(in); // c2r destroys its input
        fftw_execute_dft_c2r(plan, reinterpret_cast<fftw_complex *>(tmp.data()), out.data());
    }

  private:
    fftw_plan plan_for(std::size_t n) {
        std::lock_guard<std::mutex> lock(mutex_);
        auto it = fwd_.find(n);
        if (it != fwd_.end())
            return it->second;
        std::vector<double> in(n);
        std::vector<std::complex<double>> out(n / 2 + 1);
        fftw_plan plan = fftw_plan_dft_r2c_1d(int(n), in.data(),
                                              reinterpret_cast<fftw_complex *>(out.data()),
                                              FFTW_ESTIMATE);
        fwd_[n] = plan;
        return plan;
    }

    fftw_plan inverse_plan_for(std::size_t n) {
        std::lock_guard<std::mutex> lock(mutex_);
        auto it = inv_.find(n);
        if (it != inv_.end())
            return it->second;
        std::vector<std::complex<double>> in(n / 2 + 1);
        std::vector<double> out(n);
        fftw_plan plan = fftw_plan_dft_c2r_1d(int(n), reinterpret_cast<fftw_complex *>(in.data()),
                                              out.data(), FFTW_ESTIMATE);
        inv_[n] = plan;
        return plan;
    }

    std::mutex mutex_;
    std::map<std::size_t, fftw_plan> fwd_;
    std::map<std::size_t, fftw_plan> inv_;
};

std::size_t next_pow2(std::size_t n) {
    std::size_t m = 1;
    while (m < n)
        m <<= 1;
    return m;
}

std::vector<double> hann_window(int n) {
    std::vector<double> w(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        w[std::size_t(i)] = 0.5 - 0.5 * std::cos(2.0 * kPi * i / (n - 1));
    return w;
}

} // namespace

Envelope envelope(std::span<const float> x, int window, int hop, double sample_rate_hz,
                  std::int64_t start_sample) {
    const std::int64_t n = std::int64_t(x.size());
    check_window(n, window, hop);
    Envelope env;
    env.window = window;
    env.hop = hop;
    env.sample_rate_hz = sample_rate_hz;
    env.start_sample = start_sample;
    const std::int64_t bins = (n - window) / hop + 1;
    env.values.resize(std::size_t(bins));
    const double inv_w = 1.0 / window;
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < bins; ++i) {
        const std::int64_t base = i * hop;
        double acc = 0.0;
        for (int j = 0; j < window; ++j) {
            const double v = x[std::size_t(base + j)];
            acc += v * v;
        }
        env.values[std::size_t(i)] = std::sqrt(acc * inv_w);
    }
    return env;
}

Spectrogram spectrogram(std::span<const float> x, int window, int hop, double sample_rate_hz) {
    const std::int64_t n = std::int64_t(x.size());
    check_window(n, window, hop);
    Spectrogram spec;
    spec.window = window;
    spec.hop = hop;
    spec.sample_rate_hz = sample_rate_hz;
    spec.n_frames = (n - window) / hop + 1;
    spec.n_bins = window / 2 + 1;
    spec.magnitudes.resize(std::size_t(spec.n_frames) * std::size_t(spec.n_bins));

    const std::vector<double> hann = hann_window(window);
    {
        // Create the plan before the parallel region; plan execution is
        // thread-safe, planning is not.
        std::vector<double> warm(std::size_t(window), 0.0);
        std::vector<std::complex<double>> warm_out;
        FftPlans::instance().forward(warm, warm_out);
    }

#pragma omp parallel
    {
        std::vector<double> frame(static_cast<std::size_t>(window));
        std::vector<std::complex<double>> out;
#pragma omp for schedule(static)
        for (std::int64_t f = 0; f < spec.n_frames; ++f) {
            const std::int64_t base = f * hop;
            for (int j = 0; j < window; ++j)
                frame[std::size_t(j)] = x[std::size_t(base + j)] * hann[std::size_t(j)];
            FftPlans::instance().forward(frame, out);
            for (int b = 0; b < spec.n_bins; ++b)
                spec.magnitudes[std::size_t(f) * std::size_t(spec.n_bins) + std::size_t(b)] =
                    std::abs(out[std::size_t(b)]);
        }
    }
    return spec;
}

std::vector<double> autocorrelation(std::span<const double> x, std::int64_t max_lag) {
    const std::int64_t n = std::int64_t(x.size());
    if (n < 2)
        throw SchemaError("autocorrelation needs at least 2 points");
    max_lag = std::clamp<std::int64_t>(max_lag, 1, n - 1);

    double mean = 0.0;
    for (double v : x)
        mean += v;
    mean /= double(n);

    const std::size_t m = next_pow2(std::size_t(n) * 2);
    std::vector<double> padded(m, 0.0);
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i)
        padded[std::size_t(i)] = x[std::size_t(i)] - mean;

    std::vector<std::complex<double>> freq;
    FftPlans::instance().forward(padded, freq);
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < std::int64_t(freq.size()); ++i)
        freq[std::size_t(i)] *= std::conj(freq[std::size_t(i)]);

    std::vector<double> corr;
    FftPlans::instance().inverse(freq, corr, m);

    // Per-lag normalization against the energies of the two windows that
    // actually overlap; a plain 1/(n-k) drifts whenever energy is
    // unevenly distributed across the segment.
    std::vector<double> prefix(std::size_t(n) + 1, 0.0);
    for (std::int64_t i = 0; i < n; ++i)
        prefix[std::size_t(i) + 1] =
            prefix[std::size_t(i)] + padded[std::size_t(i)] * padded[std::size_t(i)];
    const double total = prefix[std::size_t(n)];

    std::vector<double> rho(std::size_t(max_lag) + 1);
    if (total <= 0.0) {
        std::fill(rho.begin(), rho.end(), 0.0);
        rho[0] = 1.0;
        return rho;
    }
    const double fft_scale = 1.0 / double(m); // fftw round-trip leaves an m factor
#pragma omp parallel for schedule(static)
    for (std::int64_t k = 0; k <= max_lag; ++k) {
        const double head = prefix[std::size_t(n - k)];
        const double tail = total - prefix[std::size_t(k)];
        const double denom = std::sqrt(head * tail);
        rho[std::size_t(k)] = denom > 0.0 ? corr[std::size_t(k)] * fft_scale / denom : 0.0;
    }
    return rho;
}

namespace reference {

Envelope envelope(std::span<const float> x, int window, int hop, double sample_rate_hz,
                  std::int64_t start_sample) {
    const std::int64_t n = std::int64_t(x.size());
    check_window(n, window, hop);
    Envelope env;
    env.window = window;
    env.hop = hop;
    env.sample_rate_hz = sample_rate_hz;
    env.start_sample = start_sample;
    const std::int64_t bins = (n - window) / hop + 1;
    env.values.resize(std::size_t(bins));
    for (std::int64_t i = 0; i < bins; ++i) {
        double acc = 0.0;
        for (int j = 0; j < window; ++j) {
            const double v = x[std::size_t(i * hop + j)];
            acc += v * v;
        }
        env.values[std::size_t(i)] = std::sqrt(acc / window);
    }
    return env;
}

Spectrogram spectrogram(std::span<const float> x, int window, int hop, double sample_rate_hz) {
    const std::int64_t n = std::int64_t(x.size());
    check_window(n, window, hop);
    Spectrogram spec;
    spec.window = window;
    spec.hop = hop;
    spec.sample_rate_hz = sample_rate_hz;
    spec.n_frames = (n - window) / hop + 1;
    spec.n_bins = window / 2 + 1;
    spec.magnitudes.resize(std::size_t(spec.n_frames) * std::size_t(spec.n_bins));
    const std::vector<double> hann = hann_window(window);
    for (std::int64_t f = 0; f < spec.n_frames; ++f) {
        for (int b = 0; b < spec.n_bins; ++b) {
            double re = 0.0, im = 0.0;
            for (int j = 0; j < window; ++j) {
                const double v = x[std::size_t(f * hop + j)] * hann[std::size_t(j)];
                const double phase = -2.0 * kPi * double(b) * double(j) / double(window);
                re += v * std::cos(phase);
                im += v * std::sin(phase);
            }
            spec.magnitudes[std::size_t(f) * std::size_t(spec.n_bins) + std::size_t(b)] =
                std::hypot(re, im);
        }
    }
    return spec;
}

std::vector<double> autocorrelation(std::span<const double> x, std::int64_t max_lag) {
    const std::int64_t n = std::int64_t(x.size());
    if (n < 2)
        throw SchemaError("autocorrelation needs at least 2 points");
    max_lag = std::clamp<std::int64_t>(max_lag, 1, n - 1);
    double mean = 0.0;
    for (double v : x)
        mean += v;
    mean /= double(n);
    std::vector<double> centered(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i)
        centered[std::size_t(i)] = x[std::size_t(i)] - mean;
    std::vector<double> prefix(std::size_t(n) + 1, 0.0);
    for (std::int64_t i = 0; i < n; ++i)
        prefix[std::size_t(i) + 1] =
            prefix[std::size_t(i)] + centered[std::size_t(i)] * centered[std::size_t(i)];
    const double total = prefix[std::size_t(n)];
    std::vector<double> rho(std::size_t(max_lag) + 1, 0.0);
    if (total <= 0.0) {
        rho[0] = 1.0;
        return rho;
    }
    for (std::int64_t k = 0; k <= max_lag; ++k) {
        double acc = 0.0;
        for (std::int64_t t = 0; t + k < n; ++t)
            acc += centered[std::size_t(t)] * centered[std::size_t(t + k)];
        const double denom =
            std::sqrt(prefix[std::size_t(n - k)] * (total - prefix[std::size_t(k)]));
        rho[std::size_t(k)] = denom > 0.0 ? acc / denom : 0.0;
    }
    return rho;
}

} // namespace reference

} // namespace archoscope
