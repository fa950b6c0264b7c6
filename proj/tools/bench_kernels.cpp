// Compares the OpenMP kernels against their serial reference twins on a
// synthetic workload and prints throughput plus the speedup.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <vector>

#include <omp.h>

#include "archoscope/dsp.hpp"

using namespace archoscope;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

template <typename Fn> double time_best_of(int reps, Fn &&fn) {
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        const auto t0 = Clock::now();
        fn();
        best = std::min(best, seconds_since(t0));
    }
    return best;
}

} // namespace

int main() {
    std::printf("threads: %d\n", omp_get_max_threads());

    std::mt19937_64 rng(42);
    std::normal_distribution<float> dist(0.0f, 1.0f);
    const std::int64_t n = 8'000'000;
    std::vector<float> signal(static_cast<std::size_t>(n));
    for (float &v : signal)
        v = dist(rng) + 0.5f * std::sin(0.13 * double(&v - signal.data()));
    const std::span<const float> x(signal.data(), signal.size());

    {
        const double t_par = time_best_of(3, [&] { envelope(x, 64, 16); });
        const double t_ser = time_best_of(3, [&] { reference::envelope(x, 64, 16); });
        std::printf("envelope      (8M samples, w=64 h=16): omp %7.1f ms  serial %7.1f ms  x%.2f\n",
                    t_par * 1e3, t_ser * 1e3, t_ser / t_par);
    }
    {
        const std::span<const float> xs(signal.data(), 2'000'000);
        const double t_par = time_best_of(3, [&] { spectrogram(xs, 512, 256); });
        const double t_ser = time_best_of(1, [&] { reference::spectrogram(xs, 512, 256); });
        std::printf("spectrogram   (2M samples, w=512 h=256): omp %7.1f ms  serial %7.1f ms  x%.2f\n",
                    t_par * 1e3, t_ser * 1e3, t_ser / t_par);
    }
    {
        std::vector<double> env(1 << 18);
        for (std::size_t i = 0; i < env.size(); ++i)
            env[i] = std::abs(std::sin(0.002 * double(i))) + 0.05 * std::sin(0.8 * double(i));
        const std::span<const double> e(env.data(), env.size());
        const double t_par = time_best_of(3, [&] { autocorrelation(e, 1 << 17); });
        const double t_ser = time_best_of(1, [&] { reference::autocorrelation(e, 1 << 12); });
        std::printf("autocorr      (256k points): fft %7.1f ms   direct(4k lags) %7.1f ms\n",
                    t_par * 1e3, t_ser * 1e3);
    }
    return 0;
}
