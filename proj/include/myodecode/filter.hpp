#pragma once

#include <cmath>
#include <numbers>
#include <span>

namespace myodecode {

/// Pole of the first-order smoother: exp(−2π·cutoff/rate).
inline double smoothing_coefficient(double cutoff_hz, double rate_hz) {
    return std::exp(-2.0 * std::numbers::pi * cutoff_hz / rate_hz);
}

/// y[k] = a·y[k−1] + (1−a)·x[k], zero initial state. Unit DC gain.
inline void first_order_lowpass(std::span<double> x, double a) {
    double y = 0.0;
    for (double& v : x) {
        y = a * y + (1.0 - a) * v;
        v = y;
    }
}

} // namespace myodecode
