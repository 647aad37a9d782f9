#include <myodecode/bss.hpp>
#include <myodecode/error.hpp>

#include <algorithm>
#include <cmath>
#include <deque>
#include <random>

namespace myodecode::bss {

namespace {

std::vector<double> squared(std::span<const double> x) {
    std::vector<double> sq(x.size());
    std::transform(x.begin(), x.end(), sq.begin(), [](double v) { return v * v; });
    return sq;
}

SampleIndex refractory_samples(double refractory_ms, double sample_rate) {
    if (!(refractory_ms > 0.0)) {
        throw InvalidArgument("refractory period must be positive");
    }
    if (!(sample_rate > 0.0)) {
        throw InvalidArgument("sample rate must be positive");
    }
    return static_cast<SampleIndex>(std::ceil(refractory_ms * sample_rate / 1000.0));
}

std::vector<SampleIndex> peaks_of(const std::vector<double>& sq) {
    std::vector<SampleIndex> peaks;
    for (std::size_t k = 1; k + 1 < sq.size(); ++k) {
        if (sq[k] > sq[k - 1] && sq[k] >= sq[k + 1]) {
            peaks.push_back(static_cast<SampleIndex>(k));
        }
    }
    return peaks;
}

} // namespace

std::vector<SampleIndex> squared_peaks(std::span<const double> ipt) {
    return peaks_of(squared(ipt));
}

TwoMeans two_means(std::span<const double> values, double init_low, double init_high, int max_iterations) {
    TwoMeans c{std::min(init_low, init_high), std::max(init_low, init_high)};
    if (values.empty()) {
        return c;
    }
    for (int it = 0; it < max_iterations; ++it) {
        const double b = c.boundary();
        double sum_lo = 0.0;
        double sum_hi = 0.0;
        std::size_t n_lo = 0;
        std::size_t n_hi = 0;
        for (double v : values) {
            if (v > b) {
                sum_hi += v;
                ++n_hi;
            } else {
                sum_lo += v;
                ++n_lo;
            }
        }
        TwoMeans next = c;
        if (n_lo > 0) {
            next.low = sum_lo / static_cast<double>(n_lo);
        }
        if (n_hi > 0) {
            next.high = sum_hi / static_cast<double>(n_hi);
        }
        if (next.low == c.low && next.high == c.high) {
            break;
        }
        c = next;
    }
    return c;
}

std::vector<SampleIndex> enforce_refractory(std::span<const double> sq, std::vector<SampleIndex> candidates,
                                            SampleIndex refractory) {
    std::vector<SampleIndex> kept;
    kept.reserve(candidates.size());
    for (SampleIndex c : candidates) {
        if (!kept.empty() && c - kept.back() < refractory) {
            if (sq[static_cast<std::size_t>(c)] > sq[static_cast<std::size_t>(kept.back())]) {
                kept.back() = c;
            }
            continue;
        }
        kept.push_back(c);
    }
    return kept;
}

std::vector<SampleIndex> detect_spikes_adaptive(std::span<const double> ipt, double sample_rate,
                                                const AdaptiveOptions& options) {
    const SampleIndex refractory = refractory_samples(options.refractory_ms, sample_rate);
    if (!(options.rel_threshold > 0.0 && options.rel_threshold < 1.0)) {
        throw InvalidArgument("relative threshold must lie in (0, 1)");
    }
    if (!(options.window_s > 0.0)) {
        throw InvalidArgument("adaptive window must be positive");
    }

    const std::vector<double> sq = squared(ipt);
    const std::vector<SampleIndex> peaks = peaks_of(sq);
    if (peaks.empty()) {
        return {};
    }
    std::vector<double> values(peaks.size());
    for (std::size_t i = 0; i < peaks.size(); ++i) {
        values[i] = sq[static_cast<std::size_t>(peaks[i])];
    }
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    if (!(*hi > 0.0)) {
        return {};
    }

    const auto window = static_cast<SampleIndex>(std::llround(options.window_s * sample_rate));
    double reference = two_means(values, *lo, *hi).high;

    std::vector<SampleIndex> spikes;
    std::deque<SampleIndex> recent;
    double recent_sum = 0.0;
    auto value = [&](SampleIndex k) { return sq[static_cast<std::size_t>(k)]; };

    for (SampleIndex p : peaks) {
        while (!recent.empty() && recent.front() < p - window) {
            recent_sum -= value(recent.front());
            recent.pop_front();
        }
        if (!recent.empty()) {
            reference = recent_sum / static_cast<double>(recent.size());
        }
        const double v = value(p);
        if (!(v > options.rel_threshold * reference)) {
            continue;
        }
        if (!spikes.empty() && p - spikes.back() < refractory) {
            if (v > value(spikes.back())) {
                if (!recent.empty() && recent.back() == spikes.back()) {
                    recent_sum += v - value(recent.back());
                    recent.back() = p;
                }
                spikes.back() = p;
            }
            continue;
        }
        spikes.push_back(p);
        recent.push_back(p);
        recent_sum += v;
    }
    return spikes;
}

std::vector<SampleIndex> detect_spikes_kmeans(std::span<const double> ipt, double sample_rate, double refractory_ms,
                                              std::uint64_t seed) {
    const SampleIndex refractory = refractory_samples(refractory_ms, sample_rate);
    const std::vector<double> sq = squared(ipt);
    const std::vector<SampleIndex> peaks = peaks_of(sq);
    std::vector<double> values(peaks.size());
    for (std::size_t i = 0; i < peaks.size(); ++i) {
        values[i] = sq[static_cast<std::size_t>(peaks[i])];
    }
    if (values.size() < 2) {
        return {};
    }
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    if (*lo == *hi) {
        return {};
    }

    // k-means++ seeding.
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, values.size() - 1);
    const double first = values[pick(rng)];
    std::vector<double> weights(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        weights[i] = (values[i] - first) * (values[i] - first);
    }
    std::discrete_distribution<std::size_t> by_distance(weights.begin(), weights.end());
    const double second = values[by_distance(rng)];

    const TwoMeans c = two_means(values, first, second);
    if (!(c.high > c.low)) {
        return {};
    }
    const double boundary = c.boundary();
    std::vector<SampleIndex> candidates;
    for (std::size_t i = 0; i < peaks.size(); ++i) {
        if (values[i] > boundary) {
            candidates.push_back(peaks[i]);
        }
    }
    return enforce_refractory(sq, std::move(candidates), refractory);
}

double silhouette(std::span<const double> ipt, std::span<const SampleIndex> spikes) {
    const std::vector<double> sq = squared(ipt);
    const std::vector<SampleIndex> peaks = peaks_of(sq);

    std::vector<double> in;
    std::vector<double> out;
    in.reserve(spikes.size());
    for (SampleIndex s : spikes) {
        if (s < 0 || static_cast<std::size_t>(s) >= sq.size()) {
            throw InvalidArgument("spike index outside the series");
        }
        in.push_back(sq[static_cast<std::size_t>(s)]);
    }
    std::vector<SampleIndex> sorted(spikes.begin(), spikes.end());
    std::sort(sorted.begin(), sorted.end());
    for (SampleIndex p : peaks) {
        if (!std::binary_search(sorted.begin(), sorted.end(), p)) {
            out.push_back(sq[static_cast<std::size_t>(p)]);
        }
    }
    if (in.empty() || out.empty()) {
        throw UndefinedSil("silhouette needs at least one spike and one non-spike peak");
    }

    auto mean = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) {
            s += x;
        }
        return s / static_cast<double>(v.size());
    };
    const double c_in = mean(in);
    const double c_out = mean(out);
    double within = 0.0;
    double between = 0.0;
    for (double x : in) {
        within += std::abs(x - c_in);
        between += std::abs(x - c_out);
    }
    for (double x : out) {
        within += std::abs(x - c_out);
        between += std::abs(x - c_in);
    }
    const double m = std::max(within, between);
    if (m == 0.0) {
        return 0.0;
    }
    return (between - within) / m;
}

} // namespace myodecode::bss
