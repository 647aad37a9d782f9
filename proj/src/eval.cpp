#include <myodecode/error.hpp>
#include <myodecode/eval.hpp>
#include <myodecode/random.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <limits>
#include <mutex>
#include <numeric>
#include <random>
#include <string>
#include <thread>

namespace myodecode::eval {

double multivariate_r2(const KinematicsTrajectory& est, const KinematicsTrajectory& ref) {
    if (est.dofs() != ref.dofs() || est.length() != ref.length()) {
        throw InvalidArgument("estimate and reference differ in shape");
    }
    if (!est.dof_labels.empty() && !ref.dof_labels.empty() && est.dof_labels != ref.dof_labels) {
        throw InvalidArgument("estimate and reference have different DoF labels");
    }
    if (ref.length() < 1) {
        throw UndefinedMetric("R² of an empty trajectory is undefined");
    }
    const Matrix centered = ref.angles.colwise() - ref.angles.rowwise().mean();
    const double sst = centered.squaredNorm();
    if (!(sst > 0.0)) {
        throw UndefinedMetric("R² is undefined for a constant reference");
    }
    const double sse = (est.angles - ref.angles).squaredNorm();
    return 1.0 - sse / sst;
}

SummaryStats summarize(std::span<const double> values) {
    SummaryStats s;
    if (values.empty()) {
        const double nan = std::numeric_limits<double>::quiet_NaN();
        return {nan, nan, nan, nan, nan};
    }
    std::vector<double> v(values.begin(), values.end());
    std::sort(v.begin(), v.end());
    const auto n = static_cast<double>(v.size());
    s.mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
    double ss = 0.0;
    for (double x : v) {
        ss += (x - s.mean) * (x - s.mean);
    }
    s.variance = v.size() > 1 ? ss / (n - 1.0) : 0.0;
    auto pct = [&](double q) {
        const double pos = q * (n - 1.0);
        const auto i = static_cast<std::size_t>(std::floor(pos));
        const std::size_t j = std::min(i + 1, v.size() - 1);
        const double f = pos - static_cast<double>(i);
        return v[i] + f * (v[j] - v[i]);
    };
    s.median = pct(0.5);
    s.p25 = pct(0.25);
    s.p75 = pct(0.75);
    return s;
}

PipelineScore evaluate_decoding(const decode::BinnedActivity& counts, const KinematicsTrajectory& reference,
                                const decode::TrialLayout& layout, const decode::DecodeConfig& config,
                                bool require_all_dofs) {
    const decode::BinnedActivity smoothed = decode::smooth(counts, config.cutoff_hz);
    const decode::DecoderFit fit = decode::fit_decoder(smoothed, reference, layout, config, require_all_dofs);
    const KinematicsTrajectory est = decode::project(fit.model, smoothed, reference.sample_rate);

    auto score = [&](const std::vector<std::size_t>& trials) {
        const std::vector<Index> idx = layout.bin_indices(trials, counts.bin_ms, counts.bins());
        if (idx.empty()) {
            return std::numeric_limits<double>::quiet_NaN();
        }
        KinematicsTrajectory e{decode::take_cols(est.angles, idx), est.dof_labels, est.sample_rate};
        KinematicsTrajectory r{decode::take_cols(reference.angles, idx), est.dof_labels, reference.sample_rate};
        return multivariate_r2(e, r);
    };
    return {score(layout.train), score(layout.test)};
}

BinnedScene bin_scene(const SpikeTrainSet& musts, const KinematicsTrajectory& reference, double bin_ms) {
    BinnedScene out;
    out.counts = decode::bin_spikes(musts, bin_ms, musts.duration_s());
    const double rate = out.counts.bin_rate();
    if (reference.sample_rate == rate && reference.length() >= out.counts.bins()) {
        out.reference = reference.slice(0, out.counts.bins());
    } else {
        out.reference = decode::resample(reference, rate, out.counts.bins());
    }
    return out;
}

std::size_t worker_count(std::size_t requested) {
    std::size_t n = requested;
    if (n == 0) {
        n = std::max(1u, std::thread::hardware_concurrency());
    }
    if (const char* env = std::getenv("MYODECODE_THREADS")) {
        char* end = nullptr;
        const long cap = std::strtol(env, &end, 10);
        if (end != env && cap > 0) {
            n = std::min(n, static_cast<std::size_t>(cap));
        }
    }
    return std::max<std::size_t>(1, n);
}

void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& body) {
    threads = std::min(std::max<std::size_t>(1, threads), count);
    if (threads <= 1) {
        for (std::size_t i = 0; i < count; ++i) {
            body(i);
        }
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++) {
                try {
                    body(i);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure) {
                        failure = std::current_exception();
                    }
                }
            }
        });
    }
    for (auto& th : pool) {
        th.join();
    }
    if (failure) {
        std::rethrow_exception(failure);
    }
}

namespace {

std::vector<std::size_t> draw_channels(std::size_t available, std::size_t count, std::uint64_t seed) {
    std::vector<std::size_t> idx(available);
    std::iota(idx.begin(), idx.end(), 0);
    if (count >= available) {
        return idx;
    }
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < count; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, available - 1);
        std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(count);
    std::sort(idx.begin(), idx.end());
    return idx;
}

void finalize(SweepEntry& e) {
    e.train = summarize(e.train_r2);
    e.test = summarize(e.test_r2);
}

} // namespace

SweepReport reduced_set_sweep(const SpikeTrainSet& musts, const KinematicsTrajectory& reference,
                              std::span<const std::size_t> sizes, const StudyOptions& options) {
    options.layout.validate();
    const BinnedScene scene = bin_scene(musts, reference, options.decode.bin_ms);
    const std::size_t available = musts.size();

    SweepReport report;
    report.seed = options.seed;
    report.run_count = options.runs;

    std::vector<std::size_t> kept;
    for (std::size_t s : sizes) {
        if (s == 0 || s > available) {
            report.warnings.push_back("size " + std::to_string(s) + " skipped: " + std::to_string(available) +
                                      " channels available");
            continue;
        }
        kept.push_back(s);
        SweepEntry e;
        e.label = std::to_string(s);
        e.size = s;
        e.train_r2.resize(options.runs);
        e.test_r2.resize(options.runs);
        report.entries.push_back(std::move(e));
    }

    parallel_for(kept.size() * options.runs, worker_count(options.threads), [&](std::size_t job) {
        const std::size_t si = job / options.runs;
        const std::size_t run = job % options.runs;
        const auto channels = draw_channels(available, kept[si], derive_seed(options.seed, {kept[si], run}));
        const PipelineScore score =
            evaluate_decoding(scene.counts.columns(channels), scene.reference, options.layout, options.decode);
        report.entries[si].train_r2[run] = score.train_r2;
        report.entries[si].test_r2[run] = score.test_r2;
    });
    for (auto& e : report.entries) {
        finalize(e);
    }
    return report;
}

void MuxSchedule::validate(std::size_t channels) const {
    if (subset_size < 1 || subset_size > channels) {
        throw InvalidArgument("multiplex subset size must lie in [1, channel count]");
    }
    if (switchings < 1) {
        throw InvalidArgument("multiplex schedule needs at least one block");
    }
    if (subset_size * switchings < channels) {
        throw InvalidArgument("subset_size x N (" + std::to_string(subset_size * switchings) +
                              ") does not cover the " + std::to_string(channels) + " scheduled channels");
    }
    if (!(block_ms > 0.0)) {
        throw InvalidArgument("block duration must be positive");
    }
}

std::vector<std::vector<std::size_t>> mux_blocks(const MuxSchedule& schedule, std::size_t channels) {
    schedule.validate(channels);
    std::vector<std::size_t> order(channels);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(schedule.seed);
    if (schedule.selection == Selection::Random) {
        std::shuffle(order.begin(), order.end(), rng);
    }

    std::vector<std::vector<std::size_t>> blocks(schedule.switchings);
    std::size_t pos = 0;
    for (auto& block : blocks) {
        while (block.size() < schedule.subset_size && pos < channels) {
            block.push_back(order[pos++]);
        }
        if (block.size() < schedule.subset_size) {
            // Pad from channels visited earlier in the cycle, excluding this block's own.
            std::vector<std::size_t> pool;
            for (std::size_t i = 0; i < channels; ++i) {
                if (std::find(block.begin(), block.end(), order[i]) == block.end()) {
                    pool.push_back(order[i]);
                }
            }
            if (schedule.selection == Selection::Random) {
                std::shuffle(pool.begin(), pool.end(), rng);
            }
            for (std::size_t i = 0; block.size() < schedule.subset_size && i < pool.size(); ++i) {
                block.push_back(pool[i]);
            }
        }
    }
    return blocks;
}

decode::BinnedActivity time_multiplex(const decode::BinnedActivity& binned, const MuxSchedule& schedule) {
    const auto channels = static_cast<std::size_t>(binned.channels());
    schedule.validate(channels);
    const double ratio = schedule.block_ms / binned.bin_ms;
    const auto block_bins = static_cast<Index>(std::llround(ratio));
    if (block_bins < 1 || std::abs(ratio - static_cast<double>(block_bins)) > 1e-9) {
        throw InvalidArgument("block duration must be a whole number of bins");
    }
    return time_multiplex(binned, mux_blocks(schedule, channels), block_bins);
}

decode::BinnedActivity time_multiplex(const decode::BinnedActivity& binned,
                                      const std::vector<std::vector<std::size_t>>& blocks, Index block_bins) {
    if (blocks.empty() || block_bins < 1) {
        throw InvalidArgument("multiplexing needs at least one block of at least one bin");
    }
    for (const auto& block : blocks) {
        for (std::size_t c : block) {
            if (c >= static_cast<std::size_t>(binned.channels())) {
                throw InvalidArgument("multiplex block refers to channel " + std::to_string(c) + " out of range");
            }
        }
    }
    decode::BinnedActivity out = binned;
    RowVector held = RowVector::Zero(binned.channels());
    for (Index t = 0; t < binned.bins(); ++t) {
        const auto b = static_cast<std::size_t>(t / block_bins) % blocks.size();
        for (std::size_t c : blocks[b]) {
            held(static_cast<Index>(c)) = binned.values(t, static_cast<Index>(c));
        }
        out.values.row(t) = held;
    }
    return out;
}

std::vector<MuxSetup> standard_mux_setups() {
    return {
        {"setup1: 32 of 224, T_B=200ms, N=7", 224, 32, 200.0, 7, Selection::Random},
        {"setup2: 32 of 96, T_B=100ms, N=3", 96, 32, 100.0, 3, Selection::Random},
        {"setup3: 32 of 96, T_B=50ms, N=3", 96, 32, 50.0, 3, Selection::Random},
        {"setup4: reduced 32, no switching", 32, 0, 50.0, 1, Selection::Random},
        {"setup5: reduced 96, no switching", 96, 0, 50.0, 1, Selection::Random},
        {"setup6: all channels", 0, 0, 50.0, 1, Selection::Random},
    };
}

SweepReport mux_study(const SpikeTrainSet& musts, const KinematicsTrajectory& reference,
                      std::span<const MuxSetup> setups, const StudyOptions& options) {
    options.layout.validate();
    const BinnedScene scene = bin_scene(musts, reference, options.decode.bin_ms);
    const std::size_t available = musts.size();

    SweepReport report;
    report.seed = options.seed;
    report.run_count = options.runs;

    std::vector<std::size_t> kept;
    for (std::size_t i = 0; i < setups.size(); ++i) {
        const auto& s = setups[i];
        if (s.scheduled_channels > available) {
            report.warnings.push_back(s.label + " skipped: needs " + std::to_string(s.scheduled_channels) +
                                      " channels, " + std::to_string(available) + " available");
            continue;
        }
        const std::size_t scheduled = s.scheduled_channels == 0 ? available : s.scheduled_channels;
        if (s.subset_size > 0) {
            MuxSchedule probe{s.subset_size, s.block_ms, s.switchings, s.selection, 0};
            probe.validate(scheduled);
        }
        kept.push_back(i);
        SweepEntry e;
        e.label = s.label;
        e.size = scheduled;
        e.train_r2.resize(options.runs);
        e.test_r2.resize(options.runs);
        report.entries.push_back(std::move(e));
    }

    parallel_for(kept.size() * options.runs, worker_count(options.threads), [&](std::size_t job) {
        const std::size_t ei = job / options.runs;
        const std::size_t run = job % options.runs;
        const auto& setup = setups[kept[ei]];
        const std::uint64_t seed = derive_seed(options.seed, {kept[ei], run});
        const std::size_t scheduled = setup.scheduled_channels == 0 ? available : setup.scheduled_channels;
        const auto channels = draw_channels(available, scheduled, derive_seed(seed, {0}));
        decode::BinnedActivity counts = scene.counts.columns(channels);
        if (setup.subset_size > 0) {
            MuxSchedule schedule{setup.subset_size, setup.block_ms, setup.switchings, setup.selection,
                                 derive_seed(seed, {1})};
            counts = time_multiplex(counts, schedule);
        }
        const PipelineScore score = evaluate_decoding(counts, scene.reference, options.layout, options.decode);
        report.entries[ei].train_r2[run] = score.train_r2;
        report.entries[ei].test_r2[run] = score.test_r2;
    });
    for (auto& e : report.entries) {
        finalize(e);
    }
    return report;
}

TrainMatch match_trains(std::span<const SampleIndex> truth, std::span<const SampleIndex> detected,
                        SampleIndex tolerance, SampleIndex lag) {
    TrainMatch m;
    m.lag = lag;
    std::size_t i = 0;
    std::size_t j = 0;
    while (i < truth.size() && j < detected.size()) {
        const SampleIndex diff = detected[j] - lag - truth[i];
        if (std::abs(diff) <= tolerance) {
            ++m.matched;
            ++i;
            ++j;
        } else if (diff < 0) {
            ++j;
        } else {
            ++i;
        }
    }
    m.missed = truth.size() - m.matched;
    m.false_positives = detected.size() - m.matched;
    const std::size_t denom = m.matched + m.missed + m.false_positives;
    m.rate_of_agreement = denom > 0 ? static_cast<double>(m.matched) / static_cast<double>(denom) : 0.0;
    m.recall = truth.empty() ? 0.0 : static_cast<double>(m.matched) / static_cast<double>(truth.size());
    return m;
}

namespace {

SampleIndex best_lag(std::span<const SampleIndex> truth, std::span<const SampleIndex> detected, SampleIndex tolerance,
                     SampleIndex max_lag) {
    const SampleIndex w = max_lag + tolerance;
    std::vector<std::size_t> hist(static_cast<std::size_t>(2 * w + 1), 0);
    std::size_t start = 0;
    for (SampleIndex t : truth) {
        while (start < detected.size() && detected[start] < t - w) {
            ++start;
        }
        for (std::size_t j = start; j < detected.size() && detected[j] <= t + w; ++j) {
            ++hist[static_cast<std::size_t>(detected[j] - t + w)];
        }
    }
    // Ties within the tolerance window go to the lag with more exact hits.
    SampleIndex best = 0;
    std::size_t best_count = 0;
    std::size_t best_exact = 0;
    for (SampleIndex lag = -max_lag; lag <= max_lag; ++lag) {
        std::size_t c = 0;
        for (SampleIndex d = -tolerance; d <= tolerance; ++d) {
            c += hist[static_cast<std::size_t>(lag + d + w)];
        }
        const std::size_t exact = hist[static_cast<std::size_t>(lag + w)];
        if (c > best_count || (c == best_count && exact > best_exact)) {
            best_count = c;
            best_exact = exact;
            best = lag;
        }
    }
    return best;
}

} // namespace

std::vector<TrainMatch> match_sources(const SpikeTrainSet& truth, const SpikeTrainSet& detected, double tolerance_ms,
                                      double max_lag_ms) {
    if (!(truth.sample_rate > 0.0) || tolerance_ms < 0.0 || max_lag_ms < 0.0) {
        throw InvalidArgument("invalid matching parameters");
    }
    const auto tol = static_cast<SampleIndex>(std::llround(tolerance_ms * truth.sample_rate / 1000.0));
    const auto max_lag = static_cast<SampleIndex>(std::llround(max_lag_ms * truth.sample_rate / 1000.0));
    std::vector<TrainMatch> out;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        TrainMatch best;
        best.truth = i;
        best.missed = truth.trains[i].size();
        for (std::size_t j = 0; j < detected.size(); ++j) {
            const SampleIndex lag = best_lag(truth.trains[i], detected.trains[j], tol, max_lag);
            TrainMatch m = match_trains(truth.trains[i], detected.trains[j], tol, lag);
            if (m.rate_of_agreement > best.rate_of_agreement) {
                m.truth = i;
                m.source = static_cast<std::ptrdiff_t>(j);
                best = m;
            }
        }
        out.push_back(best);
    }
    return out;
}

double detection_recall(std::span<const TrainMatch> matches, const SpikeTrainSet& truth) {
    std::size_t matched = 0;
    for (const auto& m : matches) {
        matched += m.matched;
    }
    const std::size_t total = truth.total_spikes();
    return total > 0 ? static_cast<double>(matched) / static_cast<double>(total) : 0.0;
}

ThresholdComparison thresholding_comparison(const EmgRecording& emg, const SpikeTrainSet& truth,
                                            const KinematicsTrajectory& reference, const ComparisonOptions& options) {
    const bss::IptSet ipts = bss::separate(emg, options.decompose);

    auto run = [&](bss::Detector detector, const char* name) {
        DetectorOutcome o;
        o.detector = name;
        bss::DecomposeConfig cfg = options.decompose;
        cfg.detector = detector;
        o.decomposition = bss::qualify(ipts, emg.sample_rate, emg.length(), cfg);
        o.matches = match_sources(truth, o.decomposition.sources, options.match_tolerance_ms, options.match_max_lag_ms);
        o.recall = detection_recall(o.matches, truth);
        if (o.decomposition.sources.size() > 0) {
            try {
                const BinnedScene scene = bin_scene(o.decomposition.sources, reference, options.decode.bin_ms);
                o.score = evaluate_decoding(scene.counts, scene.reference, options.layout, options.decode);
                o.decoded = true;
            } catch (const Error& e) {
                o.error = e.what();
            }
        } else {
            o.error = "no qualified sources";
        }
        return o;
    };

    ThresholdComparison out;
    out.adaptive = run(bss::Detector::Adaptive, "adaptive");
    out.kmeans = run(bss::Detector::KMeans, "kmeans");
    auto pct = [](double a, double k) {
        return std::abs(k) > 0.0 ? 100.0 * (a - k) / std::abs(k) : std::numeric_limits<double>::quiet_NaN();
    };
    out.test_improvement_pct = pct(out.adaptive.score.test_r2, out.kmeans.score.test_r2);
    out.train_improvement_pct = pct(out.adaptive.score.train_r2, out.kmeans.score.train_r2);
    return out;
}

} // namespace myodecode::eval
