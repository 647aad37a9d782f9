#pragma once

#include <myodecode/bss.hpp>
#include <myodecode/decode.hpp>
#include <myodecode/types.hpp>

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace myodecode::eval {

/// 1 − SSE/SST pooled over DoFs and time, SST about each DoF's own mean.
double multivariate_r2(const KinematicsTrajectory& estimate, const KinematicsTrajectory& reference);

struct SummaryStats {
    double mean = 0.0;
    double variance = 0.0;  // unbiased; 0 for a single value
    double median = 0.0;
    double p25 = 0.0;
    double p75 = 0.0;
};

/// Percentiles by linear interpolation between order statistics.
SummaryStats summarize(std::span<const double> values);

struct SweepEntry {
    std::string label;
    std::size_t size = 0;
    std::vector<double> train_r2;
    std::vector<double> test_r2;
    SummaryStats train;
    SummaryStats test;
};

struct SweepReport {
    std::vector<SweepEntry> entries;
    std::uint64_t seed = 0;
    std::size_t run_count = 0;
    std::vector<std::string> warnings;
};

struct PipelineScore {
    double train_r2 = 0.0;
    double test_r2 = 0.0;
};

/// Smooth raw counts, fit the decoder on the training trials and score
/// train and test trials. `reference` must be sampled at the bin rate.
PipelineScore evaluate_decoding(const decode::BinnedActivity& counts, const KinematicsTrajectory& reference,
                                const decode::TrialLayout& layout, const decode::DecodeConfig& config,
                                bool require_all_dofs = false);

/// Bins `musts` over its full duration and aligns `reference` to the bins.
struct BinnedScene {
    decode::BinnedActivity counts;
    KinematicsTrajectory reference;
};
BinnedScene bin_scene(const SpikeTrainSet& musts, const KinematicsTrajectory& reference, double bin_ms);

struct StudyOptions {
    std::size_t runs = 50;
    std::uint64_t seed = 1;
    decode::DecodeConfig decode;
    decode::TrialLayout layout;
    /// 0: MYODECODE_THREADS or the hardware concurrency.
    std::size_t threads = 0;
};

/// Random channel subsets of each size, drawn without replacement with one
/// child seed per (size, run), decoded and scored.
SweepReport reduced_set_sweep(const SpikeTrainSet& musts, const KinematicsTrajectory& reference,
                              std::span<const std::size_t> sizes, const StudyOptions& options);

enum class Selection { Random, Periodic };

struct MuxSchedule {
    std::size_t subset_size = 32;
    double block_ms = 100.0;      // T_B
    std::size_t switchings = 3;   // N
    Selection selection = Selection::Random;
    std::uint64_t seed = 1;

    double revisit_ms() const { return static_cast<double>(switchings) * block_ms; }  // T_R
    void validate(std::size_t scheduled_channels) const;
};

/// Channel blocks visited in order during one revisit period. When
/// subset_size × N exceeds the channel count the last block is padded with
/// channels already visited.
std::vector<std::vector<std::size_t>> mux_blocks(const MuxSchedule& schedule, std::size_t channels);

/// Sample-and-hold reconstruction: during each block only the selected
/// columns take fresh bin values, the rest keep their last value (zero
/// before their first visit).
decode::BinnedActivity time_multiplex(const decode::BinnedActivity& binned, const MuxSchedule& schedule);

/// Sample-and-hold replay of explicit blocks, each held for `block_bins` bins
/// and visited cyclically.
decode::BinnedActivity time_multiplex(const decode::BinnedActivity& binned,
                                      const std::vector<std::vector<std::size_t>>& blocks, Index block_bins);

struct MuxSetup {
    std::string label;
    std::size_t scheduled_channels = 0;  // 0: all channels
    std::size_t subset_size = 0;         // 0: all scheduled channels, no switching
    double block_ms = 50.0;
    std::size_t switchings = 1;
    Selection selection = Selection::Random;
};

/// Six default multiplexing setups: three switching
/// schedules, then reduced 32, reduced 96 and full-set baselines.
std::vector<MuxSetup> standard_mux_setups();

SweepReport mux_study(const SpikeTrainSet& musts, const KinematicsTrajectory& reference,
                      std::span<const MuxSetup> setups, const StudyOptions& options);

struct TrainMatch {
    std::size_t truth = 0;
    std::ptrdiff_t source = -1;
    SampleIndex lag = 0;
    std::size_t matched = 0;
    std::size_t missed = 0;
    std::size_t false_positives = 0;
    double rate_of_agreement = 0.0;
    double recall = 0.0;
};

/// Greedy two-pointer matching of `detected − lag` against `truth` within
/// ±tolerance samples.
TrainMatch match_trains(std::span<const SampleIndex> truth, std::span<const SampleIndex> detected,
                        SampleIndex tolerance, SampleIndex lag);

/// Best detected source for every ground-truth train by rate of agreement,
/// searching lags in [−max_lag, max_lag].
std::vector<TrainMatch> match_sources(const SpikeTrainSet& truth, const SpikeTrainSet& detected, double tolerance_ms,
                                      double max_lag_ms);

/// Matched true spikes over all true spikes, using each neuron's best source.
double detection_recall(std::span<const TrainMatch> matches, const SpikeTrainSet& truth);

struct DetectorOutcome {
    std::string detector;
    bss::Decomposition decomposition;
    std::vector<TrainMatch> matches;
    double recall = 0.0;
    PipelineScore score;
    bool decoded = false;
    std::string error;
};

struct ThresholdComparison {
    DetectorOutcome adaptive;
    DetectorOutcome kmeans;
    /// 100·(adaptive − kmeans)/|kmeans| on test R².
    double test_improvement_pct = 0.0;
    double train_improvement_pct = 0.0;
};

struct ComparisonOptions {
    bss::DecomposeConfig decompose;
    decode::DecodeConfig decode;
    decode::TrialLayout layout;
    double match_tolerance_ms = 1.0;
    double match_max_lag_ms = 20.0;
};

/// Decomposes once per detector (the ICA stage is shared since it does not
/// depend on the detector), decodes both MUST sets and scores them.
ThresholdComparison thresholding_comparison(const EmgRecording& emg, const SpikeTrainSet& truth,
                                            const KinematicsTrajectory& reference, const ComparisonOptions& options);

/// Worker count: `requested` if non-zero, else MYODECODE_THREADS, else the
/// hardware concurrency.
std::size_t worker_count(std::size_t requested);

/// Runs body(0..count−1) on up to `threads` workers.
void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& body);

} // namespace myodecode::eval
