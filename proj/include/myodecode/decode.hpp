#pragma once

#include <myodecode/types.hpp>

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace myodecode::decode {

/// Spike counts (or their smoothed version), one row per bin and one column
/// per MUST channel.
struct BinnedActivity {
    Matrix values;
    double bin_ms = 50.0;
    std::vector<std::string> column_labels;

    Index bins() const { return values.rows(); }
    Index channels() const { return values.cols(); }
    double bin_rate() const { return 1000.0 / bin_ms; }
    RowVector column_means() const { return values.colwise().mean(); }

    /// Rows [begin, end).
    BinnedActivity rows(Index begin, Index end) const;
    /// Columns in the given order.
    BinnedActivity columns(const std::vector<std::size_t>& indices) const;
};

/// Count of spikes with timestamp in [b·bin, (b+1)·bin); the trailing partial
/// bin is dropped.
BinnedActivity bin_spikes(const SpikeTrainSet& musts, double bin_ms, double duration_s);

/// First-order IIR per column, zero initial state.
BinnedActivity smooth(const BinnedActivity& binned, double cutoff_hz);

struct DofAssignment {
    std::string label;
    Index component = 0;
    int sign = 1;
    double gain = 1.0;
    double offset = 0.0;
    double correlation = 0.0;
    bool assigned = false;
};

struct ProjectionModel {
    RowVector column_means;     // 1 × D
    Matrix loadings;            // W_d, D × d
    Vector singular_values;     // σ_1 ≥ … ≥ σ_d
    Matrix rotation;            // R, d × d
    Matrix rotated_loadings;    // W_d·R
    Index training_rows = 0;
    std::vector<std::string> column_labels;
    std::vector<DofAssignment> dofs;
    double bin_ms = 50.0;
    double smoothing_coefficient = 0.0;
    std::uint64_t config_hash = 0;

    Index components() const { return loadings.cols(); }
    Index channels() const { return loadings.rows(); }

    /// (X − means)·W_d.
    Matrix scores(const Matrix& x) const;
    /// (X − means)·W_rot.
    Matrix rotated_scores(const Matrix& x) const;
};

/// PCA via thin SVD of the column-centred data. Each loading column is
/// signed so its largest-magnitude entry is positive. The rotation starts as
/// the identity.
ProjectionModel fit_pca(const BinnedActivity& x, Index components);

/// Rotation criterion evaluated on D × d loadings: for every row, the
/// variance of its squared entries across the d columns, summed over rows.
double varimax_criterion(const Matrix& loadings);

struct VarimaxResult {
    Matrix rotation;
    std::vector<double> criterion;  // before the first sweep, then after each sweep
    int sweeps = 0;
};

/// Pairwise planar (Jacobi-style) VARIMAX sweeps on raw loadings.
VarimaxResult varimax(const Matrix& loadings, double tolerance = 1e-10, int max_sweeps = 1000);

/// W_rot = W_d·R. Throws InvalidArgument when ‖RᵀR − I‖∞ > 1e−6.
ProjectionModel rotate_model(ProjectionModel model, const Matrix& rotation);

struct AssignOptions {
    /// Rows of the training scores used for gain calibration.
    Index calibration_begin = 0;
    Index calibration_end = -1;  // −1: all rows
    double min_correlation = 0.2;
    /// When false an unassignable DoF gets a constant estimate (its
    /// training mean) instead of raising UnassignedDof.
    bool require_all = true;
};

/// Pearson correlation of two equally long series; 0 if either is constant.
double pearson(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b);

/// Greedy one-to-one matching of DoFs to rotated components by descending
/// |Pearson correlation|, then a two-point calibration on the calibration
/// rows so that the oriented score's range maps onto the reference range.
ProjectionModel assign_dofs(ProjectionModel model, const Matrix& training_scores,
                            const KinematicsTrajectory& reference, const AssignOptions& options = {});

/// Out-of-sample projection: centre with the training means, rotate, and
/// apply sign·gain·score + offset per DoF.
KinematicsTrajectory project(const ProjectionModel& model, const BinnedActivity& x, double sample_rate = 0.0);

/// Linear resampling of a trajectory onto `length` samples at `rate` Hz.
KinematicsTrajectory resample(const KinematicsTrajectory& traj, double rate, Index length);

struct DecodeConfig {
    double bin_ms = 50.0;
    double cutoff_hz = 1.0;
    Index components = 12;
    double varimax_tolerance = 1e-10;
    int varimax_max_sweeps = 1000;
    double min_correlation = 0.2;

    std::uint64_t hash() const;
};

/// Trial boundaries in seconds and the roles of each trial.
struct TrialLayout {
    std::vector<std::pair<double, double>> trials;
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
    std::size_t calibration = 0;

    void validate() const;
    /// Bin ranges [begin, end) of one trial.
    std::pair<Index, Index> bins(std::size_t trial, double bin_ms, Index total_bins) const;
    /// Concatenated bin indices of several trials.
    std::vector<Index> bin_indices(const std::vector<std::size_t>& trials, double bin_ms, Index total_bins) const;
};

/// Rows of `m` with the given indices.
Matrix take_rows(const Matrix& m, const std::vector<Index>& rows);
/// Columns of `m` with the given indices.
Matrix take_cols(const Matrix& m, const std::vector<Index>& cols);

struct DecoderFit {
    ProjectionModel model;
    Matrix training_scores;  // rotated, rows = training bins
};

/// PCA, VARIMAX and DoF assignment on the training trials of already
/// smoothed activity. `reference` must be sampled at the bin rate.
DecoderFit fit_decoder(const BinnedActivity& smoothed, const KinematicsTrajectory& reference,
                       const TrialLayout& layout, const DecodeConfig& config, bool require_all_dofs = true);

} // namespace myodecode::decode
