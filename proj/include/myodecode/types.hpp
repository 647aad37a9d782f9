#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace myodecode {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Index = Eigen::Index;
using SampleIndex = std::int64_t;

/// Multichannel EMG, one row per electrode.
struct EmgRecording {
    Matrix samples;
    double sample_rate = 0.0;

    Index channels() const { return samples.rows(); }
    Index length() const { return samples.cols(); }

    /// Throws InvalidArgument on empty or non-finite data.
    void validate() const;
};

/// Discharge sample indices per source. `sample_count` is the length of the
/// recording the trains were taken from.
struct SpikeTrainSet {
    std::vector<std::vector<SampleIndex>> trains;
    std::vector<std::string> labels;
    double sample_rate = 0.0;
    SampleIndex sample_count = 0;

    std::size_t size() const { return trains.size(); }
    std::size_t total_spikes() const;
    double duration_s() const { return static_cast<double>(sample_count) / sample_rate; }

    /// Trains with the given indices, labels carried along.
    SpikeTrainSet subset(const std::vector<std::size_t>& indices) const;

    /// Throws InvalidArgument if a train is unsorted, out of range, or the
    /// label count disagrees with the train count.
    void validate() const;
};

/// Joint angles in degrees, one row per DoF.
struct KinematicsTrajectory {
    Matrix angles;
    std::vector<std::string> dof_labels;
    double sample_rate = 0.0;

    Index dofs() const { return angles.rows(); }
    Index length() const { return angles.cols(); }

    /// Columns [begin, end).
    KinematicsTrajectory slice(Index begin, Index end) const;

    void validate() const;
};

/// Default label for source `i` ("s0", "s1", ...).
std::string source_label(std::size_t i);

} // namespace myodecode
