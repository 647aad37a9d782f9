#include <myodecode/error.hpp>
#include <myodecode/types.hpp>

#include <string>

namespace myodecode {

void EmgRecording::validate() const {
    if (samples.rows() < 1 || samples.cols() < 1) {
        throw InvalidArgument("EMG recording is empty");
    }
    if (!(sample_rate > 0.0)) {
        throw InvalidArgument("EMG sample rate must be positive");
    }
    if (!samples.allFinite()) {
        throw InvalidArgument("EMG recording contains non-finite samples");
    }
}

std::size_t SpikeTrainSet::total_spikes() const {
    std::size_t n = 0;
    for (const auto& t : trains) {
        n += t.size();
    }
    return n;
}

SpikeTrainSet SpikeTrainSet::subset(const std::vector<std::size_t>& indices) const {
    SpikeTrainSet out;
    out.sample_rate = sample_rate;
    out.sample_count = sample_count;
    out.trains.reserve(indices.size());
    out.labels.reserve(indices.size());
    for (auto i : indices) {
        if (i >= trains.size()) {
            throw InvalidArgument("spike train index " + std::to_string(i) + " out of range");
        }
        out.trains.push_back(trains[i]);
        out.labels.push_back(i < labels.size() ? labels[i] : source_label(i));
    }
    return out;
}

void SpikeTrainSet::validate() const {
    if (!(sample_rate > 0.0)) {
        throw InvalidArgument("spike train sample rate must be positive");
    }
    if (!labels.empty() && labels.size() != trains.size()) {
        throw InvalidArgument("spike train label count does not match train count");
    }
    for (std::size_t c = 0; c < trains.size(); ++c) {
        const auto& t = trains[c];
        for (std::size_t k = 0; k < t.size(); ++k) {
            if (t[k] < 0 || t[k] >= sample_count) {
                throw InvalidArgument("spike index out of range in train " + std::to_string(c));
            }
            if (k > 0 && t[k] <= t[k - 1]) {
                throw InvalidArgument("spike indices not strictly increasing in train " + std::to_string(c));
            }
        }
    }
}

KinematicsTrajectory KinematicsTrajectory::slice(Index begin, Index end) const {
    if (begin < 0 || end > length() || begin > end) {
        throw InvalidArgument("kinematics slice out of range");
    }
    return {angles.middleCols(begin, end - begin), dof_labels, sample_rate};
}

void KinematicsTrajectory::validate() const {
    if (angles.rows() < 1) {
        throw InvalidArgument("kinematics need at least one DoF");
    }
    if (!dof_labels.empty() && static_cast<Index>(dof_labels.size()) != angles.rows()) {
        throw InvalidArgument("DoF label count does not match kinematics rows");
    }
    if (!angles.allFinite()) {
        throw InvalidArgument("kinematics contain non-finite values");
    }
}

std::string source_label(std::size_t i) {
    return "s" + std::to_string(i);
}

} // namespace myodecode
