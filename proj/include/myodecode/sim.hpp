#pragma once

#include <myodecode/types.hpp>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace myodecode::sim {

struct MotorNeuron {
    double recruitment_threshold = 0.0;  // fraction of MVC
    double min_rate = 8.0;               // Hz at recruitment
    double peak_rate = 30.0;             // Hz at full excitation
};

/// Motor neuron pool ordered by recruitment threshold (size principle).
struct MotorNeuronPool {
    std::vector<MotorNeuron> neurons;

    std::size_t size() const { return neurons.size(); }
    void validate() const;
};

/// Pool of `count` neurons with thresholds spread evenly over
/// (0, max_threshold] and identical rate limits.
MotorNeuronPool make_pool(std::size_t count, double max_threshold, double min_rate, double peak_rate);

/// Trapezoidal cue parameters.
struct CueShape {
    double ramp_up_s = 3.0;
    double ramp_down_s = 3.0;
    double peak = 1.0;
    double rest_s = 1.0;
};

/// Sampled drive in [0, 1] for one DoF.
struct ExcitationTrajectory {
    std::vector<double> values;
    double sample_rate = 0.0;
    CueShape cue;

    double duration_s() const { return static_cast<double>(values.size()) / sample_rate; }
    /// Linear interpolation at time t seconds; zero outside the record.
    double at(double t) const;
};

ExcitationTrajectory generate_cue(double ramp_up_s, double ramp_down_s, double peak, double sample_rate,
                                  double rest_s);

struct FiringOptions {
    double isi_cv = 0.15;
    double refractory_ms = 10.0;
};

/// Renewal-process discharges for every neuron of `pool` driven by
/// `excitation`. Neuron j fires while the drive is positive and at least its
/// recruitment threshold; the first spike lands on the recruitment sample.
SpikeTrainSet generate_spike_trains(const MotorNeuronPool& pool, const ExcitationTrajectory& excitation,
                                    double emg_rate, std::uint64_t seed, const FiringOptions& options = {});

/// Per (neuron, channel) MUAP templates, stored neuron-major then lag then
/// channel so that one lag of one neuron is a contiguous channel vector.
class MuapBank {
public:
    MuapBank() = default;
    MuapBank(std::size_t neurons, std::size_t channels, std::size_t length);

    std::size_t neurons() const { return neurons_; }
    std::size_t channels() const { return channels_; }
    std::size_t length() const { return length_; }

    double& at(std::size_t neuron, std::size_t channel, std::size_t lag);
    double at(std::size_t neuron, std::size_t channel, std::size_t lag) const;
    /// All channels of one neuron at one lag.
    std::span<const double> lag_slice(std::size_t neuron, std::size_t lag) const;

    /// Multiplicative ramp per neuron (per second); empty means no drift.
    std::vector<double> amplitude_drift;

    /// Template scale at time t seconds: max(0, 1 + drift·t).
    double drift_scale(std::size_t neuron, double t) const;

private:
    std::size_t neurons_ = 0;
    std::size_t channels_ = 0;
    std::size_t length_ = 0;
    std::vector<double> data_;
};

/// Location of a neuron's territory under a rectangular electrode grid, in
/// units of inter-electrode distance.
struct NeuronSite {
    double x = 0.0;
    double y = 0.0;
    double depth = 1.0;
    double amplitude = 1.0;
};

struct MuapOptions {
    std::size_t length = 30;
    std::size_t grid_rows = 8;
    std::size_t grid_cols = 8;
};

/// Seeded difference-of-Gaussians biphasic templates whose amplitude decays
/// with distance from each neuron's site and whose width and latency vary
/// per channel.
MuapBank generate_muaps(std::span<const NeuronSite> sites, const MuapOptions& options, std::uint64_t seed);

struct NoiseSpec {
    /// No noise when unset.
    std::optional<double> snr_db;
    /// Power the SNR is measured against; the clean mixture power when unset.
    std::optional<double> reference_power;
};

/// Convolutive mixture x(k) = Σ_l H(l) s(k−l) + n(k).
EmgRecording synthesize_emg(const SpikeTrainSet& spikes, const MuapBank& muaps, const NoiseSpec& noise,
                            std::uint64_t seed);

/// angle_d = gain_d × lowpass(excitation_d), using the decoder's first-order
/// smoother at the excitation sample rate.
KinematicsTrajectory generate_reference_kinematics(std::span<const ExcitationTrajectory> excitations,
                                                   std::span<const double> gains,
                                                   std::vector<std::string> labels = {},
                                                   double cutoff_hz = 1.0);

/// Concatenation of several trajectories sampled at the same rate.
ExcitationTrajectory concatenate(std::span<const ExcitationTrajectory> parts);

/// Synthetic mirror-movement protocol: one pool per DoF under a shared
/// electrode grid, repeated trials of staggered trapezoid cues.
struct SceneConfig {
    std::size_t channels = 64;
    std::size_t grid_cols = 8;
    std::size_t dofs = 1;
    std::vector<std::string> dof_labels = {"EF", "WP", "WF", "WE"};
    std::size_t neurons_per_dof = 10;
    double sample_rate = 2048.0;
    std::size_t muap_samples = 30;
    double snr_db = 20.0;
    double excitation_rate = 20.0;
    std::size_t trials = 3;
    CueShape cue{3.0, 3.0, 1.0, 2.0};
    double dof_stagger_s = 2.0;
    double max_threshold = 0.6;
    double min_rate = 8.0;
    double peak_rate = 30.0;
    FiringOptions firing;
    /// Drift coefficient applied to every neuron (per second).
    double amplitude_drift = 0.0;
    std::vector<double> kinematic_gains = {90.0, 60.0, 45.0, 45.0};

    double trial_duration_s() const;
    void validate() const;
};

struct Scene {
    EmgRecording emg;
    SpikeTrainSet truth;
    KinematicsTrajectory reference;
    std::vector<ExcitationTrajectory> excitations;
    std::vector<std::size_t> neuron_dof;
    double trial_duration_s = 0.0;
};

Scene build_scene(const SceneConfig& config, std::uint64_t seed);

} // namespace myodecode::sim
