#include <myodecode/error.hpp>
#include <myodecode/filter.hpp>
#include <myodecode/random.hpp>
#include <myodecode/sim.hpp>

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

namespace myodecode::sim {

void MotorNeuronPool::validate() const {
    if (neurons.empty()) {
        throw InvalidArgument("motor neuron pool is empty");
    }
    for (std::size_t j = 0; j < neurons.size(); ++j) {
        const auto& n = neurons[j];
        if (n.recruitment_threshold < 0.0 || n.recruitment_threshold >= 1.0) {
            throw InvalidArgument("recruitment threshold outside [0, 1)");
        }
        if (j > 0 && n.recruitment_threshold <= neurons[j - 1].recruitment_threshold) {
            throw InvalidArgument("recruitment thresholds must be strictly increasing");
        }
        if (!(n.min_rate > 0.0 && n.min_rate < n.peak_rate)) {
            throw InvalidArgument("firing rates must satisfy 0 < min_rate < peak_rate");
        }
    }
}

MotorNeuronPool make_pool(std::size_t count, double max_threshold, double min_rate, double peak_rate) {
    if (count == 0) {
        throw InvalidArgument("pool size must be positive");
    }
    if (!(max_threshold > 0.0 && max_threshold < 1.0)) {
        throw InvalidArgument("max recruitment threshold must lie in (0, 1)");
    }
    MotorNeuronPool pool;
    pool.neurons.reserve(count);
    for (std::size_t j = 0; j < count; ++j) {
        double thr = max_threshold * static_cast<double>(j + 1) / static_cast<double>(count);
        pool.neurons.push_back({thr, min_rate, peak_rate});
    }
    pool.validate();
    return pool;
}

double ExcitationTrajectory::at(double t) const {
    if (values.empty() || t < 0.0) {
        return 0.0;
    }
    double pos = t * sample_rate;
    auto i = static_cast<std::size_t>(pos);
    if (i >= values.size()) {
        return 0.0;
    }
    double frac = pos - static_cast<double>(i);
    double next = i + 1 < values.size() ? values[i + 1] : values[i];
    return values[i] * (1.0 - frac) + next * frac;
}

ExcitationTrajectory generate_cue(double ramp_up_s, double ramp_down_s, double peak, double sample_rate,
                                  double rest_s) {
    if (!(ramp_up_s > 0.0) || !(ramp_down_s > 0.0) || !(sample_rate > 0.0)) {
        throw InvalidArgument("cue durations and sample rate must be positive");
    }
    if (rest_s < 0.0) {
        throw InvalidArgument("cue rest duration must be non-negative");
    }
    if (peak < 0.0 || peak > 1.0) {
        throw InvalidArgument("cue peak must lie in [0, 1]");
    }
    const double t0 = rest_s;
    const double t1 = rest_s + ramp_up_s;
    const double t2 = t1 + ramp_down_s;
    const auto n = static_cast<std::size_t>(std::llround((2.0 * rest_s + ramp_up_s + ramp_down_s) * sample_rate));

    ExcitationTrajectory out;
    out.sample_rate = sample_rate;
    out.cue = {ramp_up_s, ramp_down_s, peak, rest_s};
    out.values.resize(n, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        double t = static_cast<double>(k) / sample_rate;
        double v = 0.0;
        if (t >= t0 && t < t1) {
            v = peak * (t - t0) / ramp_up_s;
        } else if (t >= t1 && t <= t2) {
            v = peak * (t2 - t) / ramp_down_s;
        }
        out.values[k] = std::clamp(v, 0.0, 1.0);
    }
    return out;
}

ExcitationTrajectory concatenate(std::span<const ExcitationTrajectory> parts) {
    if (parts.empty()) {
        throw InvalidArgument("nothing to concatenate");
    }
    ExcitationTrajectory out;
    out.sample_rate = parts.front().sample_rate;
    out.cue = parts.front().cue;
    for (const auto& p : parts) {
        if (p.sample_rate != out.sample_rate) {
            throw InvalidArgument("cannot concatenate trajectories with different sample rates");
        }
        out.values.insert(out.values.end(), p.values.begin(), p.values.end());
    }
    return out;
}

SpikeTrainSet generate_spike_trains(const MotorNeuronPool& pool, const ExcitationTrajectory& excitation,
                                    double emg_rate, std::uint64_t seed, const FiringOptions& options) {
    pool.validate();
    if (!(excitation.sample_rate > 0.0)) {
        throw InvalidArgument("excitation sample rate must be positive");
    }
    if (emg_rate < 2.0 * excitation.sample_rate) {
        throw InvalidArgument("EMG rate must be at least twice the excitation rate");
    }
    if (options.isi_cv < 0.0 || !(options.refractory_ms > 0.0)) {
        throw InvalidArgument("invalid firing options");
    }

    const auto n_samples = static_cast<SampleIndex>(std::llround(excitation.duration_s() * emg_rate));
    const auto refractory = static_cast<SampleIndex>(std::ceil(options.refractory_ms * emg_rate / 1000.0));

    std::vector<double> drive(static_cast<std::size_t>(n_samples));
    for (SampleIndex k = 0; k < n_samples; ++k) {
        drive[static_cast<std::size_t>(k)] = excitation.at(static_cast<double>(k) / emg_rate);
    }

    SpikeTrainSet out;
    out.sample_rate = emg_rate;
    out.sample_count = n_samples;
    out.trains.resize(pool.size());
    for (std::size_t j = 0; j < pool.size(); ++j) {
        out.labels.push_back("mu" + std::to_string(j));
    }

    for (std::size_t j = 0; j < pool.size(); ++j) {
        const auto& neuron = pool.neurons[j];
        std::mt19937_64 rng(derive_seed(seed, {j}));
        std::normal_distribution<double> normal(0.0, 1.0);
        auto draw_target = [&] { return std::max(0.25, 1.0 + options.isi_cv * normal(rng)); };

        auto& train = out.trains[j];
        bool active = false;
        double phase = 0.0;
        double target = draw_target();
        SampleIndex last = -refractory;
        const double span = 1.0 - neuron.recruitment_threshold;

        for (SampleIndex k = 0; k < n_samples; ++k) {
            double e = drive[static_cast<std::size_t>(k)];
            if (!(e > 0.0 && e >= neuron.recruitment_threshold)) {
                active = false;
                continue;
            }
            double rate = neuron.min_rate +
                          (neuron.peak_rate - neuron.min_rate) * std::min(1.0, (e - neuron.recruitment_threshold) / span);
            if (!active) {
                active = true;
                phase = 0.0;
                if (k - last >= refractory) {
                    train.push_back(k);
                    last = k;
                    target = draw_target();
                    continue;
                }
            }
            phase += rate / emg_rate;
            if (phase >= target && k - last >= refractory) {
                train.push_back(k);
                last = k;
                phase -= target;
                target = draw_target();
            }
        }
    }
    return out;
}

MuapBank::MuapBank(std::size_t neurons, std::size_t channels, std::size_t length)
    : neurons_(neurons), channels_(channels), length_(length), data_(neurons * channels * length, 0.0) {
    if (channels == 0 || length == 0) {
        throw InvalidArgument("MUAP bank needs at least one channel and one lag");
    }
}

double& MuapBank::at(std::size_t neuron, std::size_t channel, std::size_t lag) {
    return data_[(neuron * length_ + lag) * channels_ + channel];
}

double MuapBank::at(std::size_t neuron, std::size_t channel, std::size_t lag) const {
    return data_[(neuron * length_ + lag) * channels_ + channel];
}

std::span<const double> MuapBank::lag_slice(std::size_t neuron, std::size_t lag) const {
    return {data_.data() + (neuron * length_ + lag) * channels_, channels_};
}

double MuapBank::drift_scale(std::size_t neuron, double t) const {
    if (amplitude_drift.empty()) {
        return 1.0;
    }
    return std::max(0.0, 1.0 + amplitude_drift[neuron] * t);
}

MuapBank generate_muaps(std::span<const NeuronSite> sites, const MuapOptions& options, std::uint64_t seed) {
    if (options.length == 0 || options.grid_rows == 0 || options.grid_cols == 0) {
        throw InvalidArgument("MUAP options need a positive length and grid size");
    }
    const std::size_t channels = options.grid_rows * options.grid_cols;
    const auto L = static_cast<double>(options.length);
    MuapBank bank(sites.size(), channels, options.length);

    auto gauss = [](double x, double mu, double w) { return std::exp(-0.5 * (x - mu) * (x - mu) / (w * w)); };

    for (std::size_t j = 0; j < sites.size(); ++j) {
        const auto& site = sites[j];
        std::mt19937_64 rng(derive_seed(seed, {j}));
        std::uniform_real_distribution<double> u01(0.0, 1.0);
        auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };

        const double width = uniform(1.2, 2.5);
        const double latency = uniform(0.25, 0.35) * L;
        const double lobe_ratio = uniform(0.6, 0.9);
        const double lobe_delay = uniform(2.5, 4.5);

        for (std::size_t r = 0; r < options.grid_rows; ++r) {
            for (std::size_t c = 0; c < options.grid_cols; ++c) {
                const double dx = static_cast<double>(c) - site.x;
                const double dy = static_cast<double>(r) - site.y;
                const double dist = std::sqrt(dx * dx + dy * dy);
                const double amp = site.amplitude / std::pow(1.0 + (dist * dist) / (site.depth * site.depth), 1.5);
                const double w = width * (1.0 + 0.12 * dist + 0.1 * uniform(-1.0, 1.0));
                const double mu = std::clamp(latency + 0.6 * dx, 2.0, L - 2.0 * w - lobe_delay - 1.0);
                const std::size_t ch = r * options.grid_cols + c;
                for (std::size_t l = 0; l < options.length; ++l) {
                    const auto x = static_cast<double>(l);
                    bank.at(j, ch, l) = amp * (gauss(x, mu, w) - lobe_ratio * gauss(x, mu + lobe_delay, 1.4 * w));
                }
            }
        }
    }
    return bank;
}

EmgRecording synthesize_emg(const SpikeTrainSet& spikes, const MuapBank& muaps, const NoiseSpec& noise,
                            std::uint64_t seed) {
    if (muaps.neurons() != spikes.size()) {
        throw InvalidArgument("MUAP bank has " + std::to_string(muaps.neurons()) + " neurons but " +
                              std::to_string(spikes.size()) + " spike trains were given");
    }
    if (!(spikes.sample_rate > 0.0) || spikes.sample_count < 1) {
        throw InvalidArgument("spike trains need a positive sample rate and length");
    }
    const auto m = static_cast<Index>(muaps.channels());
    const Index n = spikes.sample_count;
    const auto L = static_cast<Index>(muaps.length());

    EmgRecording out;
    out.sample_rate = spikes.sample_rate;
    out.samples = Matrix::Zero(m, n);

    for (std::size_t j = 0; j < spikes.size(); ++j) {
        for (SampleIndex s : spikes.trains[j]) {
            if (s < 0 || s >= n) {
                throw InvalidArgument("spike index outside the recording");
            }
            const double scale = muaps.drift_scale(j, static_cast<double>(s) / spikes.sample_rate);
            for (Index l = 0; l < L && s + l < n; ++l) {
                auto slice = muaps.lag_slice(j, static_cast<std::size_t>(l));
                out.samples.col(s + l) += scale * Eigen::Map<const Vector>(slice.data(), m);
            }
        }
    }

    if (noise.snr_db) {
        const double ref_power = noise.reference_power ? *noise.reference_power : out.samples.squaredNorm() / static_cast<double>(m * n);
        if (ref_power < 0.0) {
            throw InvalidArgument("noise reference power must be non-negative");
        }
        const double sigma = std::sqrt(ref_power / std::pow(10.0, *noise.snr_db / 10.0));
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> normal(0.0, sigma);
        if (sigma > 0.0) {
            double* p = out.samples.data();
            for (Index k = 0; k < m * n; ++k) {
                p[k] += normal(rng);
            }
        }
    }
    return out;
}

KinematicsTrajectory generate_reference_kinematics(std::span<const ExcitationTrajectory> excitations,
                                                   std::span<const double> gains, std::vector<std::string> labels,
                                                   double cutoff_hz) {
    if (excitations.empty()) {
        throw InvalidArgument("need at least one excitation trajectory");
    }
    if (gains.size() != excitations.size()) {
        throw InvalidArgument("need one gain per excitation trajectory");
    }
    const double rate = excitations.front().sample_rate;
    const std::size_t len = excitations.front().values.size();
    for (const auto& e : excitations) {
        if (e.sample_rate != rate || e.values.size() != len) {
            throw InvalidArgument("excitation trajectories must share rate and length");
        }
    }
    if (labels.empty()) {
        for (std::size_t d = 0; d < excitations.size(); ++d) {
            labels.push_back("dof" + std::to_string(d));
        }
    } else if (labels.size() != excitations.size()) {
        throw InvalidArgument("need one label per excitation trajectory");
    }

    const double a = smoothing_coefficient(cutoff_hz, rate);
    KinematicsTrajectory out;
    out.sample_rate = rate;
    out.dof_labels = std::move(labels);
    out.angles.resize(static_cast<Index>(excitations.size()), static_cast<Index>(len));
    std::vector<double> buf;
    for (std::size_t d = 0; d < excitations.size(); ++d) {
        buf = excitations[d].values;
        first_order_lowpass(buf, a);
        for (std::size_t k = 0; k < len; ++k) {
            out.angles(static_cast<Index>(d), static_cast<Index>(k)) = gains[d] * buf[k];
        }
    }
    return out;
}

double SceneConfig::trial_duration_s() const {
    return 2.0 * cue.rest_s + cue.ramp_up_s + cue.ramp_down_s + static_cast<double>(dofs - 1) * dof_stagger_s;
}

void SceneConfig::validate() const {
    if (dofs == 0 || neurons_per_dof == 0 || trials == 0) {
        throw InvalidArgument("scene needs at least one DoF, neuron and trial");
    }
    if (grid_cols == 0 || channels == 0 || channels % grid_cols != 0) {
        throw InvalidArgument("channel count must be a positive multiple of the grid column count");
    }
    if (dof_labels.size() < dofs || kinematic_gains.size() < dofs) {
        throw InvalidArgument("scene needs a label and a kinematic gain for every DoF");
    }
    if (dof_stagger_s < 0.0) {
        throw InvalidArgument("DoF stagger must be non-negative");
    }
}

Scene build_scene(const SceneConfig& config, std::uint64_t seed) {
    config.validate();
    const std::size_t grid_rows = config.channels / config.grid_cols;
    const auto cols = static_cast<double>(config.grid_cols);
    const auto rows = static_cast<double>(grid_rows);

    Scene scene;
    scene.trial_duration_s = config.trial_duration_s();

    const auto stagger_samples = static_cast<std::size_t>(std::llround(config.dof_stagger_s * config.excitation_rate));
    const ExcitationTrajectory cue = generate_cue(config.cue.ramp_up_s, config.cue.ramp_down_s, config.cue.peak,
                                                  config.excitation_rate, config.cue.rest_s);

    std::vector<NeuronSite> sites;
    SpikeTrainSet truth;
    truth.sample_rate = config.sample_rate;

    for (std::size_t d = 0; d < config.dofs; ++d) {
        ExcitationTrajectory trial;
        trial.sample_rate = config.excitation_rate;
        trial.cue = cue.cue;
        trial.values.assign(d * stagger_samples, 0.0);
        trial.values.insert(trial.values.end(), cue.values.begin(), cue.values.end());
        trial.values.resize(trial.values.size() + (config.dofs - 1 - d) * stagger_samples, 0.0);
        std::vector<ExcitationTrajectory> trials(config.trials, trial);
        scene.excitations.push_back(concatenate(trials));

        const MotorNeuronPool pool =
            make_pool(config.neurons_per_dof, config.max_threshold, config.min_rate, config.peak_rate);
        SpikeTrainSet pool_spikes = generate_spike_trains(pool, scene.excitations.back(), config.sample_rate,
                                                          derive_seed(seed, {2, d}), config.firing);
        truth.sample_count = pool_spikes.sample_count;

        std::mt19937_64 rng(derive_seed(seed, {1, d}));
        std::uniform_real_distribution<double> u01(0.0, 1.0);
        const double territory = cols / static_cast<double>(config.dofs);
        const double cx = (static_cast<double>(d) + 0.5) * territory - 0.5;
        const double cy = (rows - 1.0) / 2.0;
        for (std::size_t j = 0; j < pool.size(); ++j) {
            NeuronSite site;
            site.x = cx + (u01(rng) - 0.5) * 0.9 * territory;
            site.y = cy + (u01(rng) - 0.5) * 0.8 * rows;
            site.depth = 0.8 + 1.7 * u01(rng);
            site.amplitude = 1.0 + 2.0 * pool.neurons[j].recruitment_threshold;
            sites.push_back(site);
            truth.trains.push_back(std::move(pool_spikes.trains[j]));
            truth.labels.push_back(config.dof_labels[d] + "_mu" + std::to_string(j));
            scene.neuron_dof.push_back(d);
        }
    }

    MuapBank muaps = generate_muaps(sites, {config.muap_samples, grid_rows, config.grid_cols}, derive_seed(seed, {3}));
    if (config.amplitude_drift != 0.0) {
        muaps.amplitude_drift.assign(sites.size(), config.amplitude_drift);
    }
    scene.emg = synthesize_emg(truth, muaps, {config.snr_db, std::nullopt}, derive_seed(seed, {4}));
    scene.truth = std::move(truth);

    std::vector<double> gains(config.kinematic_gains.begin(), config.kinematic_gains.begin() + static_cast<long>(config.dofs));
    std::vector<std::string> labels(config.dof_labels.begin(), config.dof_labels.begin() + static_cast<long>(config.dofs));
    scene.reference = generate_reference_kinematics(scene.excitations, gains, labels);
    return scene;
}

} // namespace myodecode::sim
