#pragma once

#include <myodecode/types.hpp>

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace myodecode::bss {

/// Channels stacked with their delayed copies. Row i·R + δ holds channel i
/// delayed by δ samples (zero padded).
struct ExtendedObservations {
    Matrix data;
    int extension_factor = 1;
    std::vector<std::pair<int, int>> channel_origin;  // row -> (channel, delay)
};

ExtendedObservations extend(const EmgRecording& emg, int extension_factor);

struct WhiteningModel {
    Matrix whitening;     // U · D^(−1/2) · Uᵀ with D floored
    Matrix eigenvectors;  // U, columns ascending by eigenvalue
    Vector eigenvalues;   // raw covariance eigenvalues
    Vector mean;          // per-row training mean
    double regularization_floor = 1e-8;
    Index clamped_directions = 0;
};

/// Eigendecomposition of the sample covariance (N−1 normalisation) of the
/// mean-removed rows. Eigenvalues below floor·λmax are raised to it.
WhiteningModel fit_whitening(const Matrix& observations, double floor = 1e-8);
inline WhiteningModel fit_whitening(const ExtendedObservations& extended, double floor = 1e-8) {
    return fit_whitening(extended.data, floor);
}

/// W̄ · (x − mean).
Matrix whiten(const WhiteningModel& model, const Matrix& observations);
inline Matrix whiten(const WhiteningModel& model, const ExtendedObservations& extended) {
    return whiten(model, extended.data);
}

enum class Contrast { Square, LogCosh };

struct IcaOptions {
    Index max_sources = 60;
    double tolerance = 1e-4;
    int max_iterations = 100;
    std::uint64_t seed = 1;
    Contrast contrast = Contrast::Square;
    /// Extraction stops after this many consecutive non-converging
    /// candidates; 0 disables the early stop.
    int max_failures_in_row = 10;
};

/// Innervation pulse trains and the unit separation vectors producing them.
struct IptSet {
    Matrix sources;     // q × samples
    Matrix separation;  // q × whitened dimension
    std::vector<int> iterations;
    Index rejected_candidates = 0;

    Index size() const { return sources.rows(); }
};

/// Deflationary fixed-point ICA with Gram–Schmidt orthogonalisation against
/// the vectors already accepted. Candidates that do not converge are skipped.
IptSet fixed_point_ica(const Matrix& whitened, const IcaOptions& options);

struct AdaptiveOptions {
    double refractory_ms = 10.0;
    double window_s = 1.0;
    double rel_threshold = 0.5;
};

/// Strict local maxima of the squared series.
std::vector<SampleIndex> squared_peaks(std::span<const double> ipt);

/// Locally adaptive detector. A peak of the squared IPT is a spike when it
/// exceeds rel_threshold times the mean of the spikes accepted in the
/// trailing window. When the window holds no spike the last reference is
/// kept; the initial reference is the upper centroid of a two-class split
/// of all peaks.
std::vector<SampleIndex> detect_spikes_adaptive(std::span<const double> ipt, double sample_rate,
                                                const AdaptiveOptions& options = {});

/// Fixed-threshold baseline: 2-means on squared peak amplitudes, upper class
/// kept. Empty when fewer than two distinct peak values exist.
std::vector<SampleIndex> detect_spikes_kmeans(std::span<const double> ipt, double sample_rate, double refractory_ms,
                                              std::uint64_t seed);

/// Two-cluster silhouette on squared peak amplitudes:
/// (between − within) / max(within, between), with the sums taken over
/// absolute point-to-centroid distances.
double silhouette(std::span<const double> ipt, std::span<const SampleIndex> spikes);

/// Centroids of a 1-D two-class split, Lloyd iterations from `init`.
struct TwoMeans {
    double low = 0.0;
    double high = 0.0;
    double boundary() const { return 0.5 * (low + high); }
};
TwoMeans two_means(std::span<const double> values, double init_low, double init_high, int max_iterations = 100);

enum class Detector { Adaptive, KMeans };

struct DecomposeConfig {
    int extension_factor = 5;
    double eigen_floor = 1e-8;
    IcaOptions ica;
    Detector detector = Detector::Adaptive;
    AdaptiveOptions adaptive;
    double sil_threshold = 0.8;
    /// Sources with fewer spikes are never qualified.
    std::size_t min_spikes = 2;
};

struct SourceDiagnostic {
    Index candidate = 0;
    double sil = 0.0;  // NaN when undefined
    std::size_t spike_count = 0;
    bool qualified = false;
};

struct Decomposition {
    SpikeTrainSet sources;  // qualified sources only
    std::vector<SourceDiagnostic> diagnostics;
    std::vector<Index> origin;  // IptSet row of each qualified source
    std::string report;
};

/// Spike detection, silhouette and qualification applied to an IptSet.
Decomposition qualify(const IptSet& ipts, double sample_rate, SampleIndex sample_count, const DecomposeConfig& config);

/// Extension, whitening, ICA.
IptSet separate(const EmgRecording& emg, const DecomposeConfig& config);

/// separate() followed by qualify().
Decomposition decompose(const EmgRecording& emg, const DecomposeConfig& config);

std::vector<SampleIndex> enforce_refractory(std::span<const double> squared, std::vector<SampleIndex> candidates,
                                            SampleIndex refractory);

} // namespace myodecode::bss
