#include <myodecode/bss.hpp>
#include <myodecode/error.hpp>
#include <myodecode/random.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace myodecode::bss {

IptSet separate(const EmgRecording& emg, const DecomposeConfig& config) {
    emg.validate();
    Matrix whitened;
    {
        ExtendedObservations ext = extend(emg, config.extension_factor);
        WhiteningModel model = fit_whitening(ext, config.eigen_floor);
        whitened = whiten(model, ext);
    }
    IcaOptions ica = config.ica;
    ica.max_sources = std::min(ica.max_sources, whitened.rows());
    return fixed_point_ica(whitened, ica);
}

Decomposition qualify(const IptSet& ipts, double sample_rate, SampleIndex sample_count, const DecomposeConfig& config) {
    Decomposition out;
    out.sources.sample_rate = sample_rate;
    out.sources.sample_count = sample_count;

    std::vector<double> row;
    for (Index q = 0; q < ipts.size(); ++q) {
        row.resize(static_cast<std::size_t>(ipts.sources.cols()));
        Eigen::Map<RowVector>(row.data(), ipts.sources.cols()) = ipts.sources.row(q);

        std::vector<SampleIndex> spikes;
        if (config.detector == Detector::Adaptive) {
            spikes = detect_spikes_adaptive(row, sample_rate, config.adaptive);
        } else {
            spikes = detect_spikes_kmeans(row, sample_rate, config.adaptive.refractory_ms,
                                          derive_seed(config.ica.seed, {0x6b6d, static_cast<std::uint64_t>(q)}));
        }

        SourceDiagnostic diag;
        diag.candidate = q;
        diag.spike_count = spikes.size();
        diag.sil = std::numeric_limits<double>::quiet_NaN();
        if (spikes.size() >= std::max<std::size_t>(1, config.min_spikes)) {
            try {
                diag.sil = silhouette(row, spikes);
            } catch (const UndefinedSil&) {
            }
        }
        diag.qualified = std::isfinite(diag.sil) && diag.sil > config.sil_threshold;
        if (diag.qualified) {
            out.sources.trains.push_back(std::move(spikes));
            out.sources.labels.push_back("must" + std::to_string(q));
            out.origin.push_back(q);
        }
        out.diagnostics.push_back(diag);
    }

    std::ostringstream report;
    report << ipts.size() << " ICA candidates (" << ipts.rejected_candidates << " did not converge), "
           << out.sources.size() << " qualified at SIL > " << config.sil_threshold;
    if (out.sources.size() == 0) {
        report << "; no source qualified";
    }
    out.report = report.str();
    return out;
}

Decomposition decompose(const EmgRecording& emg, const DecomposeConfig& config) {
    IptSet ipts = separate(emg, config);
    return qualify(ipts, emg.sample_rate, emg.length(), config);
}

} // namespace myodecode::bss
