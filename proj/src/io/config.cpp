#include <myodecode/error.hpp>
#include <myodecode/io.hpp>
#include <myodecode/random.hpp>

#include <set>

namespace myodecode::io {

using nlohmann::json;

namespace {

// Reads keys from one JSON object and remembers which were consumed so that
// leftovers can be reported as unknown.
class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) {
            throw InvalidArgument("config section '" + path_ + "' must be an object");
        }
    }

    template <typename T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        const auto it = j_.find(key);
        if (it == j_.end()) {
            return;
        }
        try {
            out = it->template get<T>();
        } catch (const json::exception& e) {
            throw InvalidArgument("config key '" + where(key) + "': " + e.what());
        }
    }

    const json* child(const char* key) {
        seen_.insert(key);
        const auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    void finish() const {
        for (const auto& item : j_.items()) {
            if (!seen_.count(item.key())) {
                throw InvalidArgument("unknown config key '" + where(item.key()) + "'");
            }
        }
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

std::string contrast_name(bss::Contrast c) { return c == bss::Contrast::Square ? "square" : "logcosh"; }
bss::Contrast parse_contrast(const std::string& s) {
    if (s == "square") {
        return bss::Contrast::Square;
    }
    if (s == "logcosh") {
        return bss::Contrast::LogCosh;
    }
    throw InvalidArgument("unknown contrast '" + s + "'");
}

std::string detector_name(bss::Detector d) { return d == bss::Detector::Adaptive ? "adaptive" : "kmeans"; }
bss::Detector parse_detector(const std::string& s) {
    if (s == "adaptive") {
        return bss::Detector::Adaptive;
    }
    if (s == "kmeans") {
        return bss::Detector::KMeans;
    }
    throw InvalidArgument("unknown detector '" + s + "'");
}

std::string selection_name(eval::Selection s) { return s == eval::Selection::Random ? "random" : "periodic"; }
eval::Selection parse_selection(const std::string& s) {
    if (s == "random") {
        return eval::Selection::Random;
    }
    if (s == "periodic") {
        return eval::Selection::Periodic;
    }
    throw InvalidArgument("unknown selection '" + s + "'");
}

void read_sim(const json& j, sim::SceneConfig& c) {
    Section s(j, "sim");
    s.get("channels", c.channels);
    s.get("grid_cols", c.grid_cols);
    s.get("dofs", c.dofs);
    s.get("dof_labels", c.dof_labels);
    s.get("neurons_per_dof", c.neurons_per_dof);
    s.get("sample_rate", c.sample_rate);
    s.get("muap_samples", c.muap_samples);
    s.get("snr_db", c.snr_db);
    s.get("excitation_rate", c.excitation_rate);
    s.get("trials", c.trials);
    s.get("ramp_up_s", c.cue.ramp_up_s);
    s.get("ramp_down_s", c.cue.ramp_down_s);
    s.get("peak", c.cue.peak);
    s.get("rest_s", c.cue.rest_s);
    s.get("dof_stagger_s", c.dof_stagger_s);
    s.get("max_threshold", c.max_threshold);
    s.get("min_rate", c.min_rate);
    s.get("peak_rate", c.peak_rate);
    s.get("isi_cv", c.firing.isi_cv);
    s.get("refractory_ms", c.firing.refractory_ms);
    s.get("amplitude_drift", c.amplitude_drift);
    s.get("kinematic_gains", c.kinematic_gains);
    s.finish();
}

json write_sim(const sim::SceneConfig& c) {
    return {
        {"channels", c.channels},
        {"grid_cols", c.grid_cols},
        {"dofs", c.dofs},
        {"dof_labels", c.dof_labels},
        {"neurons_per_dof", c.neurons_per_dof},
        {"sample_rate", c.sample_rate},
        {"muap_samples", c.muap_samples},
        {"snr_db", c.snr_db},
        {"excitation_rate", c.excitation_rate},
        {"trials", c.trials},
        {"ramp_up_s", c.cue.ramp_up_s},
        {"ramp_down_s", c.cue.ramp_down_s},
        {"peak", c.cue.peak},
        {"rest_s", c.cue.rest_s},
        {"dof_stagger_s", c.dof_stagger_s},
        {"max_threshold", c.max_threshold},
        {"min_rate", c.min_rate},
        {"peak_rate", c.peak_rate},
        {"isi_cv", c.firing.isi_cv},
        {"refractory_ms", c.firing.refractory_ms},
        {"amplitude_drift", c.amplitude_drift},
        {"kinematic_gains", c.kinematic_gains},
    };
}

void read_bss(const json& j, bss::DecomposeConfig& c) {
    Section s(j, "bss");
    std::string contrast = contrast_name(c.ica.contrast);
    std::string detector = detector_name(c.detector);
    s.get("extension_factor", c.extension_factor);
    s.get("eigen_floor", c.eigen_floor);
    s.get("max_sources", c.ica.max_sources);
    s.get("tolerance", c.ica.tolerance);
    s.get("max_iterations", c.ica.max_iterations);
    s.get("max_failures_in_row", c.ica.max_failures_in_row);
    s.get("contrast", contrast);
    s.get("detector", detector);
    s.get("refractory_ms", c.adaptive.refractory_ms);
    s.get("window_s", c.adaptive.window_s);
    s.get("rel_threshold", c.adaptive.rel_threshold);
    s.get("sil_threshold", c.sil_threshold);
    s.get("min_spikes", c.min_spikes);
    s.finish();
    c.ica.contrast = parse_contrast(contrast);
    c.detector = parse_detector(detector);
}

json write_bss(const bss::DecomposeConfig& c) {
    return {
        {"extension_factor", c.extension_factor},
        {"eigen_floor", c.eigen_floor},
        {"max_sources", c.ica.max_sources},
        {"tolerance", c.ica.tolerance},
        {"max_iterations", c.ica.max_iterations},
        {"max_failures_in_row", c.ica.max_failures_in_row},
        {"contrast", contrast_name(c.ica.contrast)},
        {"detector", detector_name(c.detector)},
        {"refractory_ms", c.adaptive.refractory_ms},
        {"window_s", c.adaptive.window_s},
        {"rel_threshold", c.adaptive.rel_threshold},
        {"sil_threshold", c.sil_threshold},
        {"min_spikes", c.min_spikes},
    };
}

void read_decode(const json& j, decode::DecodeConfig& c, decode::TrialLayout& layout) {
    Section s(j, "decode");
    s.get("bin_ms", c.bin_ms);
    s.get("cutoff_hz", c.cutoff_hz);
    s.get("components", c.components);
    s.get("varimax_tolerance", c.varimax_tolerance);
    s.get("varimax_max_sweeps", c.varimax_max_sweeps);
    s.get("min_correlation", c.min_correlation);
    s.get("trials", layout.trials);
    s.get("train", layout.train);
    s.get("test", layout.test);
    s.get("calibration", layout.calibration);
    s.finish();
}

json write_decode(const decode::DecodeConfig& c, const decode::TrialLayout& layout) {
    return {
        {"bin_ms", c.bin_ms},
        {"cutoff_hz", c.cutoff_hz},
        {"components", c.components},
        {"varimax_tolerance", c.varimax_tolerance},
        {"varimax_max_sweeps", c.varimax_max_sweeps},
        {"min_correlation", c.min_correlation},
        {"trials", layout.trials},
        {"train", layout.train},
        {"test", layout.test},
        {"calibration", layout.calibration},
    };
}

void read_eval(const json& j, EvalConfig& c) {
    Section s(j, "eval");
    s.get("runs", c.runs);
    s.get("sweep_sizes", c.sweep_sizes);
    s.get("match_tolerance_ms", c.match_tolerance_ms);
    s.get("match_max_lag_ms", c.match_max_lag_ms);
    s.get("threads", c.threads);
    if (const json* setups = s.child("mux_setups")) {
        if (!setups->is_array()) {
            throw InvalidArgument("config key 'eval.mux_setups' must be an array");
        }
        c.mux_setups.clear();
        for (std::size_t i = 0; i < setups->size(); ++i) {
            eval::MuxSetup m;
            std::string selection = selection_name(m.selection);
            Section ms((*setups)[i], "eval.mux_setups[" + std::to_string(i) + "]");
            ms.get("label", m.label);
            ms.get("scheduled_channels", m.scheduled_channels);
            ms.get("subset_size", m.subset_size);
            ms.get("block_ms", m.block_ms);
            ms.get("switchings", m.switchings);
            ms.get("selection", selection);
            ms.finish();
            m.selection = parse_selection(selection);
            c.mux_setups.push_back(m);
        }
    }
    s.finish();
}

json write_eval(const EvalConfig& c) {
    json setups = json::array();
    for (const auto& m : c.mux_setups) {
        setups.push_back({
            {"label", m.label},
            {"scheduled_channels", m.scheduled_channels},
            {"subset_size", m.subset_size},
            {"block_ms", m.block_ms},
            {"switchings", m.switchings},
            {"selection", selection_name(m.selection)},
        });
    }
    return {
        {"runs", c.runs},
        {"sweep_sizes", c.sweep_sizes},
        {"mux_setups", setups},
        {"match_tolerance_ms", c.match_tolerance_ms},
        {"match_max_lag_ms", c.match_max_lag_ms},
        {"threads", c.threads},
    };
}

} // namespace

bss::DecomposeConfig RunConfig::decompose_config() const {
    bss::DecomposeConfig c = bss;
    c.ica.seed = derive_seed(seed, {0x1ca});
    return c;
}

decode::TrialLayout RunConfig::resolved_layout() const {
    if (!layout.trials.empty()) {
        return layout;
    }
    decode::TrialLayout out;
    const double t = sim.trial_duration_s();
    for (std::size_t k = 0; k < sim.trials; ++k) {
        out.trials.emplace_back(static_cast<double>(k) * t, static_cast<double>(k + 1) * t);
    }
    for (std::size_t k = 0; k + 1 < sim.trials; ++k) {
        out.train.push_back(k);
    }
    if (sim.trials == 1) {
        out.train.push_back(0);
    } else if (sim.trials > 1) {
        out.test.push_back(sim.trials - 1);
    }
    out.calibration = 0;
    return out;
}

RunConfig config_from_json(const json& doc) {
    const json& j = doc.contains("manifest") && doc.contains("config") ? doc.at("config") : doc;
    RunConfig c;
    Section top(j, "");
    top.get("seed", c.seed);
    if (const json* s = top.child("sim")) {
        read_sim(*s, c.sim);
    }
    if (const json* s = top.child("bss")) {
        read_bss(*s, c.bss);
    }
    if (const json* s = top.child("decode")) {
        read_decode(*s, c.decode, c.layout);
    }
    if (const json* s = top.child("eval")) {
        read_eval(*s, c.eval);
    }
    top.finish();
    return c;
}

json config_to_json(const RunConfig& c) {
    return {
        {"seed", c.seed},
        {"sim", write_sim(c.sim)},
        {"bss", write_bss(c.bss)},
        {"decode", write_decode(c.decode, c.layout)},
        {"eval", write_eval(c.eval)},
    };
}

json read_json(const std::filesystem::path& path) {
    const std::string text = read_bytes(path);
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

RunConfig load_config(const std::filesystem::path& path) {
    try {
        return config_from_json(read_json(path));
    } catch (const InvalidArgument& e) {
        throw InvalidArgument(path.string() + ": " + e.what());
    }
}

namespace {

json matrix_json(const Matrix& m) {
    json rows = json::array();
    for (Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Index c = 0; c < m.cols(); ++c) {
            row.push_back(m(r, c));
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

Matrix matrix_from(const json& j, Index cols_if_empty = 0) {
    const auto rows = static_cast<Index>(j.size());
    const Index cols = rows > 0 ? static_cast<Index>(j[0].size()) : cols_if_empty;
    Matrix m(rows, cols);
    for (Index r = 0; r < rows; ++r) {
        const json& row = j[static_cast<std::size_t>(r)];
        if (static_cast<Index>(row.size()) != cols) {
            throw FormatError("ragged matrix in model file");
        }
        for (Index c = 0; c < cols; ++c) {
            m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
        }
    }
    return m;
}

json vector_json(const auto& v) {
    json a = json::array();
    for (Index i = 0; i < v.size(); ++i) {
        a.push_back(v(i));
    }
    return a;
}

} // namespace

json model_to_json(const decode::ProjectionModel& m) {
    json dofs = json::array();
    for (const auto& d : m.dofs) {
        dofs.push_back({
            {"label", d.label},
            {"component", d.component},
            {"sign", d.sign},
            {"gain", d.gain},
            {"offset", d.offset},
            {"correlation", d.correlation},
            {"assigned", d.assigned},
        });
    }
    return {
        {"format", "myodecode-model"},
        {"version", 1},
        {"column_labels", m.column_labels},
        {"column_means", vector_json(m.column_means)},
        {"loadings", matrix_json(m.loadings)},
        {"singular_values", vector_json(m.singular_values)},
        {"rotation", matrix_json(m.rotation)},
        {"rotated_loadings", matrix_json(m.rotated_loadings)},
        {"training_rows", m.training_rows},
        {"dofs", dofs},
        {"bin_ms", m.bin_ms},
        {"smoothing_coefficient", m.smoothing_coefficient},
        {"config_hash", m.config_hash},
    };
}

decode::ProjectionModel model_from_json(const json& j) {
    try {
        if (j.at("format").get<std::string>() != "myodecode-model" || j.at("version").get<int>() != 1) {
            throw FormatError("unsupported model document");
        }
        decode::ProjectionModel m;
        m.column_labels = j.at("column_labels").get<std::vector<std::string>>();
        const auto means = j.at("column_means").get<std::vector<double>>();
        m.column_means = Eigen::Map<const RowVector>(means.data(), static_cast<Index>(means.size()));
        const auto sv = j.at("singular_values").get<std::vector<double>>();
        m.singular_values = Eigen::Map<const Vector>(sv.data(), static_cast<Index>(sv.size()));
        const auto d = static_cast<Index>(sv.size());
        m.loadings = matrix_from(j.at("loadings"), d);
        m.rotation = matrix_from(j.at("rotation"), d);
        m.rotated_loadings = matrix_from(j.at("rotated_loadings"), d);
        m.training_rows = j.at("training_rows").get<Index>();
        for (const auto& a : j.at("dofs")) {
            decode::DofAssignment x;
            x.label = a.at("label").get<std::string>();
            x.component = a.at("component").get<Index>();
            x.sign = a.at("sign").get<int>();
            x.gain = a.at("gain").get<double>();
            x.offset = a.at("offset").get<double>();
            x.correlation = a.at("correlation").get<double>();
            x.assigned = a.at("assigned").get<bool>();
            m.dofs.push_back(x);
        }
        m.bin_ms = j.at("bin_ms").get<double>();
        m.smoothing_coefficient = j.at("smoothing_coefficient").get<double>();
        m.config_hash = j.at("config_hash").get<std::uint64_t>();
        const Index channels = m.column_means.size();
        if (m.loadings.rows() != channels || m.rotated_loadings.rows() != channels ||
            m.loadings.cols() != d || m.rotation.rows() != d || m.rotation.cols() != d ||
            (!m.column_labels.empty() && static_cast<Index>(m.column_labels.size()) != channels)) {
            throw FormatError("inconsistent model dimensions");
        }
        for (const auto& x : m.dofs) {
            if (x.component < 0 || x.component >= d) {
                throw FormatError("DoF component index out of range");
            }
        }
        return m;
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed model document: ") + e.what());
    }
}

void save_model(const std::filesystem::path& path, const decode::ProjectionModel& m) {
    write_text(path, model_to_json(m).dump(1) + "\n");
}

decode::ProjectionModel load_model(const std::filesystem::path& path) {
    try {
        return model_from_json(read_json(path));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

} // namespace myodecode::io
