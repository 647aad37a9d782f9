#include <myodecode/bss.hpp>
#include <myodecode/decode.hpp>
#include <myodecode/error.hpp>
#include <myodecode/eval.hpp>
#include <myodecode/filter.hpp>
#include <myodecode/io.hpp>
#include <myodecode/sim.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <charconv>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace myodecode;

namespace {

struct Globals {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir = ".";
    std::string format = "bin";
};

// Outputs are staged in memory and written only once everything succeeded.
struct Outputs {
    std::vector<std::pair<std::string, std::string>> files;

    void add(std::string name, std::string content) { files.emplace_back(std::move(name), std::move(content)); }
};

std::string num(double v) {
    if (std::isnan(v)) {
        return "nan";
    }
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return {buf, res.ptr};
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

io::RunConfig resolve(const Globals& g) {
    io::RunConfig cfg = g.config_path.empty() ? io::RunConfig{} : io::load_config(g.config_path);
    if (g.seed) {
        cfg.seed = *g.seed;
    }
    cfg.layout = cfg.resolved_layout();
    return cfg;
}

void commit(const Globals& g, const std::string& command, const io::RunConfig& cfg,
            const std::vector<std::string>& inputs, Outputs outputs) {
    const fs::path dir(g.out_dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw IoError("cannot create output directory '" + dir.string() + "': " + ec.message());
    }
    json manifest = {
        {"manifest", {{"command", command}, {"version", 1}}},
        {"seed", cfg.seed},
        {"format", g.format},
        {"inputs", inputs},
        {"config", io::config_to_json(cfg)},
    };
    json names = json::array();
    for (const auto& f : outputs.files) {
        names.push_back(f.first);
    }
    manifest["outputs"] = names;
    outputs.add("manifest.json", manifest.dump(2) + "\n");
    for (const auto& [name, content] : outputs.files) {
        io::write_text(dir / name, content);
    }
}

std::string summary_csv(const eval::SweepReport& r) {
    std::string out = "label,size,runs,split,mean,variance,median,p25,p75\n";
    for (const auto& e : r.entries) {
        for (const auto& [split, s] : {std::pair{"train", e.train}, std::pair{"test", e.test}}) {
            out += e.label + ',' + std::to_string(e.size) + ',' + std::to_string(e.test_r2.size()) + ',' + split + ',' +
                   num(s.mean) + ',' + num(s.variance) + ',' + num(s.median) + ',' + num(s.p25) + ',' + num(s.p75) +
                   '\n';
        }
    }
    return out;
}

std::string runs_csv(const eval::SweepReport& r) {
    std::string out = "label,size,run,train_r2,test_r2\n";
    for (const auto& e : r.entries) {
        for (std::size_t k = 0; k < e.test_r2.size(); ++k) {
            out += e.label + ',' + std::to_string(e.size) + ',' + std::to_string(k) + ',' + num(e.train_r2[k]) + ',' +
                   num(e.test_r2[k]) + '\n';
        }
    }
    return out;
}

json report_json(const eval::SweepReport& r) {
    json entries = json::array();
    auto stats = [](const eval::SummaryStats& s) {
        return json{{"mean", number_or_null(s.mean)},     {"variance", number_or_null(s.variance)},
                    {"median", number_or_null(s.median)}, {"p25", number_or_null(s.p25)},
                    {"p75", number_or_null(s.p75)}};
    };
    for (const auto& e : r.entries) {
        entries.push_back({{"label", e.label},
                           {"size", e.size},
                           {"train_r2", e.train_r2},
                           {"test_r2", e.test_r2},
                           {"train", stats(e.train)},
                           {"test", stats(e.test)}});
    }
    return {{"seed", r.seed}, {"run_count", r.run_count}, {"warnings", r.warnings}, {"entries", entries}};
}

std::string raster_csv(const SpikeTrainSet& s) {
    std::string out = "source,label,sample,time_s\n";
    for (std::size_t c = 0; c < s.size(); ++c) {
        const std::string label = c < s.labels.size() ? s.labels[c] : source_label(c);
        for (SampleIndex t : s.trains[c]) {
            out += std::to_string(c) + ',' + label + ',' + std::to_string(t) + ',' +
                   num(static_cast<double>(t) / s.sample_rate) + '\n';
        }
    }
    return out;
}

int run_simulate(const Globals& g) {
    const io::RunConfig cfg = resolve(g);
    const io::Format format = io::parse_format(g.format);
    const sim::Scene scene = sim::build_scene(cfg.sim, cfg.seed);

    Outputs out;
    out.add("emg" + io::matrix_extension(format), io::encode_matrix(io::to_matrix_file(scene.emg), format));
    out.add("truth" + io::spike_extension(format), io::encode_spikes(scene.truth, format));
    out.add("reference" + io::matrix_extension(format),
            io::encode_matrix(io::to_matrix_file(scene.reference), format));
    commit(g, "simulate", cfg, {}, std::move(out));
    std::cerr << "simulated " << scene.emg.channels() << " channels x " << scene.emg.length() << " samples, "
              << scene.truth.size() << " neurons, " << scene.truth.total_spikes() << " spikes\n";
    return 0;
}

int run_decompose(const Globals& g, const std::string& emg_path, const std::string& detector) {
    io::RunConfig cfg = resolve(g);
    if (!detector.empty()) {
        cfg.bss.detector = detector == "kmeans" ? bss::Detector::KMeans : bss::Detector::Adaptive;
    }
    const io::Format format = io::parse_format(g.format);
    const EmgRecording emg = io::to_emg(io::read_matrix(emg_path));
    const bss::Decomposition dec = bss::decompose(emg, cfg.decompose_config());

    std::string diag = "candidate,sil,spike_count,qualified\n";
    for (const auto& d : dec.diagnostics) {
        diag += std::to_string(d.candidate) + ',' + num(d.sil) + ',' + std::to_string(d.spike_count) + ',' +
                (d.qualified ? "1" : "0") + '\n';
    }
    Outputs out;
    out.add("musts" + io::spike_extension(format), io::encode_spikes(dec.sources, format));
    out.add("diagnostics.csv", diag);
    commit(g, "decompose", cfg, {emg_path}, std::move(out));
    std::cerr << dec.report << "\n";
    return 0;
}

int run_decode(const Globals& g, const std::string& spikes_path, const std::string& ref_path,
               const std::string& model_path) {
    const io::RunConfig cfg = resolve(g);
    const SpikeTrainSet musts = io::read_spikes(spikes_path);
    const KinematicsTrajectory reference = io::to_kinematics(io::read_matrix(ref_path));
    const eval::BinnedScene scene = eval::bin_scene(musts, reference, cfg.decode.bin_ms);
    const decode::BinnedActivity smoothed = decode::smooth(scene.counts, cfg.decode.cutoff_hz);

    decode::ProjectionModel model;
    if (model_path.empty()) {
        model = decode::fit_decoder(smoothed, scene.reference, cfg.layout, cfg.decode, true).model;
    } else {
        model = io::load_model(model_path);
        if (model.bin_ms != cfg.decode.bin_ms ||
            model.smoothing_coefficient != smoothing_coefficient(cfg.decode.cutoff_hz, scene.counts.bin_rate())) {
            throw InvalidArgument("model was fitted with a different bin size or smoothing cutoff");
        }
    }
    const KinematicsTrajectory est = decode::project(model, smoothed, scene.reference.sample_rate);

    auto score = [&](const std::vector<std::size_t>& trials) {
        const auto idx = cfg.layout.bin_indices(trials, scene.counts.bin_ms, scene.counts.bins());
        if (idx.empty()) {
            return std::numeric_limits<double>::quiet_NaN();
        }
        return eval::multivariate_r2({decode::take_cols(est.angles, idx), est.dof_labels, est.sample_rate},
                                     {decode::take_cols(scene.reference.angles, idx), est.dof_labels,
                                      est.sample_rate});
    };
    const double train_r2 = score(cfg.layout.train);
    const double test_r2 = score(cfg.layout.test);

    std::vector<int> trial_of(static_cast<std::size_t>(scene.counts.bins()), -1);
    for (std::size_t k = 0; k < cfg.layout.trials.size(); ++k) {
        const auto [b, e] = cfg.layout.bins(k, scene.counts.bin_ms, scene.counts.bins());
        for (Index i = b; i < e; ++i) {
            trial_of[static_cast<std::size_t>(i)] = static_cast<int>(k);
        }
    }
    std::string csv = "time_s,trial";
    for (const auto& l : est.dof_labels) {
        csv += ",est_" + l;
    }
    for (const auto& l : est.dof_labels) {
        csv += ",ref_" + l;
    }
    csv += '\n';
    for (Index t = 0; t < est.length(); ++t) {
        csv += num(static_cast<double>(t) / est.sample_rate) + ',' + std::to_string(trial_of[static_cast<std::size_t>(t)]);
        for (Index d = 0; d < est.dofs(); ++d) {
            csv += ',' + num(est.angles(d, t));
        }
        for (Index d = 0; d < est.dofs(); ++d) {
            csv += ',' + num(scene.reference.angles(d, t));
        }
        csv += '\n';
    }
    json summary = {{"train_r2", number_or_null(train_r2)},
                    {"test_r2", number_or_null(test_r2)},
                    {"channels", musts.size()},
                    {"components", model.components()}};

    Outputs out;
    if (model_path.empty()) {
        out.add("model.json", io::model_to_json(model).dump(1) + "\n");
    }
    out.add("estimates.csv", csv);
    out.add("r2.json", summary.dump(2) + "\n");
    std::vector<std::string> inputs{spikes_path, ref_path};
    if (!model_path.empty()) {
        inputs.push_back(model_path);
    }
    commit(g, "decode", cfg, inputs, std::move(out));
    std::cout << "train R2 " << num(train_r2) << "  test R2 " << num(test_r2) << "\n";
    return 0;
}

eval::StudyOptions study_options(const io::RunConfig& cfg) {
    eval::StudyOptions o;
    o.runs = cfg.eval.runs;
    o.seed = cfg.seed;
    o.decode = cfg.decode;
    o.layout = cfg.layout;
    o.threads = cfg.eval.threads;
    return o;
}

int run_sweep(const Globals& g, const std::string& spikes_path, const std::string& ref_path,
              std::optional<std::size_t> runs) {
    io::RunConfig cfg = resolve(g);
    if (runs) {
        cfg.eval.runs = *runs;
    }
    const SpikeTrainSet musts = io::read_spikes(spikes_path);
    const KinematicsTrajectory reference = io::to_kinematics(io::read_matrix(ref_path));
    const eval::SweepReport r = eval::reduced_set_sweep(musts, reference, cfg.eval.sweep_sizes, study_options(cfg));
    for (const auto& w : r.warnings) {
        std::cerr << "warning: " << w << "\n";
    }
    Outputs out;
    out.add("sweep.csv", runs_csv(r));
    out.add("sweep_summary.csv", summary_csv(r));
    out.add("sweep.json", report_json(r).dump(2) + "\n");
    commit(g, "eval sweep", cfg, {spikes_path, ref_path}, std::move(out));
    std::cout << summary_csv(r);
    return 0;
}

int run_mux(const Globals& g, const std::string& spikes_path, const std::string& ref_path,
            std::optional<std::size_t> runs) {
    io::RunConfig cfg = resolve(g);
    if (runs) {
        cfg.eval.runs = *runs;
    }
    const SpikeTrainSet musts = io::read_spikes(spikes_path);
    const KinematicsTrajectory reference = io::to_kinematics(io::read_matrix(ref_path));
    const eval::SweepReport r = eval::mux_study(musts, reference, cfg.eval.mux_setups, study_options(cfg));
    for (const auto& w : r.warnings) {
        std::cerr << "warning: " << w << "\n";
    }
    Outputs out;
    out.add("mux.csv", runs_csv(r));
    out.add("mux_summary.csv", summary_csv(r));
    out.add("mux.json", report_json(r).dump(2) + "\n");
    commit(g, "eval mux", cfg, {spikes_path, ref_path}, std::move(out));
    std::cout << summary_csv(r);
    return 0;
}

int run_thresholds(const Globals& g, const std::string& emg_path, const std::string& truth_path,
                   const std::string& ref_path) {
    const io::RunConfig cfg = resolve(g);
    const EmgRecording emg = io::to_emg(io::read_matrix(emg_path));
    const SpikeTrainSet truth = io::read_spikes(truth_path);
    const KinematicsTrajectory reference = io::to_kinematics(io::read_matrix(ref_path));

    eval::ComparisonOptions options;
    options.decompose = cfg.decompose_config();
    options.decode = cfg.decode;
    options.layout = cfg.layout;
    options.match_tolerance_ms = cfg.eval.match_tolerance_ms;
    options.match_max_lag_ms = cfg.eval.match_max_lag_ms;
    const eval::ThresholdComparison cmp = eval::thresholding_comparison(emg, truth, reference, options);

    std::string csv = "detector,sources,spikes,recall,train_r2,test_r2\n";
    json detectors = json::array();
    for (const auto* o : {&cmp.adaptive, &cmp.kmeans}) {
        const auto& s = o->decomposition.sources;
        csv += o->detector + ',' + std::to_string(s.size()) + ',' + std::to_string(s.total_spikes()) + ',' +
               num(o->recall) + ',' + num(o->decoded ? o->score.train_r2 : NAN) + ',' +
               num(o->decoded ? o->score.test_r2 : NAN) + '\n';
        json matches = json::array();
        for (const auto& m : o->matches) {
            matches.push_back({{"truth", m.truth},
                               {"source", m.source},
                               {"lag", m.lag},
                               {"matched", m.matched},
                               {"missed", m.missed},
                               {"false_positives", m.false_positives},
                               {"rate_of_agreement", m.rate_of_agreement}});
        }
        detectors.push_back({{"detector", o->detector},
                             {"sources", s.size()},
                             {"spikes", s.total_spikes()},
                             {"recall", o->recall},
                             {"decoded", o->decoded},
                             {"error", o->error},
                             {"train_r2", number_or_null(o->decoded ? o->score.train_r2 : NAN)},
                             {"test_r2", number_or_null(o->decoded ? o->score.test_r2 : NAN)},
                             {"matches", matches}});
    }
    json summary = {{"detectors", detectors},
                    {"test_improvement_pct", number_or_null(cmp.test_improvement_pct)},
                    {"train_improvement_pct", number_or_null(cmp.train_improvement_pct)}};

    Outputs out;
    out.add("thresholds.csv", csv);
    out.add("thresholds.json", summary.dump(2) + "\n");
    out.add("raster_truth.csv", raster_csv(truth));
    out.add("raster_adaptive.csv", raster_csv(cmp.adaptive.decomposition.sources));
    out.add("raster_kmeans.csv", raster_csv(cmp.kmeans.decomposition.sources));
    commit(g, "eval thresholds", cfg, {emg_path, truth_path, ref_path}, std::move(out));
    std::cout << csv << "test R2 improvement " << num(cmp.test_improvement_pct) << " %\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Motor-unit decomposition and kinematics decoding"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config_path, "Run configuration (JSON) or a previous manifest");
    app.add_option("--seed", g.seed, "Master seed, overrides the configuration");
    app.add_option("--out", g.out_dir, "Output directory")->capture_default_str();
    app.add_option("--format", g.format, "Output format")->check(CLI::IsMember({"bin", "csv"}))->capture_default_str();
    app.fallthrough();

    auto* simulate = app.add_subcommand("simulate", "Synthesize EMG, ground-truth spikes and reference kinematics");

    std::string emg_path;
    std::string detector;
    auto* decompose = app.add_subcommand("decompose", "Decompose EMG into motor unit spike trains");
    decompose->add_option("--emg", emg_path, "EMG matrix file")->required();
    decompose->add_option("--detector", detector, "Spike detector")->check(CLI::IsMember({"adaptive", "kmeans"}));

    std::string spikes_path;
    std::string ref_path;
    std::string model_path;
    auto* dec = app.add_subcommand("decode", "Fit or apply the projection decoder");
    dec->add_option("--spikes", spikes_path, "Spike train file")->required();
    dec->add_option("--reference", ref_path, "Reference kinematics matrix file")->required();
    dec->add_option("--model", model_path, "Apply a saved model instead of fitting");

    auto* ev = app.add_subcommand("eval", "Robustness studies");
    ev->require_subcommand(1);
    std::optional<std::size_t> runs;
    auto* sweep = ev->add_subcommand("sweep", "Reduced channel-set sweep");
    sweep->add_option("--spikes", spikes_path)->required();
    sweep->add_option("--reference", ref_path)->required();
    sweep->add_option("--runs", runs, "Runs per size, overrides the configuration");
    auto* mux = ev->add_subcommand("mux", "Time-multiplexed acquisition study");
    mux->add_option("--spikes", spikes_path)->required();
    mux->add_option("--reference", ref_path)->required();
    mux->add_option("--runs", runs, "Runs per setup, overrides the configuration");
    std::string truth_path;
    auto* thresholds = ev->add_subcommand("thresholds", "Adaptive versus K-means spike detection");
    thresholds->add_option("--emg", emg_path)->required();
    thresholds->add_option("--truth", truth_path, "Ground-truth spike file")->required();
    thresholds->add_option("--reference", ref_path)->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (simulate->parsed()) {
            return run_simulate(g);
        }
        if (decompose->parsed()) {
            return run_decompose(g, emg_path, detector);
        }
        if (dec->parsed()) {
            return run_decode(g, spikes_path, ref_path, model_path);
        }
        if (sweep->parsed()) {
            return run_sweep(g, spikes_path, ref_path, runs);
        }
        if (mux->parsed()) {
            return run_mux(g, spikes_path, ref_path, runs);
        }
        if (thresholds->parsed()) {
            return run_thresholds(g, emg_path, truth_path, ref_path);
        }
    } catch (const UnassignedDof& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return 4;
    } catch (const IoError& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return 5;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
