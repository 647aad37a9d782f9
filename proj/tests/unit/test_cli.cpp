#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <myodecode/io.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#ifndef MYODECODE_CLI
#error "MYODECODE_CLI must name the command-line binary"
#endif

using namespace myodecode;
namespace fs = std::filesystem;

namespace {

const fs::path root = fs::temp_directory_path() / "myodecode_cli_tests";

int run(const std::string& args) {
    const std::string cmd = std::string(MYODECODE_CLI) + " " + args + " > " + (root / "last.log").string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) { return io::read_bytes(p); }

std::size_t line_count(const fs::path& p) {
    std::ifstream in(p);
    std::size_t n = 0;
    std::string line;
    while (std::getline(in, line)) {
        ++n;
    }
    return n;
}

std::string first_line(const fs::path& p) {
    std::ifstream in(p);
    std::string line;
    std::getline(in, line);
    return line;
}

std::size_t file_count(const fs::path& dir) {
    if (!fs::exists(dir)) {
        return 0;
    }
    return static_cast<std::size_t>(std::distance(fs::directory_iterator(dir), fs::directory_iterator()));
}

// A two-DoF scene small enough to decompose in a few seconds.
const char* small_config = R"({
  "seed": 3,
  "sim": {"channels": 16, "grid_cols": 4, "dofs": 2, "neurons_per_dof": 5,
          "ramp_up_s": 1.5, "ramp_down_s": 1.5, "rest_s": 0.5, "dof_stagger_s": 1.0},
  "bss": {"max_sources": 16},
  "decode": {"components": 6},
  "eval": {"runs": 2, "sweep_sizes": [2, 4, 1000],
           "mux_setups": [{"label": "mux", "scheduled_channels": 0, "subset_size": 2, "block_ms": 100,
                           "switchings": 5, "selection": "random"},
                          {"label": "all", "scheduled_channels": 0, "subset_size": 0, "block_ms": 50,
                           "switchings": 1, "selection": "random"}]}
})";

struct Fixture {
    fs::path config = root / "small.json";
    fs::path sim = root / "sim";
    fs::path dec = root / "dec";

    Fixture() {
        static bool ready = false;
        if (ready) {
            return;
        }
        fs::remove_all(root);
        fs::create_directories(root);
        io::write_text(config, small_config);
        REQUIRE(run("simulate --config " + config.string() + " --out " + sim.string()) == 0);
        REQUIRE(run("decompose --config " + config.string() + " --emg " + (sim / "emg.mdm").string() + " --out " +
                    dec.string()) == 0);
        ready = true;
    }
};

} // namespace

TEST_CASE_FIXTURE(Fixture, "simulate writes the three artifacts and a manifest") {
    for (const char* f : {"emg.mdm", "truth.msp", "reference.mdm", "manifest.json"}) {
        CHECK(fs::exists(sim / f));
    }
    const auto cfg = io::load_config(config);
    const auto emg = io::read_matrix(sim / "emg.mdm");
    CHECK(emg.data.rows() == 16);
    CHECK(emg.data.cols() ==
          static_cast<Index>(std::llround(2048.0 * cfg.sim.trial_duration_s() * static_cast<double>(cfg.sim.trials))));
    const auto manifest = io::read_json(sim / "manifest.json");
    CHECK(manifest["seed"] == 3);
    CHECK(manifest["config"]["sim"]["channels"] == 16);
}

TEST_CASE_FIXTURE(Fixture, "simulate is byte-identical for a fixed seed and reruns from its manifest") {
    const fs::path again = root / "sim_again";
    const fs::path from_manifest = root / "sim_manifest";
    REQUIRE(run("simulate --config " + config.string() + " --out " + again.string()) == 0);
    REQUIRE(run("simulate --config " + (sim / "manifest.json").string() + " --out " + from_manifest.string()) == 0);
    for (const char* f : {"emg.mdm", "truth.msp", "reference.mdm"}) {
        CHECK(slurp(sim / f) == slurp(again / f));
        CHECK(slurp(sim / f) == slurp(from_manifest / f));
    }
    const fs::path other = root / "sim_seed";
    REQUIRE(run("simulate --config " + config.string() + " --seed 4 --out " + other.string()) == 0);
    CHECK(slurp(sim / "emg.mdm") != slurp(other / "emg.mdm"));
    CHECK(io::read_json(other / "manifest.json")["seed"] == 4);
}

TEST_CASE("simulate with the default configuration: 64 channels at 2048 Hz") {
    const fs::path out = root / "sim_default";
    fs::create_directories(root);
    REQUIRE(run("simulate --out " + out.string()) == 0);
    const auto emg = io::read_matrix(out / "emg.mdm");
    const io::RunConfig d;
    CHECK(emg.data.rows() == 64);
    CHECK(emg.data.cols() ==
          static_cast<Index>(std::llround(2048.0 * d.sim.trial_duration_s() * static_cast<double>(d.sim.trials))));
    fs::remove_all(out);
}

TEST_CASE_FIXTURE(Fixture, "a zero-peak cue gives an empty ground-truth file; csv output") {
    const fs::path cfg = root / "flat.json";
    io::write_text(cfg, R"({"sim": {"channels": 8, "grid_cols": 4, "peak": 0.0, "trials": 1}})");
    const fs::path out = root / "flat";
    REQUIRE(run("simulate --format csv --config " + cfg.string() + " --out " + out.string()) == 0);
    const auto truth = io::read_spikes(out / "truth.csv");
    CHECK(truth.total_spikes() == 0);
    CHECK(truth.size() == 10);
    CHECK(first_line(out / "emg.csv").rfind("MDM1,8,", 0) == 0);
}

TEST_CASE_FIXTURE(Fixture, "decompose writes spikes and one diagnostics row per ICA candidate") {
    const auto musts = io::read_spikes(dec / "musts.msp");
    CHECK(musts.size() > 0);
    CHECK(first_line(dec / "diagnostics.csv") == "candidate,sil,spike_count,qualified");
    std::ifstream in(dec / "diagnostics.csv");
    std::string line;
    std::getline(in, line);
    std::size_t rows = 0;
    std::size_t qualified = 0;
    while (std::getline(in, line)) {
        ++rows;
        qualified += line.substr(line.rfind(',') + 1) == "1" ? 1 : 0;
    }
    CHECK(qualified == musts.size());
    CHECK(rows >= qualified);
    CHECK(rows <= 16);

    const fs::path km = root / "dec_kmeans";
    REQUIRE(run("decompose --detector kmeans --config " + config.string() + " --emg " + (sim / "emg.mdm").string() +
                " --out " + km.string()) == 0);
    CHECK(io::read_json(km / "manifest.json")["config"]["bss"]["detector"] == "kmeans");
    CHECK(line_count(km / "diagnostics.csv") == rows + 1);
}

TEST_CASE_FIXTURE(Fixture, "failures leave no partial outputs") {
    io::MatrixFile empty;
    empty.data.resize(16, 0);
    empty.sample_rate = 2048.0;
    io::write_matrix(root / "empty.mdm", empty, io::Format::Binary);
    const fs::path out = root / "dec_empty";
    CHECK(run("decompose --config " + config.string() + " --emg " + (root / "empty.mdm").string() + " --out " +
              out.string()) != 0);
    CHECK(file_count(out) == 0);

    io::write_text(root / "corrupt.mdm", "MDM1 garbage");
    const fs::path out2 = root / "dec_corrupt";
    CHECK(run("decompose --config " + config.string() + " --emg " + (root / "corrupt.mdm").string() + " --out " +
              out2.string()) == 4);
    CHECK(file_count(out2) == 0);

    CHECK(run("decompose --config " + (root / "nope.json").string() + " --emg x --out " + out2.string()) != 0);
    io::write_text(root / "typo.json", R"({"bss": {"max_source": 3}})");
    CHECK(run("simulate --config " + (root / "typo.json").string() + " --out " + out2.string()) != 0);
    CHECK(file_count(out2) == 0);
}

TEST_CASE_FIXTURE(Fixture, "decode: estimates schema, 2+1 split, and reproducible model reuse") {
    const fs::path out = root / "decode";
    const std::string inputs = " --spikes " + (dec / "musts.msp").string() + " --reference " +
                               (sim / "reference.mdm").string();
    REQUIRE(run("decode --config " + config.string() + inputs + " --out " + out.string()) == 0);
    CHECK(first_line(out / "estimates.csv") == "time_s,trial,est_EF,est_WP,ref_EF,ref_WP");
    const auto r2 = io::read_json(out / "r2.json");
    CHECK(r2["train_r2"].get<double>() > 0.5);
    CHECK(r2["test_r2"].get<double>() > 0.5);
    const auto manifest = io::read_json(out / "manifest.json");
    CHECK(manifest["config"]["decode"]["train"] == nlohmann::json::array({0, 1}));
    CHECK(manifest["config"]["decode"]["test"] == nlohmann::json::array({2}));

    const fs::path again = root / "decode_model";
    REQUIRE(run("decode --config " + config.string() + inputs + " --model " + (out / "model.json").string() +
                " --out " + again.string()) == 0);
    CHECK(slurp(out / "estimates.csv") == slurp(again / "estimates.csv"));
    CHECK(!fs::exists(again / "model.json"));
}

TEST_CASE_FIXTURE(Fixture, "decode: an unassignable DoF exits non-zero") {
    auto ref = io::read_matrix(sim / "reference.mdm");
    Matrix angles(3, ref.data.cols());
    angles.topRows(2) = ref.data;
    for (Index t = 0; t < angles.cols(); ++t) {
        angles(2, t) = t % 2 == 0 ? 1.0 : -1.0;
    }
    ref.data = angles;
    ref.labels.push_back("WF");
    io::write_matrix(root / "ref3.mdm", ref, io::Format::Binary);
    const fs::path out = root / "decode_bad";
    CHECK(run("decode --config " + config.string() + " --spikes " + (dec / "musts.msp").string() + " --reference " +
              (root / "ref3.mdm").string() + " --out " + out.string()) == 3);
    CHECK(file_count(out) == 0);
}

TEST_CASE_FIXTURE(Fixture, "eval sweep and mux produce one row per entry and run") {
    const std::string inputs = " --spikes " + (sim / "truth.msp").string() + " --reference " +
                               (sim / "reference.mdm").string();
    const fs::path out = root / "sweep";
    REQUIRE(run("eval sweep --config " + config.string() + inputs + " --out " + out.string()) == 0);
    CHECK(first_line(out / "sweep.csv") == "label,size,run,train_r2,test_r2");
    CHECK(line_count(out / "sweep.csv") == 1 + 2 * 2);  // size 1000 is skipped
    CHECK(io::read_json(out / "sweep.json")["warnings"].size() == 1);

    const fs::path again = root / "sweep_threads";
    const std::string env = "MYODECODE_THREADS=2 ";
    const std::string cmd = env + MYODECODE_CLI + std::string(" eval sweep --runs 2 --config ") + config.string() +
                            inputs + " --out " + again.string() + " > /dev/null 2>&1";
    REQUIRE(std::system(cmd.c_str()) == 0);
    CHECK(slurp(out / "sweep.csv") == slurp(again / "sweep.csv"));

    const fs::path mux = root / "mux";
    REQUIRE(run("eval mux --runs 3 --config " + config.string() + inputs + " --out " + mux.string()) == 0);
    CHECK(line_count(mux / "mux.csv") == 1 + 2 * 3);
    CHECK(line_count(mux / "mux_summary.csv") == 1 + 2 * 2);  // train and test rows
}

TEST_CASE_FIXTURE(Fixture, "eval thresholds writes paired rasters and scores") {
    const fs::path out = root / "thresholds";
    REQUIRE(run("eval thresholds --config " + config.string() + " --emg " + (sim / "emg.mdm").string() + " --truth " +
                (sim / "truth.msp").string() + " --reference " + (sim / "reference.mdm").string() + " --out " +
                out.string()) == 0);
    for (const char* f : {"thresholds.csv", "thresholds.json", "raster_truth.csv", "raster_adaptive.csv",
                          "raster_kmeans.csv"}) {
        CHECK(fs::exists(out / f));
    }
    const auto j = io::read_json(out / "thresholds.json");
    CHECK(j.contains("test_improvement_pct"));
    CHECK(first_line(out / "raster_truth.csv") == "source,label,sample,time_s");
    CHECK(line_count(out / "raster_truth.csv") == 1 + io::read_spikes(sim / "truth.msp").total_spikes());
}
