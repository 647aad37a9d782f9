#include <doctest.h>

#include <myodecode/decode.hpp>
#include <myodecode/error.hpp>
#include <myodecode/io.hpp>

#include "gen.hpp"
#include "oracles.hpp"

#include <cstring>
#include <filesystem>
#include <limits>

using namespace myodecode;
using namespace myodecode::io;
using testing_support::Gen;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("myodecode_io_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

// Awkward but finite doubles that stress shortest round-trip printing.
double awkward(Gen& g) {
    switch (g.integer(0, 5)) {
    case 0:
        return g.normal() * 1e-300;
    case 1:
        return g.normal() * 1e300;
    case 2:
        return std::numeric_limits<double>::denorm_min() * static_cast<double>(g.integer(1, 1000));
    case 3:
        return -0.0;
    case 4:
        return 0.1 * static_cast<double>(g.integer(-100, 100));
    default:
        return g.normal();
    }
}

MatrixFile random_matrix_file(Gen& g) {
    MatrixFile m;
    m.data.resize(g.integer(0, 7), g.integer(0, 7));
    for (Index i = 0; i < m.data.size(); ++i) {
        m.data.data()[i] = awkward(g);
    }
    if (g.coin()) {
        m.sample_rate = g.uniform(1, 5000);
    }
    if (g.coin()) {
        for (Index r = 0; r < m.data.rows(); ++r) {
            m.labels.push_back("ch" + std::to_string(r));
        }
    }
    return m;
}

SpikeTrainSet random_spikes(Gen& g) {
    SpikeTrainSet s;
    s.sample_rate = g.uniform(100, 5000);
    s.sample_count = g.integer(1, 100000);
    s.trains.resize(static_cast<std::size_t>(g.integer(0, 6)));
    for (std::size_t c = 0; c < s.trains.size(); ++c) {
        for (SampleIndex k = g.integer(0, 50); k < s.sample_count; k += g.integer(1, 20000)) {
            s.trains[c].push_back(k);
        }
        s.labels.push_back("s" + std::to_string(c));
    }
    return s;
}

bool same_spikes(const SpikeTrainSet& a, const SpikeTrainSet& b) {
    return a.trains == b.trains && a.labels == b.labels && testing_support::bit_equal(a.sample_rate, b.sample_rate) &&
           a.sample_count == b.sample_count;
}

} // namespace

TEST_CASE("matrix files round-trip bit-exactly in both encodings") {
    testing_support::for_all(40, 60, [](Gen& g, int) {
        const MatrixFile m = random_matrix_file(g);
        for (Format f : {Format::Binary, Format::Csv}) {
            const std::string bytes = encode_matrix(m, f);
            const MatrixFile back = decode_matrix(bytes);
            REQUIRE(testing_support::bit_equal(back.data, m.data));
            REQUIRE(back.labels == m.labels);
            REQUIRE(back.sample_rate.has_value() == m.sample_rate.has_value());
            if (m.sample_rate) {
                REQUIRE(testing_support::bit_equal(*back.sample_rate, *m.sample_rate));
            }
            REQUIRE(encode_matrix(back, f) == bytes);
        }
    });
}

TEST_CASE("binary matrix layout") {
    MatrixFile m;
    m.data.resize(1, 2);
    m.data << 1.0, -2.5;
    m.sample_rate = 2048.0;
    const std::string b = encode_matrix(m, Format::Binary);
    REQUIRE(b.size() == 4 + 8 + 8 + 1 + 8 + 4 + 16);
    CHECK(b.substr(0, 4) == "MDM1");
    double second = 0.0;
    std::memcpy(&second, b.data() + b.size() - 8, 8);
    CHECK(second == -2.5);
    std::uint64_t rows = 0;
    std::memcpy(&rows, b.data() + 4, 8);
    CHECK(rows == 1);
}

TEST_CASE("matrix decoding rejects corrupt input") {
    Gen g(61);
    MatrixFile m;
    m.data = g.matrix(3, 4);
    const std::string b = encode_matrix(m, Format::Binary);
    std::string bad = b;
    bad[0] = 'X';
    CHECK_THROWS_AS(decode_matrix(bad), FormatError);
    CHECK_THROWS_AS(decode_matrix(b.substr(0, b.size() - 3)), FormatError);
    CHECK_THROWS_AS(decode_matrix(b + "x"), FormatError);
    CHECK_THROWS_AS(decode_matrix(""), FormatError);

    const std::string c = encode_matrix(m, Format::Csv);
    CHECK_THROWS_AS(decode_matrix(c.substr(0, c.rfind('\n', c.size() - 2) + 1)), FormatError);
    CHECK_THROWS_AS(decode_matrix("MDM1,1,2,,\n1,abc\n"), FormatError);
}

TEST_CASE("spike files round-trip bit-exactly in both encodings") {
    testing_support::for_all(40, 62, [](Gen& g, int) {
        const SpikeTrainSet s = random_spikes(g);
        for (Format f : {Format::Binary, Format::Csv}) {
            const std::string bytes = encode_spikes(s, f);
            const SpikeTrainSet back = decode_spikes(bytes);
            REQUIRE(same_spikes(back, s));
            REQUIRE(encode_spikes(back, f) == bytes);
        }
    });
}

TEST_CASE("spike decoding rejects unsorted records and bad magic") {
    SpikeTrainSet s;
    s.sample_rate = 2048;
    s.sample_count = 100;
    s.trains = {{1, 5}, {3}};
    s.labels = {"a", "b"};
    const std::string csv = encode_spikes(s, Format::Csv);
    CHECK(csv.find("channel,sample") != std::string::npos);
    std::string swapped = csv;
    const auto p = swapped.find("0,1\n");
    REQUIRE(p != std::string::npos);
    swapped.replace(p, 8, "0,5\n0,1\n");
    CHECK_THROWS_AS(decode_spikes(swapped), FormatError);

    std::string bin = encode_spikes(s, Format::Binary);
    CHECK(bin.substr(0, 4) == "MSP1");
    bin[3] = '2';
    CHECK_THROWS_AS(decode_spikes(bin), FormatError);
}

TEST_CASE("file helpers report the path") {
    const fs::path dir = scratch_dir("paths");
    try {
        (void)read_matrix(dir / "missing.mdm");
        FAIL("expected an error");
    } catch (const IoError& e) {
        CHECK(std::string(e.what()).find("missing.mdm") != std::string::npos);
    }
    write_text(dir / "junk.mdm", "not a matrix");
    try {
        (void)read_matrix(dir / "junk.mdm");
        FAIL("expected an error");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("junk.mdm") != std::string::npos);
    }
    fs::remove_all(dir);
}

TEST_CASE("recordings and trajectories survive conversion") {
    Gen g(63);
    EmgRecording emg{g.matrix(4, 30), 2048.0};
    const auto back = to_emg(decode_matrix(encode_matrix(to_matrix_file(emg), Format::Binary)));
    CHECK(testing_support::bit_equal(back.samples, emg.samples));
    CHECK(back.sample_rate == 2048.0);

    KinematicsTrajectory k{g.matrix(2, 11), {"EF", "WP"}, 20.0};
    const auto kb = to_kinematics(decode_matrix(encode_matrix(to_matrix_file(k), Format::Csv)));
    CHECK(testing_support::bit_equal(kb.angles, k.angles));
    CHECK(kb.dof_labels == k.dof_labels);
    CHECK(kb.sample_rate == 20.0);
}

TEST_CASE("config: defaults, overrides and unknown keys") {
    const RunConfig d = config_from_json(nlohmann::json::object());
    CHECK(d.seed == 1);
    CHECK(d.sim.channels == 64);
    CHECK(d.bss.extension_factor == 5);
    CHECK(d.bss.sil_threshold == 0.8);
    CHECK(d.decode.bin_ms == 50.0);
    CHECK(d.decode.cutoff_hz == 1.0);
    CHECK(d.eval.runs == 50);
    CHECK(d.eval.mux_setups.size() == 6);

    const auto j = nlohmann::json::parse(R"({"seed": 9, "sim": {"dofs": 3}, "bss": {"detector": "kmeans"},
        "decode": {"components": 6}, "eval": {"sweep_sizes": [4, 8]}})");
    const RunConfig c = config_from_json(j);
    CHECK(c.seed == 9);
    CHECK(c.sim.dofs == 3);
    CHECK(c.sim.channels == 64);
    CHECK(c.bss.detector == bss::Detector::KMeans);
    CHECK(c.decode.components == 6);
    CHECK(c.eval.sweep_sizes == std::vector<std::size_t>{4, 8});

    CHECK_THROWS_AS(config_from_json(nlohmann::json::parse(R"({"sim": {"chanels": 3}})")), InvalidArgument);
    CHECK_THROWS_AS(config_from_json(nlohmann::json::parse(R"({"extra": 1})")), InvalidArgument);
    CHECK_THROWS_AS(config_from_json(nlohmann::json::parse(R"({"bss": {"detector": "otsu"}})")), InvalidArgument);
    CHECK_THROWS_AS(config_from_json(nlohmann::json::parse(R"({"sim": {"channels": "many"}})")), InvalidArgument);
}

TEST_CASE("config: resolved form is a fixed point") {
    RunConfig c = config_from_json(nlohmann::json::parse(R"({"seed": 4, "sim": {"trials": 4, "snr_db": 15.5}})"));
    const auto j = config_to_json(c);
    const auto again = config_to_json(config_from_json(j));
    CHECK(j == again);
    CHECK(j.dump() == again.dump());

    const auto layout = c.resolved_layout();
    REQUIRE(layout.trials.size() == 4);
    CHECK(layout.train == std::vector<std::size_t>{0, 1, 2});
    CHECK(layout.test == std::vector<std::size_t>{3});
    CHECK(layout.trials[1].first == c.sim.trial_duration_s());
}

TEST_CASE("model serialization is bit-exact") {
    Gen g(64);
    const Matrix x = g.matrix(60, 9).cwiseAbs();
    decode::BinnedActivity b;
    b.values = x;
    for (int c = 0; c < 9; ++c) {
        b.column_labels.push_back(source_label(static_cast<std::size_t>(c)));
    }
    auto model = decode::fit_pca(b, 3);
    model = decode::rotate_model(model, decode::varimax(model.loadings).rotation);
    const Matrix scores = model.rotated_scores(x);
    KinematicsTrajectory ref{Matrix(2, 60), {"EF", "WP"}, 20.0};
    ref.angles.row(0) = 0.7 * scores.col(0).transpose();
    ref.angles.row(1) = scores.col(1).transpose().array() * 3.0 + 1.0 / 3.0;
    model = decode::assign_dofs(model, scores, ref);
    model.smoothing_coefficient = std::exp(-0.1 * 3.141592653589793);
    model.config_hash = 0xfedcba9876543210ULL;

    const auto back = model_from_json(model_to_json(model));
    CHECK(testing_support::bit_equal(back.loadings, model.loadings));
    CHECK(testing_support::bit_equal(back.rotation, model.rotation));
    CHECK(testing_support::bit_equal(back.rotated_loadings, model.rotated_loadings));
    CHECK(testing_support::bit_equal(Matrix(back.column_means), Matrix(model.column_means)));
    CHECK(testing_support::bit_equal(Matrix(back.singular_values), Matrix(model.singular_values)));
    CHECK(testing_support::bit_equal(back.smoothing_coefficient, model.smoothing_coefficient));
    CHECK(back.config_hash == model.config_hash);
    REQUIRE(back.dofs.size() == 2);
    for (std::size_t d = 0; d < 2; ++d) {
        CHECK(back.dofs[d].label == model.dofs[d].label);
        CHECK(back.dofs[d].component == model.dofs[d].component);
        CHECK(back.dofs[d].sign == model.dofs[d].sign);
        CHECK(testing_support::bit_equal(back.dofs[d].gain, model.dofs[d].gain));
        CHECK(testing_support::bit_equal(back.dofs[d].offset, model.dofs[d].offset));
    }

    const fs::path dir = scratch_dir("model");
    save_model(dir / "m.json", model);
    const auto bytes = read_bytes(dir / "m.json");
    save_model(dir / "m2.json", load_model(dir / "m.json"));
    CHECK(read_bytes(dir / "m2.json") == bytes);
    CHECK(testing_support::bit_equal(decode::project(load_model(dir / "m.json"), b).angles,
                                      decode::project(model, b).angles));
    fs::remove_all(dir);

    auto broken = model_to_json(model);
    broken["rotation"] = nlohmann::json::array();
    CHECK_THROWS_AS(model_from_json(broken), FormatError);
}

TEST_CASE("format names") {
    CHECK(parse_format("bin") == Format::Binary);
    CHECK(parse_format("csv") == Format::Csv);
    CHECK_THROWS_AS(parse_format("xml"), InvalidArgument);
    CHECK(matrix_extension(Format::Binary) == ".mdm");
    CHECK(spike_extension(Format::Binary) == ".msp");
    CHECK(spike_extension(Format::Csv) == ".csv");
}
