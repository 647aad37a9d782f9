#pragma once

#include <myodecode/bss.hpp>
#include <myodecode/decode.hpp>
#include <myodecode/eval.hpp>
#include <myodecode/sim.hpp>
#include <myodecode/types.hpp>

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace myodecode::io {

enum class Format { Binary, Csv };

Format parse_format(const std::string& name);
/// ".mdm"/".msp" for binary, ".csv" otherwise.
std::string matrix_extension(Format format);
std::string spike_extension(Format format);

struct MatrixFile {
    Matrix data;
    std::optional<double> sample_rate;
    std::vector<std::string> labels;  // one per row, or empty
};

/// Binary layout (little endian): "MDM1", u64 rows, u64 cols, u8 has_rate,
/// f64 rate, u32 label count, labels as (u32 length, bytes), then rows×cols
/// f64 values row-major. CSV: a header line
/// `MDM1,rows,cols,rate,label...` followed by one line per row.
std::string encode_matrix(const MatrixFile& m, Format format);
MatrixFile decode_matrix(const std::string& bytes);

void write_matrix(const std::filesystem::path& path, const MatrixFile& m, Format format);
/// Format is detected from the content.
MatrixFile read_matrix(const std::filesystem::path& path);

MatrixFile to_matrix_file(const EmgRecording& emg);
EmgRecording to_emg(const MatrixFile& m);
MatrixFile to_matrix_file(const KinematicsTrajectory& k);
KinematicsTrajectory to_kinematics(const MatrixFile& m);

/// Binary: "MSP1", u32 channel count, f64 rate, i64 sample count, labels as
/// in matrices, u64 record count, then (u32 channel, i64 sample) records
/// sorted by channel then sample. CSV: `# MSP1,channels,rate,sample_count,
/// label...`, then a `channel,sample` header and one record per line.
std::string encode_spikes(const SpikeTrainSet& s, Format format);
SpikeTrainSet decode_spikes(const std::string& bytes);

void write_spikes(const std::filesystem::path& path, const SpikeTrainSet& s, Format format);
SpikeTrainSet read_spikes(const std::filesystem::path& path);

struct EvalConfig {
    std::size_t runs = 50;
    std::vector<std::size_t> sweep_sizes = {8, 16, 32, 48, 96, 192};
    std::vector<eval::MuxSetup> mux_setups = eval::standard_mux_setups();
    double match_tolerance_ms = 1.0;
    double match_max_lag_ms = 20.0;
    std::size_t threads = 0;
};

struct RunConfig {
    std::uint64_t seed = 1;
    sim::SceneConfig sim;
    bss::DecomposeConfig bss;
    decode::DecodeConfig decode;
    /// Empty trial list: derived from the scene (first trials train, the last
    /// one tests, trial 0 calibrates).
    decode::TrialLayout layout;
    EvalConfig eval;

    /// Trial layout with defaults filled in from the scene configuration.
    decode::TrialLayout resolved_layout() const;
    /// bss settings with the ICA seed derived from the master seed.
    bss::DecomposeConfig decompose_config() const;
};

/// Unknown keys raise InvalidArgument naming the key; missing keys keep
/// their defaults. A manifest is accepted too, its "config" member is used.
RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const RunConfig& c);
RunConfig load_config(const std::filesystem::path& path);

nlohmann::json model_to_json(const decode::ProjectionModel& m);
decode::ProjectionModel model_from_json(const nlohmann::json& j);
void save_model(const std::filesystem::path& path, const decode::ProjectionModel& m);
decode::ProjectionModel load_model(const std::filesystem::path& path);

nlohmann::json read_json(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_bytes(const std::filesystem::path& path);

} // namespace myodecode::io
