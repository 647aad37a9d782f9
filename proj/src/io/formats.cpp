#include <myodecode/error.hpp>
#include <myodecode/io.hpp>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string_view>

namespace myodecode::io {

namespace {

constexpr std::string_view kMatrixMagic = "MDM1";
constexpr std::string_view kSpikeMagic = "MSP1";

template <typename T>
void put(std::string& out, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        std::reverse(bytes, bytes + sizeof(T));
    }
    out.append(bytes, sizeof(T));
}

class Cursor {
public:
    Cursor(const std::string& bytes, std::size_t pos) : bytes_(bytes), pos_(pos) {}

    template <typename T>
    T get() {
        need(sizeof(T));
        char raw[sizeof(T)];
        std::memcpy(raw, bytes_.data() + pos_, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) {
            std::reverse(raw, raw + sizeof(T));
        }
        pos_ += sizeof(T);
        T value;
        std::memcpy(&value, raw, sizeof(T));
        return value;
    }

    std::string string() {
        const auto n = get<std::uint32_t>();
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) {
            throw FormatError("truncated file");
        }
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    const std::string& bytes_;
    std::size_t pos_;
};

void put_labels(std::string& out, const std::vector<std::string>& labels) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(labels.size()));
    for (const auto& l : labels) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(l.size()));
        out += l;
    }
}

std::vector<std::string> get_labels(Cursor& c) {
    const auto n = c.get<std::uint32_t>();
    std::vector<std::string> labels;
    for (std::uint32_t i = 0; i < n; ++i) {
        labels.push_back(c.string());
    }
    return labels;
}

void check_csv_label(const std::string& label) {
    if (label.find_first_of(",\n\r") != std::string::npos) {
        throw InvalidArgument("label '" + label + "' cannot be stored in CSV");
    }
}

void append_number(std::string& out, double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    out.append(buf, res.ptr);
}

std::vector<std::string_view> split(std::string_view line, char sep) {
    std::vector<std::string_view> parts;
    std::size_t start = 0;
    while (true) {
        const std::size_t end = line.find(sep, start);
        parts.push_back(line.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start));
        if (end == std::string_view::npos) {
            break;
        }
        start = end + 1;
    }
    return parts;
}

template <typename T>
T parse_number(std::string_view s, const char* what) {
    while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) {
        s.remove_suffix(1);
    }
    while (!s.empty() && s.front() == ' ') {
        s.remove_prefix(1);
    }
    T value{};
    const auto res = std::from_chars(s.data(), s.data() + s.size(), value);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        throw FormatError(std::string("malformed ") + what + " '" + std::string(s) + "'");
    }
    return value;
}

std::vector<std::string_view> lines_of(const std::string& text) {
    std::vector<std::string_view> lines = split(text, '\n');
    if (!lines.empty() && lines.back().empty()) {
        lines.pop_back();
    }
    return lines;
}

} // namespace

Format parse_format(const std::string& name) {
    if (name == "bin") {
        return Format::Binary;
    }
    if (name == "csv") {
        return Format::Csv;
    }
    throw InvalidArgument("unknown format '" + name + "' (expected bin or csv)");
}

std::string matrix_extension(Format format) { return format == Format::Binary ? ".mdm" : ".csv"; }
std::string spike_extension(Format format) { return format == Format::Binary ? ".msp" : ".csv"; }

std::string encode_matrix(const MatrixFile& m, Format format) {
    if (!m.labels.empty() && static_cast<Index>(m.labels.size()) != m.data.rows()) {
        throw InvalidArgument("matrix label count does not match rows");
    }
    std::string out;
    if (format == Format::Binary) {
        out += kMatrixMagic;
        put<std::uint64_t>(out, static_cast<std::uint64_t>(m.data.rows()));
        put<std::uint64_t>(out, static_cast<std::uint64_t>(m.data.cols()));
        put<std::uint8_t>(out, m.sample_rate ? 1 : 0);
        put<double>(out, m.sample_rate.value_or(0.0));
        put_labels(out, m.labels);
        out.reserve(out.size() + static_cast<std::size_t>(m.data.size()) * sizeof(double));
        for (Index r = 0; r < m.data.rows(); ++r) {
            for (Index c = 0; c < m.data.cols(); ++c) {
                put<double>(out, m.data(r, c));
            }
        }
        return out;
    }
    out += kMatrixMagic;
    out += ',' + std::to_string(m.data.rows()) + ',' + std::to_string(m.data.cols()) + ',';
    if (m.sample_rate) {
        append_number(out, *m.sample_rate);
    }
    for (const auto& l : m.labels) {
        check_csv_label(l);
        out += ',' + l;
    }
    out += '\n';
    for (Index r = 0; r < m.data.rows(); ++r) {
        for (Index c = 0; c < m.data.cols(); ++c) {
            if (c > 0) {
                out += ',';
            }
            append_number(out, m.data(r, c));
        }
        out += '\n';
    }
    return out;
}

MatrixFile decode_matrix(const std::string& bytes) {
    if (bytes.size() < 4 || std::string_view(bytes).substr(0, 4) != kMatrixMagic) {
        throw FormatError("not a matrix file (bad magic)");
    }
    MatrixFile m;
    if (bytes.size() > 4 && bytes[4] == ',') {
        const auto lines = lines_of(bytes);
        const auto header = split(lines[0], ',');
        if (header.size() < 4) {
            throw FormatError("matrix CSV header too short");
        }
        const auto rows = parse_number<Index>(header[1], "row count");
        const auto cols = parse_number<Index>(header[2], "column count");
        if (rows < 0 || cols < 0) {
            throw FormatError("negative matrix shape");
        }
        if (!header[3].empty()) {
            m.sample_rate = parse_number<double>(header[3], "sample rate");
        }
        for (std::size_t i = 4; i < header.size(); ++i) {
            m.labels.emplace_back(header[i]);
        }
        if (static_cast<Index>(lines.size()) != rows + 1) {
            throw FormatError("matrix CSV has " + std::to_string(lines.size() - 1) + " rows, header says " +
                              std::to_string(rows));
        }
        m.data.resize(rows, cols);
        for (Index r = 0; r < rows; ++r) {
            const auto cells = split(lines[static_cast<std::size_t>(r) + 1], ',');
            if (static_cast<Index>(cells.size()) != cols && !(cols == 0 && cells.size() == 1)) {
                throw FormatError("matrix CSV row " + std::to_string(r) + " has the wrong number of values");
            }
            for (Index c = 0; c < cols; ++c) {
                m.data(r, c) = parse_number<double>(cells[static_cast<std::size_t>(c)], "value");
            }
        }
    } else {
        Cursor cur(bytes, 4);
        const auto rows = cur.get<std::uint64_t>();
        const auto cols = cur.get<std::uint64_t>();
        const auto has_rate = cur.get<std::uint8_t>();
        const auto rate = cur.get<double>();
        if (has_rate > 1) {
            throw FormatError("corrupt matrix header");
        }
        if (has_rate) {
            m.sample_rate = rate;
        }
        m.labels = get_labels(cur);
        if (cols != 0 && rows > (bytes.size() / sizeof(double)) / cols) {
            throw FormatError("matrix payload shorter than header shape");
        }
        m.data.resize(static_cast<Index>(rows), static_cast<Index>(cols));
        cur.need(rows * cols * sizeof(double));
        for (Index r = 0; r < m.data.rows(); ++r) {
            for (Index c = 0; c < m.data.cols(); ++c) {
                m.data(r, c) = cur.get<double>();
            }
        }
        if (!cur.done()) {
            throw FormatError("trailing bytes after matrix payload");
        }
    }
    if (!m.labels.empty() && static_cast<Index>(m.labels.size()) != m.data.rows()) {
        throw FormatError("matrix label count does not match rows");
    }
    return m;
}

std::string read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open '" + path.string() + "' for reading");
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) {
        throw IoError("read failed for '" + path.string() + "'");
    }
    return std::move(ss).str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open '" + path.string() + "' for writing");
    }
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.flush();
    if (!out) {
        throw IoError("write failed for '" + path.string() + "'");
    }
}

void write_matrix(const std::filesystem::path& path, const MatrixFile& m, Format format) {
    write_text(path, encode_matrix(m, format));
}

MatrixFile read_matrix(const std::filesystem::path& path) {
    try {
        return decode_matrix(read_bytes(path));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

MatrixFile to_matrix_file(const EmgRecording& emg) { return {emg.samples, emg.sample_rate, {}}; }

EmgRecording to_emg(const MatrixFile& m) {
    if (!m.sample_rate) {
        throw FormatError("EMG matrix has no sample rate");
    }
    EmgRecording emg{m.data, *m.sample_rate};
    emg.validate();
    return emg;
}

MatrixFile to_matrix_file(const KinematicsTrajectory& k) { return {k.angles, k.sample_rate, k.dof_labels}; }

KinematicsTrajectory to_kinematics(const MatrixFile& m) {
    if (!m.sample_rate) {
        throw FormatError("kinematics matrix has no sample rate");
    }
    KinematicsTrajectory k{m.data, m.labels, *m.sample_rate};
    k.validate();
    return k;
}

std::string encode_spikes(const SpikeTrainSet& s, Format format) {
    s.validate();
    std::string out;
    if (format == Format::Binary) {
        out += kSpikeMagic;
        put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
        put<double>(out, s.sample_rate);
        put<std::int64_t>(out, s.sample_count);
        put_labels(out, s.labels);
        put<std::uint64_t>(out, static_cast<std::uint64_t>(s.total_spikes()));
        for (std::size_t c = 0; c < s.size(); ++c) {
            for (SampleIndex t : s.trains[c]) {
                put<std::uint32_t>(out, static_cast<std::uint32_t>(c));
                put<std::int64_t>(out, t);
            }
        }
        return out;
    }
    out += "# ";
    out += kSpikeMagic;
    out += ',' + std::to_string(s.size()) + ',';
    append_number(out, s.sample_rate);
    out += ',' + std::to_string(s.sample_count);
    for (const auto& l : s.labels) {
        check_csv_label(l);
        out += ',' + l;
    }
    out += "\nchannel,sample\n";
    for (std::size_t c = 0; c < s.size(); ++c) {
        for (SampleIndex t : s.trains[c]) {
            out += std::to_string(c) + ',' + std::to_string(t) + '\n';
        }
    }
    return out;
}

SpikeTrainSet decode_spikes(const std::string& bytes) {
    SpikeTrainSet s;
    std::uint64_t last_channel = 0;
    auto add = [&](std::uint64_t channel, SampleIndex sample) {
        if (channel >= s.trains.size()) {
            throw FormatError("spike record channel " + std::to_string(channel) + " out of range");
        }
        if (channel < last_channel) {
            throw FormatError("spike records not sorted by channel");
        }
        last_channel = channel;
        auto& train = s.trains[channel];
        if (!train.empty() && sample <= train.back()) {
            throw FormatError("spike samples not strictly increasing in channel " + std::to_string(channel));
        }
        train.push_back(sample);
    };

    if (bytes.size() >= 4 && std::string_view(bytes).substr(0, 4) == kSpikeMagic) {
        Cursor cur(bytes, 4);
        const auto channels = cur.get<std::uint32_t>();
        s.sample_rate = cur.get<double>();
        s.sample_count = cur.get<std::int64_t>();
        s.labels = get_labels(cur);
        s.trains.assign(channels, {});
        const auto records = cur.get<std::uint64_t>();
        cur.need(records * 12);
        for (std::uint64_t r = 0; r < records; ++r) {
            const auto c = cur.get<std::uint32_t>();
            add(c, cur.get<std::int64_t>());
        }
        if (!cur.done()) {
            throw FormatError("trailing bytes after spike records");
        }
    } else if (bytes.size() >= 6 && std::string_view(bytes).substr(0, 6) == "# MSP1") {
        const auto lines = lines_of(bytes);
        const auto header = split(lines[0].substr(2), ',');
        if (header.size() < 4) {
            throw FormatError("spike CSV header too short");
        }
        const auto channels = parse_number<std::size_t>(header[1], "channel count");
        s.sample_rate = parse_number<double>(header[2], "sample rate");
        s.sample_count = parse_number<SampleIndex>(header[3], "sample count");
        for (std::size_t i = 4; i < header.size(); ++i) {
            s.labels.emplace_back(header[i]);
        }
        s.trains.assign(channels, {});
        if (lines.size() < 2 || lines[1].substr(0, 14) != "channel,sample") {
            throw FormatError("spike CSV lacks the channel,sample header");
        }
        for (std::size_t i = 2; i < lines.size(); ++i) {
            const auto cells = split(lines[i], ',');
            if (cells.size() != 2) {
                throw FormatError("spike CSV line " + std::to_string(i + 1) + " needs two fields");
            }
            add(parse_number<std::uint64_t>(cells[0], "channel"), parse_number<SampleIndex>(cells[1], "sample"));
        }
    } else {
        throw FormatError("not a spike file (bad magic)");
    }
    try {
        s.validate();
    } catch (const InvalidArgument& e) {
        throw FormatError(e.what());
    }
    return s;
}

void write_spikes(const std::filesystem::path& path, const SpikeTrainSet& s, Format format) {
    write_text(path, encode_spikes(s, format));
}

SpikeTrainSet read_spikes(const std::filesystem::path& path) {
    try {
        return decode_spikes(read_bytes(path));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

} // namespace myodecode::io
