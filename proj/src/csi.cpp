#include "csifp/csi.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace csifp {

namespace {

std::string row_context(long line_no) {
    return line_no > 0 ? " (row " + std::to_string(line_no) + ")" : "";
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

std::vector<std::string_view> split_fields(std::string_view row) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = row.find(',', start);
        if (comma == std::string_view::npos) {
            fields.push_back(trim(row.substr(start)));
            break;
        }
        fields.push_back(trim(row.substr(start, comma - start)));
        start = comma + 1;
    }
    return fields;
}

std::int64_t parse_int(std::string_view field, const char* what, long line_no) {
    std::int64_t value = 0;
    const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
    if (ec != std::errc{} || ptr != field.data() + field.size()) {
        throw std::invalid_argument(std::string("non-integer ") + what + " field \"" +
                                    std::string(field) + "\"" + row_context(line_no));
    }
    return value;
}

double parse_real(std::string_view field, const char* what, long line_no) {
    double value = 0;
    const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
    if (ec != std::errc{} || ptr != field.data() + field.size()) {
        throw std::invalid_argument(std::string("non-numeric ") + what + " field \"" +
                                    std::string(field) + "\"" + row_context(line_no));
    }
    return value;
}

void append_number(std::string& out, double v) {
    char buf[32];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    out.append(buf, ptr);
}

void append_number(std::string& out, std::int64_t v) {
    char buf[24];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    out.append(buf, ptr);
}

}  // namespace

CsiRecord parse_record(std::string_view row, long line_no, const ParseOptions& opts) {
    const auto fields = split_fields(row);
    if (fields.size() != 4 + kCsiInts) {
        throw std::invalid_argument("expected " + std::to_string(4 + kCsiInts) + " fields, got " +
                                    std::to_string(fields.size()) + row_context(line_no));
    }
    CsiRecord rec;
    rec.seq = parse_int(fields[0], "seq", line_no);
    try {
        rec.mac = MacAddress::parse(fields[1]);
    } catch (const std::invalid_argument& e) {
        throw std::invalid_argument(std::string(e.what()) + row_context(line_no));
    }
    rec.rssi_dbm = parse_real(fields[2], "rssi", line_no);
    rec.noise_floor_dbm = parse_real(fields[3], "noise_floor", line_no);
    for (int i = 0; i < kCsiInts; ++i) {
        const std::int64_t v = parse_int(fields[4 + i], "csi", line_no);
        // File order -> canonical (re, im) pair order.
        const int j = opts.imag_first ? (i ^ 1) : i;
        rec.csi_raw[j] = static_cast<int>(v);
    }
    return rec;
}

std::string serialize_record(const CsiRecord& rec, const ParseOptions& opts) {
    std::string out;
    out.reserve(16 + 18 + 32 + kCsiInts * 5);
    append_number(out, rec.seq);
    out.push_back(',');
    out += rec.mac.str();
    out.push_back(',');
    append_number(out, rec.rssi_dbm);
    out.push_back(',');
    append_number(out, rec.noise_floor_dbm);
    for (int i = 0; i < kCsiInts; ++i) {
        out.push_back(',');
        const int j = opts.imag_first ? (i ^ 1) : i;
        append_number(out, static_cast<std::int64_t>(rec.csi_raw[j]));
    }
    return out;
}

std::string csi_csv_header() {
    std::string header = "seq,mac,rssi,noise_floor";
    for (int i = 0; i < kCsiInts; ++i) header += ",csi_" + std::to_string(i);
    return header;
}

std::vector<CsiRecord> read_csi_csv(const std::string& path, const ParseOptions& opts) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open CSI file: " + path);
    std::vector<CsiRecord> records;
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string_view sv = trim(line);
        if (sv.empty()) continue;
        if (line_no == 1 && sv.starts_with("seq,")) continue;  // header row
        records.push_back(parse_record(sv, line_no, opts));
    }
    return records;
}

void write_csi_csv(const std::string& path, const std::vector<CsiRecord>& records,
                   const ParseOptions& opts) {
    std::ofstream out(path, std::ios::binary);  // binary: byte-identical across platforms
    if (!out) throw std::runtime_error("cannot write CSI file: " + path);
    out << csi_csv_header() << '\n';
    for (const auto& rec : records) out << serialize_record(rec, opts) << '\n';
    if (!out) throw std::runtime_error("write failed: " + path);
}

Eigen::Matrix<double, kSubcarriers, 2> to_matrix(const CsiRecord& rec) {
    Eigen::Matrix<double, kSubcarriers, 2> m;
    for (int k = 0; k < kSubcarriers; ++k) {
        m(k, 0) = rec.csi_raw[2 * k];
        m(k, 1) = rec.csi_raw[2 * k + 1];
    }
    return m;
}

double snr_db(const CsiRecord& rec) { return rec.rssi_dbm - rec.noise_floor_dbm; }

ClassTable ClassTable::from_records(const std::vector<CsiRecord>& records) {
    std::vector<MacAddress> macs;
    macs.reserve(records.size());
    for (const auto& r : records) macs.push_back(r.mac);
    return from_macs(std::move(macs));
}

ClassTable ClassTable::from_macs(std::vector<MacAddress> macs) {
    std::sort(macs.begin(), macs.end());
    macs.erase(std::unique(macs.begin(), macs.end()), macs.end());
    ClassTable table;
    table.macs_ = std::move(macs);
    return table;
}

int ClassTable::index_of(const MacAddress& mac) const {
    const auto it = std::lower_bound(macs_.begin(), macs_.end(), mac);
    if (it == macs_.end() || *it != mac) return -1;
    return static_cast<int>(it - macs_.begin());
}

const MacAddress& ClassTable::mac(int index) const {
    if (index < 0 || index >= size()) throw std::out_of_range("class index out of range");
    return macs_[static_cast<std::size_t>(index)];
}

std::vector<CsiWindow> make_windows(const std::vector<CsiRecord>& records, int n,
                                    const ClassTable& table) {
    if (n < 1) throw std::invalid_argument("window length must be >= 1");
    // Partition by MAC, preserving arrival order within each stream.
    std::map<MacAddress, std::vector<const CsiRecord*>> streams;
    for (const auto& rec : records) streams[rec.mac].push_back(&rec);

    std::vector<CsiWindow> windows;
    for (const auto& [mac, stream] : streams) {
        const int label = table.index_of(mac);
        const std::size_t full = stream.size() / static_cast<std::size_t>(n);
        for (std::size_t w = 0; w < full; ++w) {
            CsiWindow win;
            win.source_mac = mac;
            win.label = label;
            win.data.resize(kCsiInts, n);
            for (int t = 0; t < n; ++t) {
                const CsiRecord& rec = *stream[w * static_cast<std::size_t>(n) + t];
                for (int i = 0; i < kCsiInts; ++i) win.data(i, t) = rec.csi_raw[i];
            }
            windows.push_back(std::move(win));
        }
    }
    return windows;
}

std::vector<CsiWindow> make_windows(const std::vector<CsiRecord>& records, int n) {
    return make_windows(records, n, ClassTable::from_records(records));
}

Normalizer Normalizer::fit(const std::vector<CsiWindow>& train) {
    if (train.empty()) throw std::invalid_argument("cannot fit normalizer on an empty training set");
    Eigen::Matrix<double, kCsiInts, 1> sum = Eigen::Matrix<double, kCsiInts, 1>::Zero();
    Eigen::Matrix<double, kCsiInts, 1> sum_sq = Eigen::Matrix<double, kCsiInts, 1>::Zero();
    std::int64_t count = 0;
    for (const auto& w : train) {
        sum += w.data.rowwise().sum();
        sum_sq += w.data.array().square().matrix().rowwise().sum();
        count += w.packets();
    }
    Normalizer norm;
    norm.mean = sum / static_cast<double>(count);
    const auto var =
        (sum_sq / static_cast<double>(count) - norm.mean.array().square().matrix()).array().max(0.0);
    norm.stddev = var.sqrt().max(kStdFloor).matrix();
    return norm;
}

CsiWindow Normalizer::apply(const CsiWindow& w) const {
    CsiWindow out = w;
    out.data = (w.data.colwise() - mean).array().colwise() / stddev.array();
    return out;
}

CsiWindow Normalizer::invert(const CsiWindow& w) const {
    CsiWindow out = w;
    out.data = (w.data.array().colwise() * stddev.array()).matrix().colwise() + mean;
    return out;
}

}  // namespace csifp
