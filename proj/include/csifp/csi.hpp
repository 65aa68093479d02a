#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "csifp/mac.hpp"

namespace csifp {

inline constexpr int kSubcarriers = 64;
inline constexpr int kCsiInts = 2 * kSubcarriers;  // (re, im) per subcarrier

// One received packet. csi_raw holds the 128 integers in canonical pair order:
// entries (2k, 2k+1) are the real and imaginary parts of subcarrier k.
struct CsiRecord {
    MacAddress mac;
    std::array<int, kCsiInts> csi_raw{};
    double rssi_dbm = 0.0;
    double noise_floor_dbm = 0.0;
    std::int64_t seq = 0;

    bool operator==(const CsiRecord&) const = default;
};

struct ParseOptions {
    // When set, file rows carry (imag, real) pairs; the parser swaps them into
    // canonical order and the serializer swaps them back.
    bool imag_first = false;
};

// CSV row schema: seq,mac,rssi,noise_floor,csi_0,...,csi_127
// line_no is used in error messages only (1-based; 0 = unknown).
CsiRecord parse_record(std::string_view row, long line_no = 0, const ParseOptions& opts = {});
std::string serialize_record(const CsiRecord& rec, const ParseOptions& opts = {});

std::string csi_csv_header();
std::vector<CsiRecord> read_csi_csv(const std::string& path, const ParseOptions& opts = {});
void write_csi_csv(const std::string& path, const std::vector<CsiRecord>& records,
                   const ParseOptions& opts = {});

// Row k = (Re(H_k), Im(H_k)).
Eigen::Matrix<double, kSubcarriers, 2> to_matrix(const CsiRecord& rec);

// RSSI minus noise floor, in dB.
double snr_db(const CsiRecord& rec);

// Deterministic MAC <-> class index mapping: unique MACs sorted
// lexicographically, indexed from 0.
class ClassTable {
public:
    ClassTable() = default;
    static ClassTable from_records(const std::vector<CsiRecord>& records);
    static ClassTable from_macs(std::vector<MacAddress> macs);

    // -1 when the MAC is not enrolled.
    int index_of(const MacAddress& mac) const;
    const MacAddress& mac(int index) const;
    int size() const { return static_cast<int>(macs_.size()); }
    const std::vector<MacAddress>& macs() const { return macs_; }

private:
    std::vector<MacAddress> macs_;  // sorted, unique
};

// N consecutive same-MAC packets. data is 128 x N: row 2k+c holds component c
// (0 = Re, 1 = Im) of subcarrier k, one column per packet in arrival order.
struct CsiWindow {
    Eigen::MatrixXd data;
    int label = -1;
    MacAddress source_mac;

    int packets() const { return static_cast<int>(data.cols()); }
};

// Per-MAC non-overlapping chunks of n records in arrival order; a trailing
// remainder of fewer than n records is dropped. Labels come from the table
// (windows of unenrolled MACs get label -1). Throws on n < 1.
std::vector<CsiWindow> make_windows(const std::vector<CsiRecord>& records, int n,
                                    const ClassTable& table);
// Convenience overload: builds the table from the records themselves.
std::vector<CsiWindow> make_windows(const std::vector<CsiRecord>& records, int n);

// Z-score statistics per (subcarrier, component), pooled over all packets of
// the training windows. Immutable after fit.
struct Normalizer {
    static constexpr double kStdFloor = 1e-6;

    Eigen::Matrix<double, kCsiInts, 1> mean = Eigen::Matrix<double, kCsiInts, 1>::Zero();
    Eigen::Matrix<double, kCsiInts, 1> stddev = Eigen::Matrix<double, kCsiInts, 1>::Ones();

    static Normalizer fit(const std::vector<CsiWindow>& train);

    CsiWindow apply(const CsiWindow& w) const;
    CsiWindow invert(const CsiWindow& w) const;
};

}  // namespace csifp
