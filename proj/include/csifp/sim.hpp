#pragma once

#include <array>
#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "csifp/csi.hpp"
#include "csifp/kvio.hpp"
#include "csifp/rng.hpp"

namespace csifp::sim {

// Per-device multiplicative distortion psi_k: smooth gain/phase ripple across
// subcarriers, fixed for the device's lifetime and a pure function of
// (seed, mac).
struct DeviceImpairment {
    MacAddress mac;
    std::array<std::complex<double>, kSubcarriers> psi{};
    std::uint64_t seed = 0;
};

struct ImpairmentShape {
    double gain_delta = 0.15;  // |psi_k| in [1 - delta, 1 + delta]
    double phase_max = 0.2;    // arg(psi_k) in [-phase_max, phase_max], radians
    int ripple_order = 3;      // Chebyshev order of the ripple polynomials
};

DeviceImpairment make_device(std::uint64_t seed, const MacAddress& mac,
                             const ImpairmentShape& shape = {});

enum class ChannelMode { kStatic, kDynamic };

ChannelMode parse_channel_mode(const std::string& text);  // "static" | "dynamic"
std::string to_string(ChannelMode mode);

struct Tap {
    double delay_samples = 0.0;
    std::complex<double> gain;
};

struct ChannelState {
    std::vector<Tap> taps;
    ChannelMode mode = ChannelMode::kStatic;
    int position_id = 0;

    // h_k = sum_taps gain * exp(-j 2 pi k delay / 64), k = 0..63.
    std::array<std::complex<double>, kSubcarriers> response() const;

    // Bit-level hash of the tap set (identifies a channel draw).
    std::uint64_t tap_hash() const;
};

// Indoor multipath prior: exponentially decaying scattered taps with Rayleigh
// gains plus a line-of-sight tap (Rician factor; 0 disables it). Scattered
// reflections carry a minimum excess delay, so their frequency ripple is
// faster than the smooth hardware ripple of the transmitters.
struct ChannelShape {
    int min_taps = 4;
    int max_taps = 6;
    double min_excess_delay = 3.0;  // samples, first reflection after the LOS
    double delay_spread = 12.0;     // samples
    double rician_k = 10.0;         // LOS power / total scatter power
};

struct SimConfig {
    int devices = 15;
    int packets_per_device = 2000;
    int window_hint = 4;
    double snr_db_lo = 20.0;
    double snr_db_hi = 20.0;
    ChannelMode mode = ChannelMode::kDynamic;
    int positions = 10;
    // Dynamic channels evolve on two time scales: geometry (line of sight and
    // reflector delays) holds for coherence_block packets, while scattered-tap
    // gains fade every fading_block packets within it.
    int coherence_block = 50;
    int fading_block = 1;
    std::uint64_t seed = 1;
    double train_frac = 0.8;
    double val_frac = 0.1;
    ImpairmentShape impairment;
    ChannelShape channel;

    void validate() const;  // throws std::invalid_argument
    KvBlock to_kv() const;
};

// Deterministic MAC for simulated device `index` (locally administered).
MacAddress device_mac(int index);

// Channel draw for (position, packet time t). Static mode: one fixed draw per
// position. Dynamic mode: fresh draw every cfg.coherence_block packets.
// Throws on a position outside [0, cfg.positions).
ChannelState draw_channel(const SimConfig& cfg, int position, std::int64_t t);

// One emitted packet with the exact pre-quantization quantities kept for
// verification: h_hat_k = h_k * psi_k + eps_k.
struct Emitted {
    CsiRecord record;
    std::array<std::complex<double>, kSubcarriers> h{};
    std::array<std::complex<double>, kSubcarriers> eps{};
    std::array<std::complex<double>, kSubcarriers> h_hat{};
};

inline constexpr double kNoiseFloorDbm = -92.0;
inline constexpr double kQuantTarget = 100.0;  // max |component| after scaling
inline constexpr double kSnrInfDb = 200.0;     // stored SNR for noise-free packets

// snr_db may be +infinity to disable noise. Noise variance realizes the
// requested per-packet SNR against signal power mean_k |h_k psi_k|^2.
Emitted emit_sample(const DeviceImpairment& dev, const ChannelState& ch, double snr_db,
                    std::int64_t seq, Rng& rng);
CsiRecord emit_record(const DeviceImpairment& dev, const ChannelState& ch, double snr_db,
                      std::int64_t seq, Rng& rng);

struct DatasetSummary {
    std::array<std::string, 3> files;    // train, val, test paths
    std::array<long long, 3> rows{};     // per-split row counts
    std::array<std::vector<std::uint64_t>, 3> tap_hashes;  // channel draws per split
    std::string manifest_path;
};

// Writes train.csv / val.csv / test.csv plus manifest.txt under out_dir.
// Packet streams are split temporally per device; in dynamic mode each split
// draws its channel states from an independent stream, so test channels are
// never seen in training.
DatasetSummary gen_dataset(const SimConfig& cfg, const std::string& out_dir);

}  // namespace csifp::sim
