#include "csifp/sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace csifp::sim {

namespace {

// Seed-stream tags; arbitrary but fixed.
constexpr std::uint64_t kTagDevice = 0xD3u;
constexpr std::uint64_t kTagChannel = 0xC7u;
constexpr std::uint64_t kTagNoise = 0x17u;
constexpr std::uint64_t kTagDynamicSplit = 0x5Du;
constexpr std::uint64_t kTagFading = 0xFAu;

// Smooth ripple over subcarriers: random Chebyshev polynomial rescaled to
// peak magnitude 1 (identically zero if the draw degenerates).
std::array<double, kSubcarriers> ripple(Rng& rng, int order) {
    std::vector<double> coeff(static_cast<std::size_t>(order) + 1);
    for (auto& c : coeff) c = rng.uniform(-1.0, 1.0);
    std::array<double, kSubcarriers> raw{};
    double peak = 0.0;
    for (int k = 0; k < kSubcarriers; ++k) {
        const double x = (2.0 * k - (kSubcarriers - 1)) / (kSubcarriers - 1);
        double t_prev = 1.0, t_cur = x;  // T_0, T_1
        double value = coeff[0] * t_prev;
        if (order >= 1) value += coeff[1] * t_cur;
        for (int j = 2; j <= order; ++j) {
            const double t_next = 2.0 * x * t_cur - t_prev;
            value += coeff[static_cast<std::size_t>(j)] * t_next;
            t_prev = t_cur;
            t_cur = t_next;
        }
        raw[static_cast<std::size_t>(k)] = value;
        peak = std::max(peak, std::abs(value));
    }
    if (peak < 1e-12) return {};
    for (auto& v : raw) v /= peak;
    return raw;
}

}  // namespace

DeviceImpairment make_device(std::uint64_t seed, const MacAddress& mac,
                             const ImpairmentShape& shape) {
    Rng rng(mix_seed(seed, kTagDevice, mac_key(mac)));
    const auto gain_ripple = ripple(rng, shape.ripple_order);
    const auto phase_ripple = ripple(rng, shape.ripple_order);
    DeviceImpairment dev;
    dev.mac = mac;
    dev.seed = seed;
    for (int k = 0; k < kSubcarriers; ++k) {
        const double mag = 1.0 + shape.gain_delta * gain_ripple[static_cast<std::size_t>(k)];
        const double phase = shape.phase_max * phase_ripple[static_cast<std::size_t>(k)];
        dev.psi[static_cast<std::size_t>(k)] = std::polar(mag, phase);
    }
    return dev;
}

ChannelMode parse_channel_mode(const std::string& text) {
    if (text == "static") return ChannelMode::kStatic;
    if (text == "dynamic") return ChannelMode::kDynamic;
    throw std::invalid_argument("unknown channel mode: \"" + text + "\" (want static|dynamic)");
}

std::string to_string(ChannelMode mode) {
    return mode == ChannelMode::kStatic ? "static" : "dynamic";
}

std::array<std::complex<double>, kSubcarriers> ChannelState::response() const {
    std::array<std::complex<double>, kSubcarriers> h{};
    for (int k = 0; k < kSubcarriers; ++k) {
        std::complex<double> acc{0.0, 0.0};
        for (const auto& tap : taps) {
            const double angle = -2.0 * M_PI * k * tap.delay_samples / kSubcarriers;
            acc += tap.gain * std::polar(1.0, angle);
        }
        h[static_cast<std::size_t>(k)] = acc;
    }
    return h;
}

std::uint64_t ChannelState::tap_hash() const {
    // FNV-1a over the raw tap bytes.
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    const auto mix = [&hash](double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof(bits));
        for (int i = 0; i < 8; ++i) {
            hash ^= (bits >> (8 * i)) & 0xff;
            hash *= 0x100000001b3ULL;
        }
    };
    for (const auto& tap : taps) {
        mix(tap.delay_samples);
        mix(tap.gain.real());
        mix(tap.gain.imag());
    }
    return hash;
}

void SimConfig::validate() const {
    if (devices < 1) throw std::invalid_argument("devices must be >= 1");
    if (packets_per_device < 1) throw std::invalid_argument("packets_per_device must be >= 1");
    if (snr_db_lo > snr_db_hi) throw std::invalid_argument("snr range lo > hi");
    if (snr_db_lo < 0.0 || snr_db_hi > 60.0) {
        throw std::invalid_argument("snr range must lie within [0, 60] dB");
    }
    if (positions < 1) throw std::invalid_argument("positions must be >= 1");
    if (coherence_block < 1) throw std::invalid_argument("coherence_block must be >= 1");
    if (fading_block < 1 || fading_block > coherence_block) {
        throw std::invalid_argument("fading_block must lie in [1, coherence_block]");
    }
    if (train_frac <= 0.0 || val_frac < 0.0 || train_frac + val_frac >= 1.0) {
        throw std::invalid_argument("split fractions must satisfy 0 < train, 0 <= val, train + val < 1");
    }
    if (channel.min_taps < 1 || channel.max_taps < channel.min_taps) {
        throw std::invalid_argument("bad tap count range");
    }
}

KvBlock SimConfig::to_kv() const {
    KvBlock kv;
    kv.set("devices", devices);
    kv.set("packets_per_device", packets_per_device);
    kv.set("window_hint", window_hint);
    kv.set("snr_db_lo", snr_db_lo);
    kv.set("snr_db_hi", snr_db_hi);
    kv.set("mode", to_string(mode));
    kv.set("positions", positions);
    kv.set("coherence_block", coherence_block);
    kv.set("fading_block", fading_block);
    kv.set("seed", static_cast<unsigned long long>(seed));
    kv.set("train_frac", train_frac);
    kv.set("val_frac", val_frac);
    kv.set("impairment.gain_delta", impairment.gain_delta);
    kv.set("impairment.phase_max", impairment.phase_max);
    kv.set("impairment.ripple_order", impairment.ripple_order);
    kv.set("channel.min_taps", channel.min_taps);
    kv.set("channel.max_taps", channel.max_taps);
    kv.set("channel.min_excess_delay", channel.min_excess_delay);
    kv.set("channel.delay_spread", channel.delay_spread);
    kv.set("channel.rician_k", channel.rician_k);
    return kv;
}

MacAddress device_mac(int index) {
    if (index < 0 || index > 0xffff) throw std::invalid_argument("device index out of range");
    MacAddress mac;
    mac.bytes = {0x02, 0x00, 0x00, 0x00, static_cast<std::uint8_t>(index >> 8),
                 static_cast<std::uint8_t>(index & 0xff)};
    return mac;
}

ChannelState draw_channel(const SimConfig& cfg, int position, std::int64_t t) {
    if (position < 0 || position >= cfg.positions) {
        throw std::invalid_argument("unknown position " + std::to_string(position));
    }
    const bool dynamic = cfg.mode == ChannelMode::kDynamic;
    const std::int64_t slow_block = dynamic ? t / cfg.coherence_block : 0;
    // Geometry stream: tap count, line of sight, reflector delays and powers.
    Rng slow(mix_seed(cfg.seed, kTagChannel, static_cast<std::uint64_t>(position),
                      static_cast<std::uint64_t>(slow_block)));

    ChannelState ch;
    ch.mode = cfg.mode;
    ch.position_id = position;

    const ChannelShape& shape = cfg.channel;
    const int n_taps = static_cast<int>(slow.uniform_int(shape.min_taps, shape.max_taps));
    const bool has_los = shape.rician_k > 0.0;
    const double los_power = has_los ? shape.rician_k / (shape.rician_k + 1.0) : 0.0;
    const double scatter_power = has_los ? 1.0 / (shape.rician_k + 1.0) : 1.0;

    if (has_los) {
        Tap los;
        los.delay_samples = slow.uniform(0.0, 2.0);
        los.gain = std::polar(std::sqrt(los_power), slow.uniform(0.0, 2.0 * M_PI));
        ch.taps.push_back(los);
    }
    const int n_scatter = std::max(1, n_taps - (has_los ? 1 : 0));
    std::vector<double> delays(static_cast<std::size_t>(n_scatter));
    for (auto& d : delays) d = slow.uniform(shape.min_excess_delay, shape.delay_spread);
    std::sort(delays.begin(), delays.end());
    // Exponential power-delay profile, normalized to the scatter power budget.
    const double decay = shape.delay_spread / 3.0;
    std::vector<double> profile(delays.size());
    double profile_sum = 0.0;
    for (std::size_t i = 0; i < delays.size(); ++i) {
        profile[i] = std::exp(-delays[i] / decay);
        profile_sum += profile[i];
    }

    // Fading stream: scattered-tap gains. Static channels keep the slow
    // stream's draw forever; dynamic ones fade every fading_block packets.
    Rng fast = dynamic ? Rng(mix_seed(cfg.seed, kTagFading, static_cast<std::uint64_t>(position),
                                      static_cast<std::uint64_t>(slow_block),
                                      static_cast<std::uint64_t>(t / cfg.fading_block)))
                       : slow.fork(kTagFading);
    for (std::size_t i = 0; i < delays.size(); ++i) {
        Tap tap;
        tap.delay_samples = delays[i];
        tap.gain = fast.complex_normal(scatter_power * profile[i] / profile_sum);
        ch.taps.push_back(tap);
    }
    return ch;
}

Emitted emit_sample(const DeviceImpairment& dev, const ChannelState& ch, double snr_db,
                    std::int64_t seq, Rng& rng) {
    Emitted out;
    out.h = ch.response();

    std::array<std::complex<double>, kSubcarriers> signal{};
    double signal_power = 0.0;
    for (int k = 0; k < kSubcarriers; ++k) {
        signal[static_cast<std::size_t>(k)] =
            out.h[static_cast<std::size_t>(k)] * dev.psi[static_cast<std::size_t>(k)];
        signal_power += std::norm(signal[static_cast<std::size_t>(k)]);
    }
    signal_power /= kSubcarriers;

    const bool noiseless = std::isinf(snr_db);
    const double noise_var = noiseless ? 0.0 : signal_power / std::pow(10.0, snr_db / 10.0);
    for (int k = 0; k < kSubcarriers; ++k) {
        out.eps[static_cast<std::size_t>(k)] =
            noiseless ? std::complex<double>{0.0, 0.0} : rng.complex_normal(noise_var);
        out.h_hat[static_cast<std::size_t>(k)] =
            signal[static_cast<std::size_t>(k)] + out.eps[static_cast<std::size_t>(k)];
    }

    double peak = 0.0;
    for (const auto& v : out.h_hat) peak = std::max({peak, std::abs(v.real()), std::abs(v.imag())});
    const double scale = peak > 0.0 ? kQuantTarget / peak : 0.0;

    CsiRecord& rec = out.record;
    rec.mac = dev.mac;
    rec.seq = seq;
    rec.noise_floor_dbm = kNoiseFloorDbm;
    rec.rssi_dbm = kNoiseFloorDbm + std::min(snr_db, kSnrInfDb);
    for (int k = 0; k < kSubcarriers; ++k) {
        rec.csi_raw[static_cast<std::size_t>(2 * k)] =
            static_cast<int>(std::lround(out.h_hat[static_cast<std::size_t>(k)].real() * scale));
        rec.csi_raw[static_cast<std::size_t>(2 * k + 1)] =
            static_cast<int>(std::lround(out.h_hat[static_cast<std::size_t>(k)].imag() * scale));
    }
    return out;
}

CsiRecord emit_record(const DeviceImpairment& dev, const ChannelState& ch, double snr_db,
                      std::int64_t seq, Rng& rng) {
    return emit_sample(dev, ch, snr_db, seq, rng).record;
}

DatasetSummary gen_dataset(const SimConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    std::filesystem::create_directories(out_dir);

    const int n_train = static_cast<int>(std::floor(cfg.packets_per_device * cfg.train_frac));
    const int n_val = static_cast<int>(std::floor(cfg.packets_per_device * cfg.val_frac));
    const int n_test = cfg.packets_per_device - n_train - n_val;
    const std::array<int, 3> split_len = {n_train, n_val, n_test};
    const std::array<int, 3> split_base = {0, n_train, n_train + n_val};
    const std::array<const char*, 3> split_name = {"train", "val", "test"};

    std::vector<DeviceImpairment> devices;
    devices.reserve(static_cast<std::size_t>(cfg.devices));
    for (int d = 0; d < cfg.devices; ++d) {
        devices.push_back(make_device(cfg.seed, device_mac(d), cfg.impairment));
    }

    DatasetSummary summary;
    for (int s = 0; s < 3; ++s) {
        const std::string path =
            (std::filesystem::path(out_dir) / (std::string(split_name[static_cast<std::size_t>(s)]) + ".csv"))
                .string();
        summary.files[static_cast<std::size_t>(s)] = path;
        std::ofstream out(path, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write dataset file: " + path);
        out << csi_csv_header() << '\n';

        // Per-device state for this split.
        struct DeviceStream {
            SimConfig channel_cfg;  // seed adjusted per (device, split) in dynamic mode
            Rng noise;
            ChannelState channel;
            std::int64_t block = -1;
        };
        std::vector<DeviceStream> streams;
        for (int d = 0; d < cfg.devices; ++d) {
            SimConfig ch_cfg = cfg;
            if (cfg.mode == ChannelMode::kDynamic) {
                ch_cfg.seed = mix_seed(cfg.seed, kTagDynamicSplit, static_cast<std::uint64_t>(d),
                                       static_cast<std::uint64_t>(s));
            }
            streams.push_back(DeviceStream{
                ch_cfg,
                Rng(mix_seed(cfg.seed, kTagNoise, static_cast<std::uint64_t>(d),
                             static_cast<std::uint64_t>(s))),
                ChannelState{},
                -1});
        }

        long long rows = 0;
        for (int t = 0; t < split_len[static_cast<std::size_t>(s)]; ++t) {
            for (int d = 0; d < cfg.devices; ++d) {
                DeviceStream& ds = streams[static_cast<std::size_t>(d)];
                const int position = d % cfg.positions;
                const std::int64_t block =
                    cfg.mode == ChannelMode::kDynamic ? t / cfg.fading_block : 0;
                if (block != ds.block) {
                    ds.channel = draw_channel(ds.channel_cfg, position, t);
                    ds.block = block;
                    summary.tap_hashes[static_cast<std::size_t>(s)].push_back(ds.channel.tap_hash());
                }
                const double snr = ds.noise.uniform(cfg.snr_db_lo, cfg.snr_db_hi);
                const std::int64_t seq = split_base[static_cast<std::size_t>(s)] + t;
                const CsiRecord rec =
                    emit_record(devices[static_cast<std::size_t>(d)], ds.channel, snr, seq, ds.noise);
                out << serialize_record(rec) << '\n';
                ++rows;
            }
        }
        if (!out) throw std::runtime_error("write failed: " + path);
        summary.rows[static_cast<std::size_t>(s)] = rows;
    }

    KvBlock manifest = cfg.to_kv();
    manifest.set("schema", std::string("csi_csv_v1"));
    for (int s = 0; s < 3; ++s) {
        const auto idx = static_cast<std::size_t>(s);
        manifest.set(std::string("file_") + split_name[idx],
                     std::filesystem::path(summary.files[idx]).filename().string());
        manifest.set(std::string("rows_") + split_name[idx], summary.rows[idx]);
        manifest.set(std::string("seq_base_") + split_name[idx], split_base[idx]);
        manifest.set(std::string("channel_draws_") + split_name[idx],
                     static_cast<long long>(summary.tap_hashes[idx].size()));
    }
    summary.manifest_path = (std::filesystem::path(out_dir) / "manifest.txt").string();
    manifest.save(summary.manifest_path);
    return summary;
}

}  // namespace csifp::sim
