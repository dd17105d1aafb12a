#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "specmap/errors.hpp"
#include "specmap/rng.hpp"

namespace specmap {

// Air-to-ground link: single real LoS tap h = varpi * d^{-upsilon}, AWGN
// scaled so the requested SNR holds at the receiver, Gray-mapped 64QAM with
// coherent hard decisions.
struct ChannelConfig {
    double varpi = 1e-3;     // reference gain at 1 m
    double upsilon = 2.0;    // LoS path loss exponent
    double distance_m = 100.0;
    double snr_db = 12.0;
    bool snr_infinite = false;
    uint64_t rng_seed = 0;

    void validate() const {
        if (!(distance_m > 0.0)) throw ValidationError("ChannelConfig: distance must be > 0");
        if (upsilon < 0.0) throw ValidationError("ChannelConfig: upsilon must be >= 0");
        if (!(varpi > 0.0)) throw ValidationError("ChannelConfig: varpi must be > 0");
    }
};

inline double channel_gain(const ChannelConfig& cfg) {
    return cfg.varpi * std::pow(cfg.distance_m, -cfg.upsilon);
}

// sigma such that E[|h x|^2] / sigma^2 = 10^(snr/10); sigma is the std-dev
// of the full complex noise sample.
inline double snr_to_noise_sigma(double snr_db, double h, double symbol_energy) {
    if (std::isinf(snr_db)) return 0.0;
    const double snr = std::pow(10.0, snr_db / 10.0);
    return std::sqrt(h * h * symbol_energy / snr);
}

namespace qam64 {

inline constexpr int kBitsPerSymbol = 6;
// mean constellation energy of the +-{1,3,5,7} lattice per complex symbol
inline const double kNorm = 1.0 / std::sqrt(42.0);

inline int gray(int v) { return v ^ (v >> 1); }

inline int inverse_gray(int g) {
    int v = g;
    v ^= v >> 1;
    v ^= v >> 2;
    return v & 7;
}

// 3 bits -> PAM level; Gray labeling so neighbouring levels differ in 1 bit
inline double pam_level(int bits3) { return (2.0 * inverse_gray(bits3) - 7.0) * kNorm; }

inline int pam_decide(double x) {
    int level = int(std::lround((x / kNorm + 7.0) / 2.0));
    level = std::min(7, std::max(0, level));
    return gray(level);
}

inline std::complex<double> modulate(int bits6) {
    return {pam_level((bits6 >> 3) & 7), pam_level(bits6 & 7)};
}

inline int demodulate(std::complex<double> z) {
    return (pam_decide(z.real()) << 3) | pam_decide(z.imag());
}

}  // namespace qam64

// One scale's worth of codebook indices headed over the air.
struct ScaleIndices {
    uint8_t scale_id = 0;
    std::vector<int> indices;  // each in [0, 256)
};

// Wire format, byte exact:
//   repeat per scale: [scale_id: u8][token_count: u32 LE][token_count bytes]
// Each index byte is one 8-bit codebook index in token scan order.
inline std::vector<uint8_t> encode_payload(const std::vector<ScaleIndices>& scales) {
    std::vector<uint8_t> out;
    for (const auto& s : scales) {
        out.push_back(s.scale_id);
        const uint32_t n = uint32_t(s.indices.size());
        out.push_back(uint8_t(n & 0xff));
        out.push_back(uint8_t((n >> 8) & 0xff));
        out.push_back(uint8_t((n >> 16) & 0xff));
        out.push_back(uint8_t((n >> 24) & 0xff));
        for (int idx : s.indices) {
            if (idx < 0 || idx > 255) throw ValidationError("encode_payload: index out of range");
            out.push_back(uint8_t(idx));
        }
    }
    return out;
}

inline std::vector<ScaleIndices> decode_payload(const std::vector<uint8_t>& bytes) {
    std::vector<ScaleIndices> scales;
    size_t at = 0;
    while (at < bytes.size()) {
        if (bytes.size() - at < 5) throw ValidationError("decode_payload: truncated header");
        ScaleIndices s;
        s.scale_id = bytes[at++];
        uint32_t n = uint32_t(bytes[at]) | (uint32_t(bytes[at + 1]) << 8) |
                     (uint32_t(bytes[at + 2]) << 16) | (uint32_t(bytes[at + 3]) << 24);
        at += 4;
        if (bytes.size() - at < n) throw ValidationError("decode_payload: truncated body");
        s.indices.reserve(n);
        for (uint32_t i = 0; i < n; ++i) s.indices.push_back(int(bytes[at++]));
        scales.push_back(std::move(s));
    }
    return scales;
}

struct TransportStats {
    size_t symbols = 0;
    size_t symbol_errors = 0;
    size_t payload_bytes = 0;
    size_t byte_errors = 0;
};

// Bytes -> bits (MSB first) -> 64QAM -> y = h x + n -> hard decision -> bytes.
// Bit count is padded to a multiple of 6 with zeros; the pad is dropped on
// decode because the byte count is known.
inline std::vector<uint8_t> transmit_bytes(const std::vector<uint8_t>& payload,
                                           const ChannelConfig& cfg,
                                           TransportStats* stats = nullptr) {
    cfg.validate();
    const double h = channel_gain(cfg);
    const double sigma =
        cfg.snr_infinite ? 0.0 : snr_to_noise_sigma(cfg.snr_db, h, 1.0);
    Rng rng = Rng::derive(cfg.rng_seed, 0xc4a7u);

    const size_t n_bits = payload.size() * 8;
    const size_t n_symbols = (n_bits + 5) / 6;
    std::vector<uint8_t> received(payload.size(), 0);

    const auto bit_at = [&](size_t i) -> int {
        if (i >= n_bits) return 0;  // pad
        return (payload[i / 8] >> (7 - i % 8)) & 1;
    };

    size_t symbol_errors = 0;
    for (size_t s = 0; s < n_symbols; ++s) {
        int bits6 = 0;
        for (int b = 0; b < 6; ++b) bits6 = (bits6 << 1) | bit_at(s * 6 + size_t(b));
        const std::complex<double> x = qam64::modulate(bits6);
        std::complex<double> y = h * x;
        if (sigma > 0.0) {
            const double half = sigma / std::sqrt(2.0);
            y += std::complex<double>(half * rng.next_normal(), half * rng.next_normal());
        }
        const int got = qam64::demodulate(y / h);
        if (got != bits6) ++symbol_errors;
        for (int b = 0; b < 6; ++b) {
            const size_t i = s * 6 + size_t(b);
            if (i >= n_bits) break;
            if ((got >> (5 - b)) & 1) received[i / 8] |= uint8_t(1u << (7 - i % 8));
        }
    }
    if (stats) {
        stats->symbols += n_symbols;
        stats->symbol_errors += symbol_errors;
        stats->payload_bytes += payload.size();
        for (size_t i = 0; i < payload.size(); ++i)
            stats->byte_errors += payload[i] != received[i];
    }
    return received;
}

// Index-level transport: pack, send, unpack. Headers are delivered out of
// band (the receiver knows the token layout), so only index bytes face noise.
inline std::vector<ScaleIndices> transmit_indices(const std::vector<ScaleIndices>& scales,
                                                  const ChannelConfig& cfg,
                                                  TransportStats* stats = nullptr) {
    std::vector<uint8_t> body;
    for (const auto& s : scales)
        for (int idx : s.indices) {
            if (idx < 0 || idx > 255) throw ValidationError("transmit_indices: index out of range");
            body.push_back(uint8_t(idx));
        }
    const auto rx = transmit_bytes(body, cfg, stats);
    std::vector<ScaleIndices> out;
    size_t at = 0;
    for (const auto& s : scales) {
        ScaleIndices r;
        r.scale_id = s.scale_id;
        r.indices.reserve(s.indices.size());
        for (size_t i = 0; i < s.indices.size(); ++i) r.indices.push_back(int(rx[at++]));
        out.push_back(std::move(r));
    }
    return out;
}

// Closed-form symbol error rate of square 64QAM at the given receiver SNR.
inline double qam64_ser_analytic(double snr_db) {
    const double snr = std::pow(10.0, snr_db / 10.0);
    const auto Q = [](double x) { return 0.5 * std::erfc(x / std::sqrt(2.0)); };
    const double p8 = 2.0 * (1.0 - 1.0 / 8.0) * Q(std::sqrt(3.0 * snr / 63.0));
    return 1.0 - (1.0 - p8) * (1.0 - p8);
}

// Measured-sample transport for the interpolation baseline: float samples
// quantized to 16-bit fixed point over [-200, 55.35] dBm (step 1/256 dB),
// sent over the same uncoded 64QAM link. At infinite SNR the transport is
// bypassed entirely and samples arrive untouched.
inline std::vector<double> transmit_samples_fixed16(const std::vector<double>& samples,
                                                    const ChannelConfig& cfg,
                                                    TransportStats* stats = nullptr) {
    if (cfg.snr_infinite) return samples;
    constexpr double kOffset = -200.0;
    constexpr double kStep = 1.0 / 256.0;
    std::vector<uint8_t> bytes;
    bytes.reserve(samples.size() * 2);
    for (double v : samples) {
        int q = int(std::lround((v - kOffset) / kStep));
        q = std::min(65535, std::max(0, q));
        bytes.push_back(uint8_t(q & 0xff));
        bytes.push_back(uint8_t((q >> 8) & 0xff));
    }
    const auto rx = transmit_bytes(bytes, cfg, stats);
    std::vector<double> out(samples.size());
    for (size_t i = 0; i < samples.size(); ++i) {
        const int q = int(rx[2 * i]) | (int(rx[2 * i + 1]) << 8);
        out[i] = kOffset + q * kStep;
    }
    return out;
}

}  // namespace specmap
