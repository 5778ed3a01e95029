#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "ura/common.hpp"

namespace ura {

inline constexpr std::size_t kCrcBits = 16;
inline constexpr double kLlrClip = 40.0;

/// CRC-16, polynomial 0x1021, zero initial register, MSB-first over the bit sequence.
std::uint16_t crc16(std::span<const std::uint8_t> bits);
Bits crc16_bits(std::span<const std::uint8_t> bits);

/// Gray-mapped unit-energy QPSK: bits (b0, b1) -> ((1-2 b0) + j (1-2 b1)) / sqrt(2).
CVector qpsk_modulate(std::span<const std::uint8_t> bits);

/// Bit LLRs log P(0)/P(1) for y = s + n with n ~ CN(0, noise_var).
RVector qpsk_demodulate(const CVector& symbols, double noise_var);

struct PolarCodeParams {
    std::size_t block_bits = 0;    // 2 n_d, power of two
    std::size_t payload_bits = 0;  // B - J
    double design_sinr_db = 0.0;   // per QPSK symbol
    std::size_t list_size = 32;
};

/// CRC-aided polar code in natural (non bit-reversed) order.
class PolarCodec {
public:
    explicit PolarCodec(const PolarCodeParams& params);

    const PolarCodeParams& params() const { return params_; }
    std::size_t block_bits() const { return params_.block_bits; }
    std::size_t payload_bits() const { return params_.payload_bits; }
    std::size_t info_bits() const { return info_.size(); }
    std::size_t symbols() const { return params_.block_bits / 2; }

    /// Sorted info-bit positions (payload followed by CRC, in this order).
    const std::vector<std::size_t>& info_positions() const { return info_; }
    const std::vector<std::uint8_t>& frozen_mask() const { return frozen_; }

    Bits encode_bits(std::span<const std::uint8_t> payload) const;
    CVector encode(std::span<const std::uint8_t> payload) const;

    /// All distinct CRC-passing survivors of list decoding, best path metric first.
    std::vector<Bits> decode_list(const RVector& llr) const;
    std::vector<Bits> decode_list(const RVector& llr, std::size_t list_size) const;

private:
    PolarCodeParams params_;
    unsigned depth_ = 0;
    std::vector<std::size_t> info_;
    std::vector<std::uint8_t> frozen_;
};

/// ln of the Bhattacharyya parameters of the synthetic channels for BPSK-equivalent
/// bit SNR `bit_snr` (QPSK symbol SINR), natural bit order.
std::vector<double> bhattacharyya_log(std::size_t block_bits, double bit_snr);

/// Polar transform x = u F^{(x)n} in natural order.
void polar_transform(std::vector<std::uint8_t>& bits);

struct ErrorPoint {
    double sinr_db;
    std::size_t trials;
    std::size_t errors;       // transmitted payload absent from list
    std::size_t undetected;   // list non-empty but best entry wrong
    double pe() const { return trials ? static_cast<double>(errors) / static_cast<double>(trials) : 0.0; }
};

/// Single-user AWGN Monte-Carlo of the CRC-aided list decoder.
std::vector<ErrorPoint> measure_error_curve(const PolarCodec& codec, const std::vector<double>& sinr_db,
                                            std::size_t trials, std::uint64_t seed);

void write_error_curve_csv(std::ostream& os, const std::vector<ErrorPoint>& curve);

}  // namespace ura
