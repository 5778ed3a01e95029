#pragma once

#include <iosfwd>
#include <vector>

#include "ura/amp_detector.hpp"
#include "ura/common.hpp"
#include "ura/pilot_codebook.hpp"
#include "ura/polar_codec.hpp"

namespace ura {

struct ChannelEstimate {
    std::vector<std::size_t> pilots;  // detected pilot index per row
    CMatrix h;                        // K x M, unit-variance channel estimate per row
    RVector mse;                      // sigma_k^2, diagonal of the error covariance
    RVector gamma;                    // assumed received power per row
    CMatrix error_cov;                // K x K, per-antenna error covariance
    bool regularized = false;

    std::size_t size() const { return pilots.size(); }
};

/// LMMSE estimate of H in Y_p = A_I Gamma^{1/2} H + Z with H ~ CN(0, I).
/// With B = A_I Gamma^{1/2}: H_hat = (B^H B + N0 I)^{-1} B^H Y_p, C_e = N0 (B^H B + N0 I)^{-1}.
ChannelEstimate lmmse_estimate(const CMatrix& pilot_rx, const CMatrix& pilots_detected, const RVector& gamma,
                               double noise_var);

/// S_hat = Gamma^{-1/2} H_hat Y_d^H, K x n_d. Row k is the conjugate of a scaled copy of s_k.
CMatrix mrc(const CMatrix& data_rx, const ChannelEstimate& estimate);

/// conj(S_hat row k) / |h_hat_k|^2, approximately s_k.
CVector mrc_soft_symbols(const CMatrix& mrc_out, const ChannelEstimate& estimate, std::size_t row);

struct Cancellation {
    std::size_t row;
    CVector symbols;  // re-encoded QPSK sequence, n_d
};

/// Y_d - sum sqrt(gamma_k) s_k h_hat_k^T over the given rows.
CMatrix sic_cancel(const CMatrix& data_rx, const std::vector<Cancellation>& decoded, const ChannelEstimate& estimate);

enum class SicStrategy { None, Full, Grouped };
const char* to_string(SicStrategy s);
SicStrategy sic_strategy_from_string(const std::string& s);

struct SicPlan {
    SicStrategy strategy = SicStrategy::None;
    std::vector<double> division_db;  // interior division points on the received power (dB)

    /// Group of a row with estimated received power gamma: 0 is the strongest.
    std::size_t group_of(double gamma) const;
    std::size_t groups() const { return division_db.size() + 1; }
};

/// Rows per stage, in decoding order.
std::vector<std::vector<std::size_t>> sic_stages(const SicPlan& plan, const RVector& gamma);

enum class NoiseEstimate { Analysis, Empirical };

struct ReceiverConfig {
    DenoiserSpec denoiser;
    AmpOptions amp;
    SelectionRule selection = TopK{1, 0};
    SicPlan sic;
    double noise_var = 1.0;
    unsigned pilot_bits = 0;
    unsigned message_bits = 0;
    NoiseEstimate noise_estimate = NoiseEstimate::Analysis;
};

struct StageDiagnostics {
    std::size_t stage = 0;
    std::size_t group = 0;
    std::size_t rows = 0;
    std::size_t decoded = 0;       // messages output from this stage
    std::size_t crc_failures = 0;  // rows with an empty CRC-passing list
    std::size_t collisions = 0;    // rows with more than one message
    double residual_energy = 0;    // |Y_d|_F^2 after cancellation
};

struct ReceiverOutput {
    std::vector<Bits> messages;
    DetectionResult detection;
    ChannelEstimate estimate;
    std::vector<StageDiagnostics> stages;
};

/// detect -> LMMSE -> per stage (MRC -> demodulate -> list decode -> cancel).
ReceiverOutput run_receiver(const CMatrix& pilot_rx, const CMatrix& data_rx, const PilotMatrix& pilots,
                            const PolarCodec& codec, const ReceiverConfig& config);

/// Same pipeline from an externally supplied detection.
ReceiverOutput run_receiver(const CMatrix& pilot_rx, const CMatrix& data_rx, const PilotMatrix& pilots,
                            const PolarCodec& codec, const ReceiverConfig& config, DetectionResult detection);

void write_stage_csv(std::ostream& os, const std::vector<StageDiagnostics>& stages);

/// Channel-coded QPSK sequence of a full message: payload = bits after the J-bit pilot prefix.
CVector encode_message(const PolarCodec& codec, const Bits& message, unsigned pilot_bits);

}  // namespace ura
