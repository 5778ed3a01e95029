#include "ura/receiver.hpp"

#include <algorithm>
#include <numeric>
#include <ostream>

namespace ura {

ChannelEstimate lmmse_estimate(const CMatrix& pilot_rx, const CMatrix& pilots_detected, const RVector& gamma,
                               double noise_var) {
    const Eigen::Index k = pilots_detected.cols();
    if (k == 0) throw ConfigError("LMMSE needs a non-empty detected set");
    if (gamma.size() != k) throw ConfigError("LMMSE: one power per detected pilot required");
    if (pilots_detected.rows() != pilot_rx.rows()) throw ConfigError("LMMSE: pilot length mismatch");
    if (!(noise_var >= 0)) throw ConfigError("LMMSE: negative noise variance");
    for (Eigen::Index i = 0; i < k; ++i)
        if (!(gamma(i) > 0)) throw ConfigError("LMMSE: powers must be positive");

    ChannelEstimate est;
    est.gamma = gamma;
    const CMatrix b = pilots_detected * gamma.cwiseSqrt().asDiagonal();
    CMatrix gram = b.adjoint() * b;
    gram.diagonal().array() += noise_var;

    Eigen::LLT<CMatrix> llt(gram);
    if (llt.info() != Eigen::Success || llt.rcond() < 1e-13) {
        const double delta = 1e-10 * std::max(gram.diagonal().real().mean(), 1e-300);
        gram.diagonal().array() += delta;
        llt.compute(gram);
        est.regularized = true;
        if (llt.info() != Eigen::Success) throw DivergenceError("LMMSE system is singular even after regularization");
    }
    est.h = llt.solve(b.adjoint() * pilot_rx);
    CMatrix cov = noise_var * llt.solve(CMatrix::Identity(k, k));
    est.error_cov = 0.5 * (cov + cov.adjoint());
    est.mse = est.error_cov.diagonal().real().cwiseMax(0.0).cwiseMin(1.0);
    return est;
}

CMatrix mrc(const CMatrix& data_rx, const ChannelEstimate& estimate) {
    if (data_rx.cols() != estimate.h.cols()) throw ConfigError("MRC: antenna count mismatch");
    const RVector inv = estimate.gamma.cwiseSqrt().cwiseInverse();
    return inv.asDiagonal() * (estimate.h * data_rx.adjoint());
}

CVector mrc_soft_symbols(const CMatrix& mrc_out, const ChannelEstimate& estimate, std::size_t row) {
    const auto r = static_cast<Eigen::Index>(row);
    const double e = estimate.h.row(r).squaredNorm();
    if (!(e > 0)) return CVector::Zero(mrc_out.cols());
    return mrc_out.row(r).adjoint() / e;
}

CMatrix sic_cancel(const CMatrix& data_rx, const std::vector<Cancellation>& decoded, const ChannelEstimate& estimate) {
    CMatrix out = data_rx;
    for (const auto& c : decoded) {
        const auto r = static_cast<Eigen::Index>(c.row);
        if (c.symbols.size() != data_rx.rows()) throw ConfigError("SIC: codeword length mismatch");
        out.noalias() -= (std::sqrt(estimate.gamma(r)) * c.symbols) * estimate.h.row(r);
    }
    return out;
}

const char* to_string(SicStrategy s) {
    switch (s) {
        case SicStrategy::None: return "none";
        case SicStrategy::Full: return "full";
        case SicStrategy::Grouped: return "grouped";
    }
    return "?";
}

SicStrategy sic_strategy_from_string(const std::string& s) {
    if (s == "none") return SicStrategy::None;
    if (s == "full") return SicStrategy::Full;
    if (s == "grouped") return SicStrategy::Grouped;
    throw ConfigError("unknown SIC strategy '" + s + "' (expected none, full or grouped)");
}

std::size_t SicPlan::group_of(double gamma) const {
    const double gdb = gamma > 0 ? linear_to_db(gamma) : -std::numeric_limits<double>::infinity();
    std::size_t q = 0;
    for (double d : division_db)
        if (gdb < d) ++q;
    return q;
}

std::vector<std::vector<std::size_t>> sic_stages(const SicPlan& plan, const RVector& gamma) {
    const auto k = static_cast<std::size_t>(gamma.size());
    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return gamma(static_cast<Eigen::Index>(a)) > gamma(static_cast<Eigen::Index>(b));
    });
    std::vector<std::vector<std::size_t>> stages;
    switch (plan.strategy) {
        case SicStrategy::None:
            if (k) stages.push_back(order);
            break;
        case SicStrategy::Full:
            for (auto r : order) stages.push_back({r});
            break;
        case SicStrategy::Grouped: {
            std::vector<std::vector<std::size_t>> g(plan.groups());
            for (auto r : order) g[plan.group_of(gamma(static_cast<Eigen::Index>(r)))].push_back(r);
            for (auto& v : g)
                if (!v.empty()) stages.push_back(std::move(v));
            break;
        }
    }
    return stages;
}

CVector encode_message(const PolarCodec& codec, const Bits& message, unsigned pilot_bits) {
    if (message.size() != pilot_bits + codec.payload_bits()) throw ConfigError("message length does not match J + payload");
    return codec.encode(std::span<const std::uint8_t>(message).subspan(pilot_bits));
}

ReceiverOutput run_receiver(const CMatrix& pilot_rx, const CMatrix& data_rx, const PilotMatrix& pilots,
                            const PolarCodec& codec, const ReceiverConfig& config) {
    auto det = detect(pilots, pilot_rx, config.denoiser, config.amp, config.selection);
    return run_receiver(pilot_rx, data_rx, pilots, codec, config, std::move(det));
}

namespace {

double empirical_noise_var(const CVector& soft) {
    // median of the distance to the nearest constellation point, scaled for a complex Gaussian
    const double a = 1.0 / std::sqrt(2.0);
    std::vector<double> d(static_cast<std::size_t>(soft.size()));
    for (Eigen::Index j = 0; j < soft.size(); ++j) {
        const cd hard{soft(j).real() >= 0 ? a : -a, soft(j).imag() >= 0 ? a : -a};
        d[static_cast<std::size_t>(j)] = std::norm(soft(j) - hard);
    }
    if (d.empty()) return 1.0;
    std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2), d.end());
    // |w|^2 is exponential with mean var, median var ln 2
    return std::max(d[d.size() / 2] / std::log(2.0), 1e-12);
}

}  // namespace

ReceiverOutput run_receiver(const CMatrix& pilot_rx, const CMatrix& data_rx, const PilotMatrix& pilots,
                            const PolarCodec& codec, const ReceiverConfig& config, DetectionResult detection) {
    if (static_cast<std::size_t>(data_rx.rows()) != codec.symbols()) throw ConfigError("data phase length does not match the code");
    if (config.message_bits != config.pilot_bits + codec.payload_bits())
        throw ConfigError("B must equal J + payload bits of the code");
    ReceiverOutput out;
    out.detection = std::move(detection);
    if (out.detection.active.empty()) return out;

    const auto k = static_cast<Eigen::Index>(out.detection.active.size());
    RVector gamma(k);
    double gmax = 0;
    for (Eigen::Index i = 0; i < k; ++i) gmax = std::max(gmax, out.detection.gamma[static_cast<std::size_t>(i)]);
    const double gfloor = std::max(gmax, 1e-300) * 1e-12;
    for (Eigen::Index i = 0; i < k; ++i) gamma(i) = std::max(out.detection.gamma[static_cast<std::size_t>(i)], gfloor);
    const CMatrix a = pilots.columns(out.detection.active);
    out.estimate = lmmse_estimate(pilot_rx, a, gamma, config.noise_var);
    out.estimate.pilots = out.detection.active;

    const auto m = static_cast<double>(pilot_rx.cols());
    const auto stages = sic_stages(config.sic, gamma);
    // interference bookkeeping for the SINR-based noise estimate
    std::vector<int> state(static_cast<std::size_t>(k), 0);  // 0 pending, 1 cancelled, 2 left in the signal
    CMatrix y = data_rx;
    for (std::size_t s = 0; s < stages.size(); ++s) {
        const auto& rows = stages[s];
        StageDiagnostics diag;
        diag.stage = s;
        diag.group = config.sic.strategy == SicStrategy::Grouped ? config.sic.group_of(gamma(static_cast<Eigen::Index>(rows.front()))) : s;
        diag.rows = rows.size();

        double cancelled = 0, present = 0;
        for (Eigen::Index i = 0; i < k; ++i) {
            const double g = gamma(i);
            if (state[static_cast<std::size_t>(i)] == 1) cancelled += out.estimate.mse(i) * g;
            else present += g;
        }
        ChannelEstimate sub;
        sub.h.resize(static_cast<Eigen::Index>(rows.size()), out.estimate.h.cols());
        sub.gamma.resize(static_cast<Eigen::Index>(rows.size()));
        for (std::size_t j = 0; j < rows.size(); ++j) {
            sub.h.row(static_cast<Eigen::Index>(j)) = out.estimate.h.row(static_cast<Eigen::Index>(rows[j]));
            sub.gamma(static_cast<Eigen::Index>(j)) = gamma(static_cast<Eigen::Index>(rows[j]));
        }
        const CMatrix s_hat = mrc(y, sub);

        std::vector<Cancellation> cancel;
        for (std::size_t j = 0; j < rows.size(); ++j) {
            const auto r = static_cast<Eigen::Index>(rows[j]);
            const CVector soft = mrc_soft_symbols(s_hat, sub, j);
            double noise;
            if (config.noise_estimate == NoiseEstimate::Analysis) {
                const double g = gamma(r), sig = out.estimate.mse(r);
                const double denom = config.noise_var + sig * g + cancelled + (present - g);
                const double sinr = m * (1.0 - sig) * g / std::max(denom, 1e-300);
                noise = 1.0 / std::max(sinr, 1e-12);
            } else {
                noise = empirical_noise_var(soft);
            }
            const auto list = codec.decode_list(qpsk_demodulate(soft, noise));
            if (list.empty()) ++diag.crc_failures;
            if (list.size() > 1) ++diag.collisions;
            const Bits prefix = pilot_to_prefix(static_cast<std::uint32_t>(out.detection.active[static_cast<std::size_t>(r)]), config.pilot_bits);
            for (const auto& payload : list) {
                Bits msg = prefix;
                msg.insert(msg.end(), payload.begin(), payload.end());
                if (std::find(out.messages.begin(), out.messages.end(), msg) == out.messages.end()) {
                    out.messages.push_back(std::move(msg));
                    ++diag.decoded;
                }
            }
            // rows carrying several messages share one channel estimate and are not cancelled
            if (list.size() == 1 && config.sic.strategy != SicStrategy::None)
                cancel.push_back({rows[j], codec.encode(list.front())});
        }
        if (!cancel.empty()) y = sic_cancel(y, cancel, out.estimate);
        for (auto r : rows) state[r] = 2;
        for (const auto& c : cancel) state[c.row] = 1;
        diag.residual_energy = y.squaredNorm();
        out.stages.push_back(diag);
    }
    return out;
}

void write_stage_csv(std::ostream& os, const std::vector<StageDiagnostics>& stages) {
    os << "stage,group,rows,decoded,crc_failures,collisions,residual_energy\n";
    for (const auto& d : stages)
        os << d.stage << ',' << d.group << ',' << d.rows << ',' << d.decoded << ',' << d.crc_failures << ','
           << d.collisions << ',' << d.residual_energy << '\n';
}

}  // namespace ura
