#include "ura/pilot_codebook.hpp"

#include <algorithm>
#include <mutex>
#include <numbers>
#include <numeric>

#include <fftw3.h>

#include "ura/rng.hpp"

namespace ura {

namespace detail {

// FFTW planning is not thread-safe; execution with the new-array interface is.
std::mutex& fftw_planner_mutex() {
    static std::mutex m;
    return m;
}

class FftPlan {
public:
    explicit FftPlan(std::size_t n) : n_(n) {
        std::vector<cd> in(n), out(n);
        auto* pin = reinterpret_cast<fftw_complex*>(in.data());
        auto* pout = reinterpret_cast<fftw_complex*>(out.data());
        const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
        std::lock_guard lock(fftw_planner_mutex());
        forward_ = fftw_plan_dft_1d(static_cast<int>(n), pin, pout, FFTW_FORWARD, flags);
        backward_ = fftw_plan_dft_1d(static_cast<int>(n), pin, pout, FFTW_BACKWARD, flags);
    }
    FftPlan(const FftPlan&) = delete;
    FftPlan& operator=(const FftPlan&) = delete;
    ~FftPlan() {
        std::lock_guard lock(fftw_planner_mutex());
        fftw_destroy_plan(forward_);
        fftw_destroy_plan(backward_);
    }

    // out[k] = sum_i in[i] exp(-2 pi j k i / n)
    void forward(const cd* in, cd* out) const {
        fftw_execute_dft(forward_, reinterpret_cast<fftw_complex*>(const_cast<cd*>(in)),
                         reinterpret_cast<fftw_complex*>(out));
    }
    // out[i] = sum_k in[k] exp(+2 pi j k i / n), unnormalized
    void backward(const cd* in, cd* out) const {
        fftw_execute_dft(backward_, reinterpret_cast<fftw_complex*>(const_cast<cd*>(in)),
                         reinterpret_cast<fftw_complex*>(out));
    }
    std::size_t size() const { return n_; }

private:
    std::size_t n_;
    fftw_plan forward_ = nullptr;
    fftw_plan backward_ = nullptr;
};

}  // namespace detail

const char* to_string(PilotKind kind) {
    return kind == PilotKind::SubsampledDft ? "dft" : "gaussian";
}

PilotKind pilot_kind_from_string(const std::string& name) {
    if (name == "dft") return PilotKind::SubsampledDft;
    if (name == "gaussian") return PilotKind::GaussianIid;
    throw ConfigError("unknown pilot kind '" + name + "' (expected dft or gaussian)");
}

PilotMatrix PilotMatrix::build(PilotKind kind, std::size_t rows, std::size_t columns, std::uint64_t seed,
                               bool scramble) {
    if (rows == 0 || columns == 0) throw ConfigError("pilot matrix dimensions must be positive");
    Rng rng(seed);
    PilotMatrix a;
    a.kind_ = kind;
    a.rows_ = rows;
    a.columns_ = columns;
    if (kind == PilotKind::SubsampledDft) {
        if (rows > columns) throw ConfigError("sub-sampled DFT pilots need n_p <= N");
        std::vector<std::size_t> all(columns);
        std::iota(all.begin(), all.end(), std::size_t{0});
        // partial Fisher-Yates: first `rows` entries form a uniform subset
        for (std::size_t i = 0; i < rows; ++i) {
            const std::size_t j = i + static_cast<std::size_t>(rng.uniform() * static_cast<double>(columns - i));
            std::swap(all[i], all[std::min(j, columns - 1)]);
        }
        a.dft_rows_.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(rows));
        std::sort(a.dft_rows_.begin(), a.dft_rows_.end());
        a.phase_.assign(columns, cd{1.0, 0.0});
        if (scramble)
            for (auto& p : a.phase_) p = std::polar(1.0, 2.0 * std::numbers::pi * rng.uniform());
        a.plan_ = std::make_shared<const detail::FftPlan>(columns);
    } else {
        a.dense_.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(columns));
        for (Eigen::Index c = 0; c < a.dense_.cols(); ++c) {
            for (Eigen::Index r = 0; r < a.dense_.rows(); ++r) a.dense_(r, c) = rng.complex_normal();
            a.dense_.col(c) *= std::sqrt(static_cast<double>(rows)) / a.dense_.col(c).norm();
        }
    }
    return a;
}

PilotMatrix PilotMatrix::from_dft_rows(std::vector<std::size_t> rows, std::size_t columns) {
    if (rows.empty() || rows.size() > columns) throw ConfigError("invalid DFT row subset");
    for (auto r : rows)
        if (r >= columns) throw ConfigError("DFT row index out of range");
    PilotMatrix a;
    a.kind_ = PilotKind::SubsampledDft;
    a.rows_ = rows.size();
    a.columns_ = columns;
    a.dft_rows_ = std::move(rows);
    a.phase_.assign(columns, cd{1.0, 0.0});
    a.plan_ = std::make_shared<const detail::FftPlan>(columns);
    return a;
}

CVector PilotMatrix::column(std::size_t index) const {
    if (index >= columns_) throw ConfigError("pilot index out of range");
    if (kind_ == PilotKind::GaussianIid) return dense_.col(static_cast<Eigen::Index>(index));
    CVector col(static_cast<Eigen::Index>(rows_));
    const double n = static_cast<double>(columns_);
    for (std::size_t r = 0; r < rows_; ++r) {
        // reduce the exponent modulo N first to keep the phase argument small
        const auto k = (dft_rows_[r] * index) % columns_;
        col(static_cast<Eigen::Index>(r)) =
            std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k) / n) * phase_[index];
    }
    return col;
}

CMatrix PilotMatrix::columns(std::span<const std::size_t> indices) const {
    CMatrix out(static_cast<Eigen::Index>(rows_), static_cast<Eigen::Index>(indices.size()));
    for (std::size_t j = 0; j < indices.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = column(indices[j]);
    return out;
}

CMatrix PilotMatrix::dense() const {
    if (kind_ == PilotKind::GaussianIid) return dense_;
    std::vector<std::size_t> all(columns_);
    std::iota(all.begin(), all.end(), std::size_t{0});
    return columns(all);
}

CMatrix PilotMatrix::apply(const CMatrix& x) const {
    if (static_cast<std::size_t>(x.rows()) != columns_) throw ConfigError("apply: operand has wrong row count");
    if (kind_ == PilotKind::GaussianIid) return dense_ * x;
    CMatrix out(static_cast<Eigen::Index>(rows_), x.cols());
    std::vector<cd> in(columns_), spectrum(columns_);
    for (Eigen::Index m = 0; m < x.cols(); ++m) {
        for (std::size_t i = 0; i < columns_; ++i) in[i] = phase_[i] * x(static_cast<Eigen::Index>(i), m);
        plan_->forward(in.data(), spectrum.data());
        for (std::size_t r = 0; r < rows_; ++r) out(static_cast<Eigen::Index>(r), m) = spectrum[dft_rows_[r]];
    }
    return out;
}

CMatrix PilotMatrix::apply_adjoint(const CMatrix& z) const {
    if (static_cast<std::size_t>(z.rows()) != rows_) throw ConfigError("apply_adjoint: operand has wrong row count");
    if (kind_ == PilotKind::GaussianIid) return dense_.adjoint() * z;
    CMatrix out(static_cast<Eigen::Index>(columns_), z.cols());
    std::vector<cd> in(columns_), time(columns_);
    for (Eigen::Index m = 0; m < z.cols(); ++m) {
        std::fill(in.begin(), in.end(), cd{});
        for (std::size_t r = 0; r < rows_; ++r) in[dft_rows_[r]] = z(static_cast<Eigen::Index>(r), m);
        plan_->backward(in.data(), time.data());
        for (std::size_t i = 0; i < columns_; ++i)
            out(static_cast<Eigen::Index>(i), m) = std::conj(phase_[i]) * time[i];
    }
    return out;
}

std::uint32_t message_to_pilot(std::span<const std::uint8_t> bits, unsigned pilot_bits) {
    if (pilot_bits > 31) throw ConfigError("at most 31 pilot bits supported");
    if (bits.size() < pilot_bits) throw ConfigError("message shorter than pilot prefix");
    std::uint32_t index = 0;
    for (unsigned i = 0; i < pilot_bits; ++i) index = (index << 1) | (bits[i] & 1u);
    return index;
}

Bits pilot_to_prefix(std::uint32_t index, unsigned pilot_bits) {
    Bits out(pilot_bits);
    for (unsigned i = 0; i < pilot_bits; ++i) out[pilot_bits - 1 - i] = static_cast<std::uint8_t>((index >> i) & 1u);
    return out;
}

}  // namespace ura
