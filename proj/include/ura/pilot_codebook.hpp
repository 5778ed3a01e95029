#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "ura/common.hpp"

namespace ura {

enum class PilotKind { SubsampledDft, GaussianIid };

const char* to_string(PilotKind kind);
PilotKind pilot_kind_from_string(const std::string& name);

namespace detail {
class FftPlan;
}

/// n_p x N pilot matrix whose columns all have squared norm n_p.
///
/// The sub-sampled DFT variant keeps a random subset of rows of the N-point DFT
/// matrix (optionally with a random unit-modulus phase per column) and applies
/// A and A^H through FFTs without ever materializing the matrix. The Gaussian
/// variant is stored densely.
class PilotMatrix {
public:
    static PilotMatrix build(PilotKind kind, std::size_t rows, std::size_t columns, std::uint64_t seed,
                             bool scramble = true);

    /// Sub-sampled DFT using an explicit row subset and no column scrambling.
    static PilotMatrix from_dft_rows(std::vector<std::size_t> rows, std::size_t columns);

    PilotKind kind() const { return kind_; }
    std::size_t rows() const { return rows_; }
    std::size_t columns() const { return columns_; }

    CVector column(std::size_t index) const;
    CMatrix columns(std::span<const std::size_t> indices) const;
    CMatrix dense() const;

    /// out = A * x, x has N rows.
    CMatrix apply(const CMatrix& x) const;
    /// out = A^H * z, z has n_p rows.
    CMatrix apply_adjoint(const CMatrix& z) const;

    const std::vector<std::size_t>& dft_rows() const { return dft_rows_; }

private:
    PilotMatrix() = default;

    PilotKind kind_ = PilotKind::GaussianIid;
    std::size_t rows_ = 0;
    std::size_t columns_ = 0;
    std::vector<std::size_t> dft_rows_;
    std::vector<cd> phase_;
    CMatrix dense_;
    std::shared_ptr<const detail::FftPlan> plan_;
};

/// Unsigned big-endian value of the first `pilot_bits` message bits.
std::uint32_t message_to_pilot(std::span<const std::uint8_t> bits, unsigned pilot_bits);

/// Inverse of message_to_pilot: the `pilot_bits` big-endian bits of `index`.
Bits pilot_to_prefix(std::uint32_t index, unsigned pilot_bits);

}  // namespace ura
