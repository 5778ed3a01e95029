#include "ura/polar_codec.hpp"

#include <algorithm>
#include <bit>
#include <numeric>
#include <ostream>

#include "ura/rng.hpp"

namespace ura {

std::uint16_t crc16(std::span<const std::uint8_t> bits) {
    std::uint16_t reg = 0;
    for (auto b : bits) {
        const bool fb = ((reg >> 15) & 1u) ^ (b & 1u);
        reg = static_cast<std::uint16_t>(reg << 1);
        if (fb) reg ^= 0x1021;
    }
    return reg;
}

Bits crc16_bits(std::span<const std::uint8_t> bits) {
    const auto c = crc16(bits);
    Bits out(kCrcBits);
    for (std::size_t i = 0; i < kCrcBits; ++i) out[i] = static_cast<std::uint8_t>((c >> (kCrcBits - 1 - i)) & 1u);
    return out;
}

CVector qpsk_modulate(std::span<const std::uint8_t> bits) {
    if (bits.size() % 2) throw ConfigError("QPSK needs an even number of bits");
    const double a = 1.0 / std::sqrt(2.0);
    CVector s(static_cast<Eigen::Index>(bits.size() / 2));
    for (Eigen::Index j = 0; j < s.size(); ++j)
        s(j) = {a * (1.0 - 2.0 * bits[2 * j]), a * (1.0 - 2.0 * bits[2 * j + 1])};
    return s;
}

RVector qpsk_demodulate(const CVector& symbols, double noise_var) {
    if (!(noise_var > 0)) throw ConfigError("noise variance must be positive");
    const double scale = 2.0 * std::sqrt(2.0) / noise_var;
    RVector llr(2 * symbols.size());
    for (Eigen::Index j = 0; j < symbols.size(); ++j) {
        llr(2 * j) = scale * symbols(j).real();
        llr(2 * j + 1) = scale * symbols(j).imag();
    }
    return llr;
}

void polar_transform(std::vector<std::uint8_t>& x) {
    const std::size_t n = x.size();
    for (std::size_t s = 1; s < n; s <<= 1)
        for (std::size_t b = 0; b < n; b += 2 * s)
            for (std::size_t j = 0; j < s; ++j) x[b + j] ^= x[b + j + s];
}

std::vector<double> bhattacharyya_log(std::size_t block_bits, double bit_snr) {
    std::vector<double> z{-bit_snr / 2.0};
    while (z.size() < block_bits) {
        std::vector<double> next(2 * z.size());
        for (std::size_t j = 0; j < z.size(); ++j) {
            // ln(2z - z^2) and ln(z^2)
            next[2 * j] = z[j] + std::log(2.0 - std::exp(z[j]));
            next[2 * j + 1] = 2.0 * z[j];
        }
        z = std::move(next);
    }
    return z;
}

PolarCodec::PolarCodec(const PolarCodeParams& params) : params_(params) {
    const std::size_t n = params.block_bits;
    if (n < 2 || !std::has_single_bit(n)) throw ConfigError("polar block length must be a power of two >= 2");
    if (params.payload_bits == 0 || params.payload_bits + kCrcBits > n)
        throw ConfigError("payload plus CRC does not fit the polar block");
    if (params.list_size == 0) throw ConfigError("list size must be positive");
    depth_ = static_cast<unsigned>(std::countr_zero(n));

    const auto z = bhattacharyya_log(n, db_to_linear(params.design_sinr_db));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    // ties go to the later index, which dominates in the partial order of synthetic channels
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (z[a] != z[b]) return z[a] < z[b];
        return a > b;
    });
    info_.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(params.payload_bits + kCrcBits));
    std::sort(info_.begin(), info_.end());
    frozen_.assign(n, 1);
    for (auto i : info_) frozen_[i] = 0;
}

Bits PolarCodec::encode_bits(std::span<const std::uint8_t> payload) const {
    if (payload.size() != params_.payload_bits) throw ConfigError("payload length does not match the code");
    const auto crc = crc16_bits(payload);
    std::vector<std::uint8_t> u(params_.block_bits, 0);
    for (std::size_t j = 0; j < payload.size(); ++j) u[info_[j]] = payload[j] & 1u;
    for (std::size_t j = 0; j < kCrcBits; ++j) u[info_[payload.size() + j]] = crc[j];
    polar_transform(u);
    return u;
}

CVector PolarCodec::encode(std::span<const std::uint8_t> payload) const {
    return qpsk_modulate(encode_bits(payload));
}

namespace {

inline double f_minsum(double a, double b) {
    const double m = std::min(std::abs(a), std::abs(b));
    return ((a < 0) != (b < 0)) ? -m : m;
}

struct Path {
    std::vector<double> alpha;        // level l occupies [2^l - 1, 2^(l+1) - 1) of the concatenated buffer
    std::vector<std::uint8_t> left;   // left-child partial sums, same layout
    std::vector<std::uint8_t> u;
    double metric = 0;
};

class ListDecoder {
public:
    ListDecoder(const RVector& llr, const std::vector<std::uint8_t>& frozen, unsigned depth, std::size_t list)
        : n_(frozen.size()), depth_(depth), list_(list), frozen_(frozen), channel_(n_) {
        for (std::size_t i = 0; i < n_; ++i) channel_[i] = std::clamp(llr(static_cast<Eigen::Index>(i)), -kLlrClip, kLlrClip);
        pool_.resize(2 * list);
        for (auto& p : pool_) {
            p.alpha.assign(n_, 0.0);
            p.left.assign(n_, 0);
            p.u.assign(n_, 0);
        }
        active_.push_back(0);
        for (std::size_t s = 2 * list; s-- > 1;) free_.push_back(s);
    }

    void run() {
        for (std::size_t i = 0; i < n_; ++i) {
            for (auto p : active_) update_llr(pool_[p], i);
            if (frozen_[i]) {
                for (auto p : active_) {
                    auto& path = pool_[p];
                    const double l = leaf(path);
                    if (l < 0) path.metric += -l;
                    path.u[i] = 0;
                    update_bits(path, i, 0);
                }
            } else {
                branch(i);
            }
        }
    }

    std::vector<std::size_t> sorted_paths() const {
        auto out = active_;
        std::stable_sort(out.begin(), out.end(),
                         [&](std::size_t a, std::size_t b) { return pool_[a].metric < pool_[b].metric; });
        return out;
    }
    const Path& path(std::size_t p) const { return pool_[p]; }

private:
    static std::size_t off(unsigned level) { return (std::size_t{1} << level) - 1; }

    double leaf(const Path& p) const { return p.alpha[off(0)]; }

    // level-n values are the channel LLRs
    const double* alpha_in(const Path& p, unsigned level) const {
        return level == depth_ ? channel_.data() : p.alpha.data() + off(level);
    }

    void update_llr(Path& p, std::size_t i) {
        unsigned start;
        if (i == 0) {
            start = depth_;
        } else {
            const auto t = static_cast<unsigned>(std::countr_zero(i));
            // right child at level t of the level-(t+1) node
            const std::size_t half = std::size_t{1} << t;
            const double* parent = alpha_in(p, t + 1);
            double* child = p.alpha.data() + off(t);
            const std::uint8_t* lb = p.left.data() + off(t);
            for (std::size_t j = 0; j < half; ++j) child[j] = parent[j + half] + (lb[j] ? -parent[j] : parent[j]);
            start = t;
        }
        for (unsigned l = start; l > 0; --l) {
            const std::size_t half = std::size_t{1} << (l - 1);
            const double* parent = alpha_in(p, l);
            double* child = p.alpha.data() + off(l - 1);
            for (std::size_t j = 0; j < half; ++j) child[j] = f_minsum(parent[j], parent[j + half]);
        }
    }

    void update_bits(Path& p, std::size_t i, std::uint8_t bit) {
        // x holds the partial sums of the node just completed at level l
        scratch_.assign(1, bit);
        unsigned l = 0;
        while (l < depth_ && ((i >> l) & 1u)) {
            const std::size_t half = std::size_t{1} << l;
            const std::uint8_t* lb = p.left.data() + off(l);
            next_.resize(2 * half);
            for (std::size_t j = 0; j < half; ++j) {
                next_[j] = lb[j] ^ scratch_[j];
                next_[j + half] = scratch_[j];
            }
            scratch_.swap(next_);
            ++l;
        }
        if (l < depth_) std::copy(scratch_.begin(), scratch_.end(), p.left.begin() + static_cast<std::ptrdiff_t>(off(l)));
    }

    void branch(std::size_t i) {
        struct Cand {
            double metric;
            std::size_t parent;
            std::uint8_t bit;
        };
        std::vector<Cand> cands;
        cands.reserve(2 * active_.size());
        for (auto p : active_) {
            const double l = leaf(pool_[p]);
            const double m = pool_[p].metric;
            cands.push_back({m + (l < 0 ? -l : 0.0), p, 0});
            cands.push_back({m + (l >= 0 ? l : 0.0), p, 1});
        }
        const std::size_t keep = std::min(list_, cands.size());
        std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) { return a.metric < b.metric; });

        std::vector<int> take(pool_.size(), 0);  // bitmask: 1 -> bit 0 kept, 2 -> bit 1 kept
        std::vector<double> met0(pool_.size()), met1(pool_.size());
        for (std::size_t c = 0; c < keep; ++c) {
            take[cands[c].parent] |= cands[c].bit ? 2 : 1;
            (cands[c].bit ? met1 : met0)[cands[c].parent] = cands[c].metric;
        }
        std::vector<std::size_t> next;
        next.reserve(keep);
        for (auto p : active_)
            if (!take[p]) free_.push_back(p);
        for (auto p : active_) {
            if (!take[p]) continue;
            if (take[p] == 3) {
                const std::size_t q = free_.back();
                free_.pop_back();
                pool_[q] = pool_[p];
                pool_[q].metric = met1[p];
                pool_[q].u[i] = 1;
                update_bits(pool_[q], i, 1);
                next.push_back(q);
                pool_[p].metric = met0[p];
                pool_[p].u[i] = 0;
                update_bits(pool_[p], i, 0);
            } else {
                const std::uint8_t bit = take[p] == 2 ? 1 : 0;
                pool_[p].metric = bit ? met1[p] : met0[p];
                pool_[p].u[i] = bit;
                update_bits(pool_[p], i, bit);
            }
            next.push_back(p);
        }
        active_ = std::move(next);
    }

    std::size_t n_;
    unsigned depth_;
    std::size_t list_;
    const std::vector<std::uint8_t>& frozen_;
    std::vector<double> channel_;
    std::vector<Path> pool_;
    std::vector<std::size_t> active_, free_;
    std::vector<std::uint8_t> scratch_, next_;
};

}  // namespace

std::vector<Bits> PolarCodec::decode_list(const RVector& llr) const { return decode_list(llr, params_.list_size); }

std::vector<Bits> PolarCodec::decode_list(const RVector& llr, std::size_t list_size) const {
    if (static_cast<std::size_t>(llr.size()) != params_.block_bits) throw ConfigError("LLR length does not match the code");
    if (list_size == 0) throw ConfigError("list size must be positive");
    ListDecoder dec(llr, frozen_, depth_, list_size);
    dec.run();
    std::vector<Bits> out;
    Bits info(info_.size());
    for (auto p : dec.sorted_paths()) {
        const auto& u = dec.path(p).u;
        for (std::size_t j = 0; j < info_.size(); ++j) info[j] = u[info_[j]];
        const std::span<const std::uint8_t> payload(info.data(), params_.payload_bits);
        const auto crc = crc16_bits(payload);
        if (!std::equal(crc.begin(), crc.end(), info.begin() + static_cast<std::ptrdiff_t>(params_.payload_bits)))
            continue;
        Bits candidate(payload.begin(), payload.end());
        if (std::find(out.begin(), out.end(), candidate) == out.end()) out.push_back(std::move(candidate));
    }
    return out;
}

std::vector<ErrorPoint> measure_error_curve(const PolarCodec& codec, const std::vector<double>& sinr_db,
                                            std::size_t trials, std::uint64_t seed) {
    std::vector<ErrorPoint> curve;
    for (std::size_t s = 0; s < sinr_db.size(); ++s) {
        const double noise_var = 1.0 / db_to_linear(sinr_db[s]);
        ErrorPoint pt{sinr_db[s], trials, 0, 0};
        for (std::size_t t = 0; t < trials; ++t) {
            Rng rng(derive_seed(seed, Stream::Codec, s * 1000003ull + t));
            Bits payload(codec.payload_bits());
            for (auto& b : payload) b = rng.bit();
            CVector y = codec.encode(payload);
            for (Eigen::Index j = 0; j < y.size(); ++j) y(j) += rng.complex_normal(noise_var);
            const auto list = codec.decode_list(qpsk_demodulate(y, noise_var));
            if (std::find(list.begin(), list.end(), payload) == list.end()) ++pt.errors;
            if (!list.empty() && list.front() != payload) ++pt.undetected;
        }
        curve.push_back(pt);
    }
    return curve;
}

void write_error_curve_csv(std::ostream& os, const std::vector<ErrorPoint>& curve) {
    os << "sinr_db,trials,errors,undetected,pe\n";
    for (const auto& p : curve) os << p.sinr_db << ',' << p.trials << ',' << p.errors << ',' << p.undetected << ',' << p.pe() << '\n';
}

}  // namespace ura
