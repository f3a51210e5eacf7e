#pragma once

// Dense row-major tensors (rank 1 or 2 in practice) and the deterministic
// RNG used everywhere. Training runs in float; gradient checks instantiate
// the same code with double.

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace comchain {

struct DimError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

template <typename F>
struct TensorT {
    std::vector<int64_t> shape;
    std::vector<F> data;

    TensorT() = default;
    TensorT(std::vector<int64_t> s, F fill = F(0)) : shape(std::move(s)) {
        data.assign(static_cast<size_t>(numel_of(shape)), fill);
    }

    static int64_t numel_of(const std::vector<int64_t>& s) {
        int64_t n = 1;
        for (int64_t d : s) {
            if (d < 1) throw DimError("tensor dimension must be >= 1");
            n *= d;
        }
        return n;
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int64_t rows() const { return shape.empty() ? 1 : shape[0]; }
    int64_t cols() const { return shape.size() < 2 ? numel() / rows() : shape[1]; }

    F& at(int64_t r, int64_t c) { return data[static_cast<size_t>(r * cols() + c)]; }
    F at(int64_t r, int64_t c) const { return data[static_cast<size_t>(r * cols() + c)]; }

    bool same_shape(const TensorT& o) const { return shape == o.shape; }

    template <typename G>
    TensorT<G> cast() const {
        TensorT<G> out;
        out.shape = shape;
        out.data.reserve(data.size());
        for (F v : data) out.data.push_back(static_cast<G>(v));
        return out;
    }
};

using Tensor = TensorT<float>;

inline std::string shape_str(const std::vector<int64_t>& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ")";
    return os.str();
}

// --------------------------------------------------------------------------
// Deterministic RNG: xoshiro256** seeded through splitmix64. Named streams
// derive independent substreams from (seed, name) so the draw order of one
// consumer never disturbs another. Algorithm documented in docs/formats.md.

inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline uint64_t fnv1a64(const std::string& s) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

class Rng {
public:
    explicit Rng(uint64_t seed) {
        uint64_t sm = seed;
        for (auto& w : state_) w = splitmix64(sm);
    }

    // Substream for a named purpose; identical (seed, name) pairs yield
    // identical sequences regardless of other streams.
    Rng(uint64_t seed, const std::string& stream) : Rng(seed ^ fnv1a64(stream)) {}

    uint64_t next_u64() {
        auto rotl = [](uint64_t x, int k) { return (x << k) | (x >> (64 - k)); };
        const uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // unbiased integer in [0, n)
    uint64_t next_below(uint64_t n) {
        const uint64_t threshold = (0 - n) % n;
        for (;;) {
            uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    double normal() {
        // Box-Muller, cosine branch only: one draw per two uniforms.
        double u1 = 1.0 - uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    // normal(0, std) rejected outside +-2 std
    double trunc_normal(double stddev) {
        for (;;) {
            double z = normal();
            if (std::fabs(z) <= 2.0) return z * stddev;
        }
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    uint64_t state_[4];
};

}  // namespace comchain
