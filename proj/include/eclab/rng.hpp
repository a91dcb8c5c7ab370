#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "eclab/matrix.hpp"

namespace eclab {

/// splitmix64 step; also used to fan a master seed out into independent
/// sub-streams (data/init/oracle/...) so each is reproducible on its own.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Deterministic sub-seed: master seed + stream index -> independent seed.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
    std::uint64_t s = master ^ (0x6a09e667f3bcc909ULL * (stream + 1));
    splitmix64(s);
    return splitmix64(s);
}

// Named sub-streams of a run's master seed.
enum class SeedStream : std::uint64_t { Data = 1, Init = 2, Oracle = 3, Probe = 4 };

inline std::uint64_t derive_seed(std::uint64_t master, SeedStream stream) {
    return derive_seed(master, static_cast<std::uint64_t>(stream));
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform(double lo = 0.0, double hi = 1.0) {
        return std::uniform_real_distribution<double>(lo, hi)(engine_);
    }

    double normal(double mean = 0.0, double std = 1.0) {
        return std::normal_distribution<double>(mean, std)(engine_);
    }

    /// Normal resampled until within 2 standard deviations.
    double trunc_normal(double std) {
        for (;;) {
            const double x = normal(0.0, std);
            if (std::fabs(x) <= 2.0 * std) return x;
        }
    }

    std::uint64_t integer(std::uint64_t n) {  // uniform in [0, n)
        return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(engine_);
    }

    Matrix normal_matrix(std::size_t r, std::size_t c, double std = 1.0) {
        Matrix m(r, c);
        for (double& x : m.data()) x = normal(0.0, std);
        return m;
    }

    Matrix trunc_normal_matrix(std::size_t r, std::size_t c, double std) {
        Matrix m(r, c);
        for (double& x : m.data()) x = trunc_normal(std);
        return m;
    }

    std::vector<double> unit_vector(std::size_t n) {
        std::vector<double> v(n);
        double s = 0.0;
        do {
            for (double& x : v) x = normal();
            s = norm2(v);
        } while (s < 1e-12);
        for (double& x : v) x /= s;
        return v;
    }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
};

}  // namespace eclab
