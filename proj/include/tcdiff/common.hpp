#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace tcdiff {

using Matrix = Eigen::MatrixXd;
using IntMatrix = Eigen::MatrixXi;
using Vector = Eigen::VectorXd;

// Error taxonomy shared across modules. The CLI maps these onto exit codes.
struct DimensionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct StateError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IntegrityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Checked mode validates finiteness inside hot ops. On by default; training
// loops may switch it off for throughput.
bool checked_mode();
void set_checked_mode(bool on);

void require_finite(const Matrix& m, const std::string& what);

inline std::string shape_str(const Matrix& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

// splitmix64, used both as a hash combiner and as the counter RNG core.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Counter-based RNG: every draw is a pure function of (key, counter), so
// per-record streams are stable no matter how work is batched or ordered.
class CounterRng {
public:
    explicit CounterRng(std::initializer_list<std::uint64_t> key_parts) {
        key_ = 0x243f6a8885a308d3ULL;
        for (std::uint64_t p : key_parts) key_ = splitmix64(key_ ^ p);
    }

    double uniform(std::uint64_t counter) const {
        // 53-bit mantissa in (0,1); never returns exactly 0.
        std::uint64_t bits = splitmix64(key_ ^ splitmix64(counter));
        return (static_cast<double>(bits >> 11) + 0.5) * (1.0 / 9007199254740992.0);
    }

    double normal(std::uint64_t counter) const {
        double u1 = uniform(2 * counter);
        double u2 = uniform(2 * counter + 1);
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
    }

    // rows indexed by per-record stream ids, cols by draw counter.
    Matrix normal_matrix(const std::vector<std::uint64_t>& row_keys, Eigen::Index cols,
                         std::uint64_t counter_base) const;

private:
    std::uint64_t key_;
};

}  // namespace tcdiff
