#pragma once

#include "tcdiff/common.hpp"

namespace tcdiff {

enum class Stage { Target, Bridging, Reference };

// Discretized VE-SDE schedule with the three-stage partition. var[t] is the
// cumulative perturbation variance (sigma^(2t/T) - 1) / (2 ln sigma); the
// step index t maps to continuous time t/T.
class NoiseSchedule {
public:
    NoiseSchedule(double sigma, int T, int t1, int t2) : sigma_(sigma), T_(T), t1_(t1), t2_(t2) {
        if (!(sigma > 1.0)) throw ConfigError("NoiseSchedule: sigma must exceed 1");
        if (!(0 < t1 && t1 < t2 && t2 < T)) throw ConfigError("NoiseSchedule: need 0 < t1 < t2 < T");
        var_.resize(static_cast<std::size_t>(T) + 1);
        const double two_ln_sigma = 2.0 * std::log(sigma);
        for (int t = 0; t <= T; ++t) {
            double tau = static_cast<double>(t) / T;
            var_[static_cast<std::size_t>(t)] = (std::pow(sigma, 2.0 * tau) - 1.0) / two_ln_sigma;
        }
    }

    double sigma() const { return sigma_; }
    int steps() const { return T_; }
    int t1() const { return t1_; }
    int t2() const { return t2_; }

    double var(int t) const {
        check_range(t);
        return var_[static_cast<std::size_t>(t)];
    }

    double marginal_std(int t) const { return std::sqrt(var(t)); }

    Stage stage_of(int t) const {
        if (t < 1 || t > T_) throw ConfigError("stage_of: t out of [1, T]");
        if (t <= t1_) return Stage::Target;
        if (t <= t2_) return Stage::Bridging;
        return Stage::Reference;
    }

    // Linear ramp between the target's own latent and the fused reference,
    // clamped to [0,1] outside the bridging window.
    double phi(int t) const {
        check_range(t);
        if (t <= t1_) return 0.0;
        if (t >= t2_) return 1.0;
        return static_cast<double>(t - t1_) / (t2_ - t1_);
    }

    // Marginal mean of the cascaded forward process at step t.
    Matrix cascade_mean(int t, const Matrix& x0_target, const Matrix& x0_ref1,
                        const Matrix& x0_ref2, double alpha_t) const {
        if (x0_target.rows() != x0_ref1.rows() || x0_target.cols() != x0_ref1.cols() ||
            x0_target.rows() != x0_ref2.rows() || x0_target.cols() != x0_ref2.cols()) {
            throw DimensionError("cascade_mean: shape mismatch");
        }
        const double p = phi(t);
        return (1.0 - p) * x0_target + p * (alpha_t * x0_ref1 + (1.0 - alpha_t) * x0_ref2);
    }

    Matrix forward_perturb(int t, const Matrix& mu, const Matrix& noise) const {
        if (mu.rows() != noise.rows() || mu.cols() != noise.cols()) {
            throw DimensionError("forward_perturb: shape mismatch");
        }
        return mu + marginal_std(t) * noise;
    }

private:
    void check_range(int t) const {
        if (t < 0 || t > T_) throw ConfigError("schedule step out of [0, T]");
    }

    double sigma_;
    int T_, t1_, t2_;
    std::vector<double> var_;
};

}  // namespace tcdiff
