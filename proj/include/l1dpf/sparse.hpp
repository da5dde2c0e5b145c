#pragma once

// Target dictionary [S, I] and the non-negative l1-regularized sparse coder.
//
// Objective, with a = [a_S, a_I]:
//   F(a) = ||y - S a_S - a_I||^2 + lambda (||a_S||_1 + ||a_I||_1) + mu ||a_I||^2,
//   a_S >= 0.
// The trivial block I is the d x d identity and is never materialized.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "l1dpf/errors.hpp"
#include "l1dpf/imaging.hpp"
#include "l1dpf/quad.hpp"

namespace l1dpf::sparse {

struct Dictionary {
    Eigen::MatrixXd significant;  ///< d x n, unit-norm columns
    int side = 0;

    Eigen::Index dim() const noexcept { return significant.rows(); }
    Eigen::Index size() const noexcept { return significant.cols(); }
};

struct Coefficients {
    Eigen::VectorXd significant;  ///< n entries, all >= 0
    Eigen::VectorXd trivial;      ///< d entries, signed
    int iterations = 0;
};

struct SolverConfig {
    double lambda = 0.01;
    double mu = 0.1;
    int max_iters = 200;
    double tol = 1e-6;

    void validate() const {
        if (!(lambda >= 0.0)) throw ConfigError("lambda", "must be >= 0");
        if (!(mu >= 0.0)) throw ConfigError("mu", "must be >= 0");
        if (max_iters < 1) throw ConfigError("max_apg_iters", "must be >= 1");
        if (!(tol > 0.0)) throw ConfigError("apg_tol", "must be > 0");
    }
};

/// Integer offsets ordered by distance from the origin, then axis before
/// diagonal, same-sign diagonal before mixed-sign, then descending x, y:
/// (0,0), (1,0), (-1,0), (0,1), (0,-1), (1,1), (-1,-1), (1,-1), (-1,1), (2,0), ...
inline std::vector<std::pair<int, int>> neighborhood_offsets(std::size_t count) {
    int radius = 0;
    while (static_cast<std::size_t>((2 * radius + 1) * (2 * radius + 1)) < count * 2 + 1) ++radius;
    std::vector<std::pair<int, int>> all;
    for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx) all.emplace_back(dx, dy);
    auto key = [](const std::pair<int, int>& o) {
        const auto [dx, dy] = o;
        return std::array<int, 5>{dx * dx + dy * dy, std::abs(dy), dx * dy < 0 ? 1 : 0, -dx, -dy};
    };
    std::sort(all.begin(), all.end(),
              [&](const auto& a, const auto& b) { return key(a) < key(b); });
    all.resize(count);
    return all;
}

/// Collects n unit-normalized patches of `quad` shifted over a one-pixel
/// neighborhood.
inline Dictionary build_dictionary(const imaging::Frame& frame, const geometry::QuadBB& quad,
                                   int n, int side) {
    if (n < 1) throw ContractError("dictionary needs at least one template");
    if (static_cast<long long>(side) * side < n)
        throw ContractError("template dimension " + std::to_string(side * side) +
                            " is smaller than the template count " + std::to_string(n));
    Dictionary dict;
    dict.side = side;
    dict.significant.resize(static_cast<Eigen::Index>(side) * side, n);
    const auto offsets = neighborhood_offsets(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) {
        const geometry::Point shift(offsets[j].first, offsets[j].second);
        imaging::PatchVector p =
            imaging::warp_patch(frame, geometry::translated(quad, shift), side, true);
        if (p.values.squaredNorm() == 0.0)
            throw DictionaryError("template " + std::to_string(j) + " is an all-zero patch");
        dict.significant.col(j) = p.values;
    }
    if (n > 1) {
        bool all_same = true;
        for (int j = 1; j < n && all_same; ++j)
            all_same = (dict.significant.col(j) - dict.significant.col(0)).norm() < 1e-12;
        if (all_same)
            throw DictionaryError("templates are identical (rank 1); region has no texture");
    }
    return dict;
}

/// Largest eigenvalue of S^T S by power iteration (at most 50 iterations,
/// relative tolerance 1e-6).
inline double max_singular_sq(const Eigen::MatrixXd& s) {
    const Eigen::MatrixXd gram = s.transpose() * s;
    Eigen::VectorXd v = Eigen::VectorXd::Ones(gram.cols()).normalized();
    double est = 0.0;
    for (int it = 0; it < 50; ++it) {
        Eigen::VectorXd w = gram * v;
        const double norm = w.norm();
        if (norm == 0.0) return 0.0;
        const double next = v.dot(w);
        v = w / norm;
        if (it > 0 && std::abs(next - est) <= 1e-6 * std::abs(next)) {
            est = next;
            break;
        }
        est = next;
    }
    return std::max(est, (v.transpose() * gram * v).value());
}

/// 1/L with L = 2 (sigma_max^2(S) + 1 + mu), an upper bound on the gradient's
/// Lipschitz constant since sigma_max^2([S I]) = sigma_max^2(S) + 1.
inline double step_size(const Dictionary& dict, double mu) {
    const double sigma_sq = max_singular_sq(dict.significant) * (1.0 + 1e-6);
    return 1.0 / (2.0 * (sigma_sq + 1.0 + mu));
}

inline double objective(const Dictionary& dict, const Eigen::VectorXd& y,
                        const Eigen::VectorXd& a_s, const Eigen::VectorXd& a_i,
                        const SolverConfig& cfg) {
    const Eigen::VectorXd r = y - dict.significant * a_s - a_i;
    return r.squaredNorm() + cfg.lambda * (a_s.lpNorm<1>() + a_i.lpNorm<1>()) +
           cfg.mu * a_i.squaredNorm();
}

namespace detail {

inline void check_dims(const Dictionary& dict, Eigen::Index y_size) {
    if (dict.size() < 1) throw ContractError("empty dictionary");
    if (y_size != dict.dim())
        throw ContractError("patch has " + std::to_string(y_size) + " entries, dictionary expects " +
                            std::to_string(dict.dim()));
}

}  // namespace detail

/// Accelerated proximal gradient (FISTA) with restart on objective increase.
/// Starts at zero; the returned objective never exceeds ||y||^2.
inline Coefficients solve_l1apg(const Dictionary& dict, const Eigen::VectorXd& y,
                                const SolverConfig& cfg, double step) {
    detail::check_dims(dict, y.size());
    if (!y.allFinite()) throw NumericError("patch has non-finite entries");
    const Eigen::MatrixXd& s = dict.significant;
    const Eigen::Index n = s.cols();
    const Eigen::Index d = s.rows();
    const double thresh = step * cfg.lambda;

    Eigen::VectorXd xs = Eigen::VectorXd::Zero(n), xi = Eigen::VectorXd::Zero(d);
    Eigen::VectorXd ys = xs, yi = xi;
    Eigen::VectorXd zs(n), zi(d), r(d);

    // Prox-gradient step from (ps, pi) into (zs, zi).
    auto prox_step = [&](const Eigen::VectorXd& ps, const Eigen::VectorXd& pi) {
        r.noalias() = y - s * ps;
        r -= pi;
        zs.noalias() = ps + (2.0 * step) * (s.transpose() * r);
        zs = (zs.array() - thresh).max(0.0).matrix();
        zi = pi + (2.0 * step) * (r - cfg.mu * pi);
        zi = zi.array().sign() * (zi.array().abs() - thresh).max(0.0);
    };
    auto eval = [&](const Eigen::VectorXd& as, const Eigen::VectorXd& ai) {
        r.noalias() = y - s * as;
        r -= ai;
        return r.squaredNorm() + cfg.lambda * (as.sum() + ai.lpNorm<1>()) + cfg.mu * ai.squaredNorm();
    };

    double f_prev = y.squaredNorm();
    double t = 1.0;
    int it = 0;
    for (; it < cfg.max_iters; ++it) {
        prox_step(ys, yi);
        double f = eval(zs, zi);
        if (f > f_prev) {
            // Momentum overshot: restart from the last accepted point.
            t = 1.0;
            prox_step(xs, xi);
            f = eval(zs, zi);
            if (f > f_prev) break;
        }
        const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
        const double beta = (t - 1.0) / t_next;
        ys = zs + beta * (zs - xs);
        yi = zi + beta * (zi - xi);
        xs.swap(zs);
        xi.swap(zi);
        t = t_next;
        const double change = f_prev - f;
        f_prev = f;
        if (change <= cfg.tol * std::max(f, 1e-300)) {
            ++it;
            break;
        }
    }
    if (!xs.allFinite() || !xi.allFinite()) throw NumericError("solver diverged");
    return Coefficients{std::move(xs), std::move(xi), it};
}

inline Coefficients solve_l1apg(const Dictionary& dict, const imaging::PatchVector& y,
                                const SolverConfig& cfg) {
    detail::check_dims(dict, y.size());
    return solve_l1apg(dict, y.values, cfg, step_size(dict, cfg.mu));
}

/// ||y - S c_S||^2; trivial coefficients are excluded.
inline double reconstruction_error(const Dictionary& dict, const Eigen::VectorXd& y,
                                   const Coefficients& c) {
    detail::check_dims(dict, y.size());
    if (c.significant.size() != dict.size())
        throw ContractError("coefficient count does not match dictionary size");
    return (y - dict.significant * c.significant).squaredNorm();
}

inline double reconstruction_error(const Dictionary& dict, const imaging::PatchVector& y,
                                   const Coefficients& c) {
    return reconstruction_error(dict, y.values, c);
}

}  // namespace l1dpf::sparse
