#pragma once

// Independent reference computations used by the tests. None of these call
// into the library's numerical code paths.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "l1dpf/imaging.hpp"
#include "l1dpf/quad.hpp"

namespace oracle {

using Point = Eigen::Vector2d;

// Four-neighbour bilinear read with zero outside, written out per corner.
inline double bilinear(const l1dpf::imaging::Frame& f, double x, double y) {
    const double fx = std::floor(x), fy = std::floor(y);
    const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
    const double wx = x - fx, wy = y - fy;
    auto px = [&](int xi, int yi) {
        if (xi < 0 || yi < 0 || xi >= f.width() || yi >= f.height()) return 0.0;
        return f.at(xi, yi);
    };
    return px(x0, y0) * (1 - wx) * (1 - wy) + px(x0 + 1, y0) * wx * (1 - wy) +
           px(x0, y0 + 1) * (1 - wx) * wy + px(x0 + 1, y0 + 1) * wx * wy;
}

inline bool inside_convex(const std::array<Point, 4>& q, const Point& p) {
    int pos = 0, neg = 0;
    for (int k = 0; k < 4; ++k) {
        const Point& a = q[k];
        const Point& b = q[(k + 1) % 4];
        const double c = (b.x() - a.x()) * (p.y() - a.y()) - (b.y() - a.y()) * (p.x() - a.x());
        if (c > 0) ++pos;
        if (c < 0) ++neg;
    }
    return pos == 0 || neg == 0;
}

// Monte Carlo IoU over the joint bounding box.
inline double mc_iou(const l1dpf::geometry::QuadBB& p, const l1dpf::geometry::QuadBB& q, int samples,
                     std::mt19937_64& gen) {
    double xmin = 1e300, ymin = 1e300, xmax = -1e300, ymax = -1e300;
    for (const auto* quad : {&p, &q})
        for (const auto& c : quad->corners) {
            xmin = std::min(xmin, c.x());
            xmax = std::max(xmax, c.x());
            ymin = std::min(ymin, c.y());
            ymax = std::max(ymax, c.y());
        }
    std::uniform_real_distribution<double> ux(xmin, xmax), uy(ymin, ymax);
    long long in_both = 0, in_any = 0;
    for (int s = 0; s < samples; ++s) {
        const Point pt(ux(gen), uy(gen));
        const bool a = inside_convex(p.corners, pt);
        const bool b = inside_convex(q.corners, pt);
        in_both += (a && b) ? 1 : 0;
        in_any += (a || b) ? 1 : 0;
    }
    return in_any ? static_cast<double>(in_both) / static_cast<double>(in_any) : 0.0;
}

// Random convex quad: four sorted angles on a jittered ellipse, CCW in
// the image's y-down frame (positive shoelace).
inline l1dpf::geometry::QuadBB random_convex_quad(std::mt19937_64& gen, double cx, double cy,
                                                  double scale) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::array<double, 4> ang;
    for (int k = 0; k < 4; ++k) ang[k] = (k + 0.15 + 0.7 * u(gen)) * (std::numbers::pi / 2);
    const double rx = scale * (0.5 + u(gen));
    const double ry = scale * (0.5 + u(gen));
    const double rot = 2 * std::numbers::pi * u(gen);
    l1dpf::geometry::QuadBB q;
    for (int k = 0; k < 4; ++k) {
        const double x = rx * std::cos(ang[k]);
        const double y = ry * std::sin(ang[k]);
        q.corners[k] = Point(cx + std::cos(rot) * x - std::sin(rot) * y,
                             cy + std::sin(rot) * x + std::cos(rot) * y);
    }
    return q;
}

inline double softmax_weight_sum(const std::vector<double>& w) {
    double s = 0;
    for (double x : w) s += x;
    return s;
}

// exp(-alpha e) / sum, without stabilization.
inline std::vector<double> naive_softmax(const std::vector<double>& err, double alpha) {
    std::vector<double> w(err.size());
    double s = 0;
    for (std::size_t i = 0; i < err.size(); ++i) {
        w[i] = std::exp(-alpha * err[i]);
        s += w[i];
    }
    for (double& x : w) x /= s;
    return w;
}

inline std::size_t scan_max(const std::vector<double>& w) {
    std::size_t best = 0;
    double v = w[0];
    for (std::size_t i = 0; i < w.size(); ++i)
        if (w[i] > v) {
            v = w[i];
            best = i;
        }
    return best;
}

struct SparseProblem {
    Eigen::MatrixXd S;
    Eigen::VectorXd y;
    double lambda = 0, mu = 0;
};

inline double objective(const SparseProblem& p, const Eigen::VectorXd& as, const Eigen::VectorXd& ai) {
    const Eigen::VectorXd r = p.y - p.S * as - ai;
    return r.squaredNorm() + p.lambda * (as.cwiseAbs().sum() + ai.cwiseAbs().sum()) + p.mu * ai.squaredNorm();
}

// Largest eigenvalue of the Hessian/2 of the smooth part, by dense solver.
inline double lipschitz(const SparseProblem& p) {
    const Eigen::Index n = p.S.cols(), d = p.S.rows();
    Eigen::MatrixXd b(d, n + d);
    b << p.S, Eigen::MatrixXd::Identity(d, d);
    Eigen::MatrixXd h = b.transpose() * b;
    h.bottomRightCorner(d, d) += p.mu * Eigen::MatrixXd::Identity(d, d);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(h);
    return 2.0 * es.eigenvalues().maxCoeff();
}

// Plain projected proximal gradient, fixed step, no momentum.
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> ista(const SparseProblem& p, int iters) {
    const Eigen::Index n = p.S.cols(), d = p.S.rows();
    const double L = lipschitz(p);
    const double t = 1.0 / L;
    Eigen::VectorXd as = Eigen::VectorXd::Zero(n), ai = Eigen::VectorXd::Zero(d);
    for (int k = 0; k < iters; ++k) {
        const Eigen::VectorXd r = p.y - p.S * as - ai;
        Eigen::VectorXd gs = -2.0 * p.S.transpose() * r;
        Eigen::VectorXd gi = -2.0 * r + 2.0 * p.mu * ai;
        for (Eigen::Index j = 0; j < n; ++j) as[j] = std::max(0.0, as[j] - t * gs[j] - t * p.lambda);
        for (Eigen::Index j = 0; j < d; ++j) {
            const double v = ai[j] - t * gi[j];
            ai[j] = v > t * p.lambda ? v - t * p.lambda : (v < -t * p.lambda ? v + t * p.lambda : 0.0);
        }
    }
    return {as, ai};
}

// Largest violation of the first-order optimality conditions.
inline double kkt_residual(const SparseProblem& p, const Eigen::VectorXd& as, const Eigen::VectorXd& ai) {
    const Eigen::VectorXd r = p.y - p.S * as - ai;
    const Eigen::VectorXd gs = -2.0 * p.S.transpose() * r;
    const Eigen::VectorXd gi = -2.0 * r + 2.0 * p.mu * ai;
    double worst = 0;
    for (Eigen::Index j = 0; j < as.size(); ++j) {
        const double g = gs[j] + p.lambda;
        worst = std::max(worst, as[j] > 0 ? std::abs(g) : std::max(0.0, -g));
    }
    for (Eigen::Index j = 0; j < ai.size(); ++j) {
        if (ai[j] != 0)
            worst = std::max(worst, std::abs(gi[j] + p.lambda * (ai[j] > 0 ? 1 : -1)));
        else
            worst = std::max(worst, std::max(0.0, std::abs(gi[j]) - p.lambda));
    }
    return worst;
}

// Offspring counts of systematic resampling, straight from the definition:
// u_j = (offset + j)/N falls in [cum_{i-1}, cum_i).
inline std::vector<int> systematic_counts(const std::vector<double>& w, double offset) {
    const std::size_t n = w.size();
    std::vector<double> cum(n);
    double s = 0;
    for (std::size_t i = 0; i < n; ++i) cum[i] = (s += w[i]);
    std::vector<int> counts(n, 0);
    for (std::size_t j = 0; j < n; ++j) {
        const double u = (offset + j) / static_cast<double>(n);
        std::size_t i = 0;
        while (i + 1 < n && u >= cum[i]) ++i;
        ++counts[i];
    }
    return counts;
}

inline l1dpf::imaging::BinaryMask disk(int w, int h, double cx, double cy, double r) {
    l1dpf::imaging::BinaryMask m(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) m.set(x, y, true);
    return m;
}

inline l1dpf::imaging::BinaryMask rect(int w, int h, int x0, int y0, int rw, int rh) {
    l1dpf::imaging::BinaryMask m(w, h);
    for (int y = y0; y < y0 + rh; ++y)
        for (int x = x0; x < x0 + rw; ++x) m.set(x, y, true);
    return m;
}

}  // namespace oracle
