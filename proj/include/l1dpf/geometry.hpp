#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include <Eigen/Core>
#include <Eigen/LU>

#include "l1dpf/errors.hpp"
#include "l1dpf/imaging.hpp"
#include "l1dpf/quad.hpp"

namespace l1dpf::geometry {

/// Decomposed motion state. The linear part is R(theta) * Sh * Sc, applied
/// right to left: scale, then shear, then rotation, then translation.
struct StateVector {
    double theta = 0.0;
    double o1 = 0.0;  ///< horizontal translation
    double o2 = 0.0;  ///< vertical translation
    double s1 = 1.0;
    double s2 = 1.0;
    double sh1 = 0.0;
    double sh2 = 0.0;

    bool valid() const noexcept {
        return std::isfinite(theta) && std::isfinite(o1) && std::isfinite(o2) &&
               std::isfinite(s1) && std::isfinite(s2) && std::isfinite(sh1) &&
               std::isfinite(sh2) && s1 > 0.0 && s2 > 0.0;
    }

    bool operator==(const StateVector&) const = default;
};

/// Six independently perturbed affine entries [[a1, a2, o1], [a3, a4, o2]].
struct LegacyStateVector {
    double a1 = 1.0, a2 = 0.0, a3 = 0.0, a4 = 1.0;
    double o1 = 0.0, o2 = 0.0;

    double det() const noexcept { return a1 * a4 - a2 * a3; }

    bool valid() const noexcept {
        return std::isfinite(a1) && std::isfinite(a2) && std::isfinite(a3) &&
               std::isfinite(a4) && std::isfinite(o1) && std::isfinite(o2) &&
               std::abs(det()) > 1e-9;
    }

    bool operator==(const LegacyStateVector&) const = default;
};

struct EllipseFit {
    Point center = Point::Zero();
    double a = 0.0;            ///< semi-major axis
    double b = 0.0;            ///< semi-minor axis
    double orientation = 0.0;  ///< major-axis angle in (-pi/2, pi/2]
};

/// Wraps to (-pi, pi].
inline double wrap_angle(double t) {
    constexpr double two_pi = 2.0 * std::numbers::pi;
    t = std::fmod(t, two_pi);
    if (t <= -std::numbers::pi) t += two_pi;
    if (t > std::numbers::pi) t -= two_pi;
    return t;
}

/// Top two rows of T * R * Sh * Sc.
inline AffineMatrix compose_affine(const StateVector& v) {
    const double c = std::cos(v.theta);
    const double s = std::sin(v.theta);
    Eigen::Matrix2d rot;
    rot << c, s, -s, c;
    Eigen::Matrix2d shear;
    shear << 1.0, v.sh1, v.sh2, 1.0;
    const Eigen::Matrix2d linear = rot * shear * Eigen::Vector2d(v.s1, v.s2).asDiagonal();
    AffineMatrix a;
    a.leftCols<2>() = linear;
    a(0, 2) = v.o1;
    a(1, 2) = v.o2;
    return a;
}

inline AffineMatrix legacy_affine(const LegacyStateVector& v) {
    AffineMatrix a;
    a << v.a1, v.a2, v.o1, v.a3, v.a4, v.o2;
    return a;
}

inline LegacyStateVector legacy_from_affine(const AffineMatrix& a) {
    return {a(0, 0), a(0, 1), a(1, 0), a(1, 1), a(0, 2), a(1, 2)};
}

/// Inverse of compose_affine in the polar gauge: the linear block is factored
/// as R(theta) * P with P symmetric positive definite, so s2 * sh1 == s1 * sh2.
/// A general state is recovered up to this gauge; the matrix always is.
inline StateVector extract_state(const AffineMatrix& a) {
    const Eigen::Matrix2d m = a.leftCols<2>();
    if (!m.allFinite() || !a.col(2).allFinite())
        throw DecompositionError("affine matrix has non-finite entries");
    const double det = m.determinant();
    if (det <= 0.0)
        throw DecompositionError(det == 0.0 ? "singular affine block"
                                            : "affine block is a reflection");
    // For R = [[c, s], [-s, c]] and symmetric P: m11 + m22 = c tr(P), m12 - m21 = s tr(P).
    const double theta = std::atan2(m(0, 1) - m(1, 0), m(0, 0) + m(1, 1));
    const double c = std::cos(theta);
    const double s = std::sin(theta);
    Eigen::Matrix2d rot_t;
    rot_t << c, -s, s, c;
    const Eigen::Matrix2d p = rot_t * m;
    StateVector v;
    v.theta = wrap_angle(theta);
    v.s1 = p(0, 0);
    v.s2 = p(1, 1);
    if (v.s1 <= 0.0 || v.s2 <= 0.0)
        throw DecompositionError("non-positive scale in decomposition");
    v.sh1 = p(0, 1) / v.s2;
    v.sh2 = p(1, 0) / v.s1;
    v.o1 = a(0, 2);
    v.o2 = a(1, 2);
    return v;
}

/// Image of the reference square of edge `side` under `a`.
inline QuadBB quad_from_affine(const AffineMatrix& a, double side) {
    const QuadBB ref = reference_quad(side);
    QuadBB q;
    for (std::size_t k = 0; k < 4; ++k) q[k] = apply(a, ref[k]);
    if (!all_finite(q) || area(q) < 1e-9)
        throw DegenerateRegionError("affine image of the reference square is degenerate");
    return q;
}

/// Strict convexity test, either orientation.
inline bool is_convex(const QuadBB& q) {
    int sign = 0;
    for (std::size_t i = 0; i < 4; ++i) {
        const Point e1 = q[(i + 1) % 4] - q[i];
        const Point e2 = q[(i + 2) % 4] - q[(i + 1) % 4];
        const double cross = e1.x() * e2.y() - e1.y() * e2.x();
        if (cross == 0.0) continue;
        const int s = cross > 0 ? 1 : -1;
        if (sign == 0) sign = s;
        else if (s != sign) return false;
    }
    return sign != 0;
}

namespace detail {

using Polygon = std::vector<Point>;

inline double cross(const Point& o, const Point& a, const Point& b) {
    return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

inline double polygon_area(const Polygon& p) {
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const Point& a = p[i];
        const Point& b = p[(i + 1) % p.size()];
        acc += a.x() * b.y() - b.x() * a.y();
    }
    return 0.5 * std::abs(acc);
}

inline Polygon ccw_polygon(const QuadBB& q) {
    Polygon p(q.corners.begin(), q.corners.end());
    if (signed_area(q) < 0) std::reverse(p.begin(), p.end());
    return p;
}

/// Sutherland-Hodgman: clips `subject` against every edge of convex CCW `clip`.
inline Polygon clip_convex(Polygon subject, const Polygon& clip) {
    for (std::size_t e = 0; e < clip.size() && !subject.empty(); ++e) {
        const Point& a = clip[e];
        const Point& b = clip[(e + 1) % clip.size()];
        Polygon out;
        out.reserve(subject.size() + 2);
        for (std::size_t i = 0; i < subject.size(); ++i) {
            const Point& cur = subject[i];
            const Point& prev = subject[(i + subject.size() - 1) % subject.size()];
            const double dc = cross(a, b, cur);
            const double dp = cross(a, b, prev);
            if (dc >= 0) {
                if (dp < 0) out.push_back(prev + (cur - prev) * (dp / (dp - dc)));
                out.push_back(cur);
            } else if (dp >= 0) {
                out.push_back(prev + (cur - prev) * (dp / (dp - dc)));
            }
        }
        subject = std::move(out);
    }
    return subject;
}

}  // namespace detail

/// Intersection over union of two convex quads.
inline double quad_iou(const QuadBB& p, const QuadBB& q) {
    for (const QuadBB* x : {&p, &q}) {
        if (!all_finite(*x)) throw GeometryError("quad has non-finite corners");
        if (area(*x) <= 0.0) throw GeometryError("zero-area quad");
        if (!is_convex(*x)) throw GeometryError("non-convex quad");
    }
    const detail::Polygon pp = detail::ccw_polygon(p);
    const detail::Polygon qq = detail::ccw_polygon(q);
    const double inter = detail::polygon_area(detail::clip_convex(pp, qq));
    const double uni = area(p) + area(q) - inter;
    if (uni <= 0.0) return 0.0;
    return std::clamp(inter / uni, 0.0, 1.0);
}

/// Convex hull of the four corners with positive orientation; a repeated
/// vertex stands in when the hull is a triangle.
inline QuadBB convex_hull(const QuadBB& q) {
    std::vector<Point> pts(q.corners.begin(), q.corners.end());
    std::sort(pts.begin(), pts.end(), [](const Point& a, const Point& b) {
        return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
    });
    std::vector<Point> hull(8);
    std::size_t k = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        while (k >= 2 && detail::cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
        hull[k++] = pts[i];
    }
    for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
        while (k >= t && detail::cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
        hull[k++] = pts[i];
    }
    hull.resize(k > 1 ? k - 1 : k);
    QuadBB out;
    for (std::size_t i = 0; i < 4; ++i) out[i] = hull[std::min(i, hull.size() - 1)];
    return out;
}

/// Covariance ellipse of the set pixels (pixel centers at integer
/// coordinates). Semi-axes are 2 standard deviations.
inline EllipseFit ellipse_from_mask(const imaging::BinaryMask& mask) {
    const std::size_t n = mask.count();
    if (n < 8)
        throw InsufficientSupportError("mask has " + std::to_string(n) +
                                       " set pixels, need at least 8");
    double sx = 0, sy = 0;
    for (int y = 0; y < mask.height(); ++y)
        for (int x = 0; x < mask.width(); ++x)
            if (mask.at(x, y)) {
                sx += x;
                sy += y;
            }
    const double cx = sx / n;
    const double cy = sy / n;
    double cxx = 0, cyy = 0, cxy = 0;
    for (int y = 0; y < mask.height(); ++y)
        for (int x = 0; x < mask.width(); ++x)
            if (mask.at(x, y)) {
                const double dx = x - cx;
                const double dy = y - cy;
                cxx += dx * dx;
                cyy += dy * dy;
                cxy += dx * dy;
            }
    cxx /= n;
    cyy /= n;
    cxy /= n;

    const double mean = 0.5 * (cxx + cyy);
    const double diff = 0.5 * (cxx - cyy);
    const double radius = std::hypot(diff, cxy);
    const double l1 = mean + radius;
    const double l2 = std::max(mean - radius, 0.0);

    EllipseFit e;
    e.center = Point(cx, cy);
    e.a = 2.0 * std::sqrt(l1);
    e.b = 2.0 * std::sqrt(l2);
    if (radius <= 1e-12 * std::max(mean, 1.0)) {
        e.orientation = 0.0;
    } else {
        double phi = 0.5 * std::atan2(2.0 * cxy, cxx - cyy);
        if (phi <= -0.5 * std::numbers::pi) phi += std::numbers::pi;
        e.orientation = phi;
    }
    if (e.b <= 0.0) throw InsufficientSupportError("mask support is collinear");
    return e;
}

/// Rectangle with half-extents (a, b) along the ellipse axes.
inline QuadBB quad_from_ellipse(const EllipseFit& e) {
    const Point u(std::cos(e.orientation), std::sin(e.orientation));
    const Point v(-u.y(), u.x());
    return QuadBB{{e.center - e.a * u - e.b * v, e.center + e.a * u - e.b * v,
                   e.center + e.a * u + e.b * v, e.center - e.a * u + e.b * v}};
}

}  // namespace l1dpf::geometry
