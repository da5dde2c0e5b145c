#pragma once

// Quadrilateral bounding boxes and the 2x3 affine maps that produce them from
// the origin-centered reference square.

#include <array>
#include <cmath>
#include <ostream>

#include <Eigen/Core>

namespace l1dpf::geometry {

using Point = Eigen::Vector2d;

/// Row-major 2x3 affine map acting on (x, y) frame coordinates.
using AffineMatrix = Eigen::Matrix<double, 2, 3>;

/// Four corners of a (possibly deformed) box, ordered TL, TR, BR, BL of the
/// untransformed reference. Positive shoelace area for non-reflecting maps.
struct QuadBB {
    std::array<Point, 4> corners{Point::Zero(), Point::Zero(), Point::Zero(), Point::Zero()};

    const Point& operator[](std::size_t i) const { return corners[i]; }
    Point& operator[](std::size_t i) { return corners[i]; }

    Point center() const {
        return 0.25 * (corners[0] + corners[1] + corners[2] + corners[3]);
    }

    bool operator==(const QuadBB& o) const {
        for (std::size_t i = 0; i < 4; ++i)
            if (corners[i] != o.corners[i]) return false;
        return true;
    }
};

inline std::ostream& operator<<(std::ostream& os, const QuadBB& q) {
    os << "[";
    for (std::size_t i = 0; i < 4; ++i)
        os << (i ? " " : "") << "(" << q[i].x() << "," << q[i].y() << ")";
    return os << "]";
}

/// Corners of the reference square of edge `side`, centered at the origin.
inline QuadBB reference_quad(double side) {
    const double h = 0.5 * side;
    return QuadBB{{Point(-h, -h), Point(h, -h), Point(h, h), Point(-h, h)}};
}

inline Point apply(const AffineMatrix& a, const Point& p) {
    return a.leftCols<2>() * p + a.col(2);
}

/// Shoelace signed area; positive for TL, TR, BR, BL order in (x, y) numbers.
inline double signed_area(const QuadBB& q) {
    double acc = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
        const Point& a = q[i];
        const Point& b = q[(i + 1) % 4];
        acc += a.x() * b.y() - b.x() * a.y();
    }
    return 0.5 * acc;
}

inline double area(const QuadBB& q) { return std::abs(signed_area(q)); }

inline QuadBB translated(const QuadBB& q, const Point& d) {
    QuadBB out = q;
    for (auto& c : out.corners) c += d;
    return out;
}

inline bool all_finite(const QuadBB& q) {
    for (const auto& c : q.corners)
        if (!std::isfinite(c.x()) || !std::isfinite(c.y())) return false;
    return true;
}

/// Least-squares affine map taking the reference square of edge `side` onto
/// `q`. Exact when `q` is a parallelogram.
inline AffineMatrix fit_affine_to_quad(const QuadBB& q, double side) {
    const QuadBB ref = reference_quad(side);
    const Point c = q.center();
    // Reference corners are symmetric, so sum(r r^T) = 4 h^2 I and the
    // normal equations decouple.
    Eigen::Matrix2d cross = Eigen::Matrix2d::Zero();
    for (std::size_t k = 0; k < 4; ++k) cross += (q[k] - c) * ref[k].transpose();
    const double h = 0.5 * side;
    AffineMatrix a;
    a.leftCols<2>() = cross / (4.0 * h * h);
    a.col(2) = c;
    return a;
}

}  // namespace l1dpf::geometry
