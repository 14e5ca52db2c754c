#ifndef IQBO_COMMON_HPP
#define IQBO_COMMON_HPP

#include <Eigen/Core>

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace iqbo {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Point sets are stored one point per row.
using PointSet = Eigen::MatrixXd;

/// Pointwise posterior variances are clamped here before taking square roots.
inline constexpr double kVarianceFloor = 1e-12;

/// Raised when a factorization cannot be completed within the jitter budget.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Axis-aligned box [lower, upper].
struct Box {
    Vector lower;
    Vector upper;

    std::size_t dim() const { return static_cast<std::size_t>(lower.size()); }
    Vector width() const { return upper - lower; }
    Vector center() const { return 0.5 * (lower + upper); }
    double measure() const { return width().prod(); }

    bool contains(const Vector& x, double tol = 0.0) const
    {
        if (x.size() != lower.size())
            return false;
        for (Eigen::Index i = 0; i < x.size(); ++i)
            if (x(i) < lower(i) - tol || x(i) > upper(i) + tol)
                return false;
        return true;
    }

    Vector clamp(const Vector& x) const { return x.cwiseMax(lower).cwiseMin(upper); }

    static Box unit(std::size_t d)
    {
        return {Vector::Zero(static_cast<Eigen::Index>(d)), Vector::Ones(static_cast<Eigen::Index>(d))};
    }
};

/// Regular grid with `per_axis` points per axis covering the box, endpoints included.
/// Rows are ordered with the first axis varying slowest.
PointSet regular_grid(const Box& box, int per_axis);

/// Index of the largest entry; ties go to the lowest index.
std::size_t argmax_lowest(const Vector& values);

} // namespace iqbo

#endif
