#include "iqbo/common.hpp"

namespace iqbo {

PointSet regular_grid(const Box& box, int per_axis)
{
    if (per_axis < 1)
        throw std::invalid_argument("regular_grid: per_axis must be >= 1");
    const auto d = static_cast<Eigen::Index>(box.dim());
    Eigen::Index total = 1;
    for (Eigen::Index i = 0; i < d; ++i)
        total *= per_axis;
    PointSet grid(total, d);
    for (Eigen::Index row = 0; row < total; ++row) {
        Eigen::Index rest = row;
        for (Eigen::Index axis = d - 1; axis >= 0; --axis) {
            const auto k = rest % per_axis;
            rest /= per_axis;
            const double frac = per_axis == 1 ? 0.5 : static_cast<double>(k) / (per_axis - 1);
            grid(row, axis) = box.lower(axis) + frac * (box.upper(axis) - box.lower(axis));
        }
    }
    return grid;
}

std::size_t argmax_lowest(const Vector& values)
{
    if (values.size() == 0)
        throw std::invalid_argument("argmax_lowest: empty input");
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < values.size(); ++i)
        if (values(i) > values(best))
            best = i;
    return static_cast<std::size_t>(best);
}

} // namespace iqbo
