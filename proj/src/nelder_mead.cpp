#include "stabid/nelder_mead.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace stabid {

namespace {

double sanitize(double v) { return std::isnan(v) ? std::numeric_limits<double>::infinity() : v; }

}  // namespace

NelderMeadResult nelder_mead(const Objective& objective, const Vector& start, const NelderMeadOptions& options) {
    const Eigen::Index n = start.size();
    NelderMeadResult result;
    auto eval = [&](const Vector& x) {
        ++result.evaluations;
        return sanitize(objective(x));
    };
    auto budget_left = [&] { return options.max_evaluations <= 0 || result.evaluations < options.max_evaluations; };

    std::vector<Vector> simplex(static_cast<std::size_t>(n + 1), start);
    std::vector<double> values(static_cast<std::size_t>(n + 1));
    values[0] = eval(start);
    for (Eigen::Index i = 0; i < n; ++i) {
        simplex[static_cast<std::size_t>(i + 1)][i] += options.initial_step;
        values[static_cast<std::size_t>(i + 1)] = eval(simplex[static_cast<std::size_t>(i + 1)]);
    }

    std::vector<std::size_t> order(simplex.size());
    auto sort_simplex = [&] {
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
        std::vector<Vector> s2;
        std::vector<double> v2;
        for (auto idx : order) {
            s2.push_back(simplex[idx]);
            v2.push_back(values[idx]);
        }
        simplex.swap(s2);
        values.swap(v2);
    };

    const std::size_t worst = static_cast<std::size_t>(n);
    for (; result.iterations < options.max_iterations && budget_left(); ++result.iterations) {
        sort_simplex();
        double diameter = 0.0;
        for (std::size_t i = 1; i < simplex.size(); ++i) {
            diameter = std::max(diameter, (simplex[i] - simplex[0]).lpNorm<Eigen::Infinity>());
        }
        if (diameter < options.diameter_tol) {
            result.converged = true;
            break;
        }

        Vector centroid = Vector::Zero(n);
        for (std::size_t i = 0; i < worst; ++i) centroid += simplex[i];
        centroid /= static_cast<double>(n);

        const Vector reflected = centroid + (centroid - simplex[worst]);
        const double f_reflected = eval(reflected);
        if (f_reflected < values[0]) {
            const Vector expanded = centroid + 2.0 * (centroid - simplex[worst]);
            const double f_expanded = eval(expanded);
            if (f_expanded < f_reflected) {
                simplex[worst] = expanded;
                values[worst] = f_expanded;
            } else {
                simplex[worst] = reflected;
                values[worst] = f_reflected;
            }
            continue;
        }
        if (f_reflected < values[worst - 1]) {
            simplex[worst] = reflected;
            values[worst] = f_reflected;
            continue;
        }
        const bool outside = f_reflected < values[worst];
        const Vector contracted = outside ? Vector(centroid + 0.5 * (reflected - centroid))
                                          : Vector(centroid + 0.5 * (simplex[worst] - centroid));
        const double f_contracted = eval(contracted);
        if (f_contracted < (outside ? f_reflected : values[worst])) {
            simplex[worst] = contracted;
            values[worst] = f_contracted;
            continue;
        }
        for (std::size_t i = 1; i < simplex.size(); ++i) {
            simplex[i] = simplex[0] + 0.5 * (simplex[i] - simplex[0]);
            values[i] = eval(simplex[i]);
        }
    }
    sort_simplex();
    result.x = simplex[0];
    result.value = values[0];
    return result;
}

}  // namespace stabid
