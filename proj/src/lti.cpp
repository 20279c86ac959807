#include "stabid/lti.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "stabid/error.hpp"

namespace stabid {

namespace {

constexpr int kAberthMaxIterations = 100;
constexpr double kAberthResidualTolerance = 1e-10;
constexpr double kOverflowLimit = 1e150;

struct HornerValue {
    Complex value;
    Complex derivative;
    double magnitude_bound;  // sum |b_k| |z|^{n-k}, scale for the backward error
};

// b is monic in forward form: z^n + b[1] z^{n-1} + ... + b[n].
HornerValue horner(const std::vector<double>& b, Complex z) {
    Complex value = b[0];
    Complex derivative = 0.0;
    double bound = std::abs(b[0]);
    const double az = std::abs(z);
    for (std::size_t k = 1; k < b.size(); ++k) {
        derivative = derivative * z + value;
        value = value * z + b[k];
        bound = bound * az + std::abs(b[k]);
    }
    return {value, derivative, bound};
}

double relative_residual(const std::vector<double>& b, Complex z) {
    const auto h = horner(b, z);
    return h.magnitude_bound > 0.0 ? std::abs(h.value) / h.magnitude_bound : std::abs(h.value);
}

bool aberth(const std::vector<double>& b, double radius, std::vector<Complex>& roots,
            double& worst_residual) {
    const std::size_t n = b.size() - 1;
    const Complex centre = -b[1] / static_cast<double>(n);
    roots.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
        const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n) + 0.4;
        roots[k] = centre + radius * Complex(std::cos(angle), std::sin(angle));
    }

    std::vector<bool> frozen(n, false);
    for (int iter = 0; iter < kAberthMaxIterations; ++iter) {
        bool all_frozen = true;
        for (std::size_t i = 0; i < n; ++i) {
            if (frozen[i]) continue;
            const auto h = horner(b, roots[i]);
            if (h.value == Complex(0.0)) {
                frozen[i] = true;
                continue;
            }
            const Complex ratio = h.value / h.derivative;
            Complex repulsion = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                if (j != i) repulsion += 1.0 / (roots[i] - roots[j]);
            }
            const Complex step = ratio / (1.0 - ratio * repulsion);
            if (!std::isfinite(step.real()) || !std::isfinite(step.imag())) return false;
            roots[i] -= step;
            const double scale = std::max(std::abs(roots[i]), 1e-300);
            if (std::abs(step) <= 4.0 * std::numeric_limits<double>::epsilon() * scale) {
                frozen[i] = true;
            } else {
                all_frozen = false;
            }
        }
        if (all_frozen) break;
    }
    worst_residual = 0.0;
    for (const auto& r : roots) worst_residual = std::max(worst_residual, relative_residual(b, r));
    return worst_residual <= kAberthResidualTolerance;
}

// Restore exact conjugate symmetry of roots of a real polynomial. Only
// near-conjugate pairs are merged; everything else is left untouched.
void pair_conjugates(std::vector<Complex>& roots) {
    const std::size_t n = roots.size();
    std::vector<bool> used(n, false);
    for (std::size_t i = 0; i < n; ++i) {
        const double tol = 1e-6 * std::max(1.0, std::abs(roots[i]));
        if (std::abs(roots[i].imag()) <= 1e-3 * tol) {
            roots[i] = Complex(roots[i].real(), 0.0);
            used[i] = true;
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (used[i] || roots[i].imag() < 0.0) continue;
        const double tol = 1e-6 * std::max(1.0, std::abs(roots[i]));
        std::size_t best = n;
        double best_dist = tol;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i || used[j] || roots[j].imag() >= 0.0) continue;
            const double d = std::abs(roots[j] - std::conj(roots[i]));
            if (d <= best_dist) {
                best = j;
                best_dist = d;
            }
        }
        if (best == n) continue;
        const Complex avg = 0.5 * (roots[i] + std::conj(roots[best]));
        roots[i] = avg;
        roots[best] = std::conj(avg);
        used[i] = used[best] = true;
    }
}

}  // namespace

Polynomial Polynomial::from_roots(std::span<const Complex> roots) {
    std::vector<Complex> c{1.0};
    for (const auto& r : roots) {
        std::vector<Complex> next(c.size() + 1, 0.0);
        for (std::size_t k = 0; k < c.size(); ++k) {
            next[k] += c[k];
            next[k + 1] -= r * c[k];
        }
        c = std::move(next);
    }
    std::vector<double> real(c.size());
    std::transform(c.begin(), c.end(), real.begin(), [](Complex v) { return v.real(); });
    return Polynomial(std::move(real));
}

std::size_t Polynomial::degree() const {
    for (std::size_t k = coeffs.size(); k-- > 0;) {
        if (coeffs[k] != 0.0) return k;
    }
    return 0;
}

bool Polynomial::is_zero() const {
    return std::all_of(coeffs.begin(), coeffs.end(), [](double c) { return c == 0.0; });
}

Complex Polynomial::evaluate_forward(Complex z) const {
    const std::size_t n = degree();
    Complex value = 0.0;
    for (std::size_t k = 0; k <= n && k < coeffs.size(); ++k) value = value * z + coeffs[k];
    return value;
}

PredictorEstimate::PredictorEstimate(Vector f_, Vector g_) : f(std::move(f_)), g(std::move(g_)) {
    if (f.size() != g.size() || f.size() < 1) {
        throw std::invalid_argument("predictor: f and g must have equal length p >= 1");
    }
    if (!f.allFinite() || !g.allFinite()) throw std::invalid_argument("predictor: non-finite coefficient");
}

PredictorEstimate PredictorEstimate::zero(std::size_t p) {
    const auto n = static_cast<Eigen::Index>(p);
    return PredictorEstimate(Vector::Zero(n), Vector::Zero(n));
}

std::vector<Complex> poly_roots(const Polynomial& poly) {
    if (poly.is_zero()) throw std::invalid_argument("degenerate polynomial");
    const std::size_t n = poly.degree();
    if (n < 1) throw std::invalid_argument("degenerate polynomial: degree must be >= 1");
    const double lead = poly.coeffs[0];
    if (lead == 0.0) throw std::invalid_argument("degenerate polynomial: zero leading coefficient");

    std::vector<double> b(n + 1);
    for (std::size_t k = 0; k <= n; ++k) b[k] = poly.coeffs[k] / lead;

    if (n == 1) return {Complex(-b[1], 0.0)};

    // Geometric mean of the root moduli first; the Fujiwara bound (a circle
    // enclosing every root) as the fallback start.
    const double geometric = std::pow(std::abs(b[n]), 1.0 / static_cast<double>(n));
    double fujiwara = 0.0;
    for (std::size_t k = 1; k <= n; ++k) {
        const double term = std::pow(std::abs(b[k]) / (k == n ? 2.0 : 1.0), 1.0 / static_cast<double>(k));
        fujiwara = std::max(fujiwara, 2.0 * term);
    }

    std::vector<Complex> roots;
    double residual = 0.0;
    for (double radius : {geometric, fujiwara, 1.0}) {
        if (!(radius > 0.0) || !std::isfinite(radius)) continue;
        if (aberth(b, radius, roots, residual)) {
            pair_conjugates(roots);
            return roots;
        }
    }
    std::ostringstream msg;
    msg << "poly_roots: Aberth iteration did not converge (degree " << n
        << ", worst relative residual " << residual << ")";
    throw NumericalError(msg.str());
}

Polynomial denominator_polynomial(std::span<const double> f) {
    std::vector<double> c(f.size() + 1);
    c[0] = 1.0;
    for (std::size_t k = 0; k < f.size(); ++k) c[k + 1] = -f[k];
    return Polynomial(std::move(c));
}

Matrix companion(std::span<const double> f) {
    const auto p = static_cast<Eigen::Index>(f.size());
    if (p < 1) throw std::invalid_argument("companion: empty coefficient vector");
    Matrix m = Matrix::Zero(p, p);
    for (Eigen::Index k = 0; k < p; ++k) m(0, k) = f[static_cast<std::size_t>(k)];
    for (Eigen::Index r = 1; r < p; ++r) m(r, r - 1) = 1.0;
    return m;
}

double spectral_radius(std::span<const double> f) {
    std::size_t m = f.size();
    while (m > 0 && f[m - 1] == 0.0) --m;
    if (m == 0) return 0.0;
    for (std::size_t k = 0; k < m; ++k) {
        if (!std::isfinite(f[k])) throw std::invalid_argument("spectral_radius: non-finite coefficient");
    }
    const auto roots = poly_roots(denominator_polynomial(f.first(m)));
    double rho = 0.0;
    for (const auto& r : roots) rho = std::max(rho, std::abs(r));
    return rho;
}

double spectral_radius(const Vector& f) { return spectral_radius(as_span(f)); }

bool schur_stable(std::span<const double> f) {
    // Step-down recursion on the monic polynomial 1 + a_1 z^{-1} + ... + a_n z^{-n}.
    std::vector<double> a(f.size() + 1);
    a[0] = 1.0;
    for (std::size_t k = 0; k < f.size(); ++k) a[k + 1] = -f[k];
    std::vector<double> next;
    for (std::size_t n = f.size(); n >= 1; --n) {
        const double reflection = a[n];
        if (!(std::abs(reflection) < 1.0)) return false;
        const double denom = 1.0 - reflection * reflection;
        next.assign(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) next[i] = (a[i] - reflection * a[n - i]) / denom;
        a.swap(next);
    }
    return true;
}

ForwardModel expand_predictor(const PredictorEstimate& est, std::size_t length) {
    const std::size_t p = est.p();
    const auto len = static_cast<Eigen::Index>(length);
    ForwardModel out;
    out.h_ir = Vector::Zero(len);
    out.p_ir = Vector::Zero(len);
    if (length == 0) return out;
    out.h_ir[0] = 1.0;
    for (Eigen::Index n = 1; n < len; ++n) {
        double h = 0.0;
        double pv = 0.0;
        const auto kmax = std::min<Eigen::Index>(n, static_cast<Eigen::Index>(p));
        for (Eigen::Index k = 1; k <= kmax; ++k) {
            h += est.f[k - 1] * out.h_ir[n - k];
            pv += est.g[k - 1] * out.h_ir[n - k];
        }
        out.h_ir[n] = h;
        out.p_ir[n] = pv;
    }
    return out;
}

ForwardModel predictor_to_forward(const PredictorEstimate& est, std::size_t length) {
    if (length < est.p()) throw std::invalid_argument("predictor_to_forward: expansion shorter than p");
    ForwardModel out = expand_predictor(est, length);
    out.spectral_radius = spectral_radius(est.f);
    return out;
}

PredictorEstimate forward_to_predictor(const ForwardModel& model, std::size_t p) {
    if (model.h_ir.size() < 1 || model.h_ir[0] != 1.0) {
        throw std::invalid_argument("forward_to_predictor: h_ir[0] must be 1");
    }
    const auto n = static_cast<Eigen::Index>(p);
    // 1/H as a power series, first p+1 terms.
    Vector inv = Vector::Zero(n + 1);
    inv[0] = 1.0;
    for (Eigen::Index k = 1; k <= n; ++k) {
        double acc = 0.0;
        for (Eigen::Index j = 1; j <= k && j < model.h_ir.size(); ++j) acc += model.h_ir[j] * inv[k - j];
        inv[k] = -acc;
    }
    Vector f(n), g(n);
    for (Eigen::Index k = 1; k <= n; ++k) {
        f[k - 1] = -inv[k];
        double acc = 0.0;
        for (Eigen::Index j = 0; j <= k; ++j) {
            if (k - j < model.p_ir.size()) acc += inv[j] * model.p_ir[k - j];
        }
        g[k - 1] = acc;
    }
    return PredictorEstimate(std::move(f), std::move(g));
}

Vector impulse_response(const Polynomial& num, const Polynomial& den, std::size_t length) {
    if (den.coeffs.empty() || den.coeffs[0] == 0.0) {
        throw std::invalid_argument("impulse_response: denominator must have nonzero constant term");
    }
    const auto len = static_cast<Eigen::Index>(length);
    Vector h = Vector::Zero(len);
    const double d0 = den.coeffs[0];
    for (Eigen::Index t = 0; t < len; ++t) {
        double acc = static_cast<std::size_t>(t) < num.coeffs.size() ? num.coeffs[static_cast<std::size_t>(t)] : 0.0;
        for (std::size_t i = 1; i < den.coeffs.size() && static_cast<Eigen::Index>(i) <= t; ++i) {
            acc -= den.coeffs[i] * h[t - static_cast<Eigen::Index>(i)];
        }
        h[t] = acc / d0;
    }
    return h;
}

Vector simulate_armax(const ArmaxModel& model, const Vector& u, const Vector& e) {
    if (u.size() != e.size()) throw std::invalid_argument("simulate_armax: u and e must have equal length");
    const auto& a = model.a.coeffs;
    const auto& b = model.b.coeffs;
    const auto& c = model.c.coeffs;
    if (a.empty() || a[0] == 0.0) throw std::invalid_argument("simulate_armax: A(z) must have nonzero constant term");
    const Eigen::Index n = u.size();
    Vector y = Vector::Zero(n);
    for (Eigen::Index t = 0; t < n; ++t) {
        double acc = 0.0;
        for (std::size_t i = 1; i < a.size() && static_cast<Eigen::Index>(i) <= t; ++i) {
            acc -= a[i] * y[t - static_cast<Eigen::Index>(i)];
        }
        for (std::size_t j = 0; j < b.size(); ++j) {
            const Eigen::Index lag = static_cast<Eigen::Index>(j) + 1;
            if (lag <= t) acc += model.k_gain * b[j] * u[t - lag];
        }
        for (std::size_t j = 0; j < c.size() && static_cast<Eigen::Index>(j) <= t; ++j) {
            acc += c[j] * e[t - static_cast<Eigen::Index>(j)];
        }
        y[t] = acc / a[0];
        if (!std::isfinite(y[t]) || std::abs(y[t]) > kOverflowLimit) {
            std::ostringstream msg;
            msg << "simulate_armax: output overflow at t=" << t;
            throw NumericalError(msg.str());
        }
    }
    return y;
}

PredictionResult one_step_predictions(const PredictorEstimate& est, const Vector& y, const Vector& u) {
    if (y.size() != u.size()) throw std::invalid_argument("one_step_predictions: y and u must have equal length");
    const Eigen::Index n = y.size();
    const auto p = static_cast<Eigen::Index>(est.p());
    PredictionResult out;
    out.yhat = Vector::Zero(n);
    for (Eigen::Index t = 0; t < n; ++t) {
        double acc = 0.0;
        for (Eigen::Index k = 1; k <= p && k <= t; ++k) acc += est.f[k - 1] * y[t - k] + est.g[k - 1] * u[t - k];
        out.yhat[t] = acc;
    }
    out.loss = (y - out.yhat).squaredNorm();
    return out;
}

}  // namespace stabid
