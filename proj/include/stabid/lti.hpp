#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace stabid {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Complex = std::complex<double>;

/// Default length of impulse-response expansions.
inline constexpr std::size_t kDefaultExpansionLength = 200;

/// Real polynomial in the backward shift z^{-1}.
///
/// `coeffs[k]` multiplies z^{-k}, so {1, -0.5} is 1 - 0.5 z^{-1}. The roots of
/// the polynomial are those of the forward form z^n (c_0 + ... + c_n z^{-n}).
struct Polynomial {
    std::vector<double> coeffs;

    Polynomial() = default;
    explicit Polynomial(std::vector<double> c) : coeffs(std::move(c)) {}

    /// Monic polynomial (1 - r_1 z^{-1}) ... (1 - r_n z^{-1}). Complex roots
    /// must appear in conjugate pairs; the imaginary residue is discarded.
    static Polynomial from_roots(std::span<const Complex> roots);

    /// Index of the last nonzero coefficient (0 for the zero polynomial).
    std::size_t degree() const;
    bool is_monic() const { return !coeffs.empty() && coeffs.front() == 1.0; }
    bool is_zero() const;

    /// Forward-form value z^n c(z^{-1}) with n = degree().
    Complex evaluate_forward(Complex z) const;
};

/// Truncated one-step predictor yhat(t) = F(z) y(t) + G(z) u(t).
struct PredictorEstimate {
    Vector f;  // f_1..f_p
    Vector g;  // g_1..g_p

    PredictorEstimate() = default;
    PredictorEstimate(Vector f_, Vector g_);
    static PredictorEstimate zero(std::size_t p);

    std::size_t p() const { return static_cast<std::size_t>(f.size()); }
};

/// Impulse responses of P = G/(1-F) and H = 1/(1-F), truncated at L terms.
struct ForwardModel {
    Vector p_ir;  // p_ir[0] == 0
    Vector h_ir;  // h_ir[0] == 1
    double spectral_radius = 0.0;

    std::size_t length() const { return static_cast<std::size_t>(h_ir.size()); }
    bool stable() const { return spectral_radius < 1.0; }
};

/// A(z) y(t) = k z^{-1} B(z) u(t) + C(z) e(t).
struct ArmaxModel {
    Polynomial a;
    Polynomial b;
    Polynomial c;
    double k_gain = 1.0;
};

struct PredictionResult {
    Vector yhat;
    double loss = 0.0;
};

/// All roots of the polynomial (Aberth-Ehrlich iteration).
/// Throws std::invalid_argument for a zero/degenerate polynomial and
/// NumericalError if the iteration does not converge.
std::vector<Complex> poly_roots(const Polynomial& poly);

/// Coefficients of A(z) = z^p - f_1 z^{p-1} - ... - f_p in ascending powers of
/// z^{-1}: {1, -f_1, ..., -f_p}.
Polynomial denominator_polynomial(std::span<const double> f);

/// Companion matrix whose first row is f and whose subdiagonal is the
/// identity; its characteristic polynomial is A(z).
Matrix companion(std::span<const double> f);

/// max |root| of A(z); trailing zero coefficients of f contribute roots at 0.
double spectral_radius(std::span<const double> f);
double spectral_radius(const Vector& f);

/// Schur-Cohn test: true iff every root of A(z) lies strictly inside the
/// unit disc. Does not compute roots.
bool schur_stable(std::span<const double> f);

ForwardModel predictor_to_forward(const PredictorEstimate& est,
                                  std::size_t length = kDefaultExpansionLength);
/// Same expansion without the root computation (spectral_radius left at 0).
ForwardModel expand_predictor(const PredictorEstimate& est, std::size_t length);

PredictorEstimate forward_to_predictor(const ForwardModel& model, std::size_t p);

/// Impulse response of num(z)/den(z), both in z^{-1}, first `length` terms.
Vector impulse_response(const Polynomial& num, const Polynomial& den, std::size_t length);

/// Zero initial conditions. Throws NumericalError if the output overflows.
Vector simulate_armax(const ArmaxModel& model, const Vector& u, const Vector& e);

/// One-step predictions with zero pre-sample values, plus the squared loss.
PredictionResult one_step_predictions(const PredictorEstimate& est, const Vector& y,
                                      const Vector& u);

inline std::span<const double> as_span(const Vector& v) {
    return {v.data(), static_cast<std::size_t>(v.size())};
}

}  // namespace stabid
