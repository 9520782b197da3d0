#pragma once

#include <cstddef>

#include <Eigen/Dense>

namespace causalmon {

using VectorRef = Eigen::Ref<const Eigen::VectorXd>;
using MatrixRef = Eigen::Ref<const Eigen::MatrixXd>;

/// Product-moment or partial correlation with its two-sided t-test.
struct CorrelationResult {
    double r = 0.0;
    double pvalue = 1.0;
    double dof = 1.0;
    std::size_t cond_size = 0;
};

struct RegressionFit {
    Eigen::VectorXd coefficients;
    double residual_norm = 0.0;
    Eigen::Index n_samples = 0;
    bool regularized = false; ///< the ridge fallback was needed
};

/// Ridge added to singular normal equations.
inline constexpr double kRidgeFallback = 1e-8;

/// Throws InputError on length mismatch or n < 3 and DegenerateInput when
/// either vector is constant.
CorrelationResult pearson(VectorRef x, VectorRef y);

/// Correlation of the residuals of x and y after regressing each on Z plus an
/// intercept; dof = n - |Z| - 2. An empty Z gives exactly pearson(x, y).
/// A rank deficient Z falls back to ridge-regularized residualization.
/// Throws DegenerateInput when a residual vanishes (x or y fully explained by Z).
CorrelationResult partial_correlation(VectorRef x, VectorRef y, MatrixRef Z);

/// Two-sided p-value of the Student-t test for a correlation r with `dof`
/// degrees of freedom. Equals I_{1-r^2}(dof/2, 1/2).
double correlation_pvalue(double r, double dof);

/// Two-sided tail probability P(|T| >= |t|) for Student-t with `dof` degrees.
double student_t_two_sided(double t, double dof);

/// Gaussian conditional mutual information -0.5 ln(1 - r^2).
/// Throws DegenerateInput for |r| >= 1.
double cmi_gaussian(double r);

/// Minimizes |y - X b|^2 + ridge |b|^2 (no intercept is added). With ridge = 0
/// an under-determined or rank deficient X throws SingularSystem.
RegressionFit least_squares(VectorRef y, MatrixRef X, double ridge = 0.0);

/// Solves gram * b = rhs for a symmetric positive semi-definite gram matrix,
/// retrying with kRidgeFallback on the diagonal when it is numerically
/// singular. `regularized` reports whether the retry happened.
Eigen::VectorXd solve_gram(const Eigen::MatrixXd& gram, const Eigen::VectorXd& rhs, bool* regularized = nullptr);

}  // namespace causalmon
