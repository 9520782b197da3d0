#include "causalmon/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <boost/math/special_functions/beta.hpp>

#include "causalmon/error.hpp"
#include "causalmon/log.hpp"

namespace causalmon {
namespace {

// Relative residual size below which a vector counts as fully explained.
constexpr double kDegenerateResidual = 1e-10;
constexpr double kMinRcond = 1e-12;

double residual_correlation(const Eigen::VectorXd& rx, const Eigen::VectorXd& ry) {
    const double sxy = rx.dot(ry);
    const double denom = std::sqrt(rx.squaredNorm() * ry.squaredNorm());
    return std::clamp(sxy / denom, -1.0, 1.0);
}

}  // namespace

double correlation_pvalue(double r, double dof) {
    if (!(dof > 0.0)) throw InputError("degrees of freedom must be positive");
    const double r2 = r * r;
    if (r2 >= 1.0) return 0.0;
    return boost::math::ibeta(dof / 2.0, 0.5, 1.0 - r2);
}

double student_t_two_sided(double t, double dof) {
    if (!(dof > 0.0)) throw InputError("degrees of freedom must be positive");
    if (std::isinf(t)) return 0.0;
    return boost::math::ibeta(dof / 2.0, 0.5, dof / (dof + t * t));
}

CorrelationResult pearson(VectorRef x, VectorRef y) {
    if (x.size() != y.size()) throw InputError("pearson: length mismatch");
    const auto n = x.size();
    if (n < 3) throw InputError("pearson: need at least 3 samples");
    const Eigen::VectorXd xc = x.array() - x.mean();
    const Eigen::VectorXd yc = y.array() - y.mean();
    const double sxx = xc.squaredNorm();
    const double syy = yc.squaredNorm();
    if (sxx == 0.0 || syy == 0.0) throw DegenerateInput("pearson: constant input");
    CorrelationResult out;
    out.r = std::clamp(xc.dot(yc) / std::sqrt(sxx * syy), -1.0, 1.0);
    out.dof = static_cast<double>(n - 2);
    out.pvalue = correlation_pvalue(out.r, out.dof);
    return out;
}

CorrelationResult partial_correlation(VectorRef x, VectorRef y, MatrixRef Z) {
    if (x.size() != y.size()) throw InputError("partial_correlation: length mismatch");
    const auto n = x.size();
    const auto k = Z.cols();
    if (k == 0) return pearson(x, y);
    if (Z.rows() != n) throw InputError("partial_correlation: conditioning rows differ from sample count");
    if (n <= k + 2) throw InsufficientSamples("partial_correlation: need more than |Z| + 2 samples");

    const Eigen::VectorXd xc = x.array() - x.mean();
    const Eigen::VectorXd yc = y.array() - y.mean();
    const Eigen::MatrixXd Zc = Z.rowwise() - Z.colwise().mean();

    Eigen::VectorXd rx, ry;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Zc);
    if (qr.rank() == k) {
        rx = xc - Zc * qr.solve(xc);
        ry = yc - Zc * qr.solve(yc);
    } else {
        log_warn("partial_correlation: singular conditioning set, using ridge fallback");
        Eigen::MatrixXd gram = Zc.transpose() * Zc;
        gram.diagonal().array() += kRidgeFallback;
        const Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
        rx = xc - Zc * ldlt.solve(Zc.transpose() * xc);
        ry = yc - Zc * ldlt.solve(Zc.transpose() * yc);
    }
    if (rx.norm() <= kDegenerateResidual * xc.norm() || ry.norm() <= kDegenerateResidual * yc.norm() ||
        xc.squaredNorm() == 0.0 || yc.squaredNorm() == 0.0) {
        throw DegenerateInput("partial_correlation: residual vanishes after conditioning");
    }
    CorrelationResult out;
    out.r = residual_correlation(rx, ry);
    out.dof = static_cast<double>(n - k - 2);
    out.cond_size = static_cast<std::size_t>(k);
    out.pvalue = correlation_pvalue(out.r, out.dof);
    return out;
}

double cmi_gaussian(double r) {
    if (!(std::abs(r) < 1.0)) throw DegenerateInput("cmi_gaussian: |r| >= 1 carries infinite information");
    return -0.5 * std::log1p(-r * r);
}

RegressionFit least_squares(VectorRef y, MatrixRef X, double ridge) {
    if (X.rows() != y.size()) throw InputError("least_squares: rows(X) != len(y)");
    if (ridge < 0.0) throw InputError("least_squares: ridge must be >= 0");
    RegressionFit fit;
    fit.n_samples = y.size();
    if (ridge == 0.0) {
        if (X.rows() < X.cols() + 1) throw SingularSystem("least_squares: under-determined system");
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
        if (qr.rank() < X.cols()) throw SingularSystem("least_squares: rank deficient regressors");
        fit.coefficients = qr.solve(y);
    } else {
        Eigen::MatrixXd gram = X.transpose() * X;
        gram.diagonal().array() += ridge;
        fit.coefficients = gram.ldlt().solve(X.transpose() * y);
        fit.regularized = true;
    }
    fit.residual_norm = (y - X * fit.coefficients).norm();
    return fit;
}

Eigen::VectorXd solve_gram(const Eigen::MatrixXd& gram, const Eigen::VectorXd& rhs, bool* regularized) {
    if (regularized) *regularized = false;
    if (gram.rows() == 0) return Eigen::VectorXd();
    const Eigen::LLT<Eigen::MatrixXd> llt(gram);
    if (llt.info() == Eigen::Success && llt.rcond() > kMinRcond) return llt.solve(rhs);
    if (regularized) *regularized = true;
    Eigen::MatrixXd reg = gram;
    reg.diagonal().array() += kRidgeFallback;
    return reg.ldlt().solve(rhs);
}

}  // namespace causalmon
