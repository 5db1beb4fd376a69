#include "proxci/ident_gauss.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <map>

namespace proxci {

namespace {

constexpr double kPi = 3.14159265358979323846;

double gaussian_pdf(double v, double mean, double var) {
    return std::exp(-0.5 * (v - mean) * (v - mean) / var) / std::sqrt(2.0 * kPi * var);
}

struct Ols {
    Eigen::VectorXd coef;
    Eigen::VectorXd se;
    double resid_var = 0.0;
};

Ols ols(const Eigen::MatrixXd& design, const Eigen::VectorXd& response, const char* what) {
    const int n = static_cast<int>(design.rows());
    const int p = static_cast<int>(design.cols());
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(design, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    if (sv(sv.size() - 1) <= 1e-10 * sv(0))
        throw Error(ErrorKind::RankCondition,
                    std::string(what) + ": collinear design matrix (a regressor is constant "
                                        "or redundant)");
    Ols out;
    out.coef = svd.solve(response);
    Eigen::VectorXd resid = response - design * out.coef;
    out.resid_var = resid.squaredNorm() / (n - p);
    // var(coef) = sigma^2 V S^{-2} V^T
    Eigen::MatrixXd vinv =
        svd.matrixV() * sv.cwiseInverse().cwiseAbs2().asDiagonal() * svd.matrixV().transpose();
    out.se = (out.resid_var * vinv.diagonal()).cwiseSqrt();
    return out;
}

} // namespace

ProxyRegressionFit fit_proxy_regressions(const NumericDataset& data) {
    const int n = data.n();
    if (n < 10) throw Error(ErrorKind::Ingestion, "need at least 10 observations");
    if (data.z.size() != n || data.w.size() != n || data.y.size() != n)
        throw Error(ErrorKind::Schema, "numeric dataset columns have unequal lengths");

    Eigen::MatrixXd design(n, 3);
    design.col(0).setOnes();
    design.col(1) = data.z;
    design.col(2) = data.x;

    Ols fy = ols(design, data.y, "Y on (1,Z,X)");
    Ols fw = ols(design, data.w, "W on (1,Z,X)");

    ProxyRegressionFit fit;
    fit.n = n;
    fit.alpha0 = fy.coef(0);
    fit.alpha1 = fy.coef(1);
    fit.alpha2 = fy.coef(2);
    fit.sigma1_sq = fy.resid_var;
    fit.se_alpha0 = fy.se(0);
    fit.se_alpha1 = fy.se(1);
    fit.se_alpha2 = fy.se(2);
    fit.beta0 = fw.coef(0);
    fit.beta1 = fw.coef(1);
    fit.beta2 = fw.coef(2);
    fit.sigma2_sq = fw.resid_var;
    fit.se_beta0 = fw.se(0);
    fit.se_beta1 = fw.se(1);
    fit.se_beta2 = fw.se(2);
    fit.weak_proxy_warning = std::abs(fit.beta1) < 2.0 * fit.se_beta1;
    return fit;
}

double gamma1(const ProxyRegressionFit& fit) {
    if (fit.beta1 == 0.0)
        throw Error(ErrorKind::RankCondition,
                    "beta1 = 0: W is unrelated to Z given X, so the treatment-effect slope is "
                    "not identified");
    return fit.alpha2 - fit.alpha1 * fit.beta2 / fit.beta1;
}

double GaussianHSolution::density(double w, double x, double y) const {
    return gaussian_pdf(y, intercept + w_coef * w + x_coef * x, variance);
}

namespace {

// Gauss-Hermite nodes/weights for integrals against exp(-t^2), by
// diagonalizing the Jacobi matrix of the Hermite recurrence.
struct Hermite {
    Eigen::VectorXd nodes, weights;
};

Hermite gauss_hermite(int n) {
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
    for (int i = 1; i < n; ++i) {
        double b = std::sqrt(i / 2.0);
        J(i, i - 1) = b;
        J(i - 1, i) = b;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
    Hermite h;
    h.nodes = es.eigenvalues();
    h.weights.resize(n);
    const double sqrt_pi = std::sqrt(kPi);
    for (int i = 0; i < n; ++i) {
        double v0 = es.eigenvectors()(0, i);
        h.weights(i) = sqrt_pi * v0 * v0;
    }
    return h;
}

// E[f(W)] for W ~ N(mean, var) via Gauss-Hermite.
template <typename F>
double gauss_expectation(const F& f, double mean, double var, const Hermite& gh) {
    double s = 0.0;
    const double scale = std::sqrt(2.0 * var);
    for (int i = 0; i < gh.nodes.size(); ++i)
        s += gh.weights(i) * f(mean + scale * gh.nodes(i));
    return s / std::sqrt(kPi);
}

// max residual of the defining equation over a (z, x, y) test grid
double equation_residual(const GaussianHSolution& h, const GaussianLinear& f_w,
                         const GaussianLinear& p_y, const HSolveOptions& opt,
                         const Hermite& gh) {
    double worst = 0.0;
    for (int iz = 0; iz < opt.z_grid_points; ++iz) {
        double z = -opt.z_grid_halfwidth +
                   2.0 * opt.z_grid_halfwidth * iz / std::max(1, opt.z_grid_points - 1);
        for (double x : {0.0, 1.0}) {
            double w_mean = f_w.intercept + f_w.z_coef * z + f_w.x_coef * x;
            double y_mean = p_y.intercept + p_y.z_coef * z + p_y.x_coef * x;
            for (int iy = -2; iy <= 2; ++iy) {
                double y = y_mean + iy * std::sqrt(p_y.variance);
                double lhs = gaussian_pdf(y, y_mean, p_y.variance);
                double rhs = gauss_expectation(
                    [&](double w) { return h.density(w, x, y); }, w_mean, f_w.variance, gh);
                worst = std::max(worst, std::abs(lhs - rhs));
            }
        }
    }
    return worst;
}

// Analytic Fourier transform of p(y | z, x) in z, divided by the transform of
// the standard normal, evaluated on a v-grid; inverse-transformed numerically.
GaussianHSolution fourier_inversion(const GaussianLinear& f_w, const GaussianLinear& p_y,
                                    const HSolveOptions& opt) {
    if (p_y.z_coef == 0.0)
        throw Error(ErrorKind::Numeric, "Fourier path needs a z-dependent outcome law");
    const double sigma = std::sqrt(f_w.variance);
    const double a1 = p_y.z_coef;
    const std::complex<double> I(0.0, 1.0);

    auto h_at = [&](double w, double x, double y) {
        // integrand exp(i v w / sigma) h2(v,x,y) / h1(v)
        const double c = y - p_y.intercept - p_y.x_coef * x;
        const int m = opt.fourier_grid_points;
        const double dv = 2.0 * opt.fourier_v_max / (m - 1);
        std::complex<double> acc(0.0, 0.0);
        double max_mag = 0.0, edge_mag = 0.0;
        for (int i = 0; i < m; ++i) {
            double v = -opt.fourier_v_max + i * dv;
            double t = v * f_w.z_coef / sigma;
            std::complex<double> h2 = (f_w.z_coef / sigma) *
                                      std::exp(-I * v * f_w.intercept / sigma) / std::abs(a1) *
                                      std::exp(-I * t * c / a1 -
                                               0.5 * t * t * p_y.variance / (a1 * a1));
            std::complex<double> ratio = h2 / std::exp(-0.5 * v * v);
            std::complex<double> term = std::exp(I * v * w / sigma) * ratio;
            double mag = std::abs(term);
            max_mag = std::max(max_mag, mag);
            if (i == 0 || i == m - 1) edge_mag = std::max(edge_mag, mag);
            double wt = (i == 0 || i == m - 1) ? 0.5 : 1.0;
            acc += wt * term;
        }
        if (edge_mag > 1e-10 * max_mag)
            throw Error(ErrorKind::Numeric,
                        "Fourier integrand does not decay on the v-grid: the inverse problem "
                        "has no square-integrable solution in this family");
        return (acc * dv / (2.0 * kPi)).real() / sigma;
    };

    // recover the Gaussian-family parameters from the numeric solution
    auto moments = [&](double w, double x) {
        double ymu = p_y.intercept + p_y.x_coef * x + (p_y.z_coef / f_w.z_coef) *
                                                          (w - f_w.intercept - f_w.x_coef * x);
        double lo = ymu - 10.0 * std::sqrt(p_y.variance);
        double hi = ymu + 10.0 * std::sqrt(p_y.variance);
        const int m = 801;
        double dy = (hi - lo) / (m - 1);
        double mass = 0.0, mean = 0.0, sq = 0.0;
        for (int i = 0; i < m; ++i) {
            double y = lo + i * dy;
            double wgt = (i == 0 || i == m - 1) ? 0.5 : 1.0;
            double val = h_at(w, x, y) * wgt * dy;
            mass += val;
            mean += y * val;
            sq += y * y * val;
        }
        mean /= mass;
        return std::pair<double, double>(mean, sq / mass - mean * mean);
    };

    auto [m00, v00] = moments(0.0, 0.0);
    auto [m10, v10] = moments(1.0, 0.0);
    auto [m01, v01] = moments(0.0, 1.0);
    GaussianHSolution h;
    h.w_coef = m10 - m00;
    h.x_coef = m01 - m00;
    h.intercept = m00;
    h.variance = (v00 + v10 + v01) / 3.0;
    h.used_fourier = true;
    if (h.variance <= 0.0)
        throw Error(ErrorKind::Numeric, "Fourier inversion produced a non-positive variance");
    return h;
}

} // namespace

GaussianHSolution solve_h_gaussian(const GaussianLinear& f_w_given_zx,
                                   const GaussianLinear& p_y_given_zx,
                                   const HSolveOptions& options) {
    if (f_w_given_zx.z_coef == 0.0)
        throw Error(ErrorKind::RankCondition,
                    "beta1 = 0: f(w|z,x) does not vary with z, so the inverse problem is not "
                    "identified");
    if (!(f_w_given_zx.variance > 0.0 && p_y_given_zx.variance > 0.0))
        throw Error(ErrorKind::Config, "conditional variances must be positive");

    Hermite gh = gauss_hermite(options.hermite_nodes);

    // moment-matching ansatz, exact in the Gaussian-linear class
    GaussianHSolution h;
    h.w_coef = p_y_given_zx.z_coef / f_w_given_zx.z_coef;
    h.intercept = p_y_given_zx.intercept - h.w_coef * f_w_given_zx.intercept;
    h.x_coef = p_y_given_zx.x_coef - h.w_coef * f_w_given_zx.x_coef;
    h.variance = p_y_given_zx.variance - h.w_coef * h.w_coef * f_w_given_zx.variance;

    if (h.variance > 0.0) {
        h.max_residual = equation_residual(h, f_w_given_zx, p_y_given_zx, options, gh);
        if (h.max_residual <= options.residual_tol) return h;
    }

    GaussianHSolution hf = fourier_inversion(f_w_given_zx, p_y_given_zx, options);
    hf.max_residual = equation_residual(hf, f_w_given_zx, p_y_given_zx, options, gh);
    if (hf.max_residual > options.residual_tol)
        throw Error(ErrorKind::Numeric,
                    "no solution found: moment matching and Fourier inversion both leave "
                    "residual " +
                        std::to_string(hf.max_residual));
    return hf;
}

GaussianDoLawResult gaussian_do_law(const ProxyRegressionFit& fit, double w_mean, double w_var,
                                    const DoLawOptions& options) {
    if (!(w_var > 0.0)) throw Error(ErrorKind::Config, "W marginal variance must be positive");
    if (!(fit.sigma1_sq > 0.0 && fit.sigma2_sq > 0.0))
        throw Error(ErrorKind::Config, "fit variances must be positive");

    GaussianLinear f_w{fit.beta0, fit.beta1, fit.beta2, fit.sigma2_sq};
    GaussianLinear p_y{fit.alpha0, fit.alpha1, fit.alpha2, fit.sigma1_sq};
    HSolveOptions hopt;
    hopt.hermite_nodes = options.hermite_nodes;
    GaussianHSolution h = solve_h_gaussian(f_w, p_y, hopt);

    Hermite gh = gauss_hermite(options.hermite_nodes);
    const double spread = std::sqrt(h.variance + h.w_coef * h.w_coef * w_var);
    double mean0 = h.intercept + h.w_coef * w_mean;
    double mean1 = mean0 + h.x_coef;
    const double lo = std::min(mean0, mean1) - options.y_grid_halfwidth_sds * spread;
    const double hi = std::max(mean0, mean1) + options.y_grid_halfwidth_sds * spread;
    const int m = options.y_grid_points;
    const double dy = (hi - lo) / (m - 1);

    GaussianDoLawResult out;
    double means[2], vars[2];
    for (int xi = 0; xi < 2; ++xi) {
        double x = static_cast<double>(xi);
        double mass = 0.0, mom1 = 0.0, mom2 = 0.0;
        for (int i = 0; i < m; ++i) {
            double y = lo + i * dy;
            double density = gauss_expectation(
                [&](double w) { return h.density(w, x, y); }, w_mean, w_var, gh);
            double wgt = (i == 0 || i == m - 1) ? 0.5 : 1.0;
            mass += wgt * density * dy;
            mom1 += wgt * y * density * dy;
            mom2 += wgt * y * y * density * dy;
        }
        out.normalization_error = std::max(out.normalization_error, std::abs(mass - 1.0));
        means[xi] = mom1 / mass;
        vars[xi] = mom2 / mass - means[xi] * means[xi];
    }
    if (out.normalization_error > options.normalization_tol)
        throw Error(ErrorKind::Numeric,
                    "do-law quadrature failed to normalize: error " +
                        std::to_string(out.normalization_error));

    out.h = h;
    out.law.gamma0 = means[0];
    out.law.gamma1 = means[1] - means[0];
    out.law.sigma_sq = 0.5 * (vars[0] + vars[1]);
    out.gamma1_gap = std::abs(out.law.gamma1 - gamma1(fit));
    if (out.gamma1_gap > options.gamma1_tol)
        throw Error(ErrorKind::Numeric, "quadrature slope disagrees with the closed form by " +
                                            std::to_string(out.gamma1_gap));
    return out;
}

std::vector<StratumFit> fit_proxy_regressions_per_x(const NumericDataset& data, int max_levels) {
    const int n = data.n();
    std::map<double, std::vector<int>> strata;
    for (int r = 0; r < n; ++r) strata[data.x(r)].push_back(r);
    if (static_cast<int>(strata.size()) > max_levels)
        throw Error(ErrorKind::Config,
                    "X takes " + std::to_string(strata.size()) +
                        " distinct values; per-x fits need discrete X (<= " +
                        std::to_string(max_levels) + " levels)");

    std::vector<StratumFit> fits;
    for (const auto& [xval, rows] : strata) {
        if (rows.size() < 10)
            throw Error(ErrorKind::Ingestion, "stratum x=" + std::to_string(xval) +
                                                  " has fewer than 10 observations");
        Eigen::MatrixXd design(rows.size(), 2);
        Eigen::VectorXd yv(rows.size()), wv(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            design(i, 0) = 1.0;
            design(i, 1) = data.z(rows[i]);
            yv(i) = data.y(rows[i]);
            wv(i) = data.w(rows[i]);
        }
        Ols fy = ols(design, yv, "Y on (1,Z) within x");
        Ols fw = ols(design, wv, "W on (1,Z) within x");
        StratumFit f;
        f.x_value = xval;
        f.n = static_cast<int>(rows.size());
        f.y_given_z = GaussianLinear{fy.coef(0), fy.coef(1), 0.0, fy.resid_var};
        f.w_given_z = GaussianLinear{fw.coef(0), fw.coef(1), 0.0, fw.resid_var};
        fits.push_back(f);
    }
    return fits;
}

std::vector<StratumDoMean> do_law_per_x(const std::vector<StratumFit>& fits, double w_mean,
                                        double w_var) {
    std::vector<StratumDoMean> out;
    for (const auto& f : fits) {
        if (f.w_given_z.z_coef == 0.0)
            throw Error(ErrorKind::RankCondition,
                        "beta1(x) = 0 in stratum x=" + std::to_string(f.x_value));
        double t1 = f.y_given_z.z_coef / f.w_given_z.z_coef;
        double t0 = f.y_given_z.intercept - t1 * f.w_given_z.intercept;
        double hv = f.y_given_z.variance - t1 * t1 * f.w_given_z.variance;
        if (hv <= 0.0)
            throw Error(ErrorKind::Numeric,
                        "no density solution in stratum x=" + std::to_string(f.x_value) +
                            " (implied variance non-positive)");
        StratumDoMean d;
        d.x_value = f.x_value;
        d.mean = t0 + t1 * w_mean;
        d.variance = hv + t1 * t1 * w_var;
        out.push_back(d);
    }
    return out;
}

} // namespace proxci
