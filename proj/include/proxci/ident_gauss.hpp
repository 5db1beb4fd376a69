#pragma once

#include <Eigen/Dense>

#include <vector>

#include "proxci/tabular.hpp"

namespace proxci {

/// OLS fits of Y on (1, Z, X) and W on (1, Z, X) with residual variances.
struct ProxyRegressionFit {
    double alpha0 = 0.0, alpha1 = 0.0, alpha2 = 0.0; // E(Y|Z,X) intercept, Z, X
    double sigma1_sq = 0.0;
    double beta0 = 0.0, beta1 = 0.0, beta2 = 0.0;    // E(W|Z,X)
    double sigma2_sq = 0.0;
    double se_alpha0 = 0.0, se_alpha1 = 0.0, se_alpha2 = 0.0;
    double se_beta0 = 0.0, se_beta1 = 0.0, se_beta2 = 0.0;
    int n = 0;
    bool weak_proxy_warning = false; // |beta1| < 2 SE(beta1)
};

ProxyRegressionFit fit_proxy_regressions(const NumericDataset& data);

/// Treatment-effect slope of the interventional mean: alpha2 - alpha1 * beta2 / beta1.
double gamma1(const ProxyRegressionFit& fit);

/// A conditional Gaussian family with mean affine in (z, x):
/// N(intercept + z_coef * z + x_coef * x, variance).
struct GaussianLinear {
    double intercept = 0.0, z_coef = 0.0, x_coef = 0.0;
    double variance = 1.0;
};

/// Solution h(w, x, y) of the inverse problem
///   p(y|z,x) = integral h(w,x,y) f(w|z,x) dw  for all z,
/// in the Gaussian-linear class: a Gaussian density in y with mean
/// intercept + w_coef * w + x_coef * x.
struct GaussianHSolution {
    double intercept = 0.0, w_coef = 0.0, x_coef = 0.0;
    double variance = 0.0;
    double max_residual = 0.0; // quadrature check over the (z, x, y) test grid
    bool used_fourier = false;

    double density(double w, double x, double y) const;
};

struct HSolveOptions {
    double residual_tol = 1e-6;
    int hermite_nodes = 64;
    int z_grid_points = 21;
    double z_grid_halfwidth = 4.0; // in z units around 0
    int fourier_grid_points = 4097;
    double fourier_v_max = 40.0;
};

/// Moment-matching solution, verified against the defining equation by
/// Gauss-Hermite quadrature; falls back to numerical Fourier inversion when
/// the verification fails, and raises a numeric error when that fails too
/// (no square-integrable solution in this family).
GaussianHSolution solve_h_gaussian(const GaussianLinear& f_w_given_zx,
                                   const GaussianLinear& p_y_given_zx,
                                   const HSolveOptions& options = {});

struct GaussianDoLaw {
    double gamma0 = 0.0;
    double gamma1 = 0.0;
    double sigma_sq = 0.0;
};

struct DoLawOptions {
    int y_grid_points = 401;
    double y_grid_halfwidth_sds = 8.0;
    int hermite_nodes = 64;
    double normalization_tol = 1e-3;
    double gamma1_tol = 1e-6;
};

struct GaussianDoLawResult {
    GaussianDoLaw law;
    GaussianHSolution h;
    double normalization_error = 0.0; // |integral of the do-density - 1|
    double gamma1_gap = 0.0;          // |quadrature slope - closed-form slope|
};

/// Interventional outcome law: h integrated against the W marginal on a
/// y-grid, with (gamma0, gamma1, sigma^2) recovered from the quadrature
/// moments and cross-checked against gamma1(fit).
GaussianDoLawResult gaussian_do_law(const ProxyRegressionFit& fit, double w_mean, double w_var,
                                    const DoLawOptions& options = {});

/// Per-treatment-level fits for discrete X (x-dependent coefficients and
/// variances). Regressions are of Y and W on (1, Z) within each stratum.
struct StratumFit {
    double x_value = 0.0;
    int n = 0;
    GaussianLinear y_given_z; // x_coef unused (zero)
    GaussianLinear w_given_z;
};

std::vector<StratumFit> fit_proxy_regressions_per_x(const NumericDataset& data,
                                                    int max_levels = 10);

struct StratumDoMean {
    double x_value = 0.0;
    double mean = 0.0;
    double variance = 0.0;
};

/// Interventional mean and variance at each observed treatment level, via the
/// per-stratum h solution integrated against the W marginal.
std::vector<StratumDoMean> do_law_per_x(const std::vector<StratumFit>& fits, double w_mean,
                                        double w_var);

} // namespace proxci
