#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "proxci/diagram.hpp"
#include "proxci/ident_gauss.hpp"
#include "proxci/nulltest.hpp"
#include "proxci/tabular.hpp"

namespace proxci {

/// Fully parameterized discrete joint law over (U, Z, X, W, Y) factorizing as
/// p(u) p(z|u) p(x|u,z) p(w|u) p(y|u,x,w). Diagram restrictions are imposed
/// structurally: absent edges mean the corresponding table is constant in
/// that argument.
struct LatentClassModel {
    Diagram diagram = Diagram::F;
    int n_u = 0, n_z = 0, n_x = 0, n_w = 0, n_y = 0;

    Eigen::VectorXd pi_u;         // k
    Eigen::MatrixXd p_z_given_u;  // j x k
    Eigen::MatrixXd p_w_given_u;  // k_w x k
    std::vector<double> p_x_given_uz;   // (x, u, z) row-major
    std::vector<double> p_y_given_uxw;  // (y, u, x, w) row-major

    double px(int x, int u, int z) const { return p_x_given_uz[(x * n_u + u) * n_z + z]; }
    double& px(int x, int u, int z) { return p_x_given_uz[(x * n_u + u) * n_z + z]; }
    double py(int y, int u, int x, int w) const {
        return p_y_given_uxw[((y * n_u + u) * n_x + x) * n_w + w];
    }
    double& py(int y, int u, int x, int w) {
        return p_y_given_uxw[((y * n_u + u) * n_x + x) * n_w + w];
    }

    void allocate();
    void validate(double tol = 1e-12) const;
};

/// Exact joint pmf p(u, z, x, w, y), the base object behind every oracle.
struct JointTable {
    int n_u, n_z, n_x, n_w, n_y;
    std::vector<double> p;

    double& at(int u, int z, int x, int w, int y) {
        return p[(((u * n_z + z) * n_x + x) * n_w + w) * n_y + y];
    }
    double at(int u, int z, int x, int w, int y) const {
        return p[(((u * n_z + z) * n_x + x) * n_w + w) * n_y + y];
    }
};

JointTable enumerate_joint(const LatentClassModel& model);

/// Ancestral sampling U -> Z, (U,Z) -> X, U -> W, (U,X,W) -> Y. The hidden u
/// column is kept for oracle checks.
CategoricalDataset sample_latent_class(const LatentClassModel& model, int n, std::uint64_t seed);

/// Exact pr{y | do(x)} table by enumeration; entry (y, x).
Eigen::MatrixXd oracle_do_categorical(const LatentClassModel& model);

/// Optional level-merge maps for W and Z applied before matrix extraction.
struct LevelMaps {
    std::vector<int> w_map; // original level -> merged level; empty = identity
    std::vector<int> z_map;
};

/// Exact population conditionals at a fixed treatment level.
struct PopulationMatrices {
    Eigen::MatrixXd p_y_given_zx;  // m x j
    Eigen::MatrixXd p_w_given_zx;  // k_w x j
    Eigen::VectorXd p_w;           // k_w
    Eigen::MatrixXd p_w_given_u;   // k_w x k
    Eigen::MatrixXd p_u_given_zx;  // k x j
};

PopulationMatrices population_matrices(const LatentClassModel& model, int x,
                                       const LevelMaps& maps = {});

/// Population versions of the stacked test moments (q_y, Q) for a fixed y.
struct PopulationMoments {
    Eigen::VectorXd q;  // length ij, z fastest
    Eigen::MatrixXd Q;  // k_w x ij
};

PopulationMoments population_moments(const LatentClassModel& model, int y_level,
                                     const LevelMaps& maps = {});

/// Linear-Gaussian structural equation model:
///   U ~ N(mu_u, tau_sq)
///   Z = a0 + a1 U + e_z,            e_z ~ N(0, var_z)
///   X = b0 + b1 U + b2 Z + e_x,     e_x ~ N(0, var_x)
///   W = c0 + c1 U + e_w,            e_w ~ N(0, var_w)
///   Y = d0 + d1 U + d2 X + d3 W + e_y, e_y ~ N(0, var_y)
struct LinearGaussianSem {
    double mu_u = 0.0, tau_sq = 1.0;
    double a0 = 0.0, a1 = 1.0, var_z = 1.0;
    double b0 = 0.0, b1 = 1.0, b2 = 0.0, var_x = 1.0;
    double c0 = 0.0, c1 = 1.0, var_w = 1.0;
    double d0 = 0.0, d1 = 1.0, d2 = 0.0, d3 = 0.0, var_y = 1.0;

    void validate() const;
};

NumericDataset sample_gaussian_sem(const LinearGaussianSem& sem, int n, std::uint64_t seed);

/// Mean vector and covariance of (U, Z, X, W, Y) in that order.
Eigen::VectorXd sem_mean(const LinearGaussianSem& sem);
Eigen::MatrixXd sem_covariance(const LinearGaussianSem& sem);

/// Closed-form do-law from the structural coefficients: slope d2, intercept
/// and variance by Gaussian integration over (U, W).
GaussianDoLaw oracle_do_gaussian(const LinearGaussianSem& sem);

/// Exact population regression coefficients implied by the SEM covariance;
/// the covariance-algebra route, independent of any sampling.
ProxyRegressionFit population_fit(const LinearGaussianSem& sem);

struct ModelDims {
    int n_x = 2, n_z = 2, n_w = 2, n_y = 2, n_u = 2;
};

struct ModelConstraints {
    bool h0 = false;        // force p(y | u, x, w) constant in x
    double min_sv = 0.05;   // rejection threshold on population P(W|Z,x) (or Q)
    int max_draws = 10000;
};

/// Random fixture: flat-Dirichlet conditional tables, rejection-sampled until
/// the rank condition holds with margin.
LatentClassModel random_model(const ModelDims& dims, Diagram diagram, std::uint64_t seed,
                              const ModelConstraints& constraints = {});

struct StudyConfig {
    LatentClassModel model;
    int n = 1000;
    int replicates = 100;
    double alpha = 0.05;
    std::uint64_t seed = 0;

    bool run_identify = true;
    bool run_null_test = true;
    int test_y_level = 1;
    CovMethod cov = CovMethod::Plugin;
    int bootstrap_resamples = 500;
    std::optional<int> coarsen_w_to;
    bool keep_statistics = false; // retain per-replicate T values

    void validate() const;
};

struct StudyCellSummary {
    int x = 0, y = 0;
    double oracle = 0.0;
    double mean_bias = 0.0, rmse = 0.0, mean_abs_error = 0.0;
    double naive_mean_bias = 0.0, naive_rmse = 0.0;
};

struct StudyReport {
    int replicates_run = 0;
    int estimation_failures = 0;
    double failure_rate = 0.0;
    double rejection_rate = -1.0; // -1 when the test was not run
    double rejection_mc_se = 0.0;
    std::vector<StudyCellSummary> cells;
    std::vector<double> t_statistics; // only when keep_statistics
};

StudyReport run_study(const StudyConfig& config, int jobs = 1);

} // namespace proxci
