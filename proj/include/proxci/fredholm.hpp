#pragma once

#include <Eigen/Dense>

#include <functional>
#include <vector>

#include "proxci/error.hpp"

namespace proxci {

/// Quadrature grid: strictly increasing points with matching weights.
struct QuadGrid {
    Eigen::VectorXd points;
    Eigen::VectorXd weights;

    int size() const { return static_cast<int>(points.size()); }
    void validate() const;
};

QuadGrid trapezoid_grid(double lo, double hi, int n);
QuadGrid gauss_legendre_grid(double lo, double hi, int n);

/// First-kind integral equation discretized at a fixed (x, y):
/// A[a,b] = f(w_b | z_a, x) * weight_b and b_vec[a] = p(y | z_a, x).
struct DiscretizedEquation {
    QuadGrid w_grid, z_grid;
    Eigen::MatrixXd A;
    Eigen::VectorXd b;
    double x = 0.0, y = 0.0;
};

/// Assemble the discrete system. Every kernel row must integrate to 1 within
/// `coverage_tol`, otherwise the grid does not cover the conditional density
/// and assembly fails.
DiscretizedEquation discretize(const std::function<double(double w, double z)>& kernel,
                               const std::function<double(double z)>& rhs, QuadGrid w_grid,
                               QuadGrid z_grid, double x, double y, double coverage_tol = 1e-4);

struct TikhonovSolution {
    Eigen::VectorXd h;
    double lambda = 0.0;
    double residual_norm = 0.0;
    double solution_norm = 0.0;
};

/// Minimizer of ||A h - b||^2 + lambda ||h||^2 through the cached SVD of A.
/// lambda = 0 requires A to pass rank diagnostics.
class TikhonovSolver {
  public:
    explicit TikhonovSolver(const DiscretizedEquation& eq);

    TikhonovSolution solve(double lambda, double rank_tol = 1e-10) const;
    const Eigen::VectorXd& singular_values() const { return sv_; }

  private:
    Eigen::MatrixXd A_;
    Eigen::VectorXd b_;
    Eigen::MatrixXd U_, V_;
    Eigen::VectorXd sv_;
    Eigen::VectorXd utb_;
};

TikhonovSolution solve_tikhonov(const DiscretizedEquation& eq, double lambda,
                                double rank_tol = 1e-10);

/// Quadrature of h against a density given on the same w grid. Passing the
/// marginal f(w) yields the interventional value; passing a conditional
/// f(w|u) yields the confounder-stratum outcome law used by oracle checks.
double integrate_do(const Eigen::VectorXd& h, const Eigen::VectorXd& density_on_grid,
                    const QuadGrid& w_grid);

/// Existence-side diagnostics from the SVD of A: squared singular values
/// (Hilbert-Schmidt proxy), the weighted norm of the right-hand side, and the
/// running sums of squared Picard ratios. A blow-up of the partial sums
/// before the numerical noise floor flags likely non-existence.
struct PicardDiagnostics {
    Eigen::VectorXd singular_values;
    Eigen::VectorXd coefficients;      // |u_n . b|
    Eigen::VectorXd picard_partial_sums;
    double hilbert_schmidt_norm_sq = 0.0;
    double b_norm_sq = 0.0;
    int n_above_floor = 0;
    double late_mass_ratio = 0.0; // S[n*] / S[n*/2]
    bool blowup_flagged = false;
};

PicardDiagnostics picard_diagnostics(const DiscretizedEquation& eq, double rel_floor = 1e-12,
                                     double blowup_factor = 100.0);

struct LambdaPoint {
    double lambda = 0.0;
    double residual_norm = 0.0;
    double solution_norm = 0.0;
};

struct LambdaPath {
    std::vector<LambdaPoint> points;
    double chosen_lambda = 0.0;
    int chosen_index = -1;
    bool corner_found = false; // false: residual-plateau fallback picked
};

/// Default regularization rule: corner of the log-log L-curve over a
/// logarithmic lambda grid, located by maximum signed curvature. When the
/// curve has no corner (noise-free systems), the largest lambda whose
/// residual stays within a factor of two of the minimum is used instead.
LambdaPath choose_lambda(const DiscretizedEquation& eq, int count = 25);

} // namespace proxci
