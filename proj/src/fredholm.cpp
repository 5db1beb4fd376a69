#include "proxci/fredholm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace proxci {

void QuadGrid::validate() const {
    if (points.size() < 2) throw Error(ErrorKind::Config, "grid needs at least 2 points");
    if (points.size() != weights.size())
        throw Error(ErrorKind::Config, "grid points and weights differ in length");
    for (int i = 1; i < points.size(); ++i)
        if (!(points(i) > points(i - 1)))
            throw Error(ErrorKind::Config, "grid points must be strictly increasing");
    if ((weights.array() <= 0.0).any())
        throw Error(ErrorKind::Config, "grid weights must be positive");
}

QuadGrid trapezoid_grid(double lo, double hi, int n) {
    if (!(hi > lo) || n < 2) throw Error(ErrorKind::Config, "invalid grid range");
    QuadGrid g;
    g.points.setLinSpaced(n, lo, hi);
    const double h = (hi - lo) / (n - 1);
    g.weights = Eigen::VectorXd::Constant(n, h);
    g.weights(0) = 0.5 * h;
    g.weights(n - 1) = 0.5 * h;
    return g;
}

QuadGrid gauss_legendre_grid(double lo, double hi, int n) {
    if (!(hi > lo) || n < 2) throw Error(ErrorKind::Config, "invalid grid range");
    // Golub-Welsch on the Legendre three-term recurrence
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
    for (int i = 1; i < n; ++i) {
        double b = i / std::sqrt(4.0 * i * i - 1.0);
        J(i, i - 1) = b;
        J(i - 1, i) = b;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
    QuadGrid g;
    g.points.resize(n);
    g.weights.resize(n);
    const double mid = 0.5 * (lo + hi), half = 0.5 * (hi - lo);
    for (int i = 0; i < n; ++i) {
        g.points(i) = mid + half * es.eigenvalues()(i);
        double v0 = es.eigenvectors()(0, i);
        g.weights(i) = 2.0 * v0 * v0 * half;
    }
    return g;
}

DiscretizedEquation discretize(const std::function<double(double w, double z)>& kernel,
                               const std::function<double(double z)>& rhs, QuadGrid w_grid,
                               QuadGrid z_grid, double x, double y, double coverage_tol) {
    w_grid.validate();
    z_grid.validate();
    DiscretizedEquation eq;
    eq.x = x;
    eq.y = y;
    eq.A.resize(z_grid.size(), w_grid.size());
    eq.b.resize(z_grid.size());
    for (int a = 0; a < z_grid.size(); ++a) {
        double row_sum = 0.0;
        for (int bb = 0; bb < w_grid.size(); ++bb) {
            double k = kernel(w_grid.points(bb), z_grid.points(a));
            if (k < 0.0)
                throw Error(ErrorKind::Numeric, "kernel density is negative at (w=" +
                                                    std::to_string(w_grid.points(bb)) +
                                                    ", z=" + std::to_string(z_grid.points(a)) + ")");
            eq.A(a, bb) = k * w_grid.weights(bb);
            row_sum += eq.A(a, bb);
        }
        if (std::abs(row_sum - 1.0) > coverage_tol)
            throw Error(ErrorKind::Numeric,
                        "w grid does not cover the conditional density: row for z=" +
                            std::to_string(z_grid.points(a)) + " integrates to " +
                            std::to_string(row_sum));
        eq.b(a) = rhs(z_grid.points(a));
    }
    eq.w_grid = std::move(w_grid);
    eq.z_grid = std::move(z_grid);
    return eq;
}

TikhonovSolver::TikhonovSolver(const DiscretizedEquation& eq) : A_(eq.A), b_(eq.b) {
    Eigen::BDCSVD<Eigen::MatrixXd> svd(A_, Eigen::ComputeThinU | Eigen::ComputeThinV);
    U_ = svd.matrixU();
    V_ = svd.matrixV();
    sv_ = svd.singularValues();
    utb_ = U_.transpose() * b_;
}

TikhonovSolution TikhonovSolver::solve(double lambda, double rank_tol) const {
    if (lambda < 0.0) throw Error(ErrorKind::Config, "lambda must be non-negative");
    if (lambda == 0.0 && sv_(sv_.size() - 1) <= rank_tol * sv_(0))
        throw Error(ErrorKind::RankCondition,
                    "A is rank-deficient (condition number " +
                        std::to_string(sv_(0) / sv_(sv_.size() - 1)) +
                        "); use lambda > 0 to regularize");
    Eigen::VectorXd filt(sv_.size());
    for (int i = 0; i < sv_.size(); ++i)
        filt(i) = sv_(i) / (sv_(i) * sv_(i) + lambda) * utb_(i);
    TikhonovSolution sol;
    sol.h = V_ * filt;
    sol.lambda = lambda;
    sol.residual_norm = (A_ * sol.h - b_).norm();
    sol.solution_norm = sol.h.norm();
    return sol;
}

TikhonovSolution solve_tikhonov(const DiscretizedEquation& eq, double lambda, double rank_tol) {
    return TikhonovSolver(eq).solve(lambda, rank_tol);
}

double integrate_do(const Eigen::VectorXd& h, const Eigen::VectorXd& density_on_grid,
                    const QuadGrid& w_grid) {
    if (h.size() != w_grid.points.size() || density_on_grid.size() != w_grid.points.size())
        throw Error(ErrorKind::Dimension, "h and density must live on the w grid");
    return (h.array() * density_on_grid.array() * w_grid.weights.array()).sum();
}

PicardDiagnostics picard_diagnostics(const DiscretizedEquation& eq, double rel_floor,
                                     double blowup_factor) {
    TikhonovSolver solver(eq);
    const Eigen::VectorXd& sv = solver.singular_values();

    Eigen::BDCSVD<Eigen::MatrixXd> svd(eq.A, Eigen::ComputeThinU);
    Eigen::VectorXd coeff = (svd.matrixU().transpose() * eq.b).cwiseAbs();

    PicardDiagnostics d;
    d.singular_values = sv;
    d.coefficients = coeff;
    d.hilbert_schmidt_norm_sq = sv.squaredNorm();
    d.b_norm_sq = (eq.b.array().square() * eq.z_grid.weights.array()).sum();

    int n_floor = 0;
    while (n_floor < sv.size() && sv(n_floor) >= rel_floor * sv(0)) ++n_floor;
    d.n_above_floor = n_floor;

    d.picard_partial_sums.resize(n_floor);
    double acc = 0.0;
    for (int i = 0; i < n_floor; ++i) {
        double r = coeff(i) / sv(i);
        acc += r * r;
        d.picard_partial_sums(i) = acc;
    }
    if (n_floor >= 2) {
        double early = d.picard_partial_sums(std::max(0, n_floor / 2 - 1));
        double late = d.picard_partial_sums(n_floor - 1);
        d.late_mass_ratio = early > 0.0 ? late / early : std::numeric_limits<double>::infinity();
        d.blowup_flagged = d.late_mass_ratio > blowup_factor;
    }
    return d;
}

LambdaPath choose_lambda(const DiscretizedEquation& eq, int count) {
    if (count < 3) throw Error(ErrorKind::Config, "lambda grid needs at least 3 values");
    TikhonovSolver solver(eq);
    const double s1 = solver.singular_values()(0);

    LambdaPath path;
    for (int i = 0; i < count; ++i) {
        // sigma1^2 * 10^[-16, 1], the span between machine-noise and
        // fully-smoothed regimes
        double expo = -16.0 + 17.0 * i / (count - 1);
        double lambda = s1 * s1 * std::pow(10.0, expo);
        TikhonovSolution sol = solver.solve(lambda);
        path.points.push_back({lambda, sol.residual_norm, sol.solution_norm});
    }

    // corner = maximum signed curvature of (log rho, log eta); the L turns
    // counterclockwise at its corner when traversed by increasing lambda
    double best_k = 0.0;
    int best_i = -1;
    auto lr = [&](int i) { return std::log(std::max(path.points[i].residual_norm, 1e-300)); };
    auto ln = [&](int i) { return std::log(std::max(path.points[i].solution_norm, 1e-300)); };
    for (int i = 1; i + 1 < count; ++i) {
        double dx1 = lr(i) - lr(i - 1), dy1 = ln(i) - ln(i - 1);
        double dx2 = lr(i + 1) - lr(i), dy2 = ln(i + 1) - ln(i);
        double cross = dx1 * dy2 - dy1 * dx2;
        double a = std::hypot(dx1, dy1), b = std::hypot(dx2, dy2);
        double c = std::hypot(lr(i + 1) - lr(i - 1), ln(i + 1) - ln(i - 1));
        if (a * b * c == 0.0) continue;
        double curvature = 2.0 * cross / (a * b * c);
        if (curvature > best_k) {
            best_k = curvature;
            best_i = i;
        }
    }
    if (best_i >= 0) {
        path.corner_found = true;
        path.chosen_index = best_i;
    } else {
        double rmin = std::numeric_limits<double>::infinity();
        for (const auto& p : path.points) rmin = std::min(rmin, p.residual_norm);
        for (int i = count - 1; i >= 0; --i)
            if (path.points[i].residual_norm <= 2.0 * rmin) {
                path.chosen_index = i;
                break;
            }
    }
    path.chosen_lambda = path.points[path.chosen_index].lambda;
    return path;
}

} // namespace proxci
