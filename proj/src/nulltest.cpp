#include "proxci/nulltest.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include <boost/math/distributions/chi_squared.hpp>

#include "proxci/ident_cat.hpp"

namespace proxci {

namespace {

double chi2_upper_tail(double t, int dof) {
    if (t <= 0.0) return 1.0;
    boost::math::chi_squared dist(static_cast<double>(dof));
    return boost::math::cdf(boost::math::complement(dist, t));
}

void check_cell_dimension(int card_x, int card_z, int card_w) {
    if (card_x * card_z < card_w + 1)
        throw Error(ErrorKind::Dimension,
                    "the test needs strictly more (z,x) cells than reference-proxy levels: have " +
                        std::to_string(card_x * card_z) + " cells for " + std::to_string(card_w) +
                        " levels");
}

} // namespace

StackedMoments build_stacked_moments(const CategoricalDataset& data, int y_level) {
    data.validate();
    if (y_level < 0 || y_level >= data.card_y)
        throw Error(ErrorKind::Config, "y level out of range");
    check_cell_dimension(data.card_x, data.card_z, data.card_w);

    const int nz = data.card_z, nx = data.card_x, nw = data.card_w;
    const int cells = nz * nx;
    Eigen::VectorXd tot = Eigen::VectorXd::Zero(cells);
    Eigen::VectorXd hits = Eigen::VectorXd::Zero(cells);
    Eigen::MatrixXd wcount = Eigen::MatrixXd::Zero(nw, cells);
    for (int r = 0; r < data.n(); ++r) {
        int c = cell_index(data.z[r], data.x[r], nz);
        tot(c) += 1.0;
        if (data.y[r] == y_level) hits(c) += 1.0;
        wcount(data.w[r], c) += 1.0;
    }
    StackedMoments m;
    m.n = data.n();
    m.card_x = nx;
    m.card_z = nz;
    m.card_w = nw;
    m.q.resize(cells);
    m.Q.resize(nw, cells);
    for (int c = 0; c < cells; ++c) {
        if (tot(c) == 0.0)
            throw Error(ErrorKind::SparseCell, "empty (z,x) cell: z=" + std::to_string(c % nz) +
                                                   ",x=" + std::to_string(c / nz));
        m.q(c) = hits(c) / tot(c);
        m.Q.col(c) = wcount.col(c) / tot(c);
    }
    return m;
}

ResidualResult residual_xi(const StackedMoments& moments, const CovEstimate& cov,
                           double rank_tol) {
    const int cells = static_cast<int>(moments.q.size());
    if (cov.values.rows() != cells || cov.values.cols() != cells)
        throw Error(ErrorKind::Dimension, "covariance size does not match the stacked moments");

    // symmetric inverse square root (covers the non-diagonal bootstrap case)
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov.values);
    if (es.eigenvalues().minCoeff() <= 0.0)
        throw Error(ErrorKind::Numeric, "covariance estimate is not positive-definite");
    Eigen::MatrixXd S =
        es.eigenvectors() * es.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() *
        es.eigenvectors().transpose();

    Eigen::MatrixXd B = S * moments.Q.transpose(); // cells x k_w
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(B, Eigen::ComputeThinU);
    const auto& sv = svd.singularValues();
    double min_sv = sv(sv.size() - 1);
    if (min_sv <= rank_tol * sv(0))
        throw Error(ErrorKind::RankCondition,
                    "weighted Q loses full row rank: min singular value " +
                        std::to_string(min_sv) + " vs threshold " +
                        std::to_string(rank_tol * sv(0)));

    Eigen::MatrixXd U = svd.matrixU(); // cells x k_w
    Eigen::VectorXd v = S * moments.q;
    ResidualResult out;
    out.xi = v - U * (U.transpose() * v);
    out.min_sv_weighted = min_sv;
    Eigen::MatrixXd M = Eigen::MatrixXd::Identity(cells, cells) - U * U.transpose();
    out.projector_error = (M * M - M).cwiseAbs().maxCoeff();
    return out;
}

namespace {

NullTestResult finish_test(const StackedMoments& m, const CovEstimate& cov,
                           const NullTestConfig& config, TestScale scale, int level) {
    double tol = config.rank_tol >= 0.0 ? config.rank_tol
                                        : empirical_rank_tolerance(m.card_w, m.n);
    ResidualResult res = residual_xi(m, cov, tol);
    NullTestResult out;
    out.xi = res.xi;
    out.T = m.n * res.xi.squaredNorm();
    out.dof = static_cast<int>(m.q.size()) - m.card_w;
    out.p_value = chi2_upper_tail(out.T, out.dof);
    out.scale = scale;
    out.level = level;
    out.min_sv_weighted = res.min_sv_weighted;
    out.projector_error = res.projector_error;
    out.cov_floored = cov.floor_applied;
    return out;
}

} // namespace

NullTestResult null_test(const CategoricalDataset& data, int y_level,
                         const NullTestConfig& config) {
    const CategoricalDataset* use = &data;
    CategoricalDataset coarsened;
    if (config.coarsen_w_to && *config.coarsen_w_to < data.card_w) {
        coarsened = coarsen_w_for_test(data, *config.coarsen_w_to);
        use = &coarsened;
    }
    StackedMoments m = build_stacked_moments(*use, y_level);
    CovEstimate cov = config.cov == CovMethod::Plugin
                          ? plugin_covariance(*use, y_level, config.eps_floor)
                          : bootstrap_covariance(*use, y_level, config.bootstrap_resamples,
                                                 config.bootstrap_seed, config.eps_floor);
    return finish_test(m, cov, config, TestScale::Probability, y_level);
}

std::vector<NullTestResult> null_test_all_levels(const CategoricalDataset& data,
                                                 const NullTestConfig& config) {
    std::vector<NullTestResult> out;
    for (int y = 0; y < data.card_y; ++y) out.push_back(null_test(data, y, config));
    return out;
}

NullTestResult null_test_mean_scale(const NumericOutcomeDataset& data,
                                    const NullTestConfig& config) {
    check_cell_dimension(data.card_x, data.card_z, data.card_w);
    const int nz = data.card_z, nx = data.card_x, nw = data.card_w;
    const int cells = nz * nx;

    StackedMoments m;
    m.n = data.n();
    m.card_x = nx;
    m.card_z = nz;
    m.card_w = nw;
    m.q = cell_means(data);
    Eigen::MatrixXd wcount = Eigen::MatrixXd::Zero(nw, cells);
    Eigen::VectorXd tot = Eigen::VectorXd::Zero(cells);
    for (int r = 0; r < data.n(); ++r) {
        int c = cell_index(data.z[r], data.x[r], nz);
        wcount(data.w[r], c) += 1.0;
        tot(c) += 1.0;
    }
    m.Q.resize(nw, cells);
    for (int c = 0; c < cells; ++c) m.Q.col(c) = wcount.col(c) / tot(c);

    CovEstimate cov = mean_scale_covariance(data);
    return finish_test(m, cov, config, TestScale::Mean, 0);
}

namespace {

// W-only merge search: partitions of W levels into k blocks (Z untouched),
// maximizing the worst min-singular-value of the row-pooled per-x blocks.
std::vector<int> coarsen_w_groups(const std::vector<Eigen::MatrixXd>& per_x, int k,
                                  double rank_tol) {
    const int kw = static_cast<int>(per_x.at(0).rows());
    if (k < 1 || k > kw)
        throw Error(ErrorKind::Dimension, "W coarsening target out of range");

    auto pooled_score = [&](const std::vector<int>& groups) {
        double worst = std::numeric_limits<double>::infinity();
        for (const auto& mat : per_x) {
            Eigen::MatrixXd pooled = Eigen::MatrixXd::Zero(k, mat.cols());
            for (int r = 0; r < kw; ++r) pooled.row(groups[r]) += mat.row(r);
            Eigen::JacobiSVD<Eigen::MatrixXd> svd(pooled);
            worst = std::min(worst, svd.singularValues().minCoeff());
        }
        return worst;
    };

    // exhaustive over restricted growth strings; kw stays small in practice
    std::vector<int> best;
    double best_score = -1.0;
    std::vector<int> a(kw, 0);
    std::function<void(int, int)> rec = [&](int pos, int maxUsed) {
        if (pos == kw) {
            if (maxUsed + 1 == k) {
                double s = pooled_score(a);
                if (s > best_score) {
                    best_score = s;
                    best = a;
                }
            }
            return;
        }
        if (maxUsed + 1 + (kw - pos) < k) return;
        for (int g = 0; g <= std::min(maxUsed + 1, k - 1); ++g) {
            a[pos] = g;
            rec(pos + 1, std::max(maxUsed, g));
        }
    };
    rec(0, -1);

    if (best.empty() || best_score <= rank_tol)
        throw Error(ErrorKind::Coarsening, "no W coarsening to k=" + std::to_string(k) +
                                               " keeps the stacked matrix full row rank");
    return best;
}

} // namespace

CategoricalDataset coarsen_w_for_test(const CategoricalDataset& data, int k, double rank_tol) {
    data.validate();
    if (k == data.card_w) return data;
    std::vector<Eigen::MatrixXd> per_x;
    for (int x = 0; x < data.card_x; ++x)
        per_x.push_back(cond_prob_matrix(data, Var::W, Var::Z, {{Var::X, x}}).values());
    std::vector<int> groups = coarsen_w_groups(per_x, k, rank_tol);
    CategoricalDataset out = data;
    for (auto& wv : out.w) wv = groups[wv];
    out.card_w = k;
    out.labels.erase("w");
    return out;
}

double combine_levels(const std::vector<NullTestResult>& results, CombineMethod method) {
    if (results.empty()) throw Error(ErrorKind::Config, "no test results to combine");
    switch (method) {
        case CombineMethod::Bonferroni: {
            double pmin = 1.0;
            for (const auto& r : results) pmin = std::min(pmin, r.p_value);
            return std::min(1.0, pmin * static_cast<double>(results.size()));
        }
    }
    throw Error(ErrorKind::Config, "unknown combination method");
}

NullTestResult test_other_diagrams(const CategoricalDataset& data, Diagram diagram,
                                   int outcome_level, const NullTestConfig& config) {
    data.validate();
    switch (diagram) {
        case Diagram::F:
        case Diagram::D:
        case Diagram::E:
            return null_test(data, outcome_level, config);

        case Diagram::C:
        case Diagram::A: {
            // single outcome-side proxy; cells are the X levels alone
            CategoricalDataset t = data;
            t.z.assign(data.x.size(), 0);
            t.card_z = 1;
            t.labels.erase("z");
            if (diagram == Diagram::A) { // diagram (a)'s proxy arrives as Z
                t.w = data.z;
                t.card_w = data.card_z;
            }
            if (t.card_x < t.card_w + 1)
                throw Error(ErrorKind::Dimension,
                            "single-proxy test needs X to have more categories than the proxy: "
                            "have " +
                                std::to_string(t.card_x) + " X levels for " +
                                std::to_string(t.card_w) + " proxy levels");
            return null_test(t, outcome_level, config);
        }

        case Diagram::B: {
            // treatment-side proxy only; the null is symmetric in X and Y,
            // so swap roles: cells are the Y levels, Z is the reference
            // proxy, and the tested level is an X level
            CategoricalDataset t;
            t.x = data.y;
            t.card_x = data.card_y;
            t.y = data.x;
            t.card_y = data.card_x;
            t.w = data.z;
            t.card_w = data.card_z;
            t.z.assign(data.x.size(), 0);
            t.card_z = 1;
            t.u = data.u;
            t.card_u = data.card_u;
            if (t.card_x < t.card_w + 1)
                throw Error(ErrorKind::Dimension,
                            "single-proxy test needs Y to have more categories than the proxy: "
                            "have " +
                                std::to_string(data.card_y) + " Y levels for " +
                                std::to_string(t.card_w) + " proxy levels");
            if (outcome_level < 0 || outcome_level >= t.card_y)
                throw Error(ErrorKind::Config,
                            "for this diagram the tested level indexes X, which has " +
                                std::to_string(t.card_y) + " levels");
            return null_test(t, outcome_level, config);
        }
    }
    throw Error(ErrorKind::Config, "unknown diagram");
}

} // namespace proxci
