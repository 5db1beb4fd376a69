#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <vector>

#include "proxci/diagram.hpp"
#include "proxci/tabular.hpp"

namespace proxci {

/// q_y stacked over (z, x) cells (z fastest) next to the matrix Q whose
/// columns are the conditional pmfs of W in the same cells.
struct StackedMoments {
    Eigen::VectorXd q;  // length i*j
    Eigen::MatrixXd Q;  // k_w x (i*j)
    int n = 0;
    int card_x = 0, card_z = 0, card_w = 0;
};

StackedMoments build_stacked_moments(const CategoricalDataset& data, int y_level);

struct ResidualResult {
    Eigen::VectorXd xi;
    double min_sv_weighted = 0.0;  // smallest singular value of Sigma^{-1/2} Q^T
    double projector_error = 0.0;  // max-norm of M^2 - M
};

/// Least-squares residual of regressing Sigma^{-1/2} q on Sigma^{-1/2} Q^T.
/// Fails with a rank error when the weighted Q loses full row rank.
ResidualResult residual_xi(const StackedMoments& moments, const CovEstimate& cov,
                           double rank_tol);

enum class TestScale { Probability, Mean };

struct NullTestResult {
    double T = 0.0;
    int dof = 0;
    double p_value = 1.0;
    Eigen::VectorXd xi;
    TestScale scale = TestScale::Probability;
    int level = 0;  // tested outcome level
    double min_sv_weighted = 0.0;
    double projector_error = 0.0;
    bool cov_floored = false;
};

enum class CovMethod { Plugin, Bootstrap };

struct NullTestConfig {
    CovMethod cov = CovMethod::Plugin;
    int bootstrap_resamples = 500;
    std::uint64_t bootstrap_seed = 0;
    double eps_floor = 1e-6;
    double rank_tol = -1.0;  // < 0: data-driven sqrt(k_w / n)
    std::optional<int> coarsen_w_to;
};

/// Test of the causal null (no treatment effect within any confounder
/// stratum) at one outcome level: T = n ||xi||^2 against chi-square with
/// i*j - k_w degrees of freedom.
NullTestResult null_test(const CategoricalDataset& data, int y_level,
                         const NullTestConfig& config = {});

std::vector<NullTestResult> null_test_all_levels(const CategoricalDataset& data,
                                                 const NullTestConfig& config = {});

/// Same pipeline on the mean scale: q holds cell means of a numeric outcome,
/// the covariance is the delta-method diagonal of cell-mean variances.
NullTestResult null_test_mean_scale(const NumericOutcomeDataset& data,
                                    const NullTestConfig& config = {});

/// Merge W levels down to k (Z left intact), choosing the merge that best
/// preserves the row rank of the stacked P(W|Z,x) blocks.
CategoricalDataset coarsen_w_for_test(const CategoricalDataset& data, int k,
                                      double rank_tol = 1e-8);

enum class CombineMethod { Bonferroni };

/// Combined p-value across outcome levels: min(1, m * min p).
double combine_levels(const std::vector<NullTestResult>& results,
                      CombineMethod method = CombineMethod::Bonferroni);

/// Null test adapted to the other diagrams.
///  - f, d, e: both proxies present, identical to null_test.
///  - c (outcome-side proxy only): Z is treated as constant, so the cells
///    are the X levels; requires more X categories than W levels.
///  - a (nondifferential proxy): as (c) with Z serving as the outcome-side
///    proxy.
///  - b (treatment-side proxy only): the causal null is symmetric in X and
///    Y, so the test runs with the roles swapped: cells are the Y levels, Z
///    serves as the reference proxy, and `outcome_level` names an X level;
///    requires more Y categories than Z levels.
NullTestResult test_other_diagrams(const CategoricalDataset& data, Diagram diagram,
                                   int outcome_level, const NullTestConfig& config = {});

} // namespace proxci
