#pragma once

#include <Eigen/Dense>

#include <optional>
#include <utility>
#include <vector>

#include "proxci/tabular.hpp"

namespace proxci {

struct RankDiagnostics {
    double condition_number = 0.0;
    double min_singular_value = 0.0;
    double max_singular_value = 0.0;
    bool invertible = false;
    double tolerance_used = 0.0;
    // 2x2 case: |pr(w1|z1,x) - pr(w1|z2,x)|, the binary association gap
    // behind "(i) holds if both Z and W are correlated within each level of X"
    std::optional<double> binary_column_gap;
};

/// Singular-value diagnostics for the rank condition. `invertible` holds when
/// min_sv > tol * max_sv (and the matrix is square).
RankDiagnostics rank_diagnostics(const Eigen::MatrixXd& m, double tol = 1e-8);

/// Data-driven tolerance for empirical matrices: sqrt(rows / n).
double empirical_rank_tolerance(int rows, int n);

/// pr{y | do(x)} = P(y|Z,x) P(W|Z,x)^{-1} P(W), via a linear solve on the
/// transposed system. Requires a square, invertible P(W|Z,x).
double causal_effect_categorical(const Eigen::RowVectorXd& p_y_given_zx,
                                 const CondProbMatrix& p_w_given_zx, const MarginalPmf& p_w,
                                 double tol = 1e-8);

/// Two-proxy weighted average for the all-binary case; algebraically equal to
/// the matrix formula on the corresponding 2x2 inputs.
double causal_effect_binary(double pw1, double pw1_z1x, double pw1_z2x, double py_z1x,
                            double py_z2x);

/// P(Y|U,x) = P(Y|Z,x) P(W|Z,x)^{-1} P(W|U). Unlike the causal effect this
/// depends on the error mechanism P(W|U), which must be supplied externally;
/// used for oracle cross-checks only.
Eigen::MatrixXd outcome_given_confounder(const Eigen::MatrixXd& p_y_given_zx,
                                         const CondProbMatrix& p_w_given_zx,
                                         const CondProbMatrix& p_w_given_u, double tol = 1e-8);

/// Assignment of source levels to merged levels for W and Z.
struct CoarseningMap {
    std::vector<int> w_groups; // level -> group in [0, k)
    std::vector<int> z_groups;
    int k = 0;

    bool is_identity() const;
};

/// Merge W levels and Z levels down to k groups, maximizing the minimum
/// singular value of the coarsened k x k matrix. Exhaustive over set
/// partitions when that search is small, greedy-agglomerative otherwise.
/// `z_weights` are the column weights used when pooling Z levels (uniform
/// when absent).
std::pair<CoarseningMap, Eigen::MatrixXd> coarsen(const Eigen::MatrixXd& p_w_given_z, int k,
                                                  const std::optional<Eigen::VectorXd>& z_weights =
                                                      std::nullopt,
                                                  double tol = 1e-8);

/// Apply a coarsening map to a matrix: rows pooled by w_groups, columns
/// pooled by z_groups with the given weights.
Eigen::MatrixXd apply_coarsening(const Eigen::MatrixXd& p_w_given_z, const CoarseningMap& map,
                                 const std::optional<Eigen::VectorXd>& z_weights = std::nullopt);

struct EffectRow {
    int x = 0, y = 0;
    double estimate = 0.0;       // clipped to [0,1] when `clipped`
    double estimate_raw = 0.0;   // unclipped plug-in value
    double naive_estimate = 0.0; // sum_z p(y|z,x) p(z), the single-proxy adjustment
    double condition_number = 0.0;
    bool clipped = false;
    bool coarsening_used = false;
};

struct EffectTable {
    std::vector<EffectRow> rows;
    bool smoothed = false;

    const EffectRow& at(int x, int y) const;
};

struct IdentifyConfig {
    double rank_tol = -1.0;        // < 0: data-driven sqrt(k_w / n)
    bool auto_coarsen = true;      // coarsen when P(W|Z,x) is not square
    std::optional<int> coarsen_k;  // force a target cardinality
    Smoothing smoothing;
};

/// Full plug-in effect table over (x, y) with per-x diagnostics and the
/// naive comparison column.
EffectTable identify_from_data(const CategoricalDataset& data, const IdentifyConfig& config = {});

} // namespace proxci
