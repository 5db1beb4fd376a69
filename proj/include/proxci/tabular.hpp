#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "proxci/error.hpp"

namespace proxci {

enum class Var { X, Z, W, Y };

const char* to_string(Var v);

/// n observations of discrete (X, Z, W, Y) with an optional hidden-truth
/// column U. Estimators never read `u`; it exists for oracle checks only.
struct CategoricalDataset {
    std::vector<int> x, z, w, y;
    std::optional<std::vector<int>> u;
    int card_x = 0, card_z = 0, card_w = 0, card_y = 0, card_u = 0;

    // level labels per variable, in index order (empty when data was built
    // programmatically rather than loaded from a file)
    std::map<std::string, std::vector<std::string>> labels;

    int n() const { return static_cast<int>(x.size()); }
    const std::vector<int>& column(Var v) const;
    int cardinality(Var v) const;

    CategoricalDataset without_u() const;
    void validate() const;
};

/// Column-name mapping for CSV ingestion. An empty name means the column is
/// absent from the file: allowed for z and w (single-proxy designs get a
/// synthetic constant column) and for u (simply omitted).
struct CsvSchema {
    std::string x = "x";
    std::string z = "z";
    std::string w = "w";
    std::string y = "y";
    std::string u = "u";
    bool u_required = false;
};

CategoricalDataset load_csv(const std::string& path, const CsvSchema& schema = {});

/// Stacking order shared by every (z, x)-cell-indexed object: z fastest.
inline int cell_index(int z, int x, int card_z) { return x * card_z + z; }

using Stratum = std::vector<std::pair<Var, int>>;

/// Optional Laplace +alpha smoothing for exploratory use; estimates built
/// with it are flagged downstream, never silently substituted.
struct Smoothing {
    bool enabled = false;
    double alpha = 0.5;
};

/// Column-stochastic matrix of conditional probabilities, e.g. P(W | Z, x).
/// Entry (a, b) = pr(target = a | given = b, stratum). Construction checks
/// entries lie in [0, 1] and columns sum to 1 within 1e-12.
class CondProbMatrix {
  public:
    static CondProbMatrix checked(Eigen::MatrixXd values, std::string description);

    const Eigen::MatrixXd& values() const { return values_; }
    const std::string& description() const { return description_; }
    Eigen::Index rows() const { return values_.rows(); }
    Eigen::Index cols() const { return values_.cols(); }

  private:
    CondProbMatrix(Eigen::MatrixXd v, std::string d)
        : values_(std::move(v)), description_(std::move(d)) {}

    Eigen::MatrixXd values_;
    std::string description_;
};

struct MarginalPmf {
    Eigen::VectorXd values;
};

/// Plug-in covariance of n^{1/2} q_y, positive-definite by construction:
/// entries are floored at eps and the flag records whether the floor fired.
struct CovEstimate {
    Eigen::MatrixXd values;
    bool floor_applied = false;
};

/// Empirical pr(target | given, stratum); every conditioning cell must
/// contain at least one observation.
CondProbMatrix cond_prob_matrix(const CategoricalDataset& data, Var target, Var given,
                                const Stratum& stratum = {}, const Smoothing& smoothing = {});

MarginalPmf marginal_pmf(const CategoricalDataset& data, Var target);

/// Diagonal multinomial plug-in for the covariance of n^{1/2} q_y: entry for
/// cell (z, x) is p(1-p) / p(z,x) with p = pr(y | z, x), floored at eps.
CovEstimate plugin_covariance(const CategoricalDataset& data, int y_level,
                              double eps_floor = 1e-6);

/// Nonparametric-bootstrap alternative (B row resamples); returns the full
/// (generally non-diagonal) covariance with eigenvalues floored at eps.
CovEstimate bootstrap_covariance(const CategoricalDataset& data, int y_level, int resamples,
                                 std::uint64_t seed, double eps_floor = 1e-6);

/// Fully numeric records (x, z, w, y) for the continuous-confounder path,
/// with the same hidden-truth convention for u.
struct NumericDataset {
    Eigen::VectorXd x, z, w, y;
    std::optional<Eigen::VectorXd> u;

    int n() const { return static_cast<int>(x.size()); }
};

NumericDataset load_numeric_csv(const std::string& path, const CsvSchema& schema = {});

/// Discrete (X, Z, W) with a numeric outcome, for the mean-scale test.
struct NumericOutcomeDataset {
    std::vector<int> x, z, w;
    Eigen::VectorXd y;
    int card_x = 0, card_z = 0, card_w = 0;

    int n() const { return static_cast<int>(x.size()); }
};

NumericOutcomeDataset load_numeric_outcome_csv(const std::string& path,
                                               const CsvSchema& schema = {});

/// Cell means of Y stacked in the shared order (z fastest, then x).
Eigen::VectorXd cell_means(const NumericOutcomeDataset& data);

/// Delta-method covariance for the mean-scale statistic: within-cell sample
/// variance divided by the cell share. Zero within-cell variance is an error.
CovEstimate mean_scale_covariance(const NumericOutcomeDataset& data);

} // namespace proxci
