#include "proxci/ident_cat.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>

namespace proxci {

RankDiagnostics rank_diagnostics(const Eigen::MatrixXd& m, double tol) {
    if (m.size() == 0) throw Error(ErrorKind::Dimension, "rank diagnostics of an empty matrix");
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
    const auto& sv = svd.singularValues();
    RankDiagnostics d;
    d.max_singular_value = sv(0);
    d.min_singular_value = sv(sv.size() - 1);
    d.tolerance_used = tol;
    d.condition_number = d.min_singular_value > 0.0
                             ? d.max_singular_value / d.min_singular_value
                             : std::numeric_limits<double>::infinity();
    d.invertible = (m.rows() == m.cols()) &&
                   (d.min_singular_value > tol * d.max_singular_value);
    if (m.rows() == 2 && m.cols() == 2) d.binary_column_gap = std::abs(m(0, 0) - m(0, 1));
    return d;
}

double empirical_rank_tolerance(int rows, int n) {
    if (n < 1) throw Error(ErrorKind::Config, "sample size must be positive");
    return std::sqrt(static_cast<double>(rows) / static_cast<double>(n));
}

namespace {

std::string rank_message(const char* what, const RankDiagnostics& d) {
    std::ostringstream os;
    os << what << ": min singular value " << d.min_singular_value << " vs threshold "
       << d.tolerance_used * d.max_singular_value << " (condition number " << d.condition_number
       << ")";
    return os.str();
}

} // namespace

double causal_effect_categorical(const Eigen::RowVectorXd& p_y_given_zx,
                                 const CondProbMatrix& p_w_given_zx, const MarginalPmf& p_w,
                                 double tol) {
    const Eigen::MatrixXd& P = p_w_given_zx.values();
    if (P.rows() != P.cols())
        throw Error(ErrorKind::Dimension, "P(W|Z,x) must be square; W and Z need equal "
                                          "cardinality (coarsen first)");
    if (p_y_given_zx.cols() != P.cols() || p_w.values.size() != P.rows())
        throw Error(ErrorKind::Dimension, "dimension mismatch between P(y|Z,x), P(W|Z,x), P(W)");

    RankDiagnostics d = rank_diagnostics(P, tol);
    if (!d.invertible)
        throw Error(ErrorKind::RankCondition, rank_message("P(W|Z,x) fails the rank condition", d));

    // p_y P^{-1} p_w solved as (P^T v = p_y^T), effect = v . p_w
    Eigen::VectorXd v = P.transpose().colPivHouseholderQr().solve(p_y_given_zx.transpose());
    return v.dot(p_w.values);
}

double causal_effect_binary(double pw1, double pw1_z1x, double pw1_z2x, double py_z1x,
                            double py_z2x) {
    const double denom = pw1_z1x - pw1_z2x;
    if (denom == 0.0)
        throw Error(ErrorKind::RankCondition,
                    "pr(w1|z1,x) equals pr(w1|z2,x): the binary rank condition fails");
    return (pw1 - pw1_z2x) / denom * py_z1x + (pw1_z1x - pw1) / denom * py_z2x;
}

Eigen::MatrixXd outcome_given_confounder(const Eigen::MatrixXd& p_y_given_zx,
                                         const CondProbMatrix& p_w_given_zx,
                                         const CondProbMatrix& p_w_given_u, double tol) {
    const Eigen::MatrixXd& P = p_w_given_zx.values();
    if (P.rows() != P.cols())
        throw Error(ErrorKind::Dimension, "P(W|Z,x) must be square");
    if (p_y_given_zx.cols() != P.cols() || p_w_given_u.rows() != P.rows())
        throw Error(ErrorKind::Dimension, "dimension mismatch in P(y|U,x) construction");

    RankDiagnostics d = rank_diagnostics(P, tol);
    if (!d.invertible)
        throw Error(ErrorKind::RankCondition, rank_message("P(W|Z,x) fails the rank condition", d));

    Eigen::MatrixXd V =
        P.transpose().colPivHouseholderQr().solve(p_y_given_zx.transpose()).transpose();
    return V * p_w_given_u.values();
}

bool CoarseningMap::is_identity() const {
    for (std::size_t i = 0; i < w_groups.size(); ++i)
        if (w_groups[i] != static_cast<int>(i)) return false;
    for (std::size_t i = 0; i < z_groups.size(); ++i)
        if (z_groups[i] != static_cast<int>(i)) return false;
    return true;
}

Eigen::MatrixXd apply_coarsening(const Eigen::MatrixXd& p_w_given_z, const CoarseningMap& map,
                                 const std::optional<Eigen::VectorXd>& z_weights) {
    const int kw = static_cast<int>(p_w_given_z.rows());
    const int jz = static_cast<int>(p_w_given_z.cols());
    if (static_cast<int>(map.w_groups.size()) != kw ||
        static_cast<int>(map.z_groups.size()) != jz)
        throw Error(ErrorKind::Dimension, "coarsening map does not match matrix dimensions");
    int kr = *std::max_element(map.w_groups.begin(), map.w_groups.end()) + 1;
    int kc = *std::max_element(map.z_groups.begin(), map.z_groups.end()) + 1;

    Eigen::VectorXd wt = z_weights ? *z_weights : Eigen::VectorXd::Ones(jz);
    if (wt.size() != jz) throw Error(ErrorKind::Dimension, "z weight vector has wrong length");

    Eigen::MatrixXd pooled_rows = Eigen::MatrixXd::Zero(kr, jz);
    for (int r = 0; r < kw; ++r) pooled_rows.row(map.w_groups[r]) += p_w_given_z.row(r);

    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(kr, kc);
    Eigen::VectorXd colwt = Eigen::VectorXd::Zero(kc);
    for (int c = 0; c < jz; ++c) {
        out.col(map.z_groups[c]) += wt(c) * pooled_rows.col(c);
        colwt(map.z_groups[c]) += wt(c);
    }
    for (int c = 0; c < kc; ++c) {
        if (colwt(c) <= 0.0)
            throw Error(ErrorKind::Support, "coarsened Z group " + std::to_string(c) +
                                                " carries zero weight");
        out.col(c) /= colwt(c);
    }
    return out;
}

namespace {

double stirling2(int n, int k) {
    if (k <= 0 || k > n) return 0.0;
    std::vector<std::vector<double>> s(n + 1, std::vector<double>(k + 1, 0.0));
    s[0][0] = 1.0;
    for (int a = 1; a <= n; ++a)
        for (int b = 1; b <= std::min(a, k); ++b)
            s[a][b] = b * s[a - 1][b] + s[a - 1][b - 1];
    return s[n][k];
}

// All partitions of {0..n-1} into exactly k blocks, as restricted growth strings.
void partitions_into_k(int n, int k, std::vector<std::vector<int>>& out) {
    std::vector<int> a(n, 0);
    std::function<void(int, int)> rec = [&](int pos, int maxUsed) {
        if (pos == n) {
            if (maxUsed + 1 == k) out.push_back(a);
            return;
        }
        // prune: remaining positions must be able to reach k blocks
        if (maxUsed + 1 + (n - pos) < k) return;
        for (int g = 0; g <= std::min(maxUsed + 1, k - 1); ++g) {
            a[pos] = g;
            rec(pos + 1, std::max(maxUsed, g));
        }
    };
    rec(0, -1);
}

double min_singular_value(const Eigen::MatrixXd& m) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
    return svd.singularValues()(svd.singularValues().size() - 1);
}

std::vector<int> identity_groups(int n) {
    std::vector<int> g(n);
    for (int i = 0; i < n; ++i) g[i] = i;
    return g;
}

// Shared search over W/Z merges maximizing the worst min-singular-value
// across a family of matrices (one per treatment level).
std::pair<CoarseningMap, Eigen::MatrixXd> coarsen_family(
    const std::vector<Eigen::MatrixXd>& mats, int k,
    const std::optional<Eigen::VectorXd>& z_weights, double tol) {
    if (mats.empty()) throw Error(ErrorKind::Dimension, "no matrices to coarsen");
    const int kw = static_cast<int>(mats[0].rows());
    const int jz = static_cast<int>(mats[0].cols());
    if (k < 1 || kw < k || jz < k)
        throw Error(ErrorKind::Dimension,
                    "coarsening target k=" + std::to_string(k) + " exceeds available levels (" +
                        std::to_string(kw) + " W, " + std::to_string(jz) + " Z)");

    auto score = [&](const CoarseningMap& map) {
        double worst = std::numeric_limits<double>::infinity();
        for (const auto& m : mats)
            worst = std::min(worst, min_singular_value(apply_coarsening(m, map, z_weights)));
        return worst;
    };

    CoarseningMap best;
    double best_score = -1.0;

    const double search_size = stirling2(kw, k) * stirling2(jz, k);
    if (search_size <= 1e4) {
        std::vector<std::vector<int>> wparts, zparts;
        partitions_into_k(kw, k, wparts);
        partitions_into_k(jz, k, zparts);
        for (const auto& wp : wparts)
            for (const auto& zp : zparts) {
                CoarseningMap map{wp, zp, k};
                double s = score(map);
                if (s > best_score) {
                    best_score = s;
                    best = map;
                }
            }
    } else {
        // greedy agglomerative: repeatedly apply the merge that keeps the
        // minimum singular value highest
        CoarseningMap cur{identity_groups(kw), identity_groups(jz), k};
        int ngw = kw, ngz = jz;
        while (ngw > k || ngz > k) {
            double best_merge = -1.0;
            CoarseningMap best_map;
            int best_ngw = ngw, best_ngz = ngz;
            auto try_merge = [&](bool on_w, int g1, int g2) {
                CoarseningMap cand = cur;
                auto& groups = on_w ? cand.w_groups : cand.z_groups;
                int hi = std::max(g1, g2), lo = std::min(g1, g2);
                for (auto& g : groups) {
                    if (g == hi) g = lo;
                    else if (g > hi) --g;
                }
                double s = score(cand);
                if (s > best_merge) {
                    best_merge = s;
                    best_map = cand;
                    best_ngw = on_w ? ngw - 1 : ngw;
                    best_ngz = on_w ? ngz : ngz - 1;
                }
            };
            if (ngw > k)
                for (int g1 = 0; g1 < ngw; ++g1)
                    for (int g2 = g1 + 1; g2 < ngw; ++g2) try_merge(true, g1, g2);
            if (ngz > k)
                for (int g1 = 0; g1 < ngz; ++g1)
                    for (int g2 = g1 + 1; g2 < ngz; ++g2) try_merge(false, g1, g2);
            cur = best_map;
            ngw = best_ngw;
            ngz = best_ngz;
        }
        best = cur;
        best_score = score(best);
    }

    Eigen::MatrixXd result = apply_coarsening(mats[0], best, z_weights);
    RankDiagnostics d = rank_diagnostics(result, tol);
    if (best_score <= tol * d.max_singular_value)
        throw Error(ErrorKind::Coarsening,
                    "no coarsening to k=" + std::to_string(k) +
                        " achieves invertibility; best min singular value " +
                        std::to_string(best_score));
    return {best, result};
}

} // namespace

std::pair<CoarseningMap, Eigen::MatrixXd> coarsen(const Eigen::MatrixXd& p_w_given_z, int k,
                                                  const std::optional<Eigen::VectorXd>& z_weights,
                                                  double tol) {
    return coarsen_family({p_w_given_z}, k, z_weights, tol);
}

const EffectRow& EffectTable::at(int x, int y) const {
    for (const auto& r : rows)
        if (r.x == x && r.y == y) return r;
    throw Error(ErrorKind::Config, "no effect row for x=" + std::to_string(x) +
                                       ", y=" + std::to_string(y));
}

namespace {

CategoricalDataset relabel(const CategoricalDataset& data, const CoarseningMap& map) {
    CategoricalDataset out = data;
    for (auto& wv : out.w) wv = map.w_groups[wv];
    for (auto& zv : out.z) zv = map.z_groups[zv];
    out.card_w = *std::max_element(map.w_groups.begin(), map.w_groups.end()) + 1;
    out.card_z = *std::max_element(map.z_groups.begin(), map.z_groups.end()) + 1;
    out.labels.erase("w");
    out.labels.erase("z");
    return out;
}

} // namespace

EffectTable identify_from_data(const CategoricalDataset& data, const IdentifyConfig& config) {
    data.validate();
    if (data.card_x < 2 || data.card_z < 2 || data.card_w < 2 || data.card_y < 2)
        throw Error(ErrorKind::Dimension,
                    "identification needs at least two levels for each of X, Z, W, Y");

    // naive single-proxy adjustment uses the original Z
    MarginalPmf p_z = marginal_pmf(data, Var::Z);
    std::vector<Eigen::MatrixXd> naive_y_zx(data.card_x);
    for (int x = 0; x < data.card_x; ++x)
        naive_y_zx[x] = cond_prob_matrix(data, Var::Y, Var::Z, {{Var::X, x}}, config.smoothing)
                            .values();

    // choose a single coarsening shared across x when W and Z cardinalities
    // differ (or when forced): per-x maps would define different variables
    CategoricalDataset work = data;
    bool coarsened = false;
    int target_k = config.coarsen_k.value_or(std::min(data.card_w, data.card_z));
    if (config.coarsen_k || (data.card_w != data.card_z && config.auto_coarsen)) {
        std::vector<Eigen::MatrixXd> per_x;
        for (int x = 0; x < data.card_x; ++x)
            per_x.push_back(
                cond_prob_matrix(data, Var::W, Var::Z, {{Var::X, x}}, config.smoothing).values());
        auto [map, mat] = coarsen_family(per_x, target_k, marginal_pmf(data, Var::Z).values,
                                         config.rank_tol < 0
                                             ? empirical_rank_tolerance(target_k, data.n())
                                             : config.rank_tol);
        if (!map.is_identity()) {
            work = relabel(data, map);
            coarsened = true;
        }
    } else if (data.card_w != data.card_z) {
        throw Error(ErrorKind::Dimension, "P(W|Z,x) is not square and coarsening is disabled");
    }

    const double tol = config.rank_tol < 0 ? empirical_rank_tolerance(work.card_w, work.n())
                                           : config.rank_tol;

    MarginalPmf p_w = marginal_pmf(work, Var::W);
    EffectTable table;
    table.smoothed = config.smoothing.enabled;
    for (int x = 0; x < work.card_x; ++x) {
        CondProbMatrix p_wz = cond_prob_matrix(work, Var::W, Var::Z, {{Var::X, x}},
                                               config.smoothing);
        CondProbMatrix p_yz = cond_prob_matrix(work, Var::Y, Var::Z, {{Var::X, x}},
                                               config.smoothing);
        RankDiagnostics diag = rank_diagnostics(p_wz.values(), tol);
        for (int y = 0; y < work.card_y; ++y) {
            EffectRow row;
            row.x = x;
            row.y = y;
            row.estimate_raw =
                causal_effect_categorical(p_yz.values().row(y), p_wz, p_w, tol);
            row.estimate = std::clamp(row.estimate_raw, 0.0, 1.0);
            row.clipped = row.estimate != row.estimate_raw;
            row.naive_estimate = naive_y_zx[x].row(y).dot(p_z.values);
            row.condition_number = diag.condition_number;
            row.coarsening_used = coarsened;
            table.rows.push_back(row);
        }
    }
    return table;
}

} // namespace proxci
