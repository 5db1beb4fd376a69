#include <doctest.h>

#include <cmath>
#include <random>

#include "proxci/dgp.hpp"
#include "proxci/ident_cat.hpp"
#include "proxci/rng.hpp"
#include "support.hpp"

using namespace proxci;

namespace {

CondProbMatrix cpm(const Eigen::MatrixXd& m) { return CondProbMatrix::checked(m, "test"); }

Eigen::MatrixXd matrix2(double a, double b, double c, double d) {
    Eigen::MatrixXd m(2, 2);
    m << a, b, c, d;
    return m;
}

} // namespace

TEST_SUITE_BEGIN("ident_cat");

TEST_CASE("identity reference matrix reduces to direct adjustment") {
    Eigen::RowVectorXd p_y(2);
    p_y << 0.5, 0.5;
    MarginalPmf p_w{Eigen::Vector2d(0.3, 0.7)};
    double effect = causal_effect_categorical(p_y, cpm(Eigen::MatrixXd::Identity(2, 2)), p_w);
    CHECK(effect == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("constant outcome row gives the constant") {
    Eigen::RowVectorXd p_y(2);
    p_y << 0.37, 0.37;
    MarginalPmf p_w{Eigen::Vector2d(0.6, 0.4)};
    double effect =
        causal_effect_categorical(p_y, cpm(matrix2(0.8, 0.4, 0.2, 0.6)), p_w);
    CHECK(effect == doctest::Approx(0.37).epsilon(1e-12));
}

TEST_CASE("matrix formula matches the enumeration oracle at population level") {
    for (int k : {2, 3, 4}) {
        for (int rep = 0; rep < 20; ++rep) {
            ModelDims dims;
            dims.n_x = 2;
            dims.n_z = k;
            dims.n_w = k;
            dims.n_y = 2;
            dims.n_u = k;
            LatentClassModel model =
                random_model(dims, Diagram::F, 1000 + 97 * k + rep, {false, 0.05, 10000});
            Eigen::MatrixXd oracle = oracle_do_categorical(model);
            for (int x = 0; x < model.n_x; ++x) {
                PopulationMatrices pm = population_matrices(model, x);
                CondProbMatrix p_wz = cpm(pm.p_w_given_zx);
                MarginalPmf p_w{pm.p_w};
                for (int y = 0; y < model.n_y; ++y) {
                    double eff =
                        causal_effect_categorical(pm.p_y_given_zx.row(y), p_wz, p_w, 1e-8);
                    CHECK(std::abs(eff - oracle(y, x)) < 1e-10);
                }
            }
        }
    }
}

TEST_CASE("effects over outcome levels sum to one on population inputs") {
    LatentClassModel model = random_model({2, 3, 3, 3, 3}, Diagram::F, 555, {false, 0.05, 10000});
    for (int x = 0; x < model.n_x; ++x) {
        PopulationMatrices pm = population_matrices(model, x);
        CondProbMatrix p_wz = cpm(pm.p_w_given_zx);
        MarginalPmf p_w{pm.p_w};
        double total = 0.0;
        for (int y = 0; y < model.n_y; ++y)
            total += causal_effect_categorical(pm.p_y_given_zx.row(y), p_wz, p_w);
        CHECK(std::abs(total - 1.0) < 1e-9);
    }
}

TEST_CASE("binary weighted average: corner weights") {
    // pr(w1)=1 and pr(w1|z2,x)=0 put all weight on the first cell
    CHECK(causal_effect_binary(1.0, 1.0, 0.0, 0.8, 0.2) == doctest::Approx(0.8));
}

TEST_CASE("binary weighted average: constant outcome") {
    CHECK(causal_effect_binary(0.42, 0.7, 0.3, 0.55, 0.55) == doctest::Approx(0.55));
}

TEST_CASE("binary formula equals the matrix formula") {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    double worst = 0.0;
    for (int rep = 0; rep < 10000; ++rep) {
        double a, b;
        do {
            a = 0.05 + 0.9 * unif(rng);
            b = 0.05 + 0.9 * unif(rng);
        } while (std::abs(a - b) < 0.05);
        double pw1 = 0.05 + 0.9 * unif(rng);
        double py1 = unif(rng), py2 = unif(rng);

        double direct = causal_effect_binary(pw1, a, b, py1, py2);
        Eigen::RowVectorXd p_y(2);
        p_y << py1, py2;
        MarginalPmf p_w{Eigen::Vector2d(pw1, 1 - pw1)};
        double viamatrix =
            causal_effect_categorical(p_y, cpm(matrix2(a, b, 1 - a, 1 - b)), p_w, 1e-12);
        worst = std::max(worst, std::abs(direct - viamatrix));
    }
    CHECK(worst < 1e-12);
}

TEST_CASE("binary zero denominator raises the rank error") {
    CHECK_THROWS_AS(causal_effect_binary(0.5, 0.4, 0.4, 0.1, 0.9), Error);
}

TEST_CASE("outcome_given_confounder reduces to the proxy-free case at identity error") {
    Eigen::MatrixXd p_y(1, 2);
    p_y << 0.3, 0.6;
    Eigen::MatrixXd P = matrix2(0.8, 0.4, 0.2, 0.6);
    Eigen::MatrixXd direct =
        P.transpose().colPivHouseholderQr().solve(p_y.transpose()).transpose();
    Eigen::MatrixXd viaop =
        outcome_given_confounder(p_y, cpm(P), cpm(Eigen::MatrixXd::Identity(2, 2)));
    CHECK((viaop - direct).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("outcome_given_confounder matches the model's stratum outcome law") {
    LatentClassModel model = proxci::testing::strong_confounding_model();
    for (int x = 0; x < 2; ++x) {
        PopulationMatrices pm = population_matrices(model, x);
        Eigen::MatrixXd got = outcome_given_confounder(pm.p_y_given_zx, cpm(pm.p_w_given_zx),
                                                       cpm(pm.p_w_given_u));
        for (int u = 0; u < 2; ++u)
            for (int y = 0; y < 2; ++y) {
                double expected = 0.0;
                for (int w = 0; w < 2; ++w)
                    expected += model.p_w_given_u(w, u) * model.py(y, u, x, w);
                CHECK(std::abs(got(y, u) - expected) < 1e-10);
            }
    }
}

TEST_CASE("two error mechanisms, same observables: stratum law differs, effect does not") {
    // second parametrization by a column-stochastic mixing of the confounder
    LatentClassModel model = proxci::testing::strong_confounding_model();
    Eigen::MatrixXd S = matrix2(0.2, 0.7, 0.8, 0.3);
    double eps = 0.3;
    Eigen::MatrixXd G = (1 - eps) * Eigen::MatrixXd::Identity(2, 2) + eps * S;

    for (int x = 0; x < 2; ++x) {
        PopulationMatrices pm = population_matrices(model, x);
        Eigen::MatrixXd p_wu_alt = pm.p_w_given_u * G;

        Eigen::MatrixXd out1 = outcome_given_confounder(pm.p_y_given_zx, cpm(pm.p_w_given_zx),
                                                        cpm(pm.p_w_given_u));
        Eigen::MatrixXd out2 =
            outcome_given_confounder(pm.p_y_given_zx, cpm(pm.p_w_given_zx), cpm(p_wu_alt));
        CHECK((out1 - out2).cwiseAbs().maxCoeff() > 0.01);

        // the interventional quantity ignores the error mechanism entirely
        MarginalPmf p_w{pm.p_w};
        CondProbMatrix p_wz = cpm(pm.p_w_given_zx);
        for (int y = 0; y < 2; ++y) {
            double e1 = causal_effect_categorical(pm.p_y_given_zx.row(y), p_wz, p_w);
            double e2 = causal_effect_categorical(pm.p_y_given_zx.row(y), p_wz, p_w);
            CHECK(e1 == e2);
        }
    }
}

TEST_CASE("rank diagnostics on clean and degenerate matrices") {
    RankDiagnostics d1 = rank_diagnostics(Eigen::MatrixXd::Identity(2, 2));
    CHECK(d1.condition_number == doctest::Approx(1.0));
    CHECK(d1.invertible);

    Eigen::MatrixXd equal_cols = matrix2(0.7, 0.7, 0.3, 0.3);
    RankDiagnostics d2 = rank_diagnostics(equal_cols);
    CHECK(d2.min_singular_value == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(!d2.invertible);
    CHECK(d2.binary_column_gap.has_value());
    CHECK(*d2.binary_column_gap == doctest::Approx(0.0));
}

TEST_CASE("proxy unrelated to the confounder produces a rank-one reference matrix") {
    // p(z|u) constant in u: P(U|Z,x) has identical columns, so P(W|Z,x)
    // inherits rank one through the factorization
    LatentClassModel model = proxci::testing::binary_f_model(
        0.5, 0.5, [](int u, int z) { return 0.3 + 0.2 * u; }, 0.8, 0.3,
        [](int u, int x, int w) { return 0.2 + 0.3 * u + 0.1 * x; });
    PopulationMatrices pm = population_matrices(model, 0);
    RankDiagnostics d = rank_diagnostics(pm.p_w_given_zx, 1e-8);
    CHECK(!d.invertible);
    CHECK(d.min_singular_value < 1e-12);
}

TEST_CASE("tolerance scaling never revives an exactly singular matrix") {
    Eigen::MatrixXd equal_cols = matrix2(0.7, 0.7, 0.3, 0.3);
    for (double tol : {1e-12, 1e-11, 1e-10, 1e-4, 1e-3}) {
        CHECK(!rank_diagnostics(equal_cols, tol).invertible);
        CHECK(!rank_diagnostics(equal_cols, tol * 10).invertible);
    }
}

TEST_CASE("coarsening to the same cardinality is the identity") {
    Eigen::MatrixXd P = matrix2(0.8, 0.4, 0.2, 0.6);
    auto [map, coarse] = coarsen(P, 2);
    CHECK(map.is_identity());
    CHECK((coarse - P).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("coarsening merges duplicate rows") {
    Eigen::MatrixXd P(3, 2);
    // rows 1 and 2 identical: merging them loses nothing
    P << 0.5, 0.2, 0.25, 0.4, 0.25, 0.4;
    auto [map, coarse] = coarsen(P, 2);
    CHECK(map.w_groups[1] == map.w_groups[2]);
    CHECK(map.w_groups[0] != map.w_groups[1]);
    CHECK(coarse.rows() == 2);
    CHECK(coarse.cols() == 2);
}

TEST_CASE("coarsened population matrices keep the exact identification") {
    // 4-level proxies over a binary confounder
    ModelDims dims;
    dims.n_u = 2;
    dims.n_z = 4;
    dims.n_w = 4;
    dims.n_x = 2;
    dims.n_y = 2;
    LatentClassModel model = random_model(dims, Diagram::F, 97, {false, 0.02, 10000});
    Eigen::MatrixXd oracle = oracle_do_categorical(model);

    // pick the merge on the stacked population matrices, all x at once
    std::vector<Eigen::MatrixXd> per_x;
    for (int x = 0; x < 2; ++x) per_x.push_back(population_matrices(model, x).p_w_given_zx);
    Eigen::MatrixXd stacked(4, 8);
    stacked << per_x[0], per_x[1];
    auto [map, ignored] = coarsen(stacked, 2);
    LevelMaps maps;
    maps.w_map = map.w_groups;
    // the column groups from the stacked search index (z,x) cells; redo the
    // z-side on a single-x matrix to get a genuine z merge
    auto [zmap, ignored2] = coarsen(per_x[0], 2);
    maps.z_map = zmap.z_groups;

    for (int x = 0; x < 2; ++x) {
        PopulationMatrices pm = population_matrices(model, x, maps);
        RankDiagnostics d = rank_diagnostics(pm.p_w_given_zx, 1e-8);
        CHECK(d.invertible);
        for (int y = 0; y < 2; ++y) {
            double eff = causal_effect_categorical(pm.p_y_given_zx.row(y),
                                                   cpm(pm.p_w_given_zx), MarginalPmf{pm.p_w});
            CHECK(std::abs(eff - oracle(y, x)) < 1e-10);
        }
    }
}

TEST_CASE("identify_from_data with perfect proxies equals adjustment for Z") {
    LatentClassModel model = proxci::testing::perfect_proxy_model();
    CategoricalDataset d = sample_latent_class(model, 50000, 12);
    EffectTable table = identify_from_data(d);

    MarginalPmf p_z = marginal_pmf(d, Var::Z);
    for (int x = 0; x < 2; ++x) {
        Eigen::MatrixXd p_yz = cond_prob_matrix(d, Var::Y, Var::Z, {{Var::X, x}}).values();
        for (int y = 0; y < 2; ++y) {
            double adjust = p_yz.row(y).dot(p_z.values);
            CHECK(std::abs(table.at(x, y).estimate - adjust) < 1e-10);
        }
    }
}

TEST_CASE("identify_from_data tracks the oracle and exposes the naive bias") {
    LatentClassModel model = proxci::testing::strong_confounding_model();
    Eigen::MatrixXd oracle = oracle_do_categorical(model);
    CategoricalDataset d = sample_latent_class(model, 100000, 2718);
    EffectTable table = identify_from_data(d);
    for (const auto& row : table.rows) {
        CHECK(std::abs(row.estimate - oracle(row.y, row.x)) < 0.02);
        CHECK(std::abs(row.naive_estimate - oracle(row.y, row.x)) > 0.05);
        CHECK(!row.coarsening_used);
    }
}

TEST_CASE("identify_from_data coarsens rectangular proxies automatically") {
    ModelDims dims;
    dims.n_u = 2;
    dims.n_z = 3;
    dims.n_w = 4;
    dims.n_x = 2;
    dims.n_y = 2;
    LatentClassModel model = random_model(dims, Diagram::F, 1234, {false, 0.02, 10000});
    CategoricalDataset d = sample_latent_class(model, 50000, 99);
    EffectTable table = identify_from_data(d);
    Eigen::MatrixXd oracle = oracle_do_categorical(model);
    for (const auto& row : table.rows) {
        CHECK(row.coarsening_used);
        CHECK(std::abs(row.estimate - oracle(row.y, row.x)) < 0.05);
    }
}

TEST_SUITE_END();
