#include <doctest.h>

#include <cmath>

#include "proxci/dgp.hpp"
#include "proxci/rng.hpp"
#include "proxci/tabular.hpp"
#include "support.hpp"

using namespace proxci;
using proxci::testing::TempFile;

TEST_SUITE_BEGIN("tabular");

TEST_CASE("load_csv parses a small binary file") {
    TempFile f("x,z,w,y\n0,0,0,0\n0,1,0,1\n1,0,1,0\n1,1,1,1\n0,0,1,1\n1,1,0,0\n0,1,1,1\n1,0,0,0\n");
    CategoricalDataset d = load_csv(f.path());
    CHECK(d.n() == 8);
    CHECK(d.card_x == 2);
    CHECK(d.card_z == 2);
    CHECK(d.card_w == 2);
    CHECK(d.card_y == 2);
    CHECK(!d.u.has_value());
}

TEST_CASE("load_csv maps labels densely and keeps the dictionary") {
    TempFile f("x,z,w,y\n0,low,0,0\n1,high,1,1\n0,low,1,0\n1,high,0,1\n");
    CategoricalDataset d = load_csv(f.path());
    CHECK(d.card_z == 2);
    REQUIRE(d.labels.count("z") == 1);
    // lexicographic: "high" < "low"
    CHECK(d.labels.at("z")[0] == "high");
    CHECK(d.labels.at("z")[1] == "low");
    CHECK(d.z[0] == 1); // "low"
    CHECK(d.z[1] == 0); // "high"
}

TEST_CASE("load_csv orders integer labels numerically") {
    TempFile f("x,z,w,y\n0,2,0,0\n1,10,1,1\n0,2,1,0\n1,10,0,1\n");
    CategoricalDataset d = load_csv(f.path());
    CHECK(d.labels.at("z")[0] == "2");
    CHECK(d.labels.at("z")[1] == "10");
}

TEST_CASE("load_csv rejects a constant analysis column") {
    TempFile f("x,z,w,y\n0,0,1,0\n1,1,1,1\n0,1,1,0\n");
    CHECK_THROWS_WITH_AS(load_csv(f.path()), doctest::Contains("W"), Error);
}

TEST_CASE("load_csv reports a missing declared column") {
    TempFile f("x,z,y\n0,0,0\n1,1,1\n");
    try {
        load_csv(f.path());
        FAIL("expected a schema error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Schema);
    }
}

TEST_CASE("load_csv rejects rows with missing values") {
    TempFile f("x,z,w,y\n0,0,0,0\n1,,1,1\n");
    try {
        load_csv(f.path());
        FAIL("expected an ingestion error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Ingestion);
    }
}

TEST_CASE("load_csv synthesizes constant columns for unmapped proxies") {
    TempFile f("treat,outcome,p\n0,0,0\n1,1,1\n0,1,0\n1,0,1\n");
    CsvSchema schema;
    schema.x = "treat";
    schema.y = "outcome";
    schema.w = "p";
    schema.z.clear();
    schema.u.clear();
    CategoricalDataset d = load_csv(f.path(), schema);
    CHECK(d.card_z == 1);
    CHECK(d.card_w == 2);
}

TEST_CASE("cond_prob_matrix is the identity for a deterministic copy") {
    CategoricalDataset d;
    d.card_x = 2;
    d.card_z = 2;
    d.card_w = 2;
    d.card_y = 2;
    for (int r = 0; r < 16; ++r) {
        d.x.push_back(r % 2);
        d.z.push_back((r / 2) % 2);
        d.w.push_back((r / 2) % 2); // w == z
        d.y.push_back(r % 2);
    }
    CondProbMatrix m = cond_prob_matrix(d, Var::W, Var::Z, {{Var::X, 0}});
    CHECK(m.values()(0, 0) == 1.0);
    CHECK(m.values()(1, 1) == 1.0);
    CHECK(m.values()(0, 1) == 0.0);
}

TEST_CASE("cond_prob_matrix counts cells") {
    CategoricalDataset d;
    d.card_x = 1;
    d.card_z = 2;
    d.card_w = 2;
    d.card_y = 1;
    d.x = {0, 0, 0, 0};
    d.z = {0, 0, 1, 1};
    d.w = {0, 1, 1, 1};
    d.y = {0, 0, 0, 0};
    CondProbMatrix m = cond_prob_matrix(d, Var::W, Var::Z);
    CHECK(m.values()(0, 0) == doctest::Approx(0.5));
    CHECK(m.values()(1, 0) == doctest::Approx(0.5));
    CHECK(m.values()(0, 1) == doctest::Approx(0.0));
    CHECK(m.values()(1, 1) == doctest::Approx(1.0));
}

TEST_CASE("cond_prob_matrix reports the empty conditioning cell") {
    CategoricalDataset d;
    d.card_x = 2;
    d.card_z = 2;
    d.card_w = 2;
    d.card_y = 2;
    d.x = {0, 0, 0, 0};
    d.z = {0, 0, 1, 1};
    d.w = {0, 1, 0, 1};
    d.y = {0, 1, 0, 1};
    try {
        cond_prob_matrix(d, Var::W, Var::Z, {{Var::X, 1}});
        FAIL("expected a sparse-cell error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::SparseCell);
    }
}

TEST_CASE("empirical conditionals approach the population matrices") {
    LatentClassModel model = proxci::testing::h0_size_model();
    CategoricalDataset d = sample_latent_class(model, 100000, 41);
    for (int x = 0; x < 2; ++x) {
        PopulationMatrices pm = population_matrices(model, x);
        Eigen::MatrixXd est = cond_prob_matrix(d, Var::W, Var::Z, {{Var::X, x}}).values();
        CHECK((est - pm.p_w_given_zx).cwiseAbs().maxCoeff() < 0.02);
    }
}

TEST_CASE("marginal_pmf counts frequencies") {
    CategoricalDataset d;
    d.card_x = 1;
    d.card_z = 1;
    d.card_w = 2;
    d.card_y = 1;
    for (int r = 0; r < 10; ++r) {
        d.x.push_back(0);
        d.z.push_back(0);
        d.w.push_back(r < 3 ? 0 : 1);
        d.y.push_back(0);
    }
    MarginalPmf p = marginal_pmf(d, Var::W);
    CHECK(p.values(0) == doctest::Approx(0.3));
    CHECK(p.values(1) == doctest::Approx(0.7));
}

TEST_CASE("empirical W marginal approaches the mixture over confounder levels") {
    LatentClassModel model = proxci::testing::strong_confounding_model();
    CategoricalDataset d = sample_latent_class(model, 100000, 42);
    Eigen::VectorXd expected = model.p_w_given_u * model.pi_u;
    MarginalPmf p = marginal_pmf(d, Var::W);
    CHECK((p.values - expected).cwiseAbs().maxCoeff() < 0.01);
}

TEST_CASE("plugin covariance entry is p(1-p) over the cell share") {
    // one (z,x) cell with share 0.25 and p(y|cell) = 0.5 -> entry 1.0
    CategoricalDataset d;
    d.card_x = 2;
    d.card_z = 2;
    d.card_w = 1;
    d.card_y = 2;
    for (int c = 0; c < 4; ++c)
        for (int r = 0; r < 4; ++r) {
            d.x.push_back(c / 2);
            d.z.push_back(c % 2);
            d.w.push_back(0);
            d.y.push_back(r % 2);
        }
    CovEstimate cov = plugin_covariance(d, 1);
    for (int c = 0; c < 4; ++c) CHECK(cov.values(c, c) == doctest::Approx(1.0));
    CHECK(!cov.floor_applied);
}

TEST_CASE("plugin covariance floors empty-probability cells") {
    CategoricalDataset d;
    d.card_x = 2;
    d.card_z = 2;
    d.card_w = 1;
    d.card_y = 2;
    for (int c = 0; c < 4; ++c)
        for (int r = 0; r < 4; ++r) {
            d.x.push_back(c / 2);
            d.z.push_back(c % 2);
            d.w.push_back(0);
            d.y.push_back(c == 0 ? 0 : r % 2); // cell 0 never sees y=1
        }
    CovEstimate cov = plugin_covariance(d, 1);
    CHECK(cov.floor_applied);
    CHECK(cov.values(0, 0) == doctest::Approx(1e-6));
}

TEST_CASE("plugin covariance matches the Monte Carlo variance of the stacked moments") {
    LatentClassModel model = proxci::testing::h0_size_model();
    const int reps = 2000, n = 5000;

    // population diagonal
    PopulationMoments pm = population_moments(model, 1);
    Eigen::VectorXd share(4);
    {
        JointTable t = enumerate_joint(model);
        share.setZero();
        for (int u = 0; u < 2; ++u)
            for (int z = 0; z < 2; ++z)
                for (int x = 0; x < 2; ++x)
                    for (int w = 0; w < 2; ++w)
                        for (int y = 0; y < 2; ++y)
                            share(cell_index(z, x, 2)) += t.at(u, z, x, w, y);
    }
    Eigen::VectorXd pop_diag =
        pm.q.array() * (1.0 - pm.q.array()) / share.array();

    Eigen::MatrixXd qs(reps, 4);
    for (int r = 0; r < reps; ++r) {
        CategoricalDataset d = sample_latent_class(model, n, replicate_seed(2025, r));
        StackedMoments m = build_stacked_moments(d, 1);
        qs.row(r) = m.q.transpose();
    }
    Eigen::RowVectorXd mean = qs.colwise().mean();
    for (int c = 0; c < 4; ++c) {
        double var = (qs.col(c).array() - mean(c)).square().sum() / (reps - 1);
        double mc = n * var;
        CHECK(std::abs(mc / pop_diag(c) - 1.0) < 0.10);
    }
}

TEST_CASE("bootstrap covariance is symmetric positive-definite") {
    LatentClassModel model = proxci::testing::h0_size_model();
    CategoricalDataset d = sample_latent_class(model, 2000, 7);
    CovEstimate cov = bootstrap_covariance(d, 1, 200, 99);
    CHECK((cov.values - cov.values.transpose()).cwiseAbs().maxCoeff() < 1e-10);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov.values);
    CHECK(es.eigenvalues().minCoeff() > 0.0);
    // same scale as the plug-in diagonal
    CovEstimate plug = plugin_covariance(d, 1);
    for (int c = 0; c < 4; ++c)
        CHECK(std::abs(cov.values(c, c) / plug.values(c, c) - 1.0) < 0.5);
}

TEST_CASE("column stochasticity holds for every stratum of sampled data") {
    LatentClassModel model = proxci::testing::strong_confounding_model();
    CategoricalDataset d = sample_latent_class(model, 5000, 11);
    for (int x = 0; x < 2; ++x) {
        for (Var target : {Var::W, Var::Y}) {
            Eigen::MatrixXd m = cond_prob_matrix(d, target, Var::Z, {{Var::X, x}}).values();
            for (int c = 0; c < m.cols(); ++c)
                CHECK(std::abs(m.col(c).sum() - 1.0) <= 1e-12);
        }
    }
}

TEST_CASE("estimation error is non-increasing in n on average") {
    LatentClassModel model = proxci::testing::h0_size_model();
    PopulationMatrices pm = population_matrices(model, 0);
    const int seeds = 20;
    double mean_err[3] = {0, 0, 0};
    const int sizes[3] = {1000, 10000, 100000};
    for (int s = 0; s < seeds; ++s) {
        for (int i = 0; i < 3; ++i) {
            CategoricalDataset d =
                sample_latent_class(model, sizes[i], replicate_seed(314159, s * 3 + i));
            Eigen::MatrixXd est = cond_prob_matrix(d, Var::W, Var::Z, {{Var::X, 0}}).values();
            mean_err[i] += (est - pm.p_w_given_zx).cwiseAbs().maxCoeff() / seeds;
        }
    }
    CHECK(mean_err[0] >= mean_err[1]);
    CHECK(mean_err[1] >= mean_err[2]);
}

TEST_CASE("estimators never read the hidden-truth column") {
    LatentClassModel model = proxci::testing::strong_confounding_model();
    CategoricalDataset with_u = sample_latent_class(model, 3000, 17);
    CategoricalDataset no_u = with_u.without_u();
    REQUIRE(with_u.u.has_value());
    REQUIRE(!no_u.u.has_value());

    Eigen::MatrixXd a = cond_prob_matrix(with_u, Var::W, Var::Z, {{Var::X, 1}}).values();
    Eigen::MatrixXd b = cond_prob_matrix(no_u, Var::W, Var::Z, {{Var::X, 1}}).values();
    CHECK((a.array() == b.array()).all()); // bit-for-bit

    CovEstimate ca = plugin_covariance(with_u, 1);
    CovEstimate cb = plugin_covariance(no_u, 1);
    CHECK((ca.values.array() == cb.values.array()).all());

    MarginalPmf pa = marginal_pmf(with_u, Var::W);
    MarginalPmf pb = marginal_pmf(no_u, Var::W);
    CHECK((pa.values.array() == pb.values.array()).all());
}

TEST_CASE("laplace smoothing fills sparse cells when asked") {
    CategoricalDataset d;
    d.card_x = 1;
    d.card_z = 2;
    d.card_w = 2;
    d.card_y = 1;
    d.x = {0, 0, 0};
    d.z = {0, 0, 1};
    d.w = {0, 1, 1};
    d.y = {0, 0, 0};
    Smoothing s{true, 0.5};
    CondProbMatrix m = cond_prob_matrix(d, Var::W, Var::Z, {}, s);
    CHECK(m.values()(0, 1) == doctest::Approx(0.25)); // (0+0.5)/(1+1)
    CHECK(m.values()(1, 1) == doctest::Approx(0.75));
}

TEST_CASE("mean-scale covariance rejects a constant outcome") {
    LatentClassModel model = proxci::testing::mean_scale_model();
    CategoricalDataset d = sample_latent_class(model, 500, 3);
    NumericOutcomeDataset num = proxci::testing::with_scores(d, {1.0, 1.0, 1.0});
    try {
        mean_scale_covariance(num);
        FAIL("expected a degenerate-variance error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::DegenerateVariable);
    }
}

TEST_CASE("numeric CSV loader reads doubles and optional u") {
    TempFile f("x,z,w,y,u\n0.5,1.25,-0.5,2.0,0.1\n1.5,0.25,0.5,1.0,0.2\n");
    NumericDataset d = load_numeric_csv(f.path());
    CHECK(d.n() == 2);
    CHECK(d.z(0) == doctest::Approx(1.25));
    REQUIRE(d.u.has_value());
    CHECK((*d.u)(1) == doctest::Approx(0.2));
}

TEST_SUITE_END();
