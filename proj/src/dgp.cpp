#include "proxci/dgp.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

#include "proxci/ident_cat.hpp"
#include "proxci/rng.hpp"

namespace proxci {

void LatentClassModel::allocate() {
    pi_u = Eigen::VectorXd::Zero(n_u);
    p_z_given_u = Eigen::MatrixXd::Zero(n_z, n_u);
    p_w_given_u = Eigen::MatrixXd::Zero(n_w, n_u);
    p_x_given_uz.assign(static_cast<std::size_t>(n_x) * n_u * n_z, 0.0);
    p_y_given_uxw.assign(static_cast<std::size_t>(n_y) * n_u * n_x * n_w, 0.0);
}

namespace {

void check_stochastic(double sum, double tol, const std::string& what) {
    if (std::abs(sum - 1.0) > tol)
        throw Error(ErrorKind::Constraint, what + " sums to " + std::to_string(sum));
}

// which optional edges a diagram carries
struct EdgeSet {
    bool z_to_x;  // treatment may depend on the Z proxy
    bool w_to_y;  // outcome may depend on the W proxy
};

EdgeSet edges_of(Diagram d) {
    switch (d) {
        case Diagram::A: return {false, false};
        case Diagram::B: return {true, false};
        case Diagram::C: return {false, true};
        case Diagram::D: return {false, false};
        case Diagram::E: return {true, false};
        case Diagram::F: return {true, true};
    }
    return {true, true};
}

} // namespace

void LatentClassModel::validate(double tol) const {
    if (n_u < 1 || n_z < 1 || n_x < 1 || n_w < 1 || n_y < 1)
        throw Error(ErrorKind::Constraint, "model cardinalities must be >= 1");
    if (pi_u.size() != n_u || p_z_given_u.rows() != n_z || p_z_given_u.cols() != n_u ||
        p_w_given_u.rows() != n_w || p_w_given_u.cols() != n_u ||
        static_cast<int>(p_x_given_uz.size()) != n_x * n_u * n_z ||
        static_cast<int>(p_y_given_uxw.size()) != n_y * n_u * n_x * n_w)
        throw Error(ErrorKind::Constraint, "model table dimensions are inconsistent");

    auto nonneg = [](double v) { return v >= 0.0 && v <= 1.0 + 1e-12; };
    check_stochastic(pi_u.sum(), tol, "pi(u)");
    for (int u = 0; u < n_u; ++u) {
        if (!nonneg(pi_u(u))) throw Error(ErrorKind::Constraint, "pi(u) entry out of [0,1]");
        check_stochastic(p_z_given_u.col(u).sum(), tol, "p(z|u)");
        check_stochastic(p_w_given_u.col(u).sum(), tol, "p(w|u)");
        for (int z = 0; z < n_z; ++z) {
            double s = 0.0;
            for (int x = 0; x < n_x; ++x) s += px(x, u, z);
            check_stochastic(s, tol, "p(x|u,z)");
        }
        for (int x = 0; x < n_x; ++x)
            for (int w = 0; w < n_w; ++w) {
                double s = 0.0;
                for (int y = 0; y < n_y; ++y) s += py(y, u, x, w);
                check_stochastic(s, tol, "p(y|u,x,w)");
            }
    }

    EdgeSet e = edges_of(diagram);
    if (!e.z_to_x)
        for (int x = 0; x < n_x; ++x)
            for (int u = 0; u < n_u; ++u)
                for (int z = 1; z < n_z; ++z)
                    if (std::abs(px(x, u, z) - px(x, u, 0)) > tol)
                        throw Error(ErrorKind::Constraint,
                                    "diagram forbids a Z->X edge but p(x|u,z) varies with z");
    if (!e.w_to_y)
        for (int y = 0; y < n_y; ++y)
            for (int u = 0; u < n_u; ++u)
                for (int x = 0; x < n_x; ++x)
                    for (int w = 1; w < n_w; ++w)
                        if (std::abs(py(y, u, x, w) - py(y, u, x, 0)) > tol)
                            throw Error(ErrorKind::Constraint,
                                        "diagram forbids a W->Y edge but p(y|u,x,w) varies with w");
}

JointTable enumerate_joint(const LatentClassModel& model) {
    model.validate();
    JointTable t{model.n_u, model.n_z, model.n_x, model.n_w, model.n_y, {}};
    t.p.assign(static_cast<std::size_t>(model.n_u) * model.n_z * model.n_x * model.n_w * model.n_y,
               0.0);
    for (int u = 0; u < model.n_u; ++u)
        for (int z = 0; z < model.n_z; ++z)
            for (int x = 0; x < model.n_x; ++x)
                for (int w = 0; w < model.n_w; ++w)
                    for (int y = 0; y < model.n_y; ++y)
                        t.at(u, z, x, w, y) = model.pi_u(u) * model.p_z_given_u(z, u) *
                                              model.px(x, u, z) * model.p_w_given_u(w, u) *
                                              model.py(y, u, x, w);
    return t;
}

CategoricalDataset sample_latent_class(const LatentClassModel& model, int n, std::uint64_t seed) {
    model.validate();
    if (n < 1) throw Error(ErrorKind::Config, "sample size must be >= 1");
    Rng rng(seed);
    CategoricalDataset d;
    d.card_x = model.n_x;
    d.card_z = model.n_z;
    d.card_w = model.n_w;
    d.card_y = model.n_y;
    d.card_u = model.n_u;
    d.x.resize(n);
    d.z.resize(n);
    d.w.resize(n);
    d.y.resize(n);
    d.u.emplace(n);

    std::vector<double> buf(std::max({model.n_x, model.n_y}));
    for (int r = 0; r < n; ++r) {
        int u = sample_pmf(model.pi_u, rng);
        int z = sample_pmf(model.p_z_given_u.col(u), rng);
        buf.resize(model.n_x);
        for (int x = 0; x < model.n_x; ++x) buf[x] = model.px(x, u, z);
        int x = sample_pmf(buf, rng);
        int w = sample_pmf(model.p_w_given_u.col(u), rng);
        buf.resize(model.n_y);
        for (int y = 0; y < model.n_y; ++y) buf[y] = model.py(y, u, x, w);
        int y = sample_pmf(buf, rng);
        d.x[r] = x;
        d.z[r] = z;
        d.w[r] = w;
        d.y[r] = y;
        (*d.u)[r] = u;
    }
    return d;
}

Eigen::MatrixXd oracle_do_categorical(const LatentClassModel& model) {
    model.validate();
    Eigen::MatrixXd table = Eigen::MatrixXd::Zero(model.n_y, model.n_x);
    for (int x = 0; x < model.n_x; ++x)
        for (int y = 0; y < model.n_y; ++y) {
            double acc = 0.0;
            for (int u = 0; u < model.n_u; ++u) {
                double inner = 0.0;
                for (int w = 0; w < model.n_w; ++w)
                    inner += model.p_w_given_u(w, u) * model.py(y, u, x, w);
                acc += model.pi_u(u) * inner;
            }
            table(y, x) = acc;
        }
    return table;
}

namespace {

std::vector<int> effective_map(const std::vector<int>& map, int card) {
    if (map.empty()) {
        std::vector<int> id(card);
        for (int i = 0; i < card; ++i) id[i] = i;
        return id;
    }
    if (static_cast<int>(map.size()) != card)
        throw Error(ErrorKind::Dimension, "level map length does not match cardinality");
    return map;
}

} // namespace

PopulationMatrices population_matrices(const LatentClassModel& model, int x,
                                       const LevelMaps& maps) {
    if (x < 0 || x >= model.n_x) throw Error(ErrorKind::Config, "x level out of range");
    JointTable t = enumerate_joint(model);
    std::vector<int> wmap = effective_map(maps.w_map, model.n_w);
    std::vector<int> zmap = effective_map(maps.z_map, model.n_z);
    const int nw = *std::max_element(wmap.begin(), wmap.end()) + 1;
    const int nz = *std::max_element(zmap.begin(), zmap.end()) + 1;

    // aggregated slices at the fixed x
    Eigen::MatrixXd p_zw = Eigen::MatrixXd::Zero(nz, nw);        // p(z', x, w')
    Eigen::MatrixXd p_zy = Eigen::MatrixXd::Zero(nz, model.n_y); // p(z', x, y)
    Eigen::MatrixXd p_zu = Eigen::MatrixXd::Zero(nz, model.n_u); // p(z', x, u)
    Eigen::VectorXd p_wm = Eigen::VectorXd::Zero(nw);            // p(w')
    Eigen::MatrixXd p_wu = Eigen::MatrixXd::Zero(nw, model.n_u); // p(w', u)
    Eigen::VectorXd p_um = Eigen::VectorXd::Zero(model.n_u);

    for (int u = 0; u < model.n_u; ++u)
        for (int z = 0; z < model.n_z; ++z)
            for (int xx = 0; xx < model.n_x; ++xx)
                for (int w = 0; w < model.n_w; ++w)
                    for (int y = 0; y < model.n_y; ++y) {
                        double p = t.at(u, z, xx, w, y);
                        p_wm(wmap[w]) += p;
                        p_wu(wmap[w], u) += p;
                        p_um(u) += p;
                        if (xx != x) continue;
                        p_zw(zmap[z], wmap[w]) += p;
                        p_zy(zmap[z], y) += p;
                        p_zu(zmap[z], u) += p;
                    }

    PopulationMatrices out;
    out.p_w = p_wm;
    out.p_w_given_u = p_wu * p_um.cwiseInverse().asDiagonal();
    out.p_y_given_zx.resize(model.n_y, nz);
    out.p_w_given_zx.resize(nw, nz);
    out.p_u_given_zx.resize(model.n_u, nz);
    for (int z = 0; z < nz; ++z) {
        double pz = p_zw.row(z).sum();
        if (pz <= 0.0)
            throw Error(ErrorKind::Support, "population cell (z=" + std::to_string(z) +
                                                ", x=" + std::to_string(x) +
                                                ") has zero probability");
        out.p_w_given_zx.col(z) = p_zw.row(z).transpose() / pz;
        out.p_y_given_zx.col(z) = p_zy.row(z).transpose() / pz;
        out.p_u_given_zx.col(z) = p_zu.row(z).transpose() / pz;
    }
    return out;
}

PopulationMoments population_moments(const LatentClassModel& model, int y_level,
                                     const LevelMaps& maps) {
    if (y_level < 0 || y_level >= model.n_y) throw Error(ErrorKind::Config, "y level out of range");
    PopulationMoments out;
    std::vector<int> wmap = effective_map(maps.w_map, model.n_w);
    const int nw = *std::max_element(wmap.begin(), wmap.end()) + 1;
    std::vector<int> zmap = effective_map(maps.z_map, model.n_z);
    const int nz = *std::max_element(zmap.begin(), zmap.end()) + 1;
    out.q.resize(nz * model.n_x);
    out.Q.resize(nw, nz * model.n_x);
    for (int x = 0; x < model.n_x; ++x) {
        PopulationMatrices pm = population_matrices(model, x, maps);
        for (int z = 0; z < nz; ++z) {
            int c = cell_index(z, x, nz);
            out.q(c) = pm.p_y_given_zx(y_level, z);
            out.Q.col(c) = pm.p_w_given_zx.col(z);
        }
    }
    return out;
}

void LinearGaussianSem::validate() const {
    if (!(tau_sq > 0.0 && var_z > 0.0 && var_x > 0.0 && var_w > 0.0 && var_y > 0.0))
        throw Error(ErrorKind::Constraint, "all SEM variances must be positive");
    if (a1 == 0.0 || c1 == 0.0)
        throw Error(ErrorKind::Constraint,
                    "proxy relevance needs a1 != 0 and c1 != 0 (both proxies must load on U)");
}

NumericDataset sample_gaussian_sem(const LinearGaussianSem& sem, int n, std::uint64_t seed) {
    sem.validate();
    if (n < 1) throw Error(ErrorKind::Config, "sample size must be >= 1");
    Rng rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    NumericDataset d;
    d.x.resize(n);
    d.z.resize(n);
    d.w.resize(n);
    d.y.resize(n);
    d.u.emplace(n);
    for (int r = 0; r < n; ++r) {
        double u = sem.mu_u + std::sqrt(sem.tau_sq) * gauss(rng);
        double z = sem.a0 + sem.a1 * u + std::sqrt(sem.var_z) * gauss(rng);
        double x = sem.b0 + sem.b1 * u + sem.b2 * z + std::sqrt(sem.var_x) * gauss(rng);
        double w = sem.c0 + sem.c1 * u + std::sqrt(sem.var_w) * gauss(rng);
        double y = sem.d0 + sem.d1 * u + sem.d2 * x + sem.d3 * w + std::sqrt(sem.var_y) * gauss(rng);
        (*d.u)(r) = u;
        d.z(r) = z;
        d.x(r) = x;
        d.w(r) = w;
        d.y(r) = y;
    }
    return d;
}

// loadings of (U,Z,X,W,Y) on the independent sources (U, e_z, e_x, e_w, e_y)
namespace {

Eigen::MatrixXd sem_loadings(const LinearGaussianSem& s) {
    Eigen::MatrixXd L = Eigen::MatrixXd::Zero(5, 5);
    L(0, 0) = 1.0;
    L(1, 0) = s.a1;
    L(1, 1) = 1.0;
    L(2, 0) = s.b1 + s.b2 * s.a1;
    L(2, 1) = s.b2;
    L(2, 2) = 1.0;
    L(3, 0) = s.c1;
    L(3, 3) = 1.0;
    L.row(4) = s.d1 * L.row(0) + s.d2 * L.row(2) + s.d3 * L.row(3);
    L(4, 4) = 1.0;
    return L;
}

} // namespace

Eigen::VectorXd sem_mean(const LinearGaussianSem& s) {
    Eigen::VectorXd m(5);
    m(0) = s.mu_u;
    m(1) = s.a0 + s.a1 * m(0);
    m(2) = s.b0 + s.b1 * m(0) + s.b2 * m(1);
    m(3) = s.c0 + s.c1 * m(0);
    m(4) = s.d0 + s.d1 * m(0) + s.d2 * m(2) + s.d3 * m(3);
    return m;
}

Eigen::MatrixXd sem_covariance(const LinearGaussianSem& s) {
    Eigen::VectorXd src(5);
    src << s.tau_sq, s.var_z, s.var_x, s.var_w, s.var_y;
    Eigen::MatrixXd L = sem_loadings(s);
    return L * src.asDiagonal() * L.transpose();
}

GaussianDoLaw oracle_do_gaussian(const LinearGaussianSem& s) {
    s.validate();
    GaussianDoLaw law;
    law.gamma1 = s.d2; // E(y|u,x) = d0 + d1 u + d2 x + d3 (c0 + c1 u); x-slope d2
    law.gamma0 = s.d0 + s.d1 * s.mu_u + s.d3 * (s.c0 + s.c1 * s.mu_u);
    double g = s.d1 + s.d3 * s.c1;
    law.sigma_sq = g * g * s.tau_sq + s.d3 * s.d3 * s.var_w + s.var_y;
    return law;
}

ProxyRegressionFit population_fit(const LinearGaussianSem& sem) {
    sem.validate();
    Eigen::VectorXd mu = sem_mean(sem);
    Eigen::MatrixXd cov = sem_covariance(sem);
    // variable order (U, Z, X, W, Y)
    enum { U = 0, Z = 1, X = 2, W = 3, Y = 4 };
    Eigen::Matrix2d zx;
    zx << cov(Z, Z), cov(Z, X), cov(X, Z), cov(X, X);

    auto regress = [&](int target, double& b0, double& bz, double& bx, double& resid) {
        Eigen::Vector2d rhs(cov(Z, target), cov(X, target));
        Eigen::Vector2d beta = zx.ldlt().solve(rhs);
        bz = beta(0);
        bx = beta(1);
        b0 = mu(target) - bz * mu(Z) - bx * mu(X);
        resid = cov(target, target) - beta.dot(rhs);
    };

    ProxyRegressionFit fit;
    regress(Y, fit.alpha0, fit.alpha1, fit.alpha2, fit.sigma1_sq);
    regress(W, fit.beta0, fit.beta1, fit.beta2, fit.sigma2_sq);
    fit.n = 0; // population quantities carry no sampling error
    return fit;
}

namespace {

Eigen::VectorXd dirichlet_flat(int k, Rng& rng) {
    Eigen::VectorXd v(k);
    for (int i = 0; i < k; ++i) v(i) = -std::log(uniform01(rng));
    return v / v.sum();
}

double model_min_sv(const LatentClassModel& model) {
    double worst = std::numeric_limits<double>::infinity();
    if (model.n_w == model.n_z) {
        for (int x = 0; x < model.n_x; ++x) {
            PopulationMatrices pm = population_matrices(model, x);
            Eigen::JacobiSVD<Eigen::MatrixXd> svd(pm.p_w_given_zx);
            worst = std::min(worst, svd.singularValues().minCoeff());
        }
    } else {
        // rectangular case: the stacked matrix Q must keep full row rank
        PopulationMoments pm = population_moments(model, 0);
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(pm.Q);
        worst = svd.singularValues().minCoeff();
    }
    return worst;
}

} // namespace

LatentClassModel random_model(const ModelDims& dims, Diagram diagram, std::uint64_t seed,
                              const ModelConstraints& constraints) {
    Rng rng(seed);
    EdgeSet e = edges_of(diagram);
    for (int attempt = 0; attempt < constraints.max_draws; ++attempt) {
        LatentClassModel m;
        m.diagram = diagram;
        m.n_u = dims.n_u;
        m.n_z = dims.n_z;
        m.n_x = dims.n_x;
        m.n_w = dims.n_w;
        m.n_y = dims.n_y;
        m.allocate();
        m.pi_u = dirichlet_flat(m.n_u, rng);
        for (int u = 0; u < m.n_u; ++u) {
            m.p_z_given_u.col(u) = dirichlet_flat(m.n_z, rng);
            m.p_w_given_u.col(u) = dirichlet_flat(m.n_w, rng);
            for (int z = 0; z < m.n_z; ++z) {
                if (!e.z_to_x && z > 0) {
                    for (int x = 0; x < m.n_x; ++x) m.px(x, u, z) = m.px(x, u, 0);
                } else {
                    Eigen::VectorXd col = dirichlet_flat(m.n_x, rng);
                    for (int x = 0; x < m.n_x; ++x) m.px(x, u, z) = col(x);
                }
            }
            for (int x = 0; x < m.n_x; ++x)
                for (int w = 0; w < m.n_w; ++w) {
                    bool copy_x = constraints.h0 && x > 0;
                    bool copy_w = !e.w_to_y && w > 0;
                    if (copy_x || copy_w) {
                        int sx = copy_x ? 0 : x;
                        int sw = copy_w ? 0 : w;
                        for (int y = 0; y < m.n_y; ++y) m.py(y, u, x, w) = m.py(y, u, sx, sw);
                    } else {
                        Eigen::VectorXd col = dirichlet_flat(m.n_y, rng);
                        for (int y = 0; y < m.n_y; ++y) m.py(y, u, x, w) = col(y);
                    }
                }
        }
        if (model_min_sv(m) >= constraints.min_sv) return m;
    }
    throw Error(ErrorKind::Constraint,
                "rejection budget exhausted: no random model met min singular value " +
                    std::to_string(constraints.min_sv) + " within " +
                    std::to_string(constraints.max_draws) + " draws");
}

void StudyConfig::validate() const {
    model.validate();
    if (replicates < 1) throw Error(ErrorKind::Config, "replicates must be >= 1");
    if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorKind::Config, "alpha must be in (0,1)");
    if (n < 1) throw Error(ErrorKind::Config, "sample size must be >= 1");
    if (run_null_test && (test_y_level < 0 || test_y_level >= model.n_y))
        throw Error(ErrorKind::Config, "test y level out of range");
}

namespace {

struct ReplicateOutcome {
    bool failed = false;
    bool has_estimates = false;
    Eigen::MatrixXd estimate;  // (y, x)
    Eigen::MatrixXd naive;     // (y, x)
    bool has_test = false;
    double T = 0.0;
    double p_value = 1.0;
};

ReplicateOutcome run_replicate(const StudyConfig& cfg, std::uint64_t seed) {
    ReplicateOutcome out;
    try {
        CategoricalDataset data = sample_latent_class(cfg.model, cfg.n, seed);
        if (cfg.run_identify) {
            IdentifyConfig icfg;
            icfg.coarsen_k = cfg.coarsen_w_to;
            EffectTable table = identify_from_data(data, icfg);
            out.estimate.resize(cfg.model.n_y, cfg.model.n_x);
            out.naive.resize(cfg.model.n_y, cfg.model.n_x);
            for (const auto& row : table.rows) {
                out.estimate(row.y, row.x) = row.estimate;
                out.naive(row.y, row.x) = row.naive_estimate;
            }
            out.has_estimates = true;
        }
        if (cfg.run_null_test) {
            NullTestConfig tcfg;
            tcfg.cov = cfg.cov;
            tcfg.bootstrap_resamples = cfg.bootstrap_resamples;
            tcfg.bootstrap_seed = splitmix64(seed);
            tcfg.coarsen_w_to = cfg.coarsen_w_to;
            NullTestResult r = null_test(data, cfg.test_y_level, tcfg);
            out.T = r.T;
            out.p_value = r.p_value;
            out.has_test = true;
        }
    } catch (const Error&) {
        out.failed = true;
    }
    return out;
}

} // namespace

StudyReport run_study(const StudyConfig& config, int jobs) {
    config.validate();
    if (jobs < 1) jobs = 1;

    std::vector<ReplicateOutcome> outcomes(config.replicates);
    std::atomic<int> next{0};
    auto worker = [&]() {
        for (;;) {
            int idx = next.fetch_add(1);
            if (idx >= config.replicates) return;
            outcomes[idx] = run_replicate(config, replicate_seed(config.seed, idx));
        }
    };
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    StudyReport report;
    report.replicates_run = config.replicates;
    Eigen::MatrixXd oracle = oracle_do_categorical(config.model);

    Eigen::MatrixXd sum_bias = Eigen::MatrixXd::Zero(config.model.n_y, config.model.n_x);
    Eigen::MatrixXd sum_sq = sum_bias, sum_abs = sum_bias, naive_bias = sum_bias,
                    naive_sq = sum_bias;
    int est_count = 0, test_count = 0, rejections = 0;
    for (const auto& o : outcomes) {
        if (o.failed) {
            ++report.estimation_failures;
            continue;
        }
        if (o.has_estimates) {
            Eigen::MatrixXd diff = o.estimate - oracle;
            sum_bias += diff;
            sum_sq += diff.cwiseAbs2();
            sum_abs += diff.cwiseAbs();
            Eigen::MatrixXd nd = o.naive - oracle;
            naive_bias += nd;
            naive_sq += nd.cwiseAbs2();
            ++est_count;
        }
        if (o.has_test) {
            ++test_count;
            if (o.p_value < config.alpha) ++rejections;
            if (config.keep_statistics) report.t_statistics.push_back(o.T);
        }
    }
    report.failure_rate = static_cast<double>(report.estimation_failures) / config.replicates;
    if (test_count > 0) {
        report.rejection_rate = static_cast<double>(rejections) / test_count;
        report.rejection_mc_se =
            std::sqrt(report.rejection_rate * (1.0 - report.rejection_rate) / test_count);
    }
    if (est_count > 0) {
        for (int x = 0; x < config.model.n_x; ++x)
            for (int y = 0; y < config.model.n_y; ++y) {
                StudyCellSummary c;
                c.x = x;
                c.y = y;
                c.oracle = oracle(y, x);
                c.mean_bias = sum_bias(y, x) / est_count;
                c.rmse = std::sqrt(sum_sq(y, x) / est_count);
                c.mean_abs_error = sum_abs(y, x) / est_count;
                c.naive_mean_bias = naive_bias(y, x) / est_count;
                c.naive_rmse = std::sqrt(naive_sq(y, x) / est_count);
                report.cells.push_back(c);
            }
    }
    return report;
}

} // namespace proxci
