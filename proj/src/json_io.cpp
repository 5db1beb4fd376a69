#include "proxci/json_io.hpp"

#include <nlohmann/json.hpp>

namespace proxci {

using nlohmann::json;

namespace {

json vec_to_json(const Eigen::VectorXd& v) {
    json a = json::array();
    for (int i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

Eigen::VectorXd vec_from_json(const json& a) {
    Eigen::VectorXd v(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) v(static_cast<Eigen::Index>(i)) = a[i].get<double>();
    return v;
}

json mat_to_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (int r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(row);
    }
    return rows;
}

Eigen::MatrixXd mat_from_json(const json& a, const char* what) {
    if (!a.is_array() || a.empty())
        throw Error(ErrorKind::Schema, std::string("expected a matrix for ") + what);
    const std::size_t rows = a.size(), cols = a[0].size();
    Eigen::MatrixXd m(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
        if (a[r].size() != cols)
            throw Error(ErrorKind::Schema, std::string("ragged matrix for ") + what);
        for (std::size_t c = 0; c < cols; ++c)
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = a[r][c].get<double>();
    }
    return m;
}

template <typename T>
T require(const json& j, const char* key) {
    if (!j.contains(key))
        throw Error(ErrorKind::Schema, std::string("missing field '") + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw Error(ErrorKind::Schema, std::string("field '") + key + "' has the wrong type");
    }
}

} // namespace

json to_json(const LatentClassModel& m) {
    json j;
    j["type"] = "latent_class";
    j["diagram"] = to_string(m.diagram);
    j["cardinalities"] = {{"u", m.n_u}, {"z", m.n_z}, {"x", m.n_x}, {"w", m.n_w}, {"y", m.n_y}};
    j["pi_u"] = vec_to_json(m.pi_u);
    j["p_z_given_u"] = mat_to_json(m.p_z_given_u);
    j["p_w_given_u"] = mat_to_json(m.p_w_given_u);
    // p(x|u,z): one j.x-by-nz block per confounder level would be wasteful
    // here; store flat with the index layout spelled out
    j["p_x_given_uz"] = {{"layout", "[x][u][z]"}, {"values", m.p_x_given_uz}};
    j["p_y_given_uxw"] = {{"layout", "[y][u][x][w]"}, {"values", m.p_y_given_uxw}};
    return j;
}

LatentClassModel latent_class_from_json(const json& j) {
    LatentClassModel m;
    m.diagram = diagram_from_string(require<std::string>(j, "diagram"));
    const json& c = j.contains("cardinalities") ? j.at("cardinalities") : json();
    m.n_u = require<int>(c, "u");
    m.n_z = require<int>(c, "z");
    m.n_x = require<int>(c, "x");
    m.n_w = require<int>(c, "w");
    m.n_y = require<int>(c, "y");
    m.pi_u = vec_from_json(require<json>(j, "pi_u"));
    m.p_z_given_u = mat_from_json(require<json>(j, "p_z_given_u"), "p_z_given_u");
    m.p_w_given_u = mat_from_json(require<json>(j, "p_w_given_u"), "p_w_given_u");
    m.p_x_given_uz = require<std::vector<double>>(require<json>(j, "p_x_given_uz"), "values");
    m.p_y_given_uxw = require<std::vector<double>>(require<json>(j, "p_y_given_uxw"), "values");
    m.validate();
    return m;
}

json to_json(const LinearGaussianSem& s) {
    json j;
    j["type"] = "gaussian_sem";
    j["u"] = {{"mean", s.mu_u}, {"variance", s.tau_sq}};
    j["z"] = {{"intercept", s.a0}, {"u_coef", s.a1}, {"variance", s.var_z}};
    j["x"] = {{"intercept", s.b0}, {"u_coef", s.b1}, {"z_coef", s.b2}, {"variance", s.var_x}};
    j["w"] = {{"intercept", s.c0}, {"u_coef", s.c1}, {"variance", s.var_w}};
    j["y"] = {{"intercept", s.d0}, {"u_coef", s.d1}, {"x_coef", s.d2}, {"w_coef", s.d3},
              {"variance", s.var_y}};
    return j;
}

LinearGaussianSem sem_from_json(const json& j) {
    LinearGaussianSem s;
    const json& u = require<json>(j, "u");
    s.mu_u = require<double>(u, "mean");
    s.tau_sq = require<double>(u, "variance");
    const json& z = require<json>(j, "z");
    s.a0 = require<double>(z, "intercept");
    s.a1 = require<double>(z, "u_coef");
    s.var_z = require<double>(z, "variance");
    const json& x = require<json>(j, "x");
    s.b0 = require<double>(x, "intercept");
    s.b1 = require<double>(x, "u_coef");
    s.b2 = require<double>(x, "z_coef");
    s.var_x = require<double>(x, "variance");
    const json& w = require<json>(j, "w");
    s.c0 = require<double>(w, "intercept");
    s.c1 = require<double>(w, "u_coef");
    s.var_w = require<double>(w, "variance");
    const json& y = require<json>(j, "y");
    s.d0 = require<double>(y, "intercept");
    s.d1 = require<double>(y, "u_coef");
    s.d2 = require<double>(y, "x_coef");
    s.d3 = require<double>(y, "w_coef");
    s.var_y = require<double>(y, "variance");
    s.validate();
    return s;
}

json to_json(const StudyConfig& c) {
    json j;
    j["model"] = to_json(c.model);
    j["n"] = c.n;
    j["replicates"] = c.replicates;
    j["alpha"] = c.alpha;
    j["seed"] = c.seed;
    j["run_identify"] = c.run_identify;
    j["run_null_test"] = c.run_null_test;
    j["test_y_level"] = c.test_y_level;
    j["cov"] = c.cov == CovMethod::Plugin ? "plugin" : "bootstrap";
    j["bootstrap_resamples"] = c.bootstrap_resamples;
    if (c.coarsen_w_to) j["coarsen_w_to"] = *c.coarsen_w_to;
    j["keep_statistics"] = c.keep_statistics;
    return j;
}

StudyConfig study_config_from_json(const json& j) {
    StudyConfig c;
    c.model = latent_class_from_json(require<json>(j, "model"));
    c.n = require<int>(j, "n");
    c.replicates = require<int>(j, "replicates");
    if (j.contains("alpha")) c.alpha = j.at("alpha").get<double>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("run_identify")) c.run_identify = j.at("run_identify").get<bool>();
    if (j.contains("run_null_test")) c.run_null_test = j.at("run_null_test").get<bool>();
    if (j.contains("test_y_level")) c.test_y_level = j.at("test_y_level").get<int>();
    if (j.contains("cov")) {
        std::string m = j.at("cov").get<std::string>();
        if (m == "plugin") c.cov = CovMethod::Plugin;
        else if (m == "bootstrap") c.cov = CovMethod::Bootstrap;
        else throw Error(ErrorKind::Schema, "cov must be 'plugin' or 'bootstrap'");
    }
    if (j.contains("bootstrap_resamples"))
        c.bootstrap_resamples = j.at("bootstrap_resamples").get<int>();
    if (j.contains("coarsen_w_to")) c.coarsen_w_to = j.at("coarsen_w_to").get<int>();
    if (j.contains("keep_statistics")) c.keep_statistics = j.at("keep_statistics").get<bool>();
    c.validate();
    return c;
}

json to_json(const StudyReport& r) {
    json j;
    j["replicates_run"] = r.replicates_run;
    j["estimation_failures"] = r.estimation_failures;
    j["failure_rate"] = r.failure_rate;
    if (r.rejection_rate >= 0.0) {
        j["rejection_rate"] = r.rejection_rate;
        j["rejection_mc_se"] = r.rejection_mc_se;
    }
    json cells = json::array();
    for (const auto& c : r.cells) {
        cells.push_back({{"x", c.x},
                         {"y", c.y},
                         {"oracle", c.oracle},
                         {"mean_bias", c.mean_bias},
                         {"rmse", c.rmse},
                         {"mean_abs_error", c.mean_abs_error},
                         {"naive_mean_bias", c.naive_mean_bias},
                         {"naive_rmse", c.naive_rmse}});
    }
    j["cells"] = cells;
    if (!r.t_statistics.empty()) j["t_statistics"] = r.t_statistics;
    return j;
}

json to_json(const EffectTable& t) {
    json rows = json::array();
    for (const auto& r : t.rows) {
        rows.push_back({{"x", r.x},
                        {"y", r.y},
                        {"estimate", r.estimate},
                        {"estimate_raw", r.estimate_raw},
                        {"naive_estimate", r.naive_estimate},
                        {"condition_number", r.condition_number},
                        {"clipped", r.clipped},
                        {"coarsening_used", r.coarsening_used}});
    }
    json j;
    j["rows"] = rows;
    j["smoothed"] = t.smoothed;
    return j;
}

json to_json(const NullTestResult& r) {
    json j;
    j["level"] = r.level;
    j["T"] = r.T;
    j["dof"] = r.dof;
    j["p_value"] = r.p_value;
    j["scale"] = r.scale == TestScale::Probability ? "probability" : "mean";
    j["diagnostics"] = {{"min_singular_value_weighted", r.min_sv_weighted},
                        {"projector_error", r.projector_error},
                        {"covariance_floored", r.cov_floored}};
    j["xi"] = vec_to_json(r.xi);
    return j;
}

json to_json(const ProxyRegressionFit& f) {
    json j;
    j["n"] = f.n;
    j["outcome_on_z_x"] = {{"intercept", f.alpha0},
                           {"z_coef", f.alpha1},
                           {"x_coef", f.alpha2},
                           {"residual_variance", f.sigma1_sq},
                           {"se", {f.se_alpha0, f.se_alpha1, f.se_alpha2}}};
    j["proxy_on_z_x"] = {{"intercept", f.beta0},
                         {"z_coef", f.beta1},
                         {"x_coef", f.beta2},
                         {"residual_variance", f.sigma2_sq},
                         {"se", {f.se_beta0, f.se_beta1, f.se_beta2}}};
    j["weak_proxy_warning"] = f.weak_proxy_warning;
    return j;
}

json to_json(const GaussianDoLawResult& r) {
    json j;
    j["do_law"] = {{"gamma0", r.law.gamma0},
                   {"gamma1", r.law.gamma1},
                   {"sigma_sq", r.law.sigma_sq}};
    j["h"] = {{"intercept", r.h.intercept},
              {"w_coef", r.h.w_coef},
              {"x_coef", r.h.x_coef},
              {"variance", r.h.variance},
              {"max_residual", r.h.max_residual},
              {"used_fourier", r.h.used_fourier}};
    j["normalization_error"] = r.normalization_error;
    j["gamma1_gap"] = r.gamma1_gap;
    return j;
}

json to_json(const PicardDiagnostics& d) {
    json j;
    j["singular_values"] = vec_to_json(d.singular_values);
    j["coefficients"] = vec_to_json(d.coefficients);
    j["picard_partial_sums"] = vec_to_json(d.picard_partial_sums);
    j["hilbert_schmidt_norm_sq"] = d.hilbert_schmidt_norm_sq;
    j["b_norm_sq"] = d.b_norm_sq;
    j["n_above_floor"] = d.n_above_floor;
    j["late_mass_ratio"] = d.late_mass_ratio;
    j["blowup_flagged"] = d.blowup_flagged;
    return j;
}

json to_json(const LambdaPath& p) {
    json pts = json::array();
    for (const auto& pt : p.points)
        pts.push_back({{"lambda", pt.lambda},
                       {"residual_norm", pt.residual_norm},
                       {"solution_norm", pt.solution_norm}});
    json j;
    j["points"] = pts;
    j["chosen_lambda"] = p.chosen_lambda;
    j["chosen_index"] = p.chosen_index;
    j["corner_found"] = p.corner_found;
    return j;
}

} // namespace proxci
