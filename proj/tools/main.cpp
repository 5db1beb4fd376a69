// proxci: causal-effect identification and testing with confounder proxies.
//
// Subcommands: identify, test, gauss, fredholm, simulate, power.
// Exit codes: 0 success, 2 input/validation error, 3 numeric/rank error.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "proxci/dgp.hpp"
#include "proxci/fredholm.hpp"
#include "proxci/ident_cat.hpp"
#include "proxci/ident_gauss.hpp"
#include "proxci/json_io.hpp"
#include "proxci/nulltest.hpp"
#include "proxci/tabular.hpp"

using nlohmann::json;
using namespace proxci;

namespace {

constexpr int kSchemaVersion = 1;
constexpr double kPi = 3.14159265358979323846;

struct CommonOpts {
    std::string input;
    std::string output;
    std::string csv_output;
    std::string columns;
    bool no_timestamp = false;
};

std::string iso_timestamp() {
    auto now = std::chrono::system_clock::now();
    std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%FT%TZ", std::gmtime(&t));
    return buf;
}

json make_envelope(const std::string& command, const json& config, bool no_timestamp) {
    json doc;
    doc["schema_version"] = kSchemaVersion;
    doc["command"] = command;
    doc["config"] = config;
    if (!no_timestamp) doc["timestamp"] = iso_timestamp();
    return doc;
}

void write_output(const json& doc, const std::string& path) {
    if (path.empty()) {
        std::cout << doc.dump(2) << "\n";
        return;
    }
    std::ofstream f(path);
    if (!f) throw Error(ErrorKind::Config, "cannot write output file: " + path);
    f << doc.dump(2) << "\n";
}

json load_json(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error(ErrorKind::Ingestion, "cannot open file: " + path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw Error(ErrorKind::Schema, std::string("malformed JSON in ") + path + ": " + e.what());
    }
    return j;
}

CsvSchema parse_columns(const std::string& spec) {
    CsvSchema schema;
    if (spec.empty()) return schema;
    schema.z.clear();
    schema.w.clear();
    schema.u.clear();
    std::stringstream ss(spec);
    std::string item;
    bool saw_x = false, saw_y = false;
    while (std::getline(ss, item, ',')) {
        auto eq = item.find('=');
        if (eq == std::string::npos)
            throw Error(ErrorKind::Config, "column mapping entries look like var=column");
        std::string var = item.substr(0, eq), col = item.substr(eq + 1);
        if (var == "x") { schema.x = col; saw_x = true; }
        else if (var == "z") schema.z = col;
        else if (var == "w") schema.w = col;
        else if (var == "y") { schema.y = col; saw_y = true; }
        else if (var == "u") schema.u = col;
        else throw Error(ErrorKind::Config, "unknown variable '" + var + "' in column mapping");
    }
    if (!saw_x || !saw_y)
        throw Error(ErrorKind::Config, "column mapping must cover at least x and y");
    return schema;
}

json schema_to_json(const CsvSchema& s) {
    json j;
    j["x"] = s.x;
    j["y"] = s.y;
    if (!s.z.empty()) j["z"] = s.z;
    if (!s.w.empty()) j["w"] = s.w;
    if (!s.u.empty()) j["u"] = s.u;
    return j;
}

void write_effect_csv(const EffectTable& table, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw Error(ErrorKind::Config, "cannot write output file: " + path);
    f << "x,y,estimate,naive_estimate,condition_number,clipped,coarsening_used\n";
    char buf[256];
    for (const auto& r : table.rows) {
        std::snprintf(buf, sizeof(buf), "%d,%d,%.17g,%.17g,%.17g,%d,%d\n", r.x, r.y, r.estimate,
                      r.naive_estimate, r.condition_number, r.clipped ? 1 : 0,
                      r.coarsening_used ? 1 : 0);
        f << buf;
    }
}

int run_identify(const CommonOpts& opts, double rank_tol, int coarsen_k, double smooth_alpha) {
    CsvSchema schema = parse_columns(opts.columns);
    CategoricalDataset data = load_csv(opts.input, schema);

    IdentifyConfig cfg;
    cfg.rank_tol = rank_tol;
    if (coarsen_k > 0) cfg.coarsen_k = coarsen_k;
    if (smooth_alpha > 0.0) cfg.smoothing = Smoothing{true, smooth_alpha};
    EffectTable table = identify_from_data(data, cfg);

    json config;
    config["input"] = opts.input;
    config["columns"] = schema_to_json(schema);
    config["rank_tol"] = rank_tol;
    if (coarsen_k > 0) config["coarsen_k"] = coarsen_k;
    if (smooth_alpha > 0.0) config["smooth_alpha"] = smooth_alpha;
    json doc = make_envelope("identify", config, opts.no_timestamp);
    doc["result"] = to_json(table);
    write_output(doc, opts.output);
    if (!opts.csv_output.empty()) write_effect_csv(table, opts.csv_output);
    return 0;
}

int run_test(const CommonOpts& opts, double alpha, const std::string& cov,
             const std::string& diagram_name, int coarsen_w, std::uint64_t boot_seed) {
    CsvSchema schema = parse_columns(opts.columns);
    CategoricalDataset data = load_csv(opts.input, schema);

    NullTestConfig cfg;
    cfg.cov = cov == "bootstrap" ? CovMethod::Bootstrap : CovMethod::Plugin;
    cfg.bootstrap_seed = boot_seed;
    if (coarsen_w > 0) cfg.coarsen_w_to = coarsen_w;
    Diagram diagram = diagram_from_string(diagram_name);

    // for diagram (b) the roles of X and Y swap, so the per-level loop runs
    // over X levels; everywhere else it runs over Y levels
    int levels = diagram == Diagram::B ? data.card_x : data.card_y;
    std::vector<NullTestResult> results;
    for (int lvl = 0; lvl < levels; ++lvl)
        results.push_back(test_other_diagrams(data, diagram, lvl, cfg));
    double combined = combine_levels(results);

    json config;
    config["input"] = opts.input;
    config["columns"] = schema_to_json(schema);
    config["alpha"] = alpha;
    config["cov"] = cov;
    config["diagram"] = diagram_name;
    if (coarsen_w > 0) config["coarsen_w"] = coarsen_w;
    if (cov == "bootstrap") config["seed"] = boot_seed;
    json doc = make_envelope("test", config, opts.no_timestamp);
    json arr = json::array();
    for (const auto& r : results) {
        json rj = to_json(r);
        rj["reject_at_alpha"] = r.p_value < alpha;
        arr.push_back(rj);
    }
    doc["result"]["levels"] = arr;
    doc["result"]["combined_p_value"] = combined;
    doc["result"]["combined_method"] = "bonferroni";
    write_output(doc, opts.output);
    return 0;
}

int run_gauss(const CommonOpts& opts, bool per_x) {
    CsvSchema schema = parse_columns(opts.columns);
    if (schema.z.empty() || schema.w.empty())
        throw Error(ErrorKind::Config, "the continuous path needs both proxy columns z and w");
    NumericDataset data = load_numeric_csv(opts.input, schema);

    double w_mean = data.w.mean();
    double w_var = (data.w.array() - w_mean).square().sum() / (data.n() - 1);

    json config;
    config["input"] = opts.input;
    config["columns"] = schema_to_json(schema);
    config["per_x"] = per_x;
    json doc = make_envelope("gauss", config, opts.no_timestamp);

    if (per_x) {
        auto fits = fit_proxy_regressions_per_x(data);
        auto means = do_law_per_x(fits, w_mean, w_var);
        json arr = json::array();
        for (std::size_t i = 0; i < fits.size(); ++i) {
            arr.push_back({{"x", fits[i].x_value},
                           {"n", fits[i].n},
                           {"do_mean", means[i].mean},
                           {"do_variance", means[i].variance}});
        }
        doc["result"]["per_x"] = arr;
    } else {
        ProxyRegressionFit fit = fit_proxy_regressions(data);
        GaussianDoLawResult law = gaussian_do_law(fit, w_mean, w_var);
        doc["result"]["fit"] = to_json(fit);
        doc["result"]["do_law"] = to_json(law);
        doc["result"]["gamma1"] = gamma1(fit);
    }
    doc["result"]["w_marginal"] = {{"mean", w_mean}, {"variance", w_var}};
    write_output(doc, opts.output);
    return 0;
}

GaussianLinear gaussian_linear_from_json(const json& j, const char* what) {
    if (!j.is_object()) throw Error(ErrorKind::Schema, std::string("missing block ") + what);
    GaussianLinear g;
    g.intercept = j.value("intercept", 0.0);
    g.z_coef = j.value("z_coef", 0.0);
    g.x_coef = j.value("x_coef", 0.0);
    g.variance = j.value("variance", 1.0);
    if (!(g.variance > 0.0))
        throw Error(ErrorKind::Schema, std::string(what) + ": variance must be positive");
    return g;
}

int run_fredholm(const CommonOpts& opts, double requested_lambda) {
    json spec = load_json(opts.input);
    GaussianLinear p_y =
        gaussian_linear_from_json(spec.value("p_y_given_zx", json()), "p_y_given_zx");
    GaussianLinear f_w =
        gaussian_linear_from_json(spec.value("f_w_given_zx", json()), "f_w_given_zx");
    json wm = spec.value("w_marginal", json());
    json zm = spec.value("z_marginal", json());
    if (!wm.is_object() || !zm.is_object())
        throw Error(ErrorKind::Schema, "fredholm spec needs w_marginal and z_marginal blocks");
    double w_mean = wm.value("mean", 0.0), w_var = wm.value("variance", 1.0);
    double z_mean = zm.value("mean", 0.0), z_var = zm.value("variance", 1.0);
    double x_eval = spec.value("x", 1.0), y_eval = spec.value("y", 0.0);
    json grid = spec.value("grid", json::object());
    int points = grid.value("points", 201);
    double pad = grid.value("padding_sds", 6.0);

    double z_sd = std::sqrt(z_var);
    QuadGrid z_grid = trapezoid_grid(z_mean - pad * z_sd, z_mean + pad * z_sd, points);
    double s2 = std::sqrt(f_w.variance);
    double mu_lo = f_w.intercept + f_w.z_coef * z_grid.points(0) + f_w.x_coef * x_eval;
    double mu_hi = f_w.intercept + f_w.z_coef * z_grid.points(points - 1) + f_w.x_coef * x_eval;
    if (mu_lo > mu_hi) std::swap(mu_lo, mu_hi);
    QuadGrid w_grid = trapezoid_grid(mu_lo - pad * s2, mu_hi + pad * s2, points);

    auto kernel = [&](double w, double z) {
        double mu = f_w.intercept + f_w.z_coef * z + f_w.x_coef * x_eval;
        return std::exp(-0.5 * (w - mu) * (w - mu) / f_w.variance) /
               std::sqrt(2.0 * kPi * f_w.variance);
    };
    auto rhs = [&](double z) {
        double mu = p_y.intercept + p_y.z_coef * z + p_y.x_coef * x_eval;
        return std::exp(-0.5 * (y_eval - mu) * (y_eval - mu) / p_y.variance) /
               std::sqrt(2.0 * kPi * p_y.variance);
    };
    DiscretizedEquation eq = discretize(kernel, rhs, w_grid, z_grid, x_eval, y_eval);

    Eigen::VectorXd f_w_marg(eq.w_grid.size());
    for (int i = 0; i < eq.w_grid.size(); ++i)
        f_w_marg(i) = std::exp(-0.5 * std::pow(eq.w_grid.points(i) - w_mean, 2) / w_var) /
                      std::sqrt(2.0 * kPi * w_var);

    TikhonovSolver solver(eq);
    LambdaPath path = choose_lambda(eq);
    json table = json::array();
    for (const auto& pt : path.points) {
        TikhonovSolution sol = solver.solve(pt.lambda);
        table.push_back({{"lambda", pt.lambda},
                         {"residual", pt.residual_norm},
                         {"do_value", integrate_do(sol.h, f_w_marg, eq.w_grid)}});
    }
    TikhonovSolution chosen = solver.solve(path.chosen_lambda);
    double do_chosen = integrate_do(chosen.h, f_w_marg, eq.w_grid);
    PicardDiagnostics picard = picard_diagnostics(eq);

    // closed-form benchmark through the Gaussian solution family
    GaussianHSolution h = solve_h_gaussian(f_w, p_y);
    double mu_do = h.intercept + h.w_coef * w_mean + h.x_coef * x_eval;
    double var_do = h.variance + h.w_coef * h.w_coef * w_var;
    double do_closed = std::exp(-0.5 * (y_eval - mu_do) * (y_eval - mu_do) / var_do) /
                       std::sqrt(2.0 * kPi * var_do);

    json config;
    config["input"] = opts.input;
    if (requested_lambda >= 0.0) config["lambda"] = requested_lambda;
    json doc = make_envelope("fredholm", config, opts.no_timestamp);
    doc["result"]["lambda_table"] = table;
    doc["result"]["lambda_path"] = to_json(path);
    doc["result"]["chosen"] = {{"lambda", path.chosen_lambda},
                               {"residual", chosen.residual_norm},
                               {"do_value", do_chosen}};
    if (requested_lambda >= 0.0) {
        TikhonovSolution req = solver.solve(requested_lambda);
        doc["result"]["requested"] = {{"lambda", requested_lambda},
                                      {"residual", req.residual_norm},
                                      {"do_value", integrate_do(req.h, f_w_marg, eq.w_grid)}};
    }
    doc["result"]["closed_form_do_value"] = do_closed;
    doc["result"]["picard"] = to_json(picard);
    write_output(doc, opts.output);

    if (!opts.csv_output.empty()) {
        std::ofstream f(opts.csv_output);
        if (!f) throw Error(ErrorKind::Config, "cannot write output file: " + opts.csv_output);
        f << "lambda,residual,do_value\n";
        char buf[128];
        for (const auto& row : table) {
            std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g\n", row["lambda"].get<double>(),
                          row["residual"].get<double>(), row["do_value"].get<double>());
            f << buf;
        }
    }
    return 0;
}

int run_simulate(const CommonOpts& opts, std::uint64_t seed, int n) {
    json spec = load_json(opts.input);
    std::string type = spec.value("type", "latent_class");
    if (opts.output.empty()) throw Error(ErrorKind::Config, "simulate needs --output");

    std::ofstream f(opts.output);
    if (!f) throw Error(ErrorKind::Config, "cannot write output file: " + opts.output);
    char buf[256];
    json config;
    config["input"] = opts.input;
    config["n"] = n;
    config["seed"] = seed;
    config["model_type"] = type;

    if (type == "latent_class") {
        LatentClassModel model = latent_class_from_json(spec);
        CategoricalDataset data = sample_latent_class(model, n, seed);
        f << "x,z,w,y,u\n";
        for (int r = 0; r < data.n(); ++r) {
            std::snprintf(buf, sizeof(buf), "%d,%d,%d,%d,%d\n", data.x[r], data.z[r], data.w[r],
                          data.y[r], (*data.u)[r]);
            f << buf;
        }
    } else if (type == "gaussian_sem") {
        LinearGaussianSem sem = sem_from_json(spec);
        NumericDataset data = sample_gaussian_sem(sem, n, seed);
        f << "x,z,w,y,u\n";
        for (int r = 0; r < data.n(); ++r) {
            std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%.17g,%.17g\n", data.x(r),
                          data.z(r), data.w(r), data.y(r), (*data.u)(r));
            f << buf;
        }
    } else {
        throw Error(ErrorKind::Schema, "model type must be latent_class or gaussian_sem");
    }

    json doc = make_envelope("simulate", config, opts.no_timestamp);
    doc["rows_written"] = n;
    write_output(doc, opts.output + ".meta.json");
    return 0;
}

int run_power(const CommonOpts& opts, std::uint64_t seed, double alpha, int jobs) {
    json spec = load_json(opts.input);
    StudyConfig config = study_config_from_json(spec);
    config.seed = seed;
    if (alpha > 0.0) config.alpha = alpha;

    StudyReport report = run_study(config, jobs);

    json doc = make_envelope("power", to_json(config), opts.no_timestamp);
    doc["result"] = to_json(report);
    write_output(doc, opts.output);

    if (!opts.csv_output.empty()) {
        std::ofstream f(opts.csv_output);
        if (!f) throw Error(ErrorKind::Config, "cannot write output file: " + opts.csv_output);
        f << "x,y,oracle,mean_bias,rmse,mean_abs_error,naive_mean_bias,naive_rmse\n";
        char buf[256];
        for (const auto& c : report.cells) {
            std::snprintf(buf, sizeof(buf), "%d,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", c.x,
                          c.y, c.oracle, c.mean_bias, c.rmse, c.mean_abs_error, c.naive_mean_bias,
                          c.naive_rmse);
            f << buf;
        }
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"proxci: causal inference with confounder proxies"};
    app.require_subcommand(1);

    CommonOpts opts;
    double alpha = 0.05;
    double lambda = -1.0;
    double rank_tol = -1.0;
    double smooth_alpha = 0.0;
    std::string cov = "plugin";
    std::string diagram = "f";
    int coarsen_k = 0;
    int jobs = 1;
    int n_rows = 1000;
    bool per_x = false;
    std::uint64_t seed = 0;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--input", opts.input, "input file")->required();
        cmd->add_option("--output", opts.output, "output file (stdout when absent)");
        cmd->add_option("--csv", opts.csv_output, "secondary CSV output");
        cmd->add_option("--columns", opts.columns,
                        "column mapping, e.g. x=treat,y=out,z=proxy1,w=proxy2");
        cmd->add_flag("--no-timestamp", opts.no_timestamp,
                      "omit the timestamp field (comparison mode)");
    };

    CLI::App* c_identify = app.add_subcommand("identify", "effect table from categorical data");
    add_common(c_identify);
    c_identify->add_option("--rank-tol", rank_tol, "rank tolerance (default: sqrt(k_w/n))");
    c_identify->add_option("--coarsen", coarsen_k, "coarsen W and Z to this cardinality");
    c_identify->add_option("--smooth-alpha", smooth_alpha, "Laplace smoothing (exploratory)");

    CLI::App* c_test = app.add_subcommand("test", "causal-null test from categorical data");
    add_common(c_test);
    c_test->add_option("--alpha", alpha, "significance level for the summary flag");
    c_test->add_option("--cov", cov, "covariance estimator: plugin|bootstrap")
        ->check(CLI::IsMember({"plugin", "bootstrap"}));
    c_test->add_option("--diagram", diagram, "causal diagram a..f")
        ->check(CLI::IsMember({"a", "b", "c", "d", "e", "f"}));
    c_test->add_option("--coarsen-w", coarsen_k, "coarsen W to this cardinality before testing");
    c_test->add_option("--seed", seed, "seed (needed for --cov bootstrap)");

    CLI::App* c_gauss = app.add_subcommand("gauss", "continuous-confounder identification");
    add_common(c_gauss);
    c_gauss->add_flag("--per-x", per_x, "stratified per-x fits (discrete X)");

    CLI::App* c_fredholm = app.add_subcommand("fredholm", "discretized integral-equation solver");
    add_common(c_fredholm);
    c_fredholm->add_option("--lambda", lambda, "also solve at this regularization weight");

    CLI::App* c_simulate = app.add_subcommand("simulate", "sample a model to CSV");
    add_common(c_simulate);
    c_simulate->add_option("--n", n_rows, "number of rows")->required();
    c_simulate->add_option("--seed", seed, "RNG seed")->required();

    CLI::App* c_power = app.add_subcommand("power", "Monte Carlo study from a config");
    add_common(c_power);
    c_power->add_option("--seed", seed, "master seed")->required();
    c_power->add_option("--alpha", alpha, "significance level override");
    c_power->add_option("--jobs", jobs, "worker threads for replicates");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_name() == "CallForHelp" || e.get_name() == "CallForAllHelp")
            return app.exit(e);
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    }

    try {
        if (app.got_subcommand(c_identify))
            return run_identify(opts, rank_tol, coarsen_k, smooth_alpha);
        if (app.got_subcommand(c_test))
            return run_test(opts, alpha, cov, diagram, coarsen_k, seed);
        if (app.got_subcommand(c_gauss)) return run_gauss(opts, per_x);
        if (app.got_subcommand(c_fredholm)) return run_fredholm(opts, lambda);
        if (app.got_subcommand(c_simulate)) return run_simulate(opts, seed, n_rows);
        if (app.got_subcommand(c_power)) return run_power(opts, seed, alpha, jobs);
    } catch (const Error& e) {
        std::cerr << "error (" << to_string(e.kind()) << "): " << e.what() << "\n";
        return e.is_validation() ? 2 : 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
