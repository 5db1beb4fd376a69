#pragma once

// Shared fixtures for the unit and acceptance suites. The Monte Carlo
// fixtures are frozen: their operating characteristics (test size, power,
// estimator bias) were verified against enumeration before being pinned.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>

#include "proxci/dgp.hpp"

namespace proxci::testing {

using BinProb = std::function<double(int u, int z)>;

/// Two-level model (f) builder: probability of the "1" level for each table,
/// everything else complemented.
inline LatentClassModel binary_f_model(double pz1_u0, double pz1_u1,
                                       const std::function<double(int u, int z)>& px1,
                                       double pw1_u0, double pw1_u1,
                                       const std::function<double(int u, int x, int w)>& py1,
                                       Diagram diagram = Diagram::F) {
    LatentClassModel m;
    m.diagram = diagram;
    m.n_u = m.n_z = m.n_x = m.n_w = m.n_y = 2;
    m.allocate();
    m.pi_u << 0.5, 0.5;
    m.p_z_given_u << pz1_u0, pz1_u1, 1 - pz1_u0, 1 - pz1_u1;
    m.p_w_given_u << pw1_u0, pw1_u1, 1 - pw1_u0, 1 - pw1_u1;
    for (int u = 0; u < 2; ++u)
        for (int z = 0; z < 2; ++z) {
            m.px(1, u, z) = px1(u, z);
            m.px(0, u, z) = 1 - px1(u, z);
        }
    for (int u = 0; u < 2; ++u)
        for (int x = 0; x < 2; ++x)
            for (int w = 0; w < 2; ++w) {
                m.py(1, u, x, w) = py1(u, x, w);
                m.py(0, u, x, w) = 1 - py1(u, x, w);
            }
    m.validate();
    return m;
}

/// Null-hypothesis model (f) used for size and distribution checks: the
/// outcome depends on (u, w) but not on x, with the u-spread and w-effect
/// balanced so the plug-in covariance keeps the statistic on its reference
/// distribution.
inline LatentClassModel h0_size_model(double delta = 0.0) {
    return binary_f_model(
        0.8, 0.3,
        [](int u, int z) {
            const double px1[2][2] = {{0.65, 0.35}, {0.45, 0.25}}; // [z][u]
            return px1[z][u];
        },
        0.75, 0.35,
        [delta](int u, int x, int w) {
            double p = 0.4 + 0.10 * (2 * u - 1) + 0.175 * (2 * w - 1);
            if (x == 1 && w == 1) p += delta; // the alternative's channel
            return p;
        });
}

/// Strong-confounding fixture for finite-sample consistency: the naive
/// single-proxy adjustment carries a bias near 0.096 while the two-proxy
/// estimate is consistent.
inline LatentClassModel strong_confounding_model() {
    return binary_f_model(
        0.85, 0.2,
        [](int u, int z) { return (u == 1 ? 0.75 : 0.25) + 0.1 * (z - 0.5); },
        0.85, 0.25,
        [](int u, int x, int w) { return 0.15 + 0.5 * u + 0.15 * x + 0.05 * w; });
}

/// Perfect proxies: Z = W = U, so two-proxy identification must agree with
/// direct adjustment for Z.
inline LatentClassModel perfect_proxy_model() {
    return binary_f_model(
        1.0, 0.0, [](int u, int z) { return u == 1 ? 0.7 : 0.3; }, 1.0, 0.0,
        [](int u, int x, int w) { return 0.2 + 0.4 * u + 0.2 * x; });
}

/// Diagram (b) fixture: treatment-side proxy only, Y with three levels so the
/// swapped test has a degree of freedom. `x_effect` shifts the outcome law
/// with treatment (zero under the null).
inline LatentClassModel diagram_b_model(double x_effect = 0.0) {
    LatentClassModel m;
    m.diagram = Diagram::B;
    m.n_u = 2;
    m.n_z = 2;
    m.n_x = 2;
    m.n_w = 2; // inert: diagram (b) has no W edge into Y
    m.n_y = 3;
    m.allocate();
    m.pi_u << 0.5, 0.5;
    m.p_z_given_u << 0.8, 0.2, 0.2, 0.8;
    m.p_w_given_u << 0.5, 0.5, 0.5, 0.5;
    for (int u = 0; u < 2; ++u)
        for (int z = 0; z < 2; ++z) {
            double p1 = 0.5 + 0.25 * (u - 0.5) + 0.2 * (z - 0.5);
            m.px(1, u, z) = p1;
            m.px(0, u, z) = 1 - p1;
        }
    for (int u = 0; u < 2; ++u)
        for (int x = 0; x < 2; ++x) {
            double s = 0.15 * (u - 0.5) * 2.0 / 3.0;
            double bump = x == 1 ? x_effect : 0.0;
            for (int w = 0; w < 2; ++w) {
                m.py(0, u, x, w) = 1.0 / 3.0 + s + bump;
                m.py(1, u, x, w) = 1.0 / 3.0;
                m.py(2, u, x, w) = 1.0 / 3.0 - s - bump;
            }
        }
    m.validate();
    return m;
}

/// Three-level-Y model (f) under the null, for the mean-scale test with
/// scores (0, 1, 2). `x_shift` tilts the score distribution with treatment.
inline LatentClassModel mean_scale_model(double x_shift = 0.0) {
    LatentClassModel m;
    m.diagram = Diagram::F;
    m.n_u = m.n_z = m.n_x = m.n_w = 2;
    m.n_y = 3;
    m.allocate();
    m.pi_u << 0.5, 0.5;
    m.p_z_given_u << 0.8, 0.3, 0.2, 0.7;
    m.p_w_given_u << 0.75, 0.35, 0.25, 0.65;
    for (int u = 0; u < 2; ++u)
        for (int z = 0; z < 2; ++z) {
            const double px1[2][2] = {{0.65, 0.35}, {0.45, 0.25}};
            m.px(1, u, z) = px1[z][u];
            m.px(0, u, z) = 1 - px1[z][u];
        }
    for (int u = 0; u < 2; ++u)
        for (int x = 0; x < 2; ++x)
            for (int w = 0; w < 2; ++w) {
                double s = 0.15 * (2 * u - 1) + 0.35 * (2 * w - 1);
                if (x == 1) s += x_shift;
                m.py(0, u, x, w) = (1.0 - s) / 3.0;
                m.py(1, u, x, w) = 1.0 / 3.0;
                m.py(2, u, x, w) = (1.0 + s) / 3.0;
            }
    m.validate();
    return m;
}

/// Reference SEM for the continuous path: genuine confounding (d1 != 0),
/// treatment effect d2, and an outcome-side proxy edge d3.
inline LinearGaussianSem reference_sem() {
    LinearGaussianSem s;
    s.mu_u = 0.5;
    s.tau_sq = 1.0;
    s.a0 = 0.2;
    s.a1 = 1.1;
    s.var_z = 0.8;
    s.b0 = -0.3;
    s.b1 = 0.9;
    s.b2 = 0.5;
    s.var_x = 1.0;
    s.c0 = 0.1;
    s.c1 = 1.3;
    s.var_w = 0.7;
    s.d0 = 0.4;
    s.d1 = 0.8;
    s.d2 = 0.6;
    s.d3 = 0.3;
    s.var_y = 2.0;
    return s;
}

/// Numeric view of a categorical dataset with the given Y scores.
inline NumericOutcomeDataset with_scores(const CategoricalDataset& data,
                                         const std::vector<double>& scores) {
    NumericOutcomeDataset out;
    out.x = data.x;
    out.z = data.z;
    out.w = data.w;
    out.card_x = data.card_x;
    out.card_z = data.card_z;
    out.card_w = data.card_w;
    out.y.resize(data.n());
    for (int r = 0; r < data.n(); ++r) out.y(r) = scores.at(data.y[r]);
    return out;
}

/// Scratch file helper for loader tests.
class TempFile {
  public:
    explicit TempFile(const std::string& contents) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("proxci_test_" + std::to_string(++counter) + "_" +
                 std::to_string(::getpid()) + ".csv");
        std::ofstream f(path_);
        f << contents;
    }
    ~TempFile() { std::filesystem::remove(path_); }
    std::string path() const { return path_.string(); }

  private:
    std::filesystem::path path_;
};

} // namespace proxci::testing
