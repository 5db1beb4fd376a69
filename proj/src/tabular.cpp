#include "proxci/tabular.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "proxci/rng.hpp"

namespace proxci {

const char* to_string(Var v) {
    switch (v) {
        case Var::X: return "X";
        case Var::Z: return "Z";
        case Var::W: return "W";
        case Var::Y: return "Y";
    }
    return "?";
}

const std::vector<int>& CategoricalDataset::column(Var v) const {
    switch (v) {
        case Var::X: return x;
        case Var::Z: return z;
        case Var::W: return w;
        case Var::Y: return y;
    }
    throw Error(ErrorKind::Config, "unknown variable");
}

int CategoricalDataset::cardinality(Var v) const {
    switch (v) {
        case Var::X: return card_x;
        case Var::Z: return card_z;
        case Var::W: return card_w;
        case Var::Y: return card_y;
    }
    throw Error(ErrorKind::Config, "unknown variable");
}

CategoricalDataset CategoricalDataset::without_u() const {
    CategoricalDataset d = *this;
    d.u.reset();
    d.card_u = 0;
    return d;
}

void CategoricalDataset::validate() const {
    const std::size_t n_rows = x.size();
    if (n_rows == 0) throw Error(ErrorKind::Ingestion, "dataset is empty");
    if (z.size() != n_rows || w.size() != n_rows || y.size() != n_rows ||
        (u && u->size() != n_rows))
        throw Error(ErrorKind::Schema, "dataset columns have unequal lengths");
    auto check = [&](const std::vector<int>& col, int card, const char* name) {
        if (card < 1) throw Error(ErrorKind::Schema, std::string("cardinality of ") + name + " must be >= 1");
        for (int v : col)
            if (v < 0 || v >= card)
                throw Error(ErrorKind::Schema,
                            std::string("level index out of range for ") + name);
    };
    check(x, card_x, "X");
    check(z, card_z, "Z");
    check(w, card_w, "W");
    check(y, card_y, "Y");
    if (u) check(*u, card_u, "U");
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c == '\r' && i + 1 == line.size()) {
            // trailing CR from CRLF files
        } else {
            cur += c;
        }
    }
    fields.push_back(cur);
    return fields;
}

std::string trimmed(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t");
    return s.substr(a, b - a + 1);
}

bool parse_nonneg_int(const std::string& s, long long& out) {
    if (s.empty()) return false;
    for (char c : s)
        if (!std::isdigit(static_cast<unsigned char>(c))) return false;
    try {
        out = std::stoll(s);
    } catch (...) {
        return false;
    }
    return out >= 0;
}

struct RawColumn {
    std::string name;
    std::vector<std::string> cells;
};

// Dense 0-based re-indexing. Integer-valued columns sort numerically,
// anything else lexicographically.
struct LevelMap {
    std::vector<std::string> labels;
    std::map<std::string, int> index;
};

LevelMap build_level_map(const std::vector<std::string>& cells) {
    std::set<std::string> uniq(cells.begin(), cells.end());
    bool all_int = true;
    for (const auto& s : uniq) {
        long long v;
        if (!parse_nonneg_int(s, v)) {
            all_int = false;
            break;
        }
    }
    std::vector<std::string> ordered(uniq.begin(), uniq.end());
    if (all_int)
        std::sort(ordered.begin(), ordered.end(), [](const std::string& a, const std::string& b) {
            long long va = 0, vb = 0;
            parse_nonneg_int(a, va);
            parse_nonneg_int(b, vb);
            return va < vb;
        });
    LevelMap m;
    m.labels = ordered;
    for (std::size_t i = 0; i < ordered.size(); ++i) m.index[ordered[i]] = static_cast<int>(i);
    return m;
}

struct ParsedCsv {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

ParsedCsv read_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error(ErrorKind::Ingestion, "cannot open file: " + path);
    ParsedCsv out;
    std::string line;
    if (!std::getline(f, line)) throw Error(ErrorKind::Ingestion, "empty file: " + path);
    out.header = split_csv_line(line);
    for (auto& h : out.header) h = trimmed(h);
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        if (fields.size() != out.header.size())
            throw Error(ErrorKind::Ingestion,
                        "row " + std::to_string(out.rows.size() + 2) + " has " +
                            std::to_string(fields.size()) + " fields, expected " +
                            std::to_string(out.header.size()));
        for (auto& c : fields) {
            c = trimmed(c);
            if (c.empty() || c == "NA")
                throw Error(ErrorKind::Ingestion,
                            "missing value in row " + std::to_string(out.rows.size() + 2) +
                                " (rows with missing values are rejected)");
        }
        out.rows.push_back(std::move(fields));
    }
    if (out.rows.empty()) throw Error(ErrorKind::Ingestion, "no data rows in " + path);
    return out;
}

int column_of(const ParsedCsv& csv, const std::string& name) {
    for (std::size_t i = 0; i < csv.header.size(); ++i)
        if (csv.header[i] == name) return static_cast<int>(i);
    return -1;
}

} // namespace

CategoricalDataset load_csv(const std::string& path, const CsvSchema& schema) {
    ParsedCsv csv = read_csv(path);
    const std::size_t n = csv.rows.size();

    CategoricalDataset data;

    auto ingest = [&](const std::string& colname, const char* varname, bool required,
                      std::vector<int>& out, int& card) -> bool {
        if (colname.empty()) return false;
        int ci = column_of(csv, colname);
        if (ci < 0) {
            if (required)
                throw Error(ErrorKind::Schema, std::string("declared column '") + colname +
                                                   "' for variable " + varname + " not found");
            return false;
        }
        std::vector<std::string> cells(n);
        for (std::size_t r = 0; r < n; ++r) cells[r] = csv.rows[r][ci];
        LevelMap lm = build_level_map(cells);
        out.resize(n);
        for (std::size_t r = 0; r < n; ++r) out[r] = lm.index.at(cells[r]);
        card = static_cast<int>(lm.labels.size());
        data.labels[varname] = lm.labels;
        return true;
    };

    ingest(schema.x, "x", true, data.x, data.card_x);
    ingest(schema.y, "y", true, data.y, data.card_y);
    bool has_z = ingest(schema.z, "z", !schema.z.empty(), data.z, data.card_z);
    bool has_w = ingest(schema.w, "w", !schema.w.empty(), data.w, data.card_w);
    if (!has_z) { // single-proxy design: synthesize a constant column
        data.z.assign(n, 0);
        data.card_z = 1;
    }
    if (!has_w) {
        data.w.assign(n, 0);
        data.card_w = 1;
    }

    std::vector<int> ucol;
    int ucard = 0;
    bool has_u = false;
    if (!schema.u.empty()) {
        has_u = ingest(schema.u, "u", schema.u_required, ucol, ucard);
    }
    if (has_u) {
        data.u = std::move(ucol);
        data.card_u = ucard;
    }

    auto degenerate = [&](int card, bool present, const char* name) {
        if (present && card < 2)
            throw Error(ErrorKind::DegenerateVariable,
                        std::string("variable ") + name + " has a single observed level");
    };
    degenerate(data.card_x, true, "X");
    degenerate(data.card_y, true, "Y");
    degenerate(data.card_z, has_z, "Z");
    degenerate(data.card_w, has_w, "W");

    data.validate();
    return data;
}

CondProbMatrix CondProbMatrix::checked(Eigen::MatrixXd values, std::string description) {
    const double col_tol = 1e-12;
    for (Eigen::Index c = 0; c < values.cols(); ++c) {
        double sum = 0.0;
        for (Eigen::Index r = 0; r < values.rows(); ++r) {
            double v = values(r, c);
            if (!(v >= -1e-15 && v <= 1.0 + 1e-12))
                throw Error(ErrorKind::Numeric,
                            description + ": entry outside [0,1] at (" + std::to_string(r) +
                                "," + std::to_string(c) + ")");
            sum += v;
        }
        if (std::abs(sum - 1.0) > col_tol * std::max<double>(1, values.rows()))
            throw Error(ErrorKind::Numeric, description + ": column " + std::to_string(c) +
                                                " sums to " + std::to_string(sum));
    }
    return CondProbMatrix(std::move(values), std::move(description));
}

namespace {

std::string stratum_string(const Stratum& stratum) {
    std::string s;
    for (const auto& [v, lvl] : stratum) {
        s += ",";
        s += to_string(v);
        s += "=" + std::to_string(lvl);
    }
    return s;
}

bool in_stratum(const CategoricalDataset& data, int row, const Stratum& stratum) {
    for (const auto& [v, lvl] : stratum)
        if (data.column(v)[row] != lvl) return false;
    return true;
}

} // namespace

CondProbMatrix cond_prob_matrix(const CategoricalDataset& data, Var target, Var given,
                                const Stratum& stratum, const Smoothing& smoothing) {
    data.validate();
    const int nt = data.cardinality(target);
    const int ng = data.cardinality(given);
    const auto& tcol = data.column(target);
    const auto& gcol = data.column(given);

    Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(nt, ng);
    for (int r = 0; r < data.n(); ++r) {
        if (!in_stratum(data, r, stratum)) continue;
        counts(tcol[r], gcol[r]) += 1.0;
    }
    if (smoothing.enabled) counts.array() += smoothing.alpha;

    Eigen::MatrixXd probs(nt, ng);
    for (int c = 0; c < ng; ++c) {
        double tot = counts.col(c).sum();
        if (tot <= 0.0)
            throw Error(ErrorKind::SparseCell,
                        std::string("empty conditioning cell: ") + to_string(given) + "=" +
                            std::to_string(c) + stratum_string(stratum));
        probs.col(c) = counts.col(c) / tot;
    }
    std::string desc = std::string("P(") + to_string(target) + "|" + to_string(given) +
                       stratum_string(stratum) + ")";
    return CondProbMatrix::checked(std::move(probs), desc);
}

MarginalPmf marginal_pmf(const CategoricalDataset& data, Var target) {
    data.validate();
    const int nt = data.cardinality(target);
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(nt);
    for (int v : data.column(target)) counts(v) += 1.0;
    return MarginalPmf{counts / data.n()};
}

namespace {

// q_y and the per-cell shares for one dataset; shared by the covariance
// estimators so both use identical cell ordering.
struct CellStats {
    Eigen::VectorXd q;      // pr(y | z, x) per cell
    Eigen::VectorXd share;  // pr(z, x) per cell
};

CellStats cell_stats(const CategoricalDataset& data, int y_level) {
    const int nz = data.card_z, nx = data.card_x;
    Eigen::VectorXd hits = Eigen::VectorXd::Zero(nz * nx);
    Eigen::VectorXd tot = Eigen::VectorXd::Zero(nz * nx);
    for (int r = 0; r < data.n(); ++r) {
        int c = cell_index(data.z[r], data.x[r], nz);
        tot(c) += 1.0;
        if (data.y[r] == y_level) hits(c) += 1.0;
    }
    for (int c = 0; c < nz * nx; ++c)
        if (tot(c) == 0.0)
            throw Error(ErrorKind::SparseCell, "empty (z,x) cell: z=" + std::to_string(c % nz) +
                                                   ",x=" + std::to_string(c / nz));
    CellStats s;
    s.q = hits.array() / tot.array();
    s.share = tot / data.n();
    return s;
}

} // namespace

CovEstimate plugin_covariance(const CategoricalDataset& data, int y_level, double eps_floor) {
    data.validate();
    if (y_level < 0 || y_level >= data.card_y)
        throw Error(ErrorKind::Config, "y level out of range");
    CellStats s = cell_stats(data, y_level);
    const int m = static_cast<int>(s.q.size());
    CovEstimate cov;
    cov.values = Eigen::MatrixXd::Zero(m, m);
    for (int c = 0; c < m; ++c) {
        double p = s.q(c);
        double v = p * (1.0 - p) / s.share(c);
        if (v < eps_floor) {
            v = eps_floor;
            cov.floor_applied = true;
        }
        cov.values(c, c) = v;
    }
    return cov;
}

CovEstimate bootstrap_covariance(const CategoricalDataset& data, int y_level, int resamples,
                                 std::uint64_t seed, double eps_floor) {
    data.validate();
    if (resamples < 2) throw Error(ErrorKind::Config, "bootstrap needs >= 2 resamples");
    const int n = data.n();
    const int nz = data.card_z, nx = data.card_x;
    const int m = nz * nx;

    Rng rng(seed);
    std::uniform_int_distribution<int> pick(0, n - 1);
    Eigen::MatrixXd qs(resamples, m);
    int attempts = 0;
    const int max_attempts = 50 * resamples;
    for (int b = 0; b < resamples;) {
        if (++attempts > max_attempts)
            throw Error(ErrorKind::SparseCell,
                        "bootstrap resamples keep producing empty (z,x) cells");
        Eigen::VectorXd hits = Eigen::VectorXd::Zero(m), tot = Eigen::VectorXd::Zero(m);
        for (int r = 0; r < n; ++r) {
            int idx = pick(rng);
            int c = cell_index(data.z[idx], data.x[idx], nz);
            tot(c) += 1.0;
            if (data.y[idx] == y_level) hits(c) += 1.0;
        }
        if ((tot.array() == 0.0).any()) continue;
        qs.row(b) = (hits.array() / tot.array()).transpose();
        ++b;
    }

    Eigen::RowVectorXd mean = qs.colwise().mean();
    Eigen::MatrixXd centered = qs.rowwise() - mean;
    Eigen::MatrixXd cov = n * (centered.transpose() * centered) / (resamples - 1);

    // eigenvalue floor keeps the estimate positive-definite
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    Eigen::VectorXd ev = es.eigenvalues();
    bool floored = false;
    for (int i = 0; i < ev.size(); ++i)
        if (ev(i) < eps_floor) {
            ev(i) = eps_floor;
            floored = true;
        }
    CovEstimate out;
    out.values = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
    out.values = 0.5 * (out.values + out.values.transpose()).eval();
    out.floor_applied = floored;
    return out;
}

Eigen::VectorXd cell_means(const NumericOutcomeDataset& data) {
    const int nz = data.card_z, nx = data.card_x;
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(nz * nx);
    Eigen::VectorXd tot = Eigen::VectorXd::Zero(nz * nx);
    for (int r = 0; r < data.n(); ++r) {
        int c = cell_index(data.z[r], data.x[r], nz);
        sum(c) += data.y(r);
        tot(c) += 1.0;
    }
    for (int c = 0; c < sum.size(); ++c)
        if (tot(c) == 0.0)
            throw Error(ErrorKind::SparseCell, "empty (z,x) cell: z=" + std::to_string(c % nz) +
                                                   ",x=" + std::to_string(c / nz));
    return sum.array() / tot.array();
}

CovEstimate mean_scale_covariance(const NumericOutcomeDataset& data) {
    const int nz = data.card_z, nx = data.card_x;
    const int m = nz * nx;
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(m), squares = Eigen::VectorXd::Zero(m),
                    tot = Eigen::VectorXd::Zero(m);
    for (int r = 0; r < data.n(); ++r) {
        int c = cell_index(data.z[r], data.x[r], nz);
        sum(c) += data.y(r);
        squares(c) += data.y(r) * data.y(r);
        tot(c) += 1.0;
    }
    CovEstimate cov;
    cov.values = Eigen::MatrixXd::Zero(m, m);
    for (int c = 0; c < m; ++c) {
        if (tot(c) == 0.0)
            throw Error(ErrorKind::SparseCell, "empty (z,x) cell: z=" + std::to_string(c % nz) +
                                                   ",x=" + std::to_string(c / nz));
        double mu = sum(c) / tot(c);
        double var = squares(c) / tot(c) - mu * mu;
        if (var <= 0.0)
            throw Error(ErrorKind::DegenerateVariable,
                        "zero within-cell variance of Y in cell z=" + std::to_string(c % nz) +
                            ",x=" + std::to_string(c / nz));
        cov.values(c, c) = var / (tot(c) / data.n());
    }
    return cov;
}

NumericDataset load_numeric_csv(const std::string& path, const CsvSchema& schema) {
    ParsedCsv csv = read_csv(path);
    const std::size_t n = csv.rows.size();

    auto numeric = [&](const std::string& colname, const char* varname, Eigen::VectorXd& out) {
        int ci = column_of(csv, colname);
        if (ci < 0)
            throw Error(ErrorKind::Schema, std::string("declared column '") + colname +
                                               "' for variable " + varname + " not found");
        out.resize(n);
        for (std::size_t r = 0; r < n; ++r) {
            try {
                out(static_cast<Eigen::Index>(r)) = std::stod(csv.rows[r][ci]);
            } catch (...) {
                throw Error(ErrorKind::Ingestion, std::string("non-numeric value for ") + varname +
                                                      " in row " + std::to_string(r + 2));
            }
        }
    };

    NumericDataset data;
    numeric(schema.x, "x", data.x);
    numeric(schema.z, "z", data.z);
    numeric(schema.w, "w", data.w);
    numeric(schema.y, "y", data.y);
    if (!schema.u.empty() && column_of(csv, schema.u) >= 0) {
        Eigen::VectorXd u;
        numeric(schema.u, "u", u);
        data.u = std::move(u);
    }
    return data;
}

NumericOutcomeDataset load_numeric_outcome_csv(const std::string& path, const CsvSchema& schema) {
    ParsedCsv csv = read_csv(path);
    const std::size_t n = csv.rows.size();

    auto levels = [&](const std::string& colname, const char* varname, std::vector<int>& out,
                      int& card) {
        int ci = column_of(csv, colname);
        if (ci < 0)
            throw Error(ErrorKind::Schema, std::string("declared column '") + colname +
                                               "' for variable " + varname + " not found");
        std::vector<std::string> cells(n);
        for (std::size_t r = 0; r < n; ++r) cells[r] = csv.rows[r][ci];
        LevelMap lm = build_level_map(cells);
        out.resize(n);
        for (std::size_t r = 0; r < n; ++r) out[r] = lm.index.at(cells[r]);
        card = static_cast<int>(lm.labels.size());
    };

    NumericOutcomeDataset data;
    levels(schema.x, "x", data.x, data.card_x);
    levels(schema.z, "z", data.z, data.card_z);
    levels(schema.w, "w", data.w, data.card_w);

    int yi = column_of(csv, schema.y);
    if (yi < 0)
        throw Error(ErrorKind::Schema,
                    "declared column '" + schema.y + "' for variable y not found");
    data.y.resize(n);
    for (std::size_t r = 0; r < n; ++r) {
        try {
            data.y(static_cast<Eigen::Index>(r)) = std::stod(csv.rows[r][yi]);
        } catch (...) {
            throw Error(ErrorKind::Ingestion,
                        "non-numeric outcome value in row " + std::to_string(r + 2));
        }
    }
    return data;
}

} // namespace proxci
