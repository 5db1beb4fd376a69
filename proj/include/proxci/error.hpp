#pragma once

#include <stdexcept>
#include <string>

namespace proxci {

// Failure categories. The CLI maps kinds to exit codes: input/contract
// problems exit 2, numerical/rank problems exit 3.
enum class ErrorKind {
    Schema,             // malformed input description (missing column, bad JSON)
    Ingestion,          // unreadable or empty input data
    DegenerateVariable, // a variable with a single observed level
    SparseCell,         // empty conditioning cell
    Dimension,          // cardinality requirements not met
    Support,            // zero-probability cell at population level
    Constraint,         // fixture/model constraint infeasible
    Config,             // invalid option combination
    RankCondition,      // singular / ill-conditioned matrix
    Coarsening,         // no coarsening achieves invertibility
    Numeric             // quadrature failure, non-convergence
};

class Error : public std::runtime_error {
  public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const { return kind_; }

    // true for problems with the input rather than with the numerics
    bool is_validation() const {
        switch (kind_) {
            case ErrorKind::Schema:
            case ErrorKind::Ingestion:
            case ErrorKind::DegenerateVariable:
            case ErrorKind::SparseCell:
            case ErrorKind::Dimension:
            case ErrorKind::Support:
            case ErrorKind::Constraint:
            case ErrorKind::Config:
                return true;
            default:
                return false;
        }
    }

  private:
    ErrorKind kind_;
};

inline const char* to_string(ErrorKind k) {
    switch (k) {
        case ErrorKind::Schema: return "schema";
        case ErrorKind::Ingestion: return "ingestion";
        case ErrorKind::DegenerateVariable: return "degenerate-variable";
        case ErrorKind::SparseCell: return "sparse-cell";
        case ErrorKind::Dimension: return "dimension";
        case ErrorKind::Support: return "support";
        case ErrorKind::Constraint: return "constraint";
        case ErrorKind::Config: return "config";
        case ErrorKind::RankCondition: return "rank-condition";
        case ErrorKind::Coarsening: return "coarsening";
        case ErrorKind::Numeric: return "numeric";
    }
    return "unknown";
}

} // namespace proxci
