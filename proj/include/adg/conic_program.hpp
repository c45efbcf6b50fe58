#pragma once

#include <Eigen/Sparse>
#include <limits>
#include <string>
#include <vector>

#include "adg/linexpr.hpp"

namespace adg {

/// Constraint families used for elastic infeasibility diagnosis.
enum class Family {
    balance,
    voltage_upper,
    voltage_lower,
    current,
    device,
    energy,
    reserve,
    islanding,
    other,
};

const char* family_name(Family f);

enum class VarKind { continuous, binary };

/// Standard-form conic problem:
///   min c'x   s.t.  A x = b,   G x + s = h,   s in K,
/// where K is the nonnegative orthant (first n_lp rows of G) followed by
/// second-order cones of the listed dimensions.
struct CompiledProblem {
    Eigen::SparseMatrix<double> A, G;
    Eigen::VectorXd b, h, c;
    double c0 = 0.0;  // objective constant
    int n_lp = 0;
    std::vector<int> soc_dims;

    // Row bookkeeping (set by ConicProgram::compile):
    // eq_row[i] is the row in A of equality constraint i, in add order.
    std::vector<int> eq_row;
    // lower/upper bound row in G per variable, -1 if unbounded on that side.
    std::vector<int> lb_row, ub_row;

    int num_vars() const { return static_cast<int>(c.size()); }
};

/// Incremental builder for a conic program. Keeps structured constraint
/// lists so the program can be transformed (elastic relaxation) and
/// recompiled.
class ConicProgram {
public:
    struct LinCon {
        LinExpr expr;  // expr <= 0  or  expr == 0
        Family family;
    };
    struct SocCon {
        LinExpr radius;            // ||args|| <= radius
        std::vector<LinExpr> args;
        Family family;
    };

    int add_var(const std::string& name, double lb, double ub,
                VarKind kind = VarKind::continuous);
    int num_vars() const { return static_cast<int>(names_.size()); }
    const std::string& var_name(int v) const { return names_[v]; }
    void set_bounds(int v, double lb, double ub);
    double lower_bound(int v) const { return lb_[v]; }
    double upper_bound(int v) const { return ub_[v]; }
    VarKind var_kind(int v) const { return kind_[v]; }
    const std::vector<int>& binary_vars() const { return binaries_; }

    /// expr == 0. Returns the equality's index (for dual lookup).
    int add_eq(LinExpr expr, Family family = Family::other);
    /// expr <= 0.
    void add_le(LinExpr expr, Family family = Family::other);
    /// lhs <= rhs.
    void add_le(LinExpr lhs, LinExpr rhs, Family family = Family::other) {
        add_le(std::move(lhs) - rhs, family);
    }
    /// ||args|| <= radius.
    void add_soc(LinExpr radius, std::vector<LinExpr> args,
                 Family family = Family::other);

    void set_objective(LinExpr obj) { objective_ = std::move(obj); }
    const LinExpr& objective() const { return objective_; }
    void add_objective_term(const LinExpr& t) { objective_ += t; }

    int num_eqs() const { return static_cast<int>(eqs_.size()); }
    int num_les() const { return static_cast<int>(les_.size()); }
    int num_socs() const { return static_cast<int>(socs_.size()); }
    const std::vector<LinCon>& equalities() const { return eqs_; }

    CompiledProblem compile() const;

    /// Copy of this program where every inequality and cone constraint of the
    /// given families gains a shared nonnegative slack (one per family) and
    /// the objective becomes the sum of slacks. Used to locate which
    /// constraint family makes a program infeasible.
    ConicProgram elastic_relaxation(const std::vector<Family>& families,
                                    std::vector<int>& slack_vars) const;

private:
    std::vector<std::string> names_;
    std::vector<double> lb_, ub_;
    std::vector<VarKind> kind_;
    std::vector<int> binaries_;
    std::vector<LinCon> eqs_, les_;
    std::vector<SocCon> socs_;
    LinExpr objective_;
};

}  // namespace adg
