#pragma once

#include <optional>

#include "adg/opf.hpp"

namespace adg {

/// Standalone islanded-operation problem for one islanding start: 24 hours
/// of balance/network/DER constraints over the islanded variable set, with
/// the starting BESS energy as the single coupling parameter. Used directly
/// by the islanding sweep and the sizing searches, and by the decomposed
/// master formulation through min_start_energy() and value cuts.
class IslandedSubproblem {
public:
    IslandedSubproblem(const HorizonInputs& in, int tau_abs);

    struct Result {
        bool feasible = false;
        double cost = 0.0;         // EUR over the islanded window
        double cost_curt = 0.0;    // generation-curtailment part
        double cost_shed = 0.0;    // load-shedding part
        double dcost_de = 0.0;     // subgradient wrt starting energy
        double alpha_min_seen = 1.0;
        double comp_violation = 0.0;  // max pch*pdis over the window
        Eigen::VectorXd e_traj;    // first BESS unit, pu*h
        Eigen::MatrixXd alpha;     // [load][s]
        Eigen::MatrixXd pg;        // [pv][s]
        SolveStatus status = SolveStatus::optimal;
    };

    /// Smallest starting energy (per the single linked BESS) keeping the
    /// islanded window feasible; nullopt if infeasible at every level.
    std::optional<double> min_start_energy();

    /// Minimum islanded cost for a given starting energy.
    Result solve_at(double e_start);

    /// Feasibility only (used by sizing searches).
    bool feasible_at(double e_start);

    int tau_abs() const { return tau_abs_; }

private:
    void build();

    const HorizonInputs& in_;
    int tau_abs_ = 0;
    ConicProgram prog_;
    IslBlockVars blk_;
    int e_start_var_ = -1;
    int e_link_eq_ = -1;  // equality pinning e_start (dual gives the slope)
    LinExpr cost_expr_, curt_expr_, shed_expr_;
    std::optional<CompiledProblem> compiled_cost_;  // b-patched per solve
    SolverSettings solver_settings_;
};

/// Per-tau preparation for the decomposed master: smallest feasible linked
/// energy and an initial set of value-function cuts.
std::vector<IslandingPrep> prepare_islanding(const HorizonInputs& in);

}  // namespace adg
