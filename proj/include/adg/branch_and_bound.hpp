#pragma once

#include <vector>

#include "adg/socp_solver.hpp"

namespace adg {

/// Depth-first branch and bound over the binary variables of a conic
/// program, using the continuous SOCP relaxation for node bounds. Node
/// subproblems only differ in the bound rows of the binary variables, so
/// the compiled problem is patched in place instead of recompiled.
class BnbSolver : public SolverInterface {
public:
    explicit BnbSolver(SolverSettings s = {}) : relax_(s) {}

    Capabilities capabilities() const override { return {true, true, true, true}; }

    /// Binary variable indices must be supplied alongside the compiled
    /// problem (set `binaries`); each must have both bound rows present.
    Solution solve(const CompiledProblem& p) override;

    Solution solve_mixed(const CompiledProblem& p,
                         const std::vector<int>& binaries);

    int max_nodes = 20000;
    double int_tol = 1e-6;
    int nodes_explored = 0;

private:
    SocpSolver relax_;
};

}  // namespace adg
