#include "adg/branch_and_bound.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "adg/common.hpp"

namespace adg {

Solution BnbSolver::solve(const CompiledProblem& p) {
    return solve_mixed(p, {});
}

Solution BnbSolver::solve_mixed(const CompiledProblem& p,
                                const std::vector<int>& binaries) {
    if (binaries.empty()) return relax_.solve(p);
    for (int v : binaries)
        if (p.lb_row[v] < 0 || p.ub_row[v] < 0)
            throw ModelError("binary variable without bound rows");

    struct Node {
        std::vector<double> lb, ub;  // per binary
    };
    CompiledProblem work = p;
    const int nb = static_cast<int>(binaries.size());

    Node root;
    root.lb.assign(nb, 0.0);
    root.ub.assign(nb, 1.0);

    std::vector<Node> stack{root};
    Solution incumbent;
    incumbent.status = SolveStatus::primal_infeasible;
    double best_obj = std::numeric_limits<double>::infinity();
    nodes_explored = 0;
    bool any_limit = false;

    while (!stack.empty() && nodes_explored < max_nodes) {
        Node node = std::move(stack.back());
        stack.pop_back();
        ++nodes_explored;

        for (int k = 0; k < nb; ++k) {
            const int v = binaries[k];
            work.h[p.lb_row[v]] = -node.lb[k];  // -x <= -lb
            work.h[p.ub_row[v]] = node.ub[k];   //  x <= ub
        }
        Solution rel = relax_.solve(work);
        if (rel.status == SolveStatus::iteration_limit ||
            rel.status == SolveStatus::numerical_error) {
            any_limit = true;
            continue;
        }
        if (rel.status != SolveStatus::optimal) continue;  // pruned: infeasible
        if (rel.objective >= best_obj - 1e-9) continue;    // pruned: bound

        // Most fractional binary.
        int branch = -1;
        double worst = int_tol;
        for (int k = 0; k < nb; ++k) {
            const double val = rel.x[binaries[k]];
            const double frac = std::min(val - std::floor(val),
                                         std::ceil(val) - val);
            if (frac > worst) {
                worst = frac;
                branch = k;
            }
        }
        if (branch < 0) {
            best_obj = rel.objective;
            incumbent = rel;
            continue;
        }
        Node down = node, up = node;
        down.ub[branch] = 0.0;
        up.lb[branch] = 1.0;
        // Explore the side closer to the relaxation first.
        if (rel.x[binaries[branch]] > 0.5) {
            stack.push_back(std::move(down));
            stack.push_back(std::move(up));
        } else {
            stack.push_back(std::move(up));
            stack.push_back(std::move(down));
        }
    }

    if (incumbent.status == SolveStatus::optimal) return incumbent;
    if (nodes_explored >= max_nodes || any_limit) {
        incumbent.status = SolveStatus::iteration_limit;
        return incumbent;
    }
    return incumbent;  // proven infeasible
}

}  // namespace adg
