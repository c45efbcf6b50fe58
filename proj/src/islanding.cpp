#include "adg/islanding.hpp"

#include <cmath>

namespace adg {

IslandedSubproblem::IslandedSubproblem(const HorizonInputs& in, int tau_abs)
    : in_(in), tau_abs_(tau_abs) {
    solver_settings_ = in.cfg.solver;
    build();
}

void IslandedSubproblem::build() {
    const auto& fleet = *in_.fleet;
    std::vector<LinExpr> e_links;
    if (!fleet.bess.empty()) {
        // One free starting-energy variable; multi-BESS couplings are not
        // representable by a single scalar and use the monolithic path.
        if (fleet.bess.size() > 1)
            throw ModelError("islanded subproblem expects at most one BESS");
        const auto& bs = fleet.bess[0];
        e_start_var_ = prog_.add_var("e_start", bs.e_lo(), bs.e_hi());
        e_links.push_back(LinExpr::var(e_start_var_));
    }
    cost_expr_ = build_islanded_block(prog_, in_, tau_abs_, e_links, blk_,
                                      &curt_expr_, &shed_expr_);
}

std::optional<double> IslandedSubproblem::min_start_energy() {
    // Work on a copy: prog_ stays pristine for the cost variant.
    ConicProgram p = prog_;
    if (e_start_var_ < 0) {
        // No storage: feasibility is a property of the data alone.
        p.set_objective(LinExpr(0.0));
        SocpSolver solver(solver_settings_);
        auto sol = solver.solve(p.compile());
        if (sol.ok()) return 0.0;
        return std::nullopt;
    }
    p.set_objective(LinExpr::var(e_start_var_));
    SocpSolver solver(solver_settings_);
    auto sol = solver.solve(p.compile());
    if (!sol.ok()) return std::nullopt;
    return sol.x[e_start_var_];
}

IslandedSubproblem::Result IslandedSubproblem::solve_at(double e_start) {
    Result r;
    if (!compiled_cost_) {
        ConicProgram p = prog_;
        p.set_objective(cost_expr_);
        if (e_start_var_ >= 0)
            e_link_eq_ = p.add_eq(LinExpr::var(e_start_var_) - e_start,
                                  Family::islanding);
        compiled_cost_ = p.compile();
    }
    if (e_start_var_ >= 0)
        compiled_cost_->b[compiled_cost_->eq_row[e_link_eq_]] = e_start;

    SocpSolver solver(solver_settings_);
    auto sol = solver.solve(*compiled_cost_);
    r.status = sol.status;
    if (!sol.ok()) return r;
    r.feasible = true;
    r.cost = sol.objective;
    r.cost_curt = curt_expr_.value(sol.x);
    r.cost_shed = shed_expr_.value(sol.x);
    // With L = c'x + y'(Ax - b), dV/db = -y; the link row has b = e_start.
    if (e_start_var_ >= 0) r.dcost_de = -sol.y[e_link_eq_];

    const int H = in_.cfg.islanded_hours;
    if (!blk_.eb.empty()) {
        r.e_traj.resize(H);
        for (int s = 0; s < H; ++s) r.e_traj[s] = sol.x[blk_.eb[0][s]];
        for (int s = 0; s < H; ++s)
            r.comp_violation =
                std::max(r.comp_violation,
                         sol.x[blk_.pch[0][s]] * sol.x[blk_.pdis[0][s]]);
    }
    r.alpha.resize(blk_.alpha.size(), H);
    for (size_t li = 0; li < blk_.alpha.size(); ++li)
        for (int s = 0; s < H; ++s) {
            r.alpha(li, s) = sol.x[blk_.alpha[li][s]];
            r.alpha_min_seen = std::min(r.alpha_min_seen, r.alpha(li, s));
        }
    r.pg.resize(blk_.pg.size(), H);
    for (size_t u = 0; u < blk_.pg.size(); ++u)
        for (int s = 0; s < H; ++s) r.pg(u, s) = sol.x[blk_.pg[u][s]];
    return r;
}

bool IslandedSubproblem::feasible_at(double e_start) {
    const auto& fleet = *in_.fleet;
    if (fleet.bess.empty()) return min_start_energy().has_value();
    auto e_min = min_start_energy();
    return e_min && e_start >= *e_min - 1e-9;
}

std::vector<IslandingPrep> prepare_islanding(const HorizonInputs& in) {
    std::vector<IslandingPrep> preps;
    const bool has_bess = !in.fleet->bess.empty();
    const double e_hi = has_bess ? in.fleet->bess[0].e_hi() : 0.0;

    for (int tau = 0; tau < in.cfg.horizon; tau += in.cfg.islanding_stride) {
        IslandingPrep prep;
        prep.tau_offset = tau;
        IslandedSubproblem sub(in, in.cfg.t_mpc + tau);
        auto e_min = sub.min_start_energy();
        if (!e_min) {
            prep.feasible = false;
            preps.push_back(prep);
            continue;
        }
        prep.e_min = *e_min;
        if (!has_bess) {
            auto r = sub.solve_at(0.0);
            prep.cuts.push_back({0.0, r.cost, 0.0});
            preps.push_back(prep);
            continue;
        }
        if (tau == 0) {
            // Constant link: one evaluation at the realized energy.
            if (in.bess_e_start[0] >= prep.e_min - 1e-9) {
                auto r = sub.solve_at(in.bess_e_start[0]);
                if (r.feasible) prep.cuts.push_back({in.bess_e_start[0], r.cost, 0.0});
            } else {
                prep.feasible = false;
            }
            preps.push_back(prep);
            continue;
        }
        // Support the convex value function at a few energies spanning the
        // feasible interval; refinement adds cuts at the master's optimum.
        const double lo = prep.e_min;
        for (double frac : {0.0, 0.5, 1.0}) {
            const double e = lo + frac * (e_hi - lo);
            auto r = sub.solve_at(e);
            if (r.feasible) prep.cuts.push_back({e, r.cost, r.dcost_de});
        }
        preps.push_back(prep);
    }
    return preps;
}

}  // namespace adg
