#pragma once

#include <array>
#include <limits>
#include <optional>
#include <vector>

#include "adg/branch_and_bound.hpp"
#include "adg/conic_program.hpp"
#include "adg/devices.hpp"
#include "adg/grid.hpp"
#include "adg/margins.hpp"
#include "adg/power_flow.hpp"

namespace adg {

struct HorizonConfig {
    int t_mpc = 0;     // absolute index of the first horizon step
    int horizon = 24;  // steps
    double dt = 1.0;   // hours per step

    double v_max = 1.1, v_min = 0.9;
    double alpha_min = 0.1;  // minimum served fraction when islanded

    int islanded_hours = 24;
    int islanding_stride = 1;  // consider every k-th islanding start
    enum class Islanding { off, monolithic, decomposed };
    Islanding islanding = Islanding::decomposed;

    bool network_enabled = true;  // false: single-busbar toy problems
    bool presolve_redundant = true;

    enum class Complementarity { relaxed, binary_fallback, always_binary };
    Complementarity complementarity = Complementarity::binary_fallback;

    double inner_tol = 1e-5;  // p.u. voltage fixed-point tolerance
    int max_inner = 12;
    bool round_taps = true;

    // Tie-breaking prices that make otherwise-degenerate reactive and tap
    // dispatch unique (VAr provision losses, tap wear). Small against the
    // energy prices; do not change which dispatch is optimal, only which
    // of the equivalent optima is returned.
    double reactive_cost = 0.5;  // EUR/MVArh
    double tap_wear_cost = 0.05;  // EUR per tap-step-hour

    SolverSettings solver;
};

struct PriceSet {
    // EUR/MWh series indexed by absolute step; c_bid is EUR/MW per hour of
    // commitment.
    std::vector<double> c_buy, c_sell, c_bid;
    std::vector<double> c_curt_g;
    double c_curt_l_isl = 250.0;
    double f_isl = 0.1;

    /// Buying dearer than selling at every covered step is what rules out
    /// simultaneous import and export at the optimum; enforced on ingest.
    void validate(int from, int to) const;
};

struct SfcWorstCase {
    std::array<double, 4> up{0, 0, 0, 0};    // hours of full power per hour
    std::array<double, 4> down{0, 0, 0, 0};
};

struct FcProduct {
    enum class Kind { none, pfc, sfc, tfc_up, tfc_down };
    Kind kind = Kind::none;
    double bid_cap = std::numeric_limits<double>::infinity();  // pu
    double fixed_bid = -1.0;  // >= 0 pins the bid instead of optimizing it
    double dt1 = 0.25;        // PFC energy window, hours
    SfcWorstCase sfc;
    enum class Block { weekly, four_hour };
    Block block = Block::weekly;
    int block_start = 0;  // absolute step where a 4-hour block begins

    bool active() const { return kind != Kind::none; }
    bool in_block(int abs_step) const {
        if (block == Block::weekly) return true;
        return abs_step >= block_start && abs_step < block_start + 4;
    }
};

/// Everything one multi-period solve needs. Profiles inside the fleet are
/// absolute-step indexed and must cover t_mpc .. t_mpc+horizon+islanded_hours.
struct HorizonInputs {
    const GridTopology* topo = nullptr;
    const DeviceFleet* fleet = nullptr;
    PriceSet prices;
    FcProduct product;
    HorizonConfig cfg;
    std::vector<double> bess_e_start;   // pu*h at the start of t_mpc
    std::vector<double> flex_hist_sum;  // sum of applied factors before t_mpc

    void validate() const;
    double s_base_mw() const { return topo->s_base_kva / 1000.0; }
};

struct CostBreakdown {
    double curt_g = 0.0;
    double curt_g_isl = 0.0;
    double curt_l_isl = 0.0;
    double buy = 0.0;
    double sell_revenue = 0.0;
    double as_revenue = 0.0;
    double total() const {
        return curt_g + curt_g_isl + curt_l_isl + buy - sell_revenue - as_revenue;
    }
};

struct IslandedSummary {
    int tau_abs = 0;
    bool feasible = false;
    double e_start = 0.0;         // linked BESS energy, pu*h
    double cost = 0.0;            // EUR over the islanded window
    double alpha_min_seen = 1.0;  // smallest served fraction
    double comp_violation = 0.0;  // max pch*pdis over the window, pu^2
    Eigen::VectorXd e_traj;       // BESS energy trajectory (first unit)
};

struct DispatchPlan {
    int t_mpc = 0;
    int horizon = 0;
    // Rows: units, columns: horizon steps; per-unit quantities.
    Eigen::MatrixXd pg, qg;               // PV
    Eigen::MatrixXd pch, pdis, qb, eb;    // BESS
    Eigen::MatrixXd f;                    // flexible-load factors
    Eigen::VectorXd pbuy, psell, rho;
    double pbid = 0.0;
    double objective = 0.0;  // EUR
    CostBreakdown costs;
    Eigen::MatrixXcd v_ac;    // n_bus x T, from the final AC projection
    Eigen::MatrixXcd i_br_ac; // n_branch x T
    std::vector<IslandedSummary> islanded;
    SolverStats solver_stats;
    int inner_iterations = 0;
    bool inner_converged = false;
    std::vector<double> inner_dv_history;
};

struct SolveDiagnosis {
    SolveStatus status = SolveStatus::optimal;
    // Family -> required elastic slack, for infeasible programs.
    std::vector<std::pair<Family, double>> elastic_slacks;
    std::string message;
};

struct HorizonResult {
    bool feasible = false;
    DispatchPlan plan;
    SolveDiagnosis diagnosis;
    Eigen::MatrixXcd v_bar;  // converged linearization voltages
};

/// A convex value-function cut for one islanding start (decomposed mode):
/// islanded cost >= value + slope * (E_link - e_point).
struct IslandingCut {
    double e_point = 0.0;
    double value = 0.0;
    double slope = 0.0;
};

struct IslandingPrep {
    int tau_offset = 0;  // steps after t_mpc
    double e_min = 0.0;  // smallest feasible linked energy, pu*h
    bool feasible = true;
    std::vector<IslandingCut> cuts;
};

/// Variable table of one islanded block (start tau, islanded_hours steps).
struct IslBlockVars {
    int tau_offset = 0;
    std::vector<std::vector<int>> pg, qg;          // [pv][s]
    std::vector<std::vector<int>> pch, pdis, qb, eb;  // [bess][s]
    std::vector<std::vector<int>> alpha;           // [load][s]
};

/// One islanded block: balance, network and DER constraints duplicated over
/// the islanded variable set for islanded_hours steps from tau_abs, with
/// the OLTC inactive, exchange forced to zero and the first BESS bus
/// forming the island voltage. e_links supplies, per BESS, the linked
/// energy at the islanding instant. Returns the block's cost expression
/// (EUR); the two addends are also exposed separately when requested.
LinExpr build_islanded_block(ConicProgram& prog, const HorizonInputs& in,
                             int tau_abs, const std::vector<LinExpr>& e_links,
                             IslBlockVars& blk, LinExpr* curt_cost_out = nullptr,
                             LinExpr* shed_cost_out = nullptr);

/// Assembles the multi-period program for one MPC step. The add_* members
/// mirror the constraint groups of the formulation; build() runs them in
/// order. Margins and v_bar stay fixed for the lifetime of one instance.
class HorizonBuilder {
public:
    HorizonBuilder(const HorizonInputs& in, const UncertaintyMargins& margins,
                   const Eigen::MatrixXcd& v_bar);

    /// Full assembly. Decomposed islanding needs the per-tau preparation
    /// (bounds and value cuts) computed by the caller.
    void build(const std::vector<IslandingPrep>* preps = nullptr);

    void add_variables();
    void add_power_balance();
    void add_der_constraints();
    void add_network_constraints();
    void add_fc_constraints();
    /// One islanded block with full constraint duplication, linked to the
    /// scheduled BESS energy at tau (monolithic instantiation).
    void add_islanding_block(int tau_offset);
    /// Decomposed instantiation: energy lower bound plus value cuts.
    void add_islanding_bound(const IslandingPrep& prep);
    void build_objective();

    ConicProgram& program() { return prog_; }
    const ConicProgram& program() const { return prog_; }

    /// Fix all taps (used after ex-post rounding).
    void fix_taps(const Eigen::VectorXd& taps);

    DispatchPlan extract(const Solution& sol) const;
    /// (bess, t, tau_offset or -1 for grid) triples violating
    /// charge/discharge complementarity.
    struct CompViolation {
        int bess, t, tau_offset;
    };
    std::vector<CompViolation> complementarity_violations(const Solution& sol,
                                                          double tol) const;
    void add_complementarity_binaries(const std::vector<CompViolation>& pairs);

    // Numeric injections implied by a plan (for the AC projection).
    InjectionProfile injections_at(const DispatchPlan& plan, int t) const;

    LinExpr bess_energy_link_expr(int bess, int tau_offset) const;
    const std::vector<int>& eta_islanding() const { return eta_isl_; }
    /// Add one refinement cut for an islanding start (decomposed mode).
    void add_islanding_cut(int prep_index, const IslandingCut& cut);

    /// Substation complex power, linearized at v_bar (exact at the BFS
    /// fixed point). Used for the exchange tie and the transformer cap.
    LinExpr sub_p_expr(int t) const;
    LinExpr sub_q_expr(int t) const;
    /// Optional cap on substation apparent power (transformer study).
    void set_substation_cap(double s_cap_pu) { sub_cap_ = s_cap_pu; }

    const HorizonInputs& inputs() const { return in_; }

private:
    double eur(const std::vector<double>& price, int abs_step) const;

    const HorizonInputs& in_;
    const UncertaintyMargins& margins_;
    Eigen::MatrixXcd v_bar_;
    ConicProgram prog_;
    double sub_cap_ = std::numeric_limits<double>::infinity();

public:
    // Grid-connected variable table, [unit][t].
    std::vector<std::vector<int>> pg_, qg_;
    std::vector<std::vector<int>> pch_, pdis_, qb_, eb_;
    std::vector<std::vector<int>> f_;
    std::vector<int> pbuy_, psell_, rho_;
    int pbid_ = -1;
    // FC shadow energies and min-term auxiliaries, [bess][t] / [bess][t][theta].
    std::vector<std::vector<int>> m2p_, m2m_, m3_;
    std::vector<std::vector<std::array<int, 4>>> e2p_, e2m_, e3_;
    std::vector<IslBlockVars> isl_blocks_;

private:
    // Injection expressions per t (index bus-1); slack entry unused.
    std::vector<std::vector<LinExpr>> pinj_, qinj_;
    // Injection current expressions per t, index = non-slack column.
    std::vector<std::vector<ComplexExpr>> iinj_;
    std::vector<int> eta_isl_;          // per decomposed islanding start
    std::vector<int> eta_prep_tau_;     // tau offsets matching eta_isl_
    LinExpr isl_curt_cost_, isl_shed_cost_;  // monolithic blocks (EUR)
    double isl_const_cost_ = 0.0;       // tau=0 decomposed cost (constant)
};

/// Solve the assembled program; on infeasibility re-solves with elastic
/// slacks to attribute the failure to constraint families.
HorizonResult solve_horizon(HorizonBuilder& builder, const HorizonInputs& in);

/// Alternate the linearized multi-period solve with full AC sweeps until
/// the linearization voltages reach their fixed point; then round taps and
/// re-verify, and enforce charge/discharge complementarity if violated.
HorizonResult inner_feasibility_loop(const HorizonInputs& in,
                                     const UncertaintyMargins& margins);

}  // namespace adg
