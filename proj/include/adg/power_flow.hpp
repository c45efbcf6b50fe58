#pragma once

#include <Eigen/Dense>
#include <vector>

#include "adg/grid.hpp"

namespace adg {

/// Per-bus net injections for one time step, per-unit. Positive values
/// inject into the network; loads enter as negative injections. The slack
/// entry is ignored (its injection is an outcome, not an input).
struct InjectionProfile {
    Eigen::VectorXd p, q;  // size n_bus, index = bus id - 1
};

struct VoltageProfile {
    Eigen::VectorXcd v;  // size n_bus; slack entry is v_slack - step*tap
};

struct FlowState {
    Eigen::VectorXcd i_inj;  // per bus
    Eigen::VectorXcd i_br;   // per branch, positive = net export toward slack
    VoltageProfile voltages;
    int iterations = 0;
    bool converged = false;
    std::vector<double> dv_trace;  // max |dV| per iteration
};

struct PfSettings {
    double tolerance = 1e-8;  // per-unit voltage change
    int max_iterations = 100;
};

/// Current injections from powers and voltages: i_j = conj((p_j + i q_j) / v_j),
/// and branch currents i_br = bibc * i_inj over the non-slack buses.
/// The slack injection current balances the rest (plain KCL).
void backward_sweep(const GridTopology& topo, const InjectionProfile& inj,
                    const VoltageProfile& volt, Eigen::VectorXcd& i_inj,
                    Eigen::VectorXcd& i_br);

/// v_j = (v_slack - step*tap) + (bcbv * i_br)_j. With export-positive branch
/// currents the bcbv product is a voltage rise; pure load gives a sag.
VoltageProfile forward_sweep(const GridTopology& topo,
                             const Eigen::VectorXcd& i_br, double tap);

/// Full backward/forward sweep power flow from a flat start.
FlowState solve_bfs(const GridTopology& topo, const InjectionProfile& inj,
                    double tap, const PfSettings& settings = {});

/// Affine network model obtained from a single BFS sweep with the complex
/// voltages frozen at v_bar: injections map linearly to injection currents,
/// and voltages/branch currents are affine in those currents and the tap.
class LinearNetworkModel {
public:
    LinearNetworkModel(const GridTopology& topo, const Eigen::VectorXcd& v_bar);

    /// a_j = 1 / conj(v_bar_j): i_inj_j = a_j * (p_j - i q_j).
    const Eigen::VectorXcd& injection_coef() const { return a_; }
    const GridTopology& topology() const { return *topo_; }

    /// Evaluate the affine map at numeric injections (for tests and the
    /// fixed-point check). Returns voltages per bus and branch currents.
    void evaluate(const InjectionProfile& inj, double tap, Eigen::VectorXcd& v,
                  Eigen::VectorXcd& i_br) const;

private:
    const GridTopology* topo_;
    Eigen::VectorXcd a_;
};

}  // namespace adg
