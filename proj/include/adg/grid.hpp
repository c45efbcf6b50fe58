#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "adg/common.hpp"

namespace adg {

enum class BusKind { slack, load, junction };

struct Bus {
    int id = 0;  // contiguous from 1; bus 1 is the slack
    BusKind kind = BusKind::load;
    double base_kv = 0.0;
};

struct Branch {
    int id = 0;  // contiguous from 1
    int from = 0, to = 0;
    Complex z;            // per-unit impedance
    double i_max = 1.0;   // per-unit ampacity
};

struct OltcSpec {
    double step_pu = 0.00625;  // voltage change per tap
    int tap_min = -4, tap_max = 4;
    Complex v_slack{1.0, 0.0};
};

/// Radial network plus the BIBC/BCBV sensitivity matrices derived from it.
/// Immutable after construction; safe to share across threads.
struct GridTopology {
    std::vector<Bus> buses;
    std::vector<Branch> branches;  // oriented parent -> child
    OltcSpec oltc;
    double s_base_kva = 0.0;
    double v_base_kv = 0.0;

    // bibc(i, j) = 1 iff branch i lies on the slack->bus path of the j-th
    // non-slack bus. bcbv(j, i) carries that branch's complex impedance.
    Eigen::MatrixXd bibc;
    Eigen::MatrixXcd bcbv;
    Eigen::MatrixXcd r_sens;  // bcbv * bibc

    std::vector<int> parent;        // per bus id (1-based), 0 for slack
    std::vector<int> parent_branch; // branch id into each bus, 0 for slack
    std::vector<int> depth;         // path length from slack

    int n_bus() const { return static_cast<int>(buses.size()); }
    int n_branch() const { return static_cast<int>(branches.size()); }
    /// Column of a non-slack bus in bibc / r_sens (bus ids start at 1,
    /// slack is bus 1).
    int col(int bus_id) const { return bus_id - 2; }

    double kw_to_pu(double kw) const { return kw / s_base_kva; }
    double pu_to_kw(double pu) const { return pu * s_base_kva; }
    double kwh_to_puh(double kwh) const { return kwh / s_base_kva; }
    double puh_to_kwh(double puh) const { return puh * s_base_kva; }
};

/// Parse and validate a topology document (JSON text). All electrical
/// quantities in the document are already per-unit on the declared bases.
GridTopology load_topology(const std::string& json_text);

/// Derive (bibc, bcbv) for a validated radial tree.
void build_sensitivity_matrices(GridTopology& topo);

/// Voltage change at every non-slack bus for given branch currents,
/// computed by walking the tree path bus-by-bus (no matrices). Positive
/// branch current is net export toward the slack, so the returned value
/// is the rise added to the slack voltage.
Eigen::VectorXcd path_voltage_drop_oracle(const GridTopology& topo,
                                          const Eigen::VectorXcd& branch_currents);

}  // namespace adg
