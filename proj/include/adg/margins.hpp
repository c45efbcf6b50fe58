#pragma once

#include <Eigen/Dense>

#include "adg/grid.hpp"

namespace adg {

/// Per-node / per-branch constraint tightenings for one horizon.
/// Rows are non-slack buses (bus id - 2) resp. branches (id - 1); columns
/// are horizon steps. All entries nonnegative.
struct UncertaintyMargins {
    Eigen::MatrixXd v_upper;  // (n_bus-1) x T
    Eigen::MatrixXd v_lower;
    Eigen::MatrixXd i_branch;  // n_branch x T

    static UncertaintyMargins zero(const GridTopology& topo, int horizon) {
        UncertaintyMargins m;
        m.v_upper = Eigen::MatrixXd::Zero(topo.n_bus() - 1, horizon);
        m.v_lower = Eigen::MatrixXd::Zero(topo.n_bus() - 1, horizon);
        m.i_branch = Eigen::MatrixXd::Zero(topo.n_branch(), horizon);
        return m;
    }

    double max_delta(const UncertaintyMargins& o) const {
        const double dv =
            std::max((v_upper - o.v_upper).cwiseAbs().maxCoeff(),
                     (v_lower - o.v_lower).cwiseAbs().maxCoeff());
        return std::max(dv, (i_branch - o.i_branch).cwiseAbs().maxCoeff());
    }
    double max_delta_v(const UncertaintyMargins& o) const {
        return std::max((v_upper - o.v_upper).cwiseAbs().maxCoeff(),
                        (v_lower - o.v_lower).cwiseAbs().maxCoeff());
    }
    double max_delta_i(const UncertaintyMargins& o) const {
        return (i_branch - o.i_branch).cwiseAbs().maxCoeff();
    }
};

}  // namespace adg
