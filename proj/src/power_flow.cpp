#include "adg/power_flow.hpp"

#include <cmath>

namespace adg {

void backward_sweep(const GridTopology& topo, const InjectionProfile& inj,
                    const VoltageProfile& volt, Eigen::VectorXcd& i_inj,
                    Eigen::VectorXcd& i_br) {
    const int n = topo.n_bus();
    i_inj.resize(n);
    Eigen::VectorXcd i_nonslack(n - 1);
    for (int bus = 2; bus <= n; ++bus) {
        const Complex v = volt.v[bus - 1];
        if (std::abs(v) < 1e-12)
            throw ModelError("backward sweep: zero voltage at bus " +
                             std::to_string(bus));
        const Complex s(inj.p[bus - 1], inj.q[bus - 1]);
        const Complex i = std::conj(s / v);
        i_inj[bus - 1] = i;
        i_nonslack[topo.col(bus)] = i;
    }
    i_br = topo.bibc.cast<Complex>() * i_nonslack;
    i_inj[0] = -i_nonslack.sum();
}

VoltageProfile forward_sweep(const GridTopology& topo,
                             const Eigen::VectorXcd& i_br, double tap) {
    if (tap < topo.oltc.tap_min - 1e-9 || tap > topo.oltc.tap_max + 1e-9)
        throw ModelError("tap " + std::to_string(tap) + " outside range");
    const Complex v0 = topo.oltc.v_slack - Complex(topo.oltc.step_pu * tap, 0.0);
    VoltageProfile out;
    out.v.resize(topo.n_bus());
    out.v[0] = v0;
    const Eigen::VectorXcd dv = topo.bcbv * i_br;
    for (int bus = 2; bus <= topo.n_bus(); ++bus)
        out.v[bus - 1] = v0 + dv[topo.col(bus)];
    return out;
}

FlowState solve_bfs(const GridTopology& topo, const InjectionProfile& inj,
                    double tap, const PfSettings& settings) {
    FlowState st;
    const Complex v0 = topo.oltc.v_slack - Complex(topo.oltc.step_pu * tap, 0.0);
    st.voltages.v = Eigen::VectorXcd::Constant(topo.n_bus(), v0);
    for (int it = 1; it <= settings.max_iterations; ++it) {
        backward_sweep(topo, inj, st.voltages, st.i_inj, st.i_br);
        VoltageProfile next = forward_sweep(topo, st.i_br, tap);
        const double dv = (next.v - st.voltages.v).cwiseAbs().maxCoeff();
        st.voltages = next;
        st.dv_trace.push_back(dv);
        st.iterations = it;
        if (!std::isfinite(dv)) break;
        if (dv < settings.tolerance) {
            // One more backward pass so currents match the final voltages.
            backward_sweep(topo, inj, st.voltages, st.i_inj, st.i_br);
            st.converged = true;
            break;
        }
    }
    return st;
}

LinearNetworkModel::LinearNetworkModel(const GridTopology& topo,
                                       const Eigen::VectorXcd& v_bar)
    : topo_(&topo) {
    const int n = topo.n_bus();
    a_.resize(n);
    a_[0] = Complex(0.0, 0.0);
    for (int bus = 2; bus <= n; ++bus) {
        const Complex v = v_bar[bus - 1];
        if (std::abs(v) < 1e-12)
            throw ModelError("linearization: zero magnitude in v_bar at bus " +
                             std::to_string(bus));
        a_[bus - 1] = 1.0 / std::conj(v);
    }
}

void LinearNetworkModel::evaluate(const InjectionProfile& inj, double tap,
                                  Eigen::VectorXcd& v,
                                  Eigen::VectorXcd& i_br) const {
    const auto& t = *topo_;
    Eigen::VectorXcd i_nonslack(t.n_bus() - 1);
    for (int bus = 2; bus <= t.n_bus(); ++bus)
        i_nonslack[t.col(bus)] =
            a_[bus - 1] * Complex(inj.p[bus - 1], -inj.q[bus - 1]);
    i_br = t.bibc.cast<Complex>() * i_nonslack;
    const Complex v0 = t.oltc.v_slack - Complex(t.oltc.step_pu * tap, 0.0);
    const Eigen::VectorXcd dv = t.r_sens * i_nonslack;
    v.resize(t.n_bus());
    v[0] = v0;
    for (int bus = 2; bus <= t.n_bus(); ++bus)
        v[bus - 1] = v0 + dv[t.col(bus)];
}

}  // namespace adg
