#pragma once

// Shared scenario fixtures for the horizon-problem tests.

#include <vector>

#include "adg/opf.hpp"
#include "adg/reference.hpp"

namespace adg::testing {

inline PriceSet flat_prices(int steps, double buy = 50.0, double sell = 40.0,
                            double bid = 15.0, double curt = 100.0) {
    PriceSet p;
    p.c_buy.assign(steps, buy);
    p.c_sell.assign(steps, sell);
    p.c_bid.assign(steps, bid);
    p.c_curt_g.assign(steps, curt);
    return p;
}

/// Two-bus toy grid used by the no-network tests (bus 2 hosts everything).
inline GridTopology toy_topology() {
    return load_topology(R"({
      "s_base_kva": 500.0, "v_base_kv": 0.4,
      "buses": [{"id":1,"kind":"slack"},{"id":2,"kind":"load"}],
      "branches": [{"id":1,"from":1,"to":2,"r_pu":0.001,"x_pu":0.002,"i_max_pu":10.0}],
      "oltc": {"step_pu":0.00625,"min":0,"max":0}
    })");
}

struct Scenario {
    GridTopology topo;
    DeviceFleet fleet;
    HorizonInputs inputs;

    void finalize() {
        inputs.topo = &topo;
        inputs.fleet = &fleet;
        inputs.bess_e_start.clear();
        for (const auto& b : fleet.bess) inputs.bess_e_start.push_back(b.e_initial);
        inputs.flex_hist_sum.assign(fleet.flexload.size(), 0.0);
    }
};

/// One BESS on the toy grid, nothing else. Profiles sized for `steps`.
inline Scenario bess_only_scenario(int steps, double e_cap_puh, double p_max_pu,
                                   double eta, double e_init_puh) {
    Scenario s;
    s.topo = toy_topology();
    BessUnit b;
    b.bus = 2;
    b.name = "bess";
    b.e_cap = e_cap_puh;
    b.p_max = p_max_pu;
    b.eta = eta;
    b.e_initial = e_init_puh;
    s.fleet.bess.push_back(b);
    s.inputs.prices = flat_prices(steps);
    s.inputs.cfg.horizon = steps;
    s.inputs.cfg.islanding = HorizonConfig::Islanding::off;
    s.inputs.cfg.network_enabled = false;
    s.finalize();
    return s;
}

/// Small network scenario on the reference feeder: one load, one PV, one
/// BESS, constant profiles, short horizon. Sized to solve in milliseconds.
inline Scenario small_grid_scenario(int steps, int islanded_hours = 6) {
    Scenario s;
    s.topo = make_reference_topology();
    const int len = steps + islanded_hours + 1;

    LoadPoint ld;
    ld.bus = 17;
    ld.name = "load_17";
    ld.power_factor = 0.95;
    ld.p_profile.assign(len, 0.12);  // 60 kW
    s.fleet.load.push_back(ld);

    PvUnit pv;
    pv.bus = 19;
    pv.name = "pv_19";
    pv.p_rating = 0.2;
    pv.s_rating = 0.2;
    pv.q_min = -0.07;
    pv.q_max = 0.07;
    pv.p_max_profile.assign(len, 0.0);
    for (int t = 0; t < len; ++t) {
        const int h = t % 24;
        if (h >= 8 && h <= 16) pv.p_max_profile[t] = 0.15;
    }
    s.fleet.pv.push_back(pv);

    BessUnit b;
    b.bus = 2;
    b.name = "bess";
    b.e_cap = 0.4;  // 200 kWh
    b.p_max = 0.4;
    b.eta = 0.95;
    b.e_initial = 0.3;
    s.fleet.bess.push_back(b);

    s.inputs.prices = flat_prices(len, 50.0, 40.0, 15.0, 100.0);
    // Mild slope plus an evening lift so the storage schedule is unique.
    for (int t = 0; t < len; ++t) {
        const int h = t % 24;
        s.inputs.prices.c_buy[t] += 0.5 * h;
        s.inputs.prices.c_sell[t] += 0.5 * h;
        if (h >= 18 && h <= 21) {
            s.inputs.prices.c_buy[t] += 20.0;
            s.inputs.prices.c_sell[t] += 20.0;
        }
    }
    s.inputs.cfg.horizon = steps;
    s.inputs.cfg.islanded_hours = islanded_hours;
    s.inputs.cfg.islanding = HorizonConfig::Islanding::off;
    s.finalize();
    return s;
}

inline UncertaintyMargins zero_margins(const GridTopology& topo, int T) {
    return UncertaintyMargins::zero(topo, T);
}

}  // namespace adg::testing
