#pragma once

#include <string>

#include "adg/devices.hpp"
#include "adg/grid.hpp"

namespace adg {

/// Reference network: the CIGRE European LV residential benchmark feeder
/// (CIGRE Task Force C6.04.02), 18 LV buses plus the 20 kV slack node.
/// Bus 1 is the MV slack, bus 2 the LV busbar (R1), buses 3..19 map to
/// R2..R18. Line parameters use the published UG1/UG3 cable data on a
/// 500 kVA / 0.4 kV base; the 20/0.4 kV transformer is branch 1 with 4%
/// impedance at X/R = 4. Cable ampacities default to 1 p.u. on the cable
/// base.
std::string reference_topology_json();

GridTopology make_reference_topology();

struct ReferenceFleetOptions {
    double load_scale = 1.0;
    double pv_scale = 1.0;
    double bess_e_cap_kwh = 484.0;
    double bess_p_max_kw = 484.0;
    double bess_eta = 0.95;
    double bess_soc_min = 0.0;
    double bess_soc_max = 1.0;
    double bess_e_init_frac = 0.8;
    double pv_pf_min = 0.9;  // grid-connected power-factor band
    int days = 3;            // length of generated profiles
    int lookahead_hours = 48;
};

/// Deterministic synthetic profiles standing in for the proprietary
/// measurement data: residential double-peak loads, clear-sky-shaped PV
/// with day-to-day variability, PV and flexible loads at the benchmark
/// buses, one BESS at the LV busbar.
DeviceFleet make_reference_fleet(const GridTopology& topo,
                                 const ReferenceFleetOptions& opts = {});

/// Realized PV availability series (per unit of the same fleet),
/// deviating deterministically from the forecast profiles.
std::vector<std::vector<double>> make_reference_pv_realized(
    const DeviceFleet& fleet, const ReferenceFleetOptions& opts = {});

}  // namespace adg
