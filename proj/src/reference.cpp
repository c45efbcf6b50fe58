#include "adg/reference.hpp"

#include <cmath>
#include <cstdint>
#include <sstream>

namespace adg {

namespace {

constexpr double kSBaseKva = 500.0;
constexpr double kZBaseOhm = 0.4 * 0.4 * 1000.0 / kSBaseKva;  // 0.32

// Cable data from the CIGRE LV benchmark, ohm/km.
constexpr double kUg1R = 0.162, kUg1X = 0.0832;
constexpr double kUg3R = 0.822, kUg3X = 0.0847;

std::string branch_json(int id, int from, int to, double r_ohm_km,
                        double x_ohm_km, double len_m) {
    const double r = r_ohm_km * len_m * 1e-3 / kZBaseOhm;
    const double x = x_ohm_km * len_m * 1e-3 / kZBaseOhm;
    std::ostringstream os;
    os << "    {\"id\":" << id << ",\"from\":" << from << ",\"to\":" << to
       << ",\"r_pu\":" << r << ",\"x_pu\":" << x << ",\"i_max_pu\":1.0}";
    return os.str();
}

// Deterministic [0,1) stream (splitmix64).
double hash01(uint64_t k) {
    uint64_t z = k + 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    z = z ^ (z >> 31);
    return static_cast<double>(z >> 11) * 0x1.0p-53;
}

double bump(double h, double center, double width) {
    const double d = (h - center) / width;
    return std::exp(-d * d);
}

// Residential double-peak shape, peak value 1.
double load_shape(double h) {
    const double s = 0.40 + 0.20 * bump(h, 7.5, 2.0) + 0.52 * bump(h, 19.0, 2.6);
    return s / 1.0;
}

double clear_sky(double h) {
    if (h < 6.5 || h > 19.0) return 0.0;
    return std::pow(std::sin(M_PI * (h - 6.5) / 12.5), 1.35);
}

double pv_day_factor(int day) {
    return 0.55 + 0.40 * hash01(1000 + day);
}

}  // namespace

std::string reference_topology_json() {
    std::ostringstream os;
    os << "{\n"
       << "  \"meta\": \"CIGRE European LV residential benchmark feeder "
          "(TF C6.04.02); bus 1 = 20 kV slack, bus k = R(k-1)\",\n"
       << "  \"s_base_kva\": 500.0,\n"
       << "  \"v_base_kv\": 0.4,\n"
       << "  \"buses\": [\n"
       << "    {\"id\":1,\"kind\":\"slack\",\"base_kv\":20.0},\n";
    // Bus kinds: load buses carry the CIGRE service connections.
    const bool has_load[20] = {false, false, true,  false, false, false,
                               false, false, false, false, false, false,
                               true,  false, false, false, true,  true,
                               true,  true};
    for (int id = 2; id <= 19; ++id)
        os << "    {\"id\":" << id << ",\"kind\":\""
           << (has_load[id] ? "load" : "junction") << "\"}"
           << (id < 19 ? ",\n" : "\n");
    os << "  ],\n  \"branches\": [\n";
    // 20/0.4 kV 500 kVA transformer: 4% impedance, X/R = 4.
    os << "    {\"id\":1,\"from\":1,\"to\":2,\"r_pu\":0.0097,\"x_pu\":0.0388,"
          "\"i_max_pu\":1.0},\n";
    int id = 2;
    // Trunk R1..R10 in UG1, 35 m spans.
    for (int b = 2; b <= 10; ++b, ++id)
        os << branch_json(id, b, b + 1, kUg1R, kUg1X, 35.0) << ",\n";
    // Service connections in UG3.
    os << branch_json(id++, 4, 12, kUg3R, kUg3X, 30.0) << ",\n";   // R3-R11
    os << branch_json(id++, 5, 13, kUg3R, kUg3X, 35.0) << ",\n";   // R4-R12
    os << branch_json(id++, 13, 14, kUg3R, kUg3X, 35.0) << ",\n";  // R12-R13
    os << branch_json(id++, 14, 15, kUg3R, kUg3X, 35.0) << ",\n";  // R13-R14
    os << branch_json(id++, 15, 16, kUg3R, kUg3X, 30.0) << ",\n";  // R14-R15
    os << branch_json(id++, 7, 17, kUg3R, kUg3X, 30.0) << ",\n";   // R6-R16
    os << branch_json(id++, 10, 18, kUg3R, kUg3X, 30.0) << ",\n";  // R9-R17
    os << branch_json(id++, 11, 19, kUg3R, kUg3X, 30.0) << "\n";   // R10-R18
    os << "  ],\n"
       << "  \"oltc\": {\"step_pu\": 0.00625, \"min\": -4, \"max\": 4, "
          "\"v_slack_pu\": 1.0}\n"
       << "}\n";
    return os.str();
}

GridTopology make_reference_topology() {
    return load_topology(reference_topology_json());
}

DeviceFleet make_reference_fleet(const GridTopology& topo,
                                 const ReferenceFleetOptions& o) {
    const int steps = o.days * 24 + o.lookahead_hours;
    DeviceFleet fleet;

    // CIGRE service loads: (bus, S_max kVA); pf 0.95.
    const std::pair<int, double> loads[] = {{2, 200.0}, {12, 15.0}, {16, 52.0},
                                            {17, 55.0}, {18, 35.0}, {19, 47.0}};
    const double pf = 0.95;
    double total_peak_kw = 0.0;
    for (const auto& [bus, s_max] : loads)
        total_peak_kw += s_max * pf * o.load_scale;

    for (const auto& [bus, s_max] : loads) {
        LoadPoint lp;
        lp.bus = bus;
        lp.name = "load_" + std::to_string(bus);
        lp.power_factor = pf;
        lp.p_profile.resize(steps);
        const double peak = topo.kw_to_pu(s_max * pf * o.load_scale);
        for (int t = 0; t < steps; ++t) {
            const int day = t / 24;
            const double h = t % 24;
            const double weekly = 1.0 - 0.05 * std::cos(2.0 * M_PI * day / 7.0);
            const double jitter = 1.0 + 0.05 * (hash01(bus * 7919 + t) - 0.5);
            lp.p_profile[t] = peak * load_shape(h) * weekly * jitter;
        }
        fleet.load.push_back(std::move(lp));
    }

    // PV shares of total peak load at the benchmark buses.
    const std::pair<int, double> pv_spec[] = {
        {12, 0.35}, {16, 0.25}, {18, 0.30}, {19, 0.45}};
    const double tan_band = std::tan(std::acos(o.pv_pf_min));
    for (const auto& [bus, share] : pv_spec) {
        PvUnit pv;
        pv.bus = bus;
        pv.name = "pv_" + std::to_string(bus);
        pv.p_rating = topo.kw_to_pu(share * total_peak_kw * o.pv_scale);
        pv.s_rating = pv.p_rating;
        pv.q_min = -tan_band * pv.p_rating;
        pv.q_max = tan_band * pv.p_rating;
        pv.p_max_profile.resize(steps);
        for (int t = 0; t < steps; ++t) {
            const int day = t / 24;
            const double h = t % 24;
            pv.p_max_profile[t] = pv.p_rating * clear_sky(h) * pv_day_factor(day);
        }
        fleet.pv.push_back(std::move(pv));
    }

    // Flexible loads: 5 kW shiftable band at R16..R18.
    for (int bus : {17, 18, 19}) {
        FlexLoad fl;
        fl.bus = bus;
        fl.name = "flex_" + std::to_string(bus);
        fl.p_shift_profile.assign(steps, topo.kw_to_pu(5.0 * o.load_scale));
        fleet.flexload.push_back(std::move(fl));
    }

    BessUnit bess;
    bess.bus = 2;
    bess.name = "bess_2";
    bess.e_cap = topo.kwh_to_puh(o.bess_e_cap_kwh);
    bess.p_max = topo.kw_to_pu(o.bess_p_max_kw);
    bess.soc_min = o.bess_soc_min;
    bess.soc_max = o.bess_soc_max;
    bess.eta = o.bess_eta;
    bess.e_initial = o.bess_e_init_frac * bess.e_cap;
    fleet.bess.push_back(bess);

    return fleet;
}

std::vector<std::vector<double>> make_reference_pv_realized(
    const DeviceFleet& fleet, const ReferenceFleetOptions& o) {
    std::vector<std::vector<double>> realized(fleet.pv.size());
    for (size_t u = 0; u < fleet.pv.size(); ++u) {
        const auto& pv = fleet.pv[u];
        realized[u].resize(pv.p_max_profile.size());
        for (size_t t = 0; t < pv.p_max_profile.size(); ++t) {
            const double wiggle =
                0.18 * std::sin(0.73 * static_cast<double>(t) + 1.3 + 0.5 * u);
            realized[u][t] = std::clamp(pv.p_max_profile[t] * (1.0 + wiggle),
                                        0.0, pv.p_rating);
        }
    }
    return realized;
}

}  // namespace adg
