#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "adg/common.hpp"

namespace adg {

/// Inverter-coupled generator (PV). Profiles are per-unit on the system
/// base and indexed by absolute time step.
struct PvUnit {
    int bus = 0;
    std::string name;
    std::vector<double> p_max_profile;  // forecast available power
    double p_rating = 0.0;              // panel rating, clamp for scenarios
    double q_min = 0.0, q_max = 0.0;    // grid-connected band from pf rule
    double s_rating = 0.0;              // apparent rating (islanded circle)
};

struct BessUnit {
    int bus = 0;
    std::string name;
    double e_cap = 0.0;          // pu*h
    double p_max = 0.0;          // pu
    double soc_min = 0.0, soc_max = 1.0;
    double eta = 0.95;           // per-direction efficiency
    double tan_phi_max = 0.484;  // reactive capability factor
    double e_initial = 0.0;      // pu*h

    double e_lo() const { return soc_min * e_cap; }
    double e_hi() const { return soc_max * e_cap; }
};

struct FlexLoad {
    int bus = 0;
    std::string name;
    std::vector<double> p_shift_profile;  // shiftable band, pu
    std::vector<double> f_history;        // applied factors for past steps
};

struct LoadPoint {
    int bus = 0;
    std::string name;
    std::vector<double> p_profile;  // pu
    double power_factor = 0.95;

    double tan_phi() const {
        return std::tan(std::acos(power_factor));
    }
};

struct DeviceFleet {
    std::vector<PvUnit> pv;
    std::vector<BessUnit> bess;
    std::vector<FlexLoad> flexload;
    std::vector<LoadPoint> load;
};

/// Energy after one step of charging/discharging:
/// e + (eta * p_ch - p_dis / eta) * dt. Units follow the inputs.
double bess_energy_step(double e_prev, double p_ch, double p_dis, double dt,
                        double eta);

/// Reactive capability |Q| cap as a function of the active operating point.
double bess_q_bound(double p_ch, double p_dis, double tan_phi_max);

/// Sum of past factors plus the planned ones; zero iff the shifted energy
/// balances out over the whole simulation.
double flexload_conservation_residual(const FlexLoad& flex,
                                      const std::vector<double>& planned);

/// Reactive headroom on the inverter circle at active output p_g.
double pv_islanded_q_cap(double p_g, double s_rating);

}  // namespace adg
