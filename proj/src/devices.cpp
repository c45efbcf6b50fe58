#include "adg/devices.hpp"

#include <algorithm>
#include <numeric>

namespace adg {

double bess_energy_step(double e_prev, double p_ch, double p_dis, double dt,
                        double eta) {
    return e_prev + (eta * p_ch - p_dis / eta) * dt;
}

double bess_q_bound(double p_ch, double p_dis, double tan_phi_max) {
    return std::max(p_ch, p_dis) * tan_phi_max;
}

double flexload_conservation_residual(const FlexLoad& flex,
                                      const std::vector<double>& planned) {
    const double past =
        std::accumulate(flex.f_history.begin(), flex.f_history.end(), 0.0);
    const double plan = std::accumulate(planned.begin(), planned.end(), 0.0);
    return past + plan;
}

double pv_islanded_q_cap(double p_g, double s_rating) {
    if (p_g > s_rating)
        throw ModelError("pv active output exceeds apparent rating");
    return std::sqrt(s_rating * s_rating - p_g * p_g);
}

}  // namespace adg
