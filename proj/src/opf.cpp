#include "adg/opf.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <sstream>

#include "adg/islanding.hpp"

namespace adg {

void PriceSet::validate(int from, int to) const {
    const size_t need = static_cast<size_t>(to);
    if (c_buy.size() < need || c_sell.size() < need || c_curt_g.size() < need)
        throw InputError("price series shorter than the requested window");
    for (int t = from; t < to; ++t)
        if (!(c_sell[t] < c_buy[t]))
            throw InputError("c_sell must be strictly below c_buy (step " +
                             std::to_string(t) + ")");
}

void HorizonInputs::validate() const {
    if (!topo || !fleet) throw InputError("horizon inputs missing grid or fleet");
    if (cfg.horizon < 1 || cfg.dt <= 0.0)
        throw InputError("bad horizon configuration");
    auto check_bus = [&](int bus, const std::string& name) {
        if (bus < 2 || bus > topo->n_bus())
            throw InputError("device '" + name +
                             "' sits at unknown or slack bus " +
                             std::to_string(bus));
    };
    for (const auto& d : fleet->pv) check_bus(d.bus, d.name);
    for (const auto& d : fleet->bess) check_bus(d.bus, d.name);
    for (const auto& d : fleet->flexload) check_bus(d.bus, d.name);
    for (const auto& d : fleet->load) check_bus(d.bus, d.name);
    const int last_needed =
        cfg.t_mpc + cfg.horizon +
        (cfg.islanding != HorizonConfig::Islanding::off ? cfg.islanded_hours : 0);
    for (const auto& pv : fleet->pv)
        if (static_cast<int>(pv.p_max_profile.size()) < last_needed)
            throw InputError("islanded horizon exceeds available forecast data (pv " +
                             pv.name + ")");
    for (const auto& ld : fleet->load)
        if (static_cast<int>(ld.p_profile.size()) < last_needed)
            throw InputError("islanded horizon exceeds available forecast data (load " +
                             ld.name + ")");
    for (const auto& fl : fleet->flexload)
        if (static_cast<int>(fl.p_shift_profile.size()) < cfg.t_mpc + cfg.horizon)
            throw InputError("flexload profile too short");
    if (bess_e_start.size() != fleet->bess.size())
        throw InputError("bess_e_start size mismatch");
    if (flex_hist_sum.size() != fleet->flexload.size())
        throw InputError("flex_hist_sum size mismatch");
    prices.validate(cfg.t_mpc, last_needed);
    if (product.active() &&
        static_cast<int>(prices.c_bid.size()) < cfg.t_mpc + cfg.horizon)
        throw InputError("c_bid series shorter than the horizon");
    if (product.kind == FcProduct::Kind::sfc) {
        for (double v : product.sfc.up)
            if (v < 0.0 || v > cfg.dt + 1e-12)
                throw InputError("sfc worst-case delivery time outside [0, dt]");
        for (double v : product.sfc.down)
            if (v < 0.0 || v > cfg.dt + 1e-12)
                throw InputError("sfc worst-case delivery time outside [0, dt]");
    }
    if (product.kind == FcProduct::Kind::tfc_up ||
        product.kind == FcProduct::Kind::tfc_down) {
        if (product.block == FcProduct::Block::four_hour) {
            if (product.block_start < cfg.t_mpc ||
                product.block_start + 4 > cfg.t_mpc + cfg.horizon)
                throw InputError("four_hour block outside horizon");
        }
    }
}

namespace {

/// Conservative per-bus bounds on |p_inj| and |q_inj| used to drop
/// provably slack voltage/current cones before they reach the solver.
struct InjectionBounds {
    // [bus-1][t-local]
    std::vector<std::vector<double>> pabs, qabs;
};

InjectionBounds grid_injection_bounds(const HorizonInputs& in) {
    const auto& fleet = *in.fleet;
    const int n = in.topo->n_bus();
    const int T = in.cfg.horizon;
    InjectionBounds b;
    b.pabs.assign(n, std::vector<double>(T, 0.0));
    b.qabs.assign(n, std::vector<double>(T, 0.0));
    for (int t = 0; t < T; ++t) {
        const int a = in.cfg.t_mpc + t;
        for (const auto& pv : fleet.pv) {
            b.pabs[pv.bus - 1][t] += pv.p_max_profile[a];
            b.qabs[pv.bus - 1][t] += std::max(std::abs(pv.q_min), std::abs(pv.q_max));
        }
        for (const auto& bs : fleet.bess) {
            b.pabs[bs.bus - 1][t] += bs.p_max;
            b.qabs[bs.bus - 1][t] += bs.p_max * bs.tan_phi_max;
        }
        for (const auto& ld : fleet.load) {
            b.pabs[ld.bus - 1][t] += ld.p_profile[a];
            b.qabs[ld.bus - 1][t] += ld.p_profile[a] * ld.tan_phi();
        }
        for (const auto& fl : fleet.flexload) {
            b.pabs[fl.bus - 1][t] += fl.p_shift_profile[a];
            b.qabs[fl.bus - 1][t] += fl.p_shift_profile[a] * 0.33;
        }
    }
    return b;
}

double load_tan_phi(const DeviceFleet& fleet, int bus) {
    for (const auto& ld : fleet.load)
        if (ld.bus == bus) return ld.tan_phi();
    return std::tan(std::acos(0.95));
}

}  // namespace

// ---------------------------------------------------------------------------
// Islanded block (shared between the monolithic master and the standalone
// subproblem).
// ---------------------------------------------------------------------------

LinExpr build_islanded_block(ConicProgram& prog, const HorizonInputs& in,
                             int tau_abs, const std::vector<LinExpr>& e_links,
                             IslBlockVars& blk, LinExpr* curt_cost_out,
                             LinExpr* shed_cost_out) {
    const auto& topo = *in.topo;
    const auto& fleet = *in.fleet;
    const auto& cfg = in.cfg;
    const int H = cfg.islanded_hours;

    const size_t last_needed = static_cast<size_t>(tau_abs + H);
    for (const auto& pv : fleet.pv)
        if (pv.p_max_profile.size() < last_needed)
            throw InputError(
                "islanded horizon exceeds available forecast data (pv " +
                pv.name + ")");
    for (const auto& ld : fleet.load)
        if (ld.p_profile.size() < last_needed)
            throw InputError(
                "islanded horizon exceeds available forecast data (load " +
                ld.name + ")");
    if (in.prices.c_curt_g.size() < last_needed)
        throw InputError("islanded horizon exceeds available price data");
    const int n = topo.n_bus();
    const double dt = cfg.dt;
    const double mw = in.s_base_mw();
    const auto F = Family::islanding;

    blk.tau_offset = tau_abs - cfg.t_mpc;
    auto tag = [&](const std::string& base, size_t u, int s) {
        return base + "_isl" + std::to_string(tau_abs) + "[" + std::to_string(u) +
               "][" + std::to_string(s) + "]";
    };

    blk.pg.assign(fleet.pv.size(), {});
    blk.qg.assign(fleet.pv.size(), {});
    blk.pch.assign(fleet.bess.size(), {});
    blk.pdis.assign(fleet.bess.size(), {});
    blk.qb.assign(fleet.bess.size(), {});
    blk.eb.assign(fleet.bess.size(), {});
    blk.alpha.assign(fleet.load.size(), {});

    for (size_t r = 0; r < fleet.pv.size(); ++r) {
        const auto& pv = fleet.pv[r];
        for (int s = 0; s < H; ++s) {
            const int a = tau_abs + s;
            blk.pg[r].push_back(
                prog.add_var(tag("pg", r, s), 0.0, pv.p_max_profile[a]));
            blk.qg[r].push_back(
                prog.add_var(tag("qg", r, s), -pv.s_rating, pv.s_rating));
            // Full inverter capability: apparent-power circle only.
            prog.add_soc(LinExpr(pv.s_rating),
                         {LinExpr::var(blk.pg[r][s]), LinExpr::var(blk.qg[r][s])},
                         F);
        }
    }
    for (size_t bi = 0; bi < fleet.bess.size(); ++bi) {
        const auto& bs = fleet.bess[bi];
        for (int s = 0; s < H; ++s) {
            blk.pch[bi].push_back(prog.add_var(tag("pch", bi, s), 0.0, bs.p_max));
            blk.pdis[bi].push_back(prog.add_var(tag("pdis", bi, s), 0.0, bs.p_max));
            blk.qb[bi].push_back(
                prog.add_var(tag("qb", bi, s), -bs.p_max, bs.p_max));
            blk.eb[bi].push_back(
                prog.add_var(tag("eb", bi, s), bs.e_lo(), bs.e_hi()));
            prog.add_soc(LinExpr(bs.p_max),
                         {LinExpr::var(blk.pch[bi][s]) - LinExpr::var(blk.pdis[bi][s]),
                          LinExpr::var(blk.qb[bi][s])},
                         F);
            LinExpr step = LinExpr::var(blk.eb[bi][s]) -
                           (bs.eta * LinExpr::var(blk.pch[bi][s]) -
                            (1.0 / bs.eta) * LinExpr::var(blk.pdis[bi][s])) *
                               dt;
            if (s == 0)
                prog.add_eq(step - e_links[bi], F);
            else
                prog.add_eq(step - LinExpr::var(blk.eb[bi][s - 1]), F);
        }
    }
    for (size_t li = 0; li < fleet.load.size(); ++li)
        for (int s = 0; s < H; ++s)
            blk.alpha[li].push_back(
                prog.add_var(tag("alpha", li, s), cfg.alpha_min, 1.0));

    // Injections; flexible loads are not critical and are dropped here.
    InjectionBounds ib;
    ib.pabs.assign(n, std::vector<double>(H, 0.0));
    ib.qabs.assign(n, std::vector<double>(H, 0.0));
    for (int s = 0; s < H; ++s) {
        const int a = tau_abs + s;
        std::vector<LinExpr> pinj(n), qinj(n);
        for (size_t r = 0; r < fleet.pv.size(); ++r) {
            const auto& pv = fleet.pv[r];
            pinj[pv.bus - 1] += LinExpr::var(blk.pg[r][s]);
            qinj[pv.bus - 1] += LinExpr::var(blk.qg[r][s]);
            ib.pabs[pv.bus - 1][s] += pv.p_max_profile[a];
            ib.qabs[pv.bus - 1][s] += pv.s_rating;
        }
        for (size_t bi = 0; bi < fleet.bess.size(); ++bi) {
            const auto& bs = fleet.bess[bi];
            pinj[bs.bus - 1] +=
                LinExpr::var(blk.pdis[bi][s]) - LinExpr::var(blk.pch[bi][s]);
            qinj[bs.bus - 1] += LinExpr::var(blk.qb[bi][s]);
            ib.pabs[bs.bus - 1][s] += bs.p_max;
            ib.qabs[bs.bus - 1][s] += bs.p_max;
        }
        for (size_t li = 0; li < fleet.load.size(); ++li) {
            const auto& ld = fleet.load[li];
            const double pl = ld.p_profile[a];
            pinj[ld.bus - 1] -= pl * LinExpr::var(blk.alpha[li][s]);
            qinj[ld.bus - 1] -= pl * ld.tan_phi() * LinExpr::var(blk.alpha[li][s]);
            ib.pabs[ld.bus - 1][s] += pl;
            ib.qabs[ld.bus - 1][s] += pl * ld.tan_phi();
        }

        // Island power balance: total injection currents vanish (exchange
        // with the upper grid is zero). Flat linidarization point 1+0j.
        LinExpr sum_p, sum_q;
        for (int bus = 2; bus <= n; ++bus) {
            sum_p += pinj[bus - 1];
            sum_q += qinj[bus - 1];
        }
        prog.add_eq(sum_p, F);
        prog.add_eq(sum_q, F);

        if (cfg.network_enabled) {
            // The first BESS bus forms the island voltage at 1+0j; other
            // buses see v = 1 + (R i)_j - (R i)_pin with i = p - jq.
            const int pin_bus = fleet.bess.empty() ? 2 : fleet.bess[0].bus;
            std::vector<ComplexExpr> iinj(n - 1);
            for (int bus = 2; bus <= n; ++bus)
                iinj[topo.col(bus)] =
                    ComplexExpr(pinj[bus - 1], LinExpr() - qinj[bus - 1]);

            std::vector<ComplexExpr> rtimes(n - 1);
            for (int bus = 2; bus <= n; ++bus) {
                ComplexExpr acc;
                for (int k = 0; k < n - 1; ++k) {
                    const Complex rjk = topo.r_sens(topo.col(bus), k);
                    if (rjk == Complex(0.0, 0.0)) continue;
                    acc += rjk * iinj[k];
                }
                rtimes[topo.col(bus)] = acc;
            }
            const auto& rpin = rtimes[topo.col(pin_bus)];
            // Per-bus |delta v| bound for redundancy pruning.
            std::vector<double> imax(n - 1);
            for (int bus = 2; bus <= n; ++bus)
                imax[topo.col(bus)] =
                    ib.pabs[bus - 1][s] + ib.qabs[bus - 1][s];
            for (int bus = 2; bus <= n; ++bus) {
                if (bus == pin_bus) continue;
                double dv_bound = 0.0;
                for (int k = 0; k < n - 1; ++k)
                    dv_bound += std::abs(topo.r_sens(topo.col(bus), k) -
                                         topo.r_sens(topo.col(pin_bus), k)) *
                                imax[k];
                if (cfg.presolve_redundant && 1.0 + dv_bound <= cfg.v_max &&
                    1.0 - dv_bound >= cfg.v_min)
                    continue;
                ComplexExpr v(rtimes[topo.col(bus)].re - rpin.re + 1.0,
                              rtimes[topo.col(bus)].im - rpin.im);
                prog.add_soc(LinExpr(cfg.v_max), {v.re, v.im}, F);
                prog.add_le(LinExpr(cfg.v_min) - v.re, F);
            }
            for (const auto& br : topo.branches) {
                ComplexExpr ibr;
                double bound = 0.0;
                for (int bus = 2; bus <= n; ++bus) {
                    if (topo.bibc(br.id - 1, topo.col(bus)) != 0.0) {
                        ibr += iinj[topo.col(bus)];
                        bound += imax[topo.col(bus)];
                    }
                }
                if (br.id == 1) continue;  // carries the (zero) exchange
                if (cfg.presolve_redundant && bound <= br.i_max) continue;
                prog.add_soc(LinExpr(br.i_max), {ibr.re, ibr.im}, F);
            }
        }
    }

    // Cost: islanded generation curtailment (weighted by f_isl) plus load
    // shedding at the islanded curtailment price.
    LinExpr curt_cost, shed_cost;
    for (int s = 0; s < H; ++s) {
        const int a = tau_abs + s;
        const double cg = in.prices.f_isl * in.prices.c_curt_g[a] * mw * dt;
        for (size_t r = 0; r < fleet.pv.size(); ++r)
            curt_cost += cg * (LinExpr(fleet.pv[r].p_max_profile[a]) -
                               LinExpr::var(blk.pg[r][s]));
        const double cl = in.prices.c_curt_l_isl * mw * dt;
        for (size_t li = 0; li < fleet.load.size(); ++li)
            shed_cost += cl * fleet.load[li].p_profile[a] *
                         (LinExpr(1.0) - LinExpr::var(blk.alpha[li][s]));
    }
    // Same reactive tie-breaker as the grid-connected side, kept inside the
    // block cost so the monolithic and decomposed objectives agree.
    LinExpr reg_cost;
    const double cq = cfg.reactive_cost * mw * dt;
    if (cq > 0.0) {
        const double inf = std::numeric_limits<double>::infinity();
        auto abs_penalty = [&](int v) {
            const int a = prog.add_var("abs_reg_isl", 0.0, inf);
            prog.add_le(LinExpr::var(v) - LinExpr::var(a), Family::other);
            prog.add_le(LinExpr() - LinExpr::var(v) - LinExpr::var(a),
                        Family::other);
            reg_cost += cq * LinExpr::var(a);
        };
        for (size_t r = 0; r < fleet.pv.size(); ++r)
            for (int s = 0; s < H; ++s) abs_penalty(blk.qg[r][s]);
        for (size_t bi = 0; bi < fleet.bess.size(); ++bi)
            for (int s = 0; s < H; ++s) abs_penalty(blk.qb[bi][s]);
    }
    if (curt_cost_out) *curt_cost_out = curt_cost;
    if (shed_cost_out) *shed_cost_out = shed_cost;
    return curt_cost + shed_cost + reg_cost;
}

// ---------------------------------------------------------------------------
// HorizonBuilder
// ---------------------------------------------------------------------------

HorizonBuilder::HorizonBuilder(const HorizonInputs& in,
                               const UncertaintyMargins& margins,
                               const Eigen::MatrixXcd& v_bar)
    : in_(in), margins_(margins), v_bar_(v_bar) {
    in_.validate();
    if (v_bar_.rows() != in.topo->n_bus() || v_bar_.cols() < in.cfg.horizon)
        throw ModelError("v_bar dimensions do not match the horizon");
}

double HorizonBuilder::eur(const std::vector<double>& price, int a) const {
    return price[a] * in_.s_base_mw() * in_.cfg.dt;
}

void HorizonBuilder::add_variables() {
    const auto& fleet = *in_.fleet;
    const int T = in_.cfg.horizon;
    const auto& oltc = in_.topo->oltc;
    auto vtag = [](const std::string& s, size_t u, int t) {
        return s + "[" + std::to_string(u) + "][" + std::to_string(t) + "]";
    };

    pg_.assign(fleet.pv.size(), {});
    qg_.assign(fleet.pv.size(), {});
    for (size_t r = 0; r < fleet.pv.size(); ++r) {
        const auto& pv = fleet.pv[r];
        for (int t = 0; t < T; ++t) {
            const int a = in_.cfg.t_mpc + t;
            pg_[r].push_back(prog_.add_var(vtag("pg", r, t), 0.0,
                                           pv.p_max_profile[a]));
            qg_[r].push_back(prog_.add_var(vtag("qg", r, t), pv.q_min, pv.q_max));
        }
    }
    pch_.assign(fleet.bess.size(), {});
    pdis_.assign(fleet.bess.size(), {});
    qb_.assign(fleet.bess.size(), {});
    eb_.assign(fleet.bess.size(), {});
    for (size_t b = 0; b < fleet.bess.size(); ++b) {
        const auto& bs = fleet.bess[b];
        for (int t = 0; t < T; ++t) {
            pch_[b].push_back(prog_.add_var(vtag("pch", b, t), 0.0, bs.p_max));
            pdis_[b].push_back(prog_.add_var(vtag("pdis", b, t), 0.0, bs.p_max));
            qb_[b].push_back(prog_.add_var(vtag("qb", b, t),
                                           -bs.p_max * bs.tan_phi_max,
                                           bs.p_max * bs.tan_phi_max));
            eb_[b].push_back(prog_.add_var(vtag("eb", b, t), bs.e_lo(), bs.e_hi()));
        }
    }
    f_.assign(fleet.flexload.size(), {});
    for (size_t l = 0; l < fleet.flexload.size(); ++l)
        for (int t = 0; t < T; ++t)
            f_[l].push_back(prog_.add_var(vtag("f", l, t), -1.0, 1.0));

    const double inf = std::numeric_limits<double>::infinity();
    for (int t = 0; t < T; ++t) {
        pbuy_.push_back(prog_.add_var(vtag("pbuy", 0, t), 0.0, inf));
        psell_.push_back(prog_.add_var(vtag("psell", 0, t), 0.0, inf));
        rho_.push_back(prog_.add_var(vtag("rho", 0, t),
                                     static_cast<double>(oltc.tap_min),
                                     static_cast<double>(oltc.tap_max)));
    }
    if (in_.product.active()) {
        const double cap = std::min(in_.product.bid_cap, 1e6);
        if (in_.product.fixed_bid >= 0.0)
            pbid_ = prog_.add_var("pbid", in_.product.fixed_bid,
                                  in_.product.fixed_bid);
        else
            pbid_ = prog_.add_var("pbid", 0.0, cap);
    }
}

void HorizonBuilder::add_power_balance() {
    const auto& fleet = *in_.fleet;
    const auto& topo = *in_.topo;
    const int T = in_.cfg.horizon;
    const int n = topo.n_bus();

    pinj_.assign(T, std::vector<LinExpr>(n));
    qinj_.assign(T, std::vector<LinExpr>(n));
    iinj_.assign(T, {});
    for (int t = 0; t < T; ++t) {
        const int a = in_.cfg.t_mpc + t;
        auto& pinj = pinj_[t];
        auto& qinj = qinj_[t];
        for (size_t r = 0; r < fleet.pv.size(); ++r) {
            pinj[fleet.pv[r].bus - 1] += LinExpr::var(pg_[r][t]);
            qinj[fleet.pv[r].bus - 1] += LinExpr::var(qg_[r][t]);
        }
        for (size_t b = 0; b < fleet.bess.size(); ++b) {
            pinj[fleet.bess[b].bus - 1] +=
                LinExpr::var(pdis_[b][t]) - LinExpr::var(pch_[b][t]);
            qinj[fleet.bess[b].bus - 1] += LinExpr::var(qb_[b][t]);
        }
        for (const auto& ld : fleet.load) {
            pinj[ld.bus - 1] -= ld.p_profile[a];
            qinj[ld.bus - 1] -= ld.p_profile[a] * ld.tan_phi();
        }
        for (size_t l = 0; l < fleet.flexload.size(); ++l) {
            const auto& fl = fleet.flexload[l];
            const double shift = fl.p_shift_profile[a];
            const double tphi = load_tan_phi(fleet, fl.bus);
            pinj[fl.bus - 1] -= shift * LinExpr::var(f_[l][t]);
            qinj[fl.bus - 1] -= shift * tphi * LinExpr::var(f_[l][t]);
        }

        // Injection currents at the linearization point.
        iinj_[t].resize(n - 1);
        for (int bus = 2; bus <= n; ++bus) {
            const Complex aj = 1.0 / std::conj(v_bar_(bus - 1, t));
            ComplexExpr s_conj(pinj[bus - 1], LinExpr() - qinj[bus - 1]);
            iinj_[t][topo.col(bus)] = aj * s_conj;
        }

        // Exchange tie at the substation. sub_p_expr is export-positive
        // (it tracks the sum of injection currents), so the import equals
        // its negation.
        if (in_.cfg.network_enabled) {
            prog_.add_eq(LinExpr::var(pbuy_[t]) - LinExpr::var(psell_[t]) +
                             sub_p_expr(t),
                         Family::balance);
        } else {
            LinExpr total;
            for (int bus = 2; bus <= n; ++bus) total += pinj[bus - 1];
            prog_.add_eq(LinExpr::var(pbuy_[t]) - LinExpr::var(psell_[t]) + total,
                         Family::balance);
        }
    }
}

LinExpr HorizonBuilder::sub_p_expr(int t) const {
    // S_sub = V_slack * conj(I_branch1) with V frozen at v_bar.
    const Complex v1 = v_bar_(0, t);
    ComplexExpr i1;
    for (const auto& e : iinj_[t]) i1 += e;
    return v1.real() * i1.re + v1.imag() * i1.im;
}

LinExpr HorizonBuilder::sub_q_expr(int t) const {
    const Complex v1 = v_bar_(0, t);
    ComplexExpr i1;
    for (const auto& e : iinj_[t]) i1 += e;
    return v1.imag() * i1.re - v1.real() * i1.im;
}

void HorizonBuilder::add_der_constraints() {
    const auto& fleet = *in_.fleet;
    const int T = in_.cfg.horizon;
    const double dt = in_.cfg.dt;

    for (size_t b = 0; b < fleet.bess.size(); ++b) {
        const auto& bs = fleet.bess[b];
        for (int t = 0; t < T; ++t) {
            // Energy recursion; box bounds already on the variables.
            LinExpr step = LinExpr::var(eb_[b][t]) -
                           (bs.eta * LinExpr::var(pch_[b][t]) -
                            (1.0 / bs.eta) * LinExpr::var(pdis_[b][t])) *
                               dt;
            if (t == 0)
                prog_.add_eq(step - in_.bess_e_start[b], Family::energy);
            else
                prog_.add_eq(step - LinExpr::var(eb_[b][t - 1]), Family::energy);
            // Reactive band tied to the active operating point. The max()
            // of the written form equals pch+pdis whenever only one of the
            // two is nonzero, which complementarity enforces.
            LinExpr cap = bs.tan_phi_max *
                          (LinExpr::var(pch_[b][t]) + LinExpr::var(pdis_[b][t]));
            prog_.add_le(LinExpr::var(qb_[b][t]) - cap, Family::device);
            prog_.add_le(LinExpr() - LinExpr::var(qb_[b][t]) - cap, Family::device);
        }
    }
    for (size_t l = 0; l < fleet.flexload.size(); ++l) {
        LinExpr total(in_.flex_hist_sum[l]);
        for (int t = 0; t < T; ++t) total += LinExpr::var(f_[l][t]);
        prog_.add_eq(total, Family::device);
    }
}

void HorizonBuilder::add_network_constraints() {
    if (!in_.cfg.network_enabled) return;
    const auto& topo = *in_.topo;
    const auto& cfg = in_.cfg;
    const int T = cfg.horizon;
    const int n = topo.n_bus();
    const double band = cfg.v_max - cfg.v_min;

    const auto bounds = grid_injection_bounds(in_);
    const double v0_hi = topo.oltc.v_slack.real() +
                         topo.oltc.step_pu * std::abs(topo.oltc.tap_min);
    const double v0_lo =
        topo.oltc.v_slack.real() - topo.oltc.step_pu * topo.oltc.tap_max;

    for (int t = 0; t < T; ++t) {
        std::vector<double> imax(n - 1);
        for (int bus = 2; bus <= n; ++bus)
            imax[topo.col(bus)] = std::abs(1.0 / v_bar_(bus - 1, t)) *
                                  (bounds.pabs[bus - 1][t] + bounds.qabs[bus - 1][t]);

        // v_j = v_slack - step*rho + sum_k R_jk i_k
        std::vector<ComplexExpr> rtimes(n - 1);
        for (int bus = 2; bus <= n; ++bus) {
            ComplexExpr acc;
            for (int k = 0; k < n - 1; ++k) {
                const Complex rjk = topo.r_sens(topo.col(bus), k);
                if (rjk == Complex(0.0, 0.0)) continue;
                acc += rjk * iinj_[t][k];
            }
            rtimes[topo.col(bus)] = acc;
        }
        for (int bus = 2; bus <= n; ++bus) {
            const int col = topo.col(bus);
            const double om_up = margins_.v_upper(col, t);
            const double om_lo = margins_.v_lower(col, t);
            if (cfg.v_max - om_up < cfg.v_min + om_lo || om_up > 0.5 * band + 1e-12 ||
                om_lo > 0.5 * band + 1e-12)
                throw ModelError(
                    "uncertainty margin exceeds half the voltage band at bus " +
                    std::to_string(bus) + ", t=" + std::to_string(t));

            double dv_bound = 0.0;
            for (int k = 0; k < n - 1; ++k)
                dv_bound += std::abs(topo.r_sens(col, k)) * imax[k];
            const bool skip_upper =
                cfg.presolve_redundant && v0_hi + dv_bound <= cfg.v_max - om_up;
            const bool skip_lower =
                cfg.presolve_redundant && v0_lo - dv_bound >= cfg.v_min + om_lo;

            ComplexExpr v(rtimes[col].re + topo.oltc.v_slack.real() -
                              topo.oltc.step_pu * LinExpr::var(rho_[t]),
                          rtimes[col].im + topo.oltc.v_slack.imag());
            if (!skip_upper)
                prog_.add_soc(LinExpr(cfg.v_max - om_up), {v.re, v.im},
                              Family::voltage_upper);
            if (!skip_lower)
                prog_.add_le(LinExpr(cfg.v_min + om_lo) - v.re,
                             Family::voltage_lower);
        }
        for (const auto& br : topo.branches) {
            const double om_i = margins_.i_branch(br.id - 1, t);
            if (om_i > br.i_max)
                throw ModelError("uncertainty margin exceeds the ampacity of branch " +
                                 std::to_string(br.id) + ", t=" + std::to_string(t));
            ComplexExpr ibr;
            double bound = 0.0;
            for (int bus = 2; bus <= n; ++bus) {
                if (topo.bibc(br.id - 1, topo.col(bus)) != 0.0) {
                    ibr += iinj_[t][topo.col(bus)];
                    bound += imax[topo.col(bus)];
                }
            }
            if (cfg.presolve_redundant && bound <= br.i_max - om_i) continue;
            prog_.add_soc(LinExpr(br.i_max - om_i), {ibr.re, ibr.im},
                          Family::current);
        }
        if (std::isfinite(sub_cap_)) {
            prog_.add_soc(LinExpr(sub_cap_), {sub_p_expr(t), sub_q_expr(t)},
                          Family::current);
        }
    }
}

void HorizonBuilder::add_fc_constraints() {
    const auto& fleet = *in_.fleet;
    const auto& prod = in_.product;
    if (!prod.active()) return;
    const int T = in_.cfg.horizon;
    const double dt = in_.cfg.dt;
    const LinExpr bid = LinExpr::var(pbid_);
    const auto F = Family::reserve;

    auto up_power_bess = [&](int t) {
        LinExpr e;
        for (size_t b = 0; b < fleet.bess.size(); ++b)
            e += LinExpr(fleet.bess[b].p_max) - LinExpr::var(pdis_[b][t]) +
                 LinExpr::var(pch_[b][t]);
        return e;
    };
    auto down_power_bess = [&](int t) {
        LinExpr e;
        for (size_t b = 0; b < fleet.bess.size(); ++b)
            e += LinExpr(fleet.bess[b].p_max) - LinExpr::var(pch_[b][t]) +
                 LinExpr::var(pdis_[b][t]);
        return e;
    };
    auto pv_headroom = [&](int t) {
        LinExpr e;
        const int a = in_.cfg.t_mpc + t;
        for (size_t r = 0; r < fleet.pv.size(); ++r)
            e += LinExpr(fleet.pv[r].p_max_profile[a]) - LinExpr::var(pg_[r][t]);
        return e;
    };
    auto pv_output = [&](int t) {
        LinExpr e;
        for (size_t r = 0; r < fleet.pv.size(); ++r)
            e += LinExpr::var(pg_[r][t]);
        return e;
    };
    auto sched = [&](size_t b, int t) {
        const double eta = fleet.bess[b].eta;
        return (eta * LinExpr::var(pch_[b][t]) -
                (1.0 / eta) * LinExpr::var(pdis_[b][t])) *
               dt;
    };

    if (prod.kind == FcProduct::Kind::pfc) {
        // Symmetric power plus 15-minute energy headroom, BESS only.
        for (int t = 0; t < T; ++t) {
            prog_.add_le(bid - up_power_bess(t), F);
            prog_.add_le(bid - down_power_bess(t), F);
            LinExpr up_energy, down_energy;
            for (size_t b = 0; b < fleet.bess.size(); ++b) {
                up_energy += LinExpr::var(eb_[b][t]) - fleet.bess[b].e_lo();
                down_energy += LinExpr(fleet.bess[b].e_hi()) - LinExpr::var(eb_[b][t]);
            }
            prog_.add_le(bid * prod.dt1 - up_energy, F);
            prog_.add_le(bid * prod.dt1 - down_energy, F);
        }
        return;
    }

    if (prod.kind == FcProduct::Kind::sfc) {
        m2p_.assign(fleet.bess.size(), std::vector<int>(T, -1));
        m2m_.assign(fleet.bess.size(), std::vector<int>(T, -1));
        e2p_.assign(fleet.bess.size(),
                    std::vector<std::array<int, 4>>(T, {-1, -1, -1, -1}));
        e2m_ = e2p_;
        for (int t = 0; t < T; ++t) {
            prog_.add_le(bid - up_power_bess(t) - pv_headroom(t), F);
            prog_.add_le(bid - down_power_bess(t) - pv_output(t), F);
        }
        for (size_t b = 0; b < fleet.bess.size(); ++b) {
            const auto& bs = fleet.bess[b];
            for (int s = 0; s < T; ++s) {
                // min-terms, shared across call starts hitting step s:
                // m <= both arguments, entering the recursion toward
                // feasibility (conservative convex treatment).
                m2p_[b][s] = prog_.add_var("m2p", 0.0, 1e6);
                prog_.add_le(LinExpr::var(m2p_[b][s]) - 0.5 / bs.eta * bid, F);
                prog_.add_le(LinExpr::var(m2p_[b][s]) - pv_headroom(s), F);
                m2m_[b][s] = prog_.add_var("m2m", 0.0, 1e6);
                prog_.add_le(LinExpr::var(m2m_[b][s]) - 0.5 * bs.eta * bid, F);
                prog_.add_le(LinExpr::var(m2m_[b][s]) - pv_output(s), F);
            }
            for (int t = 0; t < T; ++t) {
                for (int th = 1; th <= 4; ++th) {
                    if (t + th >= T) break;
                    const int s = t + th;
                    const double dtu = prod.sfc.up[th - 1];
                    const double dtd = prod.sfc.down[th - 1];
                    const int vup = prog_.add_var("e2p", bs.e_lo(), bs.e_hi());
                    const int vdn = prog_.add_var("e2m", bs.e_lo(), bs.e_hi());
                    e2p_[b][t][th - 1] = vup;
                    e2m_[b][t][th - 1] = vdn;
                    LinExpr prev_up = (th == 1) ? LinExpr::var(eb_[b][t])
                                                : LinExpr::var(e2p_[b][t][th - 2]);
                    LinExpr prev_dn = (th == 1) ? LinExpr::var(eb_[b][t])
                                                : LinExpr::var(e2m_[b][t][th - 2]);
                    prog_.add_eq(LinExpr::var(vup) - prev_up +
                                     (1.0 / bs.eta) * dtu * bid -
                                     dtu * LinExpr::var(m2p_[b][s]) - sched(b, s),
                                 F);
                    prog_.add_eq(LinExpr::var(vdn) - prev_dn -
                                     bs.eta * dtd * bid +
                                     dtd * LinExpr::var(m2m_[b][s]) - sched(b, s),
                                 F);
                }
            }
        }
        return;
    }

    // TFC: directional, one hour of full power per worst-case hour, with
    // flexible loads counting toward the non-BESS share.
    const bool up = prod.kind == FcProduct::Kind::tfc_up;
    m3_.assign(fleet.bess.size(), std::vector<int>(T, -1));
    e3_.assign(fleet.bess.size(),
               std::vector<std::array<int, 4>>(T, {-1, -1, -1, -1}));
    auto flex_up = [&](int t) {
        LinExpr e;
        const int a = in_.cfg.t_mpc + t;
        for (size_t l = 0; l < fleet.flexload.size(); ++l)
            e += (LinExpr::var(f_[l][t]) + 1.0) *
                 fleet.flexload[l].p_shift_profile[a];
        return e;
    };
    auto flex_down = [&](int t) {
        LinExpr e;
        const int a = in_.cfg.t_mpc + t;
        for (size_t l = 0; l < fleet.flexload.size(); ++l)
            e += (LinExpr(1.0) - LinExpr::var(f_[l][t])) *
                 fleet.flexload[l].p_shift_profile[a];
        return e;
    };
    for (int t = 0; t < T; ++t) {
        const int a = in_.cfg.t_mpc + t;
        if (!prod.in_block(a)) continue;
        if (up)
            prog_.add_le(bid - up_power_bess(t) - pv_headroom(t) - flex_up(t), F);
        else
            prog_.add_le(bid - down_power_bess(t) - pv_output(t) - flex_down(t), F);
    }
    for (size_t b = 0; b < fleet.bess.size(); ++b) {
        const auto& bs = fleet.bess[b];
        for (int s = 0; s < T; ++s) {
            m3_[b][s] = prog_.add_var("m3", 0.0, 1e6);
            if (up) {
                prog_.add_le(LinExpr::var(m3_[b][s]) - 0.8 / bs.eta * bid, F);
                prog_.add_le(LinExpr::var(m3_[b][s]) - pv_headroom(s) - flex_up(s),
                             F);
            } else {
                prog_.add_le(LinExpr::var(m3_[b][s]) - 0.8 * bs.eta * bid, F);
                prog_.add_le(LinExpr::var(m3_[b][s]) - pv_output(s) - flex_down(s),
                             F);
            }
        }
        for (int t = 0; t < T; ++t) {
            const int a = in_.cfg.t_mpc + t;
            if (!prod.in_block(a)) continue;
            for (int th = 1; th <= 4; ++th) {
                if (t + th >= T) break;
                const int s = t + th;
                const double dt3 = 1.0;
                const int v = prog_.add_var("e3", bs.e_lo(), bs.e_hi());
                e3_[b][t][th - 1] = v;
                LinExpr prev = (th == 1) ? LinExpr::var(eb_[b][t])
                                         : LinExpr::var(e3_[b][t][th - 2]);
                if (up)
                    prog_.add_eq(LinExpr::var(v) - prev +
                                     (1.0 / bs.eta) * dt3 * bid -
                                     dt3 * LinExpr::var(m3_[b][s]) - sched(b, s),
                                 F);
                else
                    prog_.add_eq(LinExpr::var(v) - prev - bs.eta * dt3 * bid +
                                     dt3 * LinExpr::var(m3_[b][s]) - sched(b, s),
                                 F);
            }
        }
    }
}

void HorizonBuilder::add_islanding_block(int tau_offset) {
    const auto& fleet = *in_.fleet;
    std::vector<LinExpr> e_links;
    for (size_t b = 0; b < fleet.bess.size(); ++b)
        e_links.push_back(bess_energy_link_expr(static_cast<int>(b), tau_offset));
    IslBlockVars blk;
    LinExpr curt, shed;
    build_islanded_block(prog_, in_, in_.cfg.t_mpc + tau_offset, e_links, blk,
                         &curt, &shed);
    isl_curt_cost_ += curt;
    isl_shed_cost_ += shed;
    isl_blocks_.push_back(std::move(blk));
}

LinExpr HorizonBuilder::bess_energy_link_expr(int bess, int tau_offset) const {
    if (tau_offset == 0) return LinExpr(in_.bess_e_start[bess]);
    return LinExpr::var(eb_[bess][tau_offset - 1]);
}

void HorizonBuilder::add_islanding_bound(const IslandingPrep& prep) {
    const auto& fleet = *in_.fleet;
    if (fleet.bess.size() > 1)
        throw ModelError(
            "decomposed islanding supports at most one BESS; use monolithic");
    if (!prep.feasible) {
        // Structurally infeasible islanded window; make it show up as an
        // islanding-family infeasibility in the master.
        prog_.add_le(LinExpr(1.0), Family::islanding);
        return;
    }
    if (fleet.bess.empty()) {
        if (!prep.cuts.empty()) isl_const_cost_ += prep.cuts.front().value;
        return;
    }
    const LinExpr e_link = bess_energy_link_expr(0, prep.tau_offset);
    prog_.add_le(LinExpr(prep.e_min) - e_link, Family::islanding);
    if (prep.tau_offset == 0) {
        // Constant link: cost is a constant too.
        double best = 0.0;
        for (const auto& cut : prep.cuts)
            best = std::max(best,
                            cut.value + cut.slope * (in_.bess_e_start[0] - cut.e_point));
        isl_const_cost_ += best;
        eta_isl_.push_back(-1);
        eta_prep_tau_.push_back(prep.tau_offset);
        return;
    }
    const int eta = prog_.add_var("eta_isl" + std::to_string(prep.tau_offset),
                                  0.0, std::numeric_limits<double>::infinity());
    eta_isl_.push_back(eta);
    eta_prep_tau_.push_back(prep.tau_offset);
    for (const auto& cut : prep.cuts) {
        prog_.add_le(LinExpr(cut.value) + cut.slope * (e_link - cut.e_point) -
                         LinExpr::var(eta),
                     Family::islanding);
    }
}

void HorizonBuilder::add_islanding_cut(int prep_index, const IslandingCut& cut) {
    const int eta = eta_isl_[prep_index];
    if (eta < 0) return;
    const LinExpr e_link =
        bess_energy_link_expr(0, eta_prep_tau_[prep_index]);
    prog_.add_le(LinExpr(cut.value) + cut.slope * (e_link - cut.e_point) -
                     LinExpr::var(eta),
                 Family::islanding);
}

void HorizonBuilder::build_objective() {
    const auto& fleet = *in_.fleet;
    const int T = in_.cfg.horizon;
    LinExpr obj;
    for (int t = 0; t < T; ++t) {
        const int a = in_.cfg.t_mpc + t;
        const double c_curt = eur(in_.prices.c_curt_g, a);
        for (size_t r = 0; r < fleet.pv.size(); ++r)
            obj += c_curt * (LinExpr(fleet.pv[r].p_max_profile[a]) -
                             LinExpr::var(pg_[r][t]));
        obj += eur(in_.prices.c_buy, a) * LinExpr::var(pbuy_[t]);
        obj -= eur(in_.prices.c_sell, a) * LinExpr::var(psell_[t]);
        if (pbid_ >= 0) obj -= eur(in_.prices.c_bid, a) * LinExpr::var(pbid_);
    }
    // Tie-breaking regularization (see HorizonConfig). Absolute values via
    // one epigraph variable each.
    const double cq = in_.cfg.reactive_cost * in_.s_base_mw() * in_.cfg.dt;
    const double ct = in_.cfg.tap_wear_cost * in_.cfg.dt;
    const double inf = std::numeric_limits<double>::infinity();
    auto abs_penalty = [&](int v, double price) {
        if (price <= 0.0) return;
        const int a = prog_.add_var("abs_reg", 0.0, inf);
        prog_.add_le(LinExpr::var(v) - LinExpr::var(a), Family::other);
        prog_.add_le(LinExpr() - LinExpr::var(v) - LinExpr::var(a), Family::other);
        obj += price * LinExpr::var(a);
    };
    for (int t = 0; t < T; ++t) {
        for (size_t r = 0; r < fleet.pv.size(); ++r) abs_penalty(qg_[r][t], cq);
        for (size_t b = 0; b < fleet.bess.size(); ++b) abs_penalty(qb_[b][t], cq);
        abs_penalty(rho_[t], ct);
    }
    obj += isl_curt_cost_ + isl_shed_cost_;
    for (int eta : eta_isl_)
        if (eta >= 0) obj += LinExpr::var(eta);
    obj += isl_const_cost_;
    prog_.set_objective(obj);
}

void HorizonBuilder::build(const std::vector<IslandingPrep>* preps) {
    add_variables();
    add_power_balance();
    add_der_constraints();
    add_network_constraints();
    add_fc_constraints();
    switch (in_.cfg.islanding) {
        case HorizonConfig::Islanding::off:
            break;
        case HorizonConfig::Islanding::monolithic:
            for (int tau = 0; tau < in_.cfg.horizon; tau += in_.cfg.islanding_stride)
                add_islanding_block(tau);
            break;
        case HorizonConfig::Islanding::decomposed:
            if (!preps)
                throw ModelError("decomposed islanding requires prepared bounds");
            for (const auto& p : *preps) add_islanding_bound(p);
            break;
    }
    build_objective();
}

void HorizonBuilder::fix_taps(const Eigen::VectorXd& taps) {
    for (int t = 0; t < in_.cfg.horizon; ++t)
        prog_.set_bounds(rho_[t], taps[t], taps[t]);
}

DispatchPlan HorizonBuilder::extract(const Solution& sol) const {
    const auto& fleet = *in_.fleet;
    const int T = in_.cfg.horizon;
    DispatchPlan plan;
    plan.t_mpc = in_.cfg.t_mpc;
    plan.horizon = T;
    auto fill = [&](const std::vector<std::vector<int>>& vars) {
        Eigen::MatrixXd m(vars.size(), T);
        for (size_t u = 0; u < vars.size(); ++u)
            for (int t = 0; t < T; ++t) m(u, t) = sol.x[vars[u][t]];
        return m;
    };
    plan.pg = fill(pg_);
    plan.qg = fill(qg_);
    plan.pch = fill(pch_);
    plan.pdis = fill(pdis_);
    plan.qb = fill(qb_);
    plan.eb = fill(eb_);
    plan.f = fill(f_);
    plan.pbuy.resize(T);
    plan.psell.resize(T);
    plan.rho.resize(T);
    for (int t = 0; t < T; ++t) {
        plan.pbuy[t] = sol.x[pbuy_[t]];
        plan.psell[t] = sol.x[psell_[t]];
        plan.rho[t] = sol.x[rho_[t]];
    }
    plan.pbid = pbid_ >= 0 ? sol.x[pbid_] : 0.0;
    plan.objective = sol.objective;
    plan.solver_stats = sol.stats;

    auto& c = plan.costs;
    for (int t = 0; t < T; ++t) {
        const int a = in_.cfg.t_mpc + t;
        double curt = 0.0;
        for (size_t r = 0; r < fleet.pv.size(); ++r)
            curt += fleet.pv[r].p_max_profile[a] - plan.pg(r, t);
        c.curt_g += eur(in_.prices.c_curt_g, a) * curt;
        c.buy += eur(in_.prices.c_buy, a) * plan.pbuy[t];
        c.sell_revenue += eur(in_.prices.c_sell, a) * plan.psell[t];
        if (pbid_ >= 0) c.as_revenue += eur(in_.prices.c_bid, a) * plan.pbid;
    }
    c.curt_g_isl = isl_curt_cost_.value(sol.x);
    c.curt_l_isl = isl_shed_cost_.value(sol.x);

    // Monolithic islanded summaries straight from the solution.
    for (const auto& blk : isl_blocks_) {
        IslandedSummary s;
        s.tau_abs = in_.cfg.t_mpc + blk.tau_offset;
        s.feasible = true;
        if (!fleet.bess.empty()) {
            s.e_start = bess_energy_link_expr(0, blk.tau_offset).value(sol.x);
            s.e_traj.resize(blk.eb[0].size());
            for (size_t k = 0; k < blk.eb[0].size(); ++k)
                s.e_traj[k] = sol.x[blk.eb[0][k]];
        }
        for (size_t b = 0; b < blk.pch.size(); ++b)
            for (size_t k = 0; k < blk.pch[b].size(); ++k)
                s.comp_violation =
                    std::max(s.comp_violation,
                             sol.x[blk.pch[b][k]] * sol.x[blk.pdis[b][k]]);
        for (const auto& per_load : blk.alpha)
            for (int v : per_load)
                s.alpha_min_seen = std::min(s.alpha_min_seen, sol.x[v]);
        plan.islanded.push_back(std::move(s));
    }
    return plan;
}

std::vector<HorizonBuilder::CompViolation>
HorizonBuilder::complementarity_violations(const Solution& sol,
                                           double tol) const {
    std::vector<CompViolation> out;
    const int T = in_.cfg.horizon;
    for (size_t b = 0; b < pch_.size(); ++b)
        for (int t = 0; t < T; ++t)
            if (sol.x[pch_[b][t]] * sol.x[pdis_[b][t]] > tol)
                out.push_back({static_cast<int>(b), t, -1});
    for (const auto& blk : isl_blocks_)
        for (size_t b = 0; b < blk.pch.size(); ++b)
            for (size_t s = 0; s < blk.pch[b].size(); ++s)
                if (sol.x[blk.pch[b][s]] * sol.x[blk.pdis[b][s]] > tol)
                    out.push_back({static_cast<int>(b), static_cast<int>(s),
                                   blk.tau_offset});
    return out;
}

void HorizonBuilder::add_complementarity_binaries(
    const std::vector<CompViolation>& pairs) {
    for (const auto& pv : pairs) {
        const auto& bs = in_.fleet->bess[pv.bess];
        int vch, vdis;
        if (pv.tau_offset < 0) {
            vch = pch_[pv.bess][pv.t];
            vdis = pdis_[pv.bess][pv.t];
        } else {
            const auto it = std::find_if(
                isl_blocks_.begin(), isl_blocks_.end(),
                [&](const IslBlockVars& b) { return b.tau_offset == pv.tau_offset; });
            vch = it->pch[pv.bess][pv.t];
            vdis = it->pdis[pv.bess][pv.t];
        }
        const int delta = prog_.add_var("comp_delta", 0.0, 1.0, VarKind::binary);
        prog_.add_le(LinExpr::var(vch) - bs.p_max * LinExpr::var(delta),
                     Family::device);
        prog_.add_le(LinExpr::var(vdis) -
                         bs.p_max * (LinExpr(1.0) - LinExpr::var(delta)),
                     Family::device);
    }
}

InjectionProfile HorizonBuilder::injections_at(const DispatchPlan& plan,
                                               int t) const {
    const auto& fleet = *in_.fleet;
    const int n = in_.topo->n_bus();
    const int a = in_.cfg.t_mpc + t;
    InjectionProfile inj;
    inj.p = Eigen::VectorXd::Zero(n);
    inj.q = Eigen::VectorXd::Zero(n);
    for (size_t r = 0; r < fleet.pv.size(); ++r) {
        inj.p[fleet.pv[r].bus - 1] += plan.pg(r, t);
        inj.q[fleet.pv[r].bus - 1] += plan.qg(r, t);
    }
    for (size_t b = 0; b < fleet.bess.size(); ++b) {
        inj.p[fleet.bess[b].bus - 1] += plan.pdis(b, t) - plan.pch(b, t);
        inj.q[fleet.bess[b].bus - 1] += plan.qb(b, t);
    }
    for (const auto& ld : fleet.load) {
        inj.p[ld.bus - 1] -= ld.p_profile[a];
        inj.q[ld.bus - 1] -= ld.p_profile[a] * ld.tan_phi();
    }
    for (size_t l = 0; l < fleet.flexload.size(); ++l) {
        const auto& fl = fleet.flexload[l];
        inj.p[fl.bus - 1] -= fl.p_shift_profile[a] * plan.f(l, t);
        inj.q[fl.bus - 1] -=
            fl.p_shift_profile[a] * plan.f(l, t) * load_tan_phi(fleet, fl.bus);
    }
    return inj;
}

// ---------------------------------------------------------------------------
// solve_horizon and the inner feasibility loop
// ---------------------------------------------------------------------------

HorizonResult solve_horizon(HorizonBuilder& builder, const HorizonInputs& in) {
    HorizonResult res;
    auto compiled = builder.program().compile();
    Solution sol;
    if (!builder.program().binary_vars().empty()) {
        BnbSolver bnb(in.cfg.solver);
        sol = bnb.solve_mixed(compiled, builder.program().binary_vars());
    } else {
        SocpSolver solver(in.cfg.solver);
        sol = solver.solve(compiled);
    }
    res.diagnosis.status = sol.status;
    if (sol.status == SolveStatus::optimal) {
        res.feasible = true;
        res.plan = builder.extract(sol);
        return res;
    }
    if (sol.status == SolveStatus::primal_infeasible) {
        // Attribute the infeasibility: re-solve with per-family slacks.
        std::vector<Family> fams{Family::voltage_upper, Family::voltage_lower,
                                 Family::current, Family::islanding,
                                 Family::reserve};
        std::vector<int> slack_vars;
        auto relaxed = builder.program().elastic_relaxation(fams, slack_vars);
        SocpSolver solver(in.cfg.solver);
        auto esol = solver.solve(relaxed.compile());
        std::ostringstream msg;
        msg << "infeasible horizon problem";
        if (esol.ok()) {
            msg << "; violated families:";
            for (size_t k = 0; k < fams.size(); ++k) {
                const double s = esol.x[slack_vars[k]];
                res.diagnosis.elastic_slacks.emplace_back(fams[k], s);
                if (s > 1e-7) msg << " " << family_name(fams[k]) << "=" << s;
            }
        } else {
            msg << "; elastic relaxation also failed (structural equalities)";
        }
        res.diagnosis.message = msg.str();
    } else {
        res.diagnosis.message = std::string("solver returned ") +
                                status_name(sol.status);
    }
    return res;
}

namespace {

/// One pass of the inner loop at fixed margins: iterate linearize/solve/
/// project until the voltage fixed point, optionally with taps pinned.
HorizonResult run_inner(const HorizonInputs& in, const UncertaintyMargins& margins,
                        std::vector<IslandingPrep>* preps,
                        const Eigen::VectorXd* fixed_taps) {
    const auto& topo = *in.topo;
    const int T = in.cfg.horizon;
    const int n = topo.n_bus();

    Eigen::MatrixXcd v_bar =
        Eigen::MatrixXcd::Constant(n, T, Complex(1.0, 0.0));
    HorizonResult res;
    std::vector<double> dv_hist;

    for (int k = 1; k <= in.cfg.max_inner; ++k) {
        HorizonBuilder builder(in, margins, v_bar);
        builder.build(preps);
        if (fixed_taps) builder.fix_taps(*fixed_taps);
        res = solve_horizon(builder, in);
        if (!res.feasible) return res;

        // Decomposed islanding: refine value cuts at the incumbent energies.
        if (preps && in.cfg.islanding == HorizonConfig::Islanding::decomposed &&
            !in.fleet->bess.empty()) {
            for (int round = 0; round < 6; ++round) {
                bool added = false;
                for (size_t i = 0; i < preps->size(); ++i) {
                    auto& prep = (*preps)[i];
                    if (prep.tau_offset == 0 || !prep.feasible) continue;
                    const double e_star =
                        res.plan.eb(0, prep.tau_offset - 1);
                    IslandedSubproblem sub(in, in.cfg.t_mpc + prep.tau_offset);
                    auto r = sub.solve_at(e_star);
                    if (!r.feasible) continue;  // within tolerance of e_min
                    // The master's eta sits on the current cut envelope, so
                    // the violation test compares against that envelope.
                    double eta_from_cuts = 0.0;
                    for (const auto& cut : prep.cuts)
                        eta_from_cuts =
                            std::max(eta_from_cuts,
                                     cut.value + cut.slope * (e_star - cut.e_point));
                    if (r.cost > eta_from_cuts + 1e-4 * (1.0 + std::abs(r.cost))) {
                        prep.cuts.push_back({e_star, r.cost, r.dcost_de});
                        builder.add_islanding_cut(static_cast<int>(i),
                                                  prep.cuts.back());
                        added = true;
                    }
                }
                if (!added) break;
                res = solve_horizon(builder, in);
                if (!res.feasible) return res;
            }
        }

        // Project onto the AC manifold: full BFS at the obtained setpoints.
        Eigen::MatrixXcd v_ac(n, T), i_ac(topo.n_branch(), T);
        double dv = 0.0;
        for (int t = 0; t < T; ++t) {
            const auto inj = builder.injections_at(res.plan, t);
            auto st = solve_bfs(topo, inj, res.plan.rho[t]);
            if (!st.converged) {
                res.feasible = false;
                res.diagnosis.status = SolveStatus::numerical_error;
                res.diagnosis.message =
                    "AC projection diverged at step " + std::to_string(t);
                return res;
            }
            v_ac.col(t) = st.voltages.v;
            i_ac.col(t) = st.i_br;
        }
        dv = (v_ac - v_bar).cwiseAbs().maxCoeff();
        dv_hist.push_back(dv);
        // Damped update after the first passes; degenerate optima can
        // otherwise cycle between re-linearizations. The fixed point is
        // unchanged (dv is measured against the undamped target).
        if (k <= 2)
            v_bar = v_ac;
        else
            v_bar = 0.5 * (v_bar + v_ac);
        res.plan.v_ac = v_ac;
        res.plan.i_br_ac = i_ac;
        res.plan.inner_iterations = k;
        res.plan.inner_dv_history = dv_hist;
        res.v_bar = v_bar;
        if (dv < in.cfg.inner_tol || !in.cfg.network_enabled) {
            res.plan.inner_converged = true;
            break;
        }
    }
    if (!res.plan.inner_converged && in.cfg.network_enabled) {
        std::ostringstream msg;
        msg << "inner loop hit iteration cap; last |dv|:";
        for (size_t i = dv_hist.size() >= 2 ? dv_hist.size() - 2 : 0;
             i < dv_hist.size(); ++i)
            msg << " " << dv_hist[i];
        res.diagnosis.message = msg.str();
    }
    return res;
}

bool taps_are_integral(const Eigen::VectorXd& rho) {
    for (int t = 0; t < rho.size(); ++t)
        if (std::abs(rho[t] - std::round(rho[t])) > 1e-7) return false;
    return true;
}

}  // namespace

HorizonResult inner_feasibility_loop(const HorizonInputs& in,
                                     const UncertaintyMargins& margins) {
    in.validate();
    std::vector<IslandingPrep> preps;
    std::vector<IslandingPrep>* preps_ptr = nullptr;
    if (in.cfg.islanding == HorizonConfig::Islanding::decomposed) {
        preps = prepare_islanding(in);
        preps_ptr = &preps;
    }

    HorizonResult res = run_inner(in, margins, preps_ptr, nullptr);
    if (!res.feasible) return res;

    // Ex-post tap rounding, then a re-verified inner loop with pinned taps.
    if (in.cfg.round_taps && in.cfg.network_enabled &&
        !taps_are_integral(res.plan.rho)) {
        Eigen::VectorXd taps = res.plan.rho;
        for (int t = 0; t < taps.size(); ++t) taps[t] = std::round(taps[t]);
        HorizonResult rounded = run_inner(in, margins, preps_ptr, &taps);
        if (rounded.feasible) {
            res = rounded;
        } else {
            res.diagnosis.message +=
                (res.diagnosis.message.empty() ? "" : "; ") +
                std::string("tap rounding infeasible, keeping fractional taps");
        }
    }

    // Charge/discharge complementarity. The relaxation almost always holds
    // at the optimum (eta < 1 makes simultaneous operation wasteful); if
    // not, re-solve the final program with binaries on the violated pairs.
    const bool force_all = in.cfg.complementarity ==
                           HorizonConfig::Complementarity::always_binary;
    bool plan_violates = force_all;
    if (in.cfg.complementarity != HorizonConfig::Complementarity::relaxed) {
        for (int b = 0; b < res.plan.pch.rows() && !plan_violates; ++b)
            for (int t = 0; t < res.plan.pch.cols(); ++t)
                if (res.plan.pch(b, t) * res.plan.pdis(b, t) > 1e-6) {
                    plan_violates = true;
                    break;
                }
        for (const auto& s : res.plan.islanded)
            if (s.comp_violation > 1e-6) plan_violates = true;
    }
    if (plan_violates) {
        Eigen::MatrixXcd v_bar = res.v_bar;
        HorizonBuilder builder(in, margins, v_bar);
        builder.build(preps_ptr);
        if (in.cfg.round_taps && in.cfg.network_enabled)
            builder.fix_taps(res.plan.rho);
        auto compiled = builder.program().compile();
        SocpSolver solver(in.cfg.solver);
        auto sol = solver.solve(compiled);
        if (sol.ok()) {
            auto viol = builder.complementarity_violations(sol, 1e-6);
            if (force_all) {
                viol.clear();
                for (size_t b = 0; b < in.fleet->bess.size(); ++b)
                    for (int t = 0; t < in.cfg.horizon; ++t)
                        viol.push_back({static_cast<int>(b), t, -1});
            }
            if (!viol.empty()) {
                builder.add_complementarity_binaries(viol);
                BnbSolver bnb(in.cfg.solver);
                auto bsol = bnb.solve_mixed(builder.program().compile(),
                                            builder.program().binary_vars());
                if (bsol.ok()) {
                    auto v_ac = res.plan.v_ac;
                    auto i_ac = res.plan.i_br_ac;
                    const auto inner_iters = res.plan.inner_iterations;
                    const auto dv_hist = res.plan.inner_dv_history;
                    res.plan = builder.extract(bsol);
                    res.plan.inner_iterations = inner_iters;
                    res.plan.inner_dv_history = dv_hist;
                    res.plan.inner_converged = true;
                    // Refresh the AC projection at the new setpoints.
                    for (int t = 0; t < in.cfg.horizon; ++t) {
                        const auto inj = builder.injections_at(res.plan, t);
                        auto st = solve_bfs(*in.topo, inj, res.plan.rho[t]);
                        if (st.converged) {
                            v_ac.col(t) = st.voltages.v;
                            i_ac.col(t) = st.i_br;
                        }
                    }
                    res.plan.v_ac = v_ac;
                    res.plan.i_br_ac = i_ac;
                }
            }
        }
    }

    // Decomposed mode: final per-tau islanded summaries from the subproblems.
    if (in.cfg.islanding == HorizonConfig::Islanding::decomposed &&
        !in.fleet->bess.empty()) {
        res.plan.islanded.clear();
        res.plan.costs.curt_g_isl = 0.0;
        res.plan.costs.curt_l_isl = 0.0;
        for (const auto& prep : preps) {
            IslandedSummary s;
            s.tau_abs = in.cfg.t_mpc + prep.tau_offset;
            const double e_link = prep.tau_offset == 0
                                      ? in.bess_e_start[0]
                                      : res.plan.eb(0, prep.tau_offset - 1);
            s.e_start = e_link;
            IslandedSubproblem sub(in, s.tau_abs);
            auto r = sub.solve_at(e_link);
            s.feasible = r.feasible;
            s.cost = r.cost;
            s.alpha_min_seen = r.alpha_min_seen;
            s.comp_violation = r.comp_violation;
            s.e_traj = r.e_traj;
            res.plan.costs.curt_g_isl += r.cost_curt;
            res.plan.costs.curt_l_isl += r.cost_shed;
            res.plan.islanded.push_back(std::move(s));
        }
    }
    return res;
}

}  // namespace adg
