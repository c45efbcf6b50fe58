#include "adg/conic_program.hpp"

#include <algorithm>
#include <cmath>

#include "adg/common.hpp"

namespace adg {

const char* family_name(Family f) {
    switch (f) {
        case Family::balance: return "balance";
        case Family::voltage_upper: return "voltage_upper";
        case Family::voltage_lower: return "voltage_lower";
        case Family::current: return "current";
        case Family::device: return "device";
        case Family::energy: return "energy";
        case Family::reserve: return "reserve";
        case Family::islanding: return "islanding";
        case Family::other: return "other";
    }
    return "?";
}

int ConicProgram::add_var(const std::string& name, double lb, double ub,
                          VarKind kind) {
    if (lb > ub) throw ModelError("variable '" + name + "' has lb > ub");
    int idx = num_vars();
    names_.push_back(name);
    lb_.push_back(lb);
    ub_.push_back(ub);
    kind_.push_back(kind);
    if (kind == VarKind::binary) binaries_.push_back(idx);
    return idx;
}

void ConicProgram::set_bounds(int v, double lb, double ub) {
    if (lb > ub) throw ModelError("set_bounds: lb > ub for " + names_[v]);
    lb_[v] = lb;
    ub_[v] = ub;
}

int ConicProgram::add_eq(LinExpr expr, Family family) {
    eqs_.push_back({std::move(expr), family});
    return static_cast<int>(eqs_.size()) - 1;
}

void ConicProgram::add_le(LinExpr expr, Family family) {
    les_.push_back({std::move(expr), family});
}

void ConicProgram::add_soc(LinExpr radius, std::vector<LinExpr> args,
                           Family family) {
    socs_.push_back({std::move(radius), std::move(args), family});
}

namespace {

// Merge duplicate variable indices in an expression into sparse triplets.
void expr_to_triplets(const LinExpr& e, int row, double sign,
                      std::vector<Eigen::Triplet<double>>& out,
                      std::vector<double>& scratch,
                      std::vector<int>& touched) {
    for (const auto& [v, c] : e.terms()) {
        if (scratch[v] == 0.0) touched.push_back(v);
        scratch[v] += sign * c;
    }
    for (int v : touched) {
        if (scratch[v] != 0.0) out.emplace_back(row, v, scratch[v]);
        scratch[v] = 0.0;
    }
    touched.clear();
}

}  // namespace

CompiledProblem ConicProgram::compile() const {
    const int n = num_vars();
    const double inf = std::numeric_limits<double>::infinity();

    CompiledProblem p;
    p.lb_row.assign(n, -1);
    p.ub_row.assign(n, -1);

    // Count LP rows: explicit <= constraints plus finite variable bounds.
    int n_bound_rows = 0;
    for (int v = 0; v < n; ++v) {
        if (lb_[v] > -inf) ++n_bound_rows;
        if (ub_[v] < inf) ++n_bound_rows;
    }
    p.n_lp = static_cast<int>(les_.size()) + n_bound_rows;

    int n_soc_rows = 0;
    for (const auto& s : socs_) n_soc_rows += 1 + static_cast<int>(s.args.size());
    const int m = p.n_lp + n_soc_rows;
    const int neq = static_cast<int>(eqs_.size());

    std::vector<Eigen::Triplet<double>> ta, tg;
    std::vector<double> scratch(n, 0.0);
    std::vector<int> touched;

    p.b.resize(neq);
    p.eq_row.resize(neq);
    for (int i = 0; i < neq; ++i) {
        // expr == 0  ->  (terms) x = -constant
        expr_to_triplets(eqs_[i].expr, i, 1.0, ta, scratch, touched);
        p.b[i] = -eqs_[i].expr.constant();
        p.eq_row[i] = i;
    }

    p.h.resize(m);
    int row = 0;
    // expr <= 0  ->  G row = terms, h = -constant  (G x + s = h, s >= 0)
    for (const auto& lc : les_) {
        expr_to_triplets(lc.expr, row, 1.0, tg, scratch, touched);
        p.h[row] = -lc.expr.constant();
        ++row;
    }
    for (int v = 0; v < n; ++v) {
        if (lb_[v] > -inf) {  // -x <= -lb
            tg.emplace_back(row, v, -1.0);
            p.h[row] = -lb_[v];
            p.lb_row[v] = row;
            ++row;
        }
        if (ub_[v] < inf) {  // x <= ub
            tg.emplace_back(row, v, 1.0);
            p.h[row] = ub_[v];
            p.ub_row[v] = row;
            ++row;
        }
    }
    // SOC blocks: s0 = radius(x), s_i = args_i(x); s = h - Gx.
    for (const auto& sc : socs_) {
        p.soc_dims.push_back(1 + static_cast<int>(sc.args.size()));
        expr_to_triplets(sc.radius, row, -1.0, tg, scratch, touched);
        p.h[row] = sc.radius.constant();
        ++row;
        for (const auto& a : sc.args) {
            expr_to_triplets(a, row, -1.0, tg, scratch, touched);
            p.h[row] = a.constant();
            ++row;
        }
    }

    p.A.resize(neq, n);
    p.A.setFromTriplets(ta.begin(), ta.end());
    p.G.resize(m, n);
    p.G.setFromTriplets(tg.begin(), tg.end());

    p.c = Eigen::VectorXd::Zero(n);
    for (const auto& [v, c] : objective_.terms()) p.c[v] += c;
    p.c0 = objective_.constant();
    return p;
}

ConicProgram ConicProgram::elastic_relaxation(
    const std::vector<Family>& families, std::vector<int>& slack_vars) const {
    ConicProgram r(*this);
    r.objective_ = LinExpr();
    slack_vars.clear();

    auto slack_for = [&](Family f) -> int {
        for (size_t i = 0; i < families.size(); ++i)
            if (families[i] == f) return static_cast<int>(i);
        return -1;
    };
    std::vector<int> svars;
    for (const Family f : families) {
        int v = r.add_var(std::string("elastic_") + family_name(f), 0.0,
                          std::numeric_limits<double>::infinity());
        svars.push_back(v);
        r.objective_ += LinExpr::var(v);
    }
    for (auto& lc : r.les_) {
        int k = slack_for(lc.family);
        if (k >= 0) lc.expr -= LinExpr::var(svars[k]);
    }
    for (auto& sc : r.socs_) {
        int k = slack_for(sc.family);
        if (k >= 0) sc.radius += LinExpr::var(svars[k]);
    }
    slack_vars = svars;
    return r;
}

}  // namespace adg
