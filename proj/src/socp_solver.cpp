#include "adg/socp_solver.hpp"

#include <Eigen/SparseCholesky>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <vector>

namespace adg {

const char* status_name(SolveStatus s) {
    switch (s) {
        case SolveStatus::optimal: return "optimal";
        case SolveStatus::primal_infeasible: return "primal_infeasible";
        case SolveStatus::dual_infeasible: return "dual_infeasible";
        case SolveStatus::iteration_limit: return "iteration_limit";
        case SolveStatus::numerical_error: return "numerical_error";
    }
    return "?";
}

namespace {

using Vec = Eigen::VectorXd;
using SpMat = Eigen::SparseMatrix<double>;

constexpr double kStepMax = 0.9999995;
constexpr double kStepMin = 1e-6;
constexpr double kGamma = 0.99;
constexpr double kSafeguard = 500.0;

struct ConeLayout {
    int n_lp = 0;
    std::vector<int> soc_start;  // row offsets of SOC blocks in z/s vectors
    std::vector<int> soc_dim;
    int m = 0;
    int degree() const { return n_lp + static_cast<int>(soc_dim.size()); }
};

/// Nesterov-Todd scaling state for all cones.
struct Scalings {
    Vec lp_v;  // s_i / z_i  (W^2 diagonal)
    Vec lp_w;  // sqrt(s_i / z_i)
    struct Soc {
        double eta = 1.0, eta2 = 1.0, a = 1.0;
        Vec q;  // wbar tail
    };
    std::vector<Soc> socs;
    bool identity = true;

    void reset_identity(const ConeLayout& lay) {
        lp_v = Vec::Ones(lay.n_lp);
        lp_w = Vec::Ones(lay.n_lp);
        socs.assign(lay.soc_dim.size(), {});
        for (size_t k = 0; k < lay.soc_dim.size(); ++k) {
            socs[k].q = Vec::Zero(lay.soc_dim[k] - 1);
            socs[k].a = 1.0;
        }
        identity = true;
    }

    // lambda = W z
    void apply_w(const ConeLayout& lay, const Vec& z, Vec& out) const {
        out.head(lay.n_lp) = lp_w.cwiseProduct(z.head(lay.n_lp));
        for (size_t k = 0; k < socs.size(); ++k) {
            const auto& sc = socs[k];
            const int i0 = lay.soc_start[k];
            const int d = lay.soc_dim[k];
            const double zeta = sc.q.dot(z.segment(i0 + 1, d - 1));
            const double factor = z[i0] + zeta / (1.0 + sc.a);
            out[i0] = sc.eta * (sc.a * z[i0] + zeta);
            out.segment(i0 + 1, d - 1) =
                sc.eta * (z.segment(i0 + 1, d - 1) + factor * sc.q);
        }
    }

    // out = W^{-1} v.  Uses Wbar^{-1} = J Wbar J.
    void apply_w_inv(const ConeLayout& lay, const Vec& v, Vec& out) const {
        out.head(lay.n_lp) = v.head(lay.n_lp).cwiseQuotient(lp_w);
        for (size_t k = 0; k < socs.size(); ++k) {
            const auto& sc = socs[k];
            const int i0 = lay.soc_start[k];
            const int d = lay.soc_dim[k];
            const double zeta = -sc.q.dot(v.segment(i0 + 1, d - 1));
            const double factor = v[i0] + zeta / (1.0 + sc.a);
            out[i0] = (sc.a * v[i0] + zeta) / sc.eta;
            out.segment(i0 + 1, d - 1) =
                (v.segment(i0 + 1, d - 1) - factor * sc.q) / sc.eta;
        }
    }

    // out += W^2 v (used in refinement residuals).
    void apply_w2_add(const ConeLayout& lay, const Vec& v, Vec& out) const {
        if (identity) {
            out += v;
            return;
        }
        out.head(lay.n_lp) += lp_v.cwiseProduct(v.head(lay.n_lp));
        for (size_t k = 0; k < socs.size(); ++k) {
            const auto& sc = socs[k];
            const int i0 = lay.soc_start[k];
            const int d = lay.soc_dim[k];
            // W^2 = eta^2 (2 wbar wbar' - J),  wbar = (a, q)
            const double wv = sc.a * v[i0] + sc.q.dot(v.segment(i0 + 1, d - 1));
            out[i0] += sc.eta2 * (2.0 * sc.a * wv - v[i0]);
            out.segment(i0 + 1, d - 1) +=
                sc.eta2 * (2.0 * wv * sc.q + v.segment(i0 + 1, d - 1));
        }
    }

    // Update from current (s, z); returns false if either leaves its cone.
    bool update(const ConeLayout& lay, const Vec& s, const Vec& z) {
        for (int i = 0; i < lay.n_lp; ++i)
            if (s[i] <= 0.0 || z[i] <= 0.0) return false;
        lp_v = s.head(lay.n_lp).cwiseQuotient(z.head(lay.n_lp));
        lp_w = lp_v.cwiseSqrt();
        for (size_t k = 0; k < socs.size(); ++k) {
            const int i0 = lay.soc_start[k];
            const int d = lay.soc_dim[k];
            const double sres =
                s[i0] * s[i0] - s.segment(i0 + 1, d - 1).squaredNorm();
            const double zres =
                z[i0] * z[i0] - z.segment(i0 + 1, d - 1).squaredNorm();
            if (sres <= 0.0 || zres <= 0.0) return false;
            const double snorm = std::sqrt(sres);
            const double znorm = std::sqrt(zres);
            Vec sbar = s.segment(i0, d) / snorm;
            Vec zbar = z.segment(i0, d) / znorm;
            auto& sc = socs[k];
            sc.eta2 = snorm / znorm;
            sc.eta = std::sqrt(sc.eta2);
            double gamma = std::sqrt(0.5 * (1.0 + sbar.dot(zbar)));
            sc.a = (0.5 / gamma) * (sbar[0] + zbar[0]);
            sc.q = (0.5 / gamma) * (sbar.tail(d - 1) - zbar.tail(d - 1));
        }
        identity = false;
        return true;
    }
};

// Jordan product u o v.
void conic_product(const ConeLayout& lay, const Vec& u, const Vec& v, Vec& out) {
    out.head(lay.n_lp) = u.head(lay.n_lp).cwiseProduct(v.head(lay.n_lp));
    for (size_t k = 0; k < lay.soc_dim.size(); ++k) {
        const int i0 = lay.soc_start[k];
        const int d = lay.soc_dim[k];
        out[i0] = u.segment(i0, d).dot(v.segment(i0, d));
        out.segment(i0 + 1, d - 1) = u[i0] * v.segment(i0 + 1, d - 1) +
                                     v[i0] * u.segment(i0 + 1, d - 1);
    }
}

// Jordan division out = u \ w  (solve u o out = w).
void conic_division(const ConeLayout& lay, const Vec& u, const Vec& w, Vec& out) {
    out.head(lay.n_lp) = w.head(lay.n_lp).cwiseQuotient(u.head(lay.n_lp));
    for (size_t k = 0; k < lay.soc_dim.size(); ++k) {
        const int i0 = lay.soc_start[k];
        const int d = lay.soc_dim[k];
        const double rho =
            u[i0] * u[i0] - u.segment(i0 + 1, d - 1).squaredNorm();
        const double u1w1 = u.segment(i0 + 1, d - 1).dot(w.segment(i0 + 1, d - 1));
        const double v0 = (u[i0] * w[i0] - u1w1) / rho;
        out[i0] = v0;
        out.segment(i0 + 1, d - 1) =
            (w.segment(i0 + 1, d - 1) - v0 * u.segment(i0 + 1, d - 1)) / u[i0];
    }
}

// Shift a point into the interior of K along the identity element.
void bring_to_cone(const ConeLayout& lay, const Vec& r, Vec& s) {
    double alpha = -1.0;
    for (int i = 0; i < lay.n_lp; ++i) alpha = std::max(alpha, -r[i]);
    for (size_t k = 0; k < lay.soc_dim.size(); ++k) {
        const int i0 = lay.soc_start[k];
        const int d = lay.soc_dim[k];
        alpha = std::max(alpha, r.segment(i0 + 1, d - 1).norm() - r[i0]);
    }
    s = r;
    if (alpha >= 0.0) {
        const double shift = 1.0 + alpha;
        s.head(lay.n_lp).array() += shift;
        for (size_t k = 0; k < lay.soc_dim.size(); ++k) s[lay.soc_start[k]] += shift;
    }
}

// Largest step a with lambda + a*d staying in the cone, for both
// directions expressed in the scaled space (ds = W^{-1} ds, dz = W dz).
double line_search(const ConeLayout& lay, const Vec& lambda, const Vec& ds,
                   const Vec& dz, double tau, double dtau, double kap,
                   double dkap) {
    double alpha = 2.0;
    if (lay.n_lp > 0) {
        const double rhomin =
            (ds.head(lay.n_lp).cwiseQuotient(lambda.head(lay.n_lp))).minCoeff();
        const double sigmin =
            (dz.head(lay.n_lp).cwiseQuotient(lambda.head(lay.n_lp))).minCoeff();
        const double worst = std::min(rhomin, sigmin);
        alpha = worst < 0.0 ? 1.0 / (-worst) : 1.0 / 1e-13;
    }
    if (dtau < 0.0) alpha = std::min(alpha, -tau / dtau);
    if (dkap < 0.0) alpha = std::min(alpha, -kap / dkap);

    for (size_t k = 0; k < lay.soc_dim.size(); ++k) {
        const int i0 = lay.soc_start[k];
        const int d = lay.soc_dim[k];
        const double ln2 =
            lambda[i0] * lambda[i0] - lambda.segment(i0 + 1, d - 1).squaredNorm();
        if (ln2 <= 0.0) continue;
        const double ln = std::sqrt(ln2);
        const Vec lbar = lambda.segment(i0, d) / ln;

        auto conic_limit = [&](const Vec& dir) {
            const double lbar_dir = lbar[0] * dir[i0] -
                                    lbar.tail(d - 1).dot(dir.segment(i0 + 1, d - 1));
            const double f = (lbar_dir + dir[i0]) / (lbar[0] + 1.0);
            const double r0 = lbar_dir / ln;
            const double rtail =
                (dir.segment(i0 + 1, d - 1) - f * lbar.tail(d - 1)).norm() / ln;
            return rtail - r0;
        };
        const double lim = std::max({0.0, conic_limit(ds), conic_limit(dz)});
        if (lim > 0.0) alpha = std::min(alpha, 1.0 / lim);
    }
    return std::clamp(alpha, kStepMin, kStepMax);
}

struct Equilibration {
    Vec d_col, d_rowA, d_rowG;
    double obj_scale = 1.0;
};

// Ruiz equilibration; SOC row blocks share one scaling factor so the
// cone geometry is preserved.
Equilibration equilibrate(SpMat& A, SpMat& G, Vec& b, Vec& h, Vec& c,
                          const ConeLayout& lay, int iters) {
    const int n = static_cast<int>(c.size());
    const int p = static_cast<int>(b.size());
    const int m = static_cast<int>(h.size());
    Equilibration eq;
    eq.d_col = Vec::Ones(n);
    eq.d_rowA = Vec::Ones(p);
    eq.d_rowG = Vec::Ones(m);

    for (int it = 0; it < iters; ++it) {
        Vec cmax = Vec::Zero(n), ramax = Vec::Zero(p), rgmax = Vec::Zero(m);
        for (int j = 0; j < A.outerSize(); ++j)
            for (SpMat::InnerIterator v(A, j); v; ++v) {
                const double a = std::abs(v.value());
                cmax[v.col()] = std::max(cmax[v.col()], a);
                ramax[v.row()] = std::max(ramax[v.row()], a);
            }
        for (int j = 0; j < G.outerSize(); ++j)
            for (SpMat::InnerIterator v(G, j); v; ++v) {
                const double a = std::abs(v.value());
                cmax[v.col()] = std::max(cmax[v.col()], a);
                rgmax[v.row()] = std::max(rgmax[v.row()], a);
            }
        // One factor per SOC block.
        for (size_t k = 0; k < lay.soc_dim.size(); ++k) {
            const int i0 = lay.soc_start[k];
            const double blk =
                rgmax.segment(i0, lay.soc_dim[k]).maxCoeff();
            rgmax.segment(i0, lay.soc_dim[k]).setConstant(blk);
        }
        auto factor = [](double v) {
            return (v > 1e-12) ? 1.0 / std::sqrt(v) : 1.0;
        };
        Vec fc = cmax.unaryExpr(factor), fa = ramax.unaryExpr(factor),
            fg = rgmax.unaryExpr(factor);
        for (int j = 0; j < A.outerSize(); ++j)
            for (SpMat::InnerIterator v(A, j); v; ++v)
                v.valueRef() *= fa[v.row()] * fc[v.col()];
        for (int j = 0; j < G.outerSize(); ++j)
            for (SpMat::InnerIterator v(G, j); v; ++v)
                v.valueRef() *= fg[v.row()] * fc[v.col()];
        eq.d_col.array() *= fc.array();
        eq.d_rowA.array() *= fa.array();
        eq.d_rowG.array() *= fg.array();
    }
    b.array() *= eq.d_rowA.array();
    h.array() *= eq.d_rowG.array();
    c.array() *= eq.d_col.array();
    eq.obj_scale = std::max(1.0, c.lpNorm<Eigen::Infinity>());
    c /= eq.obj_scale;
    return eq;
}

}  // namespace

Solution SocpSolver::solve(const CompiledProblem& prob) {
    const auto t_start = std::chrono::steady_clock::now();
    Solution sol;

    SpMat A = prob.A, G = prob.G;
    Vec b = prob.b, h = prob.h, c = prob.c;
    const int n = static_cast<int>(c.size());
    const int p = static_cast<int>(b.size());
    const int m = static_cast<int>(h.size());

    ConeLayout lay;
    lay.n_lp = prob.n_lp;
    lay.m = m;
    int off = prob.n_lp;
    for (int d : prob.soc_dims) {
        lay.soc_start.push_back(off);
        lay.soc_dim.push_back(d);
        off += d;
    }

    Equilibration eq;
    if (settings_.equilibrate) {
        eq = equilibrate(A, G, b, h, c, lay, 3);
    } else {
        eq.d_col = Vec::Ones(n);
        eq.d_rowA = Vec::Ones(p);
        eq.d_rowG = Vec::Ones(m);
    }

    const SpMat At = A.transpose();
    const SpMat Gt = G.transpose();
    const double delta = settings_.delta_static;

    // ---- KKT assembly with fixed symbolic pattern ----
    // [ dI   A'   G'      ]
    // [ A   -dI   0       ]
    // [ G    0   -(W^2+dI)]
    const int dim = n + p + m;
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(A.nonZeros() + G.nonZeros() + dim + 9 * lay.soc_dim.size());
    for (int i = 0; i < n; ++i) trip.emplace_back(i, i, delta);
    for (int j = 0; j < A.outerSize(); ++j)
        for (SpMat::InnerIterator v(A, j); v; ++v)
            trip.emplace_back(n + v.row(), v.col(), v.value());
    for (int i = 0; i < p; ++i) trip.emplace_back(n + i, n + i, -delta);
    for (int j = 0; j < G.outerSize(); ++j)
        for (SpMat::InnerIterator v(G, j); v; ++v)
            trip.emplace_back(n + p + v.row(), v.col(), v.value());
    // Scaling block: LP diagonal plus dense lower triangles per SOC.
    for (int i = 0; i < lay.n_lp; ++i)
        trip.emplace_back(n + p + i, n + p + i, -1.0 - delta);
    for (size_t k = 0; k < lay.soc_dim.size(); ++k) {
        const int i0 = n + p + lay.soc_start[k];
        for (int r = 0; r < lay.soc_dim[k]; ++r)
            for (int col = 0; col <= r; ++col)
                trip.emplace_back(i0 + r, i0 + col,
                                  (r == col) ? -1.0 - delta : 0.0);
    }
    SpMat K(dim, dim);
    K.setFromTriplets(trip.begin(), trip.end());
    K.makeCompressed();

    // Record value slots of the mutable scaling entries.
    auto slot = [&](int row, int col) -> int {
        for (int idx = K.outerIndexPtr()[col]; idx < K.outerIndexPtr()[col + 1];
             ++idx)
            if (K.innerIndexPtr()[idx] == row) return idx;
        return -1;
    };
    std::vector<int> lp_slots(lay.n_lp);
    for (int i = 0; i < lay.n_lp; ++i)
        lp_slots[i] = slot(n + p + i, n + p + i);
    std::vector<std::vector<int>> soc_slots(lay.soc_dim.size());
    for (size_t k = 0; k < lay.soc_dim.size(); ++k) {
        const int i0 = n + p + lay.soc_start[k];
        for (int r = 0; r < lay.soc_dim[k]; ++r)
            for (int col = 0; col <= r; ++col)
                soc_slots[k].push_back(slot(i0 + r, i0 + col));
    }

    Eigen::SimplicialLDLT<SpMat, Eigen::Lower,
                          Eigen::AMDOrdering<SpMat::StorageIndex>>
        ldlt;
    ldlt.analyzePattern(K);
    ldlt.factorize(K);
    if (ldlt.info() != Eigen::Success) {
        sol.status = SolveStatus::numerical_error;
        return sol;
    }

    Scalings W;
    W.reset_identity(lay);

    auto write_scalings = [&]() {
        double* vals = K.valuePtr();
        for (int i = 0; i < lay.n_lp; ++i)
            vals[lp_slots[i]] = -W.lp_v[i] - delta;
        for (size_t k = 0; k < lay.soc_dim.size(); ++k) {
            const auto& sc = W.socs[k];
            const int d = lay.soc_dim[k];
            int s = 0;
            for (int r = 0; r < d; ++r)
                for (int col = 0; col <= r; ++col) {
                    const double wr = (r == 0) ? sc.a : sc.q[r - 1];
                    const double wc = (col == 0) ? sc.a : sc.q[col - 1];
                    double jrc = (r == col) ? ((r == 0) ? 1.0 : -1.0) : 0.0;
                    double w2 = sc.eta2 * (2.0 * wr * wc - jrc);
                    vals[soc_slots[k][s++]] = -w2 - ((r == col) ? delta : 0.0);
                }
        }
    };

    // KKT solve with iterative refinement against the unregularized matrix.
    auto kkt_solve = [&](const Vec& rx, const Vec& ry, const Vec& rz, Vec& dx,
                         Vec& dy, Vec& dz) {
        Vec rhs(dim);
        rhs << rx, ry, rz;
        Vec u = ldlt.solve(rhs);
        const double thresh =
            (1.0 + rhs.lpNorm<Eigen::Infinity>()) * 1e-13;
        double prev_err = std::numeric_limits<double>::max();
        Vec du;
        for (int it = 0; it <= settings_.refine_steps; ++it) {
            Vec ex = rx - Gt * u.tail(m);
            if (p > 0) ex -= At * u.segment(n, p);
            Vec ey = ry - A * u.head(n);
            Vec ez = rz - G * u.head(n);
            W.apply_w2_add(lay, u.tail(m), ez);
            double err = std::max(ex.lpNorm<Eigen::Infinity>(),
                                  ez.lpNorm<Eigen::Infinity>());
            if (p > 0) err = std::max(err, ey.lpNorm<Eigen::Infinity>());
            if (it > 0 && err > prev_err) {
                u -= du;
                break;
            }
            if (err < thresh || it == settings_.refine_steps) break;
            prev_err = err;
            Vec e(dim);
            e << ex, ey, ez;
            du = ldlt.solve(e);
            u += du;
        }
        dx = u.head(n);
        dy = u.segment(n, p);
        dz = u.tail(m);
    };

    // ---- Initialization ----
    Vec x(n), y(p), z(m), s(m);
    {
        Vec dx, dy, dz;
        kkt_solve(Vec::Zero(n), b, h, dx, dy, dz);
        x = dx;
        bring_to_cone(lay, -dz, s);
        kkt_solve(-c, Vec::Zero(p), Vec::Zero(m), dx, dy, dz);
        y = dy;
        bring_to_cone(lay, dz, z);
    }
    double tau = 1.0, kap = 1.0;

    const double resx0 = std::max(1.0, c.norm());
    const double resy0 = std::max(1.0, b.norm());
    const double resz0 = std::max(1.0, h.norm());

    struct Iterate {
        Vec x, y, z, s;
        double tau, kap;
        double pres, dres, gap, relgap, pcost, dcost, kapovert;
        bool relgap_valid;
        double pinfres, dinfres;
        bool pinf_valid, dinf_valid;
        double hresx, hresy, hresz;
        double cx, by, hz;
    };
    Iterate best;
    bool have_best = false;

    Vec rx(n), ry(p), rz(m);
    double rt = 0.0;
    Iterate cur;

    auto compute_residuals = [&]() {
        rx = -(Gt * z);
        if (p > 0) rx -= At * y;
        cur.hresx = rx.norm();
        rx -= tau * c;
        if (p > 0) {
            ry = A * x;
            cur.hresy = ry.norm();
            ry -= tau * b;
        } else {
            ry.resize(0);
            cur.hresy = 0.0;
        }
        rz = s + G * x;
        cur.hresz = rz.norm();
        rz -= tau * h;
        cur.cx = c.dot(x);
        cur.by = p > 0 ? b.dot(y) : 0.0;
        cur.hz = h.dot(z);
        rt = kap + cur.cx + cur.by + cur.hz;

        const double nx = x.norm(), ny = y.norm(), nz = z.norm(), ns = s.norm();
        cur.gap = s.dot(z);
        cur.pcost = cur.cx / tau;
        cur.dcost = -(cur.hz + cur.by) / tau;
        cur.kapovert = kap / tau;
        if (cur.pcost < 0.0) {
            cur.relgap = cur.gap / (-cur.pcost);
            cur.relgap_valid = true;
        } else if (cur.dcost > 0.0) {
            cur.relgap = cur.gap / cur.dcost;
            cur.relgap_valid = true;
        } else {
            cur.relgap_valid = false;
            cur.relgap = std::numeric_limits<double>::max();
        }
        const double nry =
            p > 0 ? ry.norm() / std::max(resy0 + nx, 1.0) : 0.0;
        const double nrz = rz.norm() / std::max(resz0 + nx + ns, 1.0);
        cur.pres = std::max(nry, nrz) / tau;
        cur.dres = rx.norm() / std::max(resx0 + ny + nz, 1.0) / tau;
        cur.pinf_valid = false;
        cur.dinf_valid = false;
        if ((cur.hz + cur.by) / std::max(ny + nz, 1.0) < -settings_.reltol) {
            cur.pinfres = cur.hresx / std::max(ny + nz, 1.0);
            cur.pinf_valid = true;
        }
        if (cur.cx / std::max(nx, 1.0) < -settings_.reltol) {
            cur.dinfres = std::max(cur.hresy / std::max(nx, 1.0),
                                   cur.hresz / std::max(nx + ns, 1.0));
            cur.dinf_valid = true;
        }
    };

    enum class Check { none, optimal, pinf, dinf };
    auto check_exit = [&](bool reduced) -> Check {
        const double feastol =
            reduced ? settings_.feastol_inacc : settings_.feastol;
        const double abstol = reduced ? settings_.abstol_inacc : settings_.abstol;
        const double reltol = reduced ? settings_.reltol_inacc : settings_.reltol;
        if ((-cur.cx > 0.0 || -cur.by - cur.hz >= -abstol) &&
            cur.pres < feastol && cur.dres < feastol &&
            (cur.gap < abstol || (cur.relgap_valid && cur.relgap < reltol)))
            return Check::optimal;
        if (cur.dinf_valid && cur.dinfres < feastol && tau < kap)
            return Check::dinf;
        if (cur.pinf_valid && cur.pinfres < feastol &&
            (tau < kap || (tau < feastol && kap < feastol)))
            return Check::pinf;
        return Check::none;
    };

    auto better_than = [](const Iterate& a, const Iterate& b) {
        auto merit = [](const Iterate& w) {
            double v = std::max(w.pres, w.dres);
            if (w.relgap_valid) v = std::max(v, w.relgap);
            return v;
        };
        return merit(a) < merit(b);
    };
    auto snapshot = [&]() {
        cur.x = x;
        cur.y = y;
        cur.z = z;
        cur.s = s;
        cur.tau = tau;
        cur.kap = kap;
    };

    auto finish = [&](SolveStatus st, bool inaccurate) {
        sol.status = st;
        sol.stats.inaccurate = inaccurate;
        sol.stats.pres = cur.pres;
        sol.stats.dres = cur.dres;
        sol.stats.gap = cur.gap;
        // Back-substitute equilibration. For infeasibility certificates the
        // 1/tau normalization is skipped (tau ~ 0); scale-free directions.
        double denom = (st == SolveStatus::optimal ||
                        st == SolveStatus::iteration_limit)
                           ? tau
                           : 1.0;
        sol.x = (x.array() * eq.d_col.array()).matrix() / denom;
        sol.y = p > 0 ? Vec((y.array() * eq.d_rowA.array()).matrix() *
                            (eq.obj_scale / denom))
                      : Vec();
        sol.z = (z.array() * eq.d_rowG.array()).matrix() * (eq.obj_scale / denom);
        sol.s = (s.array() / eq.d_rowG.array()).matrix() / denom;
        sol.objective = cur.pcost * eq.obj_scale + prob.c0;
        sol.stats.seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                          t_start)
                .count();
    };

    Vec dx1(n), dy1(p), dz1(m), dx2(n), dy2(p), dz2(m);
    Vec lambda(m), w_dz(m), ds_by_w(m), dscratch(m), dsfinal(m);
    double prev_pres = std::numeric_limits<double>::max();
    double last_step = 1.0;

    const Vec rhs1x = -c;

    for (int iter = 0;; ++iter) {
        sol.stats.iterations = iter;
        compute_residuals();

        if (settings_.verbose) {
            std::printf(
                "it %3d  pcost %+.6e dcost %+.6e  gap %.2e pres %.2e dres "
                "%.2e  k/t %.2e\n",
                iter, cur.pcost, cur.dcost, cur.gap, cur.pres, cur.dres,
                cur.kapovert);
        }

        // Unreliable direction safeguard (ratio test only above feastol,
        // where residual growth is meaningful rather than rounding noise).
        if (iter > 0 &&
            ((cur.pres > kSafeguard * prev_pres && cur.pres > settings_.feastol) ||
             cur.gap < 0.0)) {
            if (have_best) {
                x = best.x; y = best.y; z = best.z; s = best.s;
                tau = best.tau; kap = best.kap;
                cur = best;
            }
            Check chk = check_exit(true);
            if (chk == Check::optimal) return finish(SolveStatus::optimal, true), sol;
            if (chk == Check::pinf)
                return finish(SolveStatus::primal_infeasible, true), sol;
            if (chk == Check::dinf)
                return finish(SolveStatus::dual_infeasible, true), sol;
            return finish(SolveStatus::numerical_error, true), sol;
        }
        prev_pres = cur.pres;

        Check chk = check_exit(false);
        if (chk == Check::optimal) return finish(SolveStatus::optimal, false), sol;
        if (chk == Check::pinf)
            return finish(SolveStatus::primal_infeasible, false), sol;
        if (chk == Check::dinf)
            return finish(SolveStatus::dual_infeasible, false), sol;

        if (iter > 0 && last_step <= kStepMin * kGamma + 1e-16) {
            if (have_best && better_than(best, cur)) {
                x = best.x; y = best.y; z = best.z; s = best.s;
                tau = best.tau; kap = best.kap;
                cur = best;
            }
            chk = check_exit(true);
            if (chk == Check::optimal) return finish(SolveStatus::optimal, true), sol;
            if (chk == Check::pinf)
                return finish(SolveStatus::primal_infeasible, true), sol;
            if (chk == Check::dinf)
                return finish(SolveStatus::dual_infeasible, true), sol;
            return finish(SolveStatus::numerical_error, true), sol;
        }
        if (iter >= settings_.max_iter) {
            if (have_best && better_than(best, cur)) {
                x = best.x; y = best.y; z = best.z; s = best.s;
                tau = best.tau; kap = best.kap;
                cur = best;
            }
            chk = check_exit(true);
            if (chk == Check::optimal) return finish(SolveStatus::optimal, true), sol;
            if (chk == Check::pinf)
                return finish(SolveStatus::primal_infeasible, true), sol;
            if (chk == Check::dinf)
                return finish(SolveStatus::dual_infeasible, true), sol;
            return finish(SolveStatus::iteration_limit, true), sol;
        }

        snapshot();
        if (!have_best || better_than(cur, best)) {
            best = cur;
            have_best = true;
        }

        if (!W.update(lay, s, z)) {
            return finish(SolveStatus::numerical_error, true), sol;
        }
        W.apply_w(lay, z, lambda);
        write_scalings();
        ldlt.factorize(K);
        if (ldlt.info() != Eigen::Success) {
            return finish(SolveStatus::numerical_error, true), sol;
        }

        const double mu = (cur.gap + kap * tau) / (lay.degree() + 1);

        // Direction 1 (for tau elimination): RHS [-c; b; h].
        kkt_solve(rhs1x, b, h, dx1, dy1, dz1);
        const double dtau_denom = kap / tau - c.dot(dx1) -
                                  (p > 0 ? b.dot(dy1) : 0.0) - h.dot(dz1);

        // Affine predictor: RHS [rx; -ry; s - rz].
        kkt_solve(rx, p > 0 ? Vec(-ry) : Vec(), s - rz, dx2, dy2, dz2);
        const double dtau_aff =
            (rt - kap + c.dot(dx2) + (p > 0 ? b.dot(dy2) : 0.0) + h.dot(dz2)) /
            dtau_denom;
        dz2 += dtau_aff * dz1;
        W.apply_w(lay, dz2, w_dz);
        ds_by_w = -w_dz - lambda;
        const double dkap_aff = -kap - kap / tau * dtau_aff;
        const double alpha_aff =
            line_search(lay, lambda, ds_by_w, w_dz, tau, dtau_aff, kap, dkap_aff);
        const double sigma =
            std::clamp(std::pow(1.0 - alpha_aff, 3), 1e-4, 0.99999);

        // Combined corrector RHS.
        conic_product(lay, lambda, lambda, dscratch);       // lambda o lambda
        Vec corr(m);
        conic_product(lay, ds_by_w, w_dz, corr);            // (W^-1 ds) o (W dz)
        dscratch += corr;
        const double sigmamu = sigma * mu;
        dscratch.head(lay.n_lp).array() -= sigmamu;
        for (size_t k = 0; k < lay.soc_dim.size(); ++k)
            dscratch[lay.soc_start[k]] -= sigmamu;
        conic_division(lay, lambda, dscratch, ds_by_w);     // lambda \ ds~
        W.apply_w(lay, ds_by_w, corr);                      // W (lambda \ ds~)

        const double one_ms = 1.0 - sigma;
        kkt_solve(one_ms * rx, p > 0 ? Vec(-one_ms * ry) : Vec(),
                  Vec(-one_ms * rz + corr), dx2, dy2, dz2);
        const double bkap = kap * tau + dkap_aff * dtau_aff - sigmamu;
        const double dtau = (one_ms * rt - bkap / tau + c.dot(dx2) +
                             (p > 0 ? b.dot(dy2) : 0.0) + h.dot(dz2)) /
                            dtau_denom;
        dx2 += dtau * dx1;
        if (p > 0) dy2 += dtau * dy1;
        dz2 += dtau * dz1;
        W.apply_w(lay, dz2, w_dz);
        // ds_by_w currently holds lambda \ ds~.
        ds_by_w = -(ds_by_w + w_dz);
        const double dkap = -(bkap + kap * dtau) / tau;

        double alpha = kGamma * line_search(lay, lambda, ds_by_w, w_dz, tau,
                                            dtau, kap, dkap);
        last_step = alpha;
        W.apply_w(lay, ds_by_w, dsfinal);

        x += alpha * dx2;
        if (p > 0) y += alpha * dy2;
        z += alpha * dz2;
        s += alpha * dsfinal;
        kap += alpha * dkap;
        tau += alpha * dtau;
    }
}

}  // namespace adg
