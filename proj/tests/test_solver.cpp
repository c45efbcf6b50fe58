#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "adg/branch_and_bound.hpp"
#include "adg/conic_program.hpp"
#include "adg/socp_solver.hpp"
#include "doctest.h"

using namespace adg;

namespace {
Solution solve(const ConicProgram& p) {
    SocpSolver solver;
    return solver.solve(p.compile());
}
}  // namespace

TEST_CASE("lp with unique vertex optimum") {
    ConicProgram p;
    int x = p.add_var("x", 0.0, 0.6);
    int y = p.add_var("y", 0.0, 0.8);
    p.add_le(LinExpr::var(x) + LinExpr::var(y) - 1.0);
    p.set_objective(-2.0 * LinExpr::var(x) - LinExpr::var(y));
    auto sol = solve(p);
    REQUIRE(sol.ok());
    CHECK(sol.objective == doctest::Approx(-1.6).epsilon(1e-7));
    CHECK(sol.x[x] == doctest::Approx(0.6).epsilon(1e-6));
    CHECK(sol.x[y] == doctest::Approx(0.4).epsilon(1e-6));
}

TEST_CASE("lp degenerate face returns optimal value") {
    ConicProgram p;
    int x = p.add_var("x", 0.0, 10.0);
    int y = p.add_var("y", 0.0, 10.0);
    p.add_le(LinExpr::var(x) + LinExpr::var(y) - 1.0);
    p.set_objective(-LinExpr::var(x) - LinExpr::var(y));
    auto sol = solve(p);
    REQUIRE(sol.ok());
    CHECK(sol.objective == doctest::Approx(-1.0).epsilon(1e-7));
}

TEST_CASE("equality dual sign convention") {
    // min x s.t. x = 3.  With L = c'x + y'(Ax - b), stationarity gives y = -1.
    ConicProgram p;
    int x = p.add_var("x", -10.0, 10.0);
    int eq = p.add_eq(LinExpr::var(x) - 3.0);
    p.set_objective(LinExpr::var(x));
    auto sol = solve(p);
    REQUIRE(sol.ok());
    CHECK(sol.x[x] == doctest::Approx(3.0));
    CHECK(sol.y[eq] == doctest::Approx(-1.0).epsilon(1e-6));
}

TEST_CASE("soc projection distance to line") {
    // min t s.t. ||(x - 1, y - 2)|| <= t, x + y = 1  ->  t = sqrt(2)
    ConicProgram p;
    int x = p.add_var("x", -10.0, 10.0);
    int y = p.add_var("y", -10.0, 10.0);
    int t = p.add_var("t", 0.0, 10.0);
    p.add_eq(LinExpr::var(x) + LinExpr::var(y) - 1.0);
    p.add_soc(LinExpr::var(t),
              {LinExpr::var(x) - 1.0, LinExpr::var(y) - 2.0});
    p.set_objective(LinExpr::var(t));
    auto sol = solve(p);
    REQUIRE(sol.ok());
    CHECK(sol.objective == doctest::Approx(std::sqrt(2.0)).epsilon(1e-7));
    CHECK(sol.x[x] == doctest::Approx(0.0).epsilon(1e-5));
    CHECK(sol.x[y] == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("soc norm-ball linear optimization") {
    // min -(x + y) s.t. ||(x, y)|| <= sqrt(2)  ->  x = y = 1
    ConicProgram p;
    int x = p.add_var("x", -10.0, 10.0);
    int y = p.add_var("y", -10.0, 10.0);
    p.add_soc(LinExpr(std::sqrt(2.0)), {LinExpr::var(x), LinExpr::var(y)});
    p.set_objective(-LinExpr::var(x) - LinExpr::var(y));
    auto sol = solve(p);
    REQUIRE(sol.ok());
    CHECK(sol.x[x] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(sol.x[y] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("primal infeasible lp") {
    ConicProgram p;
    int x = p.add_var("x", 1.0, 2.0);
    p.add_le(LinExpr::var(x) - 0.5);  // x <= 0.5 but x >= 1
    p.set_objective(LinExpr::var(x));
    auto sol = solve(p);
    CHECK(sol.status == SolveStatus::primal_infeasible);
}

TEST_CASE("infeasible equalities") {
    ConicProgram p;
    int x = p.add_var("x", -5.0, 5.0);
    int y = p.add_var("y", -5.0, 5.0);
    p.add_eq(LinExpr::var(x) + LinExpr::var(y) - 1.0);
    p.add_eq(LinExpr::var(x) + LinExpr::var(y) - 2.0);
    p.set_objective(LinExpr::var(x));
    auto sol = solve(p);
    CHECK(sol.status == SolveStatus::primal_infeasible);
}

TEST_CASE("unbounded problem reported as dual infeasible") {
    ConicProgram p;
    int x = p.add_var("x", 0.0, std::numeric_limits<double>::infinity());
    p.set_objective(-LinExpr::var(x));
    auto sol = solve(p);
    CHECK(sol.status == SolveStatus::dual_infeasible);
}

TEST_CASE("random lp certified by duality") {
    std::mt19937 rng(7);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 8, mrows = 12;
        ConicProgram p;
        std::vector<int> xs;
        for (int i = 0; i < n; ++i) xs.push_back(p.add_var("x", -2.0, 2.0));
        for (int r = 0; r < mrows; ++r) {
            LinExpr e;
            for (int i = 0; i < n; ++i) e += u(rng) * LinExpr::var(xs[i]);
            p.add_le(e - (1.0 + std::abs(u(rng))));  // rhs > 0 keeps x=0 feasible
        }
        LinExpr obj;
        for (int i = 0; i < n; ++i) obj += u(rng) * LinExpr::var(xs[i]);
        p.set_objective(obj);
        auto compiled = p.compile();
        SocpSolver solver;
        auto sol = solver.solve(compiled);
        REQUIRE(sol.ok());
        // Strong duality: c'x == -b'y - h'z at optimum.
        const double dual_obj = -compiled.h.dot(sol.z);
        CHECK(sol.objective == doctest::Approx(dual_obj).epsilon(1e-6));
        // Primal feasibility.
        Eigen::VectorXd slack = compiled.h - compiled.G * sol.x;
        CHECK(slack.minCoeff() > -1e-7);
    }
}

TEST_CASE("random socp certified by duality") {
    std::mt19937 rng(11);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int trial = 0; trial < 10; ++trial) {
        const int n = 6;
        ConicProgram p;
        std::vector<int> xs;
        for (int i = 0; i < n; ++i) xs.push_back(p.add_var("x", -3.0, 3.0));
        // A few random norm constraints ||Fx + g|| <= t_r (affine radius).
        for (int r = 0; r < 3; ++r) {
            std::vector<LinExpr> args;
            for (int k = 0; k < 2; ++k) {
                LinExpr e(0.3 * u(rng));
                for (int i = 0; i < n; ++i) e += u(rng) * LinExpr::var(xs[i]);
                args.push_back(e);
            }
            LinExpr radius(2.0 + u(rng));
            radius += 0.2 * u(rng) * LinExpr::var(xs[r]);
            p.add_soc(radius, args);
        }
        p.add_eq(LinExpr::var(xs[0]) + LinExpr::var(xs[1]) - 0.5);
        LinExpr obj;
        for (int i = 0; i < n; ++i) obj += u(rng) * LinExpr::var(xs[i]);
        p.set_objective(obj);
        auto compiled = p.compile();
        SocpSolver solver;
        auto sol = solver.solve(compiled);
        REQUIRE(sol.ok());
        const double dual_obj = -compiled.b.dot(sol.y) - compiled.h.dot(sol.z);
        CHECK(sol.objective == doctest::Approx(dual_obj).epsilon(1e-5));
        CHECK(std::abs(sol.s.dot(sol.z)) < 1e-5);
    }
}

TEST_CASE("branch and bound knapsack") {
    // max 5a + 4b + 3c  s.t. 6a + 4b + 3c <= 9, binary -> (1,0,1) = 8
    ConicProgram p;
    int a = p.add_var("a", 0.0, 1.0, VarKind::binary);
    int b = p.add_var("b", 0.0, 1.0, VarKind::binary);
    int c = p.add_var("c", 0.0, 1.0, VarKind::binary);
    p.add_le(6.0 * LinExpr::var(a) + 4.0 * LinExpr::var(b) +
             3.0 * LinExpr::var(c) - 9.0);
    p.set_objective(-5.0 * LinExpr::var(a) - 4.0 * LinExpr::var(b) -
                    3.0 * LinExpr::var(c));
    BnbSolver bnb;
    auto sol = bnb.solve_mixed(p.compile(), p.binary_vars());
    REQUIRE(sol.ok());
    CHECK(sol.objective == doctest::Approx(-8.0).epsilon(1e-6));
    CHECK(sol.x[a] == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(sol.x[b] == doctest::Approx(0.0).epsilon(1e-5));
    CHECK(sol.x[c] == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("branch and bound proves infeasibility") {
    ConicProgram p;
    int a = p.add_var("a", 0.0, 1.0, VarKind::binary);
    int b = p.add_var("b", 0.0, 1.0, VarKind::binary);
    p.add_eq(LinExpr::var(a) + LinExpr::var(b) - 0.5);  // no binary combo sums to 0.5
    p.set_objective(LinExpr::var(a));
    BnbSolver bnb;
    auto sol = bnb.solve_mixed(p.compile(), p.binary_vars());
    CHECK(sol.status == SolveStatus::primal_infeasible);
}

TEST_CASE("elastic relaxation identifies violated family") {
    ConicProgram p;
    int x = p.add_var("x", 0.0, 1.0);
    p.add_le(LinExpr(2.0) - LinExpr::var(x), Family::current);  // needs x >= 2
    p.add_le(LinExpr::var(x) - 5.0, Family::device);            // slack-free
    p.set_objective(LinExpr::var(x));
    auto sol = solve(p);
    REQUIRE(sol.status == SolveStatus::primal_infeasible);

    std::vector<int> slacks;
    auto relaxed = p.elastic_relaxation({Family::current, Family::device}, slacks);
    auto esol = solve(relaxed);
    REQUIRE(esol.ok());
    CHECK(esol.x[slacks[0]] == doctest::Approx(1.0).epsilon(1e-5));  // current family needs 1.0
    CHECK(esol.x[slacks[1]] == doctest::Approx(0.0).epsilon(1e-5));
}
