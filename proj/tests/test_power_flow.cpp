#include <chrono>
#include <random>

#include "adg/power_flow.hpp"
#include "adg/reference.hpp"
#include "doctest.h"
#include "pf_oracle.hpp"

using namespace adg;

namespace {

InjectionProfile zero_injections(const GridTopology& t) {
    InjectionProfile inj;
    inj.p = Eigen::VectorXd::Zero(t.n_bus());
    inj.q = Eigen::VectorXd::Zero(t.n_bus());
    return inj;
}

/// Loads drawn against the reference fleet peaks, as negative injections.
InjectionProfile random_loading(const GridTopology& t, std::mt19937& rng,
                                double scale) {
    auto inj = zero_injections(t);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const std::pair<int, double> peaks[] = {{2, 0.38},  {12, 0.0285},
                                            {16, 0.0988}, {17, 0.1045},
                                            {18, 0.0665}, {19, 0.0893}};
    for (auto [bus, peak] : peaks) {
        const double p = scale * peak * u(rng);
        inj.p[bus - 1] -= p;
        inj.q[bus - 1] -= p * 0.33;
    }
    // Occasional PV back-feed.
    for (int bus : {12, 16, 18, 19})
        inj.p[bus - 1] += scale * 0.25 * u(rng);
    return inj;
}

}  // namespace

TEST_CASE("backward sweep basics") {
    auto t = make_reference_topology();
    VoltageProfile flat;
    flat.v = Eigen::VectorXcd::Constant(t.n_bus(), Complex(1.0, 0.0));

    SUBCASE("all-zero injections give zero currents") {
        Eigen::VectorXcd i_inj, i_br;
        backward_sweep(t, zero_injections(t), flat, i_inj, i_br);
        CHECK(i_inj.cwiseAbs().maxCoeff() == 0.0);
        CHECK(i_br.cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("p=0.1 at unit voltage gives real 0.1 current") {
        auto inj = zero_injections(t);
        inj.p[4] = 0.1;
        Eigen::VectorXcd i_inj, i_br;
        backward_sweep(t, inj, flat, i_inj, i_br);
        CHECK(i_inj[4].real() == doctest::Approx(0.1).epsilon(1e-12));
        CHECK(i_inj[4].imag() == doctest::Approx(0.0));
    }
    SUBCASE("zero voltage raises") {
        flat.v[3] = Complex(0.0, 0.0);
        Eigen::VectorXcd i_inj, i_br;
        CHECK_THROWS_AS(backward_sweep(t, zero_injections(t), flat, i_inj, i_br),
                        ModelError);
    }
}

TEST_CASE("branch current accumulates downstream injections on a chain") {
    auto t = load_topology(R"({
      "s_base_kva":1000.0,"v_base_kv":0.4,
      "buses":[{"id":1,"kind":"slack"},{"id":2,"kind":"load"},{"id":3,"kind":"load"}],
      "branches":[{"id":1,"from":1,"to":2,"r_pu":0.02,"x_pu":0.01},
                  {"id":2,"from":2,"to":3,"r_pu":0.03,"x_pu":0.015}]
    })");
    std::mt19937 rng(5);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    VoltageProfile flat;
    flat.v = Eigen::VectorXcd::Constant(3, Complex(1.0, 0.0));
    for (int trial = 0; trial < 10; ++trial) {
        auto inj = zero_injections(t);
        inj.p[1] = u(rng);
        inj.q[1] = u(rng);
        inj.p[2] = u(rng);
        inj.q[2] = u(rng);
        Eigen::VectorXcd i_inj, i_br;
        backward_sweep(t, inj, flat, i_inj, i_br);
        CHECK(std::abs(i_br[0] - (i_inj[1] + i_inj[2])) < 1e-15);
        CHECK(std::abs(i_br[1] - i_inj[2]) < 1e-15);
        CHECK(std::abs(i_inj[0] + i_inj[1] + i_inj[2]) < 1e-15);
    }
}

TEST_CASE("forward sweep") {
    auto t = make_reference_topology();
    SUBCASE("zero currents, tap 0 -> flat slack profile") {
        auto v = forward_sweep(t, Eigen::VectorXcd::Zero(t.n_branch()), 0.0);
        for (int j = 0; j < t.n_bus(); ++j)
            CHECK(std::abs(v.v[j] - Complex(1.0, 0.0)) < 1e-15);
    }
    SUBCASE("tap +1 shifts all buses by one step") {
        auto v = forward_sweep(t, Eigen::VectorXcd::Zero(t.n_branch()), 1.0);
        for (int j = 0; j < t.n_bus(); ++j)
            CHECK(v.v[j].real() == doctest::Approx(0.99375).epsilon(1e-12));
    }
    SUBCASE("tap out of range") {
        CHECK_THROWS_AS(forward_sweep(t, Eigen::VectorXcd::Zero(t.n_branch()), 9.0),
                        ModelError);
    }
    SUBCASE("random currents match the path-walk oracle") {
        std::mt19937 rng(17);
        std::uniform_real_distribution<double> u(-0.5, 0.5);
        Eigen::VectorXcd i_br(t.n_branch());
        for (int i = 0; i < i_br.size(); ++i) i_br[i] = Complex(u(rng), u(rng));
        auto v = forward_sweep(t, i_br, 0.0);
        auto drop = path_voltage_drop_oracle(t, i_br);
        for (int bus = 2; bus <= t.n_bus(); ++bus)
            CHECK(std::abs(v.v[bus - 1] - (Complex(1.0, 0.0) + drop[t.col(bus)])) <
                  1e-14);
    }
}

TEST_CASE("solve_bfs") {
    auto t = make_reference_topology();

    SUBCASE("no-load network converges immediately to the flat profile") {
        auto st = solve_bfs(t, zero_injections(t), 0.0);
        REQUIRE(st.converged);
        CHECK(st.iterations == 1);
        for (int j = 0; j < t.n_bus(); ++j)
            CHECK(std::abs(st.voltages.v[j] - Complex(1.0, 0.0)) < 1e-12);
    }

    SUBCASE("matches the independent Gauss-Seidel oracle on 50 profiles") {
        std::mt19937 rng(23);
        for (int trial = 0; trial < 50; ++trial) {
            auto inj = random_loading(t, rng, 1.0);
            auto st = solve_bfs(t, inj, 0.0);
            REQUIRE(st.converged);
            auto gs = testing::gauss_seidel_oracle(t, inj, 0.0);
            REQUIRE(gs.converged);
            CHECK((st.voltages.v.cwiseAbs() - gs.v.cwiseAbs()).cwiseAbs().maxCoeff() <
                  1e-6);
            // Branch currents implied by the oracle voltages.
            Eigen::VectorXcd gi(t.n_bus() - 1);
            for (int bus = 2; bus <= t.n_bus(); ++bus)
                gi[t.col(bus)] = std::conj(
                    Complex(inj.p[bus - 1], inj.q[bus - 1]) / gs.v[bus - 1]);
            Eigen::VectorXcd gbr = t.bibc.cast<Complex>() * gi;
            CHECK((st.i_br.cwiseAbs() - gbr.cwiseAbs()).cwiseAbs().maxCoeff() < 1e-5);
        }
    }

    SUBCASE("complex power balance at convergence") {
        std::mt19937 rng(29);
        auto inj = random_loading(t, rng, 1.0);
        auto st = solve_bfs(t, inj, 0.0);
        REQUIRE(st.converged);
        Complex s_slack = st.voltages.v[0] * std::conj(st.i_inj[0]);
        Complex s_loads{0.0, 0.0};
        for (int j = 1; j < t.n_bus(); ++j)
            s_loads += Complex(inj.p[j], inj.q[j]);
        Complex losses{0.0, 0.0};
        for (const auto& br : t.branches)
            losses += br.z * std::norm(st.i_br[br.id - 1]);
        CHECK(std::abs(s_slack + s_loads - losses) < 1e-8);
    }

    SUBCASE("monotone convergence diagnostic (flag only)") {
        std::mt19937 rng(31);
        auto inj = random_loading(t, rng, 1.0);
        auto st = solve_bfs(t, inj, 0.0);
        REQUIRE(st.converged);
        for (size_t k = 2; k < st.dv_trace.size(); ++k)
            WARN_MESSAGE(st.dv_trace[k] <= st.dv_trace[k - 1] * 1.0 + 1e-15,
                         "dv trace not monotone at iteration " << k);
    }

    SUBCASE("absurd loading does not converge") {
        auto inj = zero_injections(t);
        inj.p[18] = -100.0;
        auto st = solve_bfs(t, inj, 0.0);
        CHECK_FALSE(st.converged);
    }
}

TEST_CASE("oracle equivalence within runtime budget") {
    auto t = make_reference_topology();
    std::mt19937 rng(37);
    const auto start = std::chrono::steady_clock::now();
    for (int trial = 0; trial < 10; ++trial) {
        auto inj = random_loading(t, rng, 1.0);
        auto st = solve_bfs(t, inj, 0.0);
        REQUIRE(st.converged);
        auto gs = testing::gauss_seidel_oracle(t, inj, 0.0);
        REQUIRE(gs.converged);
        CHECK((st.voltages.v.cwiseAbs() - gs.v.cwiseAbs()).cwiseAbs().maxCoeff() <
              1e-6);
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    CHECK(secs < 1.0);
}

TEST_CASE("linearized network model") {
    auto t = make_reference_topology();
    const Eigen::VectorXcd flat =
        Eigen::VectorXcd::Constant(t.n_bus(), Complex(1.0, 0.0));

    SUBCASE("flat v_bar, zero injections reproduce the slack voltage") {
        LinearNetworkModel lin(t, flat);
        Eigen::VectorXcd v, i_br;
        lin.evaluate(zero_injections(t), 0.0, v, i_br);
        for (int j = 0; j < t.n_bus(); ++j)
            CHECK(std::abs(v[j] - Complex(1.0, 0.0)) < 1e-14);
    }

    SUBCASE("flat v_bar equals the first BFS iteration") {
        std::mt19937 rng(41);
        auto inj = random_loading(t, rng, 1.0);
        LinearNetworkModel lin(t, flat);
        Eigen::VectorXcd v, i_br;
        lin.evaluate(inj, 0.0, v, i_br);
        VoltageProfile vf;
        vf.v = flat;
        Eigen::VectorXcd i_inj1, i_br1;
        backward_sweep(t, inj, vf, i_inj1, i_br1);
        auto v1 = forward_sweep(t, i_br1, 0.0);
        CHECK((v - v1.v).cwiseAbs().maxCoeff() < 1e-14);
        CHECK((i_br - i_br1).cwiseAbs().maxCoeff() < 1e-14);
    }

    SUBCASE("fixed point: model at converged v_bar matches the full BFS") {
        std::mt19937 rng(43);
        auto inj = random_loading(t, rng, 1.0);
        auto st = solve_bfs(t, inj, 0.0, {1e-10, 200});
        REQUIRE(st.converged);
        LinearNetworkModel lin(t, st.voltages.v);
        Eigen::VectorXcd v, i_br;
        lin.evaluate(inj, 0.0, v, i_br);
        CHECK((v - st.voltages.v).cwiseAbs().maxCoeff() < 1e-8);
        CHECK((i_br - st.i_br).cwiseAbs().maxCoeff() < 1e-8);
    }
}
