#include <random>

#include "adg/devices.hpp"
#include "doctest.h"

using namespace adg;

TEST_CASE("bess energy step") {
    CHECK(bess_energy_step(100.0, 0.0, 0.0, 1.0, 0.95) == doctest::Approx(100.0));
    CHECK(bess_energy_step(100.0, 10.0, 0.0, 1.0, 0.95) ==
          doctest::Approx(109.5).epsilon(1e-12));
    CHECK(bess_energy_step(100.0, 0.0, 10.0, 1.0, 0.95) ==
          doctest::Approx(100.0 - 10.0 / 0.95).epsilon(1e-12));
}

TEST_CASE("round trips lose energy when eta < 1") {
    std::mt19937 rng(2);
    std::uniform_real_distribution<double> u(0.1, 50.0);
    for (int i = 0; i < 20; ++i) {
        const double e0 = 100.0, p = u(rng), eta = 0.9;
        // Charging p then discharging p*eta^2 returns exactly to e0.
        const double e1 = bess_energy_step(e0, p, 0.0, 1.0, eta);
        const double e2 = bess_energy_step(e1, 0.0, p * eta * eta, 1.0, eta);
        CHECK(e2 == doctest::Approx(e0).epsilon(1e-12));
        // A symmetric round trip ends strictly below the start.
        const double e3 = bess_energy_step(e1, 0.0, p, 1.0, eta);
        CHECK(e3 < e0);
    }
}

TEST_CASE("bess energy step is affine in the powers") {
    const double e0 = 10.0, dt = 0.5, eta = 0.92;
    auto f = [&](double ch, double dis) {
        return bess_energy_step(e0, ch, dis, dt, eta);
    };
    const double base = f(0, 0);
    CHECK(f(3, 2) - base ==
          doctest::Approx((f(3, 0) - base) + (f(0, 2) - base)).epsilon(1e-12));
    CHECK(f(6, 0) - base == doctest::Approx(2 * (f(3, 0) - base)).epsilon(1e-12));
}

TEST_CASE("bess q bound") {
    CHECK(bess_q_bound(0.0, 0.0, 0.48) == 0.0);
    CHECK(bess_q_bound(10.0, 0.0, 0.48) == doctest::Approx(4.8));
    CHECK(bess_q_bound(0.0, 7.0, 1.0) == doctest::Approx(7.0));
}

TEST_CASE("flexload conservation residual") {
    FlexLoad fl;
    CHECK(flexload_conservation_residual(fl, {0.0, 0.0, 0.0}) == 0.0);
    fl.f_history = {0.1, 0.3};
    CHECK(flexload_conservation_residual(fl, {-0.4}) ==
          doctest::Approx(0.0).epsilon(1e-15));
    CHECK(flexload_conservation_residual(fl, {}) == doctest::Approx(0.4));
}

TEST_CASE("pv islanded q cap") {
    CHECK(pv_islanded_q_cap(0.0, 1.0) == doctest::Approx(1.0));
    CHECK(pv_islanded_q_cap(1.0, 1.0) == doctest::Approx(0.0));
    CHECK(pv_islanded_q_cap(0.6, 1.0) == doctest::Approx(0.8).epsilon(1e-12));
    CHECK_THROWS_AS(pv_islanded_q_cap(1.2, 1.0), ModelError);
}
