#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "chaosib/pendulum.hpp"
#include "chaosib/rng.hpp"

using namespace chaosib;

namespace {

// Independent oracle: solve the 2x2 Lagrangian mass-matrix system
//   M(theta) [a1, a2]^T = b(theta, omega)
// numerically instead of using the closed-form accelerations.
std::array<double, 2> mass_matrix_accelerations(const State& s, const PendulumConfig& c) {
    const double d = s.theta1 - s.theta2;
    const double m11 = (c.m1 + c.m2) * c.l1 * c.l1;
    const double m12 = c.m2 * c.l1 * c.l2 * std::cos(d);
    const double m22 = c.m2 * c.l2 * c.l2;
    const double b1 = -c.m2 * c.l1 * c.l2 * s.omega2 * s.omega2 * std::sin(d)
                      - (c.m1 + c.m2) * c.g * c.l1 * std::sin(s.theta1);
    const double b2 = c.m2 * c.l1 * c.l2 * s.omega1 * s.omega1 * std::sin(d)
                      - c.m2 * c.g * c.l2 * std::sin(s.theta2);
    const double det = m11 * m22 - m12 * m12;
    return {(b1 * m22 - m12 * b2) / det, (m11 * b2 - m12 * b1) / det};
}

State reference_integrate(State s, const PendulumConfig& c, double t, double dt_fine) {
    const auto n = static_cast<std::int64_t>(std::llround(t / dt_fine));
    for (std::int64_t i = 0; i < n; ++i) s = rk4_step(s, c, dt_fine);
    return s;
}

State random_state(Rng& rng, double omega_scale = 2.0) {
    return {rng.uniform(-M_PI, M_PI), rng.uniform(-omega_scale, omega_scale),
            rng.uniform(-M_PI, M_PI), rng.uniform(-omega_scale, omega_scale)};
}

}  // namespace

TEST_CASE("derivatives at equilibria") {
    PendulumConfig c;
    for (const State s : {State{0, 0, 0, 0}, State{wrap_angle(M_PI), 0, wrap_angle(M_PI), 0}}) {
        const auto d = derivatives(s, c);
        for (double x : d) CHECK(std::abs(x) <= 1e-12);
    }
}

TEST_CASE("derivatives match mass-matrix oracle") {
    PendulumConfig c;
    Rng rng(11);
    for (int i = 0; i < 200; ++i) {
        const State s = random_state(rng, 4.0);
        const auto d = derivatives(s, c);
        CHECK(d[0] == s.omega1);
        CHECK(d[2] == s.omega2);
        const auto acc = mass_matrix_accelerations(s, c);
        CHECK(std::abs(d[1] - acc[0]) <= 1e-12 * std::max(1.0, std::abs(acc[0])));
        CHECK(std::abs(d[3] - acc[1]) <= 1e-12 * std::max(1.0, std::abs(acc[1])));
    }
    // Also with asymmetric masses and lengths.
    c.m1 = 0.7;
    c.m2 = 2.3;
    c.l1 = 1.5;
    c.l2 = 0.5;
    for (int i = 0; i < 200; ++i) {
        const State s = random_state(rng, 4.0);
        const auto d = derivatives(s, c);
        const auto acc = mass_matrix_accelerations(s, c);
        CHECK(std::abs(d[1] - acc[0]) <= 1e-12 * std::max(1.0, std::abs(acc[0])));
        CHECK(std::abs(d[3] - acc[1]) <= 1e-12 * std::max(1.0, std::abs(acc[1])));
    }
}

TEST_CASE("total_energy reference point and direct PE evaluation") {
    PendulumConfig c;
    CHECK(total_energy({0, 0, 0, 0}, c) == 0.0);
    // theta1 = theta2 = pi/2, at rest: PE = g (2 l1 + l2) = 3g for unit arms/masses.
    const double e = total_energy({M_PI / 2, 0, M_PI / 2, 0}, c);
    CHECK(e == doctest::Approx(29.43).epsilon(1e-12));
    CHECK(e == doctest::Approx(3.0 * c.g).epsilon(1e-12));
}

TEST_CASE("rk4_step fixed point at rest") {
    PendulumConfig c;
    for (double dt : {1e-4, 1e-3, 0.1}) {
        CHECK(rk4_step({0, 0, 0, 0}, c, dt) == State{0, 0, 0, 0});
    }
}

TEST_CASE("rk4_step matches fine-step reference") {
    PendulumConfig c;
    Rng rng(5);
    for (int i = 0; i < 10; ++i) {
        const State s0 = random_state(rng);
        const State coarse = rk4_step(s0, c, 1e-3);
        const State fine = reference_integrate(s0, c, 1e-3, 1e-6);
        CHECK(std::abs(coarse.theta1 - fine.theta1) <= 1e-10);
        CHECK(std::abs(coarse.omega1 - fine.omega1) <= 1e-10);
        CHECK(std::abs(coarse.theta2 - fine.theta2) <= 1e-10);
        CHECK(std::abs(coarse.omega2 - fine.omega2) <= 1e-10);
    }
}

TEST_CASE("energy conservation along an integrated trajectory") {
    PendulumConfig c;
    Rng rng(7);
    const State ic = sample_initial_state(c, rng);
    const double e0 = total_energy(ic, c);
    CHECK(e0 == doctest::Approx(c.energy()).epsilon(1e-12));

    State s = ic;
    double max_drift = 0.0;
    for (int i = 0; i < 100000; ++i) {  // 100 s at dt = 1e-3
        s = rk4_step(s, c, 1e-3);
        max_drift = std::max(max_drift, std::abs(total_energy(s, c) - e0) / e0);
    }
    CHECK(max_drift <= 1e-3);
}

TEST_CASE("time reversal returns to the start") {
    PendulumConfig c;
    Rng rng(13);
    const State s0 = random_state(rng);
    const int n = 100;  // 0.1 s at dt = 1e-3
    State s = s0;
    for (int i = 0; i < n; ++i) s = rk4_step(s, c, 1e-3);
    for (int i = 0; i < n; ++i) s = rk4_step(s, c, -1e-3);
    CHECK(std::abs(s.theta1 - s0.theta1) <= 1e-6);
    CHECK(std::abs(s.omega1 - s0.omega1) <= 1e-6);
    CHECK(std::abs(s.theta2 - s0.theta2) <= 1e-6);
    CHECK(std::abs(s.omega2 - s0.omega2) <= 1e-6);
}

TEST_CASE("sample_initial_state solves the energy constraint") {
    PendulumConfig c;  // E = 3g, unit arms and masses
    Rng rng(3);
    for (int i = 0; i < 500; ++i) {
        const State s = sample_initial_state(c, rng);
        CHECK(s.omega1 == 0.0);
        CHECK(s.omega2 == 0.0);
        CHECK(std::abs(total_energy(s, c) - c.energy()) <= 1e-12 * c.energy());
        // For this configuration cos(theta2) = -2 cos(theta1), so |cos theta1| <= 1/2.
        CHECK(std::abs(std::cos(s.theta1)) <= 0.5 + 1e-12);
        CHECK(std::cos(s.theta2) == doctest::Approx(-2.0 * std::cos(s.theta1)).epsilon(1e-9));
    }
}

TEST_CASE("sample_initial_state fails on an empty shell") {
    PendulumConfig c;
    c.energy_over_g = 1e6;  // far above the max potential energy at rest
    Rng rng(1);
    CHECK_THROWS_AS(sample_initial_state(c, rng, 1000), std::runtime_error);
}

TEST_CASE("accepted theta1 is uniform on the admissible set") {
    PendulumConfig c;
    Rng rng(19);
    // Admissible set: cos(theta1) in [-1/2, 1/2]. Map each draw to its position
    // within one branch and chi-square against uniformity.
    const int n_samples = 20000;
    const int n_bins = 20;
    std::array<int, 20> bins{};
    for (int i = 0; i < n_samples; ++i) {
        const State s = sample_initial_state(c, rng);
        const double t = std::abs(s.theta1);  // in [pi/3, 2pi/3] by the constraint
        double frac = (t - M_PI / 3) / (M_PI / 3);
        frac = std::min(std::max(frac, 0.0), 1.0 - 1e-15);
        bins[static_cast<std::size_t>(frac * n_bins)]++;
    }
    const double expected = static_cast<double>(n_samples) / n_bins;
    double chi2 = 0.0;
    for (int b : bins) chi2 += (b - expected) * (b - expected) / expected;
    CHECK(chi2 < 43.82);  // chi-square critical value, 19 dof, alpha = 0.001
}

TEST_CASE("chaotic divergence of nearby initial conditions") {
    PendulumConfig c;
    Rng rng(23);
    int diverged = 0;
    const int trials = 5;
    for (int trial = 0; trial < trials; ++trial) {
        const State a = sample_initial_state(c, rng);
        // Perturb theta1 and re-solve theta2 on the same energy shell.
        const double theta1b = a.theta1 + 1e-8;
        const double cos_theta2 = -2.0 * std::cos(theta1b);
        REQUIRE(std::abs(cos_theta2) <= 1.0);
        const double theta2b = (a.theta2 >= 0 ? 1.0 : -1.0) * std::acos(cos_theta2);
        State sa = a;
        State sb{theta1b, 0.0, theta2b, 0.0};
        bool hit = false;
        for (int i = 0; i < 50000 && !hit; ++i) {  // 50 s
            sa = rk4_step(sa, c, 1e-3);
            sb = rk4_step(sb, c, 1e-3);
            const double d = std::hypot(std::hypot(wrap_angle(sa.theta1 - sb.theta1),
                                                   wrap_angle(sa.theta2 - sb.theta2)),
                                        std::hypot(sa.omega1 - sb.omega1,
                                                   sa.omega2 - sb.omega2));
            if (d > 1.0) hit = true;
        }
        if (hit) ++diverged;
    }
    CHECK(diverged >= 4);
}

TEST_CASE("generate_dataset shape, determinism, and validation") {
    PendulumConfig c;
    c.t_total = 6.0;
    c.t_burn_in = 2.0;

    CHECK_THROWS_AS(generate_dataset(c, 0, 1), std::invalid_argument);

    GenerationStats stats;
    const Dataset d1 = generate_dataset(c, 3, 42, &stats);
    CHECK(d1.trajectories.size() == 3);
    CHECK(stats.accepted == 3);
    for (const auto& t : d1.trajectories) {
        CHECK(static_cast<std::int64_t>(t.states.size()) == c.n_saved_states());
        for (const auto& s : t.states) {
            CHECK(std::abs(total_energy(s, c) - c.energy()) / c.energy() <= c.energy_tolerance);
            CHECK(s.theta1 >= -M_PI);
            CHECK(s.theta1 < M_PI);
        }
    }

    const Dataset d2 = generate_dataset(c, 3, 42);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(d1.trajectories[i].states == d2.trajectories[i].states);
    }
}

TEST_CASE("default configuration yields 2500 saved states") {
    PendulumConfig c;
    CHECK(c.n_saved_states() == 2500);
}

TEST_CASE("dataset file round-trip and corruption handling") {
    namespace fs = std::filesystem;
    PendulumConfig c;
    c.t_total = 4.0;
    c.t_burn_in = 1.0;
    const Dataset d = generate_dataset(c, 2, 9);

    const auto dir = fs::temp_directory_path() / "chaosib_test_pendulum";
    fs::create_directories(dir);
    const std::string path = (dir / "ds.bin").string();
    save_dataset(d, path);

    const Dataset r = load_dataset(path);
    CHECK(r.config == d.config);
    CHECK(r.seed == d.seed);
    REQUIRE(r.trajectories.size() == d.trajectories.size());
    for (std::size_t i = 0; i < d.trajectories.size(); ++i) {
        CHECK(r.trajectories[i].seed == d.trajectories[i].seed);
        CHECK(r.trajectories[i].states == d.trajectories[i].states);
    }

    SUBCASE("truncated file reports length mismatch") {
        const std::string trunc = (dir / "trunc.bin").string();
        fs::copy_file(path, trunc, fs::copy_options::overwrite_existing);
        fs::resize_file(trunc, fs::file_size(trunc) - 16);
        CHECK_THROWS_WITH_AS(load_dataset(trunc),
                             doctest::Contains("length mismatch"), std::runtime_error);
    }
    SUBCASE("wrong magic names the expected magic") {
        const std::string bad = (dir / "bad.bin").string();
        fs::copy_file(path, bad, fs::copy_options::overwrite_existing);
        std::fstream f(bad, std::ios::in | std::ios::out | std::ios::binary);
        f.write("NOPE", 4);
        f.close();
        CHECK_THROWS_WITH_AS(load_dataset(bad), doctest::Contains("DPIB"), std::runtime_error);
    }
}

TEST_CASE("config invariants are enforced") {
    PendulumConfig c;
    c.dt_save = 0.0015;  // not a multiple of dt_integrate = 0.001
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = PendulumConfig{};
    c.t_burn_in = c.t_total;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = PendulumConfig{};
    c.m1 = -1.0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}
