#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "chaosib/rng.hpp"

namespace chaosib {

/// Physical and integration parameters for the constant-energy double pendulum.
struct PendulumConfig {
    double m1 = 1.0;               ///< mass of bob 1 [kg]
    double m2 = 1.0;               ///< mass of bob 2 [kg]
    double l1 = 1.0;               ///< arm length 1 [m]
    double l2 = 1.0;               ///< arm length 2 [m]
    double g = 9.81;               ///< gravitational acceleration [m/s^2]
    double energy_over_g = 3.0;    ///< dimensionless total energy E/g
    double dt_integrate = 0.001;   ///< integration step [s]
    double dt_save = 0.02;         ///< save interval [s]
    double t_total = 100.0;        ///< total simulated time [s]
    double t_burn_in = 50.0;       ///< discarded prefix [s]
    double energy_tolerance = 0.001;  ///< relative drift bound

    /// Throws std::invalid_argument if any invariant is violated.
    void validate() const;

    /// Prescribed total energy E = energy_over_g * g [J].
    double energy() const { return energy_over_g * g; }

    /// Integration steps per save interval (dt_save must be a multiple of dt_integrate).
    std::int64_t steps_per_save() const;

    /// Number of states saved per accepted trajectory.
    std::int64_t n_saved_states() const;

    bool operator==(const PendulumConfig&) const = default;
};

/// Pendulum state: angles from the downward vertical, wrapped to [-pi, pi).
struct State {
    double theta1 = 0.0;
    double omega1 = 0.0;
    double theta2 = 0.0;
    double omega2 = 0.0;

    bool operator==(const State&) const = default;
};

/// Wrap an angle to [-pi, pi).
double wrap_angle(double theta);

/// Wrap both angles of a state to [-pi, pi).
State wrap_state(const State& s);

/// Time derivative (dtheta1, domega1, dtheta2, domega2) from the Lagrangian
/// equations of motion.
std::array<double, 4> derivatives(const State& s, const PendulumConfig& c);

/// Total mechanical energy KE + PE, with PE = 0 at the hanging rest state.
double total_energy(const State& s, const PendulumConfig& c);

/// One classical RK4 step; output angles wrapped to [-pi, pi).
State rk4_step(const State& s, const PendulumConfig& c, double dt);

/**
 * Draw an initial condition on the energy shell: zero angular velocity,
 * theta1 uniform over the admissible set (rejection sampling), theta2 solved
 * from the energy constraint with a fair-coin sign.
 *
 * Throws std::runtime_error after `max_rejections` consecutive rejections.
 */
State sample_initial_state(const PendulumConfig& c, Rng& rng, int max_rejections = 100000);

/// One accepted constant-energy trajectory, saved every dt_save after burn-in.
struct Trajectory {
    std::vector<State> states;
    std::uint64_t seed = 0;  ///< child-stream index used for this trajectory's ICs
};

/// An ensemble of trajectories sharing one configuration.
struct Dataset {
    PendulumConfig config;
    std::vector<Trajectory> trajectories;
    std::uint64_t seed = 0;

    std::size_t n_trajectories() const { return trajectories.size(); }
};

/// Counters reported by generate_dataset.
struct GenerationStats {
    std::int64_t accepted = 0;
    std::int64_t rejected_energy = 0;  ///< trajectories discarded for energy drift
    double max_relative_drift = 0.0;   ///< over accepted trajectories
};

/**
 * Integrate one trajectory from `initial`, monitoring energy drift at every
 * integration step. Returns false (and leaves `out` empty) if the relative
 * drift ever exceeds c.energy_tolerance.
 */
bool integrate_trajectory(const State& initial, const PendulumConfig& c,
                          std::vector<State>& out, double* max_drift = nullptr);

/**
 * Generate `n_traj` accepted trajectories. Each trajectory uses an independent
 * child RNG derived from (seed, index); drift-rejected trajectories are
 * redrawn from the same stream. Deterministic given (c, n_traj, seed).
 */
Dataset generate_dataset(const PendulumConfig& c, std::int64_t n_traj, std::uint64_t seed,
                         GenerationStats* stats = nullptr);

/// Binary dataset file ("DPIB" magic, versioned JSON header, float64 payload).
void save_dataset(const Dataset& d, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace chaosib
