#include "chaosib/pendulum.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace chaosib {

using json = nlohmann::json;

void PendulumConfig::validate() const {
    auto positive = [](double v, const char* name) {
        if (!(v > 0.0)) {
            throw std::invalid_argument(std::string("PendulumConfig: ") + name + " must be > 0");
        }
    };
    positive(m1, "m1");
    positive(m2, "m2");
    positive(l1, "l1");
    positive(l2, "l2");
    positive(g, "g");
    positive(energy_over_g, "energy_over_g");
    positive(dt_integrate, "dt_integrate");
    positive(dt_save, "dt_save");
    positive(t_total, "t_total");
    if (t_burn_in < 0.0 || t_burn_in >= t_total) {
        throw std::invalid_argument("PendulumConfig: require 0 <= t_burn_in < t_total");
    }
    if (!(energy_tolerance > 0.0)) {
        throw std::invalid_argument("PendulumConfig: energy_tolerance must be > 0");
    }
    const double ratio = dt_save / dt_integrate;
    if (std::abs(ratio - std::round(ratio)) > 1e-9 * ratio) {
        throw std::invalid_argument("PendulumConfig: dt_save must be an integer multiple of dt_integrate");
    }
}

std::int64_t PendulumConfig::steps_per_save() const {
    return static_cast<std::int64_t>(std::llround(dt_save / dt_integrate));
}

std::int64_t PendulumConfig::n_saved_states() const {
    return static_cast<std::int64_t>(std::floor((t_total - t_burn_in) / dt_save + 1e-9));
}

double wrap_angle(double theta) {
    double w = std::remainder(theta, 2.0 * M_PI);  // (-pi, pi]
    if (w >= M_PI) w -= 2.0 * M_PI;
    return w;
}

State wrap_state(const State& s) {
    return {wrap_angle(s.theta1), s.omega1, wrap_angle(s.theta2), s.omega2};
}

std::array<double, 4> derivatives(const State& s, const PendulumConfig& c) {
    const double delta = s.theta2 - s.theta1;
    const double sd = std::sin(delta);
    const double cd = std::cos(delta);
    const double m12 = c.m1 + c.m2;

    const double num1 = c.m2 * c.l1 * s.omega1 * s.omega1 * sd * cd
                        + c.m2 * c.g * std::sin(s.theta2) * cd
                        + c.m2 * c.l2 * s.omega2 * s.omega2 * sd
                        - m12 * c.g * std::sin(s.theta1);
    const double den1 = m12 * c.l1 - c.m2 * c.l1 * cd * cd;

    const double num2 = -c.m2 * c.l2 * s.omega2 * s.omega2 * sd * cd
                        + m12 * (c.g * std::sin(s.theta1) * cd
                                 - c.l1 * s.omega1 * s.omega1 * sd
                                 - c.g * std::sin(s.theta2));
    const double den2 = m12 * c.l2 - c.m2 * c.l2 * cd * cd;

    return {s.omega1, num1 / den1, s.omega2, num2 / den2};
}

double total_energy(const State& s, const PendulumConfig& c) {
    const double ke = 0.5 * c.m1 * c.l1 * c.l1 * s.omega1 * s.omega1
                      + 0.5 * c.m2 * (c.l1 * c.l1 * s.omega1 * s.omega1
                                      + c.l2 * c.l2 * s.omega2 * s.omega2
                                      + 2.0 * c.l1 * c.l2 * s.omega1 * s.omega2
                                            * std::cos(s.theta1 - s.theta2));
    const double pe = c.g * ((c.m1 + c.m2) * c.l1 * (1.0 - std::cos(s.theta1))
                             + c.m2 * c.l2 * (1.0 - std::cos(s.theta2)));
    return ke + pe;
}

namespace {

State axpy(const State& s, const std::array<double, 4>& d, double h) {
    return {s.theta1 + h * d[0], s.omega1 + h * d[1],
            s.theta2 + h * d[2], s.omega2 + h * d[3]};
}

}  // namespace

State rk4_step(const State& s, const PendulumConfig& c, double dt) {
    const auto k1 = derivatives(s, c);
    const auto k2 = derivatives(axpy(s, k1, 0.5 * dt), c);
    const auto k3 = derivatives(axpy(s, k2, 0.5 * dt), c);
    const auto k4 = derivatives(axpy(s, k3, dt), c);
    State out{
        s.theta1 + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        s.omega1 + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        s.theta2 + dt / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
        s.omega2 + dt / 6.0 * (k1[3] + 2.0 * k2[3] + 2.0 * k3[3] + k4[3]),
    };
    return wrap_state(out);
}

State sample_initial_state(const PendulumConfig& c, Rng& rng, int max_rejections) {
    c.validate();
    const double e_target = c.energy();
    for (int attempt = 0; attempt < max_rejections; ++attempt) {
        const double theta1 = rng.uniform(-M_PI, M_PI);
        // PE(theta1, theta2) = E with zero kinetic energy:
        //   cos(theta2) = 1 - (E/g - (m1+m2) l1 (1 - cos theta1)) / (m2 l2)
        const double cos_theta2 =
            1.0 - (e_target / c.g - (c.m1 + c.m2) * c.l1 * (1.0 - std::cos(theta1)))
                      / (c.m2 * c.l2);
        if (cos_theta2 < -1.0 || cos_theta2 > 1.0) continue;
        const double theta2_mag = std::acos(cos_theta2);
        const double theta2 = rng.coin() ? theta2_mag : -theta2_mag;
        return wrap_state({theta1, 0.0, theta2, 0.0});
    }
    throw std::runtime_error(
        "sample_initial_state: energy shell appears empty or too thin "
        "(rejection cap reached)");
}

bool integrate_trajectory(const State& initial, const PendulumConfig& c,
                          std::vector<State>& out, double* max_drift) {
    out.clear();
    const double e0 = c.energy();
    const std::int64_t n_total = static_cast<std::int64_t>(std::llround(c.t_total / c.dt_integrate));
    const std::int64_t n_burn = static_cast<std::int64_t>(std::llround(c.t_burn_in / c.dt_integrate));
    const std::int64_t per_save = c.steps_per_save();
    const std::int64_t n_save = c.n_saved_states();
    out.reserve(static_cast<std::size_t>(n_save));

    double worst = 0.0;
    State s = initial;
    for (std::int64_t step = 1; step <= n_total; ++step) {
        s = rk4_step(s, c, c.dt_integrate);
        const double drift = std::abs(total_energy(s, c) - e0) / e0;
        if (drift > worst) worst = drift;
        if (drift > c.energy_tolerance) {
            out.clear();
            if (max_drift) *max_drift = worst;
            return false;
        }
        if (step > n_burn && (step - n_burn) % per_save == 0
            && static_cast<std::int64_t>(out.size()) < n_save) {
            out.push_back(s);
        }
    }
    if (max_drift) *max_drift = worst;
    return true;
}

Dataset generate_dataset(const PendulumConfig& c, std::int64_t n_traj, std::uint64_t seed,
                         GenerationStats* stats) {
    c.validate();
    if (n_traj < 1) throw std::invalid_argument("generate_dataset: n_traj must be >= 1");

    Dataset d;
    d.config = c;
    d.seed = seed;
    d.trajectories.reserve(static_cast<std::size_t>(n_traj));

    GenerationStats local;
    for (std::int64_t i = 0; i < n_traj; ++i) {
        Rng rng = Rng::child(seed, static_cast<std::uint64_t>(i));
        Trajectory traj;
        traj.seed = static_cast<std::uint64_t>(i);
        for (;;) {
            const std::int64_t attempts = local.accepted + local.rejected_energy;
            if (attempts > 100 && local.accepted * 100 < attempts) {
                throw std::runtime_error("generate_dataset: rejection rate exceeds 99%");
            }
            const State ic = sample_initial_state(c, rng);
            double drift = 0.0;
            if (integrate_trajectory(ic, c, traj.states, &drift)) {
                ++local.accepted;
                if (drift > local.max_relative_drift) local.max_relative_drift = drift;
                break;
            }
            ++local.rejected_energy;
        }
        d.trajectories.push_back(std::move(traj));
    }
    if (stats) *stats = local;
    return d;
}

namespace {

constexpr char kMagic[4] = {'D', 'P', 'I', 'B'};
constexpr std::uint32_t kVersion = 1;

json config_to_json(const PendulumConfig& c) {
    return json{{"m1", c.m1},
                {"m2", c.m2},
                {"l1", c.l1},
                {"l2", c.l2},
                {"g", c.g},
                {"energy_over_g", c.energy_over_g},
                {"dt_integrate", c.dt_integrate},
                {"dt_save", c.dt_save},
                {"t_total", c.t_total},
                {"t_burn_in", c.t_burn_in},
                {"energy_tolerance", c.energy_tolerance}};
}

PendulumConfig config_from_json(const json& j) {
    PendulumConfig c;
    c.m1 = j.at("m1").get<double>();
    c.m2 = j.at("m2").get<double>();
    c.l1 = j.at("l1").get<double>();
    c.l2 = j.at("l2").get<double>();
    c.g = j.at("g").get<double>();
    c.energy_over_g = j.at("energy_over_g").get<double>();
    c.dt_integrate = j.at("dt_integrate").get<double>();
    c.dt_save = j.at("dt_save").get<double>();
    c.t_total = j.at("t_total").get<double>();
    c.t_burn_in = j.at("t_burn_in").get<double>();
    c.energy_tolerance = j.at("energy_tolerance").get<double>();
    return c;
}

}  // namespace

void save_dataset(const Dataset& d, const std::string& path) {
    if (d.trajectories.empty()) throw std::invalid_argument("save_dataset: empty dataset");
    const std::size_t n_steps = d.trajectories.front().states.size();
    for (const auto& t : d.trajectories) {
        if (t.states.size() != n_steps) {
            throw std::invalid_argument("save_dataset: trajectories have unequal lengths");
        }
    }

    json header;
    header["config"] = config_to_json(d.config);
    header["n_traj"] = d.trajectories.size();
    header["n_steps"] = n_steps;
    header["seed"] = d.seed;
    json traj_seeds = json::array();
    for (const auto& t : d.trajectories) traj_seeds.push_back(t.seed);
    header["trajectory_seeds"] = traj_seeds;
    const std::string header_str = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("save_dataset: cannot open " + path);
    out.write(kMagic, 4);
    const std::uint32_t version = kVersion;
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    const std::uint64_t header_len = header_str.size();
    out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
    out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));

    std::vector<double> row(4);
    for (const auto& t : d.trajectories) {
        for (const auto& s : t.states) {
            row = {s.theta1, s.omega1, s.theta2, s.omega2};
            out.write(reinterpret_cast<const char*>(row.data()),
                      static_cast<std::streamsize>(4 * sizeof(double)));
        }
    }
    if (!out) throw std::runtime_error("save_dataset: write failed for " + path);
}

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_dataset: cannot open " + path);

    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) {
        throw std::runtime_error("load_dataset: bad magic bytes in " + path
                                 + " (expected \"DPIB\")");
    }
    std::uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    if (!in || version != kVersion) {
        throw std::runtime_error("load_dataset: unsupported version in " + path);
    }
    std::uint64_t header_len = 0;
    in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
    if (!in) throw std::runtime_error("load_dataset: truncated header in " + path);
    std::string header_str(header_len, '\0');
    in.read(header_str.data(), static_cast<std::streamsize>(header_len));
    if (!in) throw std::runtime_error("load_dataset: truncated header in " + path);

    json header = json::parse(header_str);
    Dataset d;
    d.config = config_from_json(header.at("config"));
    d.seed = header.at("seed").get<std::uint64_t>();
    const std::uint64_t n_traj = header.at("n_traj").get<std::uint64_t>();
    const std::uint64_t n_steps = header.at("n_steps").get<std::uint64_t>();
    std::vector<std::uint64_t> traj_seeds =
        header.at("trajectory_seeds").get<std::vector<std::uint64_t>>();
    if (traj_seeds.size() != n_traj) {
        throw std::runtime_error("load_dataset: trajectory seed count mismatch in " + path);
    }

    d.trajectories.resize(n_traj);
    std::vector<double> row(4);
    for (std::uint64_t i = 0; i < n_traj; ++i) {
        auto& t = d.trajectories[i];
        t.seed = traj_seeds[i];
        t.states.resize(n_steps);
        for (std::uint64_t j = 0; j < n_steps; ++j) {
            in.read(reinterpret_cast<char*>(row.data()),
                    static_cast<std::streamsize>(4 * sizeof(double)));
            if (!in) {
                throw std::runtime_error(
                    "load_dataset: payload length mismatch against header in " + path);
            }
            t.states[j] = {row[0], row[1], row[2], row[3]};
        }
    }
    // Trailing bytes mean the header undercounts the payload.
    in.peek();
    if (!in.eof()) {
        throw std::runtime_error("load_dataset: payload length mismatch against header in "
                                 + path);
    }
    return d;
}

}  // namespace chaosib
