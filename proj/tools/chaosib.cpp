#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "chaosib/analysis.hpp"
#include "chaosib/ib_models.hpp"
#include "chaosib/pendulum.hpp"
#include "chaosib/svg.hpp"
#include "chaosib/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace chaosib;

namespace {

std::string default_out_dir() {
    const char* env = std::getenv("CHAOSIB_OUT_DIR");
    return env && *env ? env : ".";
}

/// Values loaded from a --config JSON file; they become the defaults that
/// command-line flags then override.
class JsonDefaults {
public:
    /// Pre-scan argv for --config before CLI11 parses anything.
    static JsonDefaults from_argv(int argc, char** argv) {
        JsonDefaults d;
        for (int i = 1; i + 1 < argc; ++i) {
            if (std::string(argv[i]) == "--config") {
                std::ifstream in(argv[i + 1]);
                if (!in) {
                    throw std::runtime_error(std::string("cannot open config file ")
                                             + argv[i + 1]);
                }
                d.j_ = json::parse(in);
                if (!d.j_.is_object()) {
                    throw std::runtime_error("config file must hold a JSON object");
                }
            }
        }
        return d;
    }

    template <typename T>
    void get(const char* key, T& var) const {
        if (j_.contains(key)) var = j_.at(key).get<T>();
    }

private:
    json j_;
};

State parse_state(const std::string& text) {
    std::stringstream ss(text);
    std::vector<double> vals;
    std::string field;
    while (std::getline(ss, field, ',')) vals.push_back(std::stod(field));
    if (vals.size() != 4) {
        throw std::invalid_argument("--state expects \"theta1,omega1,theta2,omega2\"");
    }
    return {vals[0], vals[1], vals[2], vals[3]};
}

/// Accept either run directories (containing log.csv) or a parent directory
/// whose immediate subdirectories are runs.
std::vector<fs::path> resolve_run_dirs(const std::vector<std::string>& paths) {
    std::vector<fs::path> runs;
    for (const auto& p : paths) {
        const fs::path dir(p);
        if (fs::exists(dir / "log.csv")) {
            runs.push_back(dir);
            continue;
        }
        if (!fs::is_directory(dir)) {
            throw std::runtime_error("not a run directory: " + p);
        }
        std::vector<fs::path> found;
        for (const auto& entry : fs::directory_iterator(dir)) {
            if (entry.is_directory() && fs::exists(entry.path() / "log.csv")) {
                found.push_back(entry.path());
            }
        }
        if (found.empty()) throw std::runtime_error("no runs with log.csv under " + p);
        std::sort(found.begin(), found.end());
        runs.insert(runs.end(), found.begin(), found.end());
    }
    return runs;
}

struct InfoPlaneArgs {
    std::vector<std::string> runs;
    int smooth = 1;
    std::string out_prefix;
    bool json_out = false;
};

void run_info_plane(const InfoPlaneArgs& args, bool write_csv) {
    const auto run_dirs = resolve_run_dirs(args.runs);
    std::vector<LogData> logs;
    std::vector<std::string> labels;
    for (const auto& dir : run_dirs) {
        logs.push_back(read_runlog_csv((dir / "log.csv").string()));
        labels.push_back(dir.filename().string());
    }
    const auto curves = assemble_info_plane(logs, labels, args.smooth);

    fs::create_directories(fs::path(args.out_prefix).parent_path().empty()
                               ? "."
                               : fs::path(args.out_prefix).parent_path());
    const std::string svg_path = args.out_prefix + ".svg";
    std::vector<svg::Series> series;
    for (const auto& c : curves) series.push_back({c.label, c.points, true, "", 2.0});
    svg::PlotStyle style;
    style.title = "Information plane";
    style.x_label = "I(X;U) upper bound [nats]";
    style.y_label = "I(U;X') lower bound [nats]";
    svg::write_plot(series, style, svg_path);

    std::string csv_path;
    if (write_csv) {
        csv_path = args.out_prefix + ".csv";
        info_plane_csv(curves, csv_path);
    }

    if (args.json_out) {
        json out{{"runs", labels}, {"svg", svg_path}};
        if (write_csv) out["csv"] = csv_path;
        std::cout << out.dump() << "\n";
    } else {
        std::cout << "info plane: " << curves.size() << " curve(s) -> " << svg_path;
        if (write_csv) std::cout << ", " << csv_path;
        std::cout << "\n";
    }
}

struct AllocationArgs {
    std::string run;
    std::string out_prefix;
    bool json_out = false;
};

void run_allocation(const AllocationArgs& args, bool write_csv) {
    const fs::path log_path = fs::is_directory(args.run)
                                  ? fs::path(args.run) / "log.csv"
                                  : fs::path(args.run);
    const auto log = read_runlog_csv(log_path.string());
    const auto profile = allocation_profile(log);

    const std::string svg_path = args.out_prefix + ".svg";
    const char* names[4] = {"theta1", "omega1", "theta2", "omega2"};
    std::vector<svg::Series> series(4);
    for (int k = 0; k < 4; ++k) {
        series[static_cast<std::size_t>(k)].label = names[k];
        series[static_cast<std::size_t>(k)].lines = true;
    }
    for (const auto& p : profile.points) {
        for (int k = 0; k < 4; ++k) {
            series[static_cast<std::size_t>(k)].points.emplace_back(
                p.kl_total, p.shares[static_cast<std::size_t>(k)]);
        }
    }
    svg::PlotStyle style;
    style.title = "Per-variable information allocation";
    style.x_label = "total KL [nats]";
    style.y_label = "share";
    svg::write_plot(series, style, svg_path);

    std::string csv_path;
    if (write_csv) {
        csv_path = args.out_prefix + ".csv";
        allocation_csv(profile, csv_path);
    }

    if (args.json_out) {
        json out{{"points", profile.points.size()}, {"svg", svg_path}};
        if (write_csv) out["csv"] = csv_path;
        std::cout << out.dump() << "\n";
    } else {
        std::cout << "allocation: " << profile.points.size() << " point(s) -> " << svg_path;
        if (write_csv) std::cout << ", " << csv_path;
        std::cout << "\n";
    }
}

int dispatch(int argc, char** argv) {
    const JsonDefaults cfg = JsonDefaults::from_argv(argc, argv);

    CLI::App app{"Double-pendulum information bottleneck pipeline"};
    app.require_subcommand(1);

    // --- simulate ---
    auto* sim = app.add_subcommand("simulate", "Generate a constant-energy dataset");
    PendulumConfig pc;
    std::int64_t n_traj = 100;
    std::uint64_t sim_seed = 0;
    std::string sim_out;
    bool sim_json = false;
    std::string config_file;
    cfg.get("m1", pc.m1);
    cfg.get("m2", pc.m2);
    cfg.get("l1", pc.l1);
    cfg.get("l2", pc.l2);
    cfg.get("g", pc.g);
    cfg.get("energy_over_g", pc.energy_over_g);
    cfg.get("dt", pc.dt_integrate);
    cfg.get("dt_save", pc.dt_save);
    cfg.get("t_total", pc.t_total);
    cfg.get("burn_in", pc.t_burn_in);
    cfg.get("energy_tolerance", pc.energy_tolerance);
    cfg.get("trajectories", n_traj);
    cfg.get("seed", sim_seed);
    cfg.get("out", sim_out);
    sim->add_option("--config", config_file, "JSON config file (flags override it)");
    sim->add_option("--m1", pc.m1, "Mass of bob 1 [kg]")->capture_default_str();
    sim->add_option("--m2", pc.m2, "Mass of bob 2 [kg]")->capture_default_str();
    sim->add_option("--l1", pc.l1, "Arm length 1 [m]")->capture_default_str();
    sim->add_option("--l2", pc.l2, "Arm length 2 [m]")->capture_default_str();
    sim->add_option("--g", pc.g, "Gravitational acceleration [m/s^2]")->capture_default_str();
    sim->add_option("--energy-over-g", pc.energy_over_g, "Total energy E/g")
        ->capture_default_str();
    sim->add_option("--dt", pc.dt_integrate, "Integration step [s]")->capture_default_str();
    sim->add_option("--dt-save", pc.dt_save, "Save interval [s]")->capture_default_str();
    sim->add_option("--t-total", pc.t_total, "Total simulated time [s]")->capture_default_str();
    sim->add_option("--burn-in", pc.t_burn_in, "Discarded prefix [s]")->capture_default_str();
    sim->add_option("--energy-tolerance", pc.energy_tolerance, "Relative drift bound")
        ->capture_default_str();
    sim->add_option("--trajectories", n_traj, "Number of trajectories")->capture_default_str();
    sim->add_option("--seed", sim_seed, "RNG seed")->capture_default_str();
    sim->add_option("--out", sim_out, "Output dataset file")->required();
    sim->add_flag("--json", sim_json, "Machine-readable summary");
    sim->callback([&]() {
        pc.validate();
        GenerationStats stats;
        const Dataset d = generate_dataset(pc, n_traj, sim_seed, &stats);
        const fs::path out_path(sim_out);
        if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
        save_dataset(d, sim_out);
        if (sim_json) {
            std::cout << json{{"out", sim_out},
                              {"trajectories", d.n_trajectories()},
                              {"states_per_trajectory", pc.n_saved_states()},
                              {"accepted", stats.accepted},
                              {"rejected_energy", stats.rejected_energy},
                              {"max_relative_drift", stats.max_relative_drift},
                              {"hash", dataset_content_hash(d)}}
                             .dump()
                      << "\n";
        } else {
            std::cout << "wrote " << d.n_trajectories() << " trajectories x "
                      << pc.n_saved_states() << " states to " << sim_out << "\n"
                      << "accepted " << stats.accepted << ", rejected (energy drift) "
                      << stats.rejected_energy << ", max relative drift "
                      << stats.max_relative_drift << "\n";
        }
    });

    // --- shared train/sweep options ---
    TrainRunConfig base;
    std::string mode_str = "ib";
    std::string out_dir = default_out_dir();
    std::int64_t anneal_steps = 0;  // 0 = same as --steps
    cfg.get("mode", mode_str);
    cfg.get("delta", base.delta);
    cfg.get("batch_size", base.batch_size);
    cfg.get("steps", base.n_steps);
    cfg.get("learning_rate", base.learning_rate);
    cfg.get("beta_init", base.schedule.beta_initial);
    cfg.get("beta_final", base.schedule.beta_final);
    cfg.get("anneal_steps", anneal_steps);
    cfg.get("splits", base.n_splits);
    cfg.get("split", base.split_index);
    cfg.get("eval_every", base.eval_every);
    cfg.get("eval_batches", base.eval_batches);
    cfg.get("bottleneck_dim", base.model.bottleneck_dim);
    cfg.get("shared_dim", base.model.shared_dim);
    cfg.get("encoder_widths", base.model.encoder_widths);
    cfg.get("shared_widths", base.model.shared_widths);
    cfg.get("future_widths", base.model.future_widths);
    cfg.get("pe_frequencies", base.model.pe_frequencies);
    cfg.get("tau", base.model.nce_temperature);
    cfg.get("out_dir", out_dir);

    auto add_train_options = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_file, "JSON config file (flags override it)");
        cmd->add_option("--mode", mode_str, "ib or dib")->capture_default_str();
        cmd->add_option("--batch", base.batch_size, "Batch size")->capture_default_str();
        cmd->add_option("--steps", base.n_steps, "Training steps")->capture_default_str();
        cmd->add_option("--lr", base.learning_rate, "Adam learning rate")
            ->capture_default_str();
        cmd->add_option("--beta-init", base.schedule.beta_initial, "Initial beta")
            ->capture_default_str();
        cmd->add_option("--beta-final", base.schedule.beta_final, "Final beta")
            ->capture_default_str();
        cmd->add_option("--anneal-steps", anneal_steps,
                        "Annealing schedule length (0 = same as --steps)")
            ->capture_default_str();
        cmd->add_option("--splits", base.n_splits, "Cross-validation folds")
            ->capture_default_str();
        cmd->add_option("--split", base.split_index, "Validation fold index")
            ->capture_default_str();
        cmd->add_option("--eval-every", base.eval_every, "Validation logging interval")
            ->capture_default_str();
        cmd->add_option("--eval-batches", base.eval_batches, "Validation batches per eval")
            ->capture_default_str();
        cmd->add_option("--bottleneck-dim", base.model.bottleneck_dim, "Bottleneck dimension")
            ->capture_default_str();
        cmd->add_option("--shared-dim", base.model.shared_dim, "Shared-space dimension")
            ->capture_default_str();
        cmd->add_option("--encoder-widths", base.model.encoder_widths,
                        "Encoder hidden widths")
            ->capture_default_str();
        cmd->add_option("--shared-widths", base.model.shared_widths,
                        "Shared-head hidden widths")
            ->capture_default_str();
        cmd->add_option("--future-widths", base.model.future_widths,
                        "Future-encoder hidden widths")
            ->capture_default_str();
        cmd->add_option("--pe-frequencies", base.model.pe_frequencies,
                        "Positional-encoding frequencies")
            ->capture_default_str();
        cmd->add_option("--tau", base.model.nce_temperature, "InfoNCE temperature")
            ->capture_default_str();
        cmd->add_option("--out-dir", out_dir, "Output directory (env CHAOSIB_OUT_DIR)")
            ->capture_default_str();
        cmd->add_option("--checkpoint-steps", base.checkpoint_steps, "Extra snapshot steps");
    };
    auto finalize_base = [&]() {
        base.mode = mode_from_name(mode_str);
        base.model.mode = base.mode;
        base.schedule.n_steps = anneal_steps > 0 ? anneal_steps : base.n_steps;
    };

    // --- train ---
    auto* train_cmd = app.add_subcommand("train", "Run one annealed training");
    std::string train_data;
    std::uint64_t train_seed = 0;
    std::string tag;
    bool train_json = false;
    cfg.get("data", train_data);
    cfg.get("seed", train_seed);
    cfg.get("checkpoint_steps", base.checkpoint_steps);
    cfg.get("tag", tag);
    add_train_options(train_cmd);
    train_cmd->add_option("--data", train_data, "Dataset file")->required();
    train_cmd->add_option("--delta", base.delta, "Prediction horizon [s]")
        ->capture_default_str();
    train_cmd->add_option("--seed", train_seed, "RNG seed")->capture_default_str();
    train_cmd->add_option("--tag", tag, "Run-name suffix");
    train_cmd->add_flag("--json", train_json, "Machine-readable summary");
    train_cmd->callback([&]() {
        finalize_base();
        TrainRunConfig run = base;
        run.seed = train_seed;
        run.tag = tag;
        const Dataset d = load_dataset(train_data);
        run.validate(d.config);
        const auto result = train(run, d, out_dir);
        const fs::path run_dir = fs::path(out_dir) / run.run_name();
        if (train_json) {
            json out{{"run", run.run_name()},
                     {"dir", run_dir.string()},
                     {"wall_seconds", result.log.wall_seconds}};
            if (!result.log.points.empty()) {
                const auto& last = result.log.points.back();
                out["kl_total"] = last.kl_total;
                out["mi_estimate"] = last.mi_estimate;
            }
            std::cout << out.dump() << "\n";
        } else {
            std::cout << "trained " << run.run_name() << " -> " << run_dir.string() << " ("
                      << result.log.wall_seconds << " s)\n";
        }
    });

    // --- sweep ---
    auto* sweep_cmd = app.add_subcommand(
        "sweep", "Train the cross product of datasets, horizons, and seeds");
    std::vector<std::string> sweep_data;
    std::vector<double> deltas = {0.2};
    std::vector<std::uint64_t> seeds = {0};
    int threads = static_cast<int>(std::thread::hardware_concurrency());
    bool sweep_json = false;
    cfg.get("deltas", deltas);
    cfg.get("seeds", seeds);
    cfg.get("threads", threads);
    add_train_options(sweep_cmd);
    sweep_cmd->add_option("--data", sweep_data, "Dataset file(s)")->required();
    sweep_cmd->add_option("--deltas", deltas, "Prediction horizons [s]")
        ->capture_default_str();
    sweep_cmd->add_option("--seeds", seeds, "RNG seeds")->capture_default_str();
    sweep_cmd->add_option("--threads", threads, "Parallel runs")->capture_default_str();
    sweep_cmd->add_flag("--json", sweep_json, "Machine-readable summary");
    sweep_cmd->callback([&]() {
        finalize_base();
        std::vector<SweepRun> runs;
        for (const auto& data_path : sweep_data) {
            for (double delta : deltas) {
                for (std::uint64_t seed : seeds) {
                    SweepRun sr;
                    sr.run = base;
                    sr.run.delta = delta;
                    sr.run.seed = seed;
                    if (sweep_data.size() > 1) {
                        sr.run.tag = fs::path(data_path).stem().string();
                    }
                    sr.dataset_path = data_path;
                    runs.push_back(sr);
                }
            }
        }
        const auto outcomes = sweep(runs, out_dir, std::max(threads, 1));
        bool any_failed = false;
        json jruns = json::array();
        for (const auto& o : outcomes) {
            const char* status = o.status == SweepOutcome::Status::Completed ? "completed"
                                 : o.status == SweepOutcome::Status::Skipped ? "skipped"
                                                                            : "failed";
            if (o.status == SweepOutcome::Status::Failed) any_failed = true;
            if (sweep_json) {
                jruns.push_back({{"run", o.run_name}, {"status", status},
                                 {"message", o.message}});
            } else {
                std::cout << status << " " << o.run_name;
                if (!o.message.empty()) std::cout << " (" << o.message << ")";
                std::cout << "\n";
            }
        }
        if (sweep_json) std::cout << json{{"runs", jruns}}.dump() << "\n";
        if (any_failed) throw std::runtime_error("sweep: one or more runs failed");
    });

    // --- analyze / plot ---
    InfoPlaneArgs ip;
    ip.out_prefix = (fs::path(default_out_dir()) / "info_plane").string();
    AllocationArgs al;
    al.out_prefix = (fs::path(default_out_dir()) / "allocation").string();
    cfg.get("smooth", ip.smooth);

    auto add_infoplane = [&](CLI::App* parent, bool with_csv) {
        auto* c = parent->add_subcommand("infoplane", "Information-plane curves");
        c->add_option("--runs", ip.runs, "Run directories (or a parent directory)")
            ->required();
        c->add_option("--smooth", ip.smooth, "Moving-average window (logged points)")
            ->capture_default_str();
        c->add_option("--out-prefix", ip.out_prefix, "Output path prefix")
            ->capture_default_str();
        c->add_flag("--json", ip.json_out, "Machine-readable summary");
        c->callback([&ip, with_csv]() { run_info_plane(ip, with_csv); });
        return c;
    };
    auto add_allocation = [&](CLI::App* parent, bool with_csv) {
        auto* c = parent->add_subcommand("allocation",
                                         "Per-variable information allocation");
        c->add_option("--run", al.run, "Run directory or log.csv")->required();
        c->add_option("--out-prefix", al.out_prefix, "Output path prefix")
            ->capture_default_str();
        c->add_flag("--json", al.json_out, "Machine-readable summary");
        c->callback([&al, with_csv]() { run_allocation(al, with_csv); });
        return c;
    };

    auto* analyze = app.add_subcommand("analyze", "Derive CSV + SVG artifacts");
    analyze->require_subcommand(1);
    add_infoplane(analyze, true);
    add_allocation(analyze, true);

    auto* coembed = analyze->add_subcommand("coembed", "States indistinguishable "
                                                       "from a reference under the posterior");
    std::string ce_model, ce_data, ce_state;
    double bc_threshold = 0.5;
    std::int64_t ce_sample = 4096;
    std::uint64_t ce_seed = 0;
    std::string ce_prefix = (fs::path(default_out_dir()) / "coembed").string();
    bool ce_json = false;
    cfg.get("bc_threshold", bc_threshold);
    cfg.get("sample", ce_sample);
    coembed->add_option("--model", ce_model, "Model checkpoint")->required();
    coembed->add_option("--data", ce_data, "Dataset file to sample states from")->required();
    coembed->add_option("--state", ce_state,
                        "Reference state \"theta1,omega1,theta2,omega2\" "
                        "(default: first dataset state)");
    coembed->add_option("--bc-threshold", bc_threshold, "Bhattacharyya overlap threshold")
        ->capture_default_str();
    coembed->add_option("--sample", ce_sample, "Number of sampled states")
        ->capture_default_str();
    coembed->add_option("--seed", ce_seed, "Sampling seed")->capture_default_str();
    coembed->add_option("--out-prefix", ce_prefix, "Output path prefix")
        ->capture_default_str();
    coembed->add_flag("--json", ce_json, "Machine-readable summary");
    coembed->callback([&]() {
        const LoadedModel loaded = load_model(ce_model);
        const Dataset d = load_dataset(ce_data);
        if (ce_sample < 1) throw std::invalid_argument("--sample must be >= 1");

        Rng rng(ce_seed);
        std::vector<State> sample;
        sample.reserve(static_cast<std::size_t>(ce_sample));
        for (std::int64_t i = 0; i < ce_sample; ++i) {
            const auto& t = d.trajectories[rng.uniform_index(d.n_trajectories())];
            sample.push_back(t.states[rng.uniform_index(t.states.size())]);
        }
        const State ref = ce_state.empty() ? d.trajectories.at(0).states.at(0)
                                           : parse_state(ce_state);
        const auto set = co_embedded_states(loaded.model, sample, ref, bc_threshold,
                                            d.config.l1, d.config.l2);

        const std::string csv_path = ce_prefix + ".csv";
        coembed_csv(set, csv_path);

        svg::Series background{"sampled states", {}, false, "#cccccc", 1.5};
        for (const State& s : sample) {
            background.points.push_back(second_mass_position(s, d.config.l1, d.config.l2));
        }
        svg::Series members{"co-embedded", {}, false, "#1f77b4", 2.5};
        for (const auto& m : set.members) members.points.emplace_back(m.x, m.y);
        svg::Series ref_mark{"reference", {{set.members[0].x, set.members[0].y}},
                             false, "#d62728", 4.0};
        svg::PlotStyle style;
        style.title = "Co-embedded states (BC >= "
                      + std::to_string(bc_threshold).substr(0, 4) + ")";
        style.x_label = "x of second mass [m]";
        style.y_label = "y of second mass [m]";
        const std::string svg_path = ce_prefix + ".svg";
        svg::write_plot({background, members, ref_mark}, style, svg_path);

        if (ce_json) {
            std::cout << json{{"members", set.members.size()},
                              {"sampled", sample.size()},
                              {"csv", csv_path},
                              {"svg", svg_path}}
                             .dump()
                      << "\n";
        } else {
            std::cout << "co-embedded " << set.members.size() << " of " << sample.size()
                      << " sampled states -> " << svg_path << ", " << csv_path << "\n";
        }
    });

    auto* plot = app.add_subcommand("plot", "Render SVG plots from existing runs");
    plot->require_subcommand(1);
    add_infoplane(plot, false);
    add_allocation(plot, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return dispatch(argc, argv);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
