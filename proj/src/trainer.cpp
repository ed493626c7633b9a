#include "chaosib/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <nlohmann/json.hpp>

namespace chaosib {

namespace fs = std::filesystem;
using json = nlohmann::json;

void TrainRunConfig::validate(const PendulumConfig& data_config) const {
    model.validate();
    if (batch_size < 2) throw std::invalid_argument("TrainRunConfig: batch_size must be >= 2");
    if (n_steps < 0) throw std::invalid_argument("TrainRunConfig: n_steps must be >= 0");
    if (!(learning_rate > 0.0)) {
        throw std::invalid_argument("TrainRunConfig: learning_rate must be > 0");
    }
    if (n_splits < 2) throw std::invalid_argument("TrainRunConfig: n_splits must be >= 2");
    if (split_index < 0 || split_index >= n_splits) {
        throw std::invalid_argument("TrainRunConfig: split_index must be in [0, n_splits)");
    }
    if (eval_every < 1) throw std::invalid_argument("TrainRunConfig: eval_every must be >= 1");
    if (eval_batches < 1) throw std::invalid_argument("TrainRunConfig: eval_batches must be >= 1");
    if (!(delta > 0.0)) throw std::invalid_argument("TrainRunConfig: delta must be > 0");
    const double ratio = delta / data_config.dt_save;
    if (std::abs(ratio - std::round(ratio)) > 1e-9 * std::max(1.0, ratio)) {
        throw std::invalid_argument(
            "TrainRunConfig: delta must be a positive integer multiple of dt_save");
    }
    if ((mode == Mode::DIB) != (model.mode == Mode::DIB)) {
        throw std::invalid_argument("TrainRunConfig: mode and model.mode disagree");
    }
}

std::int64_t TrainRunConfig::offset_steps(const PendulumConfig& data_config) const {
    return static_cast<std::int64_t>(std::llround(delta / data_config.dt_save));
}

std::string TrainRunConfig::run_name() const {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s_d%.3f_s%d_seed%llu", mode_name(mode).c_str(), delta,
                  split_index, static_cast<unsigned long long>(seed));
    std::string name(buf);
    if (!tag.empty()) name += "_" + tag;
    return name;
}

DatasetSplit split_dataset(const Dataset& d, int n_splits, int split_index, std::uint64_t seed) {
    if (n_splits < 2) throw std::invalid_argument("split_dataset: n_splits must be >= 2");
    if (split_index < 0 || split_index >= n_splits) {
        throw std::out_of_range("split_dataset: split_index " + std::to_string(split_index)
                                + " outside [0, " + std::to_string(n_splits) + ")");
    }
    const std::size_t n = d.n_trajectories();
    if (n < static_cast<std::size_t>(n_splits)) {
        throw std::invalid_argument("split_dataset: dataset has fewer trajectories than splits");
    }

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed);
    for (std::size_t i = n - 1; i > 0; --i) {
        const std::size_t j = rng.uniform_index(i + 1);
        std::swap(order[i], order[j]);
    }

    DatasetSplit split;
    for (std::size_t i = 0; i < n; ++i) {
        // Fold of element i in the shuffled order.
        const int fold = static_cast<int>(i * static_cast<std::size_t>(n_splits) / n);
        if (fold == split_index) {
            split.validation_indices.push_back(order[i]);
        } else {
            split.train_indices.push_back(order[i]);
        }
    }
    return split;
}

PairBatch sample_pair_batch(const Dataset& d, const std::vector<std::size_t>& traj_indices,
                            std::int64_t offset_steps, std::size_t batch_size, Rng& rng) {
    if (traj_indices.empty()) throw std::invalid_argument("sample_pair_batch: no trajectories");
    const std::int64_t span =
        static_cast<std::int64_t>(d.trajectories.front().states.size());
    if (offset_steps < 1 || offset_steps >= span) {
        throw std::invalid_argument("sample_pair_batch: offset " + std::to_string(offset_steps)
                                    + " exceeds trajectory span " + std::to_string(span));
    }
    const std::int64_t n_starts = span - offset_steps;

    PairBatch batch;
    batch.present.reserve(batch_size);
    batch.future.reserve(batch_size);
    for (std::size_t i = 0; i < batch_size; ++i) {
        const std::size_t t = traj_indices[rng.uniform_index(traj_indices.size())];
        const std::int64_t s =
            static_cast<std::int64_t>(rng.uniform_index(static_cast<std::uint64_t>(n_starts)));
        const auto& states = d.trajectories[t].states;
        batch.present.push_back(states[static_cast<std::size_t>(s)]);
        batch.future.push_back(states[static_cast<std::size_t>(s + offset_steps)]);
    }
    return batch;
}

Normalization compute_normalization(const Dataset& d,
                                    const std::vector<std::size_t>& traj_indices) {
    double s1 = 0.0, s2 = 0.0, q1 = 0.0, q2 = 0.0;
    std::size_t n = 0;
    for (std::size_t t : traj_indices) {
        for (const State& s : d.trajectories[t].states) {
            s1 += s.omega1;
            s2 += s.omega2;
            q1 += s.omega1 * s.omega1;
            q2 += s.omega2 * s.omega2;
            ++n;
        }
    }
    if (n == 0) throw std::invalid_argument("compute_normalization: no states");
    Normalization norm;
    norm.omega1_mean = s1 / static_cast<double>(n);
    norm.omega2_mean = s2 / static_cast<double>(n);
    norm.omega1_std = std::sqrt(std::max(1e-12, q1 / static_cast<double>(n)
                                                    - norm.omega1_mean * norm.omega1_mean));
    norm.omega2_std = std::sqrt(std::max(1e-12, q2 / static_cast<double>(n)
                                                    - norm.omega2_mean * norm.omega2_mean));
    return norm;
}

std::uint64_t dataset_content_hash(const Dataset& d) {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    auto mix = [&h](const void* p, std::size_t len) {
        const auto* bytes = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < len; ++i) {
            h ^= bytes[i];
            h *= 0x100000001b3ULL;
        }
    };
    const PendulumConfig& c = d.config;
    const double cfg[] = {c.m1, c.m2, c.l1, c.l2, c.g, c.energy_over_g, c.dt_integrate,
                          c.dt_save, c.t_total, c.t_burn_in, c.energy_tolerance};
    mix(cfg, sizeof(cfg));
    mix(&d.seed, sizeof(d.seed));
    for (const auto& t : d.trajectories) {
        for (const State& s : t.states) {
            const double row[] = {s.theta1, s.omega1, s.theta2, s.omega2};
            mix(row, sizeof(row));
        }
    }
    return h;
}

namespace {

json run_config_to_json(const TrainRunConfig& r) {
    return json{{"mode", mode_name(r.mode)},
                {"delta", r.delta},
                {"batch_size", r.batch_size},
                {"n_steps", r.n_steps},
                {"learning_rate", r.learning_rate},
                {"beta_initial", r.schedule.beta_initial},
                {"beta_final", r.schedule.beta_final},
                {"annealing_steps", r.schedule.n_steps},
                {"bottleneck_dim", r.model.bottleneck_dim},
                {"shared_dim", r.model.shared_dim},
                {"encoder_widths", r.model.encoder_widths},
                {"shared_widths", r.model.shared_widths},
                {"future_widths", r.model.future_widths},
                {"pe_frequencies", r.model.pe_frequencies},
                {"nce_temperature", r.model.nce_temperature},
                {"leaky_alpha", r.model.leaky_alpha},
                {"split_index", r.split_index},
                {"n_splits", r.n_splits},
                {"seed", r.seed},
                {"eval_every", r.eval_every},
                {"eval_batches", r.eval_batches},
                {"checkpoint_steps", r.checkpoint_steps},
                {"tag", r.tag}};
}

InfoPlanePoint evaluate(IbModel& model, const Dataset& data,
                        const std::vector<std::size_t>& val_indices, std::int64_t offset,
                        const TrainRunConfig& run, std::int64_t step, double beta, Rng& rng) {
    const std::size_t n_kl = model.config.n_bottlenecks();
    std::vector<double> kl_acc(n_kl, 0.0);
    double nce_acc = 0.0;
    for (int e = 0; e < run.eval_batches; ++e) {
        PairBatch batch = sample_pair_batch(data, val_indices, offset, run.batch_size, rng);
        ad::Tensor noise(run.batch_size, n_kl * model.config.bottleneck_dim);
        for (auto& x : noise.v) x = rng.normal();
        ad::Graph g;
        BoundModel bound(g, model);
        LossRefs refs = build_loss(bound, batch.present, batch.future, noise, beta);
        LossBreakdown b = read_breakdown(g, refs, run.batch_size, beta);
        for (std::size_t k = 0; k < n_kl; ++k) kl_acc[k] += b.kl_per_variable[k];
        nce_acc += b.infonce_loss;
    }
    const double inv = 1.0 / run.eval_batches;
    for (auto& k : kl_acc) k *= inv;
    LossBreakdown avg = total_loss(kl_acc, nce_acc * inv, run.batch_size, beta);

    InfoPlanePoint p;
    p.step = step;
    p.beta = beta;
    p.kl_per_variable = avg.kl_per_variable;
    p.kl_total = avg.kl_total;
    p.infonce_loss = avg.infonce_loss;
    p.mi_estimate = avg.mi_estimate;
    return p;
}

}  // namespace

TrainResult train(const TrainRunConfig& run, const Dataset& data, const std::string& out_dir) {
    run.validate(data.config);
    const std::int64_t offset = run.offset_steps(data.config);

    const auto t0 = std::chrono::steady_clock::now();
    DatasetSplit split = split_dataset(data, run.n_splits, run.split_index, run.seed);
    Normalization norm = compute_normalization(data, split.train_indices);

    Rng init_rng = Rng::child(run.seed, 0);
    Rng batch_rng = Rng::child(run.seed, 1);
    Rng eval_rng = Rng::child(run.seed, 2);

    IbModel model = IbModel::init(run.model, norm, init_rng);
    ad::Adam adam({.lr = run.learning_rate});
    auto params = model.parameters();

    std::string run_dir;
    if (!out_dir.empty()) {
        run_dir = (fs::path(out_dir) / run.run_name()).string();
        fs::create_directories(run_dir);
    }
    auto maybe_snapshot = [&](std::int64_t step) {
        if (run_dir.empty()) return;
        if (std::find(run.checkpoint_steps.begin(), run.checkpoint_steps.end(), step)
            != run.checkpoint_steps.end()) {
            save_model(model, step, "", (fs::path(run_dir)
                                         / ("step" + std::to_string(step) + ".ckpt")).string());
        }
    };

    RunLog log;
    log.config = run;

    const std::size_t noise_dim = model.config.n_bottlenecks() * model.config.bottleneck_dim;
    maybe_snapshot(0);
    for (std::int64_t step = 1; step <= run.n_steps; ++step) {
        const double beta = beta_at(run.schedule, std::min(step, run.schedule.n_steps));
        PairBatch batch =
            sample_pair_batch(data, split.train_indices, offset, run.batch_size, batch_rng);
        ad::Tensor noise(run.batch_size, noise_dim);
        for (auto& x : noise.v) x = batch_rng.normal();

        ad::Graph g;
        BoundModel bound(g, model);
        LossRefs refs = build_loss(bound, batch.present, batch.future, noise, beta);
        const double total = g.value(refs.total).v[0];
        if (!std::isfinite(total)) {
            throw std::runtime_error("train: non-finite loss at step " + std::to_string(step)
                                     + " (beta=" + std::to_string(beta) + ")");
        }
        g.backward(refs.total);
        adam.step(params, bound.parameter_grads());

        if (step % run.eval_every == 0 || step == run.n_steps) {
            log.points.push_back(
                evaluate(model, data, split.validation_indices, offset, run, step, beta, eval_rng));
        }
        maybe_snapshot(step);
    }

    log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    if (!run_dir.empty()) {
        const std::string ckpt_path = (fs::path(run_dir) / "final.ckpt").string();
        save_model(model, run.n_steps, "", ckpt_path);
        log.checkpoint_path = ckpt_path;
        write_runlog_csv(log, (fs::path(run_dir) / "log.csv").string());

        json manifest;
        manifest["run"] = run_config_to_json(run);
        manifest["dataset_hash"] = dataset_content_hash(data);
        manifest["wall_seconds"] = log.wall_seconds;
        manifest["status"] = "complete";
        if (!log.points.empty()) {
            const auto& last = log.points.back();
            manifest["final_metrics"] = {{"kl_total", last.kl_total},
                                         {"infonce_loss", last.infonce_loss},
                                         {"mi_estimate", last.mi_estimate},
                                         {"beta", last.beta}};
        }
        std::ofstream mf(fs::path(run_dir) / "manifest.json");
        mf << manifest.dump(2) << "\n";
    }

    return {std::move(log), std::move(model)};
}

std::vector<SweepOutcome> sweep(const std::vector<SweepRun>& runs, const std::string& out_dir,
                                int n_threads) {
    if (n_threads < 1) n_threads = 1;
    std::vector<SweepOutcome> outcomes(runs.size());

    // Datasets are loaded once and shared read-only across runs.
    std::vector<std::string> paths;
    for (const auto& r : runs) {
        if (std::find(paths.begin(), paths.end(), r.dataset_path) == paths.end()) {
            paths.push_back(r.dataset_path);
        }
    }
    std::vector<std::unique_ptr<Dataset>> datasets(paths.size());

    std::mutex mtx;
    // Lazy shared load so a bad dataset path fails only the runs that use it.
    auto dataset_for = [&](const std::string& p) -> const Dataset& {
        const auto idx = static_cast<std::size_t>(
            std::find(paths.begin(), paths.end(), p) - paths.begin());
        std::lock_guard lock(mtx);
        if (!datasets[idx]) datasets[idx] = std::make_unique<Dataset>(load_dataset(p));
        return *datasets[idx];
    };

    std::size_t next = 0;
    auto worker = [&]() {
        for (;;) {
            std::size_t i;
            {
                std::lock_guard lock(mtx);
                if (next >= runs.size()) return;
                i = next++;
            }
            const SweepRun& sr = runs[i];
            const std::string name = sr.run.run_name();
            outcomes[i].run_name = name;
            try {
                const Dataset& data = dataset_for(sr.dataset_path);
                const fs::path manifest_path = fs::path(out_dir) / name / "manifest.json";
                if (fs::exists(manifest_path)) {
                    std::ifstream mf(manifest_path);
                    json man = json::parse(mf, nullptr, /*allow_exceptions=*/false);
                    if (!man.is_discarded() && man.value("status", "") == "complete"
                        && man.value("dataset_hash", 0ULL) == dataset_content_hash(data)) {
                        outcomes[i].status = SweepOutcome::Status::Skipped;
                        outcomes[i].message = "already complete";
                        continue;
                    }
                }
                train(sr.run, data, out_dir);
                outcomes[i].status = SweepOutcome::Status::Completed;
            } catch (const std::exception& e) {
                outcomes[i].status = SweepOutcome::Status::Failed;
                outcomes[i].message = e.what();
            }
        }
    };

    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    return outcomes;
}

void write_runlog_csv(const RunLog& log, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("write_runlog_csv: cannot open " + path);
    out << "step,beta,kl_total,kl_theta1,kl_omega1,kl_theta2,kl_omega2,infonce_loss,mi_estimate\n";
    out.precision(17);
    for (const auto& p : log.points) {
        out << p.step << ',' << p.beta << ',' << p.kl_total << ',';
        if (p.kl_per_variable.size() == 4) {
            out << p.kl_per_variable[0] << ',' << p.kl_per_variable[1] << ','
                << p.kl_per_variable[2] << ',' << p.kl_per_variable[3] << ',';
        } else {
            out << ",,,,";
        }
        out << p.infonce_loss << ',' << p.mi_estimate << '\n';
    }
    if (!out) throw std::runtime_error("write_runlog_csv: write failed for " + path);
}

LogData read_runlog_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_runlog_csv: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("read_runlog_csv: empty file " + path);
    const std::string expected =
        "step,beta,kl_total,kl_theta1,kl_omega1,kl_theta2,kl_omega2,infonce_loss,mi_estimate";
    if (line != expected) {
        throw std::runtime_error("read_runlog_csv: unexpected header in " + path);
    }

    LogData data;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string f;
        while (std::getline(ss, f, ',')) fields.push_back(f);
        while (fields.size() < 9) fields.emplace_back();
        if (fields.size() != 9) {
            throw std::runtime_error("read_runlog_csv: malformed row in " + path);
        }
        InfoPlanePoint p;
        p.step = std::stoll(fields[0]);
        p.beta = std::stod(fields[1]);
        p.kl_total = std::stod(fields[2]);
        if (!fields[3].empty()) {
            data.has_per_variable = true;
            for (int k = 0; k < 4; ++k) p.kl_per_variable.push_back(std::stod(fields[3 + k]));
        } else {
            p.kl_per_variable = {p.kl_total};
        }
        p.infonce_loss = std::stod(fields[7]);
        p.mi_estimate = std::stod(fields[8]);
        data.points.push_back(std::move(p));
    }
    return data;
}

}  // namespace chaosib
