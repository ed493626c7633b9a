#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "chaosib/ib_models.hpp"
#include "chaosib/pendulum.hpp"
#include "chaosib/rng.hpp"

namespace chaosib {

/// One annealed optimization run: mode, horizon, schedule, architecture, split.
struct TrainRunConfig {
    Mode mode = Mode::IB;
    double delta = 0.2;              ///< prediction horizon [s]
    std::size_t batch_size = 256;
    std::int64_t n_steps = 50000;
    double learning_rate = 3e-4;
    BetaSchedule schedule;
    ModelConfig model;
    int split_index = 0;
    int n_splits = 5;
    std::uint64_t seed = 0;
    std::int64_t eval_every = 250;
    int eval_batches = 8;
    std::vector<std::int64_t> checkpoint_steps;  ///< extra snapshot steps
    std::string tag;                             ///< optional run-name suffix (e.g. dataset label)

    void validate(const PendulumConfig& data_config) const;
    /// Horizon expressed in saved-state indices.
    std::int64_t offset_steps(const PendulumConfig& data_config) const;
    std::string run_name() const;
};

/// One logged information-plane measurement (all information terms in nats).
struct InfoPlanePoint {
    std::int64_t step = 0;
    double beta = 0.0;
    std::vector<double> kl_per_variable;  ///< 1 entry (IB) or 4 (DIB)
    double kl_total = 0.0;
    double infonce_loss = 0.0;
    double mi_estimate = 0.0;
};

struct RunLog {
    TrainRunConfig config;
    std::vector<InfoPlanePoint> points;
    double wall_seconds = 0.0;
    std::string checkpoint_path;
};

/// Trajectory-granularity cross-validation split (fold split_index = validation).
struct DatasetSplit {
    std::vector<std::size_t> train_indices;
    std::vector<std::size_t> validation_indices;
};

DatasetSplit split_dataset(const Dataset& d, int n_splits, int split_index, std::uint64_t seed);

/// A batch of matched (present, future) states with exact index offset.
struct PairBatch {
    std::vector<State> present;
    std::vector<State> future;
};

/// Uniform over (trajectory, valid start index), with replacement.
PairBatch sample_pair_batch(const Dataset& d, const std::vector<std::size_t>& traj_indices,
                            std::int64_t offset_steps, std::size_t batch_size, Rng& rng);

/// Velocity standardization statistics over the given trajectories.
Normalization compute_normalization(const Dataset& d, const std::vector<std::size_t>& traj_indices);

/// Content hash of a dataset (config + full float64 payload), for run manifests.
std::uint64_t dataset_content_hash(const Dataset& d);

struct TrainResult {
    RunLog log;
    IbModel model;
};

/**
 * Run one annealed training. If out_dir is non-empty, writes
 * out_dir/<run_name>/log.csv, checkpoints (final.ckpt plus snapshots at
 * checkpoint_steps), and manifest.json. Deterministic given (run, data).
 * Throws on divergence (non-finite loss), reporting step and beta.
 */
TrainResult train(const TrainRunConfig& run, const Dataset& data, const std::string& out_dir = "");

/// One sweep entry: a run and the dataset file it trains on.
struct SweepRun {
    TrainRunConfig run;
    std::string dataset_path;
};

struct SweepOutcome {
    std::string run_name;
    enum class Status { Completed, Skipped, Failed } status = Status::Completed;
    std::string message;
};

/**
 * Execute runs independently under out_dir. Runs whose manifest records a
 * completed run against the same dataset hash are skipped. Per-run failures
 * are isolated and reported; the sweep continues.
 */
std::vector<SweepOutcome> sweep(const std::vector<SweepRun>& runs, const std::string& out_dir,
                                int n_threads = 1);

// --- RunLog files ---
void write_runlog_csv(const RunLog& log, const std::string& path);

/// Points read back from a log.csv (per-variable columns present only for DIB logs).
struct LogData {
    std::vector<InfoPlanePoint> points;
    bool has_per_variable = false;
};

LogData read_runlog_csv(const std::string& path);

}  // namespace chaosib
