#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "chaosib/ib_models.hpp"
#include "chaosib/pendulum.hpp"
#include "chaosib/trainer.hpp"

namespace chaosib {

/// Overlap of two diagonal Gaussians: exp(-Bhattacharyya distance), in (0, 1].
double bhattacharyya_coefficient(const GaussianEmbedding& a, const GaussianEmbedding& b);

/// Cartesian position of the second pendulum mass.
std::pair<double, double> second_mass_position(const State& s, double l1, double l2);

/// States whose posterior overlaps the reference posterior above a threshold.
struct CoEmbedSet {
    State reference;
    double bc_threshold = 0.5;
    struct Member {
        State state;
        double bc = 0.0;
        double x = 0.0;  ///< second-mass position, for plotting
        double y = 0.0;
    };
    std::vector<Member> members;  ///< reference first (bc = 1)
};

/**
 * Encode the reference and every sampled state with the model's posterior
 * (product posterior for DIB) and keep states with BC >= bc_threshold.
 * Throws if bc_threshold is outside (0, 1].
 */
CoEmbedSet co_embedded_states(const IbModel& model, const std::vector<State>& sample,
                              const State& reference, double bc_threshold, double l1, double l2);

/// Fractional per-variable information allocation along a DIB annealing run.
struct AllocationProfile {
    struct Point {
        double kl_total = 0.0;
        std::array<double, 4> shares{};  ///< non-negative, sum to 1
    };
    std::vector<Point> points;
};

/// Shares = kl_i / kl_total per logged point; near-zero kl_total points are
/// dropped. Rejects IB-mode logs (no per-variable decomposition).
AllocationProfile allocation_profile(const LogData& log, double min_kl_total = 1e-6);

/// One information-plane curve: (kl_total, mi_estimate) ordered by kl_total.
struct InfoPlaneCurve {
    std::string label;
    std::vector<std::pair<double, double>> points;
};

/// Per-log curves with optional moving-average smoothing (window in logged
/// points; 1 = identity). Throws on empty input.
std::vector<InfoPlaneCurve> assemble_info_plane(const std::vector<LogData>& logs,
                                                const std::vector<std::string>& labels,
                                                int smoothing_window = 1);

// --- CSV export (mirrors the plotted data exactly) ---
void info_plane_csv(const std::vector<InfoPlaneCurve>& curves, const std::string& path);
void allocation_csv(const AllocationProfile& profile, const std::string& path);
void coembed_csv(const CoEmbedSet& set, const std::string& path);

}  // namespace chaosib
