#include "chaosib/analysis.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace chaosib {

double bhattacharyya_coefficient(const GaussianEmbedding& a, const GaussianEmbedding& b) {
    if (a.dim() != b.dim() || a.log_var.size() != a.dim() || b.log_var.size() != b.dim()) {
        throw std::invalid_argument("bhattacharyya_coefficient: dimension mismatch");
    }
    // D_B = 1/8 sum (mu_a - mu_b)^2 / sbar^2 + 1/2 sum ln(sbar^2 / (s_a s_b)),
    // sbar^2 = (s_a^2 + s_b^2) / 2, diagonal Gaussians.
    double db = 0.0;
    for (std::size_t d = 0; d < a.dim(); ++d) {
        const double va = std::exp(a.log_var[d]);
        const double vb = std::exp(b.log_var[d]);
        const double vbar = 0.5 * (va + vb);
        const double dm = a.mean[d] - b.mean[d];
        db += 0.125 * dm * dm / vbar
              + 0.5 * std::log(vbar / std::sqrt(va * vb));
    }
    return std::exp(-db);
}

std::pair<double, double> second_mass_position(const State& s, double l1, double l2) {
    return {l1 * std::sin(s.theta1) + l2 * std::sin(s.theta2),
            -l1 * std::cos(s.theta1) - l2 * std::cos(s.theta2)};
}

CoEmbedSet co_embedded_states(const IbModel& model, const std::vector<State>& sample,
                              const State& reference, double bc_threshold, double l1, double l2) {
    if (!(bc_threshold > 0.0) || bc_threshold > 1.0) {
        throw std::invalid_argument("co_embedded_states: bc_threshold must be in (0, 1]");
    }
    const GaussianEmbedding ref_post = model.product_posterior(reference);

    CoEmbedSet set;
    set.reference = reference;
    set.bc_threshold = bc_threshold;
    const auto [rx, ry] = second_mass_position(reference, l1, l2);
    set.members.push_back({reference, 1.0, rx, ry});

    for (const State& s : sample) {
        const double bc = bhattacharyya_coefficient(ref_post, model.product_posterior(s));
        if (bc >= bc_threshold) {
            const auto [x, y] = second_mass_position(s, l1, l2);
            set.members.push_back({s, bc, x, y});
        }
    }
    return set;
}

AllocationProfile allocation_profile(const LogData& log, double min_kl_total) {
    if (!log.has_per_variable) {
        throw std::invalid_argument(
            "allocation_profile: log has no per-variable KL columns (requires a DIB-mode run)");
    }
    AllocationProfile profile;
    for (const auto& p : log.points) {
        if (p.kl_per_variable.size() != 4) continue;
        if (p.kl_total < min_kl_total) continue;  // shares undefined at ~zero information
        AllocationProfile::Point out;
        out.kl_total = p.kl_total;
        for (int k = 0; k < 4; ++k) out.shares[static_cast<std::size_t>(k)] =
            p.kl_per_variable[static_cast<std::size_t>(k)] / p.kl_total;
        profile.points.push_back(out);
    }
    return profile;
}

std::vector<InfoPlaneCurve> assemble_info_plane(const std::vector<LogData>& logs,
                                                const std::vector<std::string>& labels,
                                                int smoothing_window) {
    if (logs.empty()) throw std::invalid_argument("assemble_info_plane: no logs");
    if (!labels.empty() && labels.size() != logs.size()) {
        throw std::invalid_argument("assemble_info_plane: label count mismatch");
    }
    if (smoothing_window < 1) {
        throw std::invalid_argument("assemble_info_plane: smoothing window must be >= 1");
    }

    std::vector<InfoPlaneCurve> curves;
    for (std::size_t i = 0; i < logs.size(); ++i) {
        InfoPlaneCurve c;
        c.label = labels.empty() ? ("run" + std::to_string(i)) : labels[i];

        const auto& pts = logs[i].points;
        const std::size_t n = pts.size();
        const std::size_t w = static_cast<std::size_t>(smoothing_window);
        for (std::size_t j = 0; j < n; ++j) {
            // Centered moving average in logged order, truncated at the ends.
            const std::size_t lo = (j >= w / 2) ? j - w / 2 : 0;
            const std::size_t hi = std::min(n, lo + w);
            double kl = 0.0, mi = 0.0;
            for (std::size_t k = lo; k < hi; ++k) {
                kl += pts[k].kl_total;
                mi += pts[k].mi_estimate;
            }
            const double m = static_cast<double>(hi - lo);
            c.points.emplace_back(kl / m, mi / m);
        }
        std::sort(c.points.begin(), c.points.end());
        curves.push_back(std::move(c));
    }
    return curves;
}

namespace {

std::ofstream open_csv(const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("csv export: cannot open " + path);
    return out;
}

// Shortest decimal form that round-trips the exact double.
std::string num(double x) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, res.ptr);
}

}  // namespace

void info_plane_csv(const std::vector<InfoPlaneCurve>& curves, const std::string& path) {
    auto out = open_csv(path);
    out << "curve,kl_total,mi_estimate\n";
    for (const auto& c : curves) {
        for (const auto& [kl, mi] : c.points) {
            out << c.label << ',' << num(kl) << ',' << num(mi) << '\n';
        }
    }
}

void allocation_csv(const AllocationProfile& profile, const std::string& path) {
    auto out = open_csv(path);
    out << "kl_total,share_theta1,share_omega1,share_theta2,share_omega2\n";
    for (const auto& p : profile.points) {
        out << num(p.kl_total);
        for (double s : p.shares) out << ',' << num(s);
        out << '\n';
    }
}

void coembed_csv(const CoEmbedSet& set, const std::string& path) {
    auto out = open_csv(path);
    out << "theta1,omega1,theta2,omega2,bc,x,y\n";
    for (const auto& m : set.members) {
        out << num(m.state.theta1) << ',' << num(m.state.omega1) << ',' << num(m.state.theta2)
            << ',' << num(m.state.omega2) << ',' << num(m.bc) << ',' << num(m.x) << ','
            << num(m.y) << '\n';
    }
}

}  // namespace chaosib
