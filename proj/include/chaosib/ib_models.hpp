#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "chaosib/autodiff.hpp"
#include "chaosib/pendulum.hpp"
#include "chaosib/rng.hpp"

namespace chaosib {

enum class Mode { IB, DIB };

std::string mode_name(Mode m);
Mode mode_from_name(const std::string& name);

/// Diagonal-Gaussian posterior over a bottleneck embedding.
struct GaussianEmbedding {
    std::vector<double> mean;
    std::vector<double> log_var;

    std::size_t dim() const { return mean.size(); }
};

/// Architecture parameters (defaults match the reference training setup).
struct ModelConfig {
    Mode mode = Mode::IB;
    std::size_t bottleneck_dim = 32;
    std::size_t shared_dim = 64;
    std::vector<std::size_t> encoder_widths = {128, 128};
    std::vector<std::size_t> shared_widths = {256, 256};
    std::vector<std::size_t> future_widths = {256, 256};
    std::vector<double> pe_frequencies = {1, 2, 4, 8, 16, 32, 64, 128};
    double nce_temperature = 1.0;
    double leaky_alpha = 0.2;

    void validate() const;
    std::size_t n_bottlenecks() const { return mode == Mode::DIB ? 4 : 1; }
    /// Positional-encoding feature count per state variable.
    std::size_t pe_dim() const { return 2 * pe_frequencies.size(); }
};

/// Geometric annealing schedule for the bottleneck multiplier.
struct BetaSchedule {
    double beta_initial = 5e-4;
    double beta_final = 2.0;
    std::int64_t n_steps = 50000;
};

/// beta(step) = beta_initial * (beta_final/beta_initial)^(step/n_steps).
double beta_at(const BetaSchedule& s, std::int64_t step);

/// Training-split standardization for the angular velocities (angles enter raw).
struct Normalization {
    double omega1_mean = 0.0;
    double omega1_std = 1.0;
    double omega2_mean = 0.0;
    double omega2_std = 1.0;
};

/// Concatenation over f of (sin(f x), cos(f x)).
std::vector<double> positional_encode(double x, const std::vector<double>& frequencies);

/// One dense layer: weights [in x out], bias [1 x out].
struct Linear {
    ad::Tensor w;
    ad::Tensor b;
};

/// MLP with leaky-ReLU hidden activations and a linear output layer.
struct Mlp {
    std::vector<Linear> layers;

    static Mlp init(std::size_t in_dim, const std::vector<std::size_t>& hidden,
                    std::size_t out_dim, Rng& rng);
    /// Plain (non-graph) forward for a single feature row.
    std::vector<double> apply(const std::vector<double>& x, double alpha) const;
};

/**
 * Full parameter set for one run: present-side bottleneck encoder(s), the
 * shared-space head on top of the bottleneck sample(s), and the deterministic
 * future-state encoder.
 */
struct IbModel {
    ModelConfig config;
    Normalization norm;
    std::vector<Mlp> encoders;  ///< 1 (IB, full state) or 4 (DIB, one per variable)
    Mlp shared_head;
    Mlp future_encoder;

    static IbModel init(const ModelConfig& cfg, const Normalization& norm, Rng& rng);

    /// All parameter tensors in a stable, checkpointable order.
    std::vector<ad::Tensor*> parameters();
    std::vector<const ad::Tensor*> parameters() const;
    std::vector<std::string> parameter_names() const;

    /// Standardized per-variable values (theta1, omega1, theta2, omega2).
    std::array<double, 4> standardize(const State& s) const;

    /// Deterministic posterior(s) for one state: 1 embedding (IB) or 4 (DIB).
    std::vector<GaussianEmbedding> posterior(const State& s) const;
    /// Block-diagonal product posterior (concatenation of the per-variable ones).
    GaussianEmbedding product_posterior(const State& s) const;
};

/// Model checkpoint: manifest (architecture, normalization, step) + parameter blob.
void save_model(const IbModel& m, std::int64_t step, const std::string& rng_state,
                const std::string& path);
struct LoadedModel {
    IbModel model;
    std::int64_t step = 0;
    std::string rng_state;
};
LoadedModel load_model(const std::string& path);

/**
 * Binds an IbModel's parameters to one Graph as requiring-grad leaves and
 * exposes the forward passes. One binding per forward/backward cycle.
 */
class BoundModel {
public:
    BoundModel(ad::Graph& g, IbModel& m);

    struct EncodeResult {
        ad::Graph::Ref u = -1;                       ///< [n, shared_dim]
        std::vector<ad::Graph::Ref> post_mean;       ///< per bottleneck, [n, bottleneck_dim]
        std::vector<ad::Graph::Ref> post_log_var;
    };

    /// Present-side stochastic encode; noise is [n, n_bottlenecks * bottleneck_dim].
    EncodeResult encode_present(const std::vector<State>& states, const ad::Tensor& noise);
    /// Future-side deterministic encode: [n, shared_dim].
    ad::Graph::Ref encode_future(const std::vector<State>& states);

    /// Gradients aligned with model.parameters(); valid after g.backward().
    std::vector<const ad::Tensor*> parameter_grads() const;

    ad::Graph& graph() { return *g_; }
    const IbModel& model() const { return *model_; }

private:
    ad::Graph::Ref mlp_forward(ad::Graph::Ref x, std::size_t first_layer_index,
                               std::size_t n_layers);
    /// Positional-encoding feature matrix for the given state variables
    /// (var_index 0..3, or all four concatenated when var_index < 0).
    ad::Tensor features(const std::vector<State>& states, int var_index) const;

    ad::Graph* g_;
    IbModel* model_;
    std::vector<ad::Graph::Ref> param_refs_;           // aligned with model_->parameters()
    std::vector<std::pair<ad::Graph::Ref, ad::Graph::Ref>> layer_refs_;  // (w, b) per layer
};

/// Per-step loss decomposition, all terms in nats.
struct LossBreakdown {
    double total = 0.0;
    std::vector<double> kl_per_variable;  ///< length 1 (IB) or 4 (DIB)
    double kl_total = 0.0;
    double infonce_loss = 0.0;            ///< mean per-sample InfoNCE loss
    double mi_estimate = 0.0;             ///< ln(batch) - infonce_loss, clamped at 0
};

/// Closed-form KL(N(mean, diag exp(log_var)) || N(0, I)) in nats.
double kl_to_standard_normal(const GaussianEmbedding& e);

struct InfoNceResult {
    double total_loss = 0.0;  ///< summed over the batch
    double mean_loss = 0.0;   ///< total / n
    double mi_estimate = 0.0; ///< ln n - mean_loss, clamped at 0
};

/// Direct evaluation over matched batches U, V (n >= 2) with negative squared
/// Euclidean similarity at temperature tau.
InfoNceResult infonce_loss(const std::vector<std::vector<double>>& u,
                           const std::vector<std::vector<double>>& v, double tau);

/// Assemble the annealed objective: total = beta * sum(kl) + infonce mean loss.
LossBreakdown total_loss(const std::vector<double>& kl_per_variable, double infonce_mean_loss,
                         std::size_t batch_size, double beta);

/// Graph-side loss assembly used by the trainer.
struct LossRefs {
    ad::Graph::Ref total = -1;
    std::vector<ad::Graph::Ref> kl_per_variable;
    ad::Graph::Ref infonce_mean = -1;
};

LossRefs build_loss(BoundModel& bound, const std::vector<State>& present,
                    const std::vector<State>& future, const ad::Tensor& noise, double beta);

/// Read a LossBreakdown out of an evaluated loss graph.
LossBreakdown read_breakdown(const ad::Graph& g, const LossRefs& refs, std::size_t batch_size,
                             double beta);

}  // namespace chaosib
