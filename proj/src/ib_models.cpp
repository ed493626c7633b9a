#include "chaosib/ib_models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "chaosib/checkpoint.hpp"

namespace chaosib {

using json = nlohmann::json;

std::string mode_name(Mode m) { return m == Mode::IB ? "ib" : "dib"; }

Mode mode_from_name(const std::string& name) {
    if (name == "ib" || name == "IB") return Mode::IB;
    if (name == "dib" || name == "DIB") return Mode::DIB;
    throw std::invalid_argument("unknown mode \"" + name + "\" (expected ib or dib)");
}

void ModelConfig::validate() const {
    if (bottleneck_dim == 0 || shared_dim == 0) {
        throw std::invalid_argument("ModelConfig: dimensions must be positive");
    }
    auto check_widths = [](const std::vector<std::size_t>& w, const char* name) {
        for (std::size_t x : w) {
            if (x == 0) throw std::invalid_argument(std::string("ModelConfig: ") + name
                                                    + " widths must be positive");
        }
    };
    check_widths(encoder_widths, "encoder");
    check_widths(shared_widths, "shared");
    check_widths(future_widths, "future");
    if (pe_frequencies.empty()) {
        throw std::invalid_argument("ModelConfig: pe_frequencies must be non-empty");
    }
    for (std::size_t i = 1; i < pe_frequencies.size(); ++i) {
        if (!(pe_frequencies[i] > pe_frequencies[i - 1])) {
            throw std::invalid_argument("ModelConfig: pe_frequencies must be strictly increasing");
        }
    }
    if (!(nce_temperature > 0.0)) {
        throw std::invalid_argument("ModelConfig: nce_temperature must be > 0");
    }
}

double beta_at(const BetaSchedule& s, std::int64_t step) {
    if (!(s.beta_initial > 0.0) || !(s.beta_final > 0.0) || s.n_steps < 1) {
        throw std::invalid_argument("BetaSchedule: betas must be > 0 and n_steps >= 1");
    }
    if (step < 0 || step > s.n_steps) {
        throw std::out_of_range("beta_at: step " + std::to_string(step) + " outside [0, "
                                + std::to_string(s.n_steps) + "]");
    }
    const double frac = static_cast<double>(step) / static_cast<double>(s.n_steps);
    return s.beta_initial * std::pow(s.beta_final / s.beta_initial, frac);
}

std::vector<double> positional_encode(double x, const std::vector<double>& frequencies) {
    std::vector<double> out;
    out.reserve(2 * frequencies.size());
    for (double f : frequencies) {
        out.push_back(std::sin(f * x));
        out.push_back(std::cos(f * x));
    }
    return out;
}

Mlp Mlp::init(std::size_t in_dim, const std::vector<std::size_t>& hidden, std::size_t out_dim,
              Rng& rng) {
    Mlp m;
    std::vector<std::size_t> dims;
    dims.push_back(in_dim);
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(out_dim);
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        Linear lin{ad::Tensor(dims[l], dims[l + 1]), ad::Tensor(1, dims[l + 1])};
        const double bound = 1.0 / std::sqrt(static_cast<double>(dims[l]));
        for (auto& w : lin.w.v) w = rng.uniform(-bound, bound);
        m.layers.push_back(std::move(lin));
    }
    return m;
}

std::vector<double> Mlp::apply(const std::vector<double>& x, double alpha) const {
    std::vector<double> cur = x;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const Linear& lin = layers[l];
        if (cur.size() != lin.w.rows) {
            throw std::invalid_argument("Mlp::apply: input size " + std::to_string(cur.size())
                                        + " != " + std::to_string(lin.w.rows));
        }
        std::vector<double> next(lin.w.cols, 0.0);
        for (std::size_t j = 0; j < lin.w.cols; ++j) next[j] = lin.b.at(0, j);
        for (std::size_t i = 0; i < lin.w.rows; ++i) {
            const double xi = cur[i];
            if (xi == 0.0) continue;
            for (std::size_t j = 0; j < lin.w.cols; ++j) next[j] += xi * lin.w.at(i, j);
        }
        if (l + 1 < layers.size()) {
            for (auto& e : next) {
                if (e < 0.0) e *= alpha;
            }
        }
        cur = std::move(next);
    }
    return cur;
}

IbModel IbModel::init(const ModelConfig& cfg, const Normalization& norm, Rng& rng) {
    cfg.validate();
    IbModel m;
    m.config = cfg;
    m.norm = norm;

    const std::size_t pe = cfg.pe_dim();
    const std::size_t n_enc = cfg.n_bottlenecks();
    const std::size_t enc_in = (cfg.mode == Mode::IB) ? 4 * pe : pe;
    for (std::size_t k = 0; k < n_enc; ++k) {
        Mlp enc = Mlp::init(enc_in, cfg.encoder_widths, 2 * cfg.bottleneck_dim, rng);
        // Zero the log-variance half of the head so posteriors start at the prior.
        Linear& head = enc.layers.back();
        for (std::size_t i = 0; i < head.w.rows; ++i) {
            for (std::size_t j = cfg.bottleneck_dim; j < head.w.cols; ++j) {
                head.w.at(i, j) = 0.0;
            }
        }
        m.encoders.push_back(std::move(enc));
    }
    m.shared_head = Mlp::init(n_enc * cfg.bottleneck_dim, cfg.shared_widths, cfg.shared_dim, rng);
    m.future_encoder = Mlp::init(4 * pe, cfg.future_widths, cfg.shared_dim, rng);
    return m;
}

std::vector<ad::Tensor*> IbModel::parameters() {
    std::vector<ad::Tensor*> out;
    auto push_mlp = [&out](Mlp& m) {
        for (auto& l : m.layers) {
            out.push_back(&l.w);
            out.push_back(&l.b);
        }
    };
    for (auto& e : encoders) push_mlp(e);
    push_mlp(shared_head);
    push_mlp(future_encoder);
    return out;
}

std::vector<const ad::Tensor*> IbModel::parameters() const {
    auto mut = const_cast<IbModel*>(this)->parameters();
    return {mut.begin(), mut.end()};
}

std::vector<std::string> IbModel::parameter_names() const {
    std::vector<std::string> out;
    auto push_mlp = [&out](const Mlp& m, const std::string& prefix) {
        for (std::size_t l = 0; l < m.layers.size(); ++l) {
            out.push_back(prefix + ".layer" + std::to_string(l) + ".w");
            out.push_back(prefix + ".layer" + std::to_string(l) + ".b");
        }
    };
    for (std::size_t k = 0; k < encoders.size(); ++k) {
        push_mlp(encoders[k], "encoder" + std::to_string(k));
    }
    push_mlp(shared_head, "shared_head");
    push_mlp(future_encoder, "future_encoder");
    return out;
}

std::array<double, 4> IbModel::standardize(const State& s) const {
    return {s.theta1, (s.omega1 - norm.omega1_mean) / norm.omega1_std, s.theta2,
            (s.omega2 - norm.omega2_mean) / norm.omega2_std};
}

std::vector<GaussianEmbedding> IbModel::posterior(const State& s) const {
    const auto vars = standardize(s);
    const std::size_t b = config.bottleneck_dim;
    std::vector<GaussianEmbedding> out;
    if (config.mode == Mode::IB) {
        std::vector<double> feat;
        for (double v : vars) {
            auto pe = positional_encode(v, config.pe_frequencies);
            feat.insert(feat.end(), pe.begin(), pe.end());
        }
        auto y = encoders[0].apply(feat, config.leaky_alpha);
        out.push_back({{y.begin(), y.begin() + static_cast<std::ptrdiff_t>(b)},
                       {y.begin() + static_cast<std::ptrdiff_t>(b), y.end()}});
    } else {
        for (std::size_t k = 0; k < 4; ++k) {
            auto feat = positional_encode(vars[k], config.pe_frequencies);
            auto y = encoders[k].apply(feat, config.leaky_alpha);
            out.push_back({{y.begin(), y.begin() + static_cast<std::ptrdiff_t>(b)},
                           {y.begin() + static_cast<std::ptrdiff_t>(b), y.end()}});
        }
    }
    return out;
}

GaussianEmbedding IbModel::product_posterior(const State& s) const {
    GaussianEmbedding out;
    for (const auto& p : posterior(s)) {
        out.mean.insert(out.mean.end(), p.mean.begin(), p.mean.end());
        out.log_var.insert(out.log_var.end(), p.log_var.begin(), p.log_var.end());
    }
    return out;
}

namespace {

json model_manifest(const IbModel& m, std::int64_t step, const std::string& rng_state) {
    const ModelConfig& c = m.config;
    return json{{"format", "chaosib-checkpoint"},
                {"version", 1},
                {"mode", mode_name(c.mode)},
                {"bottleneck_dim", c.bottleneck_dim},
                {"shared_dim", c.shared_dim},
                {"encoder_widths", c.encoder_widths},
                {"shared_widths", c.shared_widths},
                {"future_widths", c.future_widths},
                {"pe_frequencies", c.pe_frequencies},
                {"nce_temperature", c.nce_temperature},
                {"leaky_alpha", c.leaky_alpha},
                {"normalization",
                 {{"omega1_mean", m.norm.omega1_mean},
                  {"omega1_std", m.norm.omega1_std},
                  {"omega2_mean", m.norm.omega2_mean},
                  {"omega2_std", m.norm.omega2_std}}},
                {"step", step},
                {"rng_state", rng_state}};
}

}  // namespace

void save_model(const IbModel& m, std::int64_t step, const std::string& rng_state,
                const std::string& path) {
    const auto names = m.parameter_names();
    const auto params = m.parameters();
    std::vector<std::pair<std::string, const ad::Tensor*>> named;
    for (std::size_t i = 0; i < names.size(); ++i) named.emplace_back(names[i], params[i]);
    save_checkpoint(path, model_manifest(m, step, rng_state), named);
}

LoadedModel load_model(const std::string& path) {
    Checkpoint ck = load_checkpoint(path);
    const json& man = ck.manifest;
    if (man.value("format", "") != "chaosib-checkpoint") {
        throw std::runtime_error("load_model: " + path + " is not a chaosib checkpoint");
    }
    ModelConfig cfg;
    cfg.mode = mode_from_name(man.at("mode").get<std::string>());
    cfg.bottleneck_dim = man.at("bottleneck_dim").get<std::size_t>();
    cfg.shared_dim = man.at("shared_dim").get<std::size_t>();
    cfg.encoder_widths = man.at("encoder_widths").get<std::vector<std::size_t>>();
    cfg.shared_widths = man.at("shared_widths").get<std::vector<std::size_t>>();
    cfg.future_widths = man.at("future_widths").get<std::vector<std::size_t>>();
    cfg.pe_frequencies = man.at("pe_frequencies").get<std::vector<double>>();
    cfg.nce_temperature = man.at("nce_temperature").get<double>();
    cfg.leaky_alpha = man.at("leaky_alpha").get<double>();

    Normalization norm;
    const json& jn = man.at("normalization");
    norm.omega1_mean = jn.at("omega1_mean").get<double>();
    norm.omega1_std = jn.at("omega1_std").get<double>();
    norm.omega2_mean = jn.at("omega2_mean").get<double>();
    norm.omega2_std = jn.at("omega2_std").get<double>();

    Rng scratch(0);
    LoadedModel out{IbModel::init(cfg, norm, scratch), man.at("step").get<std::int64_t>(),
                    man.value("rng_state", "")};

    const auto names = out.model.parameter_names();
    auto params = out.model.parameters();
    if (ck.params.size() != params.size()) {
        throw std::runtime_error("load_model: parameter count mismatch in " + path);
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& [name, tensor] = ck.params[i];
        if (name != names[i] || !tensor.same_shape(*params[i])) {
            throw std::runtime_error("load_model: parameter \"" + name
                                     + "\" does not match architecture in " + path);
        }
        *params[i] = tensor;
    }
    return out;
}

BoundModel::BoundModel(ad::Graph& g, IbModel& m) : g_(&g), model_(&m) {
    for (ad::Tensor* p : m.parameters()) {
        param_refs_.push_back(g_->input(*p, /*requires_grad=*/true));
    }
    for (std::size_t i = 0; i + 1 < param_refs_.size(); i += 2) {
        layer_refs_.emplace_back(param_refs_[i], param_refs_[i + 1]);
    }
}

ad::Tensor BoundModel::features(const std::vector<State>& states, int var_index) const {
    const auto& freqs = model_->config.pe_frequencies;
    const std::size_t pe = model_->config.pe_dim();
    const std::size_t cols = (var_index < 0) ? 4 * pe : pe;
    ad::Tensor out(states.size(), cols);
    for (std::size_t i = 0; i < states.size(); ++i) {
        const auto vars = model_->standardize(states[i]);
        std::size_t off = 0;
        for (std::size_t k = 0; k < 4; ++k) {
            if (var_index >= 0 && static_cast<std::size_t>(var_index) != k) continue;
            for (double f : freqs) {
                out.at(i, off++) = std::sin(f * vars[k]);
                out.at(i, off++) = std::cos(f * vars[k]);
            }
        }
    }
    return out;
}

ad::Graph::Ref BoundModel::mlp_forward(ad::Graph::Ref x, std::size_t first_layer_index,
                                       std::size_t n_layers) {
    ad::Graph::Ref cur = x;
    for (std::size_t l = 0; l < n_layers; ++l) {
        const auto& [w, b] = layer_refs_[first_layer_index + l];
        cur = g_->add_bias(g_->matmul(cur, w), b);
        if (l + 1 < n_layers) cur = g_->leaky_relu(cur, model_->config.leaky_alpha);
    }
    return cur;
}

BoundModel::EncodeResult BoundModel::encode_present(const std::vector<State>& states,
                                                    const ad::Tensor& noise) {
    const ModelConfig& cfg = model_->config;
    const std::size_t n = states.size();
    const std::size_t b = cfg.bottleneck_dim;
    const std::size_t n_enc = cfg.n_bottlenecks();
    if (noise.rows != n || noise.cols != n_enc * b) {
        throw std::invalid_argument("encode_present: noise shape " + noise.shape_str()
                                    + " does not match [" + std::to_string(n) + "x"
                                    + std::to_string(n_enc * b) + "]");
    }
    const std::size_t layers_per_enc = model_->encoders[0].layers.size();

    EncodeResult res;
    std::vector<ad::Graph::Ref> samples;
    for (std::size_t k = 0; k < n_enc; ++k) {
        const int var_index = (cfg.mode == Mode::IB) ? -1 : static_cast<int>(k);
        ad::Graph::Ref x = g_->input(features(states, var_index));
        ad::Graph::Ref y = mlp_forward(x, k * layers_per_enc, layers_per_enc);
        ad::Graph::Ref mean = g_->slice_cols(y, 0, b);
        ad::Graph::Ref log_var = g_->slice_cols(y, b, b);

        ad::Tensor noise_k(n, b);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < b; ++j) noise_k.at(i, j) = noise.at(i, k * b + j);
        }
        samples.push_back(g_->gaussian_reparameterize(mean, log_var, noise_k));
        res.post_mean.push_back(mean);
        res.post_log_var.push_back(log_var);
    }
    ad::Graph::Ref z = (samples.size() == 1) ? samples[0] : g_->concat_cols(samples);

    const std::size_t shared_first = n_enc * layers_per_enc;
    res.u = mlp_forward(z, shared_first, model_->shared_head.layers.size());
    return res;
}

ad::Graph::Ref BoundModel::encode_future(const std::vector<State>& states) {
    const std::size_t layers_per_enc = model_->encoders[0].layers.size();
    const std::size_t first = model_->encoders.size() * layers_per_enc
                              + model_->shared_head.layers.size();
    ad::Graph::Ref x = g_->input(features(states, -1));
    return mlp_forward(x, first, model_->future_encoder.layers.size());
}

std::vector<const ad::Tensor*> BoundModel::parameter_grads() const {
    std::vector<const ad::Tensor*> out;
    out.reserve(param_refs_.size());
    for (ad::Graph::Ref r : param_refs_) out.push_back(&g_->grad(r));
    return out;
}

double kl_to_standard_normal(const GaussianEmbedding& e) {
    if (e.mean.size() != e.log_var.size()) {
        throw std::invalid_argument("kl_to_standard_normal: mean/log_var size mismatch");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < e.mean.size(); ++i) {
        acc += e.mean[i] * e.mean[i] + std::exp(e.log_var[i]) - 1.0 - e.log_var[i];
    }
    return 0.5 * acc;
}

InfoNceResult infonce_loss(const std::vector<std::vector<double>>& u,
                           const std::vector<std::vector<double>>& v, double tau) {
    const std::size_t n = u.size();
    if (n < 2 || v.size() != n) {
        throw std::invalid_argument("infonce_loss: need matched batches with n >= 2");
    }
    if (!(tau > 0.0)) throw std::invalid_argument("infonce_loss: tau must be > 0");

    auto sim = [tau](const std::vector<double>& a, const std::vector<double>& b) {
        if (a.size() != b.size()) {
            throw std::invalid_argument("infonce_loss: embedding dimension mismatch");
        }
        double d2 = 0.0;
        for (std::size_t k = 0; k < a.size(); ++k) {
            const double d = a[k] - b[k];
            d2 += d * d;
        }
        return -d2 / tau;
    };

    double total = 0.0;
    std::vector<double> row(n);
    for (std::size_t i = 0; i < n; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
            row[j] = sim(u[i], v[j]);
            mx = std::max(mx, row[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) z += std::exp(row[j] - mx);
        total += std::log(z) + mx - row[i];
    }
    InfoNceResult res;
    res.total_loss = total;
    res.mean_loss = total / static_cast<double>(n);
    res.mi_estimate = std::max(0.0, std::log(static_cast<double>(n)) - res.mean_loss);
    return res;
}

LossBreakdown total_loss(const std::vector<double>& kl_per_variable, double infonce_mean_loss,
                         std::size_t batch_size, double beta) {
    if (beta < 0.0) throw std::invalid_argument("total_loss: beta must be >= 0");
    LossBreakdown b;
    b.kl_per_variable = kl_per_variable;
    b.kl_total = std::accumulate(kl_per_variable.begin(), kl_per_variable.end(), 0.0);
    b.infonce_loss = infonce_mean_loss;
    b.total = beta * b.kl_total + infonce_mean_loss;
    b.mi_estimate = std::max(0.0, std::log(static_cast<double>(batch_size)) - infonce_mean_loss);
    return b;
}

LossRefs build_loss(BoundModel& bound, const std::vector<State>& present,
                    const std::vector<State>& future, const ad::Tensor& noise, double beta) {
    if (present.size() != future.size()) {
        throw std::invalid_argument("build_loss: present/future batch size mismatch");
    }
    if (present.size() < 2) {
        throw std::invalid_argument("build_loss: batch size must be >= 2 for InfoNCE");
    }
    ad::Graph& g = bound.graph();

    auto enc = bound.encode_present(present, noise);
    ad::Graph::Ref v = bound.encode_future(future);

    LossRefs refs;
    ad::Graph::Ref kl_total = -1;
    for (std::size_t k = 0; k < enc.post_mean.size(); ++k) {
        // KL(N(mu, diag sigma^2) || N(0, I)) = 0.5 sum(mu^2 + sigma^2 - 1 - log sigma^2),
        // averaged over the batch.
        ad::Graph::Ref mu2 = g.square(enc.post_mean[k]);
        ad::Graph::Ref var = g.exp(enc.post_log_var[k]);
        ad::Graph::Ref t = g.sub(g.add_scalar(g.add(mu2, var), -1.0), enc.post_log_var[k]);
        ad::Graph::Ref kl = g.scale(g.mean(g.row_sum(t)), 0.5);
        refs.kl_per_variable.push_back(kl);
        kl_total = (kl_total < 0) ? kl : g.add(kl_total, kl);
    }

    const double tau = bound.model().config.nce_temperature;
    ad::Graph::Ref logits = g.scale(g.pairwise_neg_sqdist(enc.u, v), 1.0 / tau);
    std::vector<std::size_t> labels(present.size());
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i;
    refs.infonce_mean = g.mean(g.softmax_cross_entropy_with_logits(logits, labels));

    refs.total = g.add(g.scale(kl_total, beta), refs.infonce_mean);
    return refs;
}

LossBreakdown read_breakdown(const ad::Graph& g, const LossRefs& refs, std::size_t batch_size,
                             double beta) {
    std::vector<double> kls;
    kls.reserve(refs.kl_per_variable.size());
    for (auto r : refs.kl_per_variable) kls.push_back(g.value(r).v[0]);
    LossBreakdown b = total_loss(kls, g.value(refs.infonce_mean).v[0], batch_size, beta);
    b.total = g.value(refs.total).v[0];
    return b;
}

}  // namespace chaosib
