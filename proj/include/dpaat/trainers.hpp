// trainers.hpp - STD, AT, SAT, AMAT and DPAAT training.
//
// Every adversarial method crafts x_adv per mini-batch with the configured
// attack at a fixed radius. AMAT and DPAAT then choose a per-example radius
// and regenerate x_adv (rescaling the existing perturbation by default, or
// re-running the attack). The loss is combined per method:
//   STD   clean
//   AT    adv
//   SAT   alpha*adv + (1-alpha)*clean
//   AMAT  (adv + clean) / 2
//   DPAAT SAT + beta*sync
// DPAAT_A_only keeps the radius adaptation with the SAT loss; DPAAT_B_only
// keeps the sync term without adaptation.

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "attacks.hpp"
#include "data.hpp"
#include "metrics.hpp"
#include "model.hpp"

namespace dpaat {

enum class TrainMethod { STD, AT, SAT, AMAT, DPAAT, DPAAT_A_only, DPAAT_B_only };
enum class SyncVariant { PaperLiteral, Jsd };
enum class Regenerate { Rescale, Reattack };

inline const char* method_name(TrainMethod m) {
    switch (m) {
        case TrainMethod::STD: return "STD";
        case TrainMethod::AT: return "AT";
        case TrainMethod::SAT: return "SAT";
        case TrainMethod::AMAT: return "AMAT";
        case TrainMethod::DPAAT: return "DPAAT";
        case TrainMethod::DPAAT_A_only: return "DPAAT_A_only";
        case TrainMethod::DPAAT_B_only: return "DPAAT_B_only";
    }
    return "?";
}

inline TrainMethod parse_method(const std::string& s) {
    for (auto m : {TrainMethod::STD, TrainMethod::AT, TrainMethod::SAT, TrainMethod::AMAT, TrainMethod::DPAAT,
                   TrainMethod::DPAAT_A_only, TrainMethod::DPAAT_B_only})
        if (s == method_name(m)) return m;
    throw ContractError("unknown training method '" + s + "'");
}

inline bool uses_attack(TrainMethod m) { return m != TrainMethod::STD; }
inline bool adapts_radius(TrainMethod m) { return m == TrainMethod::DPAAT || m == TrainMethod::DPAAT_A_only; }
inline bool uses_sync(TrainMethod m) { return m == TrainMethod::DPAAT || m == TrainMethod::DPAAT_B_only; }

struct TrainConfig {
    TrainMethod method = TrainMethod::DPAAT;
    Real alpha = Real(0.5);
    Real beta = Real(1.0);
    std::optional<Real> xi;        // AMAT threshold; default measured at start of training
    std::optional<Real> delta_eps; // AMAT increment; default 0.1 * epsilon
    SyncVariant sync_variant = SyncVariant::Jsd;
    Real lr = Real(0.0003);
    std::size_t batch_size = 32;
    std::size_t epochs = 50;
    std::size_t warmup_epochs = 0;
    std::size_t patience = 5;
    std::uint64_t seed = 0;
    AttackSpec attack{};             // 7-step L2 PGD, eps 0.3, step 0.15
    std::optional<Real> eps_min;     // default 0.05 * epsilon
    std::optional<Real> gamma_cap;   // default 2 * epsilon
    Regenerate regenerate = Regenerate::Rescale;

    Real resolved_eps_min() const { return eps_min.value_or(Real(0.05) * attack.epsilon); }
    Real resolved_gamma_cap() const { return gamma_cap.value_or(Real(2) * attack.epsilon); }
    Real resolved_delta_eps() const { return delta_eps.value_or(Real(0.1) * attack.epsilon); }

    void validate() const {
        if (!(alpha >= 0 && alpha <= 1)) throw ContractError("train.alpha must be in [0,1]");
        if (!(beta >= 0)) throw ContractError("train.beta must be >= 0");
        if (!(lr > 0)) throw ContractError("train.lr must be > 0");
        if (batch_size == 0) throw ContractError("train.batch_size must be > 0");
        if (epochs == 0) throw ContractError("train.epochs must be > 0");
        if (patience == 0) throw ContractError("train.patience must be > 0");
        if (!(resolved_eps_min() >= 0)) throw ContractError("train.eps_min must be >= 0");
        if (resolved_eps_min() > attack.epsilon) throw ContractError("train.eps_min must not exceed the attack epsilon");
        if (!(resolved_gamma_cap() >= 0)) throw ContractError("train.gamma_cap must be >= 0");
        if (!(resolved_delta_eps() >= 0)) throw ContractError("train.delta_eps must be >= 0");
        attack.normalized();
    }
};

// ---- synchronization loss ----------------------------------------------------

inline constexpr Real kProbFloor = Real(1e-12);
inline constexpr Real kLn2 = std::numbers::ln2_v<Real>;

// Per-example symmetric divergence between clean and adversarial probability
// rows. PaperLiteral is -1/2 sum(p log(p/(p+q)) + q log(q/(p+q))), which is
// ln 2 at p == q; Jsd is the Jensen-Shannon divergence ln 2 - literal, which
// is 0 at p == q.
inline Tensor sync_loss(const Tensor& y_ori, const Tensor& y_adv, SyncVariant variant) {
    if (y_ori.shape() != y_adv.shape() || y_ori.rank() != 2)
        throw ShapeError("sync_loss: " + shape_str(y_ori.shape()) + " vs " + shape_str(y_adv.shape()));
    const std::size_t n = y_ori.dim(0), c = y_ori.dim(1);
    Tensor out({n});
    for (std::size_t i = 0; i < n; ++i) {
        Real sp = 0, sq = 0;
        for (std::size_t k = 0; k < c; ++k) {
            sp += y_ori.at(i, k);
            sq += y_adv.at(i, k);
        }
        if (std::abs(sp - 1) > Real(1e-5) || std::abs(sq - 1) > Real(1e-5))
            throw ContractError("sync_loss: row " + std::to_string(i) + " is not a probability vector");
        Real acc = 0;
        for (std::size_t k = 0; k < c; ++k) {
            const Real p = y_ori.at(i, k), q = y_adv.at(i, k);
            const Real lp = std::log(std::max(p, kProbFloor));
            const Real lq = std::log(std::max(q, kProbFloor));
            const Real s = std::max(p + q, kProbFloor);
            if (variant == SyncVariant::PaperLiteral) {
                const Real ls = std::log(s);
                acc += p * (lp - ls) + q * (lq - ls);
            } else {
                const Real lm = std::log(s / 2);
                acc += p * (lp - lm) + q * (lq - lm);
            }
        }
        out[i] = variant == SyncVariant::PaperLiteral ? Real(-0.5) * acc : std::clamp(Real(0.5) * acc, Real(0), kLn2);
    }
    return out;
}

// ---- loss-change statistics and radius adaptation ------------------------------

struct BatchLossStats {
    std::vector<Real> delta_l;
    Real delta_l_avg = 0;
    std::vector<Real> gamma;
    std::vector<Real> eps_adapted;
    std::vector<bool> fragile;

    Real fragile_fraction() const {
        if (fragile.empty()) return 0;
        return Real(std::count(fragile.begin(), fragile.end(), true)) / Real(fragile.size());
    }
};

inline BatchLossStats batch_loss_stats(std::span<const Real> clean_loss, std::span<const Real> adv_loss) {
    if (clean_loss.size() != adv_loss.size())
        throw ShapeError("batch_loss_stats: " + std::to_string(clean_loss.size()) + " clean vs " +
                         std::to_string(adv_loss.size()) + " adversarial losses");
    if (clean_loss.empty()) throw ContractError("batch_loss_stats: empty batch");
    BatchLossStats s;
    Real sum = 0;
    for (std::size_t i = 0; i < clean_loss.size(); ++i) {
        s.delta_l.push_back(adv_loss[i] - clean_loss[i]);
        sum += s.delta_l.back();
    }
    s.delta_l_avg = sum / Real(s.delta_l.size());
    s.fragile.resize(s.delta_l.size());
    for (std::size_t i = 0; i < s.delta_l.size(); ++i) s.fragile[i] = s.delta_l[i] > s.delta_l_avg;
    return s;
}

inline constexpr Real kDeltaAvgFloor = Real(1e-8);

struct AdaptedEps {
    Real gamma;
    Real eps;
    bool fragile;
};

// Single-example form of adapt_epsilon.
inline AdaptedEps adapt_epsilon_one(Real delta_l, Real delta_l_avg, Real delta_norm, Real base_eps, Real eps_min,
                                    Real gamma_cap) {
    if (delta_norm < 0) throw ContractError("adapt_epsilon: negative perturbation norm");
    const bool fragile = delta_l > delta_l_avg;
    const Real gamma =
        std::min(base_eps * std::abs(delta_l - delta_l_avg) / std::max(delta_l_avg, kDeltaAvgFloor), gamma_cap);
    const Real eps = fragile ? delta_norm - gamma : delta_norm + gamma;
    return {gamma, std::max(eps, eps_min), fragile};
}

// gamma_i = eps * |dL_i - dL_avg| / max(dL_avg, 1e-8), capped at gamma_cap;
// fragile examples (dL_i > dL_avg) shrink to ||delta_i|| - gamma_i, the rest
// grow to ||delta_i|| + gamma_i; the result is floored at eps_min.
inline std::vector<Real> adapt_epsilon(BatchLossStats& stats, std::span<const Real> delta_norms, Real base_eps,
                                       Real eps_min, Real gamma_cap) {
    if (delta_norms.size() != stats.delta_l.size())
        throw ShapeError("adapt_epsilon: " + std::to_string(delta_norms.size()) + " norms for " +
                         std::to_string(stats.delta_l.size()) + " examples");
    stats.gamma.assign(delta_norms.size(), 0);
    stats.eps_adapted.assign(delta_norms.size(), 0);
    for (std::size_t i = 0; i < delta_norms.size(); ++i) {
        const auto a = adapt_epsilon_one(stats.delta_l[i], stats.delta_l_avg, delta_norms[i], base_eps, eps_min,
                                         gamma_cap);
        stats.gamma[i] = a.gamma;
        stats.eps_adapted[i] = a.eps;
    }
    return stats.eps_adapted;
}

// eps + delta_eps below the loss threshold xi, else (eps + ||delta_i||) / 2.
inline std::vector<Real> amat_epsilon(std::span<const Real> adv_loss, std::span<const Real> delta_norms, Real base_eps,
                                      Real xi, Real delta_eps) {
    if (adv_loss.size() != delta_norms.size())
        throw ShapeError("amat_epsilon: " + std::to_string(adv_loss.size()) + " losses vs " +
                         std::to_string(delta_norms.size()) + " norms");
    std::vector<Real> out(adv_loss.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = adv_loss[i] < xi ? base_eps + delta_eps : (base_eps + delta_norms[i]) / 2;
    return out;
}

// ---- loss combination --------------------------------------------------------

struct LossParts {
    std::optional<Real> clean;
    std::optional<Real> adv;
    std::optional<Real> sync;
};

inline Real total_loss(TrainMethod method, const LossParts& parts, Real alpha, Real beta) {
    auto need = [&](const std::optional<Real>& v, const char* what) {
        if (!v) throw ContractError(std::string("total_loss: method ") + method_name(method) + " needs the " + what +
                                    " loss");
        return *v;
    };
    switch (method) {
        case TrainMethod::STD: return need(parts.clean, "clean");
        case TrainMethod::AT: return need(parts.adv, "adversarial");
        case TrainMethod::SAT:
        case TrainMethod::DPAAT_A_only:
            return alpha * need(parts.adv, "adversarial") + (1 - alpha) * need(parts.clean, "clean");
        case TrainMethod::AMAT: return (need(parts.adv, "adversarial") + need(parts.clean, "clean")) * Real(0.5);
        case TrainMethod::DPAAT:
        case TrainMethod::DPAAT_B_only: {
            const Real sat = alpha * need(parts.adv, "adversarial") + (1 - alpha) * need(parts.clean, "clean");
            const Real sync = need(parts.sync, "sync");
            return beta == 0 ? sat : sat + sync * beta;
        }
    }
    return 0;
}

// Two towers (clean, adversarial) over shared parameters, combined per method.
struct TrainGraph {
    CompGraph graph;
    Tower clean;
    std::optional<Tower> adv;
    std::optional<NodeId> sync_mean;
    NodeId total;
};

inline NodeId sync_node(CompGraph& g, NodeId p, NodeId q, SyncVariant variant) {
    const NodeId lp = g.log(p, kProbFloor);
    const NodeId lq = g.log(q, kProbFloor);
    const NodeId s = g.add(p, q);
    const NodeId ls = g.log(s, kProbFloor);
    const NodeId cross = g.add(g.mul(p, lp), g.mul(q, lq));
    const NodeId inner = g.add(cross, g.mul(g.mul(s, ls), g.constant(Tensor::scalar(-1))));
    const NodeId literal = g.mul(g.sum(inner, Reduce::LastAxis), g.constant(Tensor::scalar(Real(-0.5))));
    if (variant == SyncVariant::PaperLiteral) return literal;
    return g.add(g.mul(literal, g.constant(Tensor::scalar(-1))), g.constant(Tensor::scalar(kLn2)));
}

inline TrainGraph build_train_graph(const ArchSpec& arch, const TrainConfig& cfg, std::size_t batch) {
    TrainGraph t;
    CompGraph& g = t.graph;
    const auto params = declare_params(g, arch);
    const NodeId y = g.input("y", {batch, arch.classes});
    t.clean = add_tower(g, arch, params, g.input("x", batch_input_shape(arch, batch)), y);
    if (!uses_attack(cfg.method)) {
        t.total = t.clean.loss_mean;
        g.set_output(t.total);
        return t;
    }
    t.adv = add_tower(g, arch, params, g.input("x_adv", batch_input_shape(arch, batch)), y);
    auto scaled = [&](NodeId v, Real k) { return g.mul(v, g.constant(Tensor::scalar(k))); };
    const NodeId sat = g.add(scaled(t.adv->loss_mean, cfg.alpha), scaled(t.clean.loss_mean, 1 - cfg.alpha));
    switch (cfg.method) {
        case TrainMethod::AT: t.total = t.adv->loss_mean; break;
        case TrainMethod::AMAT: t.total = scaled(g.add(t.adv->loss_mean, t.clean.loss_mean), Real(0.5)); break;
        case TrainMethod::DPAAT:
        case TrainMethod::DPAAT_B_only:
            if (cfg.beta != 0) {
                t.sync_mean = g.mean(sync_node(g, t.clean.probs, t.adv->probs, cfg.sync_variant));
                t.total = g.add(sat, scaled(*t.sync_mean, cfg.beta));
            } else {
                t.total = sat;
            }
            break;
        default: t.total = sat; break;
    }
    g.set_output(t.total);
    return t;
}

// ---- Adam ----------------------------------------------------------------------

struct OptimizerState {
    NamedTensors m;
    NamedTensors v;
    std::size_t step = 0;
    Real beta1 = Real(0.9);
    Real beta2 = Real(0.999);
    Real epsilon = Real(1e-8);

    friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

inline OptimizerState make_optimizer_state(const ModelParams& params) {
    OptimizerState s;
    for (const auto& [name, t] : params.entries) {
        s.m.push_back({name, Tensor(t.shape())});
        s.v.push_back({name, Tensor(t.shape())});
    }
    return s;
}

// Bias-corrected Adam. When `trainable` is given, only those parameters move
// (and only their moments update).
inline void adam_step(ModelParams& params, const NamedTensors& grads, OptimizerState& state, Real lr,
                      const std::function<bool(const std::string&)>& trainable = {}) {
    if (state.m.size() != params.entries.size()) throw ShapeError("adam_step: optimizer state does not match params");
    ++state.step;
    const Real c1 = 1 - std::pow(state.beta1, Real(state.step));
    const Real c2 = 1 - std::pow(state.beta2, Real(state.step));
    for (std::size_t k = 0; k < params.entries.size(); ++k) {
        auto& [name, p] = params.entries[k];
        if (trainable && !trainable(name)) continue;
        const Tensor* g = find_tensor(grads, name);
        if (!g) throw ShapeError("adam_step: no gradient for '" + name + "'");
        if (g->shape() != p.shape() || state.m[k].value.shape() != p.shape())
            throw ShapeError("adam_step: gradient for '" + name + "' has shape " + shape_str(g->shape()) +
                             ", parameter is " + shape_str(p.shape()));
        auto pd = p.data();
        auto md = state.m[k].value.data();
        auto vd = state.v[k].value.data();
        const auto gd = g->data();
        for (std::size_t i = 0; i < pd.size(); ++i) {
            md[i] = state.beta1 * md[i] + (1 - state.beta1) * gd[i];
            vd[i] = state.beta2 * vd[i] + (1 - state.beta2) * gd[i] * gd[i];
            const Real mhat = md[i] / c1;
            const Real vhat = vd[i] / c2;
            pd[i] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
        }
    }
}

// ---- early stopping ------------------------------------------------------------

struct StopDecision {
    bool stop = false;
    std::size_t best_epoch = 0; // 1-based; first occurrence of the maximum
};

inline StopDecision early_stop(std::span<const Real> history, std::size_t patience) {
    if (history.empty()) throw ContractError("early_stop: empty history");
    std::size_t best = 0;
    for (std::size_t i = 1; i < history.size(); ++i)
        if (history[i] > history[best]) best = i;
    return {history.size() - 1 - best >= patience, best + 1};
}

// ---- training loop -------------------------------------------------------------

struct EpochReport {
    std::size_t epoch = 0; // 1-based
    Real clean_loss = 0;
    Real adv_loss = 0;
    Real sync_loss = 0;
    Real fragile_frac = 0;
    Real val_gacc = 0;
    double seconds = 0;
};

inline constexpr const char* kTrainLogHeader = "epoch,clean_loss,adv_loss,sync_loss,fragile_frac,val_gacc,seconds";

// Training-log CSV. With record_time = false the seconds column is written as
// 0 so reruns produce identical bytes.
inline std::string train_log_csv(const std::vector<EpochReport>& rows, bool record_time) {
    std::string out = std::string(kTrainLogHeader) + "\n";
    for (const auto& r : rows) {
        out += std::to_string(r.epoch);
        for (Real v : {r.clean_loss, r.adv_loss, r.sync_loss, r.fragile_frac, r.val_gacc}) out += "," + format_real(v);
        out += "," + (record_time ? format_real(Real(r.seconds)) : std::string("0")) + "\n";
    }
    return out;
}

inline Real clean_accuracy(Classifier& model, const Dataset& d) {
    const Labels pred = argmax_rows(model.predict_proba(d.images));
    return accuracy(confusion(d.labels, pred, model.arch().classes));
}

class Trainer {
public:
    Trainer(ArchSpec arch, ModelParams init, TrainConfig cfg)
        : cfg_(std::move(cfg)), model_(std::move(arch), std::move(init)),
          opt_(make_optimizer_state(model_.params())) {
        cfg_.validate();
        cfg_.attack = cfg_.attack.normalized();
    }

    const TrainConfig& config() const { return cfg_; }
    Classifier& model() { return model_; }
    const OptimizerState& optimizer() const { return opt_; }
    std::size_t attack_calls() const { return attack_calls_; }
    std::optional<Real> xi() const { return xi_; }

    // One pass over `data` in the seeded order of (seed, epoch). Fills all
    // fields except val_gacc.
    EpochReport train_epoch(const Dataset& data, std::size_t epoch) {
        if (data.size() == 0) throw ContractError("train_epoch: empty dataset");
        const auto start = std::chrono::steady_clock::now();
        const std::size_t n = data.size();
        const auto order = Rng(derive_seed(cfg_.seed, 0xE70C0000ULL + epoch)).permutation(n);
        if (cfg_.method == TrainMethod::AMAT && !xi_) xi_ = cfg_.xi ? *cfg_.xi : measure_xi(data, order);

        EpochReport rep;
        rep.epoch = epoch + 1;
        std::size_t fragile = 0, counted = 0;
        const bool warm = epoch < cfg_.warmup_epochs;
        for (std::size_t s = 0, b = 0; s < n; s += cfg_.batch_size, ++b) {
            const std::size_t e = std::min(n, s + cfg_.batch_size);
            const std::span<const std::size_t> idx(order.data() + s, e - s);
            const Tensor x = gather_rows(data.images, idx);
            Labels y;
            for (auto i : idx) y.push_back(data.labels[i]);
            const BatchResult r = train_batch(x, y, StreamKey{cfg_.seed, epoch, b, 0}, warm);
            const Real m = Real(e - s);
            rep.clean_loss += r.clean_loss * m;
            rep.adv_loss += r.adv_loss * m;
            rep.sync_loss += r.sync_loss * m;
            fragile += r.fragile;
            counted += r.fragile_counted;
        }
        rep.clean_loss /= Real(n);
        rep.adv_loss /= Real(n);
        rep.sync_loss /= Real(n);
        rep.fragile_frac = counted ? Real(fragile) / Real(counted) : Real(0);
        rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        return rep;
    }

    struct Result {
        ModelParams best_params;
        std::vector<EpochReport> history;
        std::size_t best_epoch = 0;
        bool stopped_early = false;
    };

    // Epoch loop with validation GAcc and early stopping; returns the
    // parameters of the best validation epoch.
    Result fit(const Dataset& train, const Dataset& val,
               const std::function<void(const EpochReport&)>& on_epoch = {}) {
        Result res;
        std::vector<Real> gacc;
        for (std::size_t epoch = 0; epoch < cfg_.epochs; ++epoch) {
            EpochReport rep = train_epoch(train, epoch);
            rep.val_gacc = clean_accuracy(model_, val);
            gacc.push_back(rep.val_gacc);
            res.history.push_back(rep);
            if (on_epoch) on_epoch(rep);
            const StopDecision d = early_stop(gacc, cfg_.patience);
            if (d.best_epoch == gacc.size()) res.best_params = model_.params();
            res.best_epoch = d.best_epoch;
            if (d.stop) {
                res.stopped_early = true;
                break;
            }
        }
        return res;
    }

private:
    struct BatchResult {
        Real clean_loss = 0;
        Real adv_loss = 0;
        Real sync_loss = 0;
        std::size_t fragile = 0;
        std::size_t fragile_counted = 0;
    };

    TrainGraph& graph_for(std::size_t batch) {
        auto it = graphs_.find(batch);
        if (it == graphs_.end()) it = graphs_.emplace(batch, build_train_graph(model_.arch(), cfg_, batch)).first;
        return it->second;
    }

    // Median clean loss over the first batch of the first epoch, before any update.
    Real measure_xi(const Dataset& data, const std::vector<std::size_t>& order) {
        const std::size_t m = std::min(cfg_.batch_size, order.size());
        const std::span<const std::size_t> idx(order.data(), m);
        Labels y;
        for (auto i : idx) y.push_back(data.labels[i]);
        const Tensor loss = model_.per_example_loss(gather_rows(data.images, idx), y);
        std::vector<Real> v(loss.data().begin(), loss.data().end());
        std::sort(v.begin(), v.end());
        return v.size() % 2 ? v[v.size() / 2] : (v[v.size() / 2 - 1] + v[v.size() / 2]) / 2;
    }

    Tensor regenerate(const Tensor& x, const Labels& y, const AdvBatch& adv, const std::vector<Real>& eps,
                      const StreamKey& key) {
        if (cfg_.regenerate == Regenerate::Rescale)
            return rescale_perturbation(x, adv.x_adv, cfg_.attack.norm, eps, cfg_.attack.clamp);
        ++attack_calls_;
        return run_attack(model_, x, y, cfg_.attack, key, eps).x_adv;
    }

    BatchResult train_batch(const Tensor& x, const Labels& y, const StreamKey& key, bool warmup) {
        BatchResult r;
        TrainGraph& tg = graph_for(y.size());
        NamedTensors inputs{{"x", x}, {"y", one_hot(y, model_.arch().classes)}};
        if (uses_attack(cfg_.method)) {
            ++attack_calls_;
            const AdvBatch adv = run_attack(model_, x, y, cfg_.attack, key);
            Tensor x_adv = adv.x_adv;
            if (adapts_radius(cfg_.method)) {
                BatchLossStats stats = batch_loss_stats(adv.clean_loss.data(), adv.adv_loss.data());
                const auto eps = adapt_epsilon(stats, adv.delta_norms, cfg_.attack.epsilon, cfg_.resolved_eps_min(),
                                               cfg_.resolved_gamma_cap());
                x_adv = regenerate(x, y, adv, eps, key);
                r.fragile = static_cast<std::size_t>(std::count(stats.fragile.begin(), stats.fragile.end(), true));
                r.fragile_counted = y.size();
            } else if (cfg_.method == TrainMethod::AMAT) {
                const auto eps = amat_epsilon(adv.adv_loss.data(), adv.delta_norms, cfg_.attack.epsilon, *xi_,
                                              cfg_.resolved_delta_eps());
                x_adv = regenerate(x, y, adv, eps, key);
            }
            inputs.push_back({"x_adv", std::move(x_adv)});
        }
        tg.graph.forward(inputs, model_.params().entries);
        r.clean_loss = tg.graph.value(tg.clean.loss_mean)[0];
        if (tg.adv) {
            r.adv_loss = tg.graph.value(tg.adv->loss_mean)[0];
            r.sync_loss = mean_of(sync_loss(tg.graph.value(tg.clean.probs), tg.graph.value(tg.adv->probs),
                                            cfg_.sync_variant));
        }
        const Gradients g = tg.graph.backward(Tensor::scalar(1), GradScope::Params);
        if (warmup)
            adam_step(model_.mutable_params(), g.params, opt_, cfg_.lr,
                      [](const std::string& name) { return name.starts_with("dense"); });
        else
            adam_step(model_.mutable_params(), g.params, opt_, cfg_.lr);
        return r;
    }

    TrainConfig cfg_;
    Classifier model_;
    OptimizerState opt_;
    std::map<std::size_t, TrainGraph> graphs_;
    std::optional<Real> xi_;
    std::size_t attack_calls_ = 0;
};

} // namespace dpaat
