// attacks.hpp - gradient-based adversarial example crafting.
//
// FGSM, iterative FGSM and PGD share one loop: step along the (sign or
// normalized) input gradient, project the perturbation back into the L2 or
// L-inf ball around the clean input, then clamp to the pixel range. FGSM is
// that loop with one step of size epsilon and no random start.

#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "model.hpp"
#include "rng.hpp"

namespace dpaat {

enum class AttackMethod { FGSM, IFGSM, PGD };
enum class Norm { L2, Linf };
enum class StepDirection { Sign, NormalizedGradient };

inline const char* norm_name(Norm p) { return p == Norm::L2 ? "l2" : "linf"; }

struct ClampRange {
    Real lo = 0;
    Real hi = 1;
};

struct AttackSpec {
    AttackMethod method = AttackMethod::PGD;
    Norm norm = Norm::L2;
    Real epsilon = Real(0.3);
    Real step = Real(0.15);
    std::size_t steps = 7;
    bool random_start = true;
    std::optional<ClampRange> clamp;
    StepDirection direction = StepDirection::Sign;
    std::string name = "7-PGD";

    // Applies the per-method forcing rules and checks ranges.
    AttackSpec normalized() const {
        AttackSpec s = *this;
        if (s.method == AttackMethod::FGSM) {
            s.steps = 1;
            s.random_start = false;
        } else if (s.method == AttackMethod::IFGSM) {
            s.random_start = false;
        }
        if (!(s.epsilon >= 0)) throw ContractError("attack '" + name + "': epsilon must be >= 0");
        if (!(s.step > 0)) throw ContractError("attack '" + name + "': step must be > 0");
        if (s.clamp && !(s.clamp->lo < s.clamp->hi)) throw ContractError("attack '" + name + "': empty clamp range");
        return s;
    }
};

// Names like "FGSM", "10-IFGSM" (L-inf) and "20-PGD" (L2); an optional
// "-l2"/"-linf" suffix overrides the norm.
inline AttackSpec parse_attack_name(const std::string& name, Real epsilon, Real step, StepDirection direction,
                                    bool clamp) {
    AttackSpec s;
    s.name = name;
    s.epsilon = epsilon;
    s.step = step;
    s.direction = direction;
    if (clamp) s.clamp = ClampRange{};
    std::string rest = name;
    std::optional<Norm> norm;
    for (auto [suffix, p] : {std::pair{"-linf", Norm::Linf}, std::pair{"-l2", Norm::L2}}) {
        const std::string suf = suffix;
        if (rest.size() > suf.size() && rest.compare(rest.size() - suf.size(), suf.size(), suf) == 0) {
            norm = p;
            rest.resize(rest.size() - suf.size());
            break;
        }
    }
    std::size_t steps = 1;
    if (const auto dash = rest.find('-'); dash != std::string::npos) {
        auto [p, ec] = std::from_chars(rest.data(), rest.data() + dash, steps);
        if (ec != std::errc() || p != rest.data() + dash || steps == 0)
            throw ContractError("bad attack name '" + name + "': step count must be a positive integer");
        rest = rest.substr(dash + 1);
    } else if (rest != "FGSM") {
        throw ContractError("bad attack name '" + name + "': expected FGSM, k-IFGSM or k-PGD");
    }
    if (rest == "FGSM") {
        if (steps != 1) throw ContractError("bad attack name '" + name + "': FGSM is single-step");
        s.method = AttackMethod::FGSM;
        s.norm = Norm::Linf;
        s.random_start = false;
    } else if (rest == "IFGSM") {
        s.method = AttackMethod::IFGSM;
        s.norm = Norm::Linf;
        s.random_start = false;
    } else if (rest == "PGD") {
        s.method = AttackMethod::PGD;
        s.norm = Norm::L2;
        s.random_start = true;
    } else {
        throw ContractError("bad attack name '" + name + "': unknown method '" + rest + "'");
    }
    if (norm) s.norm = *norm;
    s.steps = steps;
    return s.normalized();
}

struct AdvBatch {
    Tensor x_adv;
    std::vector<Real> delta_norms;
    std::vector<bool> success; // argmax changed between x and x_adv
    Tensor clean_loss;         // per-example loss at x
    Tensor adv_loss;           // per-example loss at x_adv
};

inline Tensor sign(const Tensor& t) {
    Tensor out(t.shape());
    for (std::size_t i = 0; i < t.numel(); ++i) out[i] = Real((t[i] > 0) - (t[i] < 0));
    return out;
}

inline Real norm_p(std::span<const Real> v, Norm p) {
    Real acc = 0;
    if (p == Norm::Linf) {
        for (auto x : v) acc = std::max(acc, std::abs(x));
        return acc;
    }
    for (auto x : v) acc += x * x;
    return std::sqrt(acc);
}

// In-place projection of one perturbation vector onto the epsilon-ball.
inline void project_in_place(std::span<Real> delta, Norm p, Real epsilon) {
    if (p == Norm::Linf) {
        for (auto& d : delta) d = std::clamp(d, -epsilon, epsilon);
        return;
    }
    const Real n = norm_p(delta, Norm::L2);
    if (n > epsilon) {
        const Real scale = epsilon / n;
        for (auto& d : delta) d *= scale;
    }
}

// Projection of a whole tensor (treated as one vector) onto the epsilon-ball.
inline Tensor project_to_ball(const Tensor& delta, Norm p, Real epsilon) {
    if (epsilon < 0) throw ContractError("project_to_ball: epsilon must be >= 0");
    Tensor out = delta;
    project_in_place(out.data(), p, epsilon);
    return out;
}

inline std::vector<Real> delta_norms(const Tensor& x, const Tensor& x_adv, Norm p) {
    const std::size_t n = x.dim(0), stride = x.numel() / n;
    std::vector<Real> out(n);
    std::vector<Real> d(stride);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < stride; ++j) d[j] = x_adv[i * stride + j] - x[i * stride + j];
        out[i] = norm_p(d, p);
    }
    return out;
}

namespace detail {

inline void clamp_rows(std::span<Real> v, const std::optional<ClampRange>& range) {
    if (!range) return;
    for (auto& x : v) x = std::clamp(x, range->lo, range->hi);
}

// Relative slack under which a requested radius counts as the current one.
inline constexpr Real kRescaleNoOpTolerance = Real(1e-12);

} // namespace detail

// Moves each example's perturbation onto radius new_eps[i] along its current
// direction: x + delta * (new_eps / ||delta||_p). Zero perturbations stay zero;
// radii equal to the current norm leave x_adv untouched.
inline Tensor rescale_perturbation(const Tensor& x, const Tensor& x_adv, Norm p, std::span<const Real> new_eps,
                                   const std::optional<ClampRange>& clamp = std::nullopt) {
    if (x.shape() != x_adv.shape())
        throw ShapeError("rescale_perturbation: " + shape_str(x.shape()) + " vs " + shape_str(x_adv.shape()));
    const std::size_t n = x.dim(0), stride = x.numel() / n;
    if (new_eps.size() != n)
        throw ShapeError("rescale_perturbation: " + std::to_string(new_eps.size()) + " radii for " +
                         std::to_string(n) + " examples");
    Tensor out = x_adv;
    std::vector<Real> d(stride);
    for (std::size_t i = 0; i < n; ++i) {
        if (new_eps[i] < 0) throw ContractError("rescale_perturbation: new epsilon must be >= 0");
        for (std::size_t j = 0; j < stride; ++j) d[j] = x_adv[i * stride + j] - x[i * stride + j];
        const Real cur = norm_p(d, p);
        auto row = out.data().subspan(i * stride, stride);
        if (cur == 0) {
            std::copy_n(x.data().begin() + i * stride, stride, row.begin());
            continue;
        }
        if (std::abs(cur - new_eps[i]) <= detail::kRescaleNoOpTolerance * std::max(cur, new_eps[i])) continue;
        const Real scale = new_eps[i] / cur;
        for (std::size_t j = 0; j < stride; ++j) row[j] = x[i * stride + j] + d[j] * scale;
        detail::clamp_rows(row, clamp);
    }
    return out;
}

// Single-example convenience form.
inline Tensor rescale_perturbation(const Tensor& x, const Tensor& x_adv, Norm p, Real new_eps,
                                   const std::optional<ClampRange>& clamp = std::nullopt) {
    const Tensor xb = x.reshaped({1, x.numel()});
    const Tensor ab = x_adv.reshaped({1, x_adv.numel()});
    const Real e[1] = {new_eps};
    return rescale_perturbation(xb, ab, p, std::span<const Real>(e, 1), clamp).reshaped(x.shape());
}

// Iterative attack over a batch; FGSM is one step of size epsilon.
// per_example_eps, when non-empty, overrides spec.epsilon per example.
// Random starts draw from key.with_c(first_index + i) for example i.
inline AdvBatch iterative_attack(Classifier& model, const Tensor& x, std::span<const std::size_t> labels,
                                 const AttackSpec& raw_spec, const StreamKey& key = {},
                                 std::span<const Real> per_example_eps = {}, std::size_t first_index = 0) {
    const AttackSpec spec = raw_spec.normalized();
    if (spec.steps == 0) throw ContractError("attack '" + spec.name + "': steps must be >= 1");
    model.check_input(x);
    const std::size_t n = x.dim(0), stride = x.numel() / n;
    if (labels.size() != n) throw ShapeError("attack: " + std::to_string(labels.size()) + " labels for " +
                                             std::to_string(n) + " examples");
    if (!per_example_eps.empty() && per_example_eps.size() != n)
        throw ShapeError("attack: per-example epsilon count does not match batch");
    auto eps_of = [&](std::size_t i) { return per_example_eps.empty() ? spec.epsilon : per_example_eps[i]; };
    for (std::size_t i = 0; i < n; ++i)
        if (!(eps_of(i) >= 0)) throw ContractError("attack: epsilon must be >= 0");

    Tensor cur = x;
    if (spec.random_start) {
        std::vector<Real> delta(stride);
        for (std::size_t i = 0; i < n; ++i) {
            CounterStream rs(key.with_c(first_index + i));
            const Real e = eps_of(i);
            for (auto& d : delta) d = static_cast<Real>(rs.uniform(-e, e));
            project_in_place(delta, spec.norm, e);
            auto row = cur.data().subspan(i * stride, stride);
            for (std::size_t j = 0; j < stride; ++j) row[j] = x[i * stride + j] + delta[j];
            detail::clamp_rows(row, spec.clamp);
        }
    }

    std::vector<Real> delta(stride);
    for (std::size_t t = 0; t < spec.steps; ++t) {
        for (std::size_t s = 0; s < n; s += Classifier::kEvalChunk) {
            const std::size_t e = std::min(n, s + Classifier::kEvalChunk);
            const Labels chunk_labels(labels.begin() + s, labels.begin() + e);
            const Tensor grad = model.loss_and_input_grad(cur.rows(s, e), chunk_labels).input_grad;
            for (std::size_t i = s; i < e; ++i) {
                const auto g = grad.data().subspan((i - s) * stride, stride);
                Real scale = 1;
                if (spec.direction == StepDirection::NormalizedGradient) {
                    const Real gn = norm_p(g, Norm::L2);
                    scale = gn > 0 ? Real(1) / gn : Real(0);
                }
                // FGSM steps the full radius in one go.
                const Real step = spec.method == AttackMethod::FGSM ? eps_of(i) : spec.step;
                auto row = cur.data().subspan(i * stride, stride);
                for (std::size_t j = 0; j < stride; ++j) {
                    const Real dir = spec.direction == StepDirection::Sign ? Real((g[j] > 0) - (g[j] < 0))
                                                                           : g[j] * scale;
                    delta[j] = row[j] + step * dir - x[i * stride + j];
                }
                project_in_place(delta, spec.norm, eps_of(i));
                for (std::size_t j = 0; j < stride; ++j) row[j] = x[i * stride + j] + delta[j];
                detail::clamp_rows(row, spec.clamp);
            }
        }
    }

    AdvBatch out;
    out.delta_norms = delta_norms(x, cur, spec.norm);
    const Tensor p_clean = model.predict_proba(x);
    const Tensor p_adv = model.predict_proba(cur);
    out.clean_loss = cross_entropy(p_clean, labels);
    out.adv_loss = cross_entropy(p_adv, labels);
    out.success.resize(n);
    for (std::size_t i = 0; i < n; ++i) out.success[i] = argmax_row(p_adv, i) != argmax_row(p_clean, i);
    out.x_adv = std::move(cur);
    return out;
}

// One signed step of size epsilon, projected and clamped.
inline AdvBatch fgsm(Classifier& model, const Tensor& x, std::span<const std::size_t> labels, const AttackSpec& spec) {
    if (spec.method != AttackMethod::FGSM) throw ContractError("fgsm called with a non-FGSM spec '" + spec.name + "'");
    return iterative_attack(model, x, labels, spec);
}

inline AdvBatch run_attack(Classifier& model, const Tensor& x, std::span<const std::size_t> labels,
                           const AttackSpec& spec, const StreamKey& key = {}, std::span<const Real> per_example_eps = {},
                           std::size_t first_index = 0) {
    return iterative_attack(model, x, labels, spec, key, per_example_eps, first_index);
}

} // namespace dpaat
