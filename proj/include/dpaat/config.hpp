// config.hpp - experiment configuration.
//
// Plain text, one `section.key = value` per line, `#` starts a comment.
// Unknown keys are errors. Later lines (and --set overrides) win.

#pragma once

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "attacks.hpp"
#include "data.hpp"
#include "model.hpp"
#include "trainers.hpp"

namespace dpaat {

class ConfigError : public Error {
public:
    using Error::Error;
};

struct DataConfig {
    std::string source = "synth"; // synth | folder
    std::filesystem::path root;
    std::filesystem::path index;
    std::size_t classes = 3;
    std::size_t per_class = 200;
    std::size_t size = 32;
    std::uint64_t seed = 0;
    SynthOptions synth;
    SplitFractions fractions;
};

struct ModelConfig {
    std::string arch = "small_cnn"; // small_cnn | mlp | linear
    std::size_t hidden = 64;
    std::uint64_t seed = 0;
};

struct EvalConfig {
    std::vector<std::string> attacks{"FGSM", "10-IFGSM", "20-IFGSM", "20-PGD", "50-PGD"};
    Real epsilon = Real(0.3);
    Real step = Real(0.15);
    StepDirection direction = StepDirection::Sign;
    bool clamp = true;
    std::uint64_t seed = 0;

    std::vector<AttackSpec> specs() const {
        std::vector<AttackSpec> out;
        for (const auto& a : attacks) out.push_back(parse_attack_name(a, epsilon, step, direction, clamp));
        return out;
    }
};

struct ExperimentConfig {
    DataConfig data;
    ModelConfig model;
    TrainConfig train;
    EvalConfig eval;
    std::size_t gradcam_count = 8;
    bool record_time = false;
    std::filesystem::path out_dir;

    // Cross-field checks; throws ConfigError naming the key.
    void validate() const {
        auto wrap = [](const char* key, auto&& fn) {
            try {
                fn();
            } catch (const ConfigError&) {
                throw;
            } catch (const Error& e) {
                throw ConfigError(std::string(key) + ": " + e.what());
            }
        };
        if (data.source != "synth" && data.source != "folder")
            throw ConfigError("data.source: expected synth or folder, got '" + data.source + "'");
        if (data.source == "folder" && data.index.empty()) throw ConfigError("data.index: required for folder source");
        if (data.classes < 2) throw ConfigError("data.classes: need at least 2");
        if (data.per_class == 0) throw ConfigError("data.per_class: must be positive");
        if (data.size == 0) throw ConfigError("data.size: must be positive");
        const auto& f = data.fractions;
        if (!(f.train > 0 && f.val > 0 && f.test > 0) || f.train + f.val + f.test > Real(1) + Real(1e-9))
            throw ConfigError("data.train_fraction: fractions must be positive and sum to at most 1");
        if (model.arch != "small_cnn" && model.arch != "mlp" && model.arch != "linear")
            throw ConfigError("model.arch: expected small_cnn, mlp or linear, got '" + model.arch + "'");
        if (model.hidden == 0) throw ConfigError("model.hidden: must be positive");
        wrap("train", [&] { train.validate(); });
        wrap("eval.attacks", [&] { (void)eval.specs(); });
        if (eval.attacks.empty()) throw ConfigError("eval.attacks: at least one attack is required");
    }
};

namespace detail {

inline std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline Real parse_real(const std::string& key, const std::string& v) {
    double out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (v.empty() || ec != std::errc() || p != v.data() + v.size() || !std::isfinite(out))
        throw ConfigError(key + ": expected a number, got '" + v + "'");
    return static_cast<Real>(out);
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (v.empty() || ec != std::errc() || p != v.data() + v.size())
        throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "on" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "off" || v == "0" || v == "no") return false;
    throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

inline std::vector<std::string> parse_list(const std::string& v) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream is(v);
    while (std::getline(is, cell, ',')) {
        cell = trim(cell);
        if (!cell.empty()) out.push_back(cell);
    }
    return out;
}

inline StepDirection parse_direction(const std::string& key, const std::string& v) {
    if (v == "sign") return StepDirection::Sign;
    if (v == "normalized") return StepDirection::NormalizedGradient;
    throw ConfigError(key + ": expected sign or normalized, got '" + v + "'");
}

using Setter = std::function<void(ExperimentConfig&, const std::string& key, const std::string& value)>;

inline const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = [] {
        std::map<std::string, Setter> t;
        auto real = [&](const char* key, auto member) {
            t[key] = [member](ExperimentConfig& c, const std::string& k, const std::string& v) {
                member(c) = parse_real(k, v);
            };
        };
        auto uint = [&](const char* key, auto member) {
            t[key] = [member](ExperimentConfig& c, const std::string& k, const std::string& v) {
                member(c) = static_cast<std::remove_reference_t<decltype(member(c))>>(parse_uint(k, v));
            };
        };
        auto opt_real = [&](const char* key, auto member) {
            t[key] = [member](ExperimentConfig& c, const std::string& k, const std::string& v) {
                if (v == "auto")
                    member(c).reset();
                else
                    member(c) = parse_real(k, v);
            };
        };

        t["run.seed"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
            const auto s = parse_uint(k, v);
            c.data.seed = c.model.seed = c.train.seed = c.eval.seed = s;
        };
        t["run.record_time"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
            c.record_time = parse_bool(k, v);
        };
        t["output.dir"] = [](ExperimentConfig& c, const std::string&, const std::string& v) { c.out_dir = v; };

        t["data.source"] = [](ExperimentConfig& c, const std::string&, const std::string& v) { c.data.source = v; };
        t["data.root"] = [](ExperimentConfig& c, const std::string&, const std::string& v) { c.data.root = v; };
        t["data.index"] = [](ExperimentConfig& c, const std::string&, const std::string& v) { c.data.index = v; };
        uint("data.classes", [](ExperimentConfig& c) -> std::size_t& { return c.data.classes; });
        uint("data.per_class", [](ExperimentConfig& c) -> std::size_t& { return c.data.per_class; });
        uint("data.size", [](ExperimentConfig& c) -> std::size_t& { return c.data.size; });
        uint("data.seed", [](ExperimentConfig& c) -> std::uint64_t& { return c.data.seed; });
        real("data.noise", [](ExperimentConfig& c) -> Real& { return c.data.synth.noise; });
        real("data.jitter", [](ExperimentConfig& c) -> Real& { return c.data.synth.jitter; });
        real("data.train_fraction", [](ExperimentConfig& c) -> Real& { return c.data.fractions.train; });
        real("data.val_fraction", [](ExperimentConfig& c) -> Real& { return c.data.fractions.val; });
        real("data.test_fraction", [](ExperimentConfig& c) -> Real& { return c.data.fractions.test; });

        t["model.arch"] = [](ExperimentConfig& c, const std::string&, const std::string& v) { c.model.arch = v; };
        uint("model.hidden", [](ExperimentConfig& c) -> std::size_t& { return c.model.hidden; });
        uint("model.seed", [](ExperimentConfig& c) -> std::uint64_t& { return c.model.seed; });

        t["train.method"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
            try {
                c.train.method = parse_method(v);
            } catch (const ContractError& e) {
                throw ConfigError(k + ": " + e.what());
            }
        };
        t["train.alpha"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
            const Real a = parse_real(k, v);
            if (!(a >= 0 && a <= 1)) throw ConfigError(k + ": " + v + " is out of range [0,1]");
            c.train.alpha = a;
        };
        real("train.beta", [](ExperimentConfig& c) -> Real& { return c.train.beta; });
        opt_real("train.xi", [](ExperimentConfig& c) -> std::optional<Real>& { return c.train.xi; });
        opt_real("train.delta_eps", [](ExperimentConfig& c) -> std::optional<Real>& { return c.train.delta_eps; });
        opt_real("train.eps_min", [](ExperimentConfig& c) -> std::optional<Real>& { return c.train.eps_min; });
        opt_real("train.gamma_cap", [](ExperimentConfig& c) -> std::optional<Real>& { return c.train.gamma_cap; });
        t["train.sync_variant"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
            if (v == "jsd")
                c.train.sync_variant = SyncVariant::Jsd;
            else if (v == "paper_literal")
                c.train.sync_variant = SyncVariant::PaperLiteral;
            else
                throw ConfigError(k + ": expected jsd or paper_literal, got '" + v + "'");
        };
        t["train.regenerate"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
            if (v == "rescale")
                c.train.regenerate = Regenerate::Rescale;
            else if (v == "reattack")
                c.train.regenerate = Regenerate::Reattack;
            else
                throw ConfigError(k + ": expected rescale or reattack, got '" + v + "'");
        };
        real("train.lr", [](ExperimentConfig& c) -> Real& { return c.train.lr; });
        uint("train.batch_size", [](ExperimentConfig& c) -> std::size_t& { return c.train.batch_size; });
        uint("train.epochs", [](ExperimentConfig& c) -> std::size_t& { return c.train.epochs; });
        uint("train.warmup_epochs", [](ExperimentConfig& c) -> std::size_t& { return c.train.warmup_epochs; });
        uint("train.patience", [](ExperimentConfig& c) -> std::size_t& { return c.train.patience; });
        uint("train.seed", [](ExperimentConfig& c) -> std::uint64_t& { return c.train.seed; });
        t["train.attack"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
            const AttackSpec& a = c.train.attack;
            try {
                c.train.attack = parse_attack_name(v, a.epsilon, a.step, a.direction, a.clamp.has_value());
            } catch (const ContractError& e) {
                throw ConfigError(k + ": " + e.what());
            }
        };
        real("train.attack_eps", [](ExperimentConfig& c) -> Real& { return c.train.attack.epsilon; });
        real("train.attack_step", [](ExperimentConfig& c) -> Real& { return c.train.attack.step; });
        t["train.attack_direction"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
            c.train.attack.direction = parse_direction(k, v);
        };
        t["train.attack_clamp"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
            if (parse_bool(k, v))
                c.train.attack.clamp = ClampRange{};
            else
                c.train.attack.clamp.reset();
        };

        t["eval.attacks"] = [](ExperimentConfig& c, const std::string&, const std::string& v) {
            c.eval.attacks = parse_list(v);
        };
        real("eval.eps", [](ExperimentConfig& c) -> Real& { return c.eval.epsilon; });
        real("eval.step", [](ExperimentConfig& c) -> Real& { return c.eval.step; });
        t["eval.direction"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
            c.eval.direction = parse_direction(k, v);
        };
        t["eval.clamp"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
            c.eval.clamp = parse_bool(k, v);
        };
        uint("eval.seed", [](ExperimentConfig& c) -> std::uint64_t& { return c.eval.seed; });
        uint("gradcam.count", [](ExperimentConfig& c) -> std::size_t& { return c.gradcam_count; });
        return t;
    }();
    return table;
}

} // namespace detail

inline std::vector<std::string> config_keys() {
    std::vector<std::string> out;
    for (const auto& [k, _] : detail::setters()) out.push_back(k);
    return out;
}

// Applies one `section.key=value` assignment.
inline void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
    const auto& t = detail::setters();
    const auto it = t.find(key);
    if (it == t.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second(cfg, key, value);
}

inline void apply_override(ExperimentConfig& cfg, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not of the form section.key=value");
    apply_setting(cfg, detail::trim(assignment.substr(0, eq)), detail::trim(assignment.substr(eq + 1)));
}

inline ExperimentConfig parse_config_text(const std::string& text, const std::string& origin = "<memory>",
                                          const std::vector<std::string>& overrides = {}) {
    ExperimentConfig cfg;
    std::istringstream is(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        const std::string where = origin + ":" + std::to_string(lineno) + ": ";
        if (eq == std::string::npos) throw ConfigError(where + "expected 'section.key = value'");
        const std::string key = detail::trim(line.substr(0, eq));
        if (key.find('.') == std::string::npos || key.front() == '.' || key.back() == '.')
            throw ConfigError(where + "key '" + key + "' is not of the form section.key");
        try {
            apply_setting(cfg, key, detail::trim(line.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ConfigError(where + e.what());
        }
    }
    for (const auto& o : overrides) apply_override(cfg, o);
    cfg.validate();
    return cfg;
}

inline ExperimentConfig parse_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {}) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str(), path.string(), overrides);
}

} // namespace dpaat
