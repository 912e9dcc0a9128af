// pipeline.hpp - the commands behind the dpaat CLI.
//
// Artifacts under the output directory:
//   data/{train,val,test}/index.csv + images     synth-data
//   checkpoints/{method}.dpat, logs/train_{method}.csv     train
//   adversarial/{method}/{attack}/ + {attack}_norms.csv   attack
//   eval/{method}.csv                                      eval
//   gradcam/{method}/{image}_{method}_{class}.pgm|.csv     gradcam
//   report.csv                                             report
//   ablation.csv, ablation/train_{method}.csv              ablation

#pragma once

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include "checkpoint.hpp"
#include "config.hpp"
#include "data.hpp"
#include "gradcam.hpp"
#include "metrics.hpp"
#include "trainers.hpp"

namespace dpaat {

namespace fs = std::filesystem;

class PrerequisiteError : public Error {
public:
    using Error::Error;
};

inline constexpr std::array<const char*, 7> kCommands{"synth-data", "train", "attack", "eval",
                                                      "gradcam",    "report", "ablation"};

struct ArtifactPaths {
    fs::path out;

    fs::path data_dir(SplitTag t) const { return out / "data" / split_name(t); }
    fs::path checkpoint(const std::string& method) const { return out / "checkpoints" / (method + ".dpat"); }
    fs::path train_log(const std::string& method) const { return out / "logs" / ("train_" + method + ".csv"); }
    fs::path adversarial_dir(const std::string& method, const std::string& attack) const {
        return out / "adversarial" / method / attack;
    }
    fs::path norms_csv(const std::string& method, const std::string& attack) const {
        return out / "adversarial" / method / (attack + "_norms.csv");
    }
    fs::path eval_csv(const std::string& method) const { return out / "eval" / (method + ".csv"); }
    fs::path gradcam_dir(const std::string& method) const { return out / "gradcam" / method; }
    fs::path report_csv() const { return out / "report.csv"; }
    fs::path ablation_csv() const { return out / "ablation.csv"; }
    fs::path ablation_log(const std::string& method) const {
        return out / "ablation" / ("train_" + method + ".csv");
    }
};

inline void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("failed writing " + path.string());
}

inline std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingFileError("missing file: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// ---- data --------------------------------------------------------------------

// Rounds pixels to the 8-bit grid so in-memory and exported data agree.
inline void quantize(Dataset& d) {
    for (auto& v : d.images.data()) v = Real(to_byte(v)) / Real(255);
}

inline Dataset load_source(const DataConfig& cfg) {
    Dataset d;
    if (cfg.source == "synth") {
        d = synth(cfg.classes, cfg.per_class, cfg.size, cfg.seed, cfg.synth);
    } else {
        const fs::path index = cfg.index.is_absolute() || cfg.root.empty() ? cfg.index : cfg.root / cfg.index;
        d = load_folder(cfg.root, index);
    }
    quantize(d);
    return d;
}

inline Splits prepare_splits(const ExperimentConfig& cfg) {
    return split(load_source(cfg.data), cfg.data.fractions, cfg.data.seed);
}

inline Dataset load_split(const ArtifactPaths& paths, SplitTag tag) {
    const fs::path dir = paths.data_dir(tag);
    if (!fs::exists(dir / "index.csv"))
        throw PrerequisiteError("no " + std::string(split_name(tag)) + " split at " + dir.string() +
                                "; run `dpaat synth-data` first");
    Dataset d = load_folder(dir, dir / "index.csv");
    d.split = tag;
    return d;
}

inline Splits load_splits(const ArtifactPaths& paths) {
    return {load_split(paths, SplitTag::Train), load_split(paths, SplitTag::Val), load_split(paths, SplitTag::Test)};
}

inline ArchSpec make_arch(const ModelConfig& m, const Dataset& d) {
    const std::size_t c = d.images.dim(1), h = d.images.dim(2), w = d.images.dim(3);
    if (m.arch == "small_cnn") return small_cnn(c, h, w, d.classes());
    if (m.arch == "mlp") return mlp(c, h, w, m.hidden, d.classes());
    if (m.arch == "linear") return linear_classifier(c, h, w, d.classes());
    throw ConfigError("model.arch: unknown architecture '" + m.arch + "'");
}

// ---- training and evaluation -------------------------------------------------

struct TrainOutcome {
    ArchSpec arch;
    Trainer::Result result;
};

inline TrainOutcome train_method(const ExperimentConfig& cfg, const Splits& s, TrainMethod method,
                                 std::ostream* log = nullptr) {
    TrainConfig tc = cfg.train;
    tc.method = method;
    const ArchSpec arch = make_arch(cfg.model, s.train);
    Trainer trainer(arch, build_model(arch, cfg.model.seed), tc);
    auto on_epoch = [&](const EpochReport& r) {
        if (!log) return;
        char line[160];
        std::snprintf(line, sizeof line, "%s epoch %zu clean %.4f adv %.4f sync %.4f val_gacc %.4f (%.1fs)\n",
                      method_name(method), r.epoch, double(r.clean_loss), double(r.adv_loss), double(r.sync_loss),
                      double(r.val_gacc), r.seconds);
        *log << line << std::flush;
    };
    return {arch, trainer.fit(s.train, s.val, on_epoch)};
}

inline StreamKey eval_stream(const EvalConfig& cfg, std::size_t attack_index) {
    return StreamKey{cfg.seed, 0xEA1, attack_index, 0};
}

// Clean metrics plus one row per configured attack.
inline std::vector<EvalRow> evaluate(Classifier& model, const Dataset& test, const std::string& method,
                                     const EvalConfig& cfg) {
    const std::size_t c = model.arch().classes;
    const Tensor clean = model.predict_proba(test.images);
    const Real gacc = accuracy(confusion(test.labels, argmax_rows(clean), c));
    const Real map = mean_average_precision(clean, test.labels).mean;
    const auto specs = cfg.specs();
    std::vector<EvalRow> rows;
    for (std::size_t a = 0; a < specs.size(); ++a) {
        const AdvBatch adv = run_attack(model, test.images, test.labels, specs[a], eval_stream(cfg, a));
        const Tensor probs = model.predict_proba(adv.x_adv);
        const ConfusionMatrix cm = confusion(test.labels, argmax_rows(probs), c);
        const ClassScores sc = prf1(cm);
        rows.push_back({method, specs[a].name, gacc, accuracy(cm), map, mean_average_precision(probs, test.labels).mean,
                        sc.macro_precision, sc.macro_recall, sc.macro_f1});
    }
    return rows;
}

inline Classifier load_model(const ArtifactPaths& paths, const std::string& method) {
    const fs::path ckpt = paths.checkpoint(method);
    if (!fs::exists(ckpt))
        throw PrerequisiteError("no checkpoint for " + method + " at " + ckpt.string() +
                                "; run `dpaat train --set train.method=" + method + "` first");
    ModelParams p = load_checkpoint(ckpt);
    ArchSpec arch = arch_from_id(p.arch_id);
    return Classifier(std::move(arch), std::move(p));
}

// ---- commands ----------------------------------------------------------------

inline void cmd_synth_data(const ExperimentConfig& cfg, const ArtifactPaths& paths, std::ostream& log) {
    const Splits s = prepare_splits(cfg);
    for (const Dataset* d : {&s.train, &s.val, &s.test}) {
        const fs::path dir = paths.data_dir(d->split);
        if (fs::exists(dir)) fs::remove_all(dir);
        export_dataset(*d, dir, std::string(split_name(d->split)));
        log << "wrote " << d->size() << " images to " << dir.string() << "\n";
    }
}

inline TrainOutcome cmd_train(const ExperimentConfig& cfg, const ArtifactPaths& paths, std::ostream& log) {
    const Splits s = load_splits(paths);
    const std::string method = method_name(cfg.train.method);
    TrainOutcome t = train_method(cfg, s, cfg.train.method, &log);
    fs::create_directories(paths.checkpoint(method).parent_path());
    save_checkpoint(t.result.best_params, paths.checkpoint(method));
    write_text(paths.train_log(method), train_log_csv(t.result.history, cfg.record_time));
    log << method << ": best epoch " << t.result.best_epoch << ", checkpoint " << paths.checkpoint(method).string()
        << "\n";
    return t;
}

inline void cmd_attack(const ExperimentConfig& cfg, const ArtifactPaths& paths, std::ostream& log) {
    const std::string method = method_name(cfg.train.method);
    Classifier model = load_model(paths, method);
    const Dataset test = load_split(paths, SplitTag::Test);
    const auto specs = cfg.eval.specs();
    for (std::size_t a = 0; a < specs.size(); ++a) {
        const AdvBatch adv = run_attack(model, test.images, test.labels, specs[a], eval_stream(cfg.eval, a));
        Dataset d = test;
        d.images = adv.x_adv;
        const fs::path dir = paths.adversarial_dir(method, specs[a].name);
        if (fs::exists(dir)) fs::remove_all(dir);
        export_dataset(d, dir, "adv");
        std::string csv = "index,label,delta_norm,success\n";
        for (std::size_t i = 0; i < test.size(); ++i)
            csv += std::to_string(i) + "," + std::to_string(test.labels[i]) + "," + format_real(adv.delta_norms[i]) +
                   "," + (adv.success[i] ? "1" : "0") + "\n";
        write_text(paths.norms_csv(method, specs[a].name), csv);
        log << method << " " << specs[a].name << ": " << test.size() << " adversarial images in " << dir.string()
            << "\n";
    }
}

inline std::vector<EvalRow> cmd_eval(const ExperimentConfig& cfg, const ArtifactPaths& paths, std::ostream& log) {
    const std::string method = method_name(cfg.train.method);
    Classifier model = load_model(paths, method);
    const Dataset test = load_split(paths, SplitTag::Test);
    auto rows = evaluate(model, test, method, cfg.eval);
    write_text(paths.eval_csv(method), eval_csv(rows));
    for (const auto& r : rows)
        log << method << " " << r.attack << ": gacc " << format_real(r.gacc) << " racc " << format_real(r.racc)
            << "\n";
    return rows;
}

inline std::size_t cmd_gradcam(const ExperimentConfig& cfg, const ArtifactPaths& paths, std::ostream& log) {
    const std::string method = method_name(cfg.train.method);
    Classifier model = load_model(paths, method);
    const Dataset test = load_split(paths, SplitTag::Test);
    const Labels pred = argmax_rows(model.predict_proba(test.images));
    const fs::path dir = paths.gradcam_dir(method);
    fs::create_directories(dir);
    std::size_t written = 0;
    for (std::size_t i = 0; i < test.size() && written < cfg.gradcam_count; ++i) {
        if (pred[i] != test.labels[i]) continue;
        const Tensor image = test.images.rows(i, i + 1).reshaped(
            {test.images.dim(1), test.images.dim(2), test.images.dim(3)});
        const CamResult r = grad_cam(model.arch(), model.params(), image, pred[i]);
        char id[32];
        std::snprintf(id, sizeof id, "test%05zu", i);
        render_heatmap(r.upsampled, dir, heatmap_stem(id, method, pred[i]));
        ++written;
    }
    log << method << ": " << written << " heatmaps in " << dir.string() << "\n";
    return written;
}

inline constexpr std::array<TrainMethod, 7> kReportOrder{TrainMethod::STD,   TrainMethod::AT,
                                                         TrainMethod::SAT,   TrainMethod::AMAT,
                                                         TrainMethod::DPAAT, TrainMethod::DPAAT_A_only,
                                                         TrainMethod::DPAAT_B_only};

// Methods x attacks table of RAcc plus a GAcc column.
inline std::string cmd_report(const ExperimentConfig& cfg, const ArtifactPaths& paths, std::ostream& log) {
    std::string csv = "method";
    for (const auto& a : cfg.eval.attacks) csv += "," + a;
    csv += ",gacc\n";
    std::size_t found = 0;
    for (TrainMethod m : kReportOrder) {
        const fs::path p = paths.eval_csv(method_name(m));
        if (!fs::exists(p)) continue;
        const auto rows = parse_eval_csv(read_text(p), p.string());
        std::string line = method_name(m);
        Real gacc = 0;
        for (const auto& a : cfg.eval.attacks) {
            auto it = std::find_if(rows.begin(), rows.end(), [&](const EvalRow& r) { return r.attack == a; });
            if (it == rows.end())
                throw PrerequisiteError(p.string() + " has no row for attack '" + a + "'; rerun `dpaat eval`");
            line += "," + format_real(it->racc);
            gacc = it->gacc;
        }
        csv += line + "," + format_real(gacc) + "\n";
        ++found;
    }
    if (found == 0) throw PrerequisiteError("no evaluation reports under " + (paths.out / "eval").string() +
                                            "; run `dpaat eval` first");
    write_text(paths.report_csv(), csv);
    log << "report with " << found << " methods in " << paths.report_csv().string() << "\n";
    return csv;
}

struct AblationRow {
    std::string variant;
    TrainMethod method;
    std::vector<EvalRow> eval;
    std::uint64_t data_checksum = 0;
};

inline std::uint64_t splits_checksum(const Splits& s) {
    return splitmix64(splitmix64(s.train.checksum() ^ 1) ^ splitmix64(s.val.checksum() ^ 2) ^ s.test.checksum());
}

// D-A (adaptation only), D-B (sync loss only), D-(A+B) on shared splits.
inline std::vector<AblationRow> cmd_ablation(const ExperimentConfig& cfg, const ArtifactPaths& paths,
                                             std::ostream& log) {
    const Splits s = fs::exists(paths.data_dir(SplitTag::Train) / "index.csv") ? load_splits(paths)
                                                                              : prepare_splits(cfg);
    const std::pair<const char*, TrainMethod> variants[] = {{"D-A", TrainMethod::DPAAT_A_only},
                                                            {"D-B", TrainMethod::DPAAT_B_only},
                                                            {"D-(A+B)", TrainMethod::DPAAT}};
    std::vector<AblationRow> rows;
    std::string csv = "variant,method,gacc,map";
    for (const auto& a : cfg.eval.attacks) csv += "," + a;
    csv += ",data_checksum\n";
    for (const auto& [variant, method] : variants) {
        ExperimentConfig c = cfg;
        if (method == TrainMethod::DPAAT_A_only) c.train.beta = 0;
        TrainOutcome t = train_method(c, s, method, &log);
        write_text(paths.ablation_log(method_name(method)), train_log_csv(t.result.history, cfg.record_time));
        Classifier model(t.arch, t.result.best_params);
        AblationRow row{variant, method, evaluate(model, s.test, variant, cfg.eval), splits_checksum(s)};
        char hex[20];
        std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(row.data_checksum));
        csv += std::string(variant) + "," + method_name(method) + "," + format_real(row.eval.front().gacc) + "," +
               format_real(row.eval.front().map);
        for (const auto& r : row.eval) csv += "," + format_real(r.racc);
        csv += std::string(",") + hex + "\n";
        rows.push_back(std::move(row));
    }
    write_text(paths.ablation_csv(), csv);
    log << "ablation table in " << paths.ablation_csv().string() << "\n";
    return rows;
}

inline void run_command(const std::string& command, const ExperimentConfig& cfg, const fs::path& out,
                        std::ostream& log) {
    const ArtifactPaths paths{out};
    fs::create_directories(out);
    if (command == "synth-data")
        cmd_synth_data(cfg, paths, log);
    else if (command == "train")
        cmd_train(cfg, paths, log);
    else if (command == "attack")
        cmd_attack(cfg, paths, log);
    else if (command == "eval")
        cmd_eval(cfg, paths, log);
    else if (command == "gradcam")
        cmd_gradcam(cfg, paths, log);
    else if (command == "report")
        cmd_report(cfg, paths, log);
    else if (command == "ablation")
        cmd_ablation(cfg, paths, log);
    else
        throw ContractError("unknown command '" + command + "'");
}

} // namespace dpaat
