// metrics.hpp - confusion matrix, accuracy, precision/recall/F1, AP and mAP.
//
// Accuracy on clean test data is reported as GAcc and on an adversarially
// perturbed copy as RAcc; mAP over clean probabilities and mARP over
// adversarial ones. All metrics lie in [0, 1]; 0/0 cells evaluate to 0.

#pragma once

#include <algorithm>
#include <fstream>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "model.hpp"

namespace dpaat {

// Rows are true classes, columns predicted classes.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(std::size_t classes) : classes_(classes), counts_(classes * classes, 0) {}

    std::size_t classes() const { return classes_; }
    std::size_t& at(std::size_t truth, std::size_t pred) { return counts_[truth * classes_ + pred]; }
    std::size_t at(std::size_t truth, std::size_t pred) const { return counts_[truth * classes_ + pred]; }
    std::size_t total() const { return std::accumulate(counts_.begin(), counts_.end(), std::size_t{0}); }

    std::size_t trace() const {
        std::size_t t = 0;
        for (std::size_t c = 0; c < classes_; ++c) t += at(c, c);
        return t;
    }

    friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

private:
    std::size_t classes_;
    std::vector<std::size_t> counts_;
};

inline ConfusionMatrix confusion(std::span<const std::size_t> y_true, std::span<const std::size_t> y_pred,
                                 std::size_t classes) {
    if (y_true.size() != y_pred.size())
        throw ShapeError("confusion: " + std::to_string(y_true.size()) + " labels vs " +
                         std::to_string(y_pred.size()) + " predictions");
    ConfusionMatrix cm(classes);
    for (std::size_t i = 0; i < y_true.size(); ++i) {
        if (y_true[i] >= classes || y_pred[i] >= classes)
            throw ContractError("confusion: label out of range at example " + std::to_string(i));
        ++cm.at(y_true[i], y_pred[i]);
    }
    return cm;
}

inline Real accuracy(const ConfusionMatrix& cm) {
    const std::size_t total = cm.total();
    if (total == 0) throw ContractError("accuracy of an empty confusion matrix");
    return Real(cm.trace()) / Real(total);
}

inline Real safe_ratio(Real num, Real den) { return den == 0 ? Real(0) : num / den; }

struct ClassScores {
    std::vector<Real> precision;
    std::vector<Real> recall;
    std::vector<Real> f1;
    Real macro_precision = 0;
    Real macro_recall = 0;
    Real macro_f1 = 0;
};

// One-vs-rest per class, macro = unweighted mean over classes.
inline ClassScores prf1(const ConfusionMatrix& cm) {
    const std::size_t c = cm.classes();
    ClassScores s;
    for (std::size_t k = 0; k < c; ++k) {
        std::size_t predicted = 0, actual = 0;
        for (std::size_t j = 0; j < c; ++j) {
            predicted += cm.at(j, k);
            actual += cm.at(k, j);
        }
        const Real tp = Real(cm.at(k, k));
        const Real p = safe_ratio(tp, Real(predicted));
        const Real r = safe_ratio(tp, Real(actual));
        s.precision.push_back(p);
        s.recall.push_back(r);
        s.f1.push_back(safe_ratio(2 * p * r, p + r));
    }
    auto mean = [&](const std::vector<Real>& v) { return std::accumulate(v.begin(), v.end(), Real(0)) / Real(c); };
    s.macro_precision = mean(s.precision);
    s.macro_recall = mean(s.recall);
    s.macro_f1 = mean(s.f1);
    return s;
}

// Non-interpolated AP: rank by score descending (ties keep index order) and
// sum precision-at-hit times the recall increment 1/positives.
inline Real average_precision(std::span<const Real> scores, const std::vector<bool>& positives) {
    if (scores.size() != positives.size())
        throw ShapeError("average_precision: " + std::to_string(scores.size()) + " scores vs " +
                         std::to_string(positives.size()) + " labels");
    const auto total_pos = static_cast<std::size_t>(std::count(positives.begin(), positives.end(), true));
    if (total_pos == 0) throw ContractError("average_precision: no positive examples");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    Real ap = 0;
    std::size_t hits = 0;
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
        if (!positives[order[rank]]) continue;
        ++hits;
        ap += Real(hits) / Real(rank + 1);
    }
    return ap / Real(total_pos);
}

struct MapResult {
    std::vector<Real> per_class;
    Real mean = 0;
};

// Mean over classes of AP with column c of probs as the score for class c.
inline MapResult mean_average_precision(const Tensor& probs, std::span<const std::size_t> y_true) {
    if (probs.rank() != 2 || probs.dim(0) != y_true.size())
        throw ShapeError("mean_average_precision: probs " + shape_str(probs.shape()) + " vs " +
                         std::to_string(y_true.size()) + " labels");
    const std::size_t n = probs.dim(0), c = probs.dim(1);
    MapResult r;
    std::vector<Real> col(n);
    std::vector<bool> pos(n);
    for (std::size_t k = 0; k < c; ++k) {
        bool any = false;
        for (std::size_t i = 0; i < n; ++i) {
            if (y_true[i] >= c) throw ContractError("mean_average_precision: label out of range");
            col[i] = probs.at(i, k);
            pos[i] = y_true[i] == k;
            any = any || pos[i];
        }
        if (!any) throw ContractError("mean_average_precision: class " + std::to_string(k) + " has no true examples");
        r.per_class.push_back(average_precision(col, pos));
    }
    r.mean = std::accumulate(r.per_class.begin(), r.per_class.end(), Real(0)) / Real(c);
    return r;
}

// One row of an evaluation report: a trained model under one attack.
struct EvalRow {
    std::string method;
    std::string attack;
    Real gacc = 0;
    Real racc = 0;
    Real map = 0;
    Real marp = 0;
    Real precision = 0; // macro, on adversarial predictions
    Real recall = 0;
    Real f1 = 0;
};

inline constexpr const char* kEvalCsvHeader = "method,attack,gacc,racc,map,marp,precision,recall,f1";

inline std::string format_real(Real v) {
    std::ostringstream os;
    os.precision(10);
    os << v;
    return os.str();
}

inline std::string eval_csv(const std::vector<EvalRow>& rows) {
    std::string out = std::string(kEvalCsvHeader) + "\n";
    for (const auto& r : rows) {
        out += r.method + "," + r.attack;
        for (Real v : {r.gacc, r.racc, r.map, r.marp, r.precision, r.recall, r.f1}) out += "," + format_real(v);
        out += "\n";
    }
    return out;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream is(line);
    while (std::getline(is, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline std::vector<EvalRow> parse_eval_csv(const std::string& text, const std::string& origin = "<memory>") {
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line) || line != kEvalCsvHeader)
        throw Error("eval report '" + origin + "' does not start with header '" + kEvalCsvHeader + "'");
    std::vector<EvalRow> rows;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != 9)
            throw Error("eval report '" + origin + "' line " + std::to_string(lineno) + ": expected 9 fields");
        EvalRow r;
        r.method = cells[0];
        r.attack = cells[1];
        Real* dst[] = {&r.gacc, &r.racc, &r.map, &r.marp, &r.precision, &r.recall, &r.f1};
        for (std::size_t k = 0; k < 7; ++k) {
            try {
                *dst[k] = static_cast<Real>(std::stod(cells[k + 2]));
            } catch (const std::exception&) {
                throw Error("eval report '" + origin + "' line " + std::to_string(lineno) + ": bad number '" +
                            cells[k + 2] + "'");
            }
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

} // namespace dpaat
