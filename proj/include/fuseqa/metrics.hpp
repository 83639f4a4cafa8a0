#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "fuseqa/taxonomy.hpp"

namespace fuseqa {

// Per-class confusion counts over a prediction/ground-truth pair of lists.
struct ClassCounts {
    std::vector<long long> tp, fp, fn, tn;
    std::size_t samples = 0;

    std::size_t num_classes() const { return tp.size(); }
    long long occurrences(std::size_t j) const { return tp[j] + fn[j]; }
};

inline ClassCounts count_stats(std::span<const LabelSet> preds, std::span<const LabelSet> gts) {
    if (preds.size() != gts.size() || preds.empty())
        throw std::invalid_argument("count_stats: prediction/ground-truth lists must be aligned and non-empty");
    const std::size_t n = gts.front().size();
    ClassCounts c;
    c.tp.assign(n, 0);
    c.fp.assign(n, 0);
    c.fn.assign(n, 0);
    c.tn.assign(n, 0);
    c.samples = preds.size();
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i].size() != n || gts[i].size() != n)
            throw std::invalid_argument("count_stats: inconsistent label lengths");
        for (std::size_t j = 0; j < n; ++j) {
            const bool p = preds[i].test(j), g = gts[i].test(j);
            if (p && g) ++c.tp[j];
            else if (p && !g) ++c.fp[j];
            else if (!p && g) ++c.fn[j];
            else ++c.tn[j];
        }
    }
    return c;
}

// 0/0 -> 0 convention throughout: a class with no positives and no positive
// predictions scores zero rather than NaN.
inline double precision(const ClassCounts& c, std::size_t j) {
    const long long d = c.tp[j] + c.fp[j];
    return d == 0 ? 0.0 : static_cast<double>(c.tp[j]) / static_cast<double>(d);
}

inline double recall(const ClassCounts& c, std::size_t j) {
    const long long d = c.tp[j] + c.fn[j];
    return d == 0 ? 0.0 : static_cast<double>(c.tp[j]) / static_cast<double>(d);
}

inline double f_beta(double p, double r, double beta) {
    if (beta <= 0.0) throw std::invalid_argument("f_beta: beta must be positive");
    const double denom = beta * beta * p + r;
    if (denom == 0.0) return 0.0;
    return (1.0 + beta * beta) * p * r / denom;
}

enum class Aggregate { Macro, Weighted, Micro };

// Macro averages per-class scores with uniform weights; Weighted uses the
// per-class occurrence counts, normalized so the result stays in [0,1];
// Micro ignores per-class scores and recomputes F_beta from globally pooled
// TP/FP/FN.
inline double aggregate(std::span<const double> per_class, const ClassCounts& counts, Aggregate mode,
                        double beta = 1.0) {
    const std::size_t n = counts.num_classes();
    if (n == 0) throw std::invalid_argument("aggregate: no classes");
    switch (mode) {
        case Aggregate::Macro: {
            if (per_class.size() != n) throw std::invalid_argument("aggregate: score/count size mismatch");
            double s = 0.0;
            for (double v : per_class) s += v;
            return s / static_cast<double>(n);
        }
        case Aggregate::Weighted: {
            if (per_class.size() != n) throw std::invalid_argument("aggregate: score/count size mismatch");
            double num = 0.0, den = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                num += per_class[j] * static_cast<double>(counts.occurrences(j));
                den += static_cast<double>(counts.occurrences(j));
            }
            if (den == 0.0) throw std::invalid_argument("aggregate: weighted mean undefined, no occurrences");
            return num / den;
        }
        case Aggregate::Micro: {
            long long tp = 0, fp = 0, fn = 0;
            for (std::size_t j = 0; j < n; ++j) {
                tp += counts.tp[j];
                fp += counts.fp[j];
                fn += counts.fn[j];
            }
            const double p = (tp + fp) == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
            const double r = (tp + fn) == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
            return f_beta(p, r, beta);
        }
    }
    throw std::logic_error("aggregate: unreachable");
}

// Fraction of samples whose predicted vector equals the ground truth exactly.
inline double match_ratio(std::span<const LabelSet> preds, std::span<const LabelSet> gts) {
    if (preds.size() != gts.size() || preds.empty())
        throw std::invalid_argument("match_ratio: lists must be aligned and non-empty");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < preds.size(); ++i)
        if (preds[i] == gts[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(preds.size());
}

// Mean per-sample count of classes whose predicted bit differs from the
// ground truth. Lower is better; range [0, N].
inline double hamming_distance(std::span<const LabelSet> preds, std::span<const LabelSet> gts) {
    if (preds.size() != gts.size() || preds.empty())
        throw std::invalid_argument("hamming_distance: lists must be aligned and non-empty");
    const std::size_t n = gts.front().size();
    long long mismatches = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i].size() != n || gts[i].size() != n)
            throw std::invalid_argument("hamming_distance: inconsistent label lengths");
        for (std::size_t j = 0; j < n; ++j)
            if (preds[i].test(j) != gts[i].test(j)) ++mismatches;
    }
    return static_cast<double>(mismatches) / static_cast<double>(preds.size());
}

enum class QuestionType { YesNo, LandCover };

inline std::string_view to_string(QuestionType t) {
    return t == QuestionType::YesNo ? "yes_no" : "land_cover";
}

inline QuestionType question_type_from_string(std::string_view s) {
    if (s == "yes_no") return QuestionType::YesNo;
    if (s == "land_cover") return QuestionType::LandCover;
    throw std::invalid_argument("unknown question type: " + std::string(s));
}

// Accuracy of exact answer matches, globally and per question type. A type
// with no questions in the data reports no value.
struct VqaAccuracy {
    double global = 0.0;
    std::optional<double> yes_no;
    std::optional<double> land_cover;
    std::size_t total = 0;
};

inline VqaAccuracy vqa_accuracy(std::span<const std::string> pred_answers,
                                std::span<const std::string> gt_answers,
                                std::span<const QuestionType> qtypes) {
    if (pred_answers.size() != gt_answers.size() || pred_answers.size() != qtypes.size() || pred_answers.empty())
        throw std::invalid_argument("vqa_accuracy: inputs must be aligned and non-empty");
    std::size_t correct = 0, yn_total = 0, yn_correct = 0, lc_total = 0, lc_correct = 0;
    for (std::size_t i = 0; i < pred_answers.size(); ++i) {
        const bool hit = pred_answers[i] == gt_answers[i];
        correct += hit;
        if (qtypes[i] == QuestionType::YesNo) {
            ++yn_total;
            yn_correct += hit;
        } else {
            ++lc_total;
            lc_correct += hit;
        }
    }
    VqaAccuracy acc;
    acc.total = pred_answers.size();
    acc.global = static_cast<double>(correct) / static_cast<double>(acc.total);
    if (yn_total > 0) acc.yes_no = static_cast<double>(yn_correct) / static_cast<double>(yn_total);
    if (lc_total > 0) acc.land_cover = static_cast<double>(lc_correct) / static_cast<double>(lc_total);
    return acc;
}

// Full per-class and aggregate report for one prediction/ground-truth pair.
struct MetricReport {
    double beta = 1.0;
    std::vector<std::string> class_names;
    std::vector<double> precision_per_class;
    std::vector<double> recall_per_class;
    std::vector<double> f_per_class;
    double macro = 0.0;
    double micro = 0.0;
    double weighted = 0.0;
    double mr = 0.0;
    double hd = 0.0;
    std::size_t samples = 0;
};

inline MetricReport compute_report(std::span<const LabelSet> preds, std::span<const LabelSet> gts,
                                   double beta, const Nomenclature& nom) {
    const ClassCounts counts = count_stats(preds, gts);
    if (counts.num_classes() != nom.size())
        throw std::invalid_argument("compute_report: labels do not match the nomenclature");
    MetricReport rep;
    rep.beta = beta;
    rep.samples = counts.samples;
    const std::size_t n = counts.num_classes();
    for (std::size_t j = 0; j < n; ++j) {
        rep.class_names.push_back(nom.name_of(j));
        rep.precision_per_class.push_back(precision(counts, j));
        rep.recall_per_class.push_back(recall(counts, j));
        rep.f_per_class.push_back(f_beta(rep.precision_per_class[j], rep.recall_per_class[j], beta));
    }
    rep.macro = aggregate(rep.f_per_class, counts, Aggregate::Macro, beta);
    rep.micro = aggregate(rep.f_per_class, counts, Aggregate::Micro, beta);
    bool any_occurrence = false;
    for (std::size_t j = 0; j < n; ++j) any_occurrence |= counts.occurrences(j) > 0;
    rep.weighted = any_occurrence ? aggregate(rep.f_per_class, counts, Aggregate::Weighted, beta) : 0.0;
    rep.mr = match_ratio(preds, gts);
    rep.hd = hamming_distance(preds, gts);
    return rep;
}

inline nlohmann::json to_json(const MetricReport& r) {
    nlohmann::json per_class = nlohmann::json::array();
    for (std::size_t j = 0; j < r.class_names.size(); ++j) {
        per_class.push_back({{"class", r.class_names[j]},
                             {"precision", r.precision_per_class[j]},
                             {"recall", r.recall_per_class[j]},
                             {"f", r.f_per_class[j]}});
    }
    return {{"beta", r.beta},
            {"per_class", per_class},
            {"macro", r.macro},
            {"micro", r.micro},
            {"weighted", r.weighted},
            {"match_ratio", r.mr},
            {"hamming_distance", r.hd},
            {"samples", r.samples}};
}

// One row per class plus aggregate rows; plot-ready.
inline std::string to_csv(const MetricReport& r) {
    std::ostringstream out;
    out << "row,precision,recall,f\n";
    for (std::size_t j = 0; j < r.class_names.size(); ++j) {
        out << '"' << r.class_names[j] << '"' << ',' << r.precision_per_class[j] << ','
            << r.recall_per_class[j] << ',' << r.f_per_class[j] << '\n';
    }
    out << "macro,,," << r.macro << '\n';
    out << "micro,,," << r.micro << '\n';
    out << "weighted,,," << r.weighted << '\n';
    out << "match_ratio,,," << r.mr << '\n';
    out << "hamming_distance,,," << r.hd << '\n';
    return out.str();
}

}  // namespace fuseqa
