#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "rdcfa/error.hpp"

namespace rdcfa {

/// Area under the ROC curve via the rank statistic: the probability that a
/// random positive outranks a random negative, ties counting one half.
template <class Score, class Label>
double auroc(std::span<const Score> scores, std::span<const Label> labels) {
    if (scores.size() != labels.size()) throw ShapeError("auroc: scores and labels differ in length");
    std::size_t positives = 0;
    for (const auto& l : labels) positives += l ? 1 : 0;
    const std::size_t negatives = labels.size() - positives;
    if (positives == 0 || negatives == 0) throw DataError("auroc: both positive and negative labels are required");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (const auto& s : scores)
        if (std::isnan(static_cast<double>(s))) throw NumericError("auroc: NaN score");
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Sum of (1-based, tie-averaged) ranks of the positives.
    double rank_sum = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        std::size_t pos_in_group = 0;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            pos_in_group += labels[order[j]] ? 1 : 0;
            ++j;
        }
        const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        rank_sum += avg_rank * static_cast<double>(pos_in_group);
        i = j;
    }
    const double p = static_cast<double>(positives);
    const double u = rank_sum - p * (p + 1.0) / 2.0;
    return u / (p * static_cast<double>(negatives));
}

inline double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
    return auroc(std::span<const double>(scores), std::span<const int>(labels));
}

/// Results of one class, one entry per run.
struct ClassReport {
    std::string name;
    std::string group;  // "object" or "texture"
    std::vector<double> detection_runs;
    std::vector<std::optional<double>> localization_runs;

    double detection() const {
        return std::accumulate(detection_runs.begin(), detection_runs.end(), 0.0) /
               static_cast<double>(detection_runs.size());
    }
    /// Mean over runs; absent if any run lacked masks.
    std::optional<double> localization() const {
        if (localization_runs.empty()) return std::nullopt;
        double sum = 0.0;
        for (const auto& v : localization_runs) {
            if (!v) return std::nullopt;
            sum += *v;
        }
        return sum / static_cast<double>(localization_runs.size());
    }
};

struct AverageRow {
    std::string name;
    double detection = 0.0;
    std::optional<double> localization;
};

struct ReportTable {
    std::vector<ClassReport> classes;
    std::vector<AverageRow> averages;
    std::size_t runs = 0;

    const AverageRow& total() const { return averages.back(); }
};

namespace detail {
inline AverageRow average_of(const std::string& name, const std::vector<const ClassReport*>& members) {
    AverageRow row{name, 0.0, std::nullopt};
    double loc = 0.0;
    std::size_t loc_n = 0;
    for (const auto* c : members) {
        row.detection += c->detection();
        if (auto l = c->localization()) {
            loc += *l;
            ++loc_n;
        }
    }
    row.detection /= static_cast<double>(members.size());
    if (loc_n > 0) row.localization = loc / static_cast<double>(loc_n);
    return row;
}
}  // namespace detail

/// Appends group averages ("avg. obj.", "avg. tex.") when both groups are
/// populated, then "avg. total".
inline ReportTable assemble_report(std::vector<ClassReport> classes) {
    if (classes.empty()) throw DataError("report: no classes evaluated");
    ReportTable t;
    t.runs = classes.front().detection_runs.size();
    for (const auto& c : classes)
        if (c.detection_runs.size() != t.runs || c.localization_runs.size() != t.runs)
            throw ShapeError("report: classes disagree on run count");
    t.classes = std::move(classes);
    std::vector<const ClassReport*> obj, tex, all;
    for (const auto& c : t.classes) {
        (c.group == "texture" ? tex : obj).push_back(&c);
        all.push_back(&c);
    }
    if (!obj.empty() && !tex.empty()) {
        t.averages.push_back(detail::average_of("avg. obj.", obj));
        t.averages.push_back(detail::average_of("avg. tex.", tex));
    }
    t.averages.push_back(detail::average_of("avg. total", all));
    return t;
}

/// Combines single-run tables of the same classes into one multi-run table.
inline ReportTable merge_runs(const std::vector<ReportTable>& runs) {
    if (runs.empty()) throw DataError("merge_runs: no runs");
    std::vector<ClassReport> classes = runs.front().classes;
    for (std::size_t r = 1; r < runs.size(); ++r) {
        if (runs[r].classes.size() != classes.size()) throw ShapeError("merge_runs: runs cover different classes");
        for (std::size_t c = 0; c < classes.size(); ++c) {
            if (runs[r].classes[c].name != classes[c].name) throw ShapeError("merge_runs: class order differs");
            const auto& src = runs[r].classes[c];
            classes[c].detection_runs.insert(classes[c].detection_runs.end(), src.detection_runs.begin(),
                                             src.detection_runs.end());
            classes[c].localization_runs.insert(classes[c].localization_runs.end(), src.localization_runs.begin(),
                                                src.localization_runs.end());
        }
    }
    return assemble_report(std::move(classes));
}

namespace detail {
inline std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(10) << v;
    return os.str();
}
inline std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }
template <class T>
std::string join(const std::vector<T>& values) {
    std::string s;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) s += ';';
        s += fmt(values[i]);
    }
    return s;
}
}  // namespace detail

/// One row per class then one per average; per-run values are kept in the
/// *_runs columns.
inline void write_report_csv(std::ostream& os, const ReportTable& t) {
    os << "row,name,group,detection_auroc,localization_auroc,runs,detection_runs,localization_runs\n";
    for (const auto& c : t.classes)
        os << "class," << c.name << ',' << c.group << ',' << detail::fmt(c.detection()) << ','
           << detail::fmt(c.localization()) << ',' << t.runs << ',' << detail::join(c.detection_runs) << ','
           << detail::join(c.localization_runs) << '\n';
    for (const auto& a : t.averages)
        os << "average," << a.name << ",," << detail::fmt(a.detection) << ',' << detail::fmt(a.localization) << ','
           << t.runs << ",,\n";
}

/// Aligned text table with AUROC in percent.
inline void write_report_text(std::ostream& os, const ReportTable& t) {
    std::size_t w = 12;
    for (const auto& c : t.classes) w = std::max(w, c.name.size() + 2);
    auto pct = [](const std::optional<double>& v) {
        if (!v) return std::string("-");
        std::ostringstream s;
        s << std::fixed << std::setprecision(1) << *v * 100.0;
        return s.str();
    };
    os << std::left << std::setw(static_cast<int>(w)) << "Category" << std::right << std::setw(11) << "Detection"
       << std::setw(14) << "Localization" << '\n';
    for (const auto& c : t.classes)
        os << std::left << std::setw(static_cast<int>(w)) << c.name << std::right << std::setw(11)
           << pct(c.detection()) << std::setw(14) << pct(c.localization()) << '\n';
    for (const auto& a : t.averages)
        os << std::left << std::setw(static_cast<int>(w)) << a.name << std::right << std::setw(11) << pct(a.detection)
           << std::setw(14) << pct(a.localization) << '\n';
    os << "(mean over " << t.runs << " run" << (t.runs == 1 ? "" : "s") << ")\n";
}

}  // namespace rdcfa
