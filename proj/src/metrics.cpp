#include "dmad/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "dmad/error.hpp"

namespace dmad {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_both_labels(std::span<const ScoreRecord> records) {
    bool has_morph = false, has_bona = false;
    for (const ScoreRecord& r : records) {
        if (!std::isfinite(r.score) || r.score < 0.0 || r.score > 1.0)
            throw DataError("score for sample '" + r.sample_id + "' outside [0, 1]");
        (r.is_morph ? has_morph : has_bona) = true;
    }
    if (!has_morph || !has_bona)
        throw DataError("metrics require at least one record of each label");
}

std::pair<double, double> rates_at(std::span<const ScoreRecord> records, double threshold) {
    std::size_t morphs = 0, bona = 0, missed = 0, false_alarm = 0;
    for (const ScoreRecord& r : records) {
        if (r.is_morph) {
            ++morphs;
            if (r.score < threshold) ++missed;
        } else {
            ++bona;
            if (r.score >= threshold) ++false_alarm;
        }
    }
    return {static_cast<double>(missed) / static_cast<double>(morphs),
            static_cast<double>(false_alarm) / static_cast<double>(bona)};
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

} // namespace

std::pair<double, double> error_rates_at(std::span<const ScoreRecord> records, double threshold) {
    require_both_labels(records);
    return rates_at(records, threshold);
}

std::vector<DetPoint> det_curve(std::span<const ScoreRecord> records) {
    require_both_labels(records);
    std::vector<double> thresholds;
    thresholds.reserve(records.size() + 2);
    for (const ScoreRecord& r : records) thresholds.push_back(r.score);
    std::sort(thresholds.begin(), thresholds.end());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
    thresholds.insert(thresholds.begin(), -kInf);
    thresholds.push_back(kInf);
    std::vector<DetPoint> out;
    out.reserve(thresholds.size());
    for (double t : thresholds) {
        const auto [macer, bpcer] = rates_at(records, t);
        out.push_back({t, macer, bpcer});
    }
    return out;
}

EerResult d_eer(std::span<const ScoreRecord> records) {
    const std::vector<DetPoint> curve = det_curve(records);
    for (const DetPoint& p : curve)
        if (p.macer == p.bpcer) return {p.macer, p.threshold};
    for (std::size_t i = 0; i + 1 < curve.size(); ++i) {
        const DetPoint& lo = curve[i];
        const DetPoint& hi = curve[i + 1];
        const double d0 = lo.macer - lo.bpcer;
        const double d1 = hi.macer - hi.bpcer;
        if (d0 < 0.0 && d1 > 0.0) {
            // Linear in threshold across the bracket; the crossing fraction
            // depends only on the rates, so the rate value is transform-safe.
            const double s = (lo.bpcer - lo.macer) / ((hi.macer - lo.macer) - (hi.bpcer - lo.bpcer));
            const double eer = lo.macer + (hi.macer - lo.macer) * s;
            // Sentinel brackets get a unit pseudo-gap for the reported threshold.
            const double t0 = std::isinf(lo.threshold) ? hi.threshold - 1.0 : lo.threshold;
            const double t1 = std::isinf(hi.threshold) ? t0 + 1.0 : hi.threshold;
            return {eer, t0 + s * (t1 - t0)};
        }
    }
    // Unreachable: the sweep spans diff -1 at -inf to +1 at +inf.
    throw EvalError("d_eer: no crossing found");
}

double bpcer_at_macer(std::span<const ScoreRecord> records, double target) {
    if (!(target > 0.0 && target < 1.0))
        throw ConfigError("bpcer_at_macer target must lie in (0, 1)");
    const std::vector<DetPoint> curve = det_curve(records);
    double best = 1.0; // the -inf sentinel always qualifies with bpcer 1
    for (const DetPoint& p : curve)
        if (p.macer <= target) best = std::min(best, p.bpcer);
    return best;
}

std::vector<TechniqueRow> per_technique_report(std::span<const ScoreRecord> records) {
    require_both_labels(records);
    std::map<std::string, std::size_t> morph_counts;
    for (const ScoreRecord& r : records)
        if (!r.technique.empty()) morph_counts[r.technique] += r.is_morph ? 1 : 0;
    std::vector<TechniqueRow> rows;
    for (const auto& [tech, count] : morph_counts) {
        TechniqueRow row;
        row.technique = tech;
        if (count == 0) {
            row.omitted = true;
            rows.push_back(row);
            continue;
        }
        std::vector<ScoreRecord> subset;
        for (const ScoreRecord& r : records)
            if (!r.is_morph || r.technique == tech) subset.push_back(r);
        row.eer = d_eer(subset).eer;
        row.bpcer_at_5 = bpcer_at_macer(subset, 0.05);
        row.bpcer_at_10 = bpcer_at_macer(subset, 0.10);
        rows.push_back(row);
    }
    return rows;
}

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc())
        throw EvalError("cannot format double");
    return std::string(buf, ptr);
}

double parse_double(const std::string& s, const std::string& context) {
    double v = 0.0;
    const char* begin = s.data();
    const char* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc() || ptr != end)
        throw ParseError("bad number '" + s + "' in " + context);
    return v;
}

void write_scores_csv(const std::string& path, std::span<const ScoreRecord> records) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "sample_id,label,score,technique\n";
    for (const ScoreRecord& r : records)
        out << r.sample_id << ',' << (r.is_morph ? "morph" : "bonafide") << ','
            << format_double(r.score) << ',' << r.technique << '\n';
    if (!out) throw IoError("short write to " + path);
}

std::vector<ScoreRecord> read_scores_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || split_csv_line(line) !=
        std::vector<std::string>{"sample_id", "label", "score", "technique"})
        throw ParseError("score csv " + path + ": bad header");
    std::vector<ScoreRecord> out;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != 4)
            throw ParseError("score csv " + path + ": line " + std::to_string(lineno) +
                             " has " + std::to_string(f.size()) + " fields");
        ScoreRecord r;
        r.sample_id = f[0];
        if (f[1] == "morph")
            r.is_morph = true;
        else if (f[1] == "bonafide")
            r.is_morph = false;
        else
            throw ParseError("score csv " + path + ": bad label '" + f[1] + "' on line " +
                             std::to_string(lineno));
        r.score = parse_double(f[2], path + " line " + std::to_string(lineno));
        if (!std::isfinite(r.score) || r.score < 0.0 || r.score > 1.0)
            throw DataError("score csv " + path + ": score outside [0, 1] on line " +
                            std::to_string(lineno));
        r.technique = f[3];
        out.push_back(std::move(r));
    }
    return out;
}

void write_det_csv(const std::string& path, std::span<const DetPoint> points) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "threshold,macer,bpcer\n";
    for (const DetPoint& p : points)
        out << format_double(p.threshold) << ',' << format_double(p.macer) << ','
            << format_double(p.bpcer) << '\n';
    if (!out) throw IoError("short write to " + path);
}

std::vector<DetPoint> read_det_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line) ||
        split_csv_line(line) != std::vector<std::string>{"threshold", "macer", "bpcer"})
        throw ParseError("det csv " + path + ": bad header");
    std::vector<DetPoint> out;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != 3)
            throw ParseError("det csv " + path + ": bad line " + std::to_string(lineno));
        const std::string ctx = path + " line " + std::to_string(lineno);
        out.push_back({parse_double(f[0], ctx), parse_double(f[1], ctx), parse_double(f[2], ctx)});
    }
    return out;
}

} // namespace dmad
