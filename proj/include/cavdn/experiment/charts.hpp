#pragma once

// Static SVG reward charts rendered from an aggregate CSV: shaded training-reward bands,
// solid greedy-evaluation lines, and vertical markers for malfunction onset and detections.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cavdn/errors.hpp"
#include "cavdn/experiment/metrics.hpp"

namespace cavdn::experiment {

enum class BandKind { ConfidenceInterval, MinMax };

struct ChartOptions {
    BandKind band = BandKind::ConfidenceInterval;
    int width = 960;
    int height = 480;
    // Training rows are averaged into bins of this many episodes; 0 picks the eval spacing.
    int bin_episodes = 0;
};

inline std::string agent_color(int agent) {
    static const char *palette[] = {"#1f5fbf", "#d62728", "#ff8c00", "#2ca02c",
                                    "#9467bd", "#8c564b", "#e377c2", "#17becf"};
    return palette[agent % 8];
}

inline std::string agent_label(int agent) {
    static const char *names[] = {"blue", "red", "orange", "green"};
    return "agent " + std::to_string(agent) + (agent < 4 ? std::string(" (") + names[agent] + ")" : "");
}

namespace detail {

inline std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

struct Series {
    std::vector<double> x, lo, hi; // binned training band
    std::vector<double> ex, ey;    // evaluation line
};

struct ChartData {
    std::map<int, Series> agents;
    std::vector<long> onsets;
    std::vector<std::pair<long, int>> detections;
    double x_max = 0.0;
};

inline ChartData collect(const std::vector<AggregateRow> &rows, const ChartOptions &opt) {
    ChartData d;
    std::vector<long> eval_eps;
    for (const auto &r : rows)
        if (r.series == "eval" && r.agent == 0) eval_eps.push_back(r.episode);
    int bin = opt.bin_episodes;
    if (bin <= 0) bin = eval_eps.size() >= 2 ? static_cast<int>(eval_eps[1] - eval_eps[0]) : 50;
    bin = std::max(bin, 1);

    struct Acc { double lo = 0, hi = 0; int n = 0; };
    std::map<int, std::map<long, Acc>> bins;
    for (const auto &r : rows) {
        d.x_max = std::max(d.x_max, static_cast<double>(r.episode));
        if (r.series == "onset") {
            d.onsets.push_back(r.episode);
        } else if (r.series == "detection") {
            d.detections.emplace_back(r.episode, r.stats.count);
        } else if (r.agent >= 0 && r.series == "train") {
            auto &a = bins[r.agent][r.episode / bin];
            const bool ci = opt.band == BandKind::ConfidenceInterval;
            a.lo += ci ? r.stats.mean - r.stats.ci95 : r.stats.min;
            a.hi += ci ? r.stats.mean + r.stats.ci95 : r.stats.max;
            ++a.n;
        } else if (r.agent >= 0 && r.series == "eval") {
            d.agents[r.agent].ex.push_back(static_cast<double>(r.episode));
            d.agents[r.agent].ey.push_back(r.stats.mean);
        }
    }
    for (auto &[agent, by_bin] : bins) {
        auto &s = d.agents[agent];
        for (auto &[b, acc] : by_bin) {
            s.x.push_back((static_cast<double>(b) + 0.5) * bin);
            s.lo.push_back(acc.lo / acc.n);
            s.hi.push_back(acc.hi / acc.n);
        }
    }
    return d;
}

inline double nice_step(double range) {
    const double raw = range / 5.0;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    for (double m : {1.0, 2.0, 5.0, 10.0})
        if (raw <= m * mag) return m * mag;
    return 10.0 * mag;
}

inline std::string render(const ChartData &d, const std::vector<int> &agents, const std::string &title,
                          const ChartOptions &opt) {
    double y_lo = std::numeric_limits<double>::infinity(), y_hi = -y_lo;
    for (int a : agents) {
        const auto &s = d.agents.at(a);
        for (double v : s.lo) y_lo = std::min(y_lo, v);
        for (double v : s.hi) y_hi = std::max(y_hi, v);
        for (double v : s.ey) y_lo = std::min(y_lo, v), y_hi = std::max(y_hi, v);
    }
    if (!std::isfinite(y_lo) || !std::isfinite(y_hi)) throw ConfigError("nothing to plot");
    if (y_hi - y_lo < 1e-9) y_lo -= 1.0, y_hi += 1.0;
    const double pad = 0.05 * (y_hi - y_lo);
    y_lo -= pad;
    y_hi += pad;
    const double x_hi = std::max(d.x_max, 1.0);

    const double left = 70, right = 190, top = 40, bottom = 50;
    const double pw = opt.width - left - right, ph = opt.height - top - bottom;
    auto X = [&](double x) { return left + pw * x / x_hi; };
    auto Y = [&](double y) { return top + ph * (1.0 - (y - y_lo) / (y_hi - y_lo)); };

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << opt.width << "\" height=\""
       << opt.height << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << fmt(left) << "\" y=\"24\" font-size=\"15\">" << title << "</text>\n";

    const double ystep = nice_step(y_hi - y_lo);
    for (double y = std::ceil(y_lo / ystep) * ystep; y <= y_hi; y += ystep) {
        os << "<line x1=\"" << fmt(left) << "\" x2=\"" << fmt(left + pw) << "\" y1=\"" << fmt(Y(y))
           << "\" y2=\"" << fmt(Y(y)) << "\" stroke=\"#e0e0e0\"/>\n";
        os << "<text x=\"" << fmt(left - 6) << "\" y=\"" << fmt(Y(y) + 4)
           << "\" text-anchor=\"end\">" << fmt(y) << "</text>\n";
    }
    const double xstep = nice_step(x_hi);
    for (double x = 0; x <= x_hi; x += xstep) {
        os << "<text x=\"" << fmt(X(x)) << "\" y=\"" << fmt(top + ph + 18)
           << "\" text-anchor=\"middle\">" << static_cast<long>(x) << "</text>\n";
    }
    os << "<rect x=\"" << fmt(left) << "\" y=\"" << fmt(top) << "\" width=\"" << fmt(pw)
       << "\" height=\"" << fmt(ph) << "\" fill=\"none\" stroke=\"black\"/>\n";
    os << "<text x=\"" << fmt(left + pw / 2) << "\" y=\"" << fmt(opt.height - 10.0)
       << "\" text-anchor=\"middle\">episode</text>\n";
    os << "<text transform=\"translate(16," << fmt(top + ph / 2)
       << ") rotate(-90)\" text-anchor=\"middle\">reward</text>\n";

    for (int a : agents) {
        const auto &s = d.agents.at(a);
        if (s.x.empty()) continue;
        os << "<polygon fill=\"" << agent_color(a) << "\" fill-opacity=\"0.18\" stroke=\"none\" points=\"";
        for (std::size_t i = 0; i < s.x.size(); ++i)
            os << fmt(X(s.x[i])) << ',' << fmt(Y(s.hi[i])) << ' ';
        for (std::size_t i = s.x.size(); i-- > 0;)
            os << fmt(X(s.x[i])) << ',' << fmt(Y(s.lo[i])) << (i ? " " : "");
        os << "\"/>\n";
    }
    for (int a : agents) {
        const auto &s = d.agents.at(a);
        if (s.ex.empty()) continue;
        os << "<polyline fill=\"none\" stroke=\"" << agent_color(a) << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < s.ex.size(); ++i)
            os << fmt(X(s.ex[i])) << ',' << fmt(Y(s.ey[i])) << (i + 1 < s.ex.size() ? " " : "");
        os << "\"/>\n";
    }
    for (long e : d.onsets) {
        os << "<line x1=\"" << fmt(X(e)) << "\" x2=\"" << fmt(X(e)) << "\" y1=\"" << fmt(top)
           << "\" y2=\"" << fmt(top + ph) << "\" stroke=\"black\" stroke-dasharray=\"6,4\"/>\n";
        os << "<text x=\"" << fmt(X(e) + 4) << "\" y=\"" << fmt(top + 14)
           << "\">malfunction onset (" << e << ")</text>\n";
    }
    for (auto [e, count] : d.detections) {
        os << "<line x1=\"" << fmt(X(e)) << "\" x2=\"" << fmt(X(e)) << "\" y1=\"" << fmt(top)
           << "\" y2=\"" << fmt(top + ph) << "\" stroke=\"#555555\" stroke-dasharray=\"2,3\"/>\n";
        os << "<text x=\"" << fmt(X(e) + 4) << "\" y=\"" << fmt(top + ph - 6)
           << "\" fill=\"#555555\" font-size=\"10\">detected x" << count << "</text>\n";
    }

    double ly = top + 10;
    for (int a : agents) {
        os << "<rect x=\"" << fmt(left + pw + 16) << "\" y=\"" << fmt(ly - 9) << "\" width=\"14\" height=\"10\" fill=\""
           << agent_color(a) << "\" fill-opacity=\"0.35\"/>\n";
        os << "<line x1=\"" << fmt(left + pw + 16) << "\" x2=\"" << fmt(left + pw + 30) << "\" y1=\""
           << fmt(ly - 4) << "\" y2=\"" << fmt(ly - 4) << "\" stroke=\"" << agent_color(a) << "\" stroke-width=\"2\"/>\n";
        os << "<text x=\"" << fmt(left + pw + 36) << "\" y=\"" << fmt(ly) << "\">" << agent_label(a) << "</text>\n";
        ly += 18;
    }
    os << "<text x=\"" << fmt(left + pw + 16) << "\" y=\"" << fmt(ly + 8) << "\" font-size=\"10\">band: train "
       << (opt.band == BandKind::ConfidenceInterval ? "95% CI" : "min/max") << "</text>\n";
    os << "<text x=\"" << fmt(left + pw + 16) << "\" y=\"" << fmt(ly + 22)
       << "\" font-size=\"10\">line: greedy eval mean</text>\n";
    os << "</svg>\n";
    return os.str();
}

} // namespace detail

// Writes rewards.svg (all agents) and agent<i>.svg (one per agent). Returns the written paths.
inline std::vector<std::filesystem::path> render_charts(const std::vector<AggregateRow> &rows,
                                                        const std::filesystem::path &out_dir,
                                                        const ChartOptions &opt = {}) {
    const auto data = detail::collect(rows, opt);
    if (data.agents.empty()) throw ConfigError("aggregate contains no per-agent reward rows");
    std::filesystem::create_directories(out_dir);

    std::vector<int> all;
    for (const auto &[a, s] : data.agents)
        all.push_back(a);

    std::vector<std::filesystem::path> written;
    auto emit = [&](const std::filesystem::path &p, const std::string &svg) {
        std::ofstream os(p, std::ios::trunc | std::ios::binary);
        os << svg;
        if (!os) throw std::runtime_error("failed writing " + p.string());
        written.push_back(p);
    };
    emit(out_dir / "rewards.svg", detail::render(data, all, "Per-agent reward", opt));
    for (int a : all)
        emit(out_dir / ("agent" + std::to_string(a) + ".svg"),
             detail::render(data, {a}, "Reward: " + agent_label(a), opt));
    return written;
}

inline std::vector<std::filesystem::path> render_charts(const std::filesystem::path &aggregate_file,
                                                        const std::filesystem::path &out_dir,
                                                        const ChartOptions &opt = {}) {
    std::ifstream is(aggregate_file);
    if (!is) throw ConfigError("cannot open " + aggregate_file.string());
    return render_charts(read_aggregate_csv(is, aggregate_file.filename().string()), out_dir, opt);
}

} // namespace cavdn::experiment
