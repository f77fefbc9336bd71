#pragma once

// Per-run CSV metrics, detection event logs, and cross-run aggregation.
//
// Run CSV schema (one row per training episode plus one per greedy evaluation):
//   seed,episode,phase,agent0_r,...,agent{n-1}_r,team_r,epsilon,mean_loss,detected

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "cavdn/errors.hpp"

namespace cavdn::experiment {

enum class Phase { Train, Eval };

inline std::string_view phase_name(Phase p) { return p == Phase::Train ? "train" : "eval"; }

struct RunRow {
    std::uint64_t seed = 0;
    long episode = 0;
    Phase phase = Phase::Train;
    std::vector<double> rewards;
    double team_reward = 0.0;
    double epsilon = 0.0;
    double mean_loss = 0.0;
    bool detected = false;

    bool operator==(const RunRow &o) const {
        auto same = [](double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); };
        return seed == o.seed && episode == o.episode && phase == o.phase && rewards == o.rewards &&
               same(team_reward, o.team_reward) && same(epsilon, o.epsilon) &&
               same(mean_loss, o.mean_loss) && detected == o.detected;
    }
};

struct DetectionEvent {
    std::uint64_t seed = 0;
    long episode = 0;
    std::set<int> agents;

    bool operator==(const DetectionEvent &) const = default;
};

// Shortest representation that parses back to the same double.
inline std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline double parse_number(std::string_view s, const std::string &context) {
    if (s == "nan") return std::nan("");
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw ConfigError(context + ": cannot parse number \"" + std::string(s) + "\"");
    return v;
}

template <class Int>
Int parse_integer(std::string_view s, const std::string &context) {
    Int v{};
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw ConfigError(context + ": cannot parse integer \"" + std::string(s) + "\"");
    return v;
}

inline std::vector<std::string_view> split(std::string_view line, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(sep, start);
        out.push_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

inline std::string run_csv_header(int n_agents) {
    std::string h = "seed,episode,phase";
    for (int i = 0; i < n_agents; ++i)
        h += ",agent" + std::to_string(i) + "_r";
    h += ",team_r,epsilon,mean_loss,detected";
    return h;
}

inline std::string format_row(const RunRow &r) {
    std::string s = std::to_string(r.seed) + "," + std::to_string(r.episode) + "," +
                    std::string(phase_name(r.phase));
    for (double v : r.rewards)
        s += "," + format_number(v);
    s += "," + format_number(r.team_reward) + "," + format_number(r.epsilon) + "," +
         format_number(r.mean_loss) + "," + (r.detected ? "1" : "0");
    return s;
}

inline void write_run_csv(std::ostream &os, int n_agents, const std::vector<RunRow> &rows) {
    os << run_csv_header(n_agents) << '\n';
    for (const auto &r : rows)
        os << format_row(r) << '\n';
}

inline int agents_in_header(const std::string &header, const std::string &context) {
    const auto cols = split(header, ',');
    const int n = static_cast<int>(cols.size()) - 7;
    if (n <= 0 || header != run_csv_header(n))
        throw ConfigError(context + ": unexpected run CSV header");
    return n;
}

inline std::vector<RunRow> read_run_csv(std::istream &is, const std::string &context, int *n_agents_out = nullptr) {
    std::string line;
    if (!std::getline(is, line)) throw ConfigError(context + ": empty run CSV");
    const int n = agents_in_header(line, context);
    if (n_agents_out) *n_agents_out = n;
    std::vector<RunRow> rows;
    long line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::string where = context + ":" + std::to_string(line_no);
        const auto f = split(line, ',');
        if (static_cast<int>(f.size()) != n + 7) throw ConfigError(where + ": wrong column count");
        RunRow r;
        r.seed = parse_integer<std::uint64_t>(f[0], where);
        r.episode = parse_integer<long>(f[1], where);
        if (f[2] == "train")
            r.phase = Phase::Train;
        else if (f[2] == "eval")
            r.phase = Phase::Eval;
        else
            throw ConfigError(where + ": unknown phase \"" + std::string(f[2]) + "\"");
        for (int i = 0; i < n; ++i)
            r.rewards.push_back(parse_number(f[3 + i], where));
        r.team_reward = parse_number(f[3 + n], where);
        r.epsilon = parse_number(f[4 + n], where);
        r.mean_loss = parse_number(f[5 + n], where);
        if (f[6 + n] != "0" && f[6 + n] != "1") throw ConfigError(where + ": detected must be 0 or 1");
        r.detected = f[6 + n] == "1";
        rows.push_back(std::move(r));
    }
    return rows;
}

inline std::vector<RunRow> read_run_csv(const std::filesystem::path &path, int *n_agents_out = nullptr) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path.string());
    return read_run_csv(in, path.filename().string(), n_agents_out);
}

inline void write_detections_csv(std::ostream &os, const std::vector<DetectionEvent> &events) {
    os << "seed,episode,agents\n";
    for (const auto &e : events) {
        os << e.seed << ',' << e.episode << ',';
        bool first = true;
        for (int a : e.agents) {
            os << (first ? "" : ";") << a;
            first = false;
        }
        os << '\n';
    }
}

inline std::string run_file_name(std::uint64_t seed) { return "run_seed" + std::to_string(seed) + ".csv"; }
inline std::string detections_file_name(std::uint64_t seed) {
    return "detections_seed" + std::to_string(seed) + ".csv";
}

// run_seed<N>.csv files in a directory, ordered by seed.
inline std::vector<std::filesystem::path> find_run_files(const std::filesystem::path &dir) {
    if (!std::filesystem::is_directory(dir)) throw ConfigError("runs directory " + dir.string() + " does not exist");
    static const std::regex pattern(R"(run_seed(\d+)\.csv)");
    std::vector<std::pair<std::uint64_t, std::filesystem::path>> found;
    for (const auto &entry : std::filesystem::directory_iterator(dir)) {
        std::smatch m;
        const std::string name = entry.path().filename().string();
        if (entry.is_regular_file() && std::regex_match(name, m, pattern))
            found.emplace_back(std::stoull(m[1].str()), entry.path());
    }
    std::sort(found.begin(), found.end());
    std::vector<std::filesystem::path> out;
    for (auto &f : found)
        out.push_back(std::move(f.second));
    return out;
}

// ---------------------------------------------------------------------------
// Aggregation

struct SampleStats {
    double mean = 0.0;
    double sd = 0.0;   // sample standard deviation (n - 1)
    double ci95 = 0.0; // 1.96 * sd / sqrt(n)
    double min = 0.0;
    double max = 0.0;
    int count = 0;
};

inline SampleStats sample_stats(const std::vector<double> &xs) {
    SampleStats s;
    s.count = static_cast<int>(xs.size());
    if (xs.empty()) return s;
    double sum = 0.0;
    for (double x : xs)
        sum += x;
    s.mean = sum / s.count;
    double ss = 0.0;
    for (double x : xs)
        ss += (x - s.mean) * (x - s.mean);
    s.sd = s.count > 1 ? std::sqrt(ss / (s.count - 1)) : 0.0;
    s.ci95 = 1.96 * s.sd / std::sqrt(static_cast<double>(s.count));
    s.min = *std::min_element(xs.begin(), xs.end());
    s.max = *std::max_element(xs.begin(), xs.end());
    return s;
}

// One aggregate CSV row. series is train, eval, onset or detection; agent -1 is the team.
struct AggregateRow {
    std::string series;
    long episode = 0;
    int agent = -1;
    SampleStats stats;
};

struct SummaryRow {
    std::string phase; // before_malfunction, after_malfunction or final
    long episode = 0;
    int agent = 0;
    SampleStats stats;
};

struct Aggregate {
    int n_agents = 0;
    int runs = 0;
    std::vector<AggregateRow> curves;
    std::vector<SummaryRow> summary;
};

inline constexpr std::string_view kAggregateHeader = "series,episode,agent,mean,sd,ci95,min,max,runs";
inline constexpr std::string_view kSummaryHeader = "phase,episode,agent,mean,sd,ci95,min,max,runs";

// Aggregates equally-shaped runs. onset_episode, when known, splits the summary into the
// last evaluation before onset and the final evaluation.
inline Aggregate aggregate(const std::vector<std::vector<RunRow>> &runs, int n_agents,
                           std::optional<long> onset_episode) {
    if (runs.size() < 2) throw ConfigError("aggregate needs at least two runs");
    for (const auto &run : runs) {
        if (run.size() != runs.front().size())
            throw ConfigError("runs have different numbers of rows");
        for (std::size_t i = 0; i < run.size(); ++i) {
            const auto &a = run[i];
            const auto &b = runs.front()[i];
            if (a.episode != b.episode || a.phase != b.phase || static_cast<int>(a.rewards.size()) != n_agents)
                throw ConfigError("runs do not share the same episode/phase schedule");
        }
    }

    Aggregate agg;
    agg.n_agents = n_agents;
    agg.runs = static_cast<int>(runs.size());
    const auto &ref = runs.front();
    for (std::size_t i = 0; i < ref.size(); ++i) {
        const std::string series(phase_name(ref[i].phase));
        for (int a = -1; a < n_agents; ++a) {
            std::vector<double> xs;
            for (const auto &run : runs)
                xs.push_back(a < 0 ? run[i].team_reward : run[i].rewards[a]);
            agg.curves.push_back({series, ref[i].episode, a, sample_stats(xs)});
        }
    }

    if (onset_episode) agg.curves.push_back({"onset", *onset_episode, -1, {}});
    std::map<long, int> detections;
    for (const auto &run : runs)
        for (const auto &r : run)
            if (r.detected) ++detections[r.episode];
    for (auto [episode, count] : detections) {
        SampleStats s;
        s.count = count;
        agg.curves.push_back({"detection", episode, -1, s});
    }

    auto summarize = [&](const std::string &phase, std::size_t row) {
        for (int a = 0; a < n_agents; ++a) {
            std::vector<double> xs;
            for (const auto &run : runs)
                xs.push_back(run[row].rewards[a]);
            agg.summary.push_back({phase, ref[row].episode, a, sample_stats(xs)});
        }
    };
    std::optional<std::size_t> last_eval, last_before;
    for (std::size_t i = 0; i < ref.size(); ++i) {
        if (ref[i].phase != Phase::Eval) continue;
        last_eval = i;
        if (onset_episode && ref[i].episode < *onset_episode) last_before = i;
    }
    if (!last_eval) throw ConfigError("runs contain no evaluation rows");
    if (onset_episode) {
        if (last_before) summarize("before_malfunction", *last_before);
        if (ref[*last_eval].episode >= *onset_episode) summarize("after_malfunction", *last_eval);
    } else {
        summarize("final", *last_eval);
    }
    return agg;
}

inline void write_stats(std::ostream &os, const SampleStats &s) {
    os << format_number(s.mean) << ',' << format_number(s.sd) << ',' << format_number(s.ci95) << ','
       << format_number(s.min) << ',' << format_number(s.max) << ',' << s.count;
}

inline void write_aggregate_csv(std::ostream &os, const Aggregate &agg) {
    os << kAggregateHeader << '\n';
    for (const auto &r : agg.curves) {
        os << r.series << ',' << r.episode << ',' << r.agent << ',';
        write_stats(os, r.stats);
        os << '\n';
    }
}

inline void write_summary_csv(std::ostream &os, const Aggregate &agg) {
    os << kSummaryHeader << '\n';
    for (const auto &r : agg.summary) {
        os << r.phase << ',' << r.episode << ',' << r.agent << ',';
        write_stats(os, r.stats);
        os << '\n';
    }
}

inline std::vector<AggregateRow> read_aggregate_csv(std::istream &is, const std::string &context) {
    std::string line;
    if (!std::getline(is, line) || line != kAggregateHeader)
        throw ConfigError(context + ": not an aggregate CSV");
    std::vector<AggregateRow> rows;
    long line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::string where = context + ":" + std::to_string(line_no);
        const auto f = split(line, ',');
        if (f.size() != 9) throw ConfigError(where + ": wrong column count");
        AggregateRow r;
        r.series = std::string(f[0]);
        r.episode = parse_integer<long>(f[1], where);
        r.agent = parse_integer<int>(f[2], where);
        r.stats.mean = parse_number(f[3], where);
        r.stats.sd = parse_number(f[4], where);
        r.stats.ci95 = parse_number(f[5], where);
        r.stats.min = parse_number(f[6], where);
        r.stats.max = parse_number(f[7], where);
        r.stats.count = parse_integer<int>(f[8], where);
        rows.push_back(std::move(r));
    }
    return rows;
}

inline std::filesystem::path summary_path_for(const std::filesystem::path &aggregate_file) {
    auto p = aggregate_file;
    p.replace_filename(aggregate_file.stem().string() + "_summary.csv");
    return p;
}

} // namespace cavdn::experiment
