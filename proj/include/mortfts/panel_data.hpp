#pragma once

// Life-table death-count panels: ingestion, validation and indexing by (group, sex, year, age).

#include "mortfts/common.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

namespace mortfts {

/// Contiguous single-year ages, e.g. 0..110.
class AgeGrid {
public:
    AgeGrid() = default;

    explicit AgeGrid(std::vector<int> ages) : ages_(std::move(ages)) {
        if (ages_.size() < 3) throw Error("age grid needs at least 3 ages");
        for (std::size_t i = 1; i < ages_.size(); ++i)
            if (ages_[i] != ages_[i - 1] + 1)
                throw Error("age grid must be contiguous single years (gap after age " +
                            std::to_string(ages_[i - 1]) + ")");
    }

    static AgeGrid range(int first, int last) {
        std::vector<int> a;
        for (int x = first; x <= last; ++x) a.push_back(x);
        return AgeGrid(std::move(a));
    }

    [[nodiscard]] std::size_t size() const { return ages_.size(); }
    [[nodiscard]] const std::vector<int>& ages() const { return ages_; }
    [[nodiscard]] int front() const { return ages_.front(); }
    [[nodiscard]] int back() const { return ages_.back(); }

    bool operator==(const AgeGrid&) const = default;

private:
    std::vector<int> ages_;
};

/// n years x A ages of death counts whose rows sum to the radix.
struct DeathDensitySeries {
    AgeGrid grid;
    std::vector<int> years;
    Matrix values;
    double radix = 1e5;
};

struct DeathDensityPanel {
    std::vector<std::string> groups;  // declared order, national included if present
    std::optional<std::string> national;
    AgeGrid grid;
    std::vector<int> years;
    double radix = 1e5;
    std::map<SeriesKey, DeathDensitySeries> series;

    [[nodiscard]] bool has(const std::string& group, Sex sex) const {
        return series.count(SeriesKey{group, sex}) > 0;
    }

    [[nodiscard]] const DeathDensitySeries& at(const std::string& group, Sex sex) const {
        auto it = series.find(SeriesKey{group, sex});
        if (it == series.end()) throw Error("panel has no series for " + group + "/" + std::string(to_string(sex)));
        return it->second;
    }

    /// Groups that are forecast: everything except the national aggregate.
    [[nodiscard]] std::vector<std::string> modelled_groups() const {
        std::vector<std::string> out;
        for (const auto& g : groups)
            if (!national || g != *national) out.push_back(g);
        return out;
    }
};

struct SampleSplit {
    std::vector<int> train_years;
    std::vector<int> validation_years;
    std::vector<int> test_years;
};

struct ColumnSchema {
    std::string group = "group";
    std::string sex = "sex";
    std::string year = "year";
    std::string age = "age";
    std::string deaths = "deaths";
    char delimiter = '\0';  // '\0' detects comma or tab from the header row
};

struct LoadOptions {
    ColumnSchema schema;
    double radix = 1e5;
    std::vector<std::string> group_order;  // empty: groups sorted by identifier
    std::optional<std::string> national;
    double rescale_warning_tolerance = 0.005;
};

struct LoadReport {
    std::vector<std::string> warnings;
};

namespace detail {

inline std::string trim(std::string_view s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(" \t\r\n");
    std::string out(s.substr(b, e - b + 1));
    if (out.size() >= 2 && out.front() == '"' && out.back() == '"') out = out.substr(1, out.size() - 2);
    return out;
}

inline std::vector<std::string> split_fields(const std::string& line, char delim) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (char c : line) {
        if (c == '"') {
            quoted = !quoted;
            cur.push_back(c);
        } else if (c == delim && !quoted) {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(trim(cur));
    return out;
}

inline double parse_double(const std::string& s, std::size_t line_no, const std::string& what) {
    double v = 0.0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
        throw Error("line " + std::to_string(line_no) + ": cannot parse " + what + " '" + s + "'");
    return v;
}

inline int parse_int(const std::string& s, std::size_t line_no, const std::string& what) {
    double v = parse_double(s, line_no, what);
    if (v != std::floor(v)) throw Error("line " + std::to_string(line_no) + ": " + what + " must be an integer");
    return static_cast<int>(v);
}

}  // namespace detail

/// Reads one row per (group, sex, year, age). Rows may come in any order; rows whose year does
/// not sum to the radix are rescaled to it.
inline DeathDensityPanel load_panel(std::istream& in, const LoadOptions& opts = {}, LoadReport* report = nullptr) {
    std::string header;
    if (!std::getline(in, header)) throw Error("empty input: missing header row");
    char delim = opts.schema.delimiter;
    if (delim == '\0') delim = header.find('\t') != std::string::npos ? '\t' : ',';
    auto cols = detail::split_fields(header, delim);
    auto column = [&](const std::string& name) {
        auto it = std::find(cols.begin(), cols.end(), name);
        if (it == cols.end()) throw Error("header has no column named '" + name + "'");
        return static_cast<std::size_t>(it - cols.begin());
    };
    const std::size_t cg = column(opts.schema.group), cs = column(opts.schema.sex), cy = column(opts.schema.year),
                      ca = column(opts.schema.age), cd = column(opts.schema.deaths);
    const std::size_t need = std::max({cg, cs, cy, ca, cd}) + 1;

    std::map<std::tuple<SeriesKey, int, int>, double> cells;
    std::set<std::string> group_set;
    std::set<int> year_set, age_set;
    std::string line;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        auto f = detail::split_fields(line, delim);
        if (f.size() < need) throw Error("line " + std::to_string(line_no) + ": expected at least " + std::to_string(need) + " fields");
        SeriesKey key{f[cg], parse_sex(f[cs])};
        int year = detail::parse_int(f[cy], line_no, "year");
        int age = detail::parse_int(f[ca], line_no, "age");
        double deaths = detail::parse_double(f[cd], line_no, "deaths");
        if (!std::isfinite(deaths) || deaths < 0.0)
            throw Error("line " + std::to_string(line_no) + ": negative or non-finite death count for (" + key.group + ", " +
                        std::string(to_string(key.sex)) + ", " + std::to_string(year) + ", " + std::to_string(age) + ")");
        if (!cells.emplace(std::make_tuple(key, year, age), deaths).second)
            throw Error("line " + std::to_string(line_no) + ": duplicate cell (" + key.group + ", " +
                        std::string(to_string(key.sex)) + ", " + std::to_string(year) + ", " + std::to_string(age) + ")");
        group_set.insert(key.group);
        year_set.insert(year);
        age_set.insert(age);
    }
    if (cells.empty()) throw Error("input has a header but no data rows");

    DeathDensityPanel panel;
    panel.radix = opts.radix;
    panel.national = opts.national;
    panel.years.assign(year_set.begin(), year_set.end());
    for (std::size_t i = 1; i < panel.years.size(); ++i)
        if (panel.years[i] != panel.years[i - 1] + 1)
            throw Error("years are not contiguous: gap between " + std::to_string(panel.years[i - 1]) + " and " +
                        std::to_string(panel.years[i]));
    std::vector<int> ages(age_set.begin(), age_set.end());
    for (std::size_t i = 1; i < ages.size(); ++i)
        if (ages[i] != ages[i - 1] + 1)
            throw Error("ages are not contiguous: missing ages between " + std::to_string(ages[i - 1]) + " and " +
                        std::to_string(ages[i]));
    panel.grid = AgeGrid(ages);

    if (opts.group_order.empty()) {
        panel.groups.assign(group_set.begin(), group_set.end());
    } else {
        for (const auto& g : opts.group_order)
            if (group_set.count(g)) panel.groups.push_back(g);
        for (const auto& g : group_set)
            if (std::find(panel.groups.begin(), panel.groups.end(), g) == panel.groups.end()) panel.groups.push_back(g);
    }
    if (panel.national && !group_set.count(*panel.national))
        throw Error("declared national group '" + *panel.national + "' does not occur in the data");

    std::set<SeriesKey> keys;
    for (const auto& [k, v] : cells) keys.insert(std::get<0>(k));
    const auto n = static_cast<Eigen::Index>(panel.years.size());
    const auto A = static_cast<Eigen::Index>(ages.size());
    for (const auto& key : keys) {
        DeathDensitySeries s;
        s.grid = panel.grid;
        s.years = panel.years;
        s.radix = opts.radix;
        s.values.resize(n, A);
        for (Eigen::Index t = 0; t < n; ++t) {
            for (Eigen::Index a = 0; a < A; ++a) {
                auto it = cells.find(std::make_tuple(key, panel.years[t], ages[a]));
                if (it == cells.end())
                    throw Error("missing cell (" + key.group + ", " + std::string(to_string(key.sex)) + ", " +
                                std::to_string(panel.years[t]) + ", " + std::to_string(ages[a]) + ")");
                s.values(t, a) = it->second;
            }
            const double sum = s.values.row(t).sum();
            if (!(sum > 0.0))
                throw Error("all-zero death counts for (" + key.group + ", " + std::string(to_string(key.sex)) + ", " +
                            std::to_string(panel.years[t]) + ")");
            if (sum != opts.radix) {
                if (std::abs(sum / opts.radix - 1.0) > opts.rescale_warning_tolerance && report)
                    report->warnings.push_back("rescaled (" + key.group + ", " + std::string(to_string(key.sex)) + ", " +
                                               std::to_string(panel.years[t]) + ") from row sum " + std::to_string(sum));
                s.values.row(t) *= opts.radix / sum;
            }
        }
        panel.series.emplace(key, std::move(s));
    }
    return panel;
}

/// Death counts divided by the radix; each row becomes a probability vector.
inline Matrix normalize_to_probability(const DeathDensitySeries& series) {
    if (!(series.radix > 0.0)) throw Error("radix must be positive");
    Matrix p = series.values / series.radix;
    for (Eigen::Index t = 0; t < p.rows(); ++t) {
        if (!(p.row(t).sum() > 0.0)) throw Error("row " + std::to_string(t) + " has no mass");
        if ((p.row(t).array() < 0.0).any()) throw Error("row " + std::to_string(t) + " has negative entries");
    }
    return p;
}

/// Contiguous train/validation/test partition of the panel's years by proportions.
inline SampleSplit split_years(const std::vector<int>& years, std::array<double, 3> proportions) {
    const double total = proportions[0] + proportions[1] + proportions[2];
    if (std::abs(total - 1.0) > 1e-9) throw Error("split proportions must sum to 1");
    for (double p : proportions)
        if (!(p > 0.0)) throw Error("split proportions must be positive");
    const auto n = static_cast<long>(years.size());
    const long n_train = std::lround(static_cast<double>(n) * proportions[0]);
    const long n_val = std::lround(static_cast<double>(n) * proportions[1]);
    const long n_test = n - n_train - n_val;
    if (n_train < 1 || n_val < 1 || n_test < 1)
        throw Error("too few years (" + std::to_string(n) + ") for three nonempty sets");
    SampleSplit s;
    s.train_years.assign(years.begin(), years.begin() + n_train);
    s.validation_years.assign(years.begin() + n_train, years.begin() + n_train + n_val);
    s.test_years.assign(years.begin() + n_train + n_val, years.end());
    return s;
}

inline SampleSplit split_years(const DeathDensityPanel& panel, std::array<double, 3> proportions) {
    return split_years(panel.years, proportions);
}

}  // namespace mortfts
