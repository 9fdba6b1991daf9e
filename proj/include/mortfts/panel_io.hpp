#pragma once

// Canonical on-disk panel layout: one CSV matrix per (group, sex) plus manifest.json.

#include "mortfts/io.hpp"
#include "mortfts/panel_data.hpp"

#include <json.hpp>

#include <cctype>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace mortfts {

inline std::string series_file_name(const SeriesKey& key) {
    std::string safe;
    for (char c : key.group) safe.push_back(std::isalnum(static_cast<unsigned char>(c)) || c == '-' ? c : '_');
    return safe + "_" + std::string(to_string(key.sex)) + ".csv";
}

inline void write_panel(const DeathDensityPanel& panel, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::ordered_json manifest;
    manifest["ages"] = panel.grid.ages();
    manifest["years"] = panel.years;
    manifest["radix"] = panel.radix;
    manifest["groups"] = panel.groups;
    manifest["national"] = panel.national ? nlohmann::ordered_json(*panel.national) : nlohmann::ordered_json(nullptr);
    auto list = nlohmann::ordered_json::array();
    std::vector<std::string> header{"year"};
    for (int a : panel.grid.ages()) header.push_back(std::to_string(a));
    for (const auto& g : panel.groups) {
        for (Sex sex : {Sex::Female, Sex::Male}) {
            if (!panel.has(g, sex)) continue;
            const auto& s = panel.at(g, sex);
            SeriesKey key{g, sex};
            std::vector<std::string> labels;
            for (int y : s.years) labels.push_back(std::to_string(y));
            io::write_text(dir / series_file_name(key), io::matrix_csv(s.values, header, labels));
            list.push_back({{"group", g}, {"sex", to_string(sex)}, {"file", series_file_name(key)}});
        }
    }
    manifest["series"] = list;
    io::write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

inline DeathDensityPanel read_panel(const std::filesystem::path& dir) {
    auto manifest = nlohmann::json::parse(io::read_text(dir / "manifest.json"));
    DeathDensityPanel panel;
    panel.grid = AgeGrid(manifest.at("ages").get<std::vector<int>>());
    panel.years = manifest.at("years").get<std::vector<int>>();
    panel.radix = manifest.at("radix").get<double>();
    panel.groups = manifest.at("groups").get<std::vector<std::string>>();
    if (!manifest.at("national").is_null()) panel.national = manifest.at("national").get<std::string>();
    for (const auto& entry : manifest.at("series")) {
        SeriesKey key{entry.at("group").get<std::string>(), parse_sex(entry.at("sex").get<std::string>())};
        std::istringstream in(io::read_text(dir / entry.at("file").get<std::string>()));
        std::string line;
        std::getline(in, line);
        DeathDensitySeries s;
        s.grid = panel.grid;
        s.years = panel.years;
        s.radix = panel.radix;
        s.values.resize(static_cast<Eigen::Index>(panel.years.size()), static_cast<Eigen::Index>(panel.grid.size()));
        for (Eigen::Index t = 0; t < s.values.rows(); ++t) {
            if (!std::getline(in, line)) throw Error("truncated series file for " + to_string(key));
            auto f = detail::split_fields(line, ',');
            if (f.size() != panel.grid.size() + 1) throw Error("wrong field count in series file for " + to_string(key));
            for (Eigen::Index a = 0; a < s.values.cols(); ++a)
                s.values(t, a) = detail::parse_double(f[static_cast<std::size_t>(a) + 1], static_cast<std::size_t>(t) + 2, "value");
        }
        panel.series.emplace(key, std::move(s));
    }
    return panel;
}

}  // namespace mortfts
