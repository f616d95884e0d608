#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "xiqa/degrade.hpp"
#include "xiqa/error.hpp"

namespace xiqa {

inline constexpr std::string_view kManifestHeader = "path,reference_id,kind,level,score";

struct ManifestRow {
    std::string path;
    std::string reference_id;
    DegradationKind kind = DegradationKind::GaussianBlur;
    int level = 0;
    std::optional<double> score;
};

/// Rows of (image, reference, degradation, optional score). Relative paths
/// resolve against `base_dir`.
struct DatasetManifest {
    std::vector<ManifestRow> rows;
    std::filesystem::path base_dir;

    std::filesystem::path resolve(const ManifestRow& row) const {
        std::filesystem::path p(row.path);
        return p.is_absolute() ? p : base_dir / p;
    }

    bool all_labeled() const {
        for (const auto& r : rows)
            if (!r.score) return false;
        return !rows.empty();
    }

    /// Row indices grouped by reference id, in sorted id order.
    std::map<std::string, std::vector<std::size_t>> groups() const {
        std::map<std::string, std::vector<std::size_t>> out;
        for (std::size_t i = 0; i < rows.size(); ++i) out[rows[i].reference_id].push_back(i);
        return out;
    }
};

/// Shortest decimal text that parses back to the same double.
inline std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        throw Error(Errc::InvalidConfig, "not a number: '" + std::string(s) + "'");
    }
    return v;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(std::move(cur));
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    fields.push_back(std::move(cur));
    return fields;
}

inline void write_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(Errc::UnwritableDestination, "cannot write " + path.string());
    out << kManifestHeader << '\n';
    for (const auto& r : m.rows) {
        if (r.path.find_first_of(",\n") != std::string::npos || r.reference_id.find_first_of(",\n") != std::string::npos) {
            throw Error(Errc::InvalidConfig, "manifest fields may not contain commas or newlines: " + r.path);
        }
        out << r.path << ',' << r.reference_id << ',' << kind_name(r.kind) << ',' << r.level << ',';
        if (r.score) out << format_double(*r.score);
        out << '\n';
    }
    if (!out) throw Error(Errc::UnwritableDestination, "write failed for " + path.string());
}

inline DatasetManifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::UnreadableFile, "cannot open manifest " + path.string());
    DatasetManifest m;
    m.base_dir = path.parent_path();
    std::string line;
    if (!std::getline(in, line)) throw Error(Errc::InvalidConfig, "empty manifest " + path.string());
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kManifestHeader) throw Error(Errc::InvalidConfig, "manifest header must be '" + std::string(kManifestHeader) + "'");
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        auto f = split_csv_line(line);
        if (f.size() != 5) throw Error(Errc::InvalidConfig, "manifest line " + std::to_string(lineno) + " needs 5 fields");
        ManifestRow row;
        row.path = f[0];
        row.reference_id = f[1];
        row.kind = parse_kind(f[2]);
        int level = 0;
        auto res = std::from_chars(f[3].data(), f[3].data() + f[3].size(), level);
        if (res.ec != std::errc() || res.ptr != f[3].data() + f[3].size()) {
            throw Error(Errc::InvalidConfig, "bad level on manifest line " + std::to_string(lineno));
        }
        if (level < 0 || level > kMaxLevel) throw Error(Errc::LevelOutOfRange, "manifest line " + std::to_string(lineno));
        row.level = level;
        if (!f[4].empty()) row.score = parse_double(f[4]);
        m.rows.push_back(std::move(row));
    }
    return m;
}

} // namespace xiqa
