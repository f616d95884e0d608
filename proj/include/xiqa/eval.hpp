#pragma once

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "xiqa/checkpoint.hpp"
#include "xiqa/manifest.hpp"
#include "xiqa/metrics.hpp"
#include "xiqa/train.hpp"

namespace xiqa {

struct ScoreRecord {
    std::string path;
    double predicted = 0.0;
    double ground_truth = 0.0;
};

struct EvalResult {
    RunMetrics metrics;
    std::vector<ScoreRecord> scores;
};

inline double meta_number(const Checkpoint& ck, const std::string& key, double fallback) {
    auto it = ck.meta.find(key);
    return it == ck.meta.end() ? fallback : parse_double(it->second);
}

/// Scores the labeled rows (restricted to `test_refs` when non-empty) with a
/// deterministic center crop, maps predictions back to the label scale and
/// correlates them with the ground truth.
inline EvalResult evaluate_model(const Checkpoint& ck, const DatasetManifest& labeled, const std::set<std::string>& test_refs = {}) {
    auto model = model_from_checkpoint<float>(ck);
    const double mean = meta_number(ck, "score.mean", 0.0);
    const double sd = meta_number(ck, "score.std", 1.0);

    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < labeled.rows.size(); ++i) {
        const auto& r = labeled.rows[i];
        if (!test_refs.empty() && !test_refs.count(r.reference_id)) continue;
        if (!r.score) throw Error(Errc::MissingScores, "row " + r.path + " has no quality score");
        rows.push_back(i);
    }
    if (rows.empty()) throw Error(Errc::MissingScores, "no labeled rows to evaluate");

    ImageCache cache(labeled);
    std::vector<Image> crops;
    for (auto i : rows) crops.push_back(center_crop(cache.get(i), model.config.image_size));
    const auto feats = class_token_features(model, crops);

    const std::size_t d = model.config.embed_dim;
    const auto w = model.reg_w.values();
    const double b = model.reg_b.values()[0];
    EvalResult res;
    std::vector<double> pred, truth;
    for (std::size_t k = 0; k < rows.size(); ++k) {
        double z = b;
        for (std::size_t j = 0; j < d; ++j) z += static_cast<double>(w[j]) * feats[k * d + j];
        const auto& row = labeled.rows[rows[k]];
        res.scores.push_back({row.path, z * sd + mean, *row.score});
        pred.push_back(res.scores.back().predicted);
        truth.push_back(*row.score);
    }
    res.metrics.plcc = plcc(pred, truth);
    res.metrics.srocc = srocc(pred, truth);
    return res;
}

inline void write_score_dump(const std::vector<ScoreRecord>& scores, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(Errc::UnwritableDestination, "cannot write " + path.string());
    out << "path,predicted,ground_truth\n";
    for (const auto& s : scores) out << s.path << ',' << format_double(s.predicted) << ',' << format_double(s.ground_truth) << '\n';
}

struct RunRecord {
    std::size_t run = 0;
    std::uint64_t seed = 0;
    RunMetrics metrics;
};

/// `run,seed,plcc,srocc` rows, then `mean` and `std` summary rows.
inline void write_results_csv(const std::vector<RunRecord>& runs, const std::filesystem::path& path) {
    std::vector<RunMetrics> m;
    for (const auto& r : runs) m.push_back(r.metrics);
    const auto agg = aggregate_runs(m);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(Errc::UnwritableDestination, "cannot write " + path.string());
    out << "run,seed,plcc,srocc\n";
    for (const auto& r : runs) {
        out << r.run << ',' << r.seed << ',' << format_double(r.metrics.plcc) << ',' << format_double(r.metrics.srocc) << '\n';
    }
    out << "mean,," << format_double(agg.mean_plcc) << ',' << format_double(agg.mean_srocc) << '\n';
    out << "std,," << format_double(agg.std_plcc) << ',' << format_double(agg.std_srocc) << '\n';
}

} // namespace xiqa
