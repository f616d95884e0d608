// xiqa: synthesize corpora, pretrain, fine-tune, evaluate and dump reconstructions.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "xiqa/xiqa.hpp"

using namespace xiqa;
namespace fs = std::filesystem;

namespace {

constexpr int kExitIo = 2;
constexpr int kExitConfig = 3;
constexpr int kExitNumeric = 4;
constexpr int kExitData = 5;

int exit_code(Errc c) {
    switch (c) {
    case Errc::UnreadableFile:
    case Errc::UnsupportedFormat:
    case Errc::CorruptHeader:
    case Errc::UnwritableDestination:
    case Errc::BadMagic:
    case Errc::VersionUnsupported:
    case Errc::TruncatedFile:
    case Errc::ShapeTableMismatch: return kExitIo;
    case Errc::NonFiniteValue:
    case Errc::ZeroVariance: return kExitNumeric;
    case Errc::EmptySourceList:
    case Errc::ContentMismatch:
    case Errc::InsufficientVariants:
    case Errc::MissingScores:
    case Errc::TooFewReferences:
    case Errc::EmptyResults: return kExitData;
    default: return kExitConfig;
    }
}

struct SynthArgs {
    fs::path sources, out;
    std::string kinds = "GaussianBlur";
    std::uint64_t seed = 0;
    std::size_t procedural = 0;
    std::size_t size = 64;
    bool score_from_level = false;
};

struct PretrainArgs {
    fs::path manifest, config, out, loss_csv;
    std::optional<std::uint64_t> seed;
    bool quiet = false;
};

struct FinetuneArgs {
    fs::path manifest, ckpt, config, out;
    std::optional<std::uint64_t> seed;
    bool verify_frozen = false;
};

struct EvalArgs {
    fs::path manifest, ckpt, config, out = ".";
    std::size_t repeats = 10;
    std::uint64_t seed = 0;
    bool fresh_splits = false;
};

struct ReconArgs {
    fs::path ckpt, original, degraded, out;
};

std::vector<fs::path> list_images(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw Error(Errc::UnreadableFile, "source directory " + dir.string() + " does not exist");
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        auto ext = e.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
        if (ext == ".ppm" || ext == ".pgm" || ext == ".png") out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

void ensure_parent(const fs::path& p) {
    if (p.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(p.parent_path(), ec);
    }
}

int run_synth(const SynthArgs& a) {
    const auto kinds = parse_kind_list(a.kinds);
    std::mt19937_64 rng(a.seed);
    DatasetManifest m;
    if (a.procedural > 0) {
        std::vector<Image> images;
        for (std::size_t i = 0; i < a.procedural; ++i) {
            images.push_back(procedural_image(a.size, a.seed * 1000003 + i, "ref" + std::to_string(i)));
        }
        m = build_synthetic_dataset(images, kinds, a.out, rng);
    } else {
        if (a.sources.empty()) throw Error(Errc::InvalidConfig, "either --sources or --procedural is required");
        m = build_synthetic_dataset(list_images(a.sources), kinds, a.out, rng);
    }
    if (a.score_from_level)
        for (auto& r : m.rows) r.score = -static_cast<double>(r.level);
    write_manifest(m, a.out / "manifest.csv");
    std::cout << m.rows.size() << " rows written to " << (a.out / "manifest.csv").string() << "\n";
    return 0;
}

int run_pretrain(const PretrainArgs& a) {
    auto cfg = load_run_config(a.config);
    if (a.seed) cfg.train.seed = *a.seed;
    const auto manifest = read_manifest(a.manifest);
    ensure_parent(a.out);
    const fs::path loss_path = a.loss_csv.empty() ? a.out.parent_path() / "loss.csv" : a.loss_csv;
    ensure_parent(loss_path);
    std::ofstream loss(loss_path, std::ios::binary);
    if (!loss) throw Error(Errc::UnwritableDestination, "cannot write " + loss_path.string());
    loss << "step,loss,mse_a,mse_b,mae_a,mae_b\n";
    std::size_t last_epoch = SIZE_MAX;
    const auto result = pretrain_run(manifest, cfg.train, cfg.model, [&](std::size_t epoch, std::size_t step, const StepReport& r) {
        loss << step << ',' << format_double(r.loss) << ',' << format_double(r.mse_a) << ',' << format_double(r.mse_b) << ','
             << format_double(r.mae_a) << ',' << format_double(r.mae_b) << '\n';
        if (!a.quiet && epoch != last_epoch && (epoch % 10 == 0 || epoch + 1 == cfg.train.epochs)) {
            std::cerr << "epoch " << epoch << " step " << step << " loss " << r.loss << "\n";
            last_epoch = epoch;
        }
    });
    loss.flush();
    save_checkpoint(result.checkpoint, a.out);
    std::cout << "steps " << result.trace.size() << " first_loss " << result.trace.front().loss << " final_loss "
              << result.trace.back().loss << "\n";
    return 0;
}

bool same_params(const Checkpoint& a, const Checkpoint& b, const std::string& skip_prefix) {
    if (a.params.size() != b.params.size()) return false;
    for (std::size_t i = 0; i < a.params.size(); ++i) {
        if (a.params[i].name.starts_with(skip_prefix)) continue;
        if (a.params[i].name != b.params[i].name || a.params[i].shape != b.params[i].shape) return false;
        if (std::memcmp(a.params[i].values.data(), b.params[i].values.data(), a.params[i].values.size() * sizeof(float)) != 0) {
            return false;
        }
    }
    return true;
}

int run_finetune(const FinetuneArgs& a) {
    auto cfg = load_run_config(a.config);
    if (a.seed) cfg.train.seed = *a.seed;
    const auto manifest = read_manifest(a.manifest);
    if (!manifest.all_labeled()) throw Error(Errc::MissingScores, "manifest " + a.manifest.string() + " has unlabeled rows");
    const auto pretrained = load_checkpoint(a.ckpt);
    const auto plan = split_by_reference(manifest, cfg.train.split_fraction, cfg.train.seed);
    const auto result = finetune_run(manifest, pretrained, cfg.train, plan.train_refs);
    ensure_parent(a.out);
    save_checkpoint(result.checkpoint, a.out);
    std::cout << "train_refs " << plan.train_refs.size() << " test_refs " << plan.test_refs.size() << " final_l1 "
              << result.trace.back() << "\n";
    if (a.verify_frozen) {
        const bool frozen = same_params(pretrained, load_checkpoint(a.out), "regressor.");
        std::cout << "frozen " << (frozen ? "ok" : "VIOLATED") << "\n";
        if (!frozen) return kExitNumeric;
    }
    return 0;
}

std::set<std::string> held_out(const DatasetManifest& m, const Checkpoint& ck) {
    auto it = ck.meta.find("split.train_refs");
    const auto train = it == ck.meta.end() ? std::set<std::string>{} : split_refs(it->second);
    std::set<std::string> test;
    for (const auto& r : m.rows)
        if (!train.count(r.reference_id)) test.insert(r.reference_id);
    if (test.empty()) throw Error(Errc::TooFewReferences, "no held-out references remain");
    return test;
}

int run_eval(const EvalArgs& a) {
    if (a.repeats == 0) throw Error(Errc::InvalidConfig, "--repeats must be at least 1");
    const auto manifest = read_manifest(a.manifest);
    if (!manifest.all_labeled()) throw Error(Errc::MissingScores, "manifest " + a.manifest.string() + " has unlabeled rows");
    const auto ck = load_checkpoint(a.ckpt);
    std::optional<RunConfig> cfg;
    if (a.fresh_splits) {
        if (a.config.empty()) throw Error(Errc::InvalidConfig, "--fresh-splits needs --config");
        cfg = load_run_config(a.config);
    }
    fs::create_directories(a.out);
    std::vector<RunRecord> runs;
    for (std::size_t r = 0; r < a.repeats; ++r) {
        const std::uint64_t seed = a.seed + r;
        EvalResult res;
        if (cfg) {
            auto train = cfg->train;
            train.seed = seed;
            const auto plan = split_by_reference(manifest, train.split_fraction, seed);
            res = evaluate_model(finetune_run(manifest, ck, train, plan.train_refs).checkpoint, manifest, plan.test_refs);
        } else {
            res = evaluate_model(ck, manifest, held_out(manifest, ck));
        }
        runs.push_back({r, seed, res.metrics});
        write_score_dump(res.scores, a.out / ("scores_" + std::to_string(r) + ".csv"));
        std::cout << "run " << r << " seed " << seed << " plcc " << res.metrics.plcc << " srocc " << res.metrics.srocc << "\n";
    }
    write_results_csv(runs, a.out / "results.csv");
    std::vector<RunMetrics> m;
    for (const auto& r : runs) m.push_back(r.metrics);
    const auto agg = aggregate_runs(m);
    std::cout << "mean plcc " << agg.mean_plcc << " srocc " << agg.mean_srocc << " std plcc " << agg.std_plcc << " srocc "
              << agg.std_srocc << "\n";
    return 0;
}

int run_reconstruct(const ReconArgs& a) {
    const auto model = model_from_checkpoint<float>(load_checkpoint(a.ckpt));
    Image original = load_image(a.original), degraded = load_image(a.degraded);
    if (!original.same_shape(degraded)) throw Error(Errc::ConfigMismatch, "original and degraded images differ in size");
    const std::size_t s = model.config.image_size;
    if (original.channels != model.config.channels || original.height < s || original.width < s) {
        throw Error(Errc::ConfigMismatch, "images do not fit the model input");
    }
    original = center_crop(original, s);
    degraded = center_crop(degraded, s);
    NoGradGuard guard;
    const auto rec = decode_reconstruct(model, assemble_cross_input(model, encode(model, degraded), original));
    fs::create_directories(a.out);
    const std::string ext = model.config.channels == 1 ? ".pgm" : ".ppm";
    save_image(original, a.out / ("original" + ext));
    save_image(rec, a.out / ("reconstruction" + ext));
    save_image(degraded, a.out / ("degraded" + ext));
    std::cout << "mse(reconstruction, degraded) " << image_mse(rec, degraded) << " mse(reconstruction, original) "
              << image_mse(rec, original) << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cross class-token IQA: synthetic pretraining and frozen-encoder quality regression"};
    app.require_subcommand(1);
    int rc = 0;

    SynthArgs sa;
    auto* synth = app.add_subcommand("synth", "Degrade source images at levels 0-5 and write manifest.csv");
    synth->add_option("--sources", sa.sources, "Directory of PPM/PGM/PNG source images");
    synth->add_option("--procedural", sa.procedural, "Generate this many seeded procedural sources instead");
    synth->add_option("--size", sa.size, "Side length of procedural sources")->capture_default_str();
    synth->add_option("--kinds", sa.kinds, "Comma-separated degradation kinds (names or tags)")->capture_default_str();
    synth->add_option("--out", sa.out, "Output directory")->required();
    synth->add_option("--seed", sa.seed, "Seed for noise fields")->capture_default_str();
    synth->add_flag("--score-from-level", sa.score_from_level, "Label every row with score = -level");
    synth->callback([&] { rc = run_synth(sa); });

    PretrainArgs pa;
    auto* pre = app.add_subcommand("pretrain", "Run the pretext reconstruction training");
    pre->add_option("--manifest", pa.manifest, "Unlabeled or labeled manifest CSV")->required();
    pre->add_option("--config", pa.config, "Run configuration file")->required();
    pre->add_option("--out", pa.out, "Checkpoint to write")->required();
    pre->add_option("--loss-csv", pa.loss_csv, "Loss trace path (default: loss.csv next to the checkpoint)");
    pre->add_option("--seed", pa.seed, "Override the config seed");
    pre->add_flag("--quiet", pa.quiet, "No per-epoch progress on stderr");
    pre->callback([&] { rc = run_pretrain(pa); });

    FinetuneArgs fa;
    auto* ft = app.add_subcommand("finetune", "Fit the linear quality head on a frozen encoder");
    ft->add_option("--manifest", fa.manifest, "Labeled manifest CSV")->required();
    ft->add_option("--ckpt", fa.ckpt, "Pretrained checkpoint")->required();
    ft->add_option("--config", fa.config, "Run configuration file")->required();
    ft->add_option("--out", fa.out, "Checkpoint to write")->required();
    ft->add_option("--seed", fa.seed, "Override the config seed (split and batches)");
    ft->add_flag("--verify-frozen", fa.verify_frozen, "Check that encoder and decoder bytes are unchanged");
    ft->callback([&] { rc = run_finetune(fa); });

    EvalArgs ea;
    auto* ev = app.add_subcommand("eval", "Score held-out references and write results.csv");
    ev->add_option("--manifest", ea.manifest, "Labeled manifest CSV")->required();
    ev->add_option("--ckpt", ea.ckpt, "Fine-tuned checkpoint, or pretrained with --fresh-splits")->required();
    ev->add_option("--repeats", ea.repeats, "Number of runs")->capture_default_str();
    ev->add_option("--seed", ea.seed, "Seed of the first run; run r uses seed + r")->capture_default_str();
    ev->add_flag("--fresh-splits", ea.fresh_splits, "Draw a new split and refit the head for every run");
    ev->add_option("--config", ea.config, "Run configuration (needed with --fresh-splits)");
    ev->add_option("--out", ea.out, "Directory for results.csv and score dumps")->capture_default_str();
    ev->callback([&] { rc = run_eval(ea); });

    ReconArgs ra;
    auto* rec = app.add_subcommand("reconstruct", "Write original, reconstruction and degraded images side by side");
    rec->add_option("--ckpt", ra.ckpt, "Checkpoint")->required();
    rec->add_option("--original", ra.original, "Pristine image")->required();
    rec->add_option("--degraded", ra.degraded, "Degraded image of the same size")->required();
    rec->add_option("--out", ra.out, "Output directory")->required();
    rec->callback([&] { rc = run_reconstruct(ra); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code(e.code());
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    }
    return rc;
}
