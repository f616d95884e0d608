#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "xiqa/adamw.hpp"
#include "xiqa/checkpoint.hpp"
#include "xiqa/image.hpp"
#include "xiqa/manifest.hpp"
#include "xiqa/parallel.hpp"
#include "xiqa/vit.hpp"

namespace xiqa {

struct TrainConfig {
    // pretext
    std::size_t batch_size = 16;
    double base_lr = 1e-4; // learning rate = base_lr * batch_size / 256
    std::size_t epochs = 50;
    std::uint64_t seed = 0;
    std::size_t crop_size = 32;
    double flip_prob = 0.5;
    double weight_decay = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t warmup_steps = 0; // linear ramp; 0 keeps the rate constant

    // regression head
    std::size_t finetune_epochs = 30;
    std::size_t finetune_batch_size = 16;
    double finetune_base_lr = 1e-4;
    double split_fraction = 0.8;

    double learning_rate() const { return base_lr * static_cast<double>(batch_size) / 256.0; }
    double finetune_learning_rate() const { return finetune_base_lr * static_cast<double>(finetune_batch_size) / 256.0; }

    AdamWOptions adamw(double lr) const { return {lr, beta1, beta2, eps, weight_decay}; }

    void validate() const {
        if (batch_size == 0 || finetune_batch_size == 0) throw Error(Errc::InvalidConfig, "batch sizes must be >= 1");
        if (!(learning_rate() > 0.0) || !(finetune_learning_rate() > 0.0)) throw Error(Errc::InvalidConfig, "learning rates must be > 0");
        if (flip_prob < 0.0 || flip_prob > 1.0) throw Error(Errc::InvalidConfig, "flip_prob must lie in [0,1]");
        if (crop_size == 0) throw Error(Errc::InvalidConfig, "crop_size must be positive");
    }
};

struct StepReport {
    double loss = 0.0;
    double mse_a = 0.0;
    double mse_b = 0.0;
    double mae_a = 0.0;
    double mae_b = 0.0;
};

template <class T>
struct PretextPass {
    Tensor<T> mse_a, mse_b;       // traced reconstruction losses
    Tensor<T> rec_a, rec_b;       // reconstructed patches
    Tensor<T> target_a, target_b; // degraded patches
    Tensor<T> total() const { return add(mse_a, mse_b); }
};

/// Both degraded images go through the one shared encoder; each class token
/// is joined with the decoder projection of the pristine original and the
/// decoder reconstructs the degraded image.
template <class T>
PretextPass<T> pretext_forward(const CrossIqaModel<T>& m, const Image& original, const Image& deg_a, const Image& deg_b) {
    if (deg_a.reference_id != original.reference_id || deg_b.reference_id != original.reference_id) {
        throw Error(Errc::ContentMismatch, "degraded images must share the original's reference id '" + original.reference_id + "'");
    }
    if (!deg_a.same_shape(original) || !deg_b.same_shape(original)) {
        throw Error(Errc::ShapeMismatch, "original and degraded images differ in shape");
    }
    const std::size_t P = m.config.patch_size;
    const Tensor<T> content = patchify<T>(original, P);
    PretextPass<T> pass;
    pass.target_a = patchify<T>(deg_a, P);
    pass.target_b = patchify<T>(deg_b, P);
    const auto enc_a = encode_patches(m, pass.target_a);
    const auto enc_b = encode_patches(m, pass.target_b);
    const bool swap = m.config.wiring == CrossWiring::Swap;
    const Tensor<T>& token_for_a = swap ? enc_b.class_token : enc_a.class_token;
    const Tensor<T>& token_for_b = swap ? enc_a.class_token : enc_b.class_token;
    pass.rec_a = decode_patches(m, assemble_cross_input_patches(m, token_for_a, content));
    pass.rec_b = decode_patches(m, assemble_cross_input_patches(m, token_for_b, content));
    pass.mse_a = mse_loss(pass.rec_a, pass.target_a);
    pass.mse_b = mse_loss(pass.rec_b, pass.target_b);
    return pass;
}

struct Triple {
    Image original;
    Image deg_a;
    Image deg_b;
};

/// One optimizer step on the mean pretext loss of a batch of triples.
/// MAE values are monitored only.
template <class T>
StepReport pretrain_batch(CrossIqaModel<T>& model, AdamW<T>& opt, std::span<const Triple> batch) {
    if (batch.empty()) throw Error(Errc::InvalidConfig, "empty pretext batch");
    opt.zero_grad();
    StepReport rep;
    const T weight = T(1) / static_cast<T>(batch.size());
    for (const auto& t : batch) {
        const auto pass = pretext_forward(model, t.original, t.deg_a, t.deg_b);
        scale(pass.total(), weight).backward();
        rep.mse_a += pass.mse_a.item();
        rep.mse_b += pass.mse_b.item();
        rep.mae_a += mae_metric(pass.rec_a, pass.target_a);
        rep.mae_b += mae_metric(pass.rec_b, pass.target_b);
    }
    const double n = static_cast<double>(batch.size());
    rep.mse_a /= n;
    rep.mse_b /= n;
    rep.mae_a /= n;
    rep.mae_b /= n;
    rep.loss = rep.mse_a + rep.mse_b;
    if (!std::isfinite(rep.loss)) throw Error(Errc::NonFiniteValue, "pretext loss is not finite");
    opt.step();
    return rep;
}

template <class T>
StepReport pretrain_step(CrossIqaModel<T>& model, AdamW<T>& opt, const Image& original, const Image& deg_a,
                         const Image& deg_b) {
    const Triple t{original, deg_a, deg_b};
    return pretrain_batch(model, opt, std::span<const Triple>(&t, 1));
}

/// Loads each distinct path once.
class ImageCache {
public:
    explicit ImageCache(const DatasetManifest& m) : manifest_(m) {}

    const Image& get(std::size_t row) {
        const auto path = manifest_.resolve(manifest_.rows[row]).string();
        auto it = cache_.find(path);
        if (it == cache_.end()) {
            Image img = load_image(path);
            img.reference_id = manifest_.rows[row].reference_id;
            it = cache_.emplace(path, std::move(img)).first;
        }
        return it->second;
    }

private:
    const DatasetManifest& manifest_;
    std::map<std::string, Image> cache_;
};

struct PretextGroup {
    std::string reference_id;
    std::size_t original_row = 0;
    std::vector<std::size_t> degraded_rows;
};

/// Per reference id: the level-0 row and the distinct degraded variants.
inline std::vector<PretextGroup> pretext_groups(const DatasetManifest& manifest) {
    std::vector<PretextGroup> out;
    for (const auto& [ref, rows] : manifest.groups()) {
        PretextGroup g;
        g.reference_id = ref;
        bool have_original = false;
        std::set<std::string> seen;
        for (std::size_t r : rows) {
            const auto& row = manifest.rows[r];
            if (row.level == 0 && !have_original) {
                g.original_row = r;
                have_original = true;
            }
            if (seen.insert(row.path).second) g.degraded_rows.push_back(r);
        }
        if (!have_original) throw Error(Errc::InsufficientVariants, "reference '" + ref + "' has no level-0 original");
        if (g.degraded_rows.size() < 2) {
            throw Error(Errc::InsufficientVariants, "reference '" + ref + "' has fewer than two degraded variants");
        }
        out.push_back(std::move(g));
    }
    if (out.empty()) throw Error(Errc::InsufficientVariants, "manifest is empty");
    return out;
}

inline std::string rng_state_text(const std::mt19937_64& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

inline std::string join_refs(const std::set<std::string>& refs) {
    std::string out;
    for (const auto& r : refs) {
        if (!out.empty()) out += '\n';
        out += r;
    }
    return out;
}

inline std::set<std::string> split_refs(const std::string& text) {
    std::set<std::string> out;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line))
        if (!line.empty()) out.insert(line);
    return out;
}

struct PretrainResult {
    Checkpoint checkpoint;
    std::vector<StepReport> trace;
};

using StepCallback = std::function<void(std::size_t epoch, std::size_t step, const StepReport&)>;

/// Pretext training over the reference groups of an unlabeled manifest.
/// Every epoch shuffles the groups, draws two distinct degraded variants per
/// group and one crop/flip shared by the whole triple.
inline PretrainResult pretrain_run(const DatasetManifest& manifest, const TrainConfig& cfg, const ModelConfig& model_cfg,
                                   const StepCallback& on_step = {}) {
    cfg.validate();
    model_cfg.validate();
    if (cfg.crop_size != model_cfg.image_size) {
        throw Error(Errc::ConfigMismatch, "crop_size must equal the model image_size");
    }
    const auto groups = pretext_groups(manifest);
    ImageCache cache(manifest);

    auto model = init_params<float>(model_cfg, cfg.seed);
    AdamW<float> opt(model.pretext_parameters(), cfg.adamw(cfg.learning_rate()));
    std::seed_seq seq{cfg.seed, std::uint64_t{1}};
    std::mt19937_64 rng(seq);

    PretrainResult result;
    std::vector<Triple> batch;
    std::size_t step = 0;
    auto flush = [&](std::size_t epoch) {
        if (batch.empty()) return;
        if (cfg.warmup_steps > 0) {
            const double ramp = std::min(1.0, static_cast<double>(step + 1) / static_cast<double>(cfg.warmup_steps));
            opt.set_learning_rate(cfg.learning_rate() * ramp);
        }
        const StepReport rep = pretrain_batch(model, opt, std::span<const Triple>(batch));
        result.trace.push_back(rep);
        if (on_step) on_step(epoch, step, rep);
        ++step;
        batch.clear();
    };

    std::vector<std::size_t> order(groups.size());
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t gi : order) {
            const auto& g = groups[gi];
            const std::size_t nv = g.degraded_rows.size();
            std::uniform_int_distribution<std::size_t> pick(0, nv - 1);
            const std::size_t a = pick(rng);
            std::size_t b = std::uniform_int_distribution<std::size_t>(0, nv - 2)(rng);
            if (b >= a) ++b;
            const Image& orig = cache.get(g.original_row);
            const Image& da = cache.get(g.degraded_rows[a]);
            const Image& db = cache.get(g.degraded_rows[b]);
            if (!da.same_shape(orig) || !db.same_shape(orig)) {
                throw Error(Errc::ShapeMismatch, "variants of '" + g.reference_id + "' differ in shape");
            }
            if (orig.channels != model_cfg.channels) throw Error(Errc::ConfigMismatch, "image channels differ from the model");
            const CropFlip geo = sample_crop_flip(orig.height, orig.width, cfg.crop_size, cfg.flip_prob, rng);
            batch.push_back({geo.apply(orig), geo.apply(da), geo.apply(db)});
            if (batch.size() == cfg.batch_size) flush(epoch);
        }
        flush(epoch);
    }

    Checkpoint ck = make_checkpoint(model);
    ck.optim = to_record(opt.state());
    ck.rng_state = rng_state_text(rng);
    ck.epoch = static_cast<std::uint32_t>(cfg.epochs);
    for (const auto& r : result.trace) ck.loss_history.push_back(r.loss);
    ck.meta["pretrain.seed"] = std::to_string(cfg.seed);
    ck.meta["pretrain.batch_size"] = std::to_string(cfg.batch_size);
    ck.meta["pretrain.learning_rate"] = format_double(cfg.learning_rate());
    ck.meta["pretrain.weight_decay"] = format_double(cfg.weight_decay);
    ck.meta["pretrain.steps"] = std::to_string(step);
    result.checkpoint = std::move(ck);
    return result;
}

/// Class-token features (rows of embed_dim values) for a list of images,
/// computed without recording a trace.
inline std::vector<float> class_token_features(const CrossIqaModel<float>& model, const std::vector<Image>& images) {
    const std::size_t d = model.config.embed_dim;
    std::vector<float> feats(images.size() * d);
    parallel_for(images.size(), [&](std::size_t i) {
        NoGradGuard guard;
        const auto out = encode(model, images[i]);
        std::copy(out.class_token.values().begin(), out.class_token.values().end(), feats.begin() + static_cast<std::ptrdiff_t>(i * d));
    });
    return feats;
}

struct FinetuneResult {
    Checkpoint checkpoint;
    std::vector<double> trace; // L1 loss per optimizer step
};

/// Trains only the linear regressor on frozen class-token features with an
/// L1 loss on z-normalized scores. Rows whose reference is not in
/// `train_refs` are ignored (an empty set uses every row).
inline FinetuneResult finetune_run(const DatasetManifest& labeled, const Checkpoint& pretrained, const TrainConfig& cfg,
                                   const std::set<std::string>& train_refs = {}, const StepCallback& on_step = {}) {
    cfg.validate();
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < labeled.rows.size(); ++i) {
        const auto& r = labeled.rows[i];
        if (!train_refs.empty() && !train_refs.count(r.reference_id)) continue;
        if (!r.score) throw Error(Errc::MissingScores, "row " + r.path + " has no quality score");
        rows.push_back(i);
    }
    if (rows.empty()) throw Error(Errc::MissingScores, "no labeled rows to fine-tune on");
    if (pretrained.config.image_size != cfg.crop_size) {
        throw Error(Errc::IncompatibleConfig, "checkpoint image_size differs from crop_size");
    }

    auto model = model_from_checkpoint<float>(pretrained);
    AdamW<float> opt(model.regressor_parameters(), cfg.adamw(cfg.finetune_learning_rate()));

    double mean = 0.0;
    for (auto i : rows) mean += *labeled.rows[i].score;
    mean /= static_cast<double>(rows.size());
    double var = 0.0;
    for (auto i : rows) var += (*labeled.rows[i].score - mean) * (*labeled.rows[i].score - mean);
    double sd = std::sqrt(var / static_cast<double>(rows.size()));
    if (!(sd > 1e-12)) sd = 1.0;

    ImageCache cache(labeled);
    for (auto i : rows) {
        const Image& img = cache.get(i);
        if (img.channels != model.config.channels) throw Error(Errc::IncompatibleConfig, "image channels differ from the model");
    }
    std::seed_seq seq{cfg.seed, std::uint64_t{2}};
    std::mt19937_64 rng(seq);
    const std::size_t d = model.config.embed_dim;

    FinetuneResult result;
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.finetune_epochs; ++epoch) {
        std::shuffle(rows.begin(), rows.end(), rng);
        for (std::size_t start = 0; start < rows.size(); start += cfg.finetune_batch_size) {
            const std::size_t stop = std::min(rows.size(), start + cfg.finetune_batch_size);
            std::vector<Image> crops;
            std::vector<float> targets;
            for (std::size_t k = start; k < stop; ++k) {
                const Image& img = cache.get(rows[k]);
                const CropFlip geo = sample_crop_flip(img.height, img.width, cfg.crop_size, cfg.flip_prob, rng);
                crops.push_back(geo.apply(img));
                targets.push_back(static_cast<float>((*labeled.rows[rows[k]].score - mean) / sd));
            }
            const std::size_t b = crops.size();
            const Tensor<float> feats({b, d}, class_token_features(model, crops));
            const Tensor<float> target({b, 1}, std::move(targets));
            opt.zero_grad();
            const Tensor<float> loss = l1_loss(regress_score(feats, model.reg_w, model.reg_b), target);
            loss.backward();
            opt.step();
            result.trace.push_back(loss.item());
            if (on_step) on_step(epoch, step, StepReport{loss.item(), 0, 0, 0, 0});
            ++step;
        }
    }

    Checkpoint ck = make_checkpoint(model);
    ck.optim = to_record(opt.state());
    ck.rng_state = rng_state_text(rng);
    ck.epoch = pretrained.epoch;
    ck.loss_history = pretrained.loss_history;
    ck.meta = pretrained.meta;
    ck.meta["score.mean"] = format_double(mean);
    ck.meta["score.std"] = format_double(sd);
    ck.meta["finetune.seed"] = std::to_string(cfg.seed);
    ck.meta["finetune.epochs"] = std::to_string(cfg.finetune_epochs);
    ck.meta["finetune.learning_rate"] = format_double(cfg.finetune_learning_rate());
    ck.meta["split.train_refs"] = join_refs(train_refs);
    result.checkpoint = std::move(ck);
    return result;
}

} // namespace xiqa
