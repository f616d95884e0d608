#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "xiqa/image.hpp"
#include "xiqa/ops.hpp"

namespace xiqa {

/// Which class token conditions each reconstruction.
///  Transfer: the token of degraded image i drives the reconstruction of image i.
///  Swap: the token of the other branch drives it.
enum class CrossWiring { Transfer, Swap };

inline std::string_view wiring_name(CrossWiring w) { return w == CrossWiring::Transfer ? "transfer" : "swap"; }

inline CrossWiring parse_wiring(std::string_view s) {
    if (s == "transfer") return CrossWiring::Transfer;
    if (s == "swap") return CrossWiring::Swap;
    throw Error(Errc::InvalidConfig, "cross_wiring must be 'transfer' or 'swap', got '" + std::string(s) + "'");
}

struct ModelConfig {
    std::size_t image_size = 32;
    std::size_t patch_size = 8;
    std::size_t channels = 3;
    std::size_t embed_dim = 64;
    std::size_t num_heads = 4;
    std::size_t encoder_depth = 4;
    std::size_t decoder_depth = 2;
    double mlp_ratio = 4.0;
    CrossWiring wiring = CrossWiring::Transfer;

    static ModelConfig desk() { return {}; }

    static ModelConfig full() {
        ModelConfig c;
        c.image_size = 224;
        c.patch_size = 16;
        c.embed_dim = 768;
        c.num_heads = 12;
        c.encoder_depth = 12;
        c.decoder_depth = 8;
        return c;
    }

    std::size_t grid() const { return image_size / patch_size; }
    std::size_t num_patches() const { return grid() * grid(); }
    std::size_t patch_dim() const { return patch_size * patch_size * channels; }
    std::size_t head_dim() const { return embed_dim / num_heads; }
    std::size_t mlp_hidden() const { return static_cast<std::size_t>(std::lround(mlp_ratio * embed_dim)); }

    void validate() const {
        if (patch_size == 0 || image_size == 0 || image_size % patch_size != 0) {
            throw Error(Errc::IndivisibleDimensions, "image_size must be a positive multiple of patch_size");
        }
        if (num_heads == 0 || embed_dim == 0 || embed_dim % num_heads != 0) {
            throw Error(Errc::ConfigMismatch, "embed_dim must be a positive multiple of num_heads");
        }
        if (channels != 1 && channels != 3) throw Error(Errc::ConfigMismatch, "channels must be 1 or 3");
        if (encoder_depth == 0) throw Error(Errc::ConfigMismatch, "encoder_depth must be positive");
        if (!(mlp_ratio > 0.0) || mlp_hidden() == 0) throw Error(Errc::ConfigMismatch, "mlp_ratio must be positive");
    }

    bool operator==(const ModelConfig&) const = default;
};

/// Splits an image into non-overlapping P x P patches in row-major patch
/// order; each patch vector is laid out (row, column, channel).
template <class T>
Tensor<T> patchify(const Image& img, std::size_t patch) {
    if (patch == 0 || img.height % patch != 0 || img.width % patch != 0) {
        throw Error(Errc::IndivisibleDimensions, std::to_string(img.height) + "x" + std::to_string(img.width) +
                                                     " is not divisible by patch size " + std::to_string(patch));
    }
    const std::size_t gh = img.height / patch, gw = img.width / patch;
    const std::size_t pd = patch * patch * img.channels;
    std::vector<T> out(gh * gw * pd);
    std::size_t k = 0;
    for (std::size_t py = 0; py < gh; ++py)
        for (std::size_t px = 0; px < gw; ++px)
            for (std::size_t r = 0; r < patch; ++r)
                for (std::size_t c = 0; c < patch; ++c)
                    for (std::size_t ch = 0; ch < img.channels; ++ch)
                        out[k++] = static_cast<T>(img.at(py * patch + r, px * patch + c, ch));
    return Tensor<T>(Shape{gh * gw, pd}, std::move(out));
}

/// Inverse of patchify. Values are copied as-is (no clamping).
template <class T>
Image unpatchify(const Tensor<T>& patches, std::size_t height, std::size_t width, std::size_t channels,
                 std::size_t patch) {
    if (patch == 0 || height % patch != 0 || width % patch != 0) {
        throw Error(Errc::IndivisibleDimensions, "unpatchify dimensions not divisible by patch size");
    }
    const std::size_t gh = height / patch, gw = width / patch;
    if (patches.shape() != Shape{gh * gw, patch * patch * channels}) {
        throw Error(Errc::ShapeMismatch, "unpatchify got " + shape_str(patches.shape()));
    }
    Image img(height, width, channels);
    const auto v = patches.values();
    std::size_t k = 0;
    for (std::size_t py = 0; py < gh; ++py)
        for (std::size_t px = 0; px < gw; ++px)
            for (std::size_t r = 0; r < patch; ++r)
                for (std::size_t c = 0; c < patch; ++c)
                    for (std::size_t ch = 0; ch < channels; ++ch)
                        img.at(py * patch + r, px * patch + c, ch) = static_cast<double>(v[k++]);
    return img;
}

template <class T>
struct BlockWeights {
    Tensor<T> norm1_gain, norm1_bias;
    Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor<T> norm2_gain, norm2_bias;
    Tensor<T> fc1_w, fc1_b, fc2_w, fc2_b;

    template <class F>
    void for_each(const std::string& prefix, F&& f) {
        f(prefix + ".norm1.gain", norm1_gain);
        f(prefix + ".norm1.bias", norm1_bias);
        f(prefix + ".attn.wq", wq);
        f(prefix + ".attn.bq", bq);
        f(prefix + ".attn.wk", wk);
        f(prefix + ".attn.bk", bk);
        f(prefix + ".attn.wv", wv);
        f(prefix + ".attn.bv", bv);
        f(prefix + ".attn.wo", wo);
        f(prefix + ".attn.bo", bo);
        f(prefix + ".norm2.gain", norm2_gain);
        f(prefix + ".norm2.bias", norm2_bias);
        f(prefix + ".mlp.fc1.weight", fc1_w);
        f(prefix + ".mlp.fc1.bias", fc1_b);
        f(prefix + ".mlp.fc2.weight", fc2_w);
        f(prefix + ".mlp.fc2.bias", fc2_b);
    }
};

/// All trainable state: one shared encoder (both branches use it), the
/// reconstruction decoder, and the linear quality regressor.
template <class T>
struct CrossIqaModel {
    ModelConfig config;

    Tensor<T> enc_patch_w, enc_patch_b, cls_token, enc_pos;
    std::vector<BlockWeights<T>> enc_blocks;
    Tensor<T> enc_norm_gain, enc_norm_bias;

    Tensor<T> dec_patch_w, dec_patch_b, dec_pos;
    std::vector<BlockWeights<T>> dec_blocks;
    Tensor<T> dec_norm_gain, dec_norm_bias;
    Tensor<T> recon_w, recon_b;

    Tensor<T> reg_w, reg_b;

    enum class Part { Encoder, Decoder, Regressor };

    template <class F>
    void for_each_param(F&& f) {
        for_each_in(Part::Encoder, f);
        for_each_in(Part::Decoder, f);
        for_each_in(Part::Regressor, f);
    }

    template <class F>
    void for_each_in(Part part, F&& f) {
        switch (part) {
        case Part::Encoder:
            f(std::string("encoder.patch_embed.weight"), enc_patch_w);
            f(std::string("encoder.patch_embed.bias"), enc_patch_b);
            f(std::string("encoder.cls_token"), cls_token);
            f(std::string("encoder.pos_embed"), enc_pos);
            for (std::size_t i = 0; i < enc_blocks.size(); ++i) enc_blocks[i].for_each("encoder.block" + std::to_string(i), f);
            f(std::string("encoder.norm.gain"), enc_norm_gain);
            f(std::string("encoder.norm.bias"), enc_norm_bias);
            break;
        case Part::Decoder:
            f(std::string("decoder.patch_embed.weight"), dec_patch_w);
            f(std::string("decoder.patch_embed.bias"), dec_patch_b);
            f(std::string("decoder.pos_embed"), dec_pos);
            for (std::size_t i = 0; i < dec_blocks.size(); ++i) dec_blocks[i].for_each("decoder.block" + std::to_string(i), f);
            f(std::string("decoder.norm.gain"), dec_norm_gain);
            f(std::string("decoder.norm.bias"), dec_norm_bias);
            f(std::string("decoder.head.weight"), recon_w);
            f(std::string("decoder.head.bias"), recon_b);
            break;
        case Part::Regressor:
            f(std::string("regressor.weight"), reg_w);
            f(std::string("regressor.bias"), reg_b);
            break;
        }
    }

    std::vector<NamedParam<T>> parameters(std::initializer_list<Part> parts) {
        std::vector<NamedParam<T>> out;
        for (auto part : parts) for_each_in(part, [&](const std::string& n, Tensor<T>& t) { out.push_back({n, t}); });
        return out;
    }

    std::vector<NamedParam<T>> named_parameters() { return parameters({Part::Encoder, Part::Decoder, Part::Regressor}); }
    std::vector<NamedParam<T>> pretext_parameters() { return parameters({Part::Encoder, Part::Decoder}); }
    std::vector<NamedParam<T>> regressor_parameters() { return parameters({Part::Regressor}); }

    std::size_t parameter_count() {
        std::size_t n = 0;
        for_each_param([&](const std::string&, Tensor<T>& t) { n += t.numel(); });
        return n;
    }

    void zero_grad() {
        for_each_param([](const std::string&, Tensor<T>& t) { t.zero_grad(); });
    }

    void set_requires_grad(bool flag) {
        for_each_param([flag](const std::string&, Tensor<T>& t) { t.set_requires_grad(flag); });
    }
};

namespace detail {

template <class T, class Rng>
Tensor<T> trunc_normal(Shape shape, double std_dev, Rng& rng) {
    std::normal_distribution<double> normal(0.0, std_dev);
    std::vector<T> v(shape_numel(shape));
    for (auto& x : v) {
        double s;
        do {
            s = normal(rng);
        } while (std::abs(s) > 2.0 * std_dev);
        x = static_cast<T>(s);
    }
    return Tensor<T>(std::move(shape), std::move(v), true);
}

template <class T, class Rng>
Tensor<T> xavier_uniform(Shape shape, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
    std::uniform_real_distribution<double> u(-limit, limit);
    std::vector<T> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<T>(u(rng));
    return Tensor<T>(std::move(shape), std::move(v), true);
}

template <class T, class Rng>
Tensor<T> normal_init(Shape shape, double std_dev, Rng& rng) {
    std::normal_distribution<double> normal(0.0, std_dev);
    std::vector<T> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<T>(normal(rng));
    return Tensor<T>(std::move(shape), std::move(v), true);
}

template <class T, class Rng>
BlockWeights<T> init_block(const ModelConfig& cfg, Rng& rng) {
    const std::size_t d = cfg.embed_dim, h = cfg.mlp_hidden();
    BlockWeights<T> b;
    b.norm1_gain = Tensor<T>::full({d}, T(1), true);
    b.norm1_bias = Tensor<T>::zeros({d}, true);
    b.wq = trunc_normal<T>({d, d}, 0.02, rng);
    b.bq = Tensor<T>::zeros({d}, true);
    b.wk = trunc_normal<T>({d, d}, 0.02, rng);
    b.bk = Tensor<T>::zeros({d}, true);
    b.wv = trunc_normal<T>({d, d}, 0.02, rng);
    b.bv = Tensor<T>::zeros({d}, true);
    b.wo = trunc_normal<T>({d, d}, 0.02, rng);
    b.bo = Tensor<T>::zeros({d}, true);
    b.norm2_gain = Tensor<T>::full({d}, T(1), true);
    b.norm2_bias = Tensor<T>::zeros({d}, true);
    b.fc1_w = trunc_normal<T>({d, h}, 0.02, rng);
    b.fc1_b = Tensor<T>::zeros({h}, true);
    b.fc2_w = trunc_normal<T>({h, d}, 0.02, rng);
    b.fc2_b = Tensor<T>::zeros({d}, true);
    return b;
}

} // namespace detail

/// Fresh parameters: linear weights ~ truncated normal(0, 0.02), biases 0
/// except the reconstruction head (0.5), layer-norm gains 1, class token and
/// positional tables ~ normal(0, 0.02).
template <class T>
CrossIqaModel<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    const std::size_t d = cfg.embed_dim, pd = cfg.patch_dim(), seq = cfg.num_patches() + 1;
    CrossIqaModel<T> m;
    m.config = cfg;
    m.enc_patch_w = detail::trunc_normal<T>({pd, d}, 0.02, rng);
    m.enc_patch_b = Tensor<T>::zeros({d}, true);
    m.cls_token = detail::normal_init<T>({1, d}, 0.02, rng);
    m.enc_pos = detail::normal_init<T>({seq, d}, 0.02, rng);
    for (std::size_t i = 0; i < cfg.encoder_depth; ++i) m.enc_blocks.push_back(detail::init_block<T>(cfg, rng));
    m.enc_norm_gain = Tensor<T>::full({d}, T(1), true);
    m.enc_norm_bias = Tensor<T>::zeros({d}, true);

    m.dec_patch_w = detail::trunc_normal<T>({pd, d}, 0.02, rng);
    m.dec_patch_b = Tensor<T>::zeros({d}, true);
    m.dec_pos = detail::normal_init<T>({seq, d}, 0.02, rng);
    for (std::size_t i = 0; i < cfg.decoder_depth; ++i) m.dec_blocks.push_back(detail::init_block<T>(cfg, rng));
    m.dec_norm_gain = Tensor<T>::full({d}, T(1), true);
    m.dec_norm_bias = Tensor<T>::zeros({d}, true);
    m.recon_w = detail::trunc_normal<T>({d, pd}, 0.02, rng);
    m.recon_b = Tensor<T>::full({pd}, T(0.5), true);

    m.reg_w = detail::trunc_normal<T>({d, 1}, 0.02, rng);
    m.reg_b = Tensor<T>::zeros({1}, true);
    return m;
}

/// Deep copy in another precision; the copy owns fresh leaves.
template <class To, class From>
CrossIqaModel<To> cast_model(CrossIqaModel<From>& src) {
    CrossIqaModel<To> dst = init_params<To>(src.config, 0);
    std::vector<Tensor<From>> values;
    src.for_each_param([&](const std::string&, Tensor<From>& t) { values.push_back(t); });
    std::size_t i = 0;
    dst.for_each_param([&](const std::string&, Tensor<To>& t) {
        t = cast<To>(values[i], values[i].requires_grad());
        ++i;
    });
    return dst;
}

template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    return add(matmul(x, w), b);
}

/// [class_token; patches * W + b] + pos, row by row.
template <class T>
Tensor<T> embed(const Tensor<T>& patches, const Tensor<T>& proj_w, const Tensor<T>& proj_b, const Tensor<T>& pos,
                const Tensor<T>& class_token) {
    if (pos.ndim() != 2 || pos.dim(0) != patches.dim(0) + 1) {
        throw Error(Errc::ShapeMismatch, "positional table " + shape_str(pos.shape()) + " for " +
                                             std::to_string(patches.dim(0)) + " patches");
    }
    return add(concat_rows(class_token, linear(patches, proj_w, proj_b)), pos);
}

/// Multi-head self-attention over an L x d sequence. When `probs` is given,
/// the per-head attention probabilities [heads, L, L] are appended to it.
template <class T>
Tensor<T> self_attention(const Tensor<T>& x, const BlockWeights<T>& w, std::size_t heads,
                         std::vector<Tensor<T>>* probs = nullptr) {
    const std::size_t L = x.dim(0), d = x.dim(1);
    if (d % heads != 0) throw Error(Errc::ShapeMismatch, "embed dim not divisible by head count");
    const std::size_t dh = d / heads;
    auto split = [&](const Tensor<T>& t) { return transpose(reshape(t, {L, heads, dh}), 0, 1); };
    const Tensor<T> q = split(linear(x, w.wq, w.bq));
    const Tensor<T> k = split(linear(x, w.wk, w.bk));
    const Tensor<T> v = split(linear(x, w.wv, w.bv));
    const T s = T(1) / std::sqrt(static_cast<T>(dh));
    const Tensor<T> p = softmax(scale(matmul(q, transpose(k, 1, 2)), s), 2);
    if (probs) probs->push_back(p);
    const Tensor<T> o = reshape(transpose(matmul(p, v), 0, 1), {L, d});
    return linear(o, w.wo, w.bo);
}

/// Pre-norm transformer block: x + MHSA(LN(x)), then + MLP(LN(.)).
template <class T>
Tensor<T> transformer_block(const Tensor<T>& x, const BlockWeights<T>& w, std::size_t heads,
                            std::vector<Tensor<T>>* probs = nullptr) {
    if (x.ndim() != 2 || x.dim(1) != w.norm1_gain.numel()) {
        throw Error(Errc::ShapeMismatch, "transformer_block input " + shape_str(x.shape()));
    }
    const Tensor<T> h = add(x, self_attention(layer_norm(x, w.norm1_gain, w.norm1_bias), w, heads, probs));
    const Tensor<T> m = linear(gelu(linear(layer_norm(h, w.norm2_gain, w.norm2_bias), w.fc1_w, w.fc1_b)), w.fc2_w, w.fc2_b);
    return add(h, m);
}

template <class T>
struct EncoderOutput {
    Tensor<T> class_token;  // [1, d]
    Tensor<T> patch_tokens; // [N, d]
};

template <class T>
void check_input(const ModelConfig& cfg, const Tensor<T>& patches) {
    if (patches.shape() != Shape{cfg.num_patches(), cfg.patch_dim()}) {
        throw Error(Errc::ConfigMismatch, "patch tensor " + shape_str(patches.shape()) + " does not match the model (" +
                                              std::to_string(cfg.num_patches()) + " x " + std::to_string(cfg.patch_dim()) + ")");
    }
}

template <class T>
EncoderOutput<T> encode_patches(const CrossIqaModel<T>& m, const Tensor<T>& patches,
                                std::vector<Tensor<T>>* probs = nullptr) {
    check_input(m.config, patches);
    Tensor<T> x = embed(patches, m.enc_patch_w, m.enc_patch_b, m.enc_pos, m.cls_token);
    for (const auto& blk : m.enc_blocks) x = transformer_block(x, blk, m.config.num_heads, probs);
    x = layer_norm(x, m.enc_norm_gain, m.enc_norm_bias);
    const std::size_t L = x.dim(0);
    return {slice_rows(x, 0, 1), slice_rows(x, 1, L)};
}

template <class T>
EncoderOutput<T> encode(const CrossIqaModel<T>& m, const Image& img, std::vector<Tensor<T>>* probs = nullptr) {
    if (img.height != m.config.image_size || img.width != m.config.image_size || img.channels != m.config.channels) {
        throw Error(Errc::ConfigMismatch, "image " + std::to_string(img.height) + "x" + std::to_string(img.width) + "x" +
                                              std::to_string(img.channels) + " does not match model input");
    }
    return encode_patches(m, patchify<T>(img, m.config.patch_size), probs);
}

template <class T>
struct CrossDecoderInput {
    Tensor<T> quality_token;  // [1, d], from an encoder pass over a degraded image
    Tensor<T> content_tokens; // [N, d], decoder projection of the pristine patches
    Tensor<T> sequence;       // [N+1, d] = [quality; content] + decoder positions
};

template <class T>
CrossDecoderInput<T> assemble_cross_input_patches(const CrossIqaModel<T>& m, const Tensor<T>& quality_token,
                                                  const Tensor<T>& original_patches) {
    check_input(m.config, original_patches);
    if (quality_token.shape() != Shape{1, m.config.embed_dim}) {
        throw Error(Errc::ShapeMismatch, "quality token " + shape_str(quality_token.shape()));
    }
    CrossDecoderInput<T> in;
    in.quality_token = quality_token;
    in.content_tokens = linear(original_patches, m.dec_patch_w, m.dec_patch_b);
    in.sequence = add(concat_rows(quality_token, in.content_tokens), m.dec_pos);
    return in;
}

template <class T>
CrossDecoderInput<T> assemble_cross_input(const CrossIqaModel<T>& m, const EncoderOutput<T>& degraded,
                                          const Image& original) {
    return assemble_cross_input_patches(m, degraded.class_token, patchify<T>(original, m.config.patch_size));
}

/// Reconstructed patches [N, patch_dim], unclamped; the class-token position is dropped.
template <class T>
Tensor<T> decode_patches(const CrossIqaModel<T>& m, const CrossDecoderInput<T>& in,
                         std::vector<Tensor<T>>* probs = nullptr) {
    if (in.sequence.shape() != Shape{m.config.num_patches() + 1, m.config.embed_dim}) {
        throw Error(Errc::ConfigMismatch, "decoder sequence " + shape_str(in.sequence.shape()));
    }
    Tensor<T> x = in.sequence;
    for (const auto& blk : m.dec_blocks) x = transformer_block(x, blk, m.config.num_heads, probs);
    x = layer_norm(x, m.dec_norm_gain, m.dec_norm_bias);
    return linear(slice_rows(x, 1, x.dim(0)), m.recon_w, m.recon_b);
}

/// Materializes the reconstruction as an image clamped to [0,1].
template <class T>
Image decode_reconstruct(const CrossIqaModel<T>& m, const CrossDecoderInput<T>& in, std::string reference_id = {}) {
    const auto& c = m.config;
    Image img = unpatchify(decode_patches(m, in), c.image_size, c.image_size, c.channels, c.patch_size);
    for (auto& v : img.data) v = std::clamp(v, 0.0, 1.0);
    img.reference_id = std::move(reference_id);
    return img;
}

/// Linear score on the class token; patch tokens are ignored. `class_tokens`
/// may stack several tokens as rows, giving one score per row.
template <class T>
Tensor<T> regress_score(const Tensor<T>& class_tokens, const Tensor<T>& w, const Tensor<T>& b) {
    if (class_tokens.ndim() != 2 || w.shape() != Shape{class_tokens.dim(1), 1} || b.numel() != 1) {
        throw Error(Errc::ShapeMismatch, "regressor " + shape_str(w.shape()) + " for tokens " + shape_str(class_tokens.shape()));
    }
    return add(matmul(class_tokens, w), b);
}

template <class T>
T regress_score(const EncoderOutput<T>& enc, const Tensor<T>& w, const Tensor<T>& b) {
    return regress_score(enc.class_token, w, b).item();
}

} // namespace xiqa
