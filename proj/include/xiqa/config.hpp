#pragma once

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "xiqa/degrade.hpp"
#include "xiqa/error.hpp"
#include "xiqa/train.hpp"
#include "xiqa/vit.hpp"

namespace xiqa {

/// Flat `key = value` run configuration; `#` starts a comment.
struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    std::vector<DegradationKind> kinds{kAllKinds.begin(), kAllKinds.end()};
    std::set<std::string> present; // keys given explicitly

    void require(std::initializer_list<const char*> keys) const {
        std::string missing;
        for (const char* k : keys) {
            if (!present.count(k)) missing += (missing.empty() ? "" : ", ") + std::string(k);
        }
        if (!missing.empty()) throw Error(Errc::InvalidConfig, "missing config keys: " + missing);
    }
};

namespace detail {

inline std::string trim(std::string s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

template <class U>
U parse_number(const std::string& key, const std::string& v) {
    U out{};
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
        throw Error(Errc::InvalidConfig, "config key '" + key + "' expects a number, got '" + v + "'");
    }
    return out;
}

} // namespace detail

inline std::vector<DegradationKind> parse_kind_list(const std::string& text) {
    std::vector<DegradationKind> kinds;
    std::istringstream is(text);
    std::string item;
    while (std::getline(is, item, ',')) {
        item = detail::trim(item);
        if (item.empty()) continue;
        try {
            const auto k = parse_kind(item);
            if (std::find(kinds.begin(), kinds.end(), k) == kinds.end()) kinds.push_back(k);
        } catch (const Error& e) {
            throw Error(Errc::InvalidConfig, e.what());
        }
    }
    if (kinds.empty()) throw Error(Errc::InvalidConfig, "empty degradation kind list");
    return kinds;
}

inline RunConfig parse_run_config(const std::string& text) {
    RunConfig cfg;
    auto& m = cfg.model;
    auto& t = cfg.train;
    using Setter = std::function<void(const std::string&, const std::string&)>;
    auto size = [](std::size_t& f) -> Setter { return [&f](const std::string& k, const std::string& v) { f = detail::parse_number<std::size_t>(k, v); }; };
    auto real = [](double& f) -> Setter { return [&f](const std::string& k, const std::string& v) { f = detail::parse_number<double>(k, v); }; };
    const std::map<std::string, Setter> setters{
        {"image_size", size(m.image_size)},
        {"patch_size", size(m.patch_size)},
        {"channels", size(m.channels)},
        {"embed_dim", size(m.embed_dim)},
        {"num_heads", size(m.num_heads)},
        {"encoder_depth", size(m.encoder_depth)},
        {"decoder_depth", size(m.decoder_depth)},
        {"mlp_ratio", real(m.mlp_ratio)},
        {"cross_wiring",
         [&m](const std::string&, const std::string& v) {
             try {
                 m.wiring = parse_wiring(v);
             } catch (const Error& e) {
                 throw Error(Errc::InvalidConfig, e.what());
             }
         }},
        {"batch_size", size(t.batch_size)},
        {"base_lr", real(t.base_lr)},
        {"epochs", size(t.epochs)},
        {"seed", [&t](const std::string& k, const std::string& v) { t.seed = detail::parse_number<std::uint64_t>(k, v); }},
        {"crop_size", size(t.crop_size)},
        {"flip_prob", real(t.flip_prob)},
        {"weight_decay", real(t.weight_decay)},
        {"beta1", real(t.beta1)},
        {"beta2", real(t.beta2)},
        {"eps", real(t.eps)},
        {"warmup_steps", size(t.warmup_steps)},
        {"finetune_epochs", size(t.finetune_epochs)},
        {"finetune_batch_size", size(t.finetune_batch_size)},
        {"finetune_base_lr", real(t.finetune_base_lr)},
        {"split_fraction", real(t.split_fraction)},
        {"kinds", [&cfg](const std::string&, const std::string& v) { cfg.kinds = parse_kind_list(v); }},
    };

    std::istringstream is(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw Error(Errc::InvalidConfig, "line " + std::to_string(lineno) + ": expected 'key = value'");
        }
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        auto it = setters.find(key);
        if (it == setters.end()) throw Error(Errc::InvalidConfig, "line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        if (!cfg.present.insert(key).second) throw Error(Errc::InvalidConfig, "duplicate key '" + key + "'");
        it->second(key, value);
    }
    if (!cfg.present.count("crop_size")) t.crop_size = m.image_size;
    m.validate();
    t.validate();
    return cfg;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::UnreadableFile, "cannot read config " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str());
}

} // namespace xiqa
