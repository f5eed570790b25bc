// SPDX-License-Identifier: Apache-2.0
#include "mgsd/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "mgsd/errors.hpp"

namespace mgsd {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a number, got '" + v + "'");
    }
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
        throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
    }
    return out;
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

template <typename E>
E to_enum(const std::string& key, const std::string& v, std::initializer_list<std::pair<const char*, E>> names) {
    for (const auto& [name, value] : names)
        if (v == name) return value;
    std::string allowed;
    for (const auto& [name, value] : names) allowed += (allowed.empty() ? "" : "|") + std::string(name);
    throw ConfigError(key + ": expected " + allowed + ", got '" + v + "'");
}

struct Entry {
    std::function<void(Config&, const std::string&, const std::string&)> set;
    std::function<std::string(const Config&)> get;
};

#define MGSD_SIZE(field)                                                                       \
    Entry {                                                                                    \
        [](Config& c, const std::string& k, const std::string& v) { c.field = to_uint(k, v); }, \
            [](const Config& c) { return std::to_string(c.field); }                            \
    }
#define MGSD_DOUBLE(field)                                                                       \
    Entry {                                                                                      \
        [](Config& c, const std::string& k, const std::string& v) { c.field = to_double(k, v); }, \
            [](const Config& c) { return fmt_double(c.field); }                                  \
    }
#define MGSD_BOOL(field)                                                                       \
    Entry {                                                                                    \
        [](Config& c, const std::string& k, const std::string& v) { c.field = to_bool(k, v); }, \
            [](const Config& c) { return std::string(c.field ? "true" : "false"); }           \
    }

const std::vector<std::pair<std::string, Entry>>& table() {
    static const std::vector<std::pair<std::string, Entry>> entries = {
        {"model.layers", MGSD_SIZE(model.layers)},
        {"model.dim", MGSD_SIZE(model.feat_dim)},
        {"aggregator.dim", MGSD_SIZE(model.agg_dim)},
        {"aggregator.gate",
         {[](Config& c, const std::string& k, const std::string& v) {
              c.model.gate = to_enum<GateMode>(k, v, {{"matrix", GateMode::Matrix}, {"vector", GateMode::Vector}});
          },
          [](const Config& c) { return std::string(c.model.gate == GateMode::Matrix ? "matrix" : "vector"); }}},
        {"multiconv.layers", MGSD_SIZE(model.blocks)},
        {"multiconv.kernels",
         {[](Config& c, const std::string&, const std::string& v) { c.model.kernels = parse_kernel_list(v); },
          [](const Config& c) { return format_kernel_list(c.model.kernels); }}},
        {"multiconv.d_inter", MGSD_SIZE(model.d_inter)},
        {"multiconv.dropout", MGSD_DOUBLE(model.dropout)},
        {"multiconv.residual", MGSD_BOOL(model.residual)},
        {"multiconv.fusion",
         {[](Config& c, const std::string& k, const std::string& v) {
              c.model.fusion = to_enum<FusionMode>(k, v, {{"mean", FusionMode::Mean}, {"learned", FusionMode::Learned}});
          },
          [](const Config& c) { return std::string(c.model.fusion == FusionMode::Mean ? "mean" : "learned"); }}},
        {"multiconv.conv",
         {[](Config& c, const std::string& k, const std::string& v) {
              c.model.conv = to_enum<ConvMode>(k, v, {{"depthwise", ConvMode::Depthwise}, {"full", ConvMode::Full}});
          },
          [](const Config& c) { return std::string(c.model.conv == ConvMode::Depthwise ? "depthwise" : "full"); }}},
        {"pool.heads", MGSD_SIZE(model.heads)},
        {"pool.mode",
         {[](Config& c, const std::string& k, const std::string& v) {
              c.model.pool = to_enum<PoolMode>(k, v, {{"stats", PoolMode::Stats}, {"literal", PoolMode::Literal}});
          },
          [](const Config& c) { return std::string(c.model.pool == PoolMode::Stats ? "stats" : "literal"); }}},
        {"head.hidden", MGSD_SIZE(model.head_hidden)},
        {"train.lr", MGSD_DOUBLE(train.lr)},
        {"train.weight_decay", MGSD_DOUBLE(train.weight_decay)},
        {"train.decay",
         {[](Config& c, const std::string& k, const std::string& v) {
              c.train.decay = to_enum<DecayMode>(k, v, {{"decoupled", DecayMode::Decoupled}, {"coupled", DecayMode::Coupled}});
          },
          [](const Config& c) {
              return std::string(c.train.decay == DecayMode::Decoupled ? "decoupled" : "coupled");
          }}},
        {"train.batch_size", MGSD_SIZE(train.batch_size)},
        {"train.class_weights",
         {[](Config& c, const std::string& k, const std::string& v) {
              const auto comma = v.find(',');
              if (comma == std::string::npos) throw ConfigError(k + ": expected 'w_bonafide,w_spoof'");
              c.train.weight_bonafide = to_double(k, trim(v.substr(0, comma)));
              c.train.weight_spoof = to_double(k, trim(v.substr(comma + 1)));
          },
          [](const Config& c) {
              return fmt_double(c.train.weight_bonafide) + "," + fmt_double(c.train.weight_spoof);
          }}},
        {"train.patience", MGSD_SIZE(train.patience)},
        {"train.max_epochs", MGSD_SIZE(train.max_epochs)},
        {"train.seed", MGSD_SIZE(train.seed)},
        {"train.beta1", MGSD_DOUBLE(train.beta1)},
        {"train.beta2", MGSD_DOUBLE(train.beta2)},
        {"train.adam_eps", MGSD_DOUBLE(train.adam_eps)},
        {"train.cka", MGSD_BOOL(train.cka)},
        {"train.m_max", MGSD_SIZE(train.m_max)},
        {"train.clip_norm", MGSD_DOUBLE(train.clip_norm)},
    };
    return entries;
}

#undef MGSD_SIZE
#undef MGSD_DOUBLE
#undef MGSD_BOOL

const Entry& lookup(const std::string& key) {
    for (const auto& [name, entry] : table())
        if (name == key) return entry;
    throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

void ModelConfig::validate() const {
    if (layers == 0 || feat_dim == 0 || agg_dim == 0) {
        throw ConfigError("model.layers, model.dim and aggregator.dim must be >= 1");
    }
    if (blocks == 0) throw ConfigError("multiconv.layers must be >= 1");
    if (kernels.empty()) throw ConfigError("multiconv.kernels must list at least one kernel size");
    for (auto k : kernels) {
        if (k % 2 == 0) throw ConfigError("multiconv.kernels: kernel size " + std::to_string(k) + " is even");
    }
    if (d_inter == 0 || d_inter % 2 != 0) {
        throw ConfigError("multiconv.d_inter must be even and positive, got " + std::to_string(d_inter));
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("multiconv.dropout must lie in [0, 1)");
    if (heads == 0 || concat_dim() % heads != 0) {
        throw ConfigError("pool.heads=" + std::to_string(heads) + " must divide Q=" +
                          std::to_string(concat_dim()));
    }
}

void TrainConfig::validate() const {
    if (!(lr >= 0.0)) throw ConfigError("train.lr must be >= 0");
    if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be >= 0");
    if (batch_size == 0) throw ConfigError("train.batch_size must be >= 1");
    if (patience == 0) throw ConfigError("train.patience must be >= 1");
    if (!(weight_bonafide > 0.0 && weight_spoof > 0.0)) {
        throw ConfigError("train.class_weights must be positive");
    }
    if (m_max < 2) throw ConfigError("train.m_max must be >= 2");
}

const std::vector<std::string>& config_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> k;
        for (const auto& [name, entry] : table()) k.push_back(name);
        return k;
    }();
    return keys;
}

void set_config_value(Config& cfg, const std::string& key, const std::string& value) {
    lookup(key).set(cfg, key, trim(value));
}

std::string get_config_value(const Config& cfg, const std::string& key) {
    return lookup(key).get(cfg);
}

Config parse_config(std::string_view text) {
    Config cfg;
    std::istringstream is{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const auto stripped = trim(line);
        if (stripped.empty()) continue;
        const auto eq = stripped.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
        }
        set_config_value(cfg, trim(stripped.substr(0, eq)), trim(stripped.substr(eq + 1)));
    }
    return cfg;
}

Config load_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config " + path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_config(ss.str());
}

std::string to_text(const Config& cfg) {
    std::string out;
    for (const auto& [name, entry] : table()) out += name + " = " + entry.get(cfg) + "\n";
    return out;
}

std::vector<std::size_t> parse_kernel_list(const std::string& text) {
    std::vector<std::size_t> kernels;
    if (trim(text).empty()) throw ConfigError("multiconv.kernels: empty kernel list");
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) throw ConfigError("multiconv.kernels: empty entry in '" + text + "'");
        const auto k = to_uint("multiconv.kernels", item);
        if (k == 0 || k % 2 == 0) {
            throw ConfigError("multiconv.kernels: kernel size must be odd, got " + item);
        }
        kernels.push_back(k);
    }
    if (kernels.empty()) throw ConfigError("multiconv.kernels: empty kernel list");
    return kernels;
}

std::string format_kernel_list(const std::vector<std::size_t>& kernels) {
    std::string out;
    for (std::size_t i = 0; i < kernels.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(kernels[i]);
    }
    return out;
}

}  // namespace mgsd
