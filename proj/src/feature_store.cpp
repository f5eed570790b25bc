// SPDX-License-Identifier: Apache-2.0
#include "mgsd/feature_store.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mgsd/errors.hpp"

namespace mgsd {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little,
              "feature files are little-endian; big-endian hosts need byte swapping");

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t get_u32(const std::vector<char>& buf, std::size_t offset) {
    std::uint32_t v;
    std::memcpy(&v, buf.data() + offset, sizeof v);
    return v;
}

}  // namespace

void write_features(const HiddenStack& stack, const fs::path& path) {
    if (stack.layers == 0 || stack.frames == 0 || stack.dim == 0) {
        throw DataError("write_features: empty stack for '" + stack.utt_id + "'");
    }
    const std::size_t n = std::size_t{stack.layers} * stack.frames * stack.dim;
    if (stack.values.size() != n) {
        throw DimensionError("write_features: payload size does not match L*T*D for '" +
                             stack.utt_id + "'");
    }
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw ParseError(ParseError::Kind::Io, "cannot open " + path.string() + " for writing");
    os.write(kFeatureMagic, 4);
    put_u32(os, kFeatureVersion);
    put_u32(os, stack.layers);
    put_u32(os, stack.frames);
    put_u32(os, stack.dim);
    os.write(reinterpret_cast<const char*>(stack.values.data()),
             static_cast<std::streamsize>(n * sizeof(float)));
    if (!os) throw ParseError(ParseError::Kind::Io, "write failed: " + path.string());
}

HiddenStack read_features(const fs::path& path, const std::string& utt_id) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ParseError(ParseError::Kind::Io, "cannot open " + path.string());
    std::vector<char> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    const auto where = " in " + path.string();

    if (buf.size() < 4 || std::memcmp(buf.data(), kFeatureMagic, 4) != 0) {
        throw ParseError(ParseError::Kind::BadMagic, "bad magic" + where);
    }
    if (buf.size() < kFeatureHeaderBytes) {
        throw ParseError(ParseError::Kind::Truncated, "truncated header" + where);
    }
    const auto version = get_u32(buf, 4);
    if (version != kFeatureVersion) {
        throw ParseError(ParseError::Kind::VersionMismatch,
                         "unsupported version " + std::to_string(version) + where);
    }
    HiddenStack stack;
    stack.utt_id = utt_id.empty() ? path.stem().string() : utt_id;
    stack.layers = get_u32(buf, 8);
    stack.frames = get_u32(buf, 12);
    stack.dim = get_u32(buf, 16);
    if (stack.layers == 0 || stack.frames == 0 || stack.dim == 0) {
        throw ParseError(ParseError::Kind::Malformed, "zero extent in header" + where);
    }
    const std::size_t n = std::size_t{stack.layers} * stack.frames * stack.dim;
    const std::size_t payload = buf.size() - kFeatureHeaderBytes;
    if (payload != n * sizeof(float)) {
        throw ParseError(payload < n * sizeof(float) ? ParseError::Kind::Truncated
                                                     : ParseError::Kind::Malformed,
                         "payload holds " + std::to_string(payload) + " bytes, expected " +
                             std::to_string(n * sizeof(float)) + where);
    }
    stack.values.resize(n);
    std::memcpy(stack.values.data(), buf.data() + kFeatureHeaderBytes, n * sizeof(float));
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(stack.values[i])) {
            throw ParseError(ParseError::Kind::NonFinite,
                             "non-finite value at index " + std::to_string(i) + where);
        }
    }
    return stack;
}

std::string label_name(int label) {
    switch (label) {
    case kBonafide: return "bonafide";
    case kSpoof: return "spoof";
    default: throw DataError("label must be 0 (bonafide) or 1 (spoof), got " + std::to_string(label));
    }
}

int parse_label(const std::string& name) {
    if (name == "bonafide") return kBonafide;
    if (name == "spoof") return kSpoof;
    throw DataError("unknown label '" + name + "' (expected bonafide or spoof)");
}

const ManifestRow* Manifest::find(const std::string& utt_id) const {
    for (const auto& row : rows)
        if (row.utt_id == utt_id) return &row;
    return nullptr;
}

Manifest read_manifest(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open manifest " + path.string());
    Manifest manifest;
    manifest.base_dir = path.parent_path();
    std::set<std::string> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto where = path.string() + ":" + std::to_string(lineno);
        nlohmann::json obj;
        try {
            obj = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError(where + ": " + e.what());
        }
        ManifestRow row;
        try {
            row.utt_id = obj.at("utt_id").get<std::string>();
            row.path = obj.at("path").get<std::string>();
            row.label = parse_label(obj.at("label").get<std::string>());
            if (obj.contains("conditions")) {
                for (const auto& [k, v] : obj.at("conditions").items()) {
                    row.conditions[k] = v.is_string() ? v.get<std::string>() : v.dump();
                }
            }
        } catch (const nlohmann::json::exception& e) {
            throw DataError(where + ": " + e.what());
        }
        if (!seen.insert(row.utt_id).second) {
            throw DataError(where + ": duplicate utt_id '" + row.utt_id + "'");
        }
        if (!fs::exists(manifest.base_dir / row.path)) {
            throw DataError(where + ": feature file for '" + row.utt_id + "' not found: " +
                            (manifest.base_dir / row.path).string());
        }
        manifest.rows.push_back(std::move(row));
    }
    return manifest;
}

void write_manifest(const Manifest& manifest, const fs::path& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError("cannot write manifest " + path.string());
    for (const auto& row : manifest.rows) {
        nlohmann::ordered_json obj;
        obj["utt_id"] = row.utt_id;
        obj["path"] = row.path;
        obj["label"] = label_name(row.label);
        obj["conditions"] = nlohmann::ordered_json::object();
        for (const auto& [k, v] : row.conditions) obj["conditions"][k] = v;
        os << obj.dump() << '\n';
    }
}

std::vector<HiddenStack> load_all(const Manifest& manifest) {
    std::vector<HiddenStack> stacks;
    stacks.reserve(manifest.rows.size());
    for (const auto& row : manifest.rows) {
        stacks.push_back(read_features(manifest.resolve(row), row.utt_id));
        const auto& s = stacks.back();
        if (s.layers != stacks.front().layers || s.dim != stacks.front().dim) {
            throw DataError("utterance '" + row.utt_id + "' has L=" + std::to_string(s.layers) +
                            ", D=" + std::to_string(s.dim) + " but the manifest started with L=" +
                            std::to_string(stacks.front().layers) +
                            ", D=" + std::to_string(stacks.front().dim));
        }
    }
    return stacks;
}

Manifest synth_generate(const SynthSpec& spec, const fs::path& out_dir,
                        const std::string& manifest_name) {
    if (spec.t_min == 0 || spec.t_min > spec.t_max) {
        throw ConfigError("synth_generate: frame range [" + std::to_string(spec.t_min) + ", " +
                          std::to_string(spec.t_max) + "] is empty");
    }
    if (!(spec.class_separation >= 0.0)) {
        throw ConfigError("synth_generate: class_separation must be >= 0");
    }
    if (spec.layers == 0 || spec.dim == 0) throw ConfigError("synth_generate: L and D must be >= 1");

    const std::size_t L = spec.layers, D = spec.dim;
    std::vector<double> base(L * D), direction(L * D);
    {
        std::mt19937_64 task_rng(spec.seed);
        std::normal_distribution<double> normal(0.0, 1.0);
        for (auto& v : base) v = normal(task_rng);
        for (std::size_t l = 0; l < L; ++l) {
            double norm = 0.0;
            for (std::size_t d = 0; d < D; ++d) {
                direction[l * D + d] = normal(task_rng);
                norm += direction[l * D + d] * direction[l * D + d];
            }
            norm = std::sqrt(norm);
            for (std::size_t d = 0; d < D; ++d) direction[l * D + d] /= norm;
        }
    }

    fs::create_directories(out_dir / "feats");
    std::mt19937_64 rng(spec.seed ^ (0x5851f42d4c957f2dULL * (spec.split + 1)));
    std::uniform_int_distribution<std::uint32_t> frames(spec.t_min, spec.t_max);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double half_sep = 0.5 * spec.class_separation;

    Manifest manifest;
    manifest.base_dir = out_dir;
    for (std::size_t i = 0; i < spec.n_utts; ++i) {
        std::ostringstream id;
        id << spec.id_prefix << '_' << std::setw(5) << std::setfill('0') << i;
        const int label = (i / 2) % 2 == 0 ? kBonafide : kSpoof;
        const double sign = label == kBonafide ? 1.0 : -1.0;

        HiddenStack stack;
        stack.utt_id = id.str();
        stack.layers = spec.layers;
        stack.dim = spec.dim;
        stack.frames = frames(rng);
        stack.values.resize(L * stack.frames * D);
        for (std::size_t l = 0; l < L; ++l)
            for (std::size_t t = 0; t < stack.frames; ++t)
                for (std::size_t d = 0; d < D; ++d) {
                    const double mean = base[l * D + d] + sign * half_sep * direction[l * D + d];
                    stack.values[(l * stack.frames + t) * D + d] =
                        static_cast<float>(mean + normal(rng));
                }

        ManifestRow row;
        row.utt_id = stack.utt_id;
        row.path = "feats/" + stack.utt_id + ".mgsd";
        row.label = label;
        row.conditions["synth"] = i % 2 == 0 ? "synthA" : "synthB";
        write_features(stack, out_dir / row.path);
        manifest.rows.push_back(std::move(row));
    }
    write_manifest(manifest, out_dir / manifest_name);
    return manifest;
}

Tensor Batch::mask_tensor() const {
    return Tensor::from({batch, max_frames}, mask);
}

Tensor Batch::layer(std::size_t l) const {
    std::vector<double> values(batch * max_frames * dim);
    const std::size_t frame_block = max_frames * dim;
    for (std::size_t b = 0; b < batch; ++b) {
        const auto src = features.begin() +
                         static_cast<std::ptrdiff_t>((b * layers + l) * frame_block);
        std::copy_n(src, frame_block, values.begin() + static_cast<std::ptrdiff_t>(b * frame_block));
    }
    return Tensor::from({batch, max_frames, dim}, std::move(values));
}

Batch make_batch(std::span<const HiddenStack> stacks, std::span<const int> labels) {
    if (stacks.empty()) throw DataError("make_batch: no utterances");
    if (labels.size() != stacks.size()) {
        throw DataError("make_batch: " + std::to_string(stacks.size()) + " utterances but " +
                        std::to_string(labels.size()) + " labels");
    }
    Batch batch;
    batch.batch = stacks.size();
    batch.layers = stacks.front().layers;
    batch.dim = stacks.front().dim;
    for (const auto& s : stacks) {
        if (s.layers != batch.layers || s.dim != batch.dim) {
            throw DimensionError("make_batch: utterance '" + s.utt_id + "' has (L,D)=(" +
                                 std::to_string(s.layers) + "," + std::to_string(s.dim) +
                                 ") but the batch has (" + std::to_string(batch.layers) + "," +
                                 std::to_string(batch.dim) + ")");
        }
        batch.max_frames = std::max<std::size_t>(batch.max_frames, s.frames);
    }
    const std::size_t B = batch.batch, L = batch.layers, T = batch.max_frames, D = batch.dim;
    batch.features.assign(B * L * T * D, 0.0);
    batch.mask.assign(B * T, 0.0);
    for (std::size_t b = 0; b < B; ++b) {
        const auto& s = stacks[b];
        for (std::size_t l = 0; l < L; ++l)
            for (std::size_t t = 0; t < s.frames; ++t)
                for (std::size_t d = 0; d < D; ++d)
                    batch.features[((b * L + l) * T + t) * D + d] = s.at(l, t, d);
        for (std::size_t t = 0; t < s.frames; ++t) batch.mask[b * T + t] = 1.0;
        if (labels[b] != kBonafide && labels[b] != kSpoof) {
            throw DataError("make_batch: label of '" + s.utt_id + "' must be 0 or 1");
        }
        batch.labels.push_back(labels[b]);
        batch.utt_ids.push_back(s.utt_id);
        batch.lengths.push_back(s.frames);
    }
    return batch;
}

HiddenStack unbatch(const Batch& batch, std::size_t b) {
    HiddenStack s;
    s.utt_id = batch.utt_ids.at(b);
    s.layers = static_cast<std::uint32_t>(batch.layers);
    s.dim = static_cast<std::uint32_t>(batch.dim);
    std::size_t frames = 0;
    for (std::size_t t = 0; t < batch.max_frames; ++t)
        if (batch.mask[b * batch.max_frames + t] != 0.0) frames = t + 1;
    s.frames = static_cast<std::uint32_t>(frames);
    s.values.resize(batch.layers * frames * batch.dim);
    const std::size_t T = batch.max_frames, D = batch.dim;
    for (std::size_t l = 0; l < batch.layers; ++l)
        for (std::size_t t = 0; t < frames; ++t)
            for (std::size_t d = 0; d < D; ++d)
                s.values[(l * frames + t) * D + d] =
                    static_cast<float>(batch.features[((b * batch.layers + l) * T + t) * D + d]);
    return s;
}

}  // namespace mgsd
