// SPDX-License-Identifier: Apache-2.0
#include "mgsd/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "mgsd/errors.hpp"

namespace mgsd {

namespace {

class Writer {
public:
    explicit Writer(std::ostream& os) : os_(os) {}
    template <typename T>
    void pod(T v) {
        os_.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
    void str(const std::string& s) {
        pod(static_cast<std::uint32_t>(s.size()));
        os_.write(s.data(), static_cast<std::streamsize>(s.size()));
    }

private:
    std::ostream& os_;
};

class Reader {
public:
    Reader(std::vector<char> buf, std::string where) : buf_(std::move(buf)), where_(std::move(where)) {}

    template <typename T>
    T pod() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, buf_.data() + pos_, sizeof v);
        pos_ += sizeof v;
        return v;
    }
    std::string str() {
        const auto n = pod<std::uint32_t>();
        need(n);
        std::string s(buf_.data() + pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == buf_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > buf_.size()) throw ParseError(ParseError::Kind::Truncated, "truncated checkpoint " + where_);
    }

    std::vector<char> buf_;
    std::string where_;
    std::size_t pos_ = 0;
};

}  // namespace

Checkpoint make_checkpoint(const Model& model, const Config& config, std::uint64_t epoch, double dev_eer,
                           std::string rng_state) {
    Checkpoint ckpt;
    ckpt.config = config;
    ckpt.epoch = epoch;
    ckpt.dev_eer = dev_eer;
    ckpt.rng_state = std::move(rng_state);
    for (const auto& nt : model.named_parameters()) ckpt.params.push_back({nt.name, nt.tensor.detach()});
    return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    static_assert(std::endian::native == std::endian::little);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw ParseError(ParseError::Kind::Io, "cannot write checkpoint " + path.string());
    Writer w(os);
    os.write(kCheckpointMagic, 4);
    w.pod(kCheckpointVersion);
    w.str(to_text(ckpt.config));
    w.pod(ckpt.epoch);
    w.pod(ckpt.dev_eer);
    w.str(ckpt.rng_state);
    w.pod(static_cast<std::uint32_t>(ckpt.params.size()));
    for (const auto& nt : ckpt.params) {
        w.str(nt.name);
        w.pod(static_cast<std::uint32_t>(nt.tensor.rank()));
        for (auto extent : nt.tensor.shape()) w.pod(static_cast<std::uint32_t>(extent));
        for (double v : nt.tensor.data()) w.pod(v);
    }
    if (!os) throw ParseError(ParseError::Kind::Io, "write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ParseError(ParseError::Kind::Io, "cannot open checkpoint " + path.string());
    std::vector<char> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    if (buf.size() < 4 || std::memcmp(buf.data(), kCheckpointMagic, 4) != 0) {
        throw ParseError(ParseError::Kind::BadMagic, "bad checkpoint magic in " + path.string());
    }
    buf.erase(buf.begin(), buf.begin() + 4);
    Reader r(std::move(buf), path.string());
    const auto version = r.pod<std::uint32_t>();
    if (version != kCheckpointVersion) {
        throw ParseError(ParseError::Kind::VersionMismatch,
                         "unsupported checkpoint version " + std::to_string(version));
    }
    Checkpoint ckpt;
    ckpt.config = parse_config(r.str());
    ckpt.epoch = r.pod<std::uint64_t>();
    ckpt.dev_eer = r.pod<double>();
    ckpt.rng_state = r.str();
    const auto count = r.pod<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedTensor nt;
        nt.name = r.str();
        const auto rank = r.pod<std::uint32_t>();
        Shape shape;
        for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(r.pod<std::uint32_t>());
        std::vector<double> values(shape_numel(shape));
        for (auto& v : values) v = r.pod<double>();
        nt.tensor = Tensor::from(std::move(shape), std::move(values));
        ckpt.params.push_back(std::move(nt));
    }
    if (!r.done()) throw ParseError(ParseError::Kind::Malformed, "trailing bytes in " + path.string());
    return ckpt;
}

Model model_from_checkpoint(const Checkpoint& ckpt) {
    auto model = Model::init(ckpt.config.model, 0);
    model.load_values(ckpt.params);
    return model;
}

}  // namespace mgsd
