// SPDX-License-Identifier: Apache-2.0
#include "mgsd/model.hpp"

#include <cmath>
#include <map>
#include <random>

#include "mgsd/errors.hpp"
#include "mgsd/ops.hpp"

namespace mgsd {

namespace {

class Initializer {
public:
    explicit Initializer(std::uint64_t seed) : rng_(seed) {}

    Tensor uniform(Shape shape, double fan_in, double fan_out) {
        const double bound = std::sqrt(6.0 / (fan_in + fan_out));
        std::uniform_real_distribution<double> dist(-bound, bound);
        std::vector<double> values(shape_numel(shape));
        for (auto& v : values) v = dist(rng_);
        return Tensor::from(std::move(shape), std::move(values), true);
    }

    static Tensor constant(Shape shape, double value) { return Tensor::full(std::move(shape), value, true); }

private:
    std::mt19937_64 rng_;
};

}  // namespace

Model Model::init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Initializer init(seed);
    Model m;
    m.cfg_ = cfg;
    const std::size_t D = cfg.feat_dim, U = cfg.agg_dim, half = cfg.d_inter / 2;
    const auto fU = static_cast<double>(U);

    m.aggregator.gate = cfg.gate;
    m.aggregator.proj = init.uniform({D, U}, static_cast<double>(D), fU);
    m.aggregator.proj_bias = Initializer::constant({U}, 0.0);
    if (cfg.gate == GateMode::Matrix) {
        m.aggregator.w1 = init.uniform({U, U}, fU, fU);
        m.aggregator.w2 = init.uniform({U, U}, fU, fU);
    } else {
        m.aggregator.w1 = init.uniform({U}, 1.0, 1.0);
        m.aggregator.w2 = init.uniform({U}, 1.0, 1.0);
    }

    for (std::size_t b = 0; b < cfg.blocks; ++b) {
        MultiConvBlockParams p;
        p.ln_in_gamma = Initializer::constant({U}, 1.0);
        p.ln_in_beta = Initializer::constant({U}, 0.0);
        p.expand = init.uniform({U, cfg.d_inter}, fU, static_cast<double>(cfg.d_inter));
        p.expand_bias = Initializer::constant({cfg.d_inter}, 0.0);
        p.ln_split_gamma = Initializer::constant({half}, 1.0);
        p.ln_split_beta = Initializer::constant({half}, 0.0);
        for (auto k : cfg.kernels) {
            const auto fk = static_cast<double>(k);
            if (cfg.conv == ConvMode::Depthwise) {
                p.kernels.push_back(init.uniform({k, half}, fk, fk));
            } else {
                const double fan = fk * static_cast<double>(half);
                p.kernels.push_back(init.uniform({k, half, half}, fan, fan));
            }
            p.kernel_biases.push_back(Initializer::constant({half}, 0.0));
        }
        p.fusion_logits = Initializer::constant({cfg.kernels.size()}, 0.0);
        p.out_proj = init.uniform({half, U}, static_cast<double>(half), fU);
        p.out_bias = Initializer::constant({U}, 0.0);
        p.dropout = cfg.dropout;
        p.residual = cfg.residual;
        p.fusion = cfg.fusion;
        p.conv = cfg.conv;
        m.blocks.push_back(std::move(p));
    }

    const std::size_t Q = cfg.concat_dim(), head_dim = Q / cfg.heads;
    m.pool.u = init.uniform({cfg.heads, head_dim}, static_cast<double>(head_dim), 1.0);

    std::size_t in = cfg.pool == PoolMode::Stats ? 2 * Q : 2;
    if (cfg.head_hidden > 0) {
        m.head.hidden_w = init.uniform({in, cfg.head_hidden}, static_cast<double>(in),
                                       static_cast<double>(cfg.head_hidden));
        m.head.hidden_b = Initializer::constant({cfg.head_hidden}, 0.0);
        in = cfg.head_hidden;
    }
    m.head.w = init.uniform({in, 2}, static_cast<double>(in), 2.0);
    m.head.b = Initializer::constant({2}, 0.0);
    return m;
}

ModelOutput Model::forward(Graph& g, const Batch& batch) const {
    if (batch.layers != cfg_.layers || batch.dim != cfg_.feat_dim) {
        throw DimensionError("model expects (L,D)=(" + std::to_string(cfg_.layers) + "," +
                             std::to_string(cfg_.feat_dim) + "), batch has (" +
                             std::to_string(batch.layers) + "," + std::to_string(batch.dim) + ")");
    }
    const auto agg = aggregate(g, batch, aggregator);
    ModelOutput out;
    out.mask = agg.mask;
    out.stack = stack_forward(g, agg, blocks);
    auto pooled = mhap(g, out.stack.concat, agg.mask, pool);
    if (cfg_.pool == PoolMode::Literal) {
        pooled = component_stats(g, slice_last(g, pooled, 0, cfg_.concat_dim()), pool.eps_std);
    }
    out.logits = classify(g, pooled, head);
    return out;
}

std::vector<NamedTensor> Model::named_parameters() const {
    std::vector<NamedTensor> out;
    out.push_back({"aggregator.proj", aggregator.proj});
    out.push_back({"aggregator.proj_bias", aggregator.proj_bias});
    out.push_back({"aggregator.w1", aggregator.w1});
    out.push_back({"aggregator.w2", aggregator.w2});
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        const auto& p = blocks[b];
        const auto prefix = "multiconv." + std::to_string(b) + ".";
        out.push_back({prefix + "ln_in.gamma", p.ln_in_gamma});
        out.push_back({prefix + "ln_in.beta", p.ln_in_beta});
        out.push_back({prefix + "expand", p.expand});
        out.push_back({prefix + "expand_bias", p.expand_bias});
        out.push_back({prefix + "ln_split.gamma", p.ln_split_gamma});
        out.push_back({prefix + "ln_split.beta", p.ln_split_beta});
        for (std::size_t j = 0; j < p.kernels.size(); ++j) {
            out.push_back({prefix + "conv" + std::to_string(j) + ".kernel", p.kernels[j]});
            out.push_back({prefix + "conv" + std::to_string(j) + ".bias", p.kernel_biases[j]});
        }
        if (p.fusion == FusionMode::Learned) out.push_back({prefix + "fusion_logits", p.fusion_logits});
        out.push_back({prefix + "out_proj", p.out_proj});
        out.push_back({prefix + "out_bias", p.out_bias});
    }
    out.push_back({"pool.u", pool.u});
    if (head.hidden_w.defined()) {
        out.push_back({"head.hidden_w", head.hidden_w});
        out.push_back({"head.hidden_b", head.hidden_b});
    }
    out.push_back({"head.w", head.w});
    out.push_back({"head.b", head.b});
    return out;
}

std::vector<Tensor> Model::parameters() const {
    std::vector<Tensor> out;
    for (auto& nt : named_parameters()) out.push_back(nt.tensor);
    return out;
}

Model Model::clone() const {
    Model copy = Model::init(cfg_, 0);
    copy.load_values(named_parameters());
    return copy;
}

void Model::load_values(const std::vector<NamedTensor>& values) {
    std::map<std::string, const Tensor*> by_name;
    for (const auto& nt : values) by_name[nt.name] = &nt.tensor;
    for (auto& nt : named_parameters()) {
        const auto it = by_name.find(nt.name);
        if (it == by_name.end()) throw DataError("missing parameter '" + nt.name + "'");
        if (it->second->shape() != nt.tensor.shape()) {
            throw DataError("parameter '" + nt.name + "' has shape " + shape_str(it->second->shape()) +
                            ", expected " + shape_str(nt.tensor.shape()));
        }
        auto src = it->second->data();
        std::copy(src.begin(), src.end(), nt.tensor.data().begin());
    }
}

}  // namespace mgsd
