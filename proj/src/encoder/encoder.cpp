#include "gsalign/encoder.hpp"

#include "gsalign/error.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <thread>

namespace gsalign {

using ad::Tensor;
using ad::Var;

// ---- configuration -----------------------------------------------------

void EncoderConfig::validate() const {
    if (dim == 0) throw ConfigError("encoder dim must be positive");
    if (heads == 0 || dim % heads != 0) {
        throw ConfigError("encoder dim " + std::to_string(dim) + " is not divisible by head count " +
                          std::to_string(heads));
    }
    if (embed_dim == 0) throw ConfigError("embed_dim must be positive");
    if (mlp_ratio == 0) throw ConfigError("mlp_ratio must be positive");
    if (lift_hidden == 0) throw ConfigError("lift_hidden must be positive");
    if (!(layer_norm_eps > 0.0)) throw ConfigError("layer_norm_eps must be positive");
    grouping.validate();
    if (fundamental_init == FundamentalInit::Checkpoint && fundamental_checkpoint.empty()) {
        throw ConfigError("fundamental_init = checkpoint requires fundamental_checkpoint");
    }
}

EncoderConfig scaling_preset(std::string_view name, std::size_t embed_dim) {
    EncoderConfig cfg;
    cfg.preset = std::string(name);
    cfg.embed_dim = embed_dim;
    if (name == "T") {
        cfg.dim = 64, cfg.depth = 2, cfg.heads = 4;
    } else if (name == "S") {
        cfg.dim = 128, cfg.depth = 4, cfg.heads = 8;
    } else if (name == "L") {
        cfg.dim = 256, cfg.depth = 6, cfg.heads = 8;
    } else {
        throw ConfigError("unknown scaling preset '" + std::string(name) + "' (expected T, S or L)");
    }
    cfg.lift_hidden = cfg.dim;
    return cfg;
}

nlohmann::json to_json(const EncoderConfig& cfg) {
    return {
        {"preset", cfg.preset},
        {"dim", cfg.dim},
        {"depth", cfg.depth},
        {"heads", cfg.heads},
        {"embed_dim", cfg.embed_dim},
        {"mlp_ratio", cfg.mlp_ratio},
        {"lift_hidden", cfg.lift_hidden},
        {"grouping", {{"num_groups", cfg.grouping.num_groups}, {"group_size", cfg.grouping.group_size}}},
        {"use_advanced_branch", cfg.use_advanced_branch},
        {"use_cross_attention", cfg.use_cross_attention},
        {"freeze_fundamental", cfg.freeze_fundamental},
        {"fundamental_init", cfg.fundamental_init == FundamentalInit::Random ? "random" : "checkpoint"},
        {"fundamental_checkpoint", cfg.fundamental_checkpoint},
        {"cross_attention_direction", cfg.cross_direction == CrossDirection::FunQueries ? "fun_queries" : "adv_queries"},
        {"layer_norm_eps", cfg.layer_norm_eps},
    };
}

EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("encoder config must be a JSON object");
    EncoderConfig cfg;
    try {
        if (j.contains("preset") && !j.at("preset").get<std::string>().empty()) {
            cfg = scaling_preset(j.at("preset").get<std::string>(), j.value("embed_dim", std::size_t{64}));
        }
        for (const auto& [key, val] : j.items()) {
            if (key == "preset") cfg.preset = val.get<std::string>();
            else if (key == "dim") cfg.dim = val.get<std::size_t>();
            else if (key == "depth") cfg.depth = val.get<std::size_t>();
            else if (key == "heads") cfg.heads = val.get<std::size_t>();
            else if (key == "embed_dim") cfg.embed_dim = val.get<std::size_t>();
            else if (key == "mlp_ratio") cfg.mlp_ratio = val.get<std::size_t>();
            else if (key == "lift_hidden") cfg.lift_hidden = val.get<std::size_t>();
            else if (key == "grouping") {
                cfg.grouping.num_groups = val.value("num_groups", cfg.grouping.num_groups);
                cfg.grouping.group_size = val.value("group_size", cfg.grouping.group_size);
            } else if (key == "use_advanced_branch") cfg.use_advanced_branch = val.get<bool>();
            else if (key == "use_cross_attention") cfg.use_cross_attention = val.get<bool>();
            else if (key == "freeze_fundamental") cfg.freeze_fundamental = val.get<bool>();
            else if (key == "fundamental_init") {
                const auto s = val.get<std::string>();
                if (s == "random") cfg.fundamental_init = FundamentalInit::Random;
                else if (s == "checkpoint" || s == "from-checkpoint") cfg.fundamental_init = FundamentalInit::Checkpoint;
                else throw ConfigError("unknown fundamental_init '" + s + "'");
            } else if (key == "fundamental_checkpoint") cfg.fundamental_checkpoint = val.get<std::string>();
            else if (key == "cross_attention_direction") {
                const auto s = val.get<std::string>();
                if (s == "fun_queries") cfg.cross_direction = CrossDirection::FunQueries;
                else if (s == "adv_queries") cfg.cross_direction = CrossDirection::AdvQueries;
                else throw ConfigError("unknown cross_attention_direction '" + s + "'");
            } else if (key == "layer_norm_eps") cfg.layer_norm_eps = val.get<double>();
            else throw ConfigError("unknown encoder config field '" + key + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed encoder config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

// ---- parameters --------------------------------------------------------

void ParameterSet::add(std::string name, Tensor value) {
    if (contains(name)) throw ConfigError("duplicate parameter '" + name + "'");
    index_.emplace(name, names_.size());
    names_.push_back(std::move(name));
    values_.push_back(std::move(value));
}

std::size_t ParameterSet::index_of(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("missing parameter '" + name + "'");
    return it->second;
}

std::size_t ParameterSet::element_count() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += v.size();
    return n;
}

namespace {

class Initializer {
public:
    explicit Initializer(std::uint64_t seed) : rng_(seed) {}

    void linear(ParameterSet& p, const std::string& prefix, std::size_t in, std::size_t out, bool bias = true) {
        const double a = std::sqrt(6.0 / static_cast<double>(in + out));
        std::uniform_real_distribution<double> dist(-a, a);
        std::vector<double> w(in * out);
        for (double& x : w) x = dist(rng_);
        p.add(prefix + ".w", Tensor({in, out}, std::move(w)));
        if (bias) p.add(prefix + ".b", Tensor::zeros({out}));
    }

    static void norm(ParameterSet& p, const std::string& prefix, std::size_t n) {
        p.add(prefix + ".gamma", Tensor::filled({n}, 1.0));
        p.add(prefix + ".beta", Tensor::zeros({n}));
    }

private:
    std::mt19937_64 rng_;
};

std::string block_name(const char* branch, std::size_t i) { return std::string(branch) + ".block" + std::to_string(i); }

void add_branch(ParameterSet& p, Initializer& init, const EncoderConfig& cfg, const char* branch,
                std::size_t features, bool with_cross) {
    const std::string b(branch);
    const std::size_t d = cfg.dim;
    init.linear(p, b + ".lift.fc1", features, cfg.lift_hidden);
    init.linear(p, b + ".lift.fc2", cfg.lift_hidden, d);
    init.linear(p, b + ".pos.fc1", 3, d);
    init.linear(p, b + ".pos.fc2", d, d);
    for (std::size_t i = 0; i < cfg.depth; ++i) {
        const std::string pre = block_name(branch, i);
        Initializer::norm(p, pre + ".ln1", d);
        init.linear(p, pre + ".attn.q", d, d);
        init.linear(p, pre + ".attn.k", d, d, /*bias=*/false);  // softmax ignores a key bias
        init.linear(p, pre + ".attn.v", d, d);
        init.linear(p, pre + ".attn.out", d, d);
        if (with_cross) {
            Initializer::norm(p, pre + ".cross.ln_q", d);
            Initializer::norm(p, pre + ".cross.ln_kv", d);
            init.linear(p, pre + ".cross.q", d, d);
            init.linear(p, pre + ".cross.k", d, d, /*bias=*/false);
            init.linear(p, pre + ".cross.v", d, d);
            init.linear(p, pre + ".cross.out", d, d, /*bias=*/false);
        }
        Initializer::norm(p, pre + ".ln2", d);
        init.linear(p, pre + ".mlp.fc1", d, d * cfg.mlp_ratio);
        init.linear(p, pre + ".mlp.fc2", d * cfg.mlp_ratio, d);
    }
    Initializer::norm(p, b + ".norm", d);
}

} // namespace

ParameterSet init_weights(const EncoderConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ParameterSet p;
    Initializer init(seed);
    add_branch(p, init, cfg, "fun", kFundamentalFeatures, false);
    if (cfg.use_advanced_branch) add_branch(p, init, cfg, "adv", kAdvancedFeatures, cfg.use_cross_attention);
    const std::size_t w = cfg.fusion_width();
    Initializer::norm(p, "head.ln", w);
    init.linear(p, "head.fc1", w, w);
    init.linear(p, "head.fc2", w, cfg.embed_dim);
    return p;
}

void check_weights(const ParameterSet& weights, const EncoderConfig& cfg) {
    EncoderConfig shape_only = cfg;
    shape_only.fundamental_init = FundamentalInit::Random;
    const ParameterSet expected = init_weights(shape_only, 0);
    if (expected.names() != weights.names()) {
        throw ConfigError("weights do not match the encoder configuration (parameter names differ)");
    }
    for (std::size_t i = 0; i < expected.size(); ++i) {
        if (expected.values()[i].shape() != weights.values()[i].shape()) {
            throw ConfigError("parameter '" + expected.names()[i] + "' has shape " +
                              ad::to_string(weights.values()[i].shape()) + ", expected " +
                              ad::to_string(expected.values()[i].shape()));
        }
    }
}

bool is_trainable(const std::string& name, const EncoderConfig& cfg) {
    return !(cfg.freeze_fundamental && name.rfind("fun.", 0) == 0);
}

// ---- preprocessing -----------------------------------------------------

PreparedCloud prepare_cloud(const GaussianCloud& cloud, const EncoderConfig& cfg) {
    if (cloud.empty()) throw InputError("cannot encode an empty cloud '" + cloud.id + "'");
    const NormalizedCloud norm = normalize_cloud(cloud);
    const GroupedCloud groups = group_divide(norm.cloud, cfg.grouping);
    PreparedCloud out;
    out.num_groups = groups.num_groups;
    out.group_size = groups.group_size;
    const std::size_t members = groups.members.size();
    out.fundamental.reserve(members * kFundamentalFeatures);
    if (cfg.use_advanced_branch) out.advanced.reserve(members * kAdvancedFeatures);
    for (std::size_t m = 0; m < members; ++m) {
        const GaussianPrimitive& g = norm.cloud.primitives[groups.members[m]];
        const Vec3& rel = groups.relative[m];
        for (double v : rel) out.fundamental.push_back(std::tanh(v));
        for (double v : g.color) out.fundamental.push_back(std::tanh(v));
        if (!cfg.use_advanced_branch) continue;
        for (double v : rel) out.advanced.push_back(std::tanh(v));
        out.advanced.push_back(std::tanh(g.opacity));
        for (double v : g.scale) out.advanced.push_back(std::tanh(v));
        // q and -q are the same rotation; pick the w >= 0 representative.
        const Quat q = g.rotation.w < 0.0 ? -g.rotation : g.rotation;
        for (double v : {q.w, q.x, q.y, q.z}) out.advanced.push_back(std::tanh(v));
    }
    out.centers.reserve(groups.num_groups * 3);
    for (const Vec3& c : groups.centers) out.centers.insert(out.centers.end(), c.begin(), c.end());
    return out;
}

// ---- forward -----------------------------------------------------------

BoundWeights::BoundWeights(ad::Graph& graph, const ParameterSet& weights, const EncoderConfig& cfg, bool want_grads)
    : graph_(&graph), weights_(&weights) {
    vars_.reserve(weights.size());
    for (std::size_t i = 0; i < weights.size(); ++i) {
        vars_.push_back(graph.leaf(weights.values()[i], want_grads && is_trainable(weights.names()[i], cfg)));
    }
}

BoundWeights::BoundWeights(const ParameterSet& weights, std::vector<Var> vars)
    : graph_(nullptr), weights_(&weights), vars_(std::move(vars)) {
    if (vars_.size() != weights.size() || vars_.empty()) throw ShapeError("BoundWeights: one leaf per parameter required");
    graph_ = &vars_.front().graph();
}

namespace {

Var dense(Var x, const BoundWeights& w, const std::string& prefix) {
    return ad::linear(x, w[prefix + ".w"], w[prefix + ".b"]);
}

Var norm(Var x, const BoundWeights& w, const std::string& prefix, const EncoderConfig& cfg) {
    return ad::layer_norm(x, w[prefix + ".gamma"], w[prefix + ".beta"], cfg.layer_norm_eps);
}

Var mlp_sublayer(Var x, const BoundWeights& w, const std::string& pre, const EncoderConfig& cfg) {
    Var h = norm(x, w, pre + ".ln2", cfg);
    h = dense(ad::gelu(dense(h, w, pre + ".mlp.fc1")), w, pre + ".mlp.fc2");
    return ad::add(x, h);
}

Var self_attention_sublayer(Var x, const BoundWeights& w, const std::string& pre, const EncoderConfig& cfg) {
    Var h = norm(x, w, pre + ".ln1", cfg);
    Var a = ad::scaled_dot_attention(dense(h, w, pre + ".attn.q"), ad::linear(h, w[pre + ".attn.k.w"]),
                                     dense(h, w, pre + ".attn.v"), cfg.heads);
    return ad::add(x, dense(a, w, pre + ".attn.out"));
}

Var cross_attention_sublayer(Var adv, Var fun_state, const BoundWeights& w, const std::string& pre,
                             const EncoderConfig& cfg) {
    const bool fun_queries = cfg.cross_direction == CrossDirection::FunQueries;
    Var query_src = norm(fun_queries ? fun_state : adv, w, pre + ".cross.ln_q", cfg);
    Var kv_src = norm(fun_queries ? adv : fun_state, w, pre + ".cross.ln_kv", cfg);
    Var a = ad::scaled_dot_attention(dense(query_src, w, pre + ".cross.q"), ad::linear(kv_src, w[pre + ".cross.k.w"]),
                                     dense(kv_src, w, pre + ".cross.v"), cfg.heads);
    return ad::add(adv, ad::linear(a, w[pre + ".cross.out.w"]));
}

Var pooled(Var tokens, const BoundWeights& w, const char* branch, const EncoderConfig& cfg) {
    return ad::mean_pool(norm(tokens, w, std::string(branch) + ".norm", cfg), 1);
}

} // namespace

TokenStream lift_features(std::span<const PreparedCloud> batch, Branch branch, const BoundWeights& w,
                          const EncoderConfig& cfg) {
    if (batch.empty()) throw InputError("lift_features: empty batch");
    const std::size_t g = cfg.grouping.num_groups, k = cfg.grouping.group_size;
    const bool fundamental = branch == Branch::Fundamental;
    const std::size_t width = fundamental ? kFundamentalFeatures : kAdvancedFeatures;
    const char* prefix = fundamental ? "fun" : "adv";

    std::vector<double> feats;
    std::vector<double> centers;
    feats.reserve(batch.size() * g * k * width);
    centers.reserve(batch.size() * g * 3);
    for (const PreparedCloud& pc : batch) {
        const auto& src = fundamental ? pc.fundamental : pc.advanced;
        if (pc.num_groups != g || pc.group_size != k || src.size() != g * k * width) {
            throw ShapeError(std::string("lift_features: ") + prefix + " features have " + std::to_string(src.size()) +
                             " values, expected " + std::to_string(g * k * width));
        }
        feats.insert(feats.end(), src.begin(), src.end());
        centers.insert(centers.end(), pc.centers.begin(), pc.centers.end());
    }
    ad::Graph& graph = w.graph();
    const std::size_t b = batch.size();
    Var x = graph.constant(Tensor({b * g, k, width}, std::move(feats)));
    const std::string p(prefix);
    Var h = dense(ad::gelu(dense(x, w, p + ".lift.fc1")), w, p + ".lift.fc2");
    Var tok = ad::reshape(ad::max_pool(h, 1), {b, g, cfg.dim});
    Var c = graph.constant(Tensor({b, g, 3}, std::move(centers)));
    Var pos = dense(ad::gelu(dense(c, w, p + ".pos.fc1")), w, p + ".pos.fc2");
    return {ad::add(tok, pos)};
}

FundamentalOutput fundamental_forward(TokenStream stream, const BoundWeights& w, const EncoderConfig& cfg) {
    FundamentalOutput out;
    Var x = stream.tokens;
    for (std::size_t i = 0; i < cfg.depth; ++i) {
        const std::string pre = block_name("fun", i);
        x = mlp_sublayer(self_attention_sublayer(x, w, pre, cfg), w, pre, cfg);
        out.block_states.push_back({x});
    }
    out.tokens = {x};
    return out;
}

TokenStream advanced_forward(TokenStream stream, const std::vector<TokenStream>& guidance, const BoundWeights& w,
                             const EncoderConfig& cfg) {
    if (cfg.use_cross_attention && guidance.size() != cfg.depth) {
        throw ConfigError("advanced branch has depth " + std::to_string(cfg.depth) + " but " +
                          std::to_string(guidance.size()) + " guidance states");
    }
    Var x = stream.tokens;
    for (std::size_t i = 0; i < cfg.depth; ++i) {
        const std::string pre = block_name("adv", i);
        x = self_attention_sublayer(x, w, pre, cfg);
        if (cfg.use_cross_attention) x = cross_attention_sublayer(x, guidance[i].tokens, w, pre, cfg);
        x = mlp_sublayer(x, w, pre, cfg);
    }
    return {x};
}

Var encode_batch(std::span<const PreparedCloud> batch, const BoundWeights& w, const EncoderConfig& cfg) {
    FundamentalOutput fun = fundamental_forward(lift_features(batch, Branch::Fundamental, w, cfg), w, cfg);
    Var fused = pooled(fun.tokens.tokens, w, "fun", cfg);
    if (cfg.use_advanced_branch) {
        TokenStream adv = advanced_forward(lift_features(batch, Branch::Advanced, w, cfg), fun.block_states, w, cfg);
        fused = ad::concat({fused, pooled(adv.tokens, w, "adv", cfg)});
    }
    Var h = norm(fused, w, "head.ln", cfg);
    h = dense(ad::gelu(dense(h, w, "head.fc1")), w, "head.fc2");
    return ad::l2_normalize(h);
}

std::vector<std::vector<double>> encode_many(std::span<const PreparedCloud> clouds, const ParameterSet& weights,
                                             const EncoderConfig& cfg, std::size_t batch_size, std::size_t threads) {
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    std::vector<std::vector<double>> out(clouds.size());
    const std::size_t chunks = (clouds.size() + batch_size - 1) / batch_size;
    auto run_chunk = [&](std::size_t c) {
        const std::size_t begin = c * batch_size;
        const std::size_t end = std::min(clouds.size(), begin + batch_size);
        ad::Graph graph;
        BoundWeights bound(graph, weights, cfg, /*want_grads=*/false);
        Var emb = encode_batch(clouds.subspan(begin, end - begin), bound, cfg);
        const auto data = emb.value().data();
        const std::size_t e = cfg.embed_dim;
        for (std::size_t i = begin; i < end; ++i) {
            const auto row = data.subspan((i - begin) * e, e);
            out[i].assign(row.begin(), row.end());
        }
    };
    std::size_t workers = threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : threads;
    workers = std::min(workers, chunks);
    if (workers <= 1) {
        for (std::size_t c = 0; c < chunks; ++c) run_chunk(c);
        return out;
    }
    std::vector<std::jthread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t t = 0; t < workers; ++t) {
        pool.emplace_back([&, t] {
            try {
                for (std::size_t c = t; c < chunks; c += workers) run_chunk(c);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    }
    pool.clear();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    return out;
}

std::vector<double> encode(const GaussianCloud& cloud, const ParameterSet& weights, const EncoderConfig& cfg) {
    const PreparedCloud pc = prepare_cloud(cloud, cfg);
    return encode_many(std::span<const PreparedCloud>(&pc, 1), weights, cfg, 1, 1).front();
}

} // namespace gsalign
