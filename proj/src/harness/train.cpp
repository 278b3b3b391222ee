#include "gsalign/train.hpp"

#include "gsalign/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

namespace gsalign {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be positive");
    if (epochs < 1) throw ConfigError("epochs must be at least 1");
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (eval_batch_size < 1) throw ConfigError("eval_batch_size must be at least 1");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must lie in [0, 1)");
    if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
    if (max_primitives < 1) throw ConfigError("max_primitives must be at least 1");
    if (!(point_cloud_fraction >= 0.0 && point_cloud_fraction <= 1.0)) throw ConfigError("point_cloud_fraction must lie in [0, 1]");
    if (!(point_cloud_opacity >= 0.0 && point_cloud_opacity <= 1.0)) throw ConfigError("point_cloud_opacity must lie in [0, 1]");
    if (!(point_cloud_scale >= 0.0)) throw ConfigError("point_cloud_scale must be nonnegative");
    encoder.validate();
    loss.validate();
}

nlohmann::json to_json(const TrainConfig& c) {
    return {{"learning_rate", c.learning_rate},
            {"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"eval_batch_size", c.eval_batch_size},
            {"seed", c.seed},
            {"optimizer", c.optimizer == Optimizer::Adam ? "adam" : "sgd"},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"adam_eps", c.adam_eps},
            {"encoder", to_json(c.encoder)},
            {"loss", {{"tau", c.loss.tau}, {"lambda1", c.loss.lambda1}, {"lambda2", c.loss.lambda2}, {"symmetric", c.loss.symmetric}}},
            {"dataset", c.dataset},
            {"output", c.output},
            {"max_primitives", c.max_primitives},
            {"point_cloud_fraction", c.point_cloud_fraction},
            {"point_cloud_opacity", c.point_cloud_opacity},
            {"point_cloud_scale", c.point_cloud_scale},
            {"threads", c.threads},
            {"evaluate", c.evaluate},
            {"verbose", c.verbose}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("train config must be a JSON object");
    TrainConfig c;
    try {
        for (const auto& [key, val] : j.items()) {
            if (key == "learning_rate" || key == "lr") c.learning_rate = val.get<double>();
            else if (key == "epochs") c.epochs = val.get<std::size_t>();
            else if (key == "batch_size") c.batch_size = val.get<std::size_t>();
            else if (key == "eval_batch_size") c.eval_batch_size = val.get<std::size_t>();
            else if (key == "seed") c.seed = val.get<std::uint64_t>();
            else if (key == "optimizer") {
                const auto s = val.get<std::string>();
                if (s == "adam") c.optimizer = Optimizer::Adam;
                else if (s == "sgd") c.optimizer = Optimizer::Sgd;
                else throw ConfigError("unknown optimizer '" + s + "' (expected sgd or adam)");
            } else if (key == "beta1") c.beta1 = val.get<double>();
            else if (key == "beta2") c.beta2 = val.get<double>();
            else if (key == "adam_eps") c.adam_eps = val.get<double>();
            else if (key == "encoder") c.encoder = encoder_config_from_json(val);
            else if (key == "loss") {
                for (const auto& [lk, lv] : val.items()) {
                    if (lk == "tau") c.loss.tau = lv.get<double>();
                    else if (lk == "lambda1") c.loss.lambda1 = lv.get<double>();
                    else if (lk == "lambda2") c.loss.lambda2 = lv.get<double>();
                    else if (lk == "symmetric") c.loss.symmetric = lv.get<bool>();
                    else throw ConfigError("unknown loss config field '" + lk + "'");
                }
            } else if (key == "dataset") c.dataset = val.get<std::string>();
            else if (key == "output") c.output = val.get<std::string>();
            else if (key == "max_primitives") c.max_primitives = val.get<std::size_t>();
            else if (key == "point_cloud_fraction") c.point_cloud_fraction = val.get<double>();
            else if (key == "point_cloud_opacity") c.point_cloud_opacity = val.get<double>();
            else if (key == "point_cloud_scale") c.point_cloud_scale = val.get<double>();
            else if (key == "threads") c.threads = val.get<std::size_t>();
            else if (key == "evaluate") c.evaluate = val.get<bool>();
            else if (key == "verbose") c.verbose = val.get<bool>();
            else throw ConfigError("unknown train config field '" + key + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed train config: ") + e.what());
    }
    c.validate();
    return c;
}

TrainConfig load_train_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open train config " + path.string());
    try {
        return train_config_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("cannot parse " + path.string() + ": " + e.what());
    }
}

namespace {

GaussianCloud as_point_cloud(const GaussianCloud& cloud, const TrainConfig& cfg) {
    std::vector<Vec3> points, colors;
    for (const auto& g : cloud.primitives) {
        points.push_back(g.mu);
        colors.push_back(g.color);
    }
    return from_point_cloud(points, colors, cfg.point_cloud_opacity, cfg.point_cloud_scale, cloud.id);
}

struct AdamState {
    std::vector<double> m, v;
};

} // namespace

TrainResult train(const TrainConfig& cfg) {
    cfg.validate();
    if (cfg.dataset.empty()) throw ConfigError("train config has no dataset");
    return train(cfg, load_dataset(cfg.dataset));
}

TrainResult train(const TrainConfig& cfg, const Dataset& data) {
    cfg.validate();
    const EncoderConfig& enc = cfg.encoder;
    if (data.text.dim() != enc.embed_dim || data.image.dim() != enc.embed_dim) {
        throw ConfigError("encoder embed_dim " + std::to_string(enc.embed_dim) + " does not match dataset embedding dim " +
                          std::to_string(data.text.dim()));
    }
    const auto& items = data.train.items;
    if (items.empty()) throw DataError("training split is empty");

    std::vector<char> convert(items.size(), 0);
    {
        std::vector<std::size_t> order(items.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::mt19937_64 pick(cfg.seed ^ 0x5eedc0ffee123457ULL);
        std::shuffle(order.begin(), order.end(), pick);
        const auto n = static_cast<std::size_t>(std::llround(cfg.point_cloud_fraction * static_cast<double>(items.size())));
        for (std::size_t i = 0; i < n; ++i) convert[order[i]] = 1;
    }
    std::vector<PreparedCloud> prepared;
    prepared.reserve(items.size());
    for (std::size_t i = 0; i < items.size(); ++i) {
        GaussianCloud cloud = data.load_cloud(items[i], cfg.max_primitives);
        if (convert[i]) cloud = as_point_cloud(cloud, cfg);
        prepared.push_back(prepare_cloud(cloud, enc));
    }

    ParameterSet weights = init_weights(enc, cfg.seed);
    if (enc.fundamental_init == FundamentalInit::Checkpoint) load_fundamental_init(weights, enc);

    std::vector<char> trainable(weights.size());
    std::vector<AdamState> state(weights.size());
    for (std::size_t p = 0; p < weights.size(); ++p) {
        trainable[p] = is_trainable(weights.names()[p], enc);
        if (trainable[p] && cfg.optimizer == Optimizer::Adam) {
            state[p].m.assign(weights.values()[p].size(), 0.0);
            state[p].v.assign(weights.values()[p].size(), 0.0);
        }
    }

    TrainResult result;
    std::mt19937_64 shuffle_rng(cfg.seed + 0x2545F4914F6CDD1DULL);
    std::vector<std::size_t> order(items.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t e_dim = enc.embed_dim;
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double epoch_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
            const std::size_t n = end - begin;
            std::vector<PreparedCloud> batch;
            TripletBatch tb;
            std::vector<double> text, image;
            batch.reserve(n);
            for (std::size_t k = begin; k < end; ++k) {
                const DatasetItem& item = items[order[k]];
                batch.push_back(prepared[order[k]]);
                tb.ids.push_back(item.id);
                tb.captions.push_back(item.caption);
                const auto t = data.text.at(item.text_id);
                const auto im = data.image.at(item.image_id);
                text.insert(text.end(), t.begin(), t.end());
                image.insert(image.end(), im.begin(), im.end());
            }
            tb.text = ad::Tensor({n, e_dim}, std::move(text));
            tb.image = ad::Tensor({n, e_dim}, std::move(image));

            ad::Graph graph;
            BoundWeights bound(graph, weights, enc, /*want_grads=*/true);
            double loss_value = 0.0;
            try {
                ad::Var emb = encode_batch(batch, bound, enc);
                ad::Var loss = combined_loss(tb, emb, cfg.loss);
                loss_value = loss.value()[0];
                graph.backward(loss);
            } catch (const NumericError& e) {
                throw NumericError("non-finite value at epoch " + std::to_string(epoch + 1) + ", batch " +
                                   std::to_string(batches) + ": " + e.what());
            }
            if (!std::isfinite(loss_value)) {
                throw NumericError("non-finite loss " + std::to_string(loss_value) + " at epoch " + std::to_string(epoch + 1) +
                                   ", batch " + std::to_string(batches));
            }

            ++step;
            const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
            const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
            for (std::size_t p = 0; p < weights.size(); ++p) {
                if (!trainable[p]) continue;
                const ad::Tensor grad = graph.grad(bound.vars()[p]);
                auto w = weights.values()[p].data();
                const auto g = grad.data();
                for (double x : g) {
                    if (!std::isfinite(x)) {
                        throw NumericError("non-finite gradient for '" + weights.names()[p] + "' at epoch " +
                                           std::to_string(epoch + 1) + ", batch " + std::to_string(batches) +
                                           " (loss " + std::to_string(loss_value) + ")");
                    }
                }
                if (cfg.optimizer == Optimizer::Sgd) {
                    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= cfg.learning_rate * g[i];
                    continue;
                }
                auto& m = state[p].m;
                auto& v = state[p].v;
                for (std::size_t i = 0; i < w.size(); ++i) {
                    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                    w[i] -= cfg.learning_rate * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg.adam_eps);
                }
            }
            result.batch_losses.push_back(loss_value);
            epoch_sum += loss_value;
            ++batches;
        }
        result.epoch_losses.push_back(epoch_sum / static_cast<double>(batches));
        if (cfg.verbose) std::fprintf(stderr, "epoch %zu/%zu  loss %.6f\n", epoch + 1, cfg.epochs, result.epoch_losses.back());
    }

    result.checkpoint.config = enc;
    result.checkpoint.weights = std::move(weights);
    nlohmann::json meta = {{"seed", cfg.seed},
                           {"train_config", to_json(cfg)},
                           {"steps", step},
                           {"converted_items", std::count(convert.begin(), convert.end(), 1)},
                           {"batch_losses", result.batch_losses},
                           {"epoch_losses", result.epoch_losses}};
    if (cfg.evaluate && !data.test.items.empty()) {
        const EncodeOptions opts{cfg.eval_batch_size, cfg.threads, cfg.max_primitives};
        result.test_metrics = zero_shot_classify(result.checkpoint, data, data.test, data.prompts, kDefaultClassifyKs, opts);
        meta["metrics"] = {{"classify", to_json(*result.test_metrics)}};
    }
    result.checkpoint.metadata = std::move(meta);
    if (!cfg.output.empty()) save_checkpoint(result.checkpoint, cfg.output);
    return result;
}

// ---- ablation ----------------------------------------------------------

EncoderConfig ablation_config(const std::string& variant, const EncoderConfig& base, const std::string& pretrained_ckpt) {
    EncoderConfig c = base;
    auto pretrained = [&](bool on) {
        c.freeze_fundamental = on;
        c.fundamental_init = on ? FundamentalInit::Checkpoint : FundamentalInit::Random;
        c.fundamental_checkpoint = on ? pretrained_ckpt : std::string();
    };
    if (variant == "exp1" || variant == "exp2") {
        throw ConfigError(variant + " needs a convolutional point baseline, which is not available");
    } else if (variant == "exp3") {
        c.use_advanced_branch = false, c.use_cross_attention = false;
        pretrained(false);
    } else if (variant == "exp4") {
        c.use_advanced_branch = false, c.use_cross_attention = false;
        pretrained(true);
    } else if (variant == "exp5") {
        c.use_advanced_branch = true, c.use_cross_attention = false;
        pretrained(true);
    } else if (variant == "exp6") {
        c.use_advanced_branch = true, c.use_cross_attention = true;
        pretrained(false);
    } else if (variant == "exp7") {
        c.use_advanced_branch = true, c.use_cross_attention = true;
        pretrained(true);
    } else {
        throw ConfigError("unknown ablation variant '" + variant + "' (expected exp1..exp7)");
    }
    c.validate();
    return c;
}

std::vector<AblationRow> run_ablation(const TrainConfig& base, const std::vector<std::string>& variants, const fs::path& work_dir) {
    base.validate();
    if (base.dataset.empty()) throw ConfigError("ablation config has no dataset");
    for (const auto& v : variants) {
        if (std::find(kAblationVariants.begin(), kAblationVariants.end(), v) == kAblationVariants.end()) {
            throw ConfigError("unknown ablation variant '" + v + "' (expected exp1..exp7)");
        }
    }
    return run_ablation(base, load_dataset(base.dataset), variants, work_dir);
}

std::vector<AblationRow> run_ablation(const TrainConfig& base, const Dataset& data, const std::vector<std::string>& variants,
                                      const fs::path& work_dir) {
    for (const auto& v : variants) {
        if (std::find(kAblationVariants.begin(), kAblationVariants.end(), v) == kAblationVariants.end()) {
            throw ConfigError("unknown ablation variant '" + v + "' (expected exp1..exp7)");
        }
    }
    const std::string pretrained_dir = (work_dir / "exp3").string();
    std::optional<MetricsReport> exp3_report;
    auto run = [&](const std::string& v) {
        TrainConfig cfg = base;
        cfg.encoder = ablation_config(v, base.encoder, pretrained_dir);
        cfg.output = (work_dir / v).string();
        cfg.evaluate = true;
        return train(cfg, data).test_metrics;
    };
    const bool needs_pretrained = std::any_of(variants.begin(), variants.end(), [](const std::string& v) {
        return v == "exp3" || v == "exp4" || v == "exp5" || v == "exp7";
    });
    if (needs_pretrained) exp3_report = run("exp3");

    std::vector<AblationRow> rows;
    for (const auto& v : variants) {
        AblationRow row;
        row.variant = v;
        if (v == "exp1" || v == "exp2") {
            row.available = false;
            row.parallel = false;
            rows.push_back(row);
            continue;
        }
        const EncoderConfig c = ablation_config(v, base.encoder, pretrained_dir);
        row.pretrained = c.fundamental_init == FundamentalInit::Checkpoint;
        row.parallel = c.use_advanced_branch;
        row.cross = c.use_advanced_branch && c.use_cross_attention;
        row.report = v == "exp3" ? exp3_report : run(v);
        rows.push_back(std::move(row));
    }
    return rows;
}

nlohmann::json to_json(const std::vector<AblationRow>& rows) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& r : rows) {
        nlohmann::json row = {{"variant", r.variant}, {"available", r.available}, {"pretrained", r.pretrained},
                              {"parallel", r.parallel}, {"cross_attention", r.cross}};
        row["report"] = r.report ? to_json(*r.report) : nlohmann::json(nullptr);
        out.push_back(row);
    }
    return out;
}

std::string format_table(const std::vector<AblationRow>& rows) {
    std::string out;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-6s %-5s %-5s %-5s %8s %8s %8s %8s\n", "Exp", "Pre.", "Par.", "Cro.", "Top1", "Top3", "Top5", "Avg.");
    out += buf;
    auto mark = [](bool b) { return b ? "on" : "-"; };
    for (const auto& r : rows) {
        if (!r.available || !r.report) {
            std::snprintf(buf, sizeof buf, "%-6s %-5s %-5s %-5s %8s %8s %8s %8s\n", r.variant.c_str(), "", "", "", "n/a", "n/a",
                          "n/a", "n/a");
        } else {
            const auto& m = *r.report;
            auto pct = [&](std::size_t k) {
                for (std::size_t i = 0; i < m.ks.size(); ++i) {
                    if (m.ks[i] == k) return 100.0 * m.hit_rates[i];
                }
                return std::nan("");
            };
            std::snprintf(buf, sizeof buf, "%-6s %-5s %-5s %-5s %8.2f %8.2f %8.2f %8.2f\n", r.variant.c_str(), mark(r.pretrained),
                          mark(r.parallel), mark(r.cross), pct(1), pct(3), pct(5), 100.0 * m.mean_average_accuracy);
        }
        out += buf;
    }
    return out;
}

} // namespace gsalign
