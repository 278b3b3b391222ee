#include "gsalign/metrics.hpp"

#include "gsalign/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

namespace gsalign {

std::string to_string(Task t) {
    switch (t) {
    case Task::Classify: return "classify";
    case Task::RetrieveText: return "retrieve-text";
    case Task::RetrieveImage: return "retrieve-image";
    }
    return "?";
}

Task task_from_string(const std::string& s) {
    if (s == "classify") return Task::Classify;
    if (s == "retrieve-text") return Task::RetrieveText;
    if (s == "retrieve-image") return Task::RetrieveImage;
    throw FormatError("unknown report task '" + s + "'");
}

double MetricsReport::hit_rate(std::size_t k) const {
    for (std::size_t i = 0; i < ks.size(); ++i) {
        if (ks[i] == k) return hit_rates[i];
    }
    throw ConfigError("Top-" + std::to_string(k) + " was not evaluated");
}

nlohmann::json to_json(const MetricsReport& r) {
    nlohmann::json topk = nlohmann::json::array();
    for (std::size_t i = 0; i < r.ks.size(); ++i) topk.push_back({{"k", r.ks[i]}, {"hit_rate", r.hit_rates[i]}});
    nlohmann::json per_class = nlohmann::json::array();
    for (const auto& [label, acc] : r.per_class_top1) per_class.push_back({{"class", label}, {"top1", acc}});
    return {{"task", to_string(r.task)},
            {"num_queries", r.num_queries},
            {"topk", topk},
            {"per_class_top1", per_class},
            {"mean_average_accuracy", r.mean_average_accuracy},
            {"ranks", r.ranks}};
}

MetricsReport report_from_json(const nlohmann::json& j) {
    MetricsReport r;
    try {
        r.task = task_from_string(j.at("task").get<std::string>());
        r.num_queries = j.at("num_queries").get<std::size_t>();
        for (const auto& e : j.at("topk")) {
            r.ks.push_back(e.at("k").get<std::size_t>());
            r.hit_rates.push_back(e.at("hit_rate").get<double>());
        }
        for (const auto& e : j.at("per_class_top1")) {
            r.per_class_top1.emplace_back(e.at("class").get<std::string>(), e.at("top1").get<double>());
        }
        r.mean_average_accuracy = j.at("mean_average_accuracy").get<double>();
        r.ranks = j.value("ranks", std::vector<std::size_t>{});
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed metrics report: ") + e.what());
    }
    return r;
}

std::string format_table(const MetricsReport& r) {
    std::size_t width = 16;
    for (const auto& [label, acc] : r.per_class_top1) width = std::max(width, label.size() + 2);
    std::ostringstream out;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s  (%zu queries)\n", to_string(r.task).c_str(), r.num_queries);
    out << buf;
    for (std::size_t i = 0; i < r.ks.size(); ++i) {
        std::snprintf(buf, sizeof buf, "  %-*s %7.2f\n", static_cast<int>(width), ("Top-" + std::to_string(r.ks[i])).c_str(),
                      100.0 * r.hit_rates[i]);
        out << buf;
    }
    std::snprintf(buf, sizeof buf, "  %-*s %7.2f\n", static_cast<int>(width), "Avg. (per class)", 100.0 * r.mean_average_accuracy);
    out << buf;
    for (const auto& [label, acc] : r.per_class_top1) {
        std::snprintf(buf, sizeof buf, "    %-*s %7.2f\n", static_cast<int>(width - 2), label.c_str(), 100.0 * acc);
        out << buf;
    }
    return out.str();
}

double cosine(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ShapeError("cosine of vectors with different lengths");
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    if (aa == 0.0 || bb == 0.0) throw NumericError("cosine of a zero vector");
    return ab / (std::sqrt(aa) * std::sqrt(bb));
}

std::size_t rank_of(std::span<const double> scores, std::size_t truth) {
    const double t = scores[truth];
    std::size_t rank = 0;
    for (std::size_t j = 0; j < scores.size(); ++j) {
        if (scores[j] > t || (scores[j] == t && j < truth)) ++rank;
    }
    return rank;
}

MetricsReport rank_report(Task task, std::span<const double> scores, std::size_t gallery, std::span<const std::size_t> truth,
                          std::span<const std::string> labels, std::span<const std::string> class_order,
                          std::span<const std::size_t> ks) {
    const std::size_t q = truth.size();
    if (scores.size() != q * gallery || labels.size() != q) throw ShapeError("rank_report: inconsistent sizes");
    if (ks.empty()) throw ConfigError("at least one k is required");
    MetricsReport r;
    r.task = task;
    r.ks.assign(ks.begin(), ks.end());
    std::sort(r.ks.begin(), r.ks.end());
    r.ks.erase(std::unique(r.ks.begin(), r.ks.end()), r.ks.end());
    if (r.ks.front() == 0) throw ConfigError("k must be at least 1");
    r.num_queries = q;
    r.hit_rates.assign(r.ks.size(), 0.0);
    std::map<std::string, std::pair<std::size_t, std::size_t>> per_class;  // hits, total
    for (std::size_t i = 0; i < q; ++i) {
        if (truth[i] >= gallery) throw ShapeError("rank_report: truth index out of range");
        const std::size_t rank = rank_of(scores.subspan(i * gallery, gallery), truth[i]);
        r.ranks.push_back(rank);
        for (std::size_t k = 0; k < r.ks.size(); ++k) r.hit_rates[k] += rank < r.ks[k] ? 1.0 : 0.0;
        auto& pc = per_class[labels[i]];
        pc.first += rank == 0;
        pc.second += 1;
    }
    if (q > 0) {
        for (double& h : r.hit_rates) h /= static_cast<double>(q);
    }
    double sum = 0.0;
    for (const auto& label : class_order) {
        const auto it = per_class.find(label);
        if (it == per_class.end()) continue;
        const double acc = static_cast<double>(it->second.first) / static_cast<double>(it->second.second);
        r.per_class_top1.emplace_back(label, acc);
        sum += acc;
    }
    if (r.per_class_top1.size() != per_class.size()) throw DataError("query label missing from the class order");
    r.mean_average_accuracy = r.per_class_top1.empty() ? 0.0 : sum / static_cast<double>(r.per_class_top1.size());
    return r;
}

MetricsReport classify_embeddings(const std::vector<std::vector<double>>& embeddings, const std::vector<std::string>& labels,
                                  const EmbeddingTable& prompts, std::span<const std::size_t> ks) {
    if (embeddings.size() != labels.size()) throw ShapeError("classify: embedding/label count mismatch");
    const std::size_t g = prompts.size();
    std::vector<double> scores;
    std::vector<std::size_t> truth;
    scores.reserve(embeddings.size() * g);
    for (std::size_t i = 0; i < embeddings.size(); ++i) {
        if (!prompts.contains(labels[i])) throw DataError("unknown class '" + labels[i] + "' (no class prompt)");
        for (std::size_t c = 0; c < g; ++c) scores.push_back(cosine(embeddings[i], prompts.row(c)));
        truth.push_back(static_cast<std::size_t>(std::find(prompts.ids().begin(), prompts.ids().end(), labels[i]) - prompts.ids().begin()));
    }
    return rank_report(Task::Classify, scores, g, truth, labels, prompts.ids(), ks);
}

MetricsReport retrieve_embeddings(Task task, const std::vector<std::vector<double>>& queries,
                                  const std::vector<std::vector<double>>& gallery, const std::vector<std::string>& labels,
                                  std::span<const std::size_t> ks) {
    if (queries.size() != gallery.size() || labels.size() != queries.size()) {
        throw ShapeError("retrieve: every query needs exactly one paired gallery item");
    }
    const std::size_t g = gallery.size();
    std::vector<double> scores;
    scores.reserve(g * g);
    std::vector<std::size_t> truth(g);
    std::vector<std::string> order;
    for (std::size_t i = 0; i < g; ++i) {
        for (std::size_t j = 0; j < g; ++j) scores.push_back(cosine(queries[i], gallery[j]));
        truth[i] = i;
        if (std::find(order.begin(), order.end(), labels[i]) == order.end()) order.push_back(labels[i]);
    }
    return rank_report(task, scores, g, truth, labels, order, ks);
}

std::vector<std::vector<double>> encode_manifest(const Checkpoint& ckpt, const Dataset& data, const DatasetManifest& m,
                                                 const EncodeOptions& opts) {
    std::vector<PreparedCloud> prepared;
    prepared.reserve(m.items.size());
    for (const auto& item : m.items) prepared.push_back(prepare_cloud(data.load_cloud(item, opts.max_primitives), ckpt.config));
    return encode_many(prepared, ckpt.weights, ckpt.config, opts.batch_size, opts.threads);
}

namespace {

std::vector<std::string> labels_of(const DatasetManifest& m) {
    std::vector<std::string> labels;
    for (const auto& it : m.items) labels.push_back(it.label);
    return labels;
}

} // namespace

MetricsReport zero_shot_classify(const Checkpoint& ckpt, const Dataset& data, const DatasetManifest& m,
                                 const EmbeddingTable& prompts, std::span<const std::size_t> ks, const EncodeOptions& opts) {
    for (const auto& it : m.items) {
        if (!prompts.contains(it.label)) throw DataError("unknown class '" + it.label + "' for item '" + it.id + "'");
    }
    if (prompts.dim() != ckpt.config.embed_dim) throw ShapeError("prompt dim does not match the encoder embedding dim");
    return classify_embeddings(encode_manifest(ckpt, data, m, opts), labels_of(m), prompts, ks);
}

MetricsReport retrieve(const Checkpoint& ckpt, const Dataset& data, const DatasetManifest& m, Modality query,
                       std::span<const std::size_t> ks, const EncodeOptions& opts) {
    const EmbeddingTable& table = query == Modality::Text ? data.text : data.image;
    std::vector<std::vector<double>> queries;
    for (const auto& it : m.items) {
        const auto v = table.at(query == Modality::Text ? it.text_id : it.image_id);
        queries.emplace_back(v.begin(), v.end());
    }
    if (table.dim() != ckpt.config.embed_dim) throw ShapeError("query dim does not match the encoder embedding dim");
    return retrieve_embeddings(query == Modality::Text ? Task::RetrieveText : Task::RetrieveImage, queries,
                               encode_manifest(ckpt, data, m, opts), labels_of(m), ks);
}

} // namespace gsalign
