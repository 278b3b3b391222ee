#pragma once

#include "gsalign/alignment.hpp"
#include "gsalign/dataset.hpp"
#include "gsalign/encoder.hpp"

#include <json.hpp>

#include <string>
#include <utility>
#include <vector>

namespace gsalign {

enum class Task { Classify, RetrieveText, RetrieveImage };

std::string to_string(Task t);
Task task_from_string(const std::string& s);  // FormatError

struct MetricsReport {
    Task task = Task::Classify;
    std::vector<std::size_t> ks;
    std::vector<double> hit_rates;                               // aligned with ks
    std::vector<std::pair<std::string, double>> per_class_top1;  // class order of first appearance in the gallery/prompts
    double mean_average_accuracy = 0.0;
    std::size_t num_queries = 0;
    std::vector<std::size_t> ranks;  // 0-based rank of the correct entry per query

    double hit_rate(std::size_t k) const;  // ConfigError if k was not evaluated
    friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

nlohmann::json to_json(const MetricsReport& r);
MetricsReport report_from_json(const nlohmann::json& j);
/// Aligned plain-text table.
std::string format_table(const MetricsReport& r);

inline const std::vector<std::size_t> kDefaultClassifyKs{1, 3, 5};
inline const std::vector<std::size_t> kDefaultTextKs{1, 5, 10};
inline const std::vector<std::size_t> kDefaultImageKs{1, 3, 5};

/// Cosine similarity of two equal-length vectors.
double cosine(std::span<const double> a, std::span<const double> b);

/// Rank of gallery[truth] when gallery entries are sorted by descending
/// score, ties going to the lower index.
std::size_t rank_of(std::span<const double> scores, std::size_t truth);

/// Generic top-k report. scores is queries x gallery, row-major.
/// `labels[q]` groups queries for per-class Top-1; `class_order` fixes the
/// reporting order.
MetricsReport rank_report(Task task, std::span<const double> scores, std::size_t gallery, std::span<const std::size_t> truth,
                          std::span<const std::string> labels, std::span<const std::string> class_order,
                          std::span<const std::size_t> ks);

/// Ranks every embedding against all class prompts. DataError if a label
/// has no prompt.
MetricsReport classify_embeddings(const std::vector<std::vector<double>>& embeddings, const std::vector<std::string>& labels,
                                  const EmbeddingTable& prompts, std::span<const std::size_t> ks = kDefaultClassifyKs);

/// Query i's correct gallery entry is gallery[i].
MetricsReport retrieve_embeddings(Task task, const std::vector<std::vector<double>>& queries,
                                  const std::vector<std::vector<double>>& gallery, const std::vector<std::string>& labels,
                                  std::span<const std::size_t> ks);

struct EncodeOptions {
    std::size_t batch_size = 80;
    std::size_t threads = 0;
    std::size_t max_primitives = 1024;
};

/// Loads, prunes and encodes every cloud of a manifest.
std::vector<std::vector<double>> encode_manifest(const Checkpoint& ckpt, const Dataset& data, const DatasetManifest& m,
                                                 const EncodeOptions& opts = {});

MetricsReport zero_shot_classify(const Checkpoint& ckpt, const Dataset& data, const DatasetManifest& m,
                                 const EmbeddingTable& prompts, std::span<const std::size_t> ks = kDefaultClassifyKs,
                                 const EncodeOptions& opts = {});

/// Queries come from the text or image table, the gallery is the encoded clouds.
MetricsReport retrieve(const Checkpoint& ckpt, const Dataset& data, const DatasetManifest& m, Modality query,
                       std::span<const std::size_t> ks, const EncodeOptions& opts = {});

} // namespace gsalign
