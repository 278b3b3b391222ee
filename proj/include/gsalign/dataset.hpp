#pragma once

#include "gsalign/alignment.hpp"
#include "gsalign/gaussian.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace gsalign {

struct DatasetItem {
    std::string id;
    std::string caption;
    std::string label;
    std::string cloud;     // path relative to the dataset directory
    std::string text_id;
    std::string image_id;
};

struct DatasetManifest {
    std::string split;  // "train" | "test"
    std::vector<DatasetItem> items;
};

nlohmann::json to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const nlohmann::json& j);  // FormatError, DataError on duplicate ids
DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const DatasetManifest& m, const std::filesystem::path& path);

/// DataError if an item refers to an embedding id missing from its table.
void check_manifest(const DatasetManifest& m, const EmbeddingTable& text, const EmbeddingTable& image);

/// On-disk layout:
///   dataset.json  train.json  test.json
///   text/  image/  prompts/   (embedding tables; prompts keyed by class label)
///   clouds/<id>.ply
struct Dataset {
    std::filesystem::path dir;
    nlohmann::json info;
    DatasetManifest train;
    DatasetManifest test;
    EmbeddingTable text;
    EmbeddingTable image;
    EmbeddingTable prompts;

    const DatasetManifest& split(const std::string& name) const;  // ConfigError
    /// Keeps the `max_primitives` most opaque primitives (0 keeps all).
    GaussianCloud load_cloud(const DatasetItem& item, std::size_t max_primitives = 0) const;
};

Dataset load_dataset(const std::filesystem::path& dir);

struct SynthConfig {
    std::uint64_t seed = 42;
    std::size_t num_classes = 8;
    std::size_t items_per_class = 64;
    std::size_t gaussians_per_item = 256;
    std::size_t embed_dim = 64;
    double embedding_noise = 0.1;
    /// Classes come in pairs that share geometry and palette and differ
    /// only in their opacity and scale bands.
    bool attribute_task = false;

    void validate() const;  // ConfigError
};

/// Writes a complete dataset into `out` (created if missing) and returns it
/// as it would be read back from disk.
Dataset synthesize_dataset(const SynthConfig& cfg, const std::filesystem::path& out);

} // namespace gsalign
