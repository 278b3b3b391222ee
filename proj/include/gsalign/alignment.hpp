#pragma once

#include "gsalign/autodiff.hpp"
#include "gsalign/gaussian.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

// Frozen text/image embeddings and the contrastive objectives that pull
// 3D embeddings toward them.

namespace gsalign {

enum class Modality { Text, Image };

std::string to_string(Modality m);
Modality modality_from_string(const std::string& s);  // ConfigError

/// Unit-norm vectors keyed by id, kept in insertion order.
class EmbeddingTable {
public:
    EmbeddingTable() = default;
    EmbeddingTable(std::size_t dim, Modality modality);

    std::size_t dim() const { return dim_; }
    Modality modality() const { return modality_; }
    std::size_t size() const { return ids_.size(); }
    const std::vector<std::string>& ids() const { return ids_; }
    bool contains(const std::string& id) const { return index_.count(id) != 0; }

    /// Normalizes `v` before storing. ShapeError on a dimension mismatch,
    /// NumericError on a zero or non-finite vector, DataError on a duplicate id.
    void insert(const std::string& id, std::span<const double> v);
    /// DataError if absent.
    std::span<const double> at(const std::string& id) const;
    std::span<const double> row(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }

    friend bool operator==(const EmbeddingTable& a, const EmbeddingTable& b) {
        return a.dim_ == b.dim_ && a.modality_ == b.modality_ && a.ids_ == b.ids_ && a.data_ == b.data_;
    }

private:
    friend EmbeddingTable load_embedding_table(const std::filesystem::path& dir);
    std::size_t dim_ = 0;
    Modality modality_ = Modality::Text;
    std::vector<std::string> ids_;
    std::unordered_map<std::string, std::size_t> index_;
    std::vector<double> data_;
};

/// `<dir>/manifest.json` {"dim", "modality", "ids"} plus `<dir>/embeddings.bin`
/// holding little-endian float32 rows in id order.
void save_embedding_table(const EmbeddingTable& table, const std::filesystem::path& dir);
/// FormatError on a length mismatch or zero-norm row. Rows whose norm
/// drifts from 1 by more than 1e-6 are re-normalized.
EmbeddingTable load_embedding_table(const std::filesystem::path& dir);

struct LossConfig {
    double tau = 0.07;
    double lambda1 = 0.5;
    double lambda2 = 0.5;
    /// Also averages in the 3D-anchored direction.
    bool symmetric = false;

    void validate() const;  // ConfigError
};

/// Frozen side of N triplets, aligned by index with the 3D embeddings.
struct TripletBatch {
    std::vector<std::string> ids;
    std::vector<std::string> captions;
    ad::Tensor text;   // [N, E]
    ad::Tensor image;  // [N, E]
    std::vector<const GaussianCloud*> clouds;  // optional, may be empty

    std::size_t size() const { return ids.size(); }
    void validate() const;  // ShapeError
};

/// Negatives for row i are the columns j != i whose trimmed caption differs.
ad::Var text_gs_loss(const TripletBatch& batch, ad::Var gs, const LossConfig& cfg);
/// Negatives for row i are all columns j != i.
ad::Var image_gs_loss(const TripletBatch& batch, ad::Var gs, const LossConfig& cfg);
/// lambda1 * text + lambda2 * image.
ad::Var combined_loss(const TripletBatch& batch, ad::Var gs, const LossConfig& cfg);

double text_gs_loss(const TripletBatch& batch, const ad::Tensor& gs, const LossConfig& cfg);
double image_gs_loss(const TripletBatch& batch, const ad::Tensor& gs, const LossConfig& cfg);
double combined_loss(const TripletBatch& batch, const ad::Tensor& gs, const LossConfig& cfg);

/// Mean over rows of -log softmax at the diagonal, the softmax taken over
/// the diagonal entry and the columns where mask[i*N+j] is set. Scalar.
ad::Var masked_row_contrastive(ad::Var logits, std::vector<char> mask);

} // namespace gsalign
