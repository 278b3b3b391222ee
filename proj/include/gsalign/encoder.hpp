#pragma once

#include "gsalign/autodiff.hpp"
#include "gsalign/gaussian.hpp"
#include "gsalign/grouping.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

// Dual-branch 3D encoder.
//
//   cloud -> normalize -> FPS/KNN groups
//         -> fundamental lift (mu_rel, color)          -> self-attention blocks ----+
//         -> advanced lift (mu_rel, opacity, s, quat)  -> self-attn + cross-attn ---+--> fusion MLP -> unit f^G
//
// Fundamental block i guides advanced block i through cross-attention.

namespace gsalign {

enum class FundamentalInit { Random, Checkpoint };
enum class CrossDirection { FunQueries, AdvQueries };

struct EncoderConfig {
    std::string preset = "T";
    std::size_t dim = 64;
    std::size_t depth = 2;
    std::size_t heads = 4;
    std::size_t embed_dim = 64;
    std::size_t mlp_ratio = 4;
    std::size_t lift_hidden = 64;
    GroupingConfig grouping{};
    bool use_advanced_branch = true;
    bool use_cross_attention = true;
    bool freeze_fundamental = false;
    FundamentalInit fundamental_init = FundamentalInit::Random;
    std::string fundamental_checkpoint;
    CrossDirection cross_direction = CrossDirection::FunQueries;
    double layer_norm_eps = 1e-5;

    /// Throws ConfigError.
    void validate() const;
    std::size_t fusion_width() const { return use_advanced_branch ? 2 * dim : dim; }
};

/// T: D=64 depth 2 heads 4; S: D=128 depth 4 heads 8; L: D=256 depth 6 heads 8.
EncoderConfig scaling_preset(std::string_view name, std::size_t embed_dim = 64);

nlohmann::json to_json(const EncoderConfig& cfg);
EncoderConfig encoder_config_from_json(const nlohmann::json& j);

inline constexpr std::size_t kFundamentalFeatures = 6;  // mu_rel, color
inline constexpr std::size_t kAdvancedFeatures = 11;    // mu_rel, opacity, scale, quaternion

/// Named tensors in a fixed insertion order.
class ParameterSet {
public:
    void add(std::string name, ad::Tensor value);
    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    std::size_t index_of(const std::string& name) const;
    const ad::Tensor& get(const std::string& name) const { return values_[index_of(name)]; }
    ad::Tensor& get(const std::string& name) { return values_[index_of(name)]; }

    std::size_t size() const { return names_.size(); }
    const std::vector<std::string>& names() const { return names_; }
    const std::vector<ad::Tensor>& values() const { return values_; }
    std::vector<ad::Tensor>& values() { return values_; }
    std::size_t element_count() const;

    friend bool operator==(const ParameterSet& a, const ParameterSet& b) {
        return a.names_ == b.names_ && a.values_ == b.values_;
    }

private:
    std::vector<std::string> names_;
    std::vector<ad::Tensor> values_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Fresh weights for `cfg`: Xavier-uniform matrices, zero biases, unit
/// layer-norm gains. Deterministic in `seed`.
ParameterSet init_weights(const EncoderConfig& cfg, std::uint64_t seed);

/// Throws ConfigError if names or shapes disagree with `cfg`.
void check_weights(const ParameterSet& weights, const EncoderConfig& cfg);

/// Whether the optimizer may update this parameter under `cfg`.
bool is_trainable(const std::string& name, const EncoderConfig& cfg);

/// Raw per-point features of one cloud after normalization, grouping and
/// tanh squashing. Advanced features are only filled when the advanced
/// branch is enabled.
struct PreparedCloud {
    std::size_t num_groups = 0;
    std::size_t group_size = 0;
    std::vector<double> fundamental;  // G*K*6
    std::vector<double> advanced;     // G*K*11
    std::vector<double> centers;      // G*3
};

PreparedCloud prepare_cloud(const GaussianCloud& cloud, const EncoderConfig& cfg);

/// Token sequences for a batch: tokens [B, G, D].
struct TokenStream {
    ad::Var tokens;
};

/// Parameters placed on a graph as leaves.
class BoundWeights {
public:
    BoundWeights(ad::Graph& graph, const ParameterSet& weights, const EncoderConfig& cfg, bool want_grads);
    /// Uses existing leaves, one per entry of `weights` in order.
    BoundWeights(const ParameterSet& weights, std::vector<ad::Var> vars);
    ad::Var operator[](const std::string& name) const { return vars_.at(weights_->index_of(name)); }
    const std::vector<ad::Var>& vars() const { return vars_; }
    ad::Graph& graph() const { return *graph_; }

private:
    ad::Graph* graph_;
    const ParameterSet* weights_;
    std::vector<ad::Var> vars_;
};

enum class Branch { Fundamental, Advanced };

/// Shared per-point MLP, max-pool over each group, plus a learned encoding
/// of the group center.
TokenStream lift_features(std::span<const PreparedCloud> batch, Branch branch, const BoundWeights& w,
                          const EncoderConfig& cfg);

struct FundamentalOutput {
    TokenStream tokens;
    std::vector<TokenStream> block_states;
};

/// Pre-norm transformer blocks; each block's output is kept as guidance.
FundamentalOutput fundamental_forward(TokenStream stream, const BoundWeights& w, const EncoderConfig& cfg);

/// Self-attention, then cross-attention against the paired fundamental
/// block state (skipped when disabled), then the MLP sub-layer.
TokenStream advanced_forward(TokenStream stream, const std::vector<TokenStream>& guidance, const BoundWeights& w,
                             const EncoderConfig& cfg);

/// [B, E] unit rows.
ad::Var encode_batch(std::span<const PreparedCloud> batch, const BoundWeights& w, const EncoderConfig& cfg);

/// Embedding of a single cloud (unit vector of length embed_dim).
std::vector<double> encode(const GaussianCloud& cloud, const ParameterSet& weights, const EncoderConfig& cfg);

/// Embeddings for many prepared clouds, processed in chunks of
/// `batch_size` across up to `threads` workers (0 = hardware concurrency).
/// Results do not depend on batch size or thread count.
std::vector<std::vector<double>> encode_many(std::span<const PreparedCloud> clouds, const ParameterSet& weights,
                                             const EncoderConfig& cfg, std::size_t batch_size = 80,
                                             std::size_t threads = 0);

// ---- checkpoints -------------------------------------------------------

struct Checkpoint {
    EncoderConfig config;
    ParameterSet weights;
    nlohmann::json metadata = nlohmann::json::object();
};

/// Writes `<dir>/manifest.json` (config, parameter names and shapes,
/// metadata) and `<dir>/weights.bin` (little-endian float64, parameters
/// concatenated in manifest order).
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

/// Copies every `fun.*` parameter from the checkpoint at
/// cfg.fundamental_checkpoint into `weights` (ConfigError on mismatch).
void load_fundamental_init(ParameterSet& weights, const EncoderConfig& cfg);

} // namespace gsalign
