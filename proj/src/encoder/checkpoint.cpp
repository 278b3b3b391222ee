#include "gsalign/encoder.hpp"

#include "gsalign/error.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace gsalign {

static_assert(std::endian::native == std::endian::little, "checkpoint blobs assume a little-endian host");

namespace fs = std::filesystem;

void save_checkpoint(const Checkpoint& ckpt, const fs::path& dir) {
    check_weights(ckpt.weights, ckpt.config);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw InputError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());

    nlohmann::json params = nlohmann::json::array();
    for (std::size_t i = 0; i < ckpt.weights.size(); ++i) {
        params.push_back({{"name", ckpt.weights.names()[i]}, {"shape", ckpt.weights.values()[i].shape()}});
    }
    const nlohmann::json manifest = {
        {"format", "gsalign-checkpoint"},
        {"version", 1},
        {"config", to_json(ckpt.config)},
        {"parameters", params},
        {"element_count", ckpt.weights.element_count()},
        {"blob", "weights.bin"},
        {"metadata", ckpt.metadata},
    };
    {
        std::ofstream out(dir / "manifest.json");
        if (!out) throw InputError("cannot write " + (dir / "manifest.json").string());
        out << manifest.dump(2) << '\n';
    }
    std::ofstream blob(dir / "weights.bin", std::ios::binary);
    if (!blob) throw InputError("cannot write " + (dir / "weights.bin").string());
    for (const auto& t : ckpt.weights.values()) {
        blob.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.size() * 8));
    }
    if (!blob) throw InputError("short write to " + (dir / "weights.bin").string());
}

Checkpoint load_checkpoint(const fs::path& dir) {
    const fs::path mpath = dir / "manifest.json";
    std::ifstream in(mpath);
    if (!in) throw InputError("cannot open checkpoint manifest " + mpath.string());
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("malformed checkpoint manifest " + mpath.string() + ": " + e.what());
    }
    Checkpoint ckpt;
    std::vector<std::pair<std::string, ad::Shape>> layout;
    try {
        ckpt.config = encoder_config_from_json(manifest.at("config"));
        for (const auto& p : manifest.at("parameters")) {
            layout.emplace_back(p.at("name").get<std::string>(), p.at("shape").get<ad::Shape>());
        }
        if (manifest.contains("metadata")) ckpt.metadata = manifest.at("metadata");
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("checkpoint manifest " + mpath.string() + " is missing fields: " + e.what());
    }

    std::size_t total = 0;
    for (const auto& [name, shape] : layout) total += ad::element_count(shape);
    const fs::path bpath = dir / manifest.value("blob", std::string("weights.bin"));
    std::error_code ec;
    const auto bytes = fs::file_size(bpath, ec);
    if (ec) throw InputError("cannot stat checkpoint blob " + bpath.string());
    if (bytes != total * 8) {
        throw FormatError("checkpoint blob " + bpath.string() + " has " + std::to_string(bytes) + " bytes, manifest expects " +
                          std::to_string(total * 8));
    }
    std::ifstream blob(bpath, std::ios::binary);
    for (auto& [name, shape] : layout) {
        std::vector<double> data(ad::element_count(shape));
        blob.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * 8));
        if (!blob) throw FormatError("truncated checkpoint blob " + bpath.string());
        ckpt.weights.add(name, ad::Tensor(shape, std::move(data)));
    }
    check_weights(ckpt.weights, ckpt.config);
    return ckpt;
}

void load_fundamental_init(ParameterSet& weights, const EncoderConfig& cfg) {
    if (cfg.fundamental_checkpoint.empty()) throw ConfigError("no fundamental_checkpoint configured");
    const Checkpoint src = load_checkpoint(cfg.fundamental_checkpoint);
    if (src.config.dim != cfg.dim || src.config.depth != cfg.depth || src.config.heads != cfg.heads ||
        src.config.mlp_ratio != cfg.mlp_ratio || src.config.lift_hidden != cfg.lift_hidden) {
        throw ConfigError("fundamental checkpoint " + cfg.fundamental_checkpoint +
                          " has an incompatible architecture");
    }
    std::size_t copied = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const std::string& name = weights.names()[i];
        if (name.rfind("fun.", 0) != 0) continue;
        if (!src.weights.contains(name)) throw ConfigError("fundamental checkpoint lacks '" + name + "'");
        const ad::Tensor& t = src.weights.get(name);
        if (t.shape() != weights.values()[i].shape()) {
            throw ConfigError("fundamental checkpoint parameter '" + name + "' has shape " + ad::to_string(t.shape()));
        }
        weights.values()[i] = t;
        ++copied;
    }
    if (copied == 0) throw ConfigError("no fundamental parameters to initialize");
}

} // namespace gsalign
