#include "gsalign/alignment.hpp"

#include "gsalign/error.hpp"

#include <json.hpp>

#include <bit>
#include <cmath>
#include <fstream>

namespace gsalign {

static_assert(std::endian::native == std::endian::little, "embedding blobs assume a little-endian host");

namespace fs = std::filesystem;

std::string to_string(Modality m) { return m == Modality::Text ? "text" : "image"; }

Modality modality_from_string(const std::string& s) {
    if (s == "text") return Modality::Text;
    if (s == "image") return Modality::Image;
    throw ConfigError("unknown modality '" + s + "' (expected text or image)");
}

EmbeddingTable::EmbeddingTable(std::size_t dim, Modality modality) : dim_(dim), modality_(modality) {
    if (dim == 0) throw ConfigError("embedding dim must be positive");
}

void EmbeddingTable::insert(const std::string& id, std::span<const double> v) {
    if (v.size() != dim_) {
        throw ShapeError("embedding '" + id + "' has dim " + std::to_string(v.size()) + ", table dim is " +
                         std::to_string(dim_));
    }
    if (contains(id)) throw DataError("duplicate embedding id '" + id + "'");
    double n2 = 0.0;
    for (double x : v) n2 += x * x;
    const double n = std::sqrt(n2);
    if (!std::isfinite(n) || n == 0.0) throw NumericError("embedding '" + id + "' has zero or non-finite norm");
    index_.emplace(id, ids_.size());
    ids_.push_back(id);
    for (double x : v) data_.push_back(x / n);
}

std::span<const double> EmbeddingTable::at(const std::string& id) const {
    const auto it = index_.find(id);
    if (it == index_.end()) throw DataError("no " + to_string(modality_) + " embedding for id '" + id + "'");
    return row(it->second);
}

void save_embedding_table(const EmbeddingTable& table, const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw InputError("cannot create " + dir.string() + ": " + ec.message());
    const nlohmann::json manifest = {{"dim", table.dim()}, {"modality", to_string(table.modality())}, {"ids", table.ids()}};
    {
        std::ofstream out(dir / "manifest.json");
        if (!out) throw InputError("cannot write " + (dir / "manifest.json").string());
        out << manifest.dump(2) << '\n';
    }
    std::ofstream blob(dir / "embeddings.bin", std::ios::binary);
    if (!blob) throw InputError("cannot write " + (dir / "embeddings.bin").string());
    std::vector<float> row(table.dim());
    for (std::size_t i = 0; i < table.size(); ++i) {
        const auto r = table.row(i);
        for (std::size_t k = 0; k < row.size(); ++k) row[k] = static_cast<float>(r[k]);
        blob.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(float)));
    }
    if (!blob) throw InputError("short write to " + (dir / "embeddings.bin").string());
}

EmbeddingTable load_embedding_table(const fs::path& dir) {
    const fs::path mpath = dir / "manifest.json";
    std::ifstream in(mpath);
    if (!in) throw InputError("cannot open embedding manifest " + mpath.string());
    std::size_t dim = 0;
    Modality modality;
    std::vector<std::string> ids;
    try {
        const auto j = nlohmann::json::parse(in);
        dim = j.at("dim").get<std::size_t>();
        modality = modality_from_string(j.at("modality").get<std::string>());
        ids = j.at("ids").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("malformed embedding manifest " + mpath.string() + ": " + e.what());
    } catch (const ConfigError& e) {
        throw FormatError(mpath.string() + ": " + e.what());
    }
    if (dim == 0) throw FormatError(mpath.string() + ": dim must be positive");

    const fs::path bpath = dir / "embeddings.bin";
    std::error_code ec;
    const auto bytes = fs::file_size(bpath, ec);
    if (ec) throw InputError("cannot stat embedding blob " + bpath.string());
    const std::uintmax_t expected = static_cast<std::uintmax_t>(ids.size()) * dim * sizeof(float);
    if (bytes != expected) {
        throw FormatError("embedding blob " + bpath.string() + " has " + std::to_string(bytes) + " bytes; manifest (" +
                          std::to_string(ids.size()) + " ids x dim " + std::to_string(dim) + ") implies " +
                          std::to_string(expected));
    }
    std::vector<float> raw(ids.size() * dim);
    std::ifstream blob(bpath, std::ios::binary);
    blob.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(bytes));
    if (!blob) throw FormatError("truncated embedding blob " + bpath.string());

    EmbeddingTable t(dim, modality);
    t.data_.reserve(raw.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        double n2 = 0.0;
        for (std::size_t k = 0; k < dim; ++k) {
            const double x = raw[i * dim + k];
            if (!std::isfinite(x)) throw FormatError("embedding '" + ids[i] + "' has a non-finite entry");
            n2 += x * x;
        }
        const double n = std::sqrt(n2);
        if (n == 0.0) throw FormatError("embedding '" + ids[i] + "' has zero norm");
        const double scale = std::abs(n - 1.0) > 1e-6 ? 1.0 / n : 1.0;
        if (!t.index_.emplace(ids[i], i).second) throw FormatError("duplicate embedding id '" + ids[i] + "'");
        t.ids_.push_back(ids[i]);
        for (std::size_t k = 0; k < dim; ++k) t.data_.push_back(scale == 1.0 ? raw[i * dim + k] : raw[i * dim + k] * scale);
    }
    return t;
}

} // namespace gsalign
