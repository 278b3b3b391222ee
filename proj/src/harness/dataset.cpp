#include "gsalign/dataset.hpp"

#include "gsalign/error.hpp"
#include "gsalign/ply.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <unordered_set>

namespace gsalign {

namespace fs = std::filesystem;

// ---- manifests ---------------------------------------------------------

nlohmann::json to_json(const DatasetManifest& m) {
    nlohmann::json items = nlohmann::json::array();
    for (const auto& it : m.items) {
        items.push_back({{"id", it.id},
                         {"caption", it.caption},
                         {"label", it.label},
                         {"cloud", it.cloud},
                         {"text_id", it.text_id},
                         {"image_id", it.image_id}});
    }
    return {{"split", m.split}, {"items", items}};
}

DatasetManifest manifest_from_json(const nlohmann::json& j) {
    DatasetManifest m;
    try {
        m.split = j.at("split").get<std::string>();
        for (const auto& it : j.at("items")) {
            DatasetItem d;
            d.id = it.at("id").get<std::string>();
            d.caption = it.at("caption").get<std::string>();
            d.label = it.at("label").get<std::string>();
            d.cloud = it.at("cloud").get<std::string>();
            d.text_id = it.value("text_id", d.id);
            d.image_id = it.value("image_id", d.id);
            m.items.push_back(std::move(d));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed dataset manifest: ") + e.what());
    }
    if (m.split != "train" && m.split != "test") throw FormatError("manifest split must be train or test, got '" + m.split + "'");
    std::unordered_set<std::string> seen;
    for (const auto& it : m.items) {
        if (!seen.insert(it.id).second) throw DataError("duplicate item id '" + it.id + "' in " + m.split + " manifest");
    }
    return m;
}

DatasetManifest load_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open manifest " + path.string());
    try {
        return manifest_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError("cannot parse " + path.string() + ": " + e.what());
    }
}

namespace {

void write_json(const nlohmann::json& j, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

} // namespace

void save_manifest(const DatasetManifest& m, const fs::path& path) { write_json(to_json(m), path); }

void check_manifest(const DatasetManifest& m, const EmbeddingTable& text, const EmbeddingTable& image) {
    for (const auto& it : m.items) {
        if (!text.contains(it.text_id)) throw DataError("item '" + it.id + "' refers to missing text embedding '" + it.text_id + "'");
        if (!image.contains(it.image_id)) throw DataError("item '" + it.id + "' refers to missing image embedding '" + it.image_id + "'");
    }
}

const DatasetManifest& Dataset::split(const std::string& name) const {
    if (name == "train") return train;
    if (name == "test") return test;
    throw ConfigError("unknown split '" + name + "' (expected train or test)");
}

GaussianCloud Dataset::load_cloud(const DatasetItem& item, std::size_t max_primitives) const {
    GaussianCloud c = load_ply(dir / item.cloud);
    c.id = item.id;
    if (max_primitives != 0 && c.size() > max_primitives) c = prune_top_n(c, max_primitives);
    return c;
}

Dataset load_dataset(const fs::path& dir) {
    Dataset d;
    d.dir = dir;
    std::ifstream info(dir / "dataset.json");
    if (!info) throw InputError("no dataset.json in " + dir.string());
    try {
        d.info = nlohmann::json::parse(info);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError("cannot parse dataset.json: " + std::string(e.what()));
    }
    d.train = load_manifest(dir / "train.json");
    d.test = load_manifest(dir / "test.json");
    d.text = load_embedding_table(dir / "text");
    d.image = load_embedding_table(dir / "image");
    d.prompts = load_embedding_table(dir / "prompts");
    check_manifest(d.train, d.text, d.image);
    check_manifest(d.test, d.text, d.image);
    std::unordered_set<std::string> train_ids;
    for (const auto& it : d.train.items) train_ids.insert(it.id);
    for (const auto& it : d.test.items) {
        if (train_ids.count(it.id)) throw DataError("item '" + it.id + "' appears in both splits");
    }
    return d;
}

// ---- synthesis ---------------------------------------------------------

void SynthConfig::validate() const {
    if (num_classes == 0 || items_per_class == 0 || gaussians_per_item == 0 || embed_dim == 0) {
        throw ConfigError("synth counts must all be at least 1");
    }
    if (!(embedding_noise >= 0.0)) throw ConfigError("embedding_noise must be nonnegative");
}

namespace {

enum class Shape { Sphere, Box, Torus };
constexpr const char* kShapeNames[] = {"sphere", "box", "torus"};
constexpr Vec3 kAspects[] = {{1.0, 1.0, 1.0}, {1.6, 0.7, 0.9}, {0.7, 1.2, 1.5}};

struct ClassSpec {
    std::string name;
    std::string caption;
    Shape shape;
    Vec3 aspect;
    Vec3 palette;
    double opacity;
    double scale;
    Vec3 anisotropy;
    std::vector<double> anchor;
};

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
double normal(Rng& rng, double sigma) { return std::normal_distribution<double>(0.0, sigma)(rng); }

std::vector<double> unit_gaussian(Rng& rng, std::size_t dim) {
    std::vector<double> v(dim);
    double n2 = 0.0;
    do {
        n2 = 0.0;
        for (double& x : v) {
            x = normal(rng, 1.0);
            n2 += x * x;
        }
    } while (n2 == 0.0);
    const double n = std::sqrt(n2);
    for (double& x : v) x /= n;
    return v;
}

Vec3 surface_point(Shape shape, Rng& rng) {
    switch (shape) {
    case Shape::Sphere: {
        auto d = unit_gaussian(rng, 3);
        return {d[0], d[1], d[2]};
    }
    case Shape::Box: {
        const int face = static_cast<int>(uniform(rng, 0.0, 6.0));
        const double u = uniform(rng, -1.0, 1.0), v = uniform(rng, -1.0, 1.0);
        const double s = face % 2 == 0 ? 1.0 : -1.0;
        switch (std::min(face, 5) / 2) {
        case 0: return {s, u, v};
        case 1: return {u, s, v};
        default: return {u, v, s};
        }
    }
    case Shape::Torus: {
        const double a = uniform(rng, 0.0, 2.0 * std::numbers::pi), b = uniform(rng, 0.0, 2.0 * std::numbers::pi);
        const double r = 0.35;
        return {(1.0 + r * std::cos(b)) * std::cos(a), (1.0 + r * std::cos(b)) * std::sin(a), r * std::sin(b)};
    }
    }
    return {};
}

Quat random_rotation(Rng& rng) {
    auto q = unit_gaussian(rng, 4);
    return {q[0], q[1], q[2], q[3]};
}

std::vector<ClassSpec> make_classes(const SynthConfig& cfg, Rng& rng) {
    std::vector<ClassSpec> classes;
    for (std::size_t c = 0; c < cfg.num_classes; ++c) {
        // In the attribute task classes 2g and 2g+1 share geometry and palette.
        const std::size_t geo = cfg.attribute_task ? c / 2 : c;
        ClassSpec spec;
        spec.shape = static_cast<Shape>(geo % 3);
        spec.aspect = kAspects[(geo / 3) % 3];
        const double stretch = 1.0 + 0.15 * static_cast<double>(geo / 9);
        spec.aspect[0] *= stretch;
        spec.name = std::string(kShapeNames[geo % 3]) + "_" + std::to_string(c);
        if (cfg.attribute_task && c % 2 == 1 && !classes.empty()) {
            const ClassSpec& twin = classes.back();
            spec.palette = twin.palette;
            spec.anisotropy = twin.anisotropy;
            // opposite ends of the opacity and scale ranges
            spec.opacity = twin.opacity < 0.55 ? uniform(rng, 0.75, 0.9) : uniform(rng, 0.2, 0.35);
            spec.scale = twin.scale < 0.04 ? uniform(rng, 0.06, 0.08) : uniform(rng, 0.015, 0.025);
        } else {
            for (double& x : spec.palette) x = uniform(rng, 0.15, 0.85);
            const double r = uniform(rng, 1.0, 3.0);
            spec.anisotropy = {r, 1.0, 1.0 / std::sqrt(r)};
            spec.opacity = cfg.attribute_task ? uniform(rng, 0.2, 0.35) : uniform(rng, 0.3, 0.9);
            spec.scale = cfg.attribute_task ? uniform(rng, 0.015, 0.025) : std::exp(uniform(rng, std::log(0.02), std::log(0.08)));
        }
        spec.caption = "a synthetic " + std::string(kShapeNames[geo % 3]) + " of class " + std::to_string(c);
        spec.anchor = unit_gaussian(rng, cfg.embed_dim);
        classes.push_back(std::move(spec));
    }
    return classes;
}

GaussianCloud make_cloud(const ClassSpec& spec, std::size_t count, Rng& rng) {
    GaussianCloud cloud;
    const double yaw = uniform(rng, -0.3, 0.3);
    const double zoom = uniform(rng, 0.8, 1.2);
    const Vec3 shift{uniform(rng, -0.5, 0.5), uniform(rng, -0.5, 0.5), uniform(rng, -0.5, 0.5)};
    const double cy = std::cos(yaw), sy = std::sin(yaw);
    cloud.primitives.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        Vec3 p = surface_point(spec.shape, rng);
        for (int k = 0; k < 3; ++k) p[k] = p[k] * spec.aspect[k] + normal(rng, 0.01);
        GaussianPrimitive g;
        g.mu = {zoom * (cy * p[0] - sy * p[1]) + shift[0], zoom * (sy * p[0] + cy * p[1]) + shift[1], zoom * p[2] + shift[2]};
        for (int k = 0; k < 3; ++k) g.color[k] = std::clamp(spec.palette[k] + normal(rng, 0.04), 0.0, 1.0);
        g.opacity = std::clamp(spec.opacity + uniform(rng, -0.05, 0.05), 0.01, 0.99);
        const double jitter = std::exp(normal(rng, 0.1));
        for (int k = 0; k < 3; ++k) g.scale[k] = zoom * spec.scale * spec.anisotropy[k] * jitter;
        g.rotation = random_rotation(rng);
        cloud.primitives.push_back(g);
    }
    return cloud;
}

std::vector<double> noisy(const std::vector<double>& anchor, double sigma, Rng& rng) {
    std::vector<double> v = anchor;
    for (double& x : v) x += normal(rng, sigma);
    return v;
}

} // namespace

Dataset synthesize_dataset(const SynthConfig& cfg, const fs::path& out) {
    cfg.validate();
    std::error_code ec;
    fs::create_directories(out / "clouds", ec);
    if (ec) throw InputError("cannot create " + (out / "clouds").string() + ": " + ec.message());

    Rng rng(cfg.seed);
    const auto classes = make_classes(cfg, rng);
    EmbeddingTable text(cfg.embed_dim, Modality::Text), image(cfg.embed_dim, Modality::Image);
    EmbeddingTable prompts(cfg.embed_dim, Modality::Text);
    DatasetManifest train{"train", {}}, test{"test", {}};

    for (std::size_t c = 0; c < classes.size(); ++c) {
        const ClassSpec& spec = classes[c];
        prompts.insert(spec.name, spec.anchor);
        std::vector<DatasetItem> items;
        for (std::size_t k = 0; k < cfg.items_per_class; ++k) {
            char buf[64];
            std::snprintf(buf, sizeof buf, "c%02zu_%04zu", c, k);
            DatasetItem item{buf, spec.caption, spec.name, "clouds/" + std::string(buf) + ".ply", buf, buf};
            GaussianCloud cloud = make_cloud(spec, cfg.gaussians_per_item, rng);
            cloud.id = item.id;
            save_ply(cloud, out / item.cloud);
            text.insert(item.text_id, noisy(spec.anchor, cfg.embedding_noise, rng));
            image.insert(item.image_id, noisy(spec.anchor, cfg.embedding_noise, rng));
            items.push_back(std::move(item));
        }
        std::shuffle(items.begin(), items.end(), rng);
        const std::size_t n_test = items.size() / 5;
        for (std::size_t k = 0; k < items.size(); ++k) {
            (k < items.size() - n_test ? train : test).items.push_back(items[k]);
        }
    }

    save_embedding_table(text, out / "text");
    save_embedding_table(image, out / "image");
    save_embedding_table(prompts, out / "prompts");
    save_manifest(train, out / "train.json");
    save_manifest(test, out / "test.json");
    nlohmann::json classes_json = nlohmann::json::array();
    for (const auto& spec : classes) classes_json.push_back(spec.name);
    write_json({{"seed", cfg.seed},
                {"num_classes", cfg.num_classes},
                {"items_per_class", cfg.items_per_class},
                {"gaussians_per_item", cfg.gaussians_per_item},
                {"embed_dim", cfg.embed_dim},
                {"embedding_noise", cfg.embedding_noise},
                {"attribute_task", cfg.attribute_task},
                {"classes", classes_json}},
               out / "dataset.json");
    return load_dataset(out);
}

} // namespace gsalign
