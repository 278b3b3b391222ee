#include "gsalign/cli.hpp"

#include "gsalign/error.hpp"
#include "gsalign/gradcheck.hpp"
#include "gsalign/ply.hpp"
#include "gsalign/render.hpp"
#include "gsalign/train.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>

namespace gsalign {

namespace {

void write_json_file(const nlohmann::json& j, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw InputError("cannot write " + path);
    f << j.dump(2) << '\n';
}

const CLI::App* deepest(const CLI::App* app) {
    for (const CLI::App* sub : app->get_subcommands()) return deepest(sub);
    return app;
}

std::vector<double> parse_rgb(const std::vector<double>& v) {
    if (v.size() != 3) throw UsageError("--background takes three comma-separated values");
    return v;
}

} // namespace

int cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"gsalign: Gaussian-splat encoder aligned to frozen text/image embeddings"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Show help for every subcommand");

    // synth
    SynthConfig synth;
    std::string synth_out;
    auto* c_synth = app.add_subcommand("synth", "Write a synthetic triplet dataset");
    c_synth->add_option("--out", synth_out, "Output directory")->required();
    c_synth->add_option("--seed", synth.seed, "Random seed")->capture_default_str();
    c_synth->add_option("--classes", synth.num_classes, "Number of classes")->capture_default_str();
    c_synth->add_option("--items", synth.items_per_class, "Items per class")->capture_default_str();
    c_synth->add_option("--gaussians", synth.gaussians_per_item, "Gaussians per item")->capture_default_str();
    c_synth->add_option("--embed-dim", synth.embed_dim, "Embedding dimension")->capture_default_str();
    c_synth->add_option("--noise", synth.embedding_noise, "Embedding noise sigma")->capture_default_str();
    c_synth->add_flag("--attribute-task", synth.attribute_task, "Pair classes that differ only in opacity and scale");

    // ingest
    std::string io_in, io_out;
    std::size_t top_n = 1024;
    auto* c_ingest = app.add_subcommand("ingest", "Prune a 3DGS PLY to its most opaque primitives");
    c_ingest->add_option("--in", io_in, "Input 3DGS PLY")->required();
    c_ingest->add_option("--out", io_out, "Output 3DGS PLY")->required();
    c_ingest->add_option("--top-n", top_n, "Primitives to keep")->capture_default_str()->check(CLI::PositiveNumber);

    // convert
    double conv_opacity = 0.4, conv_scale = 0.4;
    auto* c_convert = app.add_subcommand("convert", "Turn a colored point-cloud PLY into a 3DGS PLY");
    c_convert->add_option("--in", io_in, "Input point-cloud PLY")->required();
    c_convert->add_option("--out", io_out, "Output 3DGS PLY")->required();
    c_convert->add_option("--opacity", conv_opacity, "Initial opacity")->capture_default_str();
    c_convert->add_option("--scale", conv_scale, "Initial isotropic scale")->capture_default_str();

    // train
    std::string config_path, dataset_dir, ckpt_out;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> epochs;
    bool verbose = false;
    auto* c_train = app.add_subcommand("train", "Train the encoder against a dataset");
    c_train->add_option("--config", config_path, "Train config JSON")->required();
    c_train->add_option("--dataset", dataset_dir, "Dataset directory (overrides the config)");
    c_train->add_option("--out", ckpt_out, "Checkpoint directory (overrides the config)");
    c_train->add_option("--seed", seed, "Random seed (overrides the config)");
    c_train->add_option("--epochs", epochs, "Epoch count (overrides the config)");
    c_train->add_flag("--verbose", verbose, "Print per-epoch loss");

    // eval
    std::string ckpt_dir, split = "test", json_path, modality = "text";
    std::vector<std::size_t> ks;
    std::size_t threads = 0, eval_batch = 80, max_primitives = 1024;
    auto* c_eval = app.add_subcommand("eval", "Evaluate a checkpoint");
    c_eval->require_subcommand(1);
    auto* c_classify = c_eval->add_subcommand("classify", "Zero-shot classification against class prompts");
    auto* c_retrieve = c_eval->add_subcommand("retrieve", "Text- or image-driven retrieval of clouds");
    for (auto* c : {c_classify, c_retrieve}) {
        c->add_option("--ckpt", ckpt_dir, "Checkpoint directory")->required();
        c->add_option("--dataset", dataset_dir, "Dataset directory")->required();
        c->add_option("--split", split, "train or test")->capture_default_str();
        c->add_option("--ks", ks, "Comma-separated k values")->delimiter(',');
        c->add_option("--json", json_path, "Also write the report as JSON");
        c->add_option("--threads", threads, "Encoding workers (0 = all cores)")->capture_default_str();
        c->add_option("--batch", eval_batch, "Encoding batch size")->capture_default_str()->check(CLI::PositiveNumber);
        c->add_option("--max-primitives", max_primitives, "Prune clouds to this many primitives")->capture_default_str();
    }
    c_retrieve->add_option("--modality", modality, "Query modality")->check(CLI::IsMember({"text", "image"}))->capture_default_str();

    // render
    int width = 256, height = 256;
    std::string projection = "ortho";
    std::vector<double> background{0.0, 0.0, 0.0};
    auto* c_render = app.add_subcommand("render", "Splat a 3DGS PLY to a PPM image");
    c_render->add_option("--in", io_in, "Input 3DGS PLY")->required();
    c_render->add_option("--out", io_out, "Output PPM")->required();
    c_render->add_option("--width", width, "Image width")->capture_default_str()->check(CLI::PositiveNumber);
    c_render->add_option("--height", height, "Image height")->capture_default_str()->check(CLI::PositiveNumber);
    c_render->add_option("--projection", projection, "ortho or pinhole")->check(CLI::IsMember({"ortho", "pinhole"}))->capture_default_str();
    c_render->add_option("--background", background, "Background r,g,b in [0,1]")->delimiter(',');

    // ablate
    std::vector<std::string> variants = kAblationVariants;
    std::string work_dir;
    auto* c_ablate = app.add_subcommand("ablate", "Train and compare the ablation variants");
    c_ablate->add_option("--config", config_path, "Base train config JSON")->required();
    c_ablate->add_option("--out", work_dir, "Working directory for variant checkpoints")->required();
    c_ablate->add_option("--variants", variants, "Comma-separated subset of exp1..exp7")->delimiter(',');
    c_ablate->add_option("--dataset", dataset_dir, "Dataset directory (overrides the config)");
    c_ablate->add_option("--seed", seed, "Random seed (overrides the config)");
    c_ablate->add_option("--epochs", epochs, "Epoch count (overrides the config)");
    c_ablate->add_option("--json", json_path, "Also write the table as JSON");

    // gradcheck
    std::uint64_t gc_seed = 7;
    auto* c_grad = app.add_subcommand("gradcheck", "Finite-difference check of every autodiff op");
    c_grad->add_option("--seed", gc_seed, "Random seed")->capture_default_str();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(std::move(reversed));
    } catch (const CLI::CallForHelp&) {
        out << deepest(&app)->help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << "\n\n" << deepest(&app)->help();
        return 1;
    }

    auto load_config = [&] {
        TrainConfig cfg = load_train_config(config_path);
        if (!dataset_dir.empty()) cfg.dataset = dataset_dir;
        if (seed) cfg.seed = *seed;
        if (epochs) cfg.epochs = *epochs;
        if (verbose) cfg.verbose = true;
        cfg.validate();
        if (cfg.dataset.empty()) throw UsageError("no dataset given (use --dataset or the config's dataset field)");
        return cfg;
    };

    try {
        if (c_synth->parsed()) {
            const Dataset d = synthesize_dataset(synth, synth_out);
            out << "wrote " << d.train.items.size() << " train and " << d.test.items.size() << " test items to " << synth_out << '\n';
        } else if (c_ingest->parsed()) {
            const GaussianCloud cloud = load_ply(io_in);
            const GaussianCloud kept = prune_top_n(cloud, top_n);
            save_ply(kept, io_out);
            out << "kept " << kept.size() << " of " << cloud.size() << " primitives\n";
        } else if (c_convert->parsed()) {
            const PointCloud pc = load_point_cloud_ply(io_in);
            const GaussianCloud cloud = from_point_cloud(pc.points, pc.colors, conv_opacity, conv_scale);
            save_ply(cloud, io_out);
            out << "converted " << cloud.size() << " points\n";
        } else if (c_train->parsed()) {
            TrainConfig cfg = load_config();
            if (!ckpt_out.empty()) cfg.output = ckpt_out;
            if (cfg.output.empty()) throw UsageError("no checkpoint directory given (use --out or the config's output field)");
            const TrainResult r = train(cfg);
            out << "trained " << cfg.epochs << " epochs, final epoch loss " << r.epoch_losses.back() << '\n';
            if (r.test_metrics) out << format_table(*r.test_metrics);
            out << "checkpoint: " << cfg.output << '\n';
        } else if (c_classify->parsed() || c_retrieve->parsed()) {
            const Checkpoint ckpt = load_checkpoint(ckpt_dir);
            const Dataset data = load_dataset(dataset_dir);
            const DatasetManifest& m = data.split(split);
            const EncodeOptions opts{eval_batch, threads, max_primitives};
            MetricsReport report;
            if (c_classify->parsed()) {
                if (ks.empty()) ks = kDefaultClassifyKs;
                report = zero_shot_classify(ckpt, data, m, data.prompts, ks, opts);
            } else {
                const Modality q = modality_from_string(modality);
                if (ks.empty()) ks = q == Modality::Text ? kDefaultTextKs : kDefaultImageKs;
                report = retrieve(ckpt, data, m, q, ks, opts);
            }
            out << format_table(report);
            if (c_classify->parsed() && split == "test" && ckpt.metadata.contains("metrics")) {
                const MetricsReport recorded = report_from_json(ckpt.metadata["metrics"]["classify"]);
                if (recorded.ks == report.ks) {
                    out << "recorded metrics " << (recorded == report ? "reproduced exactly" : "DIFFER") << '\n';
                }
            }
            if (!json_path.empty()) write_json_file(to_json(report), json_path);
        } else if (c_render->parsed()) {
            const auto bg = parse_rgb(background);
            const GaussianCloud cloud = load_ply(io_in);
            const Camera cam = Camera::fit(cloud, projection == "ortho" ? Projection::Orthographic : Projection::Pinhole, width, height);
            const RenderedImage img = render(cloud, cam, {bg[0], bg[1], bg[2]});
            write_ppm(img, io_out);
            out << "rendered " << cloud.size() << " primitives to " << io_out << '\n';
        } else if (c_ablate->parsed()) {
            const TrainConfig cfg = load_config();
            const auto rows = run_ablation(cfg, variants, work_dir);
            out << format_table(rows);
            if (!json_path.empty()) write_json_file(to_json(rows), json_path);
        } else if (c_grad->parsed()) {
            bool all = true;
            for (const auto& r : run_gradcheck_suite(gc_seed)) {
                char buf[160];
                std::snprintf(buf, sizeof buf, "%-36s rel %.3e  tol %.0e  %s\n", r.name.c_str(), r.rel_error, r.tolerance,
                              r.passed ? "ok" : "FAIL");
                out << buf;
                all = all && r.passed;
            }
            out << (all ? "all gradient checks passed\n" : "gradient checks FAILED\n");
            return all ? 0 : 2;
        }
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        if (e.exit_code() == 1) err << '\n' << deepest(&app)->help();
        return e.exit_code();
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}

int cli(int argc, const char* const* argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return cli(args, std::cout, std::cerr);
}

} // namespace gsalign
