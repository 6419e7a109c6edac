#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "msi/config.hpp"
#include "msi/datagen.hpp"
#include "msi/errors.hpp"
#include "msi/explainers.hpp"
#include "msi/io.hpp"
#include "msi/metrics.hpp"
#include "msi/model.hpp"
#include "msi/png.hpp"

namespace fs = std::filesystem;
using namespace msi;

namespace {

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> overrides;  // key=value, mirrors config keys 1:1
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_path, "Config file (key = value lines)");
    cmd->add_option("--set", opts.overrides,
                    "Override one config key, e.g. --set train.epochs=5 (repeatable)");
}

RunConfig resolve_config(const CommonOpts& opts) {
    RunConfig cfg;
    if (!opts.config_path.empty()) cfg = load_config(opts.config_path, cfg);
    for (const auto& kv : opts.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    return cfg;
}

// Every artifact gets the fully resolved config beside it, diffable.
void write_echo(const std::string& artifact_path, const RunConfig& cfg) {
    std::ofstream out(artifact_path + ".config", std::ios::binary);
    if (!out) throw DataError("cannot write " + artifact_path + ".config");
    out << cfg.echo();
}

LabeledImageBatch load_limited(const std::string& path, std::int64_t limit) {
    LabeledImageBatch data = io::load_dataset(path);
    if (limit > 0 && limit < data.count()) {
        std::vector<std::int64_t> idx(static_cast<std::size_t>(limit));
        std::iota(idx.begin(), idx.end(), 0);
        data = take(data, idx);
    }
    return data;
}

Tensor single_image(const LabeledImageBatch& data, std::int64_t i) {
    const std::int64_t hw = data.height() * data.width();
    const float* p = data.images.data().data() + i * hw;
    return Tensor::from_data({1, 1, data.height(), data.width()},
                             std::vector<float>(p, p + hw));
}

std::vector<Heatmap> to_heatmaps(const io::HeatmapFile& f) {
    std::vector<Heatmap> maps(static_cast<std::size_t>(f.n));
    const std::int64_t hw = f.h * f.w;
    for (std::int64_t i = 0; i < f.n; ++i) {
        Heatmap& m = maps[static_cast<std::size_t>(i)];
        m.h = static_cast<int>(f.h);
        m.w = static_cast<int>(f.w);
        m.method = f.method;
        m.sample_id = i;
        m.values.assign(f.values.begin() + i * hw, f.values.begin() + (i + 1) * hw);
    }
    return maps;
}

int cmd_gen_data(const CommonOpts& common, std::string out_path) {
    RunConfig cfg = resolve_config(common);
    LabeledImageBatch data = generate_synthetic(cfg.data);
    io::save_dataset(out_path, data);
    write_echo(out_path, cfg);
    std::vector<std::int64_t> per_class(static_cast<std::size_t>(data.num_classes), 0);
    for (int y : data.labels) ++per_class[static_cast<std::size_t>(y)];
    std::cout << "wrote " << out_path << ": " << data.count() << " samples, "
              << data.height() << "x" << data.width() << "\n";
    for (int c = 0; c < data.num_classes; ++c) {
        std::cout << "  class " << c << ": " << per_class[static_cast<std::size_t>(c)] << "\n";
    }
    return 0;
}

int cmd_train_base(const CommonOpts& common, const std::string& data_path,
                   const std::string& test_path, const std::string& out_model) {
    RunConfig cfg = resolve_config(common);
    LabeledImageBatch train = io::load_dataset(data_path);
    LabeledImageBatch test;
    const bool have_test = !test_path.empty();
    if (have_test) test = io::load_dataset(test_path);
    TrainStats stats;
    Classifier model = train_classifier(train, cfg.train, have_test ? &test : nullptr, &stats);
    model.freeze();
    model.save(out_model, cfg.echo());
    write_echo(out_model, cfg);
    for (std::size_t e = 0; e < stats.epoch_loss.size(); ++e) {
        std::cout << "epoch " << e << " loss " << stats.epoch_loss[e] << "\n";
    }
    std::cout << "train accuracy " << stats.train_accuracy << "\n";
    if (have_test) std::cout << "test accuracy " << stats.test_accuracy << "\n";
    std::cout << "wrote " << out_model << "\n";
    return 0;
}

int cmd_train_lax(const CommonOpts& common, const std::string& model_path,
                  const std::string& data_path, const std::string& out_adapter) {
    RunConfig cfg = resolve_config(common);
    Classifier model = Classifier::load(model_path);
    if (!model.frozen()) {
        throw UsageError(model_path + " is not frozen; train-lax requires a frozen classifier");
    }
    LabeledImageBatch train = io::load_dataset(data_path);
    const std::uint64_t hash_before = model.parameter_hash();
    LaxTrainStats stats;
    LaxAdapter adapter = train_lax(model, train, cfg.lax, &stats);
    if (model.parameter_hash() != hash_before) {
        throw TrainingError("classifier weights changed during adapter training");
    }
    adapter.save(out_adapter, cfg.echo());
    write_echo(out_adapter, cfg);
    for (std::size_t e = 0; e < stats.epoch_loss.size(); ++e) {
        std::cout << "epoch " << e << " loss " << stats.epoch_loss[e] << " masked-acc "
                  << stats.epoch_masked_accuracy[e] << " mean-mask " << stats.epoch_mean_mask[e]
                  << "\n";
    }
    std::cout << "wrote " << out_adapter << "\n";
    return 0;
}

int cmd_explain(const CommonOpts& common, const std::string& method,
                const std::string& model_path, const std::string& adapter_path,
                const std::string& data_path, const std::string& out_path, std::int64_t limit) {
    RunConfig cfg = resolve_config(common);
    Classifier model = Classifier::load(model_path);
    LabeledImageBatch data = load_limited(data_path, limit);

    io::HeatmapFile out;
    out.method = method;
    out.n = data.count();
    out.h = data.height();
    out.w = data.width();
    out.values.reserve(static_cast<std::size_t>(out.n * out.h * out.w));
    auto append = [&](const Heatmap& m) {
        out.values.insert(out.values.end(), m.values.begin(), m.values.end());
    };

    if (method == "lax") {
        if (adapter_path.empty()) throw UsageError("--method lax requires --adapter");
        LaxAdapter adapter = LaxAdapter::load(adapter_path);
        for (const Heatmap& m : lax_explain(model, adapter, data)) append(m);
    } else if (method == "occlusion") {
        for (std::int64_t i = 0; i < data.count(); ++i) {
            append(occlusion_explain(model, single_image(data, i), cfg.occlusion));
        }
    } else if (method == "rise") {
        for (std::int64_t i = 0; i < data.count(); ++i) {
            RiseConfig rc = cfg.rise;
            rc.seed = cfg.rise.seed + static_cast<std::uint64_t>(i);
            append(rise_explain(model, single_image(data, i), rc));
        }
    } else if (method == "random") {
        for (std::int64_t i = 0; i < data.count(); ++i) {
            append(random_explain(static_cast<int>(data.height()), static_cast<int>(data.width()),
                                  cfg.rise.seed + static_cast<std::uint64_t>(i)));
        }
    } else {
        throw UsageError("unknown method '" + method + "' (lax|occlusion|rise|random)");
    }
    io::save_heatmaps(out_path, out);
    write_echo(out_path, cfg);
    std::cout << "wrote " << out_path << ": " << out.n << " " << method << " heatmaps\n";
    return 0;
}

int cmd_evaluate(const CommonOpts& common, const std::string& model_path,
                 const std::string& data_path, const std::vector<std::string>& heatmap_paths,
                 double alpha_min, const std::string& out_dir, std::int64_t limit) {
    RunConfig cfg = resolve_config(common);
    if (alpha_min > 0.0) cfg.metric.alpha_min = alpha_min;
    Classifier model = Classifier::load(model_path);
    LabeledImageBatch data = load_limited(data_path, limit);
    metrics::ClassifierScorer scorer(model, cfg.metric.score_mode);

    std::vector<metrics::SampleMetrics> rows;
    for (const auto& path : heatmap_paths) {
        io::HeatmapFile f = io::load_heatmaps(path);
        auto batch_rows = metrics::evaluate_batch(scorer, data, to_heatmaps(f), cfg.metric,
                                                  f.method.empty() ? path : f.method);
        rows.insert(rows.end(), batch_rows.begin(), batch_rows.end());
    }

    fs::create_directories(out_dir);
    const std::string csv_path = (fs::path(out_dir) / "report.csv").string();
    const std::string json_path = (fs::path(out_dir) / "report.json").string();
    metrics::write_csv(csv_path, rows);
    nlohmann::json report = metrics::report_json(rows, cfg.metric);
    std::ofstream jout(json_path, std::ios::binary);
    if (!jout) throw DataError("cannot write " + json_path);
    jout << report.dump(2) << "\n";
    write_echo(csv_path, cfg);
    for (auto& [name, agg] : report["methods"].items()) {
        std::cout << name << ": msi " << agg["msi"].get<double>() << " base "
                  << agg["base_score"].get<double>() << " penalty "
                  << agg["mask_penalty"].get<double>() << "\n";
    }
    std::cout << "wrote " << csv_path << " and " << json_path << "\n";
    return 0;
}

int cmd_sweep_alpha(const CommonOpts& common, const std::string& model_path,
                    const std::string& data_path, const std::string& heatmap_path,
                    const std::string& grid, std::int64_t limit) {
    RunConfig cfg = resolve_config(common);
    double start = 0.0, stop = 0.0, step = 0.0;
    if (std::sscanf(grid.c_str(), "%lf:%lf:%lf", &start, &stop, &step) != 3) {
        throw UsageError("--grid expects start:stop:step, got '" + grid + "'");
    }
    Classifier model = Classifier::load(model_path);
    LabeledImageBatch data = load_limited(data_path, limit);
    io::HeatmapFile f = io::load_heatmaps(heatmap_path);
    metrics::ClassifierScorer scorer(model, cfg.metric.score_mode);
    metrics::AlphaSweepResult res =
        metrics::sweep_alpha(scorer, data, to_heatmaps(f), cfg.metric, start, stop, step);
    std::cout << "alpha_min\tmean_msi\n";
    for (const auto& [a, m] : res.table) std::cout << a << "\t" << m << "\n";
    std::cout << "best_alpha " << res.best_alpha << "\n";
    return 0;
}

int cmd_render(const CommonOpts& common, std::int64_t index, const std::string& data_path,
               const std::string& heatmap_path, const std::string& out_path) {
    RunConfig cfg = resolve_config(common);
    LabeledImageBatch data = io::load_dataset(data_path);
    io::HeatmapFile f = io::load_heatmaps(heatmap_path);
    if (index < 0 || index >= data.count() || index >= f.n) {
        throw DataError("image index " + std::to_string(index) + " out of range");
    }
    if (f.h != data.height() || f.w != data.width()) {
        throw DataError("heatmap resolution does not match dataset");
    }
    const std::int64_t hw = data.height() * data.width();
    const float* px = data.images.data().data() + index * hw;
    png::render_panels(out_path, std::vector<float>(px, px + hw),
                       std::vector<float>(f.values.begin() + index * hw,
                                          f.values.begin() + (index + 1) * hw),
                       static_cast<int>(data.height()), static_cast<int>(data.width()),
                       cfg.metric.alpha_min);
    std::cout << "wrote " << out_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Explainability toolkit: synthetic data, classifier + adapter training, "
                 "heatmap baselines, and perturbation metrics"};
    app.require_subcommand(1);

    CommonOpts common;
    std::string out_path, data_path, test_path, model_path, adapter_path, method, grid, out_dir;
    std::vector<std::string> heatmap_paths;
    std::int64_t limit = 0, index = 0;
    double alpha_min = 0.0;

    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic digit dataset");
    add_common(gen, common);
    gen->add_option_function<std::uint64_t>(
        "--seed", [&](std::uint64_t s) { common.overrides.push_back("data.seed=" + std::to_string(s)); },
        "Dataset seed (shorthand for --set data.seed=N)");
    gen->add_option_function<std::int64_t>(
        "--count", [&](std::int64_t c) { common.overrides.push_back("data.count=" + std::to_string(c)); },
        "Sample count (shorthand for --set data.count=N)");
    gen->add_option_function<int>(
        "--size", [&](int s) { common.overrides.push_back("data.image_size=" + std::to_string(s)); },
        "Image side length (shorthand for --set data.image_size=N)");
    gen->add_option("--out", out_path, "Output dataset file")->required();

    auto* tb = app.add_subcommand("train-base", "Train and freeze the classifier");
    add_common(tb, common);
    tb->add_option("--data", data_path, "Training dataset")->required();
    tb->add_option("--test", test_path, "Optional held-out dataset");
    tb->add_option("--out-model", out_path, "Output weights file")->required();

    auto* tl = app.add_subcommand("train-lax", "Train the explanation adapter on a frozen model");
    add_common(tl, common);
    tl->add_option("--model", model_path, "Frozen classifier weights")->required();
    tl->add_option("--data", data_path, "Training dataset")->required();
    tl->add_option("--out-adapter", out_path, "Output adapter weights")->required();

    auto* ex = app.add_subcommand("explain", "Produce heatmaps for every sample");
    add_common(ex, common);
    ex->add_option("--method", method, "lax|occlusion|rise|random")->required();
    ex->add_option("--model", model_path, "Classifier weights")->required();
    ex->add_option("--adapter", adapter_path, "Adapter weights (lax only)");
    ex->add_option("--data", data_path, "Dataset")->required();
    ex->add_option("--out", out_path, "Output heatmap file")->required();
    ex->add_option("--limit", limit, "Only the first N samples (0 = all)");

    auto* ev = app.add_subcommand("evaluate", "Score heatmaps with the full metric suite");
    add_common(ev, common);
    ev->add_option("--model", model_path, "Classifier weights")->required();
    ev->add_option("--data", data_path, "Dataset")->required();
    ev->add_option("--heatmaps", heatmap_paths, "Heatmap file, one per method (repeatable)")
        ->required();
    ev->add_option("--alpha-min", alpha_min, "Override metric.alpha_min");
    ev->add_option("--out-dir", out_dir, "Report output directory")->required();
    ev->add_option("--limit", limit, "Only the first N samples (0 = all)");

    auto* sw = app.add_subcommand("sweep-alpha", "Pick the MSI-maximizing alpha_min");
    add_common(sw, common);
    sw->add_option("--model", model_path, "Classifier weights")->required();
    sw->add_option("--data", data_path, "Dataset")->required();
    sw->add_option("--heatmaps", heatmap_paths, "Heatmap file")->required()->expected(1);
    sw->add_option("--grid", grid, "start:stop:step")->required();
    sw->add_option("--limit", limit, "Only the first N samples (0 = all)");

    auto* rd = app.add_subcommand("render", "Render a 4-panel PNG for one sample");
    add_common(rd, common);
    rd->add_option("--image-index", index, "Sample index")->required();
    rd->add_option("--data", data_path, "Dataset")->required();
    rd->add_option("--heatmap", out_dir, "Heatmap file")->required();
    rd->add_option("--out", out_path, "Output PNG")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return 2;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(common, out_path);
        if (tb->parsed()) return cmd_train_base(common, data_path, test_path, out_path);
        if (tl->parsed()) return cmd_train_lax(common, model_path, data_path, out_path);
        if (ex->parsed()) {
            return cmd_explain(common, method, model_path, adapter_path, data_path, out_path,
                               limit);
        }
        if (ev->parsed()) {
            return cmd_evaluate(common, model_path, data_path, heatmap_paths, alpha_min, out_dir,
                                limit);
        }
        if (sw->parsed()) {
            return cmd_sweep_alpha(common, model_path, data_path, heatmap_paths.front(), grid,
                                   limit);
        }
        if (rd->parsed()) return cmd_render(common, index, data_path, out_dir, out_path);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const TrainingError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
