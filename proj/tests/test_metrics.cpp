#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <vector>

#include "msi/errors.hpp"
#include "msi/metrics.hpp"

using namespace msi;
using metrics::MetricConfig;
using metrics::Predicate;
using metrics::SampleMetrics;

namespace {

// Tabulated toy model: a fixed smooth function of the visible pixels,
// shared by the library path and the enumeration oracle.
class ToyScorer : public metrics::Scorer {
  public:
    std::vector<double> score(const std::vector<float>& pixels, std::int64_t n, int h, int w,
                              const std::vector<int>& labels) const override {
        (void)labels;
        const std::int64_t hw = static_cast<std::int64_t>(h) * w;
        std::vector<double> out(static_cast<std::size_t>(n));
        for (std::int64_t i = 0; i < n; ++i) {
            out[static_cast<std::size_t>(i)] = eval(pixels.data() + i * hw, hw);
        }
        return out;
    }

    static double eval(const float* px, std::int64_t hw) {
        static const double weights[9] = {0.9, -0.4, 0.25, 0.8, -0.15, 0.6, -0.7, 0.35, 0.5};
        double acc = 0.0;
        for (std::int64_t j = 0; j < hw; ++j) acc += weights[j % 9] * px[j];
        return 0.5 + 0.5 * std::tanh(acc - 0.3);
    }
};

// Independent brute-force reimplementation of every metric, written
// straight from the definitions with explicit grids and loops.
SampleMetrics oracle(const std::vector<float>& image, const std::vector<float>& heat, int h,
                     int w, const MetricConfig& cfg) {
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    auto masked_score = [&](auto&& visible) {
        std::vector<float> m(hw, static_cast<float>(cfg.baseline_fill));
        for (std::size_t i = 0; i < hw; ++i) {
            if (visible(heat[i])) m[i] = image[i];
        }
        return ToyScorer::eval(m.data(), static_cast<std::int64_t>(hw));
    };

    SampleMetrics r;
    r.alpha_min = cfg.alpha_min;
    r.show_gt = masked_score([&](double v) { return v > cfg.alpha_min; });
    r.show_lt = masked_score([&](double v) { return v <= cfg.alpha_min; });

    std::vector<double> grid;
    for (int i = 0;; ++i) {
        const double a = cfg.alpha_min + i * cfg.alpha_step;
        if (a >= 1.0 - 1e-12) break;
        grid.push_back(a);
    }
    grid.push_back(1.0);
    std::vector<double> fs, fh;
    for (double a : grid) {
        fs.push_back(masked_score([&](double v) { return v > a; }));
        fh.push_back(masked_score([&](double v) { return v > cfg.alpha_min && v <= a; }));
    }
    auto auc = [&](const std::vector<double>& f) {
        double area = 0.0;
        for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
            area += 0.5 * (f[i] + f[i + 1]) * (grid[i + 1] - grid[i]);
        }
        return area / (grid.back() - grid.front());
    };
    r.auc_show = auc(fs);
    r.auc_hide = auc(fh);
    r.base_score = 0.5 * ((r.show_gt - r.show_lt) + (r.auc_show - r.auc_hide));

    std::size_t ge = 0;
    for (float v : heat) {
        if (static_cast<double>(v) >= cfg.alpha_min) ++ge;
    }
    r.mask_penalty = static_cast<double>(ge) / static_cast<double>(hw);
    r.msi = r.base_score - r.mask_penalty;

    const double full = ToyScorer::eval(image.data(), static_cast<std::int64_t>(hw));
    std::vector<double> down;
    for (int i = 0;; ++i) {
        const double a = 1.0 - i * cfg.alpha_step;
        if (a <= 1e-12) break;
        down.push_back(a);
    }
    down.push_back(0.0);
    double ins = 0.0, del = 0.0;
    for (double a : down) {
        ins += masked_score([&](double v) { return v > a; });
        del += masked_score([&](double v) { return v <= a; });
    }
    r.morf_ins_px = ins / static_cast<double>(down.size());
    r.morf_del_px = del / static_cast<double>(down.size());
    r.fid_minus_px = full - r.morf_ins_px;
    r.fid_plus_px = full - r.morf_del_px;

    std::vector<std::size_t> order(hw);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return heat[a] > heat[b]; });
    std::vector<double> fracs;
    for (int i = 0;; ++i) {
        const double a = 1.0 - i * cfg.percent_step;
        if (a <= 1e-12) break;
        fracs.push_back(1.0 - a);
    }
    fracs.push_back(1.0);
    double ip = 0.0, dp = 0.0;
    for (double k : fracs) {
        const std::size_t c =
            static_cast<std::size_t>(std::llround(k * static_cast<double>(hw)));
        std::vector<float> mi(hw, static_cast<float>(cfg.baseline_fill));
        std::vector<float> md(hw, static_cast<float>(cfg.baseline_fill));
        for (std::size_t i = 0; i < hw; ++i) {
            (i < c ? mi : md)[order[i]] = image[order[i]];
        }
        ip += ToyScorer::eval(mi.data(), static_cast<std::int64_t>(hw));
        dp += ToyScorer::eval(md.data(), static_cast<std::int64_t>(hw));
    }
    r.morf_ins_pct = ip / static_cast<double>(fracs.size());
    r.morf_del_pct = dp / static_cast<double>(fracs.size());
    r.fid_minus_pct = full - r.morf_ins_pct;
    r.fid_plus_pct = full - r.morf_del_pct;
    return r;
}

void compare(const SampleMetrics& got, const SampleMetrics& want) {
    CHECK(std::abs(got.show_gt - want.show_gt) < 1e-9);
    CHECK(std::abs(got.show_lt - want.show_lt) < 1e-9);
    CHECK(std::abs(got.auc_show - want.auc_show) < 1e-9);
    CHECK(std::abs(got.auc_hide - want.auc_hide) < 1e-9);
    CHECK(std::abs(got.base_score - want.base_score) < 1e-9);
    CHECK(std::abs(got.mask_penalty - want.mask_penalty) < 1e-9);
    CHECK(std::abs(got.msi - want.msi) < 1e-9);
    CHECK(std::abs(got.morf_ins_px - want.morf_ins_px) < 1e-9);
    CHECK(std::abs(got.morf_del_px - want.morf_del_px) < 1e-9);
    CHECK(std::abs(got.morf_ins_pct - want.morf_ins_pct) < 1e-9);
    CHECK(std::abs(got.morf_del_pct - want.morf_del_pct) < 1e-9);
    CHECK(std::abs(got.fid_minus_px - want.fid_minus_px) < 1e-9);
    CHECK(std::abs(got.fid_plus_px - want.fid_plus_px) < 1e-9);
    CHECK(std::abs(got.fid_minus_pct - want.fid_minus_pct) < 1e-9);
    CHECK(std::abs(got.fid_plus_pct - want.fid_plus_pct) < 1e-9);
}

std::vector<float> nth_heatmap(std::uint64_t index, std::size_t hw) {
    static const float levels[5] = {0.0f, 0.25f, 0.5f, 0.75f, 1.0f};
    std::vector<float> heat(hw);
    for (std::size_t i = 0; i < hw; ++i) {
        heat[i] = levels[index % 5];
        index /= 5;
    }
    return heat;
}

}  // namespace

TEST_CASE("apply_mask follows the Show/Hide boundary conventions") {
    const std::vector<float> img{1, 2, 3, 4};
    const std::vector<float> heat{0.9f, 0.1f, 0.6f, 0.4f};
    CHECK(metrics::apply_mask(img, heat, Predicate::above(0.5), 0.0f) ==
          std::vector<float>{1, 0, 3, 0});
    CHECK(metrics::apply_mask(img, heat, Predicate::at_or_below(0.5), 0.0f) ==
          std::vector<float>{0, 2, 0, 4});
    // Strict >: a heatmap maxing at 1.0 yields a fully-baseline image.
    CHECK(metrics::apply_mask(img, {1, 1, 1, 1}, Predicate::above(1.0), 0.5f) ==
          std::vector<float>{0.5f, 0.5f, 0.5f, 0.5f});
    CHECK(metrics::apply_mask(img, {0.3f, 0.4f, 0.5f, 0.6f}, Predicate::above(0.0), 0.0f) == img);
    // Hide(>1.0), i.e. band(alpha_min, 1.0], equals Show(>alpha_min).
    CHECK(metrics::apply_mask(img, heat, Predicate::band(0.5, 1.0), 0.0f) ==
          metrics::apply_mask(img, heat, Predicate::above(0.5), 0.0f));
    // Band keeps only the (alpha_min, alpha] slice.
    CHECK(metrics::apply_mask(img, heat, Predicate::band(0.5, 0.7), 0.0f) ==
          std::vector<float>{0, 0, 3, 0});
    CHECK_THROWS_AS(metrics::apply_mask(img, {0.5f}, Predicate::above(0.5), 0.0f),
                    DimensionError);
}

TEST_CASE("msi subtraction anchors") {
    // Double subtraction reproduces the published three-decimal values to
    // within one rounding step.
    CHECK(std::abs((0.864 - 0.247) - 0.617) <= 1e-15);
    CHECK(std::abs((0.868 - 0.887) - (-0.019)) <= 1e-15);
    CHECK(0.0 - 0.0 == 0.0);
}

TEST_CASE("all 625 2x2 heatmaps match the enumeration oracle") {
    const std::vector<float> image{0.8f, 0.2f, 0.6f, 1.0f};
    ToyScorer scorer;
    MetricConfig cfg;
    for (std::uint64_t idx = 0; idx < 625; ++idx) {
        const std::vector<float> heat = nth_heatmap(idx, 4);
        SampleMetrics got = metrics::evaluate_sample(scorer, image, 2, 2, 0, heat, cfg);
        compare(got, oracle(image, heat, 2, 2, cfg));
        CHECK(got.msi == got.base_score - got.mask_penalty);  // exact subtraction
        CHECK(got.base_score >= -1.0 - 1e-12);
        CHECK(got.base_score <= 1.0 + 1e-12);
        CHECK(got.mask_penalty >= 0.0);
        CHECK(got.mask_penalty <= 1.0);
        CHECK(got.msi >= -2.0 - 1e-12);
        CHECK(got.msi <= 1.0 + 1e-12);
    }
}

TEST_CASE("a strided sample of 3x3 heatmaps matches the enumeration oracle") {
    const std::vector<float> image{0.1f, 0.9f, 0.4f, 0.7f, 0.2f, 1.0f, 0.5f, 0.3f, 0.8f};
    ToyScorer scorer;
    MetricConfig cfg;
    const std::uint64_t total = 1953125;  // 5^9
    // Deterministic stride through the full space plus the all-equal maps.
    std::vector<std::uint64_t> picks;
    for (std::uint64_t idx = 0; idx < total; idx += 391) picks.push_back(idx);
    for (std::uint64_t idx : {std::uint64_t{0}, total - 1}) picks.push_back(idx);
    for (std::uint64_t idx : picks) {
        const std::vector<float> heat = nth_heatmap(idx, 9);
        compare(metrics::evaluate_sample(scorer, image, 3, 3, 0, heat, cfg),
                oracle(image, heat, 3, 3, cfg));
    }
}

TEST_CASE("oracle equivalence holds at non-default thresholds and fills") {
    const std::vector<float> image{0.3f, 0.6f, 0.9f, 0.5f};
    ToyScorer scorer;
    MetricConfig cfg;
    cfg.alpha_min = 0.3;
    cfg.alpha_step = 0.05;
    cfg.percent_step = 0.1;
    cfg.baseline_fill = 0.25;
    for (std::uint64_t idx = 0; idx < 625; idx += 7) {
        const std::vector<float> heat = nth_heatmap(idx, 4);
        compare(metrics::evaluate_sample(scorer, image, 2, 2, 0, heat, cfg),
                oracle(image, heat, 2, 2, cfg));
    }
}

TEST_CASE("mask penalty counts values at or above the threshold") {
    ToyScorer scorer;
    MetricConfig cfg;
    const std::vector<float> image(16, 0.5f);
    std::vector<float> heat(16, 0.0f);
    SampleMetrics zero = metrics::evaluate_sample(scorer, image, 4, 4, 0, heat, cfg);
    CHECK(zero.mask_penalty == 0.0);
    heat.assign(16, 1.0f);
    CHECK(metrics::evaluate_sample(scorer, image, 4, 4, 0, heat, cfg).mask_penalty == 1.0);
    heat.assign(16, 0.0f);
    heat[0] = 0.5f;  // equality counts toward the penalty
    heat[1] = 0.75f;
    heat[2] = 1.0f;
    heat[3] = 0.49f;
    CHECK(metrics::evaluate_sample(scorer, image, 4, 4, 0, heat, cfg).mask_penalty ==
          doctest::Approx(3.0 / 16.0));
}

TEST_CASE("config validation") {
    ToyScorer scorer;
    const std::vector<float> image{0.5f, 0.5f, 0.5f, 0.5f};
    const std::vector<float> heat{0.5f, 0.5f, 0.5f, 0.5f};
    MetricConfig bad;
    bad.alpha_min = 1.2;
    CHECK_THROWS_AS(metrics::evaluate_sample(scorer, image, 2, 2, 0, heat, bad), ConfigError);
    bad = MetricConfig{};
    bad.alpha_step = 0.0;
    CHECK_THROWS_AS(metrics::evaluate_sample(scorer, image, 2, 2, 0, heat, bad), ConfigError);
}

TEST_CASE("heatmaps outside [0,1] are rejected") {
    ToyScorer scorer;
    MetricConfig cfg;
    CHECK_THROWS_AS(
        metrics::evaluate_sample(scorer, {0.5f, 0.5f, 0.5f, 0.5f}, 2, 2, 0,
                                 {0.5f, 1.5f, 0.5f, 0.5f}, cfg),
        DataError);
}

TEST_CASE("aggregate means and csv/json reports") {
    ToyScorer scorer;
    MetricConfig cfg;
    std::vector<SampleMetrics> rows;
    for (std::uint64_t idx : {7u, 77u, 777u}) {
        SampleMetrics r = metrics::evaluate_sample(scorer, {0.8f, 0.2f, 0.6f, 1.0f}, 2, 2, 0,
                                                   nth_heatmap(idx, 4), cfg);
        r.sample_id = static_cast<std::int64_t>(idx);
        r.method = "toy";
        rows.push_back(r);
    }
    SampleMetrics agg = metrics::aggregate(rows);
    double want_msi = (rows[0].msi + rows[1].msi + rows[2].msi) / 3.0;
    double want_base = (rows[0].base_score + rows[1].base_score + rows[2].base_score) / 3.0;
    double want_pen = (rows[0].mask_penalty + rows[1].mask_penalty + rows[2].mask_penalty) / 3.0;
    CHECK(agg.base_score == doctest::Approx(want_base).epsilon(1e-12));
    CHECK(agg.msi == agg.base_score - agg.mask_penalty);
    CHECK(agg.msi == doctest::Approx(want_msi).epsilon(1e-9));
    CHECK(agg.mask_penalty == doctest::Approx(want_pen).epsilon(1e-12));

    nlohmann::json rep = metrics::report_json(rows, cfg);
    CHECK(rep["methods"].contains("toy"));
    CHECK(rep["methods"]["toy"]["count"] == 3);
    CHECK(rep["config"]["alpha_min"] == 0.5);

    metrics::write_csv("report.tmp", rows);
    std::ifstream in("report.tmp");
    std::string header;
    std::getline(in, header);
    CHECK(header.find("sample_id,method,alpha_min,show_gt") == 0);
    int lines = 0;
    std::string line;
    while (std::getline(in, line)) ++lines;
    CHECK(lines == 3);
    std::remove("report.tmp");
}

TEST_CASE("alpha sweep picks the penalty cliff and breaks ties low") {
    ToyScorer scorer;
    MetricConfig cfg;

    LabeledImageBatch data;
    data.images = Tensor::from_data({1, 1, 2, 2}, {0.8f, 0.2f, 0.6f, 1.0f});
    data.labels = {0};

    // Uniform heat 0.6: penalty is 1 below 0.6 and 0 above it, so the
    // best alpha_min is the smallest grid point above 0.6.
    Heatmap uniform;
    uniform.h = uniform.w = 2;
    uniform.values = {0.6f, 0.6f, 0.6f, 0.6f};
    metrics::AlphaSweepResult res =
        metrics::sweep_alpha(scorer, data, {uniform}, cfg, 0.3, 0.9, 0.1);
    CHECK(res.table.size() == 7);
    CHECK(res.best_alpha == doctest::Approx(0.7));

    // Binary heat: only the truncated AUC's final trapezoid step depends
    // on alpha_min, so MSI is nearly flat and strictly maximal at the
    // start of the grid.
    Heatmap binary;
    binary.h = binary.w = 2;
    binary.values = {1.0f, 0.0f, 1.0f, 0.0f};
    metrics::AlphaSweepResult flat =
        metrics::sweep_alpha(scorer, data, {binary}, cfg, 0.3, 0.7, 0.1);
    for (const auto& [a, m] : flat.table) {
        CHECK(std::abs(m - flat.table.front().second) < 0.05);
    }
    CHECK(flat.best_alpha == doctest::Approx(0.3));

    CHECK_THROWS_AS(metrics::sweep_alpha(scorer, data, {binary}, cfg, 0.9, 0.3, 0.1),
                    ConfigError);

    // Single-point grid returns that point.
    metrics::AlphaSweepResult one =
        metrics::sweep_alpha(scorer, data, {binary}, cfg, 0.5, 0.5, 0.1);
    CHECK(one.table.size() == 1);
    CHECK(one.best_alpha == doctest::Approx(0.5));
}

TEST_CASE("trapezoid grid edge cases") {
    ToyScorer scorer;
    MetricConfig cfg;
    cfg.alpha_min = 0.98;  // grid collapses to {0.98, 1.0}
    const std::vector<float> image{0.8f, 0.2f, 0.6f, 1.0f};
    const std::vector<float> heat{1.0f, 0.0f, 0.99f, 0.5f};
    compare(metrics::evaluate_sample(scorer, image, 2, 2, 0, heat, cfg),
            oracle(image, heat, 2, 2, cfg));
}
