#include "msi/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "msi/errors.hpp"

namespace msi::metrics {

namespace {

void validate_config(const MetricConfig& cfg) {
    if (!(cfg.alpha_min > 0.0 && cfg.alpha_min < 1.0)) {
        throw ConfigError("alpha_min must be in (0,1)");
    }
    if (!(cfg.alpha_step > 0.0 && cfg.alpha_step <= 1.0 - cfg.alpha_min + 1e-12)) {
        throw ConfigError("alpha_step must be in (0, 1 - alpha_min]");
    }
    if (!(cfg.percent_step > 0.0 && cfg.percent_step <= 1.0)) {
        throw ConfigError("percent_step must be in (0,1]");
    }
}

// Ascending alpha grid {alpha_min, alpha_min+step, ..., 1.0}.
std::vector<double> show_grid(double alpha_min, double step) {
    std::vector<double> g;
    for (int i = 0;; ++i) {
        const double a = alpha_min + i * step;
        if (a >= 1.0 - 1e-12) break;
        g.push_back(a);
    }
    g.push_back(1.0);
    if (g.size() < 2) throw ConfigError("empty alpha grid");
    return g;
}

// Descending threshold grid {1.0, 1-step, ..., 0.0} shared by the MoRF
// pixel variant and (as fractions) the percentage variant.
std::vector<double> morf_grid(double step) {
    std::vector<double> g;
    for (int i = 0;; ++i) {
        const double a = 1.0 - i * step;
        if (a <= 1e-12) break;
        g.push_back(a);
    }
    g.push_back(0.0);
    return g;
}

double trapezoid_auc(const std::vector<double>& alphas, const double* f) {
    double area = 0.0;
    for (std::size_t i = 0; i + 1 < alphas.size(); ++i) {
        area += 0.5 * (f[i] + f[i + 1]) * (alphas[i + 1] - alphas[i]);
    }
    return area / (alphas.back() - alphas.front());
}

double mean(const double* f, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += f[i];
    return s / static_cast<double>(n);
}

SampleMetrics evaluate_one(const Scorer& scorer, const std::vector<float>& image, int h, int w,
                           int label, const std::vector<float>& heat, const MetricConfig& cfg,
                           bool with_curve_metrics) {
    validate_config(cfg);
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    if (image.size() != hw || heat.size() != hw) {
        throw DimensionError("image/heatmap size does not match " + std::to_string(h) + "x" +
                             std::to_string(w));
    }
    for (float v : heat) {
        if (!(v >= 0.0f && v <= 1.0f)) throw DataError("heatmap value outside [0,1]");
    }

    const std::vector<double> alphas = show_grid(cfg.alpha_min, cfg.alpha_step);
    const std::vector<double> morf = morf_grid(cfg.alpha_step);
    const std::vector<double> pct = morf_grid(cfg.percent_step);
    const std::size_t na = alphas.size(), nm = morf.size(), np = pct.size();
    const float fill = static_cast<float>(cfg.baseline_fill);

    std::vector<std::vector<float>> variants;
    variants.reserve(3 + 2 * na + (with_curve_metrics ? 2 * (nm + np) : 0));
    variants.push_back(image);                                                          // full
    variants.push_back(apply_mask(image, heat, Predicate::above(cfg.alpha_min), fill)); // show_gt
    variants.push_back(apply_mask(image, heat, Predicate::at_or_below(cfg.alpha_min), fill));
    for (double a : alphas) variants.push_back(apply_mask(image, heat, Predicate::above(a), fill));
    for (double a : alphas) {
        variants.push_back(apply_mask(image, heat, Predicate::band(cfg.alpha_min, a), fill));
    }
    if (with_curve_metrics) {
        // MoRF pixel variant: reveal (insertion) / keep (deletion) by
        // thresholding heatmap values directly.
        for (double a : morf) variants.push_back(apply_mask(image, heat, Predicate::above(a), fill));
        for (double a : morf) {
            variants.push_back(apply_mask(image, heat, Predicate::at_or_below(a), fill));
        }
        // Percentage variant: top-k% by heat, ties broken row-major.
        std::vector<std::size_t> order(hw);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return heat[a] > heat[b]; });
        auto topk_mask = [&](double frac, bool keep_top) {
            const std::size_t k = static_cast<std::size_t>(
                std::llround(frac * static_cast<double>(hw)));
            std::vector<float> out(hw, fill);
            if (keep_top) {
                for (std::size_t i = 0; i < k; ++i) out[order[i]] = image[order[i]];
            } else {
                for (std::size_t i = k; i < hw; ++i) out[order[i]] = image[order[i]];
            }
            return out;
        };
        for (double a : morf_grid(cfg.percent_step)) {
            variants.push_back(topk_mask(1.0 - a, true));  // insertion: k ascending 0 -> 1
        }
        for (double a : morf_grid(cfg.percent_step)) {
            variants.push_back(topk_mask(1.0 - a, false));  // deletion: remove top k
        }
    }

    const std::int64_t n = static_cast<std::int64_t>(variants.size());
    std::vector<float> batch(static_cast<std::size_t>(n) * hw);
    for (std::int64_t i = 0; i < n; ++i) {
        std::copy(variants[static_cast<std::size_t>(i)].begin(),
                  variants[static_cast<std::size_t>(i)].end(), batch.begin() + i * hw);
    }
    const std::vector<double> s =
        scorer.score(batch, n, h, w, std::vector<int>(static_cast<std::size_t>(n), label));

    SampleMetrics r;
    r.alpha_min = cfg.alpha_min;
    const double s_full = s[0];
    r.show_gt = s[1];
    r.show_lt = s[2];
    std::size_t off = 3;
    r.auc_show = trapezoid_auc(alphas, s.data() + off);
    off += na;
    r.auc_hide = trapezoid_auc(alphas, s.data() + off);
    off += na;
    r.base_score = 0.5 * ((r.show_gt - r.show_lt) + (r.auc_show - r.auc_hide));
    std::size_t relevant = 0;
    for (float v : heat) {
        if (static_cast<double>(v) >= cfg.alpha_min) ++relevant;
    }
    r.mask_penalty = static_cast<double>(relevant) / static_cast<double>(hw);
    r.msi = r.base_score - r.mask_penalty;
    if (with_curve_metrics) {
        r.morf_ins_px = mean(s.data() + off, nm);
        r.fid_minus_px = s_full - r.morf_ins_px;
        off += nm;
        r.morf_del_px = mean(s.data() + off, nm);
        r.fid_plus_px = s_full - r.morf_del_px;
        off += nm;
        r.morf_ins_pct = mean(s.data() + off, np);
        r.fid_minus_pct = s_full - r.morf_ins_pct;
        off += np;
        r.morf_del_pct = mean(s.data() + off, np);
        r.fid_plus_pct = s_full - r.morf_del_pct;
    }
    return r;
}

std::vector<float> image_row(const LabeledImageBatch& data, std::int64_t i) {
    const std::int64_t hw = data.height() * data.width();
    const float* p = data.images.data().data() + i * hw;
    return std::vector<float>(p, p + hw);
}

}  // namespace

std::vector<float> apply_mask(const std::vector<float>& image, const std::vector<float>& heat,
                              const Predicate& pred, float fill) {
    if (image.size() != heat.size()) {
        throw DimensionError("apply_mask: image and heatmap sizes differ");
    }
    std::vector<float> out(image.size(), fill);
    for (std::size_t i = 0; i < image.size(); ++i) {
        if (pred.visible(heat[i])) out[i] = image[i];
    }
    return out;
}

std::vector<double> ClassifierScorer::score(const std::vector<float>& pixels, std::int64_t n,
                                            int h, int w, const std::vector<int>& labels) const {
    if (n <= 0) throw DataError("scorer got an empty batch");
    const std::int64_t hw = static_cast<std::int64_t>(h) * w;
    std::vector<double> out(static_cast<std::size_t>(n));
    for (std::int64_t start = 0; start < n; start += batch_size_) {
        const std::int64_t len = std::min<std::int64_t>(batch_size_, n - start);
        Tensor images = Tensor::from_data(
            {len, 1, h, w},
            std::vector<float>(pixels.begin() + start * hw, pixels.begin() + (start + len) * hw));
        Prediction p = model_.predict(images);
        const std::int64_t classes = p.probs.shape()[1];
        const float* probs = p.probs.data().data();
        for (std::int64_t i = 0; i < len; ++i) {
            const int label = labels[static_cast<std::size_t>(start + i)];
            if (label < 0 || label >= classes) throw DataError("label out of range in scorer");
            out[static_cast<std::size_t>(start + i)] =
                mode_ == ScoreMode::accuracy
                    ? (p.argmax[static_cast<std::size_t>(i)] == label ? 1.0 : 0.0)
                    : static_cast<double>(probs[i * classes + label]);
        }
    }
    return out;
}

SampleMetrics evaluate_sample(const Scorer& scorer, const std::vector<float>& image, int h, int w,
                              int label, const std::vector<float>& heat, const MetricConfig& cfg) {
    return evaluate_one(scorer, image, h, w, label, heat, cfg, /*with_curve_metrics=*/true);
}

std::vector<SampleMetrics> evaluate_batch(const Scorer& scorer, const LabeledImageBatch& data,
                                          const std::vector<Heatmap>& heatmaps,
                                          const MetricConfig& cfg, const std::string& method) {
    if (static_cast<std::int64_t>(heatmaps.size()) != data.count()) {
        throw DataError("heatmap count " + std::to_string(heatmaps.size()) +
                        " does not match dataset count " + std::to_string(data.count()));
    }
    std::vector<SampleMetrics> rows;
    rows.reserve(heatmaps.size());
    for (std::int64_t i = 0; i < data.count(); ++i) {
        const Heatmap& hm = heatmaps[static_cast<std::size_t>(i)];
        SampleMetrics r = evaluate_sample(scorer, image_row(data, i),
                                          static_cast<int>(data.height()),
                                          static_cast<int>(data.width()),
                                          data.labels[static_cast<std::size_t>(i)], hm.values, cfg);
        r.sample_id = i;
        r.method = method;
        rows.push_back(r);
    }
    return rows;
}

SampleMetrics aggregate(const std::vector<SampleMetrics>& rows) {
    if (rows.empty()) throw DataError("cannot aggregate an empty report");
    SampleMetrics m;
    m.method = rows.front().method;
    m.alpha_min = rows.front().alpha_min;
    const double inv = 1.0 / static_cast<double>(rows.size());
    for (const auto& r : rows) {
        m.show_gt += r.show_gt;
        m.show_lt += r.show_lt;
        m.auc_show += r.auc_show;
        m.auc_hide += r.auc_hide;
        m.base_score += r.base_score;
        m.mask_penalty += r.mask_penalty;
        m.morf_ins_px += r.morf_ins_px;
        m.morf_del_px += r.morf_del_px;
        m.morf_ins_pct += r.morf_ins_pct;
        m.morf_del_pct += r.morf_del_pct;
        m.fid_minus_px += r.fid_minus_px;
        m.fid_plus_px += r.fid_plus_px;
        m.fid_minus_pct += r.fid_minus_pct;
        m.fid_plus_pct += r.fid_plus_pct;
    }
    m.show_gt *= inv;
    m.show_lt *= inv;
    m.auc_show *= inv;
    m.auc_hide *= inv;
    m.base_score *= inv;
    m.mask_penalty *= inv;
    m.msi = m.base_score - m.mask_penalty;
    m.morf_ins_px *= inv;
    m.morf_del_px *= inv;
    m.morf_ins_pct *= inv;
    m.morf_del_pct *= inv;
    m.fid_minus_px *= inv;
    m.fid_plus_px *= inv;
    m.fid_minus_pct *= inv;
    m.fid_plus_pct *= inv;
    return m;
}

namespace {

nlohmann::json row_json(const SampleMetrics& m) {
    return {{"show_gt", m.show_gt},           {"show_lt", m.show_lt},
            {"auc_show", m.auc_show},         {"auc_hide", m.auc_hide},
            {"base_score", m.base_score},     {"mask_penalty", m.mask_penalty},
            {"msi", m.msi},                   {"morf_ins_px", m.morf_ins_px},
            {"morf_del_px", m.morf_del_px},   {"morf_ins_pct", m.morf_ins_pct},
            {"morf_del_pct", m.morf_del_pct}, {"fid_minus_px", m.fid_minus_px},
            {"fid_plus_px", m.fid_plus_px},   {"fid_minus_pct", m.fid_minus_pct},
            {"fid_plus_pct", m.fid_plus_pct}};
}

}  // namespace

void write_csv(const std::string& path, const std::vector<SampleMetrics>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open " + path + " for writing");
    out << "sample_id,method,alpha_min,show_gt,show_lt,auc_show,auc_hide,base_score,"
           "mask_penalty,msi,morf_ins_px,morf_del_px,morf_ins_pct,morf_del_pct,"
           "fid_minus_px,fid_plus_px,fid_minus_pct,fid_plus_pct\n";
    out << std::setprecision(10);
    for (const auto& r : rows) {
        out << r.sample_id << ',' << r.method << ',' << r.alpha_min << ',' << r.show_gt << ','
            << r.show_lt << ',' << r.auc_show << ',' << r.auc_hide << ',' << r.base_score << ','
            << r.mask_penalty << ',' << r.msi << ',' << r.morf_ins_px << ',' << r.morf_del_px
            << ',' << r.morf_ins_pct << ',' << r.morf_del_pct << ',' << r.fid_minus_px << ','
            << r.fid_plus_px << ',' << r.fid_minus_pct << ',' << r.fid_plus_pct << '\n';
    }
    if (!out) throw DataError("failed while writing " + path);
}

nlohmann::json report_json(const std::vector<SampleMetrics>& rows, const MetricConfig& cfg) {
    nlohmann::json methods = nlohmann::json::object();
    std::vector<std::string> seen;
    for (const auto& r : rows) {
        if (std::find(seen.begin(), seen.end(), r.method) == seen.end()) seen.push_back(r.method);
    }
    for (const auto& name : seen) {
        std::vector<SampleMetrics> group;
        for (const auto& r : rows) {
            if (r.method == name) group.push_back(r);
        }
        nlohmann::json j = row_json(aggregate(group));
        j["count"] = group.size();
        methods[name] = j;
    }
    return {{"config",
             {{"alpha_min", cfg.alpha_min},
              {"alpha_step", cfg.alpha_step},
              {"percent_step", cfg.percent_step},
              {"baseline_fill", cfg.baseline_fill},
              {"score_mode", cfg.score_mode == ScoreMode::accuracy ? "accuracy" : "probability"}}},
            {"methods", methods}};
}

AlphaSweepResult sweep_alpha(const Scorer& scorer, const LabeledImageBatch& data,
                             const std::vector<Heatmap>& heatmaps, const MetricConfig& cfg,
                             double start, double stop, double step) {
    if (!(start > 0.0 && stop < 1.0 && start <= stop && step > 0.0)) {
        throw ConfigError("alpha sweep grid must satisfy 0 < start <= stop < 1, step > 0");
    }
    if (static_cast<std::int64_t>(heatmaps.size()) != data.count() || data.count() == 0) {
        throw DataError("alpha sweep needs matching nonempty heatmaps and data");
    }
    AlphaSweepResult res;
    for (int i = 0;; ++i) {
        const double a = start + i * step;
        if (a > stop + 1e-12) break;
        MetricConfig c = cfg;
        c.alpha_min = a;
        double total = 0.0;
        for (std::int64_t s = 0; s < data.count(); ++s) {
            // Only the base score and penalty depend on alpha_min, so the
            // MoRF/Fid curves are skipped during the sweep.
            total += evaluate_one(scorer, image_row(data, s), static_cast<int>(data.height()),
                                  static_cast<int>(data.width()),
                                  data.labels[static_cast<std::size_t>(s)],
                                  heatmaps[static_cast<std::size_t>(s)].values, c,
                                  /*with_curve_metrics=*/false)
                         .msi;
        }
        res.table.emplace_back(a, total / static_cast<double>(data.count()));
    }
    if (res.table.empty()) throw ConfigError("alpha sweep grid is empty");
    res.best_alpha = res.table.front().first;
    double best = res.table.front().second;
    for (const auto& [a, m] : res.table) {
        if (m > best + 1e-12) {
            best = m;
            res.best_alpha = a;
        }
    }
    return res;
}

}  // namespace msi::metrics
