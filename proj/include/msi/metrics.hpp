#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "msi/datagen.hpp"
#include "msi/explainers.hpp"
#include "msi/model.hpp"

namespace msi::metrics {

enum class ScoreMode { accuracy, probability };

struct MetricConfig {
    double alpha_min = 0.5;
    double alpha_step = 0.02;    // perturbation-curve grid
    double percent_step = 0.02;  // percentage-variant grid
    double baseline_fill = 0.0;
    ScoreMode score_mode = ScoreMode::accuracy;
};

// Visibility predicate used by apply_mask: which heatmap values keep
// their pixel, everything else is set to the baseline fill.
struct Predicate {
    enum Kind { kAbove, kAtOrBelow, kBand } kind = kAbove;
    double lo = 0.0;  // band lower bound (exclusive)
    double hi = 0.0;  // threshold / band upper bound (inclusive for band)

    static Predicate above(double a) { return {kAbove, 0.0, a}; }
    static Predicate at_or_below(double a) { return {kAtOrBelow, 0.0, a}; }
    static Predicate band(double lo, double hi) { return {kBand, lo, hi}; }
    bool visible(double v) const {
        switch (kind) {
            case kAbove: return v > hi;
            case kAtOrBelow: return v <= hi;
            default: return v > lo && v <= hi;
        }
    }
};

std::vector<float> apply_mask(const std::vector<float>& image, const std::vector<float>& heat,
                              const Predicate& pred, float fill);

// Scoring backend. Metrics are written against this interface so oracle
// tests can plug in tabulated toy models.
class Scorer {
  public:
    virtual ~Scorer() = default;
    // One score per sample for a batch of flattened [n, h*w] images:
    // accuracy mode gives 0/1 correctness, probability mode the softmax
    // probability of the true class.
    virtual std::vector<double> score(const std::vector<float>& pixels, std::int64_t n, int h,
                                      int w, const std::vector<int>& labels) const = 0;
};

class ClassifierScorer : public Scorer {
  public:
    ClassifierScorer(const Classifier& model, ScoreMode mode, int batch_size = 256)
        : model_(model), mode_(mode), batch_size_(batch_size) {}
    std::vector<double> score(const std::vector<float>& pixels, std::int64_t n, int h, int w,
                              const std::vector<int>& labels) const override;

  private:
    const Classifier& model_;
    ScoreMode mode_;
    int batch_size_;
};

struct SampleMetrics {
    std::int64_t sample_id = -1;
    std::string method;
    double alpha_min = 0.0;
    double show_gt = 0.0;   // Show(>alpha_min)
    double show_lt = 0.0;   // Show(<=alpha_min)
    double auc_show = 0.0;
    double auc_hide = 0.0;
    double base_score = 0.0;
    double mask_penalty = 0.0;
    double msi = 0.0;
    double morf_ins_px = 0.0;
    double morf_del_px = 0.0;
    double morf_ins_pct = 0.0;
    double morf_del_pct = 0.0;
    double fid_minus_px = 0.0;
    double fid_plus_px = 0.0;
    double fid_minus_pct = 0.0;
    double fid_plus_pct = 0.0;
};

// All metrics for one (image, heatmap) pair; every masked variant is
// scored in a single Scorer call.
SampleMetrics evaluate_sample(const Scorer& scorer, const std::vector<float>& image, int h, int w,
                              int label, const std::vector<float>& heat, const MetricConfig& cfg);

std::vector<SampleMetrics> evaluate_batch(const Scorer& scorer, const LabeledImageBatch& data,
                                          const std::vector<Heatmap>& heatmaps,
                                          const MetricConfig& cfg, const std::string& method);

// Column means over rows sharing one method tag.
SampleMetrics aggregate(const std::vector<SampleMetrics>& rows);

void write_csv(const std::string& path, const std::vector<SampleMetrics>& rows);
nlohmann::json report_json(const std::vector<SampleMetrics>& rows, const MetricConfig& cfg);

struct AlphaSweepResult {
    double best_alpha = 0.0;
    std::vector<std::pair<double, double>> table;  // (alpha_min, mean msi)
};

// Mean-MSI maximizing alpha_min over [start, stop] by step; ties go to
// the smaller threshold (larger relevant region).
AlphaSweepResult sweep_alpha(const Scorer& scorer, const LabeledImageBatch& data,
                             const std::vector<Heatmap>& heatmaps, const MetricConfig& cfg,
                             double start, double stop, double step);

}  // namespace msi::metrics
