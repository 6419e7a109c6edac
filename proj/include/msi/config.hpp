#pragma once

#include <map>
#include <string>

#include "msi/datagen.hpp"
#include "msi/explainers.hpp"
#include "msi/metrics.hpp"
#include "msi/model.hpp"

namespace msi {

// All tunables for the pipeline in one place. Keys in config files are
// "section.key" pairs, one per line ("data.count = 5000"); CLI flags
// mirror the same names and win over the file, which wins over defaults.
struct RunConfig {
    DatasetSpec data;
    TrainConfig train;
    LaxConfig lax;
    metrics::MetricConfig metric;
    OcclusionConfig occlusion;
    RiseConfig rise;
    std::uint64_t seed = 0;

    // Applies one "section.key" assignment; unknown keys or unparsable
    // values raise ConfigError.
    void set(const std::string& key, const std::string& value);
    // Fully resolved config as the same diffable key=value text.
    std::string echo() const;
};

// Parses "key = value" lines ('#' comments, blank lines allowed) on top
// of the given defaults.
RunConfig load_config(const std::string& path, RunConfig base = {});
RunConfig parse_config_text(const std::string& text, RunConfig base = {});

}  // namespace msi
