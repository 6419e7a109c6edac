#include "msi/config.hpp"

#include <fstream>
#include <functional>
#include <sstream>

#include "msi/errors.hpp"

namespace msi {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
    std::istringstream in(value);
    T out{};
    in >> out;
    if (in.fail()) throw ConfigError("config key '" + key + "': cannot parse '" + value + "'");
    std::string rest;
    in >> rest;
    if (!rest.empty()) throw ConfigError("config key '" + key + "': trailing junk in '" + value + "'");
    return out;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
    auto f = [&] { return parse_number<float>(key, value); };
    auto d = [&] { return parse_number<double>(key, value); };
    auto i = [&] { return parse_number<int>(key, value); };
    auto i64 = [&] { return parse_number<std::int64_t>(key, value); };
    auto u64 = [&] { return parse_number<std::uint64_t>(key, value); };

    if (key == "seed") seed = u64();
    else if (key == "data.seed") data.seed = u64();
    else if (key == "data.count") data.count = i64();
    else if (key == "data.image_size") data.image_size = i();
    else if (key == "data.num_classes") data.num_classes = i();
    else if (key == "data.noise_amplitude") data.noise_amplitude = f();
    else if (key == "data.distractor_min") data.distractor_count_range.first = i();
    else if (key == "data.distractor_max") data.distractor_count_range.second = i();
    else if (key == "data.digit_scale_min") data.digit_scale_range.first = f();
    else if (key == "data.digit_scale_max") data.digit_scale_range.second = f();
    else if (key == "train.lr") train.lr = f();
    else if (key == "train.epochs") train.epochs = i();
    else if (key == "train.batch_size") train.batch_size = i();
    else if (key == "train.seed") train.seed = u64();
    else if (key == "train.weight_decay") train.weight_decay = f();
    else if (key == "lax.lambda_entropy") lax.lambda_entropy = f();
    else if (key == "lax.temperature") lax.temperature = f();
    else if (key == "lax.epsilon") lax.epsilon = f();
    else if (key == "lax.lr") lax.lr = f();
    else if (key == "lax.epochs") lax.epochs = i();
    else if (key == "lax.batch_size") lax.batch_size = i();
    else if (key == "lax.seed") lax.seed = u64();
    else if (key == "metric.alpha_min") metric.alpha_min = d();
    else if (key == "metric.alpha_step") metric.alpha_step = d();
    else if (key == "metric.percent_step") metric.percent_step = d();
    else if (key == "metric.baseline_fill") metric.baseline_fill = d();
    else if (key == "metric.score_mode") {
        if (value == "accuracy") metric.score_mode = metrics::ScoreMode::accuracy;
        else if (value == "probability") metric.score_mode = metrics::ScoreMode::probability;
        else throw ConfigError("metric.score_mode must be 'accuracy' or 'probability'");
    }
    else if (key == "occlusion.patch") occlusion.patch = i();
    else if (key == "occlusion.stride") occlusion.stride = i();
    else if (key == "occlusion.baseline") occlusion.baseline = f();
    else if (key == "rise.n_masks") rise.n_masks = i();
    else if (key == "rise.grid") rise.grid = i();
    else if (key == "rise.keep_prob") rise.keep_prob = f();
    else if (key == "rise.seed") rise.seed = u64();
    else throw ConfigError("unknown config key '" + key + "'");
}

std::string RunConfig::echo() const {
    std::ostringstream out;
    out.precision(9);
    out << "seed = " << seed << '\n'
        << "data.seed = " << data.seed << '\n'
        << "data.count = " << data.count << '\n'
        << "data.image_size = " << data.image_size << '\n'
        << "data.num_classes = " << data.num_classes << '\n'
        << "data.noise_amplitude = " << data.noise_amplitude << '\n'
        << "data.distractor_min = " << data.distractor_count_range.first << '\n'
        << "data.distractor_max = " << data.distractor_count_range.second << '\n'
        << "data.digit_scale_min = " << data.digit_scale_range.first << '\n'
        << "data.digit_scale_max = " << data.digit_scale_range.second << '\n'
        << "train.lr = " << train.lr << '\n'
        << "train.epochs = " << train.epochs << '\n'
        << "train.batch_size = " << train.batch_size << '\n'
        << "train.seed = " << train.seed << '\n'
        << "train.weight_decay = " << train.weight_decay << '\n'
        << "lax.lambda_entropy = " << lax.lambda_entropy << '\n'
        << "lax.temperature = " << lax.temperature << '\n'
        << "lax.epsilon = " << lax.epsilon << '\n'
        << "lax.lr = " << lax.lr << '\n'
        << "lax.epochs = " << lax.epochs << '\n'
        << "lax.batch_size = " << lax.batch_size << '\n'
        << "lax.seed = " << lax.seed << '\n'
        << "metric.alpha_min = " << metric.alpha_min << '\n'
        << "metric.alpha_step = " << metric.alpha_step << '\n'
        << "metric.percent_step = " << metric.percent_step << '\n'
        << "metric.baseline_fill = " << metric.baseline_fill << '\n'
        << "metric.score_mode = "
        << (metric.score_mode == metrics::ScoreMode::accuracy ? "accuracy" : "probability") << '\n'
        << "occlusion.patch = " << occlusion.patch << '\n'
        << "occlusion.stride = " << occlusion.stride << '\n'
        << "occlusion.baseline = " << occlusion.baseline << '\n'
        << "rise.n_masks = " << rise.n_masks << '\n'
        << "rise.grid = " << rise.grid << '\n'
        << "rise.keep_prob = " << rise.keep_prob << '\n'
        << "rise.seed = " << rise.seed << '\n';
    return out.str();
}

RunConfig parse_config_text(const std::string& text, RunConfig base) {
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
        }
        base.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return base;
}

RunConfig load_config(const std::string& path, RunConfig base) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open config file " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str(), std::move(base));
}

}  // namespace msi
