/*
 * Copyright 2026 The comfed Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include "comfed/config.hpp"
#include "comfed/core.hpp"
#include "comfed/runtime.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <nlohmann/json.hpp>

#include <array>
#include <bit>
#include <cerrno>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace comfed
{

class IoError : public std::runtime_error
{
  public:
    using std::runtime_error::runtime_error;
};

class CheckpointMismatch : public std::runtime_error
{
  public:
    using std::runtime_error::runtime_error;
};

/// 17 significant digits: enough to round-trip any double.
[[nodiscard]] inline std::string format_real(double v)
{
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    std::array<char, 32> buf{};
    std::snprintf(buf.data(), buf.size(), "%.17g", v);
    return buf.data();
}

[[nodiscard]] inline double parse_real(std::string_view text, const std::string& field = {})
{
    const std::string s(text);
    if (s.empty()) throw ConfigError(field, "expected a number, got an empty value");
    errno = 0;
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    // Underflow to a subnormal or zero is fine; overflow is not.
    if (end != s.c_str() + s.size() || (errno == ERANGE && std::abs(v) > 1.0))
    {
        throw ConfigError(field, "expected a number, got '" + s + "'");
    }
    return v;
}

namespace detail
{
inline std::string trim(std::string_view s)
{
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(first, last - first + 1));
}

inline std::uint64_t parse_unsigned(const std::string& s, const std::string& field)
{
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
    {
        throw ConfigError(field, "expected a nonnegative integer, got '" + s + "'");
    }
    errno = 0;
    const auto v = std::strtoull(s.c_str(), nullptr, 10);
    if (errno == ERANGE) throw ConfigError(field, "integer out of range");
    return v;
}

inline long long parse_signed(const std::string& s, const std::string& field)
{
    const std::string digits = (!s.empty() && (s[0] == '-' || s[0] == '+')) ? s.substr(1) : s;
    const auto mag = parse_unsigned(digits, field);
    return (!s.empty() && s[0] == '-') ? -static_cast<long long>(mag) : static_cast<long long>(mag);
}

inline bool parse_bool(const std::string& s, const std::string& field)
{
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw ConfigError(field, "expected a boolean, got '" + s + "'");
}

// Known keys per section, in canonical order.
inline const std::map<std::string, std::vector<std::string>>& schema()
{
    static const std::map<std::string, std::vector<std::string>> keys{
        {"experiment", {"seed", "rounds", "init", "init_scale", "monitor"}},
        {"algorithm", {"name", "tau", "eta", "m", "b", "b1", "full_batch", "gamma", "eta_in"}},
        {"task",
         {"model", "objective", "clients", "dominant_size", "minority_size", "features", "classes",
          "rho", "separation", "feature_scale", "client_shift", "l2", "nonconvex", "dim", "samples",
          "curvature_min", "curvature_max", "heterogeneity", "noise"}},
    };
    return keys;
}

inline std::string resolve_key(const std::string& key)
{
    const auto dot = key.find('.');
    if (dot != std::string::npos)
    {
        const auto section = key.substr(0, dot);
        const auto name = key.substr(dot + 1);
        const auto it = schema().find(section);
        if (it == schema().end()) throw ConfigError(key, "unknown section '" + section + "'");
        if (std::find(it->second.begin(), it->second.end(), name) == it->second.end())
        {
            throw ConfigError(key, "unknown key");
        }
        return key;
    }
    std::string found;
    for (const auto& [section, names] : schema())
    {
        if (std::find(names.begin(), names.end(), key) != names.end())
        {
            if (!found.empty()) throw ConfigError(key, "ambiguous key; qualify it as section.key");
            found = section + "." + key;
        }
    }
    if (found.empty()) throw ConfigError(key, "unknown key");
    return found;
}
}  // namespace detail

/// Applies a "key=value" or "section.key=value" override to a parsed tree.
inline void apply_override(boost::property_tree::ptree& tree, std::string_view assignment)
{
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos)
    {
        throw ConfigError(std::string(assignment), "override must look like key=value");
    }
    const auto key = detail::resolve_key(detail::trim(assignment.substr(0, eq)));
    tree.put(boost::property_tree::ptree::path_type(key, '.'),
             detail::trim(assignment.substr(eq + 1)));
}

/*!
 * Parses an INI document with sections [experiment], [algorithm] and
 * [task], applies overrides, and validates the result. Unknown sections or
 * keys are rejected. Unset keys keep the ExperimentConfig defaults
 * (tau = 5, gamma = 0.2, eta = 0.01).
 */
[[nodiscard]] inline ExperimentConfig parse_config(std::string_view text,
                                                   std::span<const std::string> overrides = {})
{
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try
    {
        std::istringstream in{std::string(text)};
        pt::read_ini(in, tree);
    }
    catch (const pt::ini_parser_error& e)
    {
        throw ConfigError("", std::string("malformed config: ") + e.what());
    }
    for (const auto& [section, body] : tree)
    {
        const auto it = detail::schema().find(section);
        if (it == detail::schema().end())
        {
            throw ConfigError(section, body.empty() ? "keys must live inside a section"
                                                    : "unknown section");
        }
        for (const auto& [key, value] : body)
        {
            if (std::find(it->second.begin(), it->second.end(), key) == it->second.end())
            {
                throw ConfigError(section + "." + key, "unknown key");
            }
        }
    }
    for (const auto& o : overrides) apply_override(tree, o);

    auto get = [&](const std::string& section, const std::string& key) -> std::optional<std::string> {
        const auto child = tree.get_child_optional(pt::ptree::path_type(section + "." + key, '.'));
        if (!child) return std::nullopt;
        return detail::trim(child->data());
    };
    auto real = [&](const char* section, const char* key, double& out) {
        if (auto v = get(section, key)) out = parse_real(*v, key);
    };
    auto count = [&](const char* section, const char* key, std::size_t& out) {
        if (auto v = get(section, key)) out = static_cast<std::size_t>(detail::parse_unsigned(*v, key));
    };

    ExperimentConfig cfg;
    if (auto v = get("experiment", "seed")) cfg.seed = detail::parse_unsigned(*v, "seed");
    count("experiment", "rounds", cfg.rounds);
    if (auto v = get("experiment", "init"))
    {
        if (*v == "zeros") cfg.init = InitKind::zeros;
        else if (*v == "normal") cfg.init = InitKind::normal;
        else throw ConfigError("init", "expected zeros or normal, got '" + *v + "'");
    }
    real("experiment", "init_scale", cfg.init_scale);
    if (auto v = get("experiment", "monitor")) cfg.monitor = detail::parse_bool(*v, "monitor");

    if (auto v = get("algorithm", "name"))
    {
        if (*v == "comfedl") cfg.algorithm = Algorithm::comfedl;
        else if (*v == "fedavg") cfg.algorithm = Algorithm::fedavg;
        else if (*v == "comfedl-damaml") cfg.algorithm = Algorithm::comfedl_damaml;
        else throw ConfigError("name", "expected comfedl, fedavg or comfedl-damaml, got '" + *v + "'");
    }
    if (auto v = get("algorithm", "tau")) cfg.tau = static_cast<int>(detail::parse_signed(*v, "tau"));
    real("algorithm", "eta", cfg.eta);
    if (auto v = get("algorithm", "m"))
    {
        cfg.clients_per_round = static_cast<std::size_t>(detail::parse_unsigned(*v, "m"));
    }
    count("algorithm", "b", cfg.inner_batch);
    count("algorithm", "b1", cfg.outer_batch);
    if (auto v = get("algorithm", "full_batch")) cfg.full_batch = detail::parse_bool(*v, "full_batch");
    real("algorithm", "gamma", cfg.gamma);
    real("algorithm", "eta_in", cfg.eta_in);

    auto& task = cfg.task;
    if (auto v = get("task", "model"))
    {
        if (*v == "classification") task.model = Model::classification;
        else if (*v == "quadratic") task.model = Model::quadratic;
        else if (*v == "logistic") task.model = Model::logistic;
        else throw ConfigError("model", "expected classification, quadratic or logistic, got '" + *v + "'");
    }
    if (auto v = get("task", "objective"))
    {
        if (*v == "plain") task.objective = Objective::plain;
        else if (*v == "dro") task.objective = Objective::dro;
        else if (*v == "maml") task.objective = Objective::maml;
        else if (*v == "damaml") task.objective = Objective::damaml;
        else throw ConfigError("objective", "expected plain, dro, maml or damaml, got '" + *v + "'");
    }
    count("task", "clients", task.clients);
    count("task", "dominant_size", task.dominant_size);
    count("task", "minority_size", task.minority_size);
    count("task", "features", task.classification.features);
    count("task", "classes", task.classification.classes);
    if (auto v = get("task", "rho")) task.classification.rho = parse_real(*v, "rho");
    real("task", "separation", task.classification.separation);
    real("task", "feature_scale", task.classification.feature_scale);

    Regularization reg;
    real("task", "l2", reg.l2);
    real("task", "nonconvex", reg.nonconvex);
    task.classification.reg = reg;
    task.logistic.reg = reg;

    double shift = 0.0;
    real("task", "client_shift", shift);
    task.classification.client_shift = shift;
    task.logistic.client_shift = shift;

    std::size_t dim = task.model == Model::logistic ? task.logistic.dim : task.quadratic.dim;
    count("task", "dim", dim);
    task.quadratic.dim = dim;
    task.logistic.dim = dim;
    std::size_t samples = task.model == Model::logistic ? task.logistic.samples : task.quadratic.samples;
    count("task", "samples", samples);
    task.quadratic.samples = samples;
    task.logistic.samples = samples;
    double heterogeneity = task.model == Model::logistic ? task.logistic.heterogeneity
                                                         : task.quadratic.heterogeneity;
    real("task", "heterogeneity", heterogeneity);
    task.quadratic.heterogeneity = heterogeneity;
    task.logistic.heterogeneity = heterogeneity;
    real("task", "curvature_min", task.quadratic.curvature_min);
    real("task", "curvature_max", task.quadratic.curvature_max);
    real("task", "noise", task.quadratic.noise);

    validate(cfg);
    return cfg;
}

[[nodiscard]] inline ExperimentConfig load_config(const std::filesystem::path& path,
                                                  std::span<const std::string> overrides = {})
{
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config '" + path.string() + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str(), overrides);
}

/// Canonical INI rendering of every field; parse_config(echo_config(c))
/// reproduces c.
[[nodiscard]] inline std::string echo_config(const ExperimentConfig& cfg)
{
    std::ostringstream out;
    const auto& t = cfg.task;
    const bool logistic = t.model == Model::logistic;
    out << "[experiment]\n"
        << "seed = " << cfg.seed << "\n"
        << "rounds = " << cfg.rounds << "\n"
        << "init = " << to_string(cfg.init) << "\n"
        << "init_scale = " << format_real(cfg.init_scale) << "\n"
        << "monitor = " << (cfg.monitor ? "true" : "false") << "\n"
        << "\n[algorithm]\n"
        << "name = " << to_string(cfg.algorithm) << "\n"
        << "tau = " << cfg.tau << "\n"
        << "eta = " << format_real(cfg.eta) << "\n"
        << "m = " << cfg.m() << "\n"
        << "b = " << cfg.inner_batch << "\n"
        << "b1 = " << cfg.outer_batch << "\n"
        << "full_batch = " << (cfg.full_batch ? "true" : "false") << "\n"
        << "gamma = " << format_real(cfg.gamma) << "\n"
        << "eta_in = " << format_real(cfg.eta_in) << "\n"
        << "\n[task]\n"
        << "model = " << to_string(t.model) << "\n"
        << "objective = " << to_string(resolved_objective(cfg)) << "\n"
        << "clients = " << t.clients << "\n";
    switch (t.model)
    {
        case Model::classification:
            out << "dominant_size = " << t.dominant_size << "\n"
                << "minority_size = " << t.minority_size << "\n"
                << "features = " << t.classification.features << "\n"
                << "classes = " << t.classification.classes << "\n";
            if (t.classification.rho) out << "rho = " << format_real(*t.classification.rho) << "\n";
            out << "separation = " << format_real(t.classification.separation) << "\n"
                << "feature_scale = " << format_real(t.classification.feature_scale) << "\n"
                << "client_shift = " << format_real(t.classification.client_shift) << "\n"
                << "l2 = " << format_real(t.classification.reg.l2) << "\n"
                << "nonconvex = " << format_real(t.classification.reg.nonconvex) << "\n";
            break;
        case Model::quadratic:
            out << "dim = " << t.quadratic.dim << "\n"
                << "samples = " << t.quadratic.samples << "\n"
                << "curvature_min = " << format_real(t.quadratic.curvature_min) << "\n"
                << "curvature_max = " << format_real(t.quadratic.curvature_max) << "\n"
                << "heterogeneity = " << format_real(t.quadratic.heterogeneity) << "\n"
                << "noise = " << format_real(t.quadratic.noise) << "\n";
            break;
        case Model::logistic:
            out << "dim = " << t.logistic.dim << "\n"
                << "samples = " << t.logistic.samples << "\n"
                << "heterogeneity = " << format_real(t.logistic.heterogeneity) << "\n"
                << "client_shift = " << format_real(t.logistic.client_shift) << "\n"
                << "l2 = " << format_real(t.logistic.reg.l2) << "\n"
                << "nonconvex = " << format_real(t.logistic.reg.nonconvex) << "\n";
            break;
    }
    (void)logistic;
    return out.str();
}

/// 64-bit FNV-1a of the canonical config text.
[[nodiscard]] inline std::uint64_t config_hash(const ExperimentConfig& cfg)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : echo_config(cfg))
    {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

enum class MetricsFormat
{
    csv,
    jsonl,
};

enum class FlushPolicy
{
    every_record,
    on_close,
};

/// CSV column names in RoundRecord declaration order.
[[nodiscard]] inline std::vector<std::string> csv_columns(std::size_t clients, bool wall_clock)
{
    std::vector<std::string> cols{"round", "objective", "mean_loss", "worst_loss",
                                  "grad_norm", "max_drift", "drift_bound",
                                  "estimator_deviation", "deviation_bound", "clamp_events"};
    for (std::size_t i = 0; i < clients; ++i) cols.push_back("loss_" + std::to_string(i));
    for (std::size_t i = 0; i < clients; ++i) cols.push_back("weight_" + std::to_string(i));
    if (wall_clock) cols.emplace_back("wall_clock");
    return cols;
}

[[nodiscard]] inline std::string csv_header(std::size_t clients, bool wall_clock = false)
{
    std::string line;
    for (const auto& c : csv_columns(clients, wall_clock))
    {
        if (!line.empty()) line += ',';
        line += c;
    }
    return line;
}

[[nodiscard]] inline std::string to_csv_line(const RoundRecord& r, bool wall_clock = false)
{
    std::string line = std::to_string(r.round);
    auto add = [&](double v) {
        line += ',';
        line += format_real(v);
    };
    add(r.objective);
    add(r.mean_loss);
    add(r.worst_loss);
    add(r.grad_norm);
    add(r.max_drift);
    add(r.drift_bound);
    add(r.estimator_deviation);
    add(r.deviation_bound);
    line += ',' + std::to_string(r.clamp_events);
    for (double v : r.client_losses) add(v);
    for (std::size_t i = 0; i < r.client_losses.size(); ++i)
    {
        add(i < r.weights.size() ? r.weights[i] : std::nan(""));
    }
    if (wall_clock) add(r.wall_clock);
    return line;
}

[[nodiscard]] inline std::string to_json_line(const RoundRecord& r, bool wall_clock = false)
{
    auto num = [](double v) {
        return std::isfinite(v) ? format_real(v) : "\"" + format_real(v) + "\"";
    };
    auto arr = [&](const std::vector<double>& v) {
        std::string s = "[";
        for (std::size_t i = 0; i < v.size(); ++i)
        {
            if (i) s += ',';
            s += num(v[i]);
        }
        return s + "]";
    };
    std::string line = "{\"round\":" + std::to_string(r.round);
    line += ",\"objective\":" + num(r.objective);
    line += ",\"mean_loss\":" + num(r.mean_loss);
    line += ",\"worst_loss\":" + num(r.worst_loss);
    line += ",\"grad_norm\":" + num(r.grad_norm);
    line += ",\"max_drift\":" + num(r.max_drift);
    line += ",\"drift_bound\":" + num(r.drift_bound);
    line += ",\"estimator_deviation\":" + num(r.estimator_deviation);
    line += ",\"deviation_bound\":" + num(r.deviation_bound);
    line += ",\"clamp_events\":" + std::to_string(r.clamp_events);
    line += ",\"client_losses\":" + arr(r.client_losses);
    line += ",\"weights\":" + arr(r.weights);
    if (wall_clock) line += ",\"wall_clock\":" + num(r.wall_clock);
    return line + "}";
}

namespace detail
{
inline std::vector<std::string> split(const std::string& line, char sep)
{
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(line);
    while (std::getline(in, cur, sep)) out.push_back(cur);
    if (!line.empty() && line.back() == sep) out.emplace_back();
    return out;
}

inline double json_real(const nlohmann::json& v)
{
    if (v.is_string()) return parse_real(v.get<std::string>());
    return v.get<double>();
}
}  // namespace detail

[[nodiscard]] inline RoundRecord parse_csv_line(const std::string& header, const std::string& line)
{
    const auto cols = detail::split(header, ',');
    const auto cells = detail::split(line, ',');
    if (cols.size() != cells.size())
    {
        throw IoError("metrics: row has " + std::to_string(cells.size()) + " cells, header has "
                      + std::to_string(cols.size()));
    }
    RoundRecord r;
    for (std::size_t k = 0; k < cols.size(); ++k)
    {
        const auto& c = cols[k];
        const auto& v = cells[k];
        if (c == "round") r.round = static_cast<std::size_t>(detail::parse_unsigned(v, c));
        else if (c == "objective") r.objective = parse_real(v, c);
        else if (c == "mean_loss") r.mean_loss = parse_real(v, c);
        else if (c == "worst_loss") r.worst_loss = parse_real(v, c);
        else if (c == "grad_norm") r.grad_norm = parse_real(v, c);
        else if (c == "max_drift") r.max_drift = parse_real(v, c);
        else if (c == "drift_bound") r.drift_bound = parse_real(v, c);
        else if (c == "estimator_deviation") r.estimator_deviation = parse_real(v, c);
        else if (c == "deviation_bound") r.deviation_bound = parse_real(v, c);
        else if (c == "clamp_events") r.clamp_events = static_cast<std::size_t>(detail::parse_unsigned(v, c));
        else if (c.rfind("loss_", 0) == 0) r.client_losses.push_back(parse_real(v, c));
        else if (c.rfind("weight_", 0) == 0)
        {
            const double x = parse_real(v, c);
            if (!std::isnan(x)) r.weights.push_back(x);
        }
        else if (c == "wall_clock") r.wall_clock = parse_real(v, c);
        else throw IoError("metrics: unknown column '" + c + "'");
    }
    return r;
}

[[nodiscard]] inline RoundRecord parse_json_line(const std::string& line)
{
    const auto j = nlohmann::json::parse(line);
    RoundRecord r;
    r.round = j.at("round").get<std::size_t>();
    r.objective = detail::json_real(j.at("objective"));
    r.mean_loss = detail::json_real(j.at("mean_loss"));
    r.worst_loss = detail::json_real(j.at("worst_loss"));
    r.grad_norm = detail::json_real(j.at("grad_norm"));
    r.max_drift = detail::json_real(j.at("max_drift"));
    r.drift_bound = detail::json_real(j.at("drift_bound"));
    r.estimator_deviation = detail::json_real(j.at("estimator_deviation"));
    r.deviation_bound = detail::json_real(j.at("deviation_bound"));
    r.clamp_events = j.at("clamp_events").get<std::size_t>();
    for (const auto& v : j.at("client_losses")) r.client_losses.push_back(detail::json_real(v));
    for (const auto& v : j.at("weights")) r.weights.push_back(detail::json_real(v));
    if (j.contains("wall_clock")) r.wall_clock = detail::json_real(j.at("wall_clock"));
    return r;
}

[[nodiscard]] inline MetricsFormat format_for(const std::filesystem::path& path)
{
    const auto ext = path.extension().string();
    return (ext == ".jsonl" || ext == ".json") ? MetricsFormat::jsonl : MetricsFormat::csv;
}

/// Reads a CSV or JSONL metrics file back into records.
[[nodiscard]] inline std::vector<RoundRecord> read_metrics(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw IoError("cannot open metrics file '" + path.string() + "'");
    std::vector<RoundRecord> out;
    std::string line;
    if (format_for(path) == MetricsFormat::jsonl)
    {
        while (std::getline(in, line))
        {
            if (!line.empty()) out.push_back(parse_json_line(line));
        }
        return out;
    }
    std::string header;
    if (!std::getline(in, header)) return out;
    while (std::getline(in, line))
    {
        if (!line.empty()) out.push_back(parse_csv_line(header, line));
    }
    return out;
}

/*!
 * Append-only per-round writer. The CSV header is written with the first
 * record (its width depends on the client count). Every line is complete
 * before the next starts, so a file cut short by an I/O error stays valid.
 */
class MetricsSink
{
  public:
    MetricsSink(std::filesystem::path path,
                MetricsFormat format,
                FlushPolicy flush = FlushPolicy::every_record,
                bool wall_clock = false)
        : path_(std::move(path)), format_(format), flush_(flush), wall_clock_(wall_clock),
          out_(path_, std::ios::out | std::ios::trunc | std::ios::binary)
    {
        if (!out_) throw IoError("cannot open metrics file '" + path_.string() + "'");
    }

    explicit MetricsSink(const std::filesystem::path& path)
        : MetricsSink(path, format_for(path))
    {
    }

    MetricsSink(const MetricsSink&) = delete;
    MetricsSink& operator=(const MetricsSink&) = delete;
    ~MetricsSink() { out_.flush(); }

    void write_round(const RoundRecord& record)
    {
        std::string text;
        if (format_ == MetricsFormat::csv)
        {
            if (!header_written_)
            {
                text = csv_header(record.client_losses.size(), wall_clock_) + "\n";
                header_written_ = true;
            }
            text += to_csv_line(record, wall_clock_) + "\n";
        }
        else
        {
            text = to_json_line(record, wall_clock_) + "\n";
        }
        out_ << text;
        if (flush_ == FlushPolicy::every_record) out_.flush();
        if (!out_) throw IoError("write to '" + path_.string() + "' failed");
        ++written_;
    }

    [[nodiscard]] std::size_t written() const noexcept { return written_; }
    [[nodiscard]] const std::filesystem::path& path() const noexcept { return path_; }

  private:
    std::filesystem::path path_;
    MetricsFormat format_;
    FlushPolicy flush_;
    bool wall_clock_;
    std::ofstream out_;
    bool header_written_ = false;
    std::size_t written_ = 0;
};

inline void write_round(MetricsSink& sink, const RoundRecord& record)
{
    sink.write_round(record);
}

struct Checkpoint
{
    ParamVec w;
    std::uint64_t config_hash = 0;
};

namespace detail
{
inline void put_u64(std::ostream& out, std::uint64_t v)
{
    std::array<char, 8> bytes{};
    for (int k = 0; k < 8; ++k) bytes[static_cast<std::size_t>(k)] = static_cast<char>((v >> (8 * k)) & 0xFF);
    out.write(bytes.data(), 8);
}

inline std::uint64_t get_u64(std::istream& in, const std::string& what)
{
    std::array<unsigned char, 8> bytes{};
    in.read(reinterpret_cast<char*>(bytes.data()), 8);
    if (in.gcount() != 8) throw IoError("checkpoint truncated while reading " + what);
    std::uint64_t v = 0;
    for (int k = 7; k >= 0; --k) v = (v << 8) | bytes[static_cast<std::size_t>(k)];
    return v;
}
}  // namespace detail

/// Layout: u64 length, length x f64, u64 config hash; all little-endian.
inline void checkpoint_model(const std::filesystem::path& path, const ParamVec& w, std::uint64_t cfg_hash)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open checkpoint '" + path.string() + "' for writing");
    detail::put_u64(out, static_cast<std::uint64_t>(w.size()));
    for (Eigen::Index k = 0; k < w.size(); ++k) detail::put_u64(out, std::bit_cast<std::uint64_t>(w[k]));
    detail::put_u64(out, cfg_hash);
    out.flush();
    if (!out) throw IoError("write to checkpoint '" + path.string() + "' failed");
}

[[nodiscard]] inline Checkpoint load_checkpoint(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
    const auto length = detail::get_u64(in, "length");
    const auto bytes = std::filesystem::file_size(path);
    if (length > (bytes / 8)) throw IoError("checkpoint length prefix exceeds file size");
    Checkpoint cp;
    cp.w.resize(static_cast<Eigen::Index>(length));
    for (Eigen::Index k = 0; k < cp.w.size(); ++k)
    {
        cp.w[k] = std::bit_cast<double>(detail::get_u64(in, "parameters"));
    }
    cp.config_hash = detail::get_u64(in, "config hash");
    return cp;
}

/// Loads and refuses a checkpoint written under a different config.
[[nodiscard]] inline ParamVec load_checkpoint(const std::filesystem::path& path, std::uint64_t expected_hash)
{
    Checkpoint cp = load_checkpoint(path);
    if (cp.config_hash != expected_hash)
    {
        std::array<char, 64> buf{};
        std::snprintf(buf.data(), buf.size(), "%016llx vs expected %016llx",
                      static_cast<unsigned long long>(cp.config_hash),
                      static_cast<unsigned long long>(expected_hash));
        throw CheckpointMismatch("checkpoint '" + path.string() + "' was written under a different config ("
                                 + buf.data() + ")");
    }
    return std::move(cp.w);
}

}  // namespace comfed
