#include "hiforecast/io.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "hiforecast/common.hpp"

namespace hiforecast::io {

namespace {

using nlohmann::json;

double parse_number(std::string_view token, const std::filesystem::path& path, std::size_t line) {
    double v = 0.0;
    const char* first = token.data();
    const char* last = token.data() + token.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc{} || ptr != last || !std::isfinite(v)) {
        throw ParseError(path.string() + ":" + std::to_string(line) + ": bad number '" +
                         std::string(token) + "'");
    }
    return v;
}

std::vector<std::string_view> split_csv(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
    return out;
}

json to_json_array(const Eigen::VectorXd& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        a.push_back(v[i]);
    }
    return a;
}

Eigen::VectorXd from_json_array(const json& a) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(a.size()));
    for (std::size_t i = 0; i < a.size(); ++i) {
        v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
    }
    return v;
}

json load_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open " + path.string());
    }
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

}  // namespace

void write_text_file(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    out << content;
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ConfigError("cannot open " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

CurveSetd load_curve_csv(const std::filesystem::path& path, double lifespan_bound) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open " + path.string());
    }
    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(in, line)) {
        throw ParseError(path.string() + ": empty file");
    }
    ++line_no;
    if (!line.empty() && line.back() == '\r') {
        line.pop_back();
    }
    if (line != "unit_id,time,value") {
        throw ParseError(path.string() + ":1: expected header 'unit_id,time,value'");
    }

    std::vector<std::string> order;
    std::map<std::string, std::vector<std::pair<double, double>>> units;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        const auto cols = split_csv(line);
        if (cols.size() != 3) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) +
                             ": expected 3 columns, got " + std::to_string(cols.size()));
        }
        const std::string unit(cols[0]);
        if (unit.empty()) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": empty unit id");
        }
        const double t = parse_number(cols[1], path, line_no);
        const double v = parse_number(cols[2], path, line_no);
        auto [it, inserted] = units.try_emplace(unit);
        if (inserted) {
            order.push_back(unit);
        }
        it->second.emplace_back(t, v);
    }
    if (order.empty()) {
        throw ParseError(path.string() + ": no data rows");
    }

    std::vector<SampledCurved> curves;
    curves.reserve(order.size());
    for (const auto& unit : order) {
        auto& pts = units[unit];
        std::stable_sort(pts.begin(), pts.end(),
                         [](const auto& a, const auto& b) { return a.first < b.first; });
        for (std::size_t j = 1; j < pts.size(); ++j) {
            if (!(pts[j].first > pts[j - 1].first)) {
                throw ParseError(path.string() + ": unit " + unit + " has duplicate time " +
                                 format_double(pts[j].first));
            }
        }
        SampledCurved c;
        c.unit_id = unit;
        c.times.resize(static_cast<Eigen::Index>(pts.size()));
        c.values.resize(static_cast<Eigen::Index>(pts.size()));
        for (std::size_t j = 0; j < pts.size(); ++j) {
            c.times[static_cast<Eigen::Index>(j)] = pts[j].first;
            c.values[static_cast<Eigen::Index>(j)] = pts[j].second;
        }
        c.complete = detect_complete(c);
        curves.push_back(std::move(c));
    }
    return make_curve_set(std::move(curves), lifespan_bound);
}

void save_curve_csv(const std::filesystem::path& path, const CurveSetd& set) {
    std::string out = "unit_id,time,value\n";
    for (const auto& c : set.curves) {
        for (Eigen::Index j = 0; j < c.size(); ++j) {
            out += c.unit_id;
            out += ',';
            out += format_double(c.times[j]);
            out += ',';
            out += format_double(c.values[j]);
            out += '\n';
        }
    }
    write_text_file(path, out);
}

void save_model_json(const std::filesystem::path& path, const FpcaModeld& model) {
    json j;
    j["format"] = "hiforecast-model-v1";
    j["lifespan"] = model.mean.lifespan;
    j["grid_size"] = model.grid_size();
    j["mean"] = to_json_array(model.mean.values);
    j["eigenvalues"] = to_json_array(model.eigenvalues);
    json funcs = json::array();
    for (Eigen::Index r = 0; r < model.rank(); ++r) {
        funcs.push_back(to_json_array(model.eigenfunctions.row(r).transpose()));
    }
    j["eigenfunctions"] = funcs;
    j["noise_variance"] = model.noise_variance;
    j["fve"] = model.fve;
    j["provenance"] = {{"bandwidth_mean", model.bandwidth_mean},
                       {"bandwidth_cov", model.bandwidth_cov},
                       {"fve_threshold", model.fve_threshold}};
    write_text_file(path, j.dump(2) + "\n");
}

FpcaModeld load_model_json(const std::filesystem::path& path) {
    const json j = load_json_file(path);
    try {
        if (j.at("format").get<std::string>() != "hiforecast-model-v1") {
            throw ParseError(path.string() + ": unknown model format");
        }
        FpcaModeld model;
        model.mean.lifespan = j.at("lifespan").get<double>();
        model.mean.values = from_json_array(j.at("mean"));
        model.eigenvalues = from_json_array(j.at("eigenvalues"));
        const auto& funcs = j.at("eigenfunctions");
        model.eigenfunctions.resize(static_cast<Eigen::Index>(funcs.size()),
                                    model.mean.values.size());
        for (std::size_t r = 0; r < funcs.size(); ++r) {
            model.eigenfunctions.row(static_cast<Eigen::Index>(r)) =
                from_json_array(funcs[r]).transpose();
        }
        model.noise_variance = j.at("noise_variance").get<double>();
        model.fve = j.at("fve").get<double>();
        const auto& prov = j.at("provenance");
        model.bandwidth_mean = prov.at("bandwidth_mean").get<double>();
        model.bandwidth_cov = prov.at("bandwidth_cov").get<double>();
        model.fve_threshold = prov.at("fve_threshold").get<double>();
        if (model.eigenvalues.size() != model.eigenfunctions.rows()) {
            throw ParseError(path.string() + ": eigenvalue/eigenfunction count mismatch");
        }
        return model;
    } catch (const json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

void save_forecast(const std::filesystem::path& csv_path,
                   const std::filesystem::path& sidecar_path, const Forecastd& forecast,
                   const std::string& unit_id) {
    std::string out = "time,value\n";
    for (Eigen::Index k = 0; k < forecast.curve.size(); ++k) {
        out += format_double(forecast.curve.time_at(k));
        out += ',';
        out += format_double(forecast.curve.values[k]);
        out += '\n';
    }
    write_text_file(csv_path, out);

    json j;
    j["unit_id"] = unit_id;
    j["method"] = method_name(forecast.method);
    j["matching_score"] = forecast.matching_score;
    j["observed_horizon"] = forecast.observed_horizon;
    if (forecast.selected_index >= 0) {
        j["selected_index"] = forecast.selected_index;
    } else {
        j["selected_index"] = "n/a";
    }
    j["extended_beyond_life"] = forecast.extended_beyond_life;
    write_text_file(sidecar_path, j.dump(2) + "\n");
}

Forecastd load_forecast(const std::filesystem::path& csv_path,
                        const std::filesystem::path& sidecar_path) {
    Forecastd f;
    {
        std::ifstream in(csv_path);
        if (!in) {
            throw ConfigError("cannot open " + csv_path.string());
        }
        std::string line;
        std::size_t line_no = 0;
        std::vector<std::pair<double, double>> pts;
        while (std::getline(in, line)) {
            ++line_no;
            if (!line.empty() && line.back() == '\r') {
                line.pop_back();
            }
            if (line_no == 1) {
                if (line != "time,value") {
                    throw ParseError(csv_path.string() + ":1: expected header 'time,value'");
                }
                continue;
            }
            if (line.empty()) {
                continue;
            }
            const auto cols = split_csv(line);
            if (cols.size() != 2) {
                throw ParseError(csv_path.string() + ":" + std::to_string(line_no) +
                                 ": expected 2 columns");
            }
            pts.emplace_back(parse_number(cols[0], csv_path, line_no),
                             parse_number(cols[1], csv_path, line_no));
        }
        if (pts.size() < 2) {
            throw ParseError(csv_path.string() + ": needs at least 2 rows");
        }
        f.curve.lifespan = pts.back().first;
        f.curve.values.resize(static_cast<Eigen::Index>(pts.size()));
        for (std::size_t k = 0; k < pts.size(); ++k) {
            f.curve.values[static_cast<Eigen::Index>(k)] = pts[k].second;
        }
    }
    const json j = load_json_file(sidecar_path);
    try {
        f.matching_score = j.at("matching_score").get<double>();
        f.observed_horizon = j.at("observed_horizon").get<double>();
        const std::string m = j.at("method").get<std::string>();
        for (Method cand : {Method::proposed, Method::nn, Method::nn_s, Method::rg_linear,
                            Method::gp_posterior}) {
            if (m == method_name(cand)) {
                f.method = cand;
            }
        }
        if (j.at("selected_index").is_number()) {
            f.selected_index = j.at("selected_index").get<Eigen::Index>();
        }
        f.extended_beyond_life = j.value("extended_beyond_life", false);
    } catch (const json::exception& e) {
        throw ParseError(sidecar_path.string() + ": " + e.what());
    }
    return f;
}

void save_scenarios_csv(const std::filesystem::path& path, const ScenarioSetd& scenarios) {
    std::string out = "scenario_id,time,value\n";
    GridFunctiond probe{scenarios.lifespan,
                        Eigen::VectorXd::Zero(scenarios.curves.cols())};
    for (Eigen::Index i = 0; i < scenarios.count(); ++i) {
        for (Eigen::Index k = 0; k < scenarios.curves.cols(); ++k) {
            out += std::to_string(i);
            out += ',';
            out += format_double(probe.time_at(k));
            out += ',';
            out += format_double(scenarios.curves(i, k));
            out += '\n';
        }
    }
    write_text_file(path, out);
}

void save_scenario_scores_csv(const std::filesystem::path& path, const ScenarioSetd& scenarios) {
    std::string out = "scenario_id,r,xi\n";
    for (Eigen::Index i = 0; i < scenarios.count(); ++i) {
        for (Eigen::Index r = 0; r < scenarios.scores.cols(); ++r) {
            out += std::to_string(i);
            out += ',';
            out += std::to_string(r + 1);
            out += ',';
            out += format_double(scenarios.scores(i, r));
            out += '\n';
        }
    }
    write_text_file(path, out);
}

}  // namespace hiforecast::io
