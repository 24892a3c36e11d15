#include "hiforecast/dataprep.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>

namespace hiforecast {

namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) {
            ++i;
        }
        const std::size_t start = i;
        while (i < line.size() && line[i] != ' ' && line[i] != '\t') {
            ++i;
        }
        if (i > start) {
            out.push_back(line.substr(start, i - start));
        }
    }
    return out;
}

double parse_field(std::string_view token, const std::filesystem::path& path, std::size_t line) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
    if (ec != std::errc{} || ptr != token.data() + token.size() || !std::isfinite(v)) {
        throw ParseError(path.string() + ":" + std::to_string(line) + ": bad number '" +
                         std::string(token) + "'");
    }
    return v;
}

}  // namespace

void index_fleet(RawFleetTable& table) {
    std::stable_sort(table.rows.begin(), table.rows.end(), [](const FleetRow& a, const FleetRow& b) {
        return a.unit != b.unit ? a.unit < b.unit : a.cycle < b.cycle;
    });
    table.unit_ids.clear();
    table.unit_begin.clear();
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        if (i == 0 || table.rows[i].unit != table.rows[i - 1].unit) {
            table.unit_ids.push_back(table.rows[i].unit);
            table.unit_begin.push_back(i);
        }
    }
    table.unit_begin.push_back(table.rows.size());
    for (std::size_t u = 0; u < table.unit_count(); ++u) {
        for (std::size_t j = 0; j < table.unit_rows(u); ++j) {
            const int cycle = table.rows[table.unit_begin[u] + j].cycle;
            if (cycle != static_cast<int>(j) + 1) {
                throw ParseError("unit " + std::to_string(table.unit_ids[u]) +
                                 ": cycles are not contiguous from 1 (found " +
                                 std::to_string(cycle) + " at position " + std::to_string(j + 1) +
                                 ")");
            }
        }
    }
}

RawFleetTable parse_fleet(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open " + path.string());
    }
    RawFleetTable table;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        const auto cols = split_ws(line);
        if (cols.empty()) {
            continue;
        }
        if (cols.size() != 26) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) +
                             ": expected 26 columns, got " + std::to_string(cols.size()));
        }
        FleetRow row;
        const double unit = parse_field(cols[0], path, line_no);
        const double cycle = parse_field(cols[1], path, line_no);
        row.unit = static_cast<int>(unit);
        row.cycle = static_cast<int>(cycle);
        if (row.unit <= 0 || double(row.unit) != unit || row.cycle <= 0 ||
            double(row.cycle) != cycle) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) +
                             ": unit and cycle must be positive integers");
        }
        for (int k = 0; k < 3; ++k) {
            row.settings[static_cast<std::size_t>(k)] =
                parse_field(cols[static_cast<std::size_t>(2 + k)], path, line_no);
        }
        for (int k = 0; k < 21; ++k) {
            row.sensors[static_cast<std::size_t>(k)] =
                parse_field(cols[static_cast<std::size_t>(5 + k)], path, line_no);
        }
        table.rows.push_back(row);
    }
    if (table.rows.empty()) {
        throw ParseError(path.string() + ": no data rows");
    }
    index_fleet(table);
    return table;
}

std::vector<SignalSelection> select_degradation_signals(const RawFleetTable& table,
                                                        double z_threshold) {
    std::vector<SignalSelection> selected;
    for (int sensor = 1; sensor <= 21; ++sensor) {
        const std::size_t s = static_cast<std::size_t>(sensor - 1);
        double drift_sum = 0.0;
        std::size_t drift_units = 0;
        double ss_res = 0.0;
        double dof = 0.0;
        for (std::size_t u = 0; u < table.unit_count(); ++u) {
            const std::size_t m = table.unit_rows(u);
            const std::size_t base = table.unit_begin[u];
            const std::size_t tail = std::max<std::size_t>(
                1, static_cast<std::size_t>(std::ceil(0.05 * static_cast<double>(m))));
            double head_mean = 0.0, tail_mean = 0.0;
            for (std::size_t j = 0; j < tail; ++j) {
                head_mean += table.rows[base + j].sensors[s];
                tail_mean += table.rows[base + m - 1 - j].sensors[s];
            }
            drift_sum += (tail_mean - head_mean) / static_cast<double>(tail);
            ++drift_units;
            if (m >= 3) {
                // residual variance around a per-unit linear trend
                double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
                for (std::size_t j = 0; j < m; ++j) {
                    const double x = static_cast<double>(table.rows[base + j].cycle);
                    const double y = table.rows[base + j].sensors[s];
                    sx += x;
                    sy += y;
                    sxx += x * x;
                    sxy += x * y;
                    syy += y * y;
                }
                const double n = static_cast<double>(m);
                const double vxx = sxx - sx * sx / n;
                const double vxy = sxy - sx * sy / n;
                const double vyy = syy - sy * sy / n;
                const double res = vxx > 0.0 ? vyy - vxy * vxy / vxx : vyy;
                ss_res += std::max(0.0, res);
                dof += n - 2.0;
            }
        }
        if (drift_units == 0) {
            continue;
        }
        const double drift = drift_sum / static_cast<double>(drift_units);
        const double sd = dof > 0.0 ? std::sqrt(ss_res / dof) : 0.0;
        double z;
        if (sd > 0.0) {
            z = drift / sd;
        } else {
            z = drift == 0.0 ? 0.0
                             : std::copysign(std::numeric_limits<double>::infinity(), drift);
        }
        if (std::abs(z) >= z_threshold) {
            selected.push_back({sensor, z, drift > 0.0 ? -1 : 1});
        }
    }
    return selected;
}

NormalizationMap fit_normalization(const RawFleetTable& train, const std::vector<int>& sensors,
                                   NormalizationMap::Mode mode, int max_clusters) {
    NormalizationMap map;
    map.mode = mode;
    map.sensors = sensors;
    if (mode == NormalizationMap::Mode::none || sensors.empty()) {
        map.mode = NormalizationMap::Mode::none;
        return map;
    }
    if (train.rows.empty()) {
        throw PreconditionError("fit_normalization: empty training table");
    }
    const std::size_t n = train.rows.size();

    // setting location/scale, also used by the cluster distance
    std::array<double, 3> mean{}, scale{};
    for (const auto& row : train.rows) {
        for (std::size_t k = 0; k < 3; ++k) {
            mean[k] += row.settings[k];
        }
    }
    for (auto& v : mean) {
        v /= static_cast<double>(n);
    }
    bool degenerate = true;
    for (std::size_t k = 0; k < 3; ++k) {
        double ss = 0.0;
        for (const auto& row : train.rows) {
            const double d = row.settings[k] - mean[k];
            ss += d * d;
        }
        scale[k] = std::sqrt(ss / static_cast<double>(n));
        if (scale[k] > 1e-9 * std::max(1.0, std::abs(mean[k]))) {
            degenerate = false;
        } else {
            scale[k] = 1.0;
        }
    }
    map.setting_center = mean;
    map.setting_scale = scale;
    if (degenerate) {
        map.mode = NormalizationMap::Mode::none;
        map.warnings.push_back(
            "operating settings are constant on the training data; normalization skipped");
        return map;
    }

    if (mode == NormalizationMap::Mode::ols) {
        Eigen::MatrixXd x(n, 4);
        for (std::size_t i = 0; i < n; ++i) {
            x(static_cast<Eigen::Index>(i), 0) = 1.0;
            for (std::size_t k = 0; k < 3; ++k) {
                x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k + 1)) =
                    train.rows[i].settings[k];
            }
        }
        const auto qr = x.colPivHouseholderQr();
        for (int sensor : map.sensors) {
            Eigen::VectorXd y(n);
            for (std::size_t i = 0; i < n; ++i) {
                y[static_cast<Eigen::Index>(i)] =
                    train.rows[i].sensors[static_cast<std::size_t>(sensor - 1)];
            }
            const Eigen::VectorXd beta = qr.solve(y);
            map.ols_coefficients.push_back({beta[0], beta[1], beta[2], beta[3]});
        }
        return map;
    }

    // leader clustering in normalized setting space
    const auto normalized = [&](const FleetRow& row) {
        std::array<double, 3> z{};
        for (std::size_t k = 0; k < 3; ++k) {
            z[k] = (row.settings[k] - map.setting_center[k]) / map.setting_scale[k];
        }
        return z;
    };
    const auto dist2 = [](const std::array<double, 3>& a, const std::array<double, 3>& b) {
        double d = 0.0;
        for (std::size_t k = 0; k < 3; ++k) {
            d += (a[k] - b[k]) * (a[k] - b[k]);
        }
        return d;
    };
    std::vector<std::size_t> assignment(n);
    std::vector<std::size_t> counts;
    for (std::size_t i = 0; i < n; ++i) {
        const auto z = normalized(train.rows[i]);
        std::size_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < map.centroids.size(); ++c) {
            const double d = dist2(z, map.centroids[c]);
            if (d < best_d) {
                best_d = d;
                best = c;
            }
        }
        if (best_d > 0.25 && map.centroids.size() < static_cast<std::size_t>(max_clusters)) {
            map.centroids.push_back(z);
            counts.push_back(0);
            best = map.centroids.size() - 1;
        }
        assignment[i] = best;
        ++counts[best];
    }
    // refine centroids to cluster means (one pass, fixed assignment)
    std::vector<std::array<double, 3>> sums(map.centroids.size());
    for (std::size_t i = 0; i < n; ++i) {
        const auto z = normalized(train.rows[i]);
        for (std::size_t k = 0; k < 3; ++k) {
            sums[assignment[i]][k] += z[k];
        }
    }
    for (std::size_t c = 0; c < map.centroids.size(); ++c) {
        for (std::size_t k = 0; k < 3; ++k) {
            map.centroids[c][k] = sums[c][k] / static_cast<double>(counts[c]);
        }
    }
    map.cluster_sensor_means.assign(map.centroids.size(),
                                    std::vector<double>(map.sensors.size(), 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t s = 0; s < map.sensors.size(); ++s) {
            map.cluster_sensor_means[assignment[i]][s] +=
                train.rows[i].sensors[static_cast<std::size_t>(map.sensors[s] - 1)];
        }
    }
    for (std::size_t c = 0; c < map.centroids.size(); ++c) {
        for (auto& v : map.cluster_sensor_means[c]) {
            v /= static_cast<double>(counts[c]);
        }
    }
    return map;
}

RawFleetTable apply_normalization(const NormalizationMap& map, RawFleetTable table) {
    if (map.mode == NormalizationMap::Mode::none) {
        return table;
    }
    for (auto& row : table.rows) {
        if (map.mode == NormalizationMap::Mode::ols) {
            for (std::size_t s = 0; s < map.sensors.size(); ++s) {
                const auto& b = map.ols_coefficients[s];
                const double would_be = b[0] + b[1] * row.settings[0] + b[2] * row.settings[1] +
                                        b[3] * row.settings[2];
                row.sensors[static_cast<std::size_t>(map.sensors[s] - 1)] -= would_be;
            }
        } else {
            std::array<double, 3> z{};
            for (std::size_t k = 0; k < 3; ++k) {
                z[k] = (row.settings[k] - map.setting_center[k]) / map.setting_scale[k];
            }
            std::size_t best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < map.centroids.size(); ++c) {
                double d = 0.0;
                for (std::size_t k = 0; k < 3; ++k) {
                    d += (z[k] - map.centroids[c][k]) * (z[k] - map.centroids[c][k]);
                }
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            for (std::size_t s = 0; s < map.sensors.size(); ++s) {
                row.sensors[static_cast<std::size_t>(map.sensors[s] - 1)] -=
                    map.cluster_sensor_means[best][s];
            }
        }
    }
    return table;
}

}  // namespace hiforecast
