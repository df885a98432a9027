// SPDX-License-Identifier: Apache-2.0
#include "dlsm/dataset.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "dlsm/rng.hpp"

namespace dlsm {

LabeledDataset generate_moons(const MoonConfig& cfg) {
    if (cfg.samples_per_class < 1)
        throw std::invalid_argument("generate_moons: samples_per_class must be >= 1");
    if (cfg.noise_std < 0.0)
        throw std::invalid_argument("generate_moons: noise_std must be >= 0");

    const int n = cfg.samples_per_class;
    Rng rng(cfg.seed);
    LabeledDataset out;
    out.points.resize(2 * n, 2);
    out.labels.resize(2 * n);
    out.class_count = 2;

    for (int i = 0; i < n; ++i) {
        const double a = rng.uniform(0.0, M_PI);
        out.points(i, 0) = std::cos(a);
        out.points(i, 1) = std::sin(a);
        out.labels[i] = 0;
    }
    for (int i = 0; i < n; ++i) {
        const double a = rng.uniform(0.0, M_PI);
        out.points(n + i, 0) = 1.0 - std::cos(a);
        out.points(n + i, 1) = 0.5 - std::sin(a);
        out.labels[n + i] = 1;
    }
    if (cfg.noise_std > 0.0) {
        out.points += cfg.noise_std * rng.normal_matrix(2 * n, 2);
    }
    if (cfg.center) {
        out.points.rowwise() -= out.points.colwise().mean();
    }
    out.points *= cfg.scale_factor;
    return out;
}

LabeledDataset subset_by_class(const LabeledDataset& data, int cls) {
    if (cls < 0 || cls >= data.class_count)
        throw std::invalid_argument("subset_by_class: class out of range");
    const Eigen::Index n = (data.labels.array() == cls).count();
    if (n == 0) throw std::invalid_argument("subset_by_class: class is empty");

    LabeledDataset out;
    out.points.resize(n, data.dim());
    out.labels.resize(n);
    out.class_count = data.class_count;
    Eigen::Index k = 0;
    for (Eigen::Index i = 0; i < data.size(); ++i) {
        if (data.labels[i] == cls) {
            out.points.row(k) = data.points.row(i);
            out.labels[k] = cls;
            ++k;
        }
    }
    return out;
}

void save_csv(const LabeledDataset& data, const std::string& path) {
    std::ofstream f(path, std::ios::binary);  // LF line endings on all platforms
    if (!f) throw std::runtime_error("save_csv: cannot open " + path);
    for (Eigen::Index j = 0; j < data.dim(); ++j) f << "x" << j << ",";
    f << "label\n";
    std::ostringstream row;
    row.precision(17);
    for (Eigen::Index i = 0; i < data.size(); ++i) {
        row.str("");
        for (Eigen::Index j = 0; j < data.dim(); ++j) row << data.points(i, j) << ",";
        row << data.labels[i] << "\n";
        f << row.str();
    }
    if (!f) throw std::runtime_error("save_csv: write failed for " + path);
}

LabeledDataset load_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("load_csv: cannot open " + path);

    std::string line;
    if (!std::getline(f, line)) throw std::runtime_error("load_csv: empty file " + path);
    Eigen::Index d = 0;
    for (char c : line)
        if (c == ',') ++d;

    std::vector<double> coords;
    std::vector<int> labels;
    int line_no = 1;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string cell;
        for (Eigen::Index j = 0; j < d; ++j) {
            if (!std::getline(ss, cell, ','))
                throw std::runtime_error("load_csv: malformed row at line " +
                                         std::to_string(line_no));
            std::size_t pos = 0;
            double v;
            try {
                v = std::stod(cell, &pos);
            } catch (const std::exception&) {
                throw std::runtime_error("load_csv: bad number at line " +
                                         std::to_string(line_no));
            }
            if (pos != cell.size())
                throw std::runtime_error("load_csv: bad number at line " +
                                         std::to_string(line_no));
            coords.push_back(v);
        }
        if (!std::getline(ss, cell))
            throw std::runtime_error("load_csv: missing label at line " +
                                     std::to_string(line_no));
        std::size_t pos = 0;
        int lab;
        try {
            lab = std::stoi(cell, &pos);
        } catch (const std::exception&) {
            throw std::runtime_error("load_csv: bad label at line " + std::to_string(line_no));
        }
        if (pos != cell.size() || lab < 0)
            throw std::runtime_error("load_csv: bad label at line " + std::to_string(line_no));
        labels.push_back(lab);
    }
    if (labels.empty()) throw std::runtime_error("load_csv: no data rows in " + path);

    LabeledDataset out;
    const Eigen::Index n = static_cast<Eigen::Index>(labels.size());
    out.points.resize(n, d);
    out.labels.resize(n);
    int max_label = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < d; ++j)
            out.points(i, j) = coords[static_cast<std::size_t>(i * d + j)];
        out.labels[i] = labels[static_cast<std::size_t>(i)];
        max_label = std::max(max_label, out.labels[i]);
    }
    out.class_count = max_label + 1;
    return out;
}

}  // namespace dlsm
