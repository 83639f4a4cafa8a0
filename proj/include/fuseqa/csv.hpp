#pragma once

#include <fstream>
#include <iomanip>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fuseqa/fusion.hpp"
#include "fuseqa/taxonomy.hpp"

namespace fuseqa {

// Matrix files use the header `sample_id,c0..c{D-1}`; rows are numbered in
// order. Probabilities, features and 0/1 labels all share this layout.
inline void save_matrix_csv(std::span<const std::vector<double>> rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    const std::size_t dim = rows.empty() ? 0 : rows.front().size();
    out << "sample_id";
    for (std::size_t j = 0; j < dim; ++j) out << ",c" << j;
    out << '\n';
    out << std::setprecision(17);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != dim) throw std::invalid_argument("save_matrix_csv: ragged rows");
        out << i;
        for (double v : rows[i]) out << ',' << v;
        out << '\n';
    }
}

inline std::vector<std::vector<double>> load_matrix_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty matrix file: " + path);
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        bool first = true;
        while (std::getline(ss, cell, ',')) {
            if (first) {  // sample_id column
                first = false;
                continue;
            }
            row.push_back(std::stod(cell));
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

inline void save_labels_csv(std::span<const LabelSet> labels, const std::string& path) {
    std::vector<std::vector<double>> rows;
    rows.reserve(labels.size());
    for (const LabelSet& ls : labels) {
        std::vector<double> row(ls.size());
        for (std::size_t j = 0; j < ls.size(); ++j) row[j] = ls.test(j) ? 1.0 : 0.0;
        rows.push_back(std::move(row));
    }
    save_matrix_csv(rows, path);
}

inline std::vector<LabelSet> load_labels_csv(const std::string& path) {
    const auto rows = load_matrix_csv(path);
    std::vector<LabelSet> labels;
    labels.reserve(rows.size());
    for (const auto& row : rows) {
        LabelSet ls(row.size());
        for (std::size_t j = 0; j < row.size(); ++j) {
            if (row[j] != 0.0 && row[j] != 1.0)
                throw std::invalid_argument("load_labels_csv: labels must be 0 or 1");
            ls.set(j, row[j] == 1.0);
        }
        labels.push_back(std::move(ls));
    }
    return labels;
}

}  // namespace fuseqa
