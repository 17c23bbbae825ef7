#include "fracouple/grid.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace fracouple {

double PathIncrements::value(std::size_t c, std::size_t i) const {
    double s = 0.0;
    for (std::size_t j = 0; j < i; ++j) s += increments[c][j];
    return s;
}

std::vector<double> PathIncrements::values(std::size_t c) const {
    std::vector<double> v(grid.n + 1, 0.0);
    for (std::size_t i = 0; i < grid.n; ++i) v[i + 1] = v[i] + increments[c][i];
    return v;
}

void write_path_csv(const PathIncrements& p, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "t";
    for (std::size_t c = 0; c < p.d; ++c) out << ",coord_" << c;
    out << "\n";
    std::vector<std::vector<double>> vals(p.d);
    for (std::size_t c = 0; c < p.d; ++c) vals[c] = p.values(c);
    char buf[64];
    for (std::size_t i = 0; i <= p.grid.n; ++i) {
        std::snprintf(buf, sizeof buf, "%.17g", p.grid.node(i));
        out << buf;
        for (std::size_t c = 0; c < p.d; ++c) {
            std::snprintf(buf, sizeof buf, "%.17g", vals[c][i]);
            out << ',' << buf;
        }
        out << "\n";
    }
}

PathIncrements read_path_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open for reading: " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty CSV: " + path);
    std::size_t d = 0;
    for (char ch : line)
        if (ch == ',') ++d;
    if (d < 1) throw std::runtime_error("malformed CSV header: " + path);
    std::vector<double> times;
    std::vector<std::vector<double>> vals(d);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string cell;
        if (!std::getline(ss, cell, ',')) break;
        times.push_back(std::stod(cell));
        for (std::size_t c = 0; c < d; ++c) {
            if (!std::getline(ss, cell, ','))
                throw std::runtime_error("short CSV row: " + path);
            vals[c].push_back(std::stod(cell));
        }
    }
    if (times.size() < 2) throw std::runtime_error("CSV needs at least 2 rows: " + path);
    double dt = times[1] - times[0];
    PathIncrements p(UniformGrid(times[0], dt, times.size() - 1), d);
    for (std::size_t c = 0; c < d; ++c)
        for (std::size_t i = 0; i + 1 < times.size(); ++i)
            p.increments[c][i] = vals[c][i + 1] - vals[c][i];
    return p;
}

} // namespace fracouple
