#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <variant>
#include <vector>

#include "orl/dataset.hpp"

namespace orl {

// Full-precision float formatting; %.17g round-trips doubles exactly, which
// the byte-identical reproducibility contract relies on.
inline std::string fmt_full(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

namespace detail {

inline double parse_double(const std::string& s, Index row, const std::string& col) {
    try {
        size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing chars");
        if (!std::isfinite(v))
            throw NonFiniteValue("non-finite value in column '" + col + "' at data row " +
                                 std::to_string(row));
        return v;
    } catch (const NonFiniteValue&) {
        throw;
    } catch (const std::exception&) {
        throw NonFiniteValue("unparseable value '" + s + "' in column '" + col +
                             "' at data row " + std::to_string(row));
    }
}

}  // namespace detail

// Loads a dataset CSV. Header row is required and names columns
// x_0..x_{d-1}, a, y and optionally mu0, mu1, pi1, y0, y1 (plus tau, which is
// always recomputed as mu1 - mu0). Returns an OracleDataset iff all five
// oracle columns are present. Row order is preserved.
inline std::variant<Dataset, OracleDataset> load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open CSV file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw MissingColumn("empty CSV file: " + path);
    std::vector<std::string> header = split_csv_line(line);
    std::map<std::string, int> col;
    for (size_t i = 0; i < header.size(); ++i) col[header[i]] = static_cast<int>(i);

    int d = 0;
    while (col.count("x_" + std::to_string(d))) ++d;
    if (d == 0) throw MissingColumn("missing column 'x_0' in " + path);
    if (!col.count("a")) throw MissingColumn("missing column 'a' in " + path);
    if (!col.count("y")) throw MissingColumn("missing column 'y' in " + path);

    const char* oracle_cols[] = {"mu0", "mu1", "pi1", "y0", "y1"};
    bool has_oracle = true;
    for (const char* c : oracle_cols)
        if (!col.count(c)) has_oracle = false;

    std::vector<std::vector<double>> rows;
    Index r = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        ++r;
        std::vector<std::string> f = split_csv_line(line);
        if (f.size() != header.size())
            throw OrlError("wrong field count at data row " + std::to_string(r) + " in " + path);
        std::vector<double> vals(header.size());
        for (size_t i = 0; i < f.size(); ++i) vals[i] = detail::parse_double(f[i], r, header[i]);
        rows.push_back(std::move(vals));
    }
    Index n = static_cast<Index>(rows.size());
    if (n == 0) throw EmptySample("CSV has no data rows: " + path);

    Dataset base;
    base.X.resize(n, d);
    base.A.resize(n);
    base.Y.resize(n);
    for (Index i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) base.X(i, j) = rows[i][col["x_" + std::to_string(j)]];
        double a = rows[i][col["a"]];
        if (a != 0.0 && a != 1.0)
            throw NonBinaryTreatment("treatment value " + fmt_full(a) + " at data row " +
                                     std::to_string(i + 1));
        base.A[i] = a;
        base.Y[i] = rows[i][col["y"]];
    }
    base.validate();

    if (!has_oracle) return base;

    OracleDataset od;
    od.base = std::move(base);
    od.mu0.resize(n);
    od.mu1.resize(n);
    od.pi1.resize(n);
    od.tau.resize(n);
    od.y0.resize(n);
    od.y1.resize(n);
    for (Index i = 0; i < n; ++i) {
        od.mu0[i] = rows[i][col["mu0"]];
        od.mu1[i] = rows[i][col["mu1"]];
        od.pi1[i] = rows[i][col["pi1"]];
        od.y0[i] = rows[i][col["y0"]];
        od.y1[i] = rows[i][col["y1"]];
        od.tau[i] = od.mu1[i] - od.mu0[i];  // invariant: tau = mu1 - mu0
        if (!(od.pi1[i] > 0.0 && od.pi1[i] < 1.0))
            throw OrlError("pi1 outside (0,1) at data row " + std::to_string(i + 1));
    }
    return od;
}

inline void save_csv(const Dataset& d, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write CSV file: " + path);
    for (Index j = 0; j < d.dim(); ++j) out << "x_" << j << ",";
    out << "a,y\n";
    for (Index i = 0; i < d.n(); ++i) {
        for (Index j = 0; j < d.dim(); ++j) out << fmt_full(d.X(i, j)) << ",";
        out << fmt_full(d.A[i]) << "," << fmt_full(d.Y[i]) << "\n";
    }
}

inline void save_csv(const OracleDataset& d, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write CSV file: " + path);
    for (Index j = 0; j < d.dim(); ++j) out << "x_" << j << ",";
    out << "a,y,mu0,mu1,pi1,tau,y0,y1\n";
    for (Index i = 0; i < d.n(); ++i) {
        for (Index j = 0; j < d.dim(); ++j) out << fmt_full(d.base.X(i, j)) << ",";
        out << fmt_full(d.base.A[i]) << "," << fmt_full(d.base.Y[i]) << "," << fmt_full(d.mu0[i])
            << "," << fmt_full(d.mu1[i]) << "," << fmt_full(d.pi1[i]) << "," << fmt_full(d.tau[i])
            << "," << fmt_full(d.y0[i]) << "," << fmt_full(d.y1[i]) << "\n";
    }
}

inline std::string csv_string(const OracleDataset& d) {
    std::ostringstream ss;
    for (Index j = 0; j < d.dim(); ++j) ss << "x_" << j << ",";
    ss << "a,y,mu0,mu1,pi1,tau,y0,y1\n";
    for (Index i = 0; i < d.n(); ++i) {
        for (Index j = 0; j < d.dim(); ++j) ss << fmt_full(d.base.X(i, j)) << ",";
        ss << fmt_full(d.base.A[i]) << "," << fmt_full(d.base.Y[i]) << "," << fmt_full(d.mu0[i])
           << "," << fmt_full(d.mu1[i]) << "," << fmt_full(d.pi1[i]) << "," << fmt_full(d.tau[i])
           << "," << fmt_full(d.y0[i]) << "," << fmt_full(d.y1[i]) << "\n";
    }
    return ss.str();
}

}  // namespace orl
