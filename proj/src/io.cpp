#include "oscal/io.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "oscal/errors.hpp"

namespace oscal::io {

std::string format_double(double x) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
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

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

double parse_double(const std::string& tok, long row) {
    const std::string t = trim(tok);
    try {
        std::size_t pos = 0;
        double v = std::stod(t, &pos);
        if (pos != t.size()) throw std::invalid_argument(t);
        return v;
    } catch (const std::exception&) {
        throw ParseError("unparseable numeric field '" + tok + "' at row " +
                             std::to_string(row),
                         row);
    }
}

bool is_na_token(const std::string& tok) {
    std::string t = trim(tok);
    std::transform(t.begin(), t.end(), t.begin(),
                   [](unsigned char c) { return std::toupper(c); });
    return t.empty() || t == "NA";
}

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open file: " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    // drop trailing blank lines
    while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
    return lines;
}

}  // namespace

void write_matrix_csv(const std::string& path, const Eigen::MatrixXd& m,
                      const std::vector<std::string>& names) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open file for writing: " + path);
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
        if (j) out << ',';
        if (static_cast<Eigen::Index>(names.size()) == m.cols())
            out << names[static_cast<std::size_t>(j)];
        else
            out << 'x' << (j + 1);
    }
    out << '\n';
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            if (j) out << ',';
            out << format_double(m(i, j));
        }
        out << '\n';
    }
}

void write_vector_csv(const std::string& path, const Eigen::VectorXd& v,
                      const std::string& name) {
    write_matrix_csv(path, v, {name});
}

Eigen::MatrixXd read_matrix_csv(const std::string& path) {
    auto lines = read_lines(path);
    if (lines.empty()) throw ParseError("empty CSV: " + path);
    const auto header = split_line(lines[0]);
    const Eigen::Index d = static_cast<Eigen::Index>(header.size());
    const Eigen::Index n = static_cast<Eigen::Index>(lines.size()) - 1;
    Eigen::MatrixXd m(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        auto toks = split_line(lines[static_cast<std::size_t>(i + 1)]);
        if (static_cast<Eigen::Index>(toks.size()) != d)
            throw ParseError("row " + std::to_string(i + 1) + " has " +
                                 std::to_string(toks.size()) + " fields, expected " +
                                 std::to_string(d) + " in " + path,
                             i + 1);
        for (Eigen::Index j = 0; j < d; ++j)
            m(i, j) = parse_double(toks[static_cast<std::size_t>(j)], i + 1);
    }
    return m;
}

Eigen::VectorXd read_vector_csv(const std::string& path) {
    Eigen::MatrixXd m = read_matrix_csv(path);
    if (m.cols() != 1)
        throw ParseError("expected single column in " + path);
    return m.col(0);
}

std::vector<std::optional<double>> read_response_csv(const std::string& path) {
    auto lines = read_lines(path);
    if (lines.empty()) throw ParseError("empty response CSV: " + path);
    std::vector<std::optional<double>> out;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        auto toks = split_line(lines[i]);
        if (toks.size() != 1)
            throw ParseError("expected one field per response row in " + path,
                             static_cast<long>(i));
        if (is_na_token(toks[0]))
            out.emplace_back(std::nullopt);
        else
            out.emplace_back(parse_double(toks[0], static_cast<long>(i)));
    }
    return out;
}

void write_response_csv(const std::string& path,
                        const std::vector<std::optional<double>>& values) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open file for writing: " + path);
    out << "y\n";
    for (const auto& v : values) {
        if (v)
            out << format_double(*v) << '\n';
        else
            out << "NA\n";
    }
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open file for writing: " + path);
    out << content;
}

}  // namespace oscal::io
