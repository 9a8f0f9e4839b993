#ifndef OSCAL_IO_HPP
#define OSCAL_IO_HPP

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

namespace oscal::io {

// 17 significant digits: doubles round-trip exactly through text.
std::string format_double(double x);

// CSV with a header row. Columns named x1..xd unless names given.
void write_matrix_csv(const std::string& path, const Eigen::MatrixXd& m,
                      const std::vector<std::string>& names = {});
void write_vector_csv(const std::string& path, const Eigen::VectorXd& v,
                      const std::string& name = "y");

// Reads a numeric CSV (header required). Throws ParseError on bad cells.
Eigen::MatrixXd read_matrix_csv(const std::string& path);
Eigen::VectorXd read_vector_csv(const std::string& path);

// Single-column response file; `NA` (any case) or empty field is missing.
std::vector<std::optional<double>> read_response_csv(const std::string& path);
void write_response_csv(const std::string& path,
                        const std::vector<std::optional<double>>& values);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace oscal::io

#endif
