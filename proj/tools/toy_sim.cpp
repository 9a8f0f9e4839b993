// File-protocol wrapper around the toy computer model: reads an input CSV
// of (x, u1, u2) rows, writes a single-column response CSV with NA for
// missing runs. Used to exercise the external-simulator adapter.
#include <iostream>
#include <string>

#include "oscal/io.hpp"
#include "oscal/sim.hpp"

int main(int argc, char** argv) {
    if (argc != 3) {
        std::cerr << "usage: toy_sim <input.csv> <output.csv>\n";
        return 2;
    }
    try {
        Eigen::MatrixXd inputs = oscal::io::read_matrix_csv(argv[1]);
        if (inputs.cols() != 3) {
            std::cerr << "toy_sim: expected 3 input columns, got "
                      << inputs.cols() << "\n";
            return 2;
        }
        std::vector<std::optional<double>> values;
        values.reserve(static_cast<std::size_t>(inputs.rows()));
        for (Eigen::Index i = 0; i < inputs.rows(); ++i)
            values.push_back(oscal::sim::toy_model(inputs(i, 0), inputs(i, 1),
                                                   inputs(i, 2)));
        oscal::io::write_response_csv(argv[2], values);
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "toy_sim: " << e.what() << "\n";
        return 1;
    }
}
