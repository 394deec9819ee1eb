#include "dualkit/matrix_io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "dualkit/errors.hpp"

namespace dualkit {

Matrix read_matrix(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw ParseError("missing header line", 1);
    std::istringstream header(line);
    long long rows = 0, cols = 0;
    if (!(header >> rows >> cols) || rows <= 0 || cols <= 0)
        throw ParseError("header must be two positive integers: rows cols", 1);

    std::vector<double> entries;
    entries.reserve(static_cast<std::size_t>(rows * cols));
    for (long long i = 0; i < rows; ++i) {
        const int line_no = static_cast<int>(i) + 2;
        if (!std::getline(in, line))
            throw ParseError("expected " + std::to_string(rows) + " data rows, got " +
                                 std::to_string(i),
                             line_no);
        std::istringstream row(line);
        for (long long j = 0; j < cols; ++j) {
            double x = 0.0;
            if (!(row >> x))
                throw ParseError("row has fewer than " + std::to_string(cols) + " values", line_no);
            if (!std::isfinite(x)) throw ParseError("non-finite entry", line_no);
            entries.push_back(x);
        }
        double extra = 0.0;
        if (row >> extra)
            throw ParseError("row has more than " + std::to_string(cols) + " values", line_no);
    }
    return Matrix(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols),
                  std::move(entries));
}

Matrix read_matrix_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open '" + path + "'");
    return read_matrix(in);
}

void write_matrix(std::ostream& out, const Matrix& m) {
    out << m.rows() << ' ' << m.cols() << '\n';
    char buf[64];
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g", m(i, j));
            if (j) out << ' ';
            out << buf;
        }
        out << '\n';
    }
}

void write_matrix_file(const std::string& path, const Matrix& m) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open '" + path + "' for writing");
    write_matrix(out, m);
}

}  // namespace dualkit
