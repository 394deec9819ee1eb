#pragma once

#include <iosfwd>
#include <string>

#include "dualkit/matrix.hpp"

namespace dualkit {

/// Text fixture format: first line "rows cols", then `rows` lines of `cols`
/// whitespace-separated decimal floats. The writer emits 17 significant
/// digits so values round-trip exactly.
Matrix read_matrix(std::istream& in);
Matrix read_matrix_file(const std::string& path);

void write_matrix(std::ostream& out, const Matrix& m);
void write_matrix_file(const std::string& path, const Matrix& m);

}  // namespace dualkit
