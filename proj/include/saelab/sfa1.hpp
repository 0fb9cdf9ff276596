#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "saelab/common.hpp"
#include "saelab/synthdata.hpp"

namespace saelab {

// "SFA1" | u32 dtype (0 = f64) | u32 ndim | ndim x u64 dims | row-major payload,
// all little-endian.
struct Array {
  std::vector<std::uint64_t> dims;
  std::vector<double> data;
};

void write_array(const std::string& path, const Array& array);
Array read_array(const std::string& path);

void write_array(const std::string& path, const Matrix& m);
void write_array(const std::string& path, const Vector& v);
Matrix read_matrix(const std::string& path);
Vector read_vector(const std::string& path);

// Sparse coefficients as an nnz x 3 array of (row, col, value). The shape is
// not stored; callers take (N, n) from the run manifest.
void write_coefficients(const std::string& path, const CoefficientMatrix& H);
CoefficientMatrix read_coefficients(const std::string& path, Index N, Index n);

}  // namespace saelab
