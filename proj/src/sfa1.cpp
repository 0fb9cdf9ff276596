#include "saelab/sfa1.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

namespace saelab {

namespace {

static_assert(std::endian::native == std::endian::little, "SFA1 I/O assumes a little-endian host");

template <typename T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::ifstream& in, const std::string& path, const char* what) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw Error(path + ": truncated header (" + what + ")");
  return v;
}

}  // namespace

void write_array(const std::string& path, const Array& a) {
  std::uint64_t count = 1;
  for (auto d : a.dims) {
    if (d != 0 && count > std::numeric_limits<std::uint64_t>::max() / d) throw Error(path + ": dims overflow");
    count *= d;
  }
  require_dims(count == a.data.size(), path + ": payload size does not match dims");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path + " for writing");
  out.write("SFA1", 4);
  put<std::uint32_t>(out, 0);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(a.dims.size()));
  for (auto d : a.dims) put<std::uint64_t>(out, d);
  out.write(reinterpret_cast<const char*>(a.data.data()), static_cast<std::streamsize>(a.data.size() * sizeof(double)));
  if (!out) throw Error("write failed for " + path);
}

Array read_array(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  char magic[4];
  if (!in.read(magic, 4)) throw Error(path + ": truncated header (magic)");
  if (std::memcmp(magic, "SFA1", 4) != 0) throw Error(path + ": bad magic, not an SFA1 file");
  const auto dtype = get<std::uint32_t>(in, path, "dtype");
  if (dtype != 0) throw Error(path + ": unsupported dtype code " + std::to_string(dtype));
  const auto ndim = get<std::uint32_t>(in, path, "ndim");
  Array a;
  std::uint64_t count = 1;
  for (std::uint32_t i = 0; i < ndim; ++i) {
    const auto d = get<std::uint64_t>(in, path, "dims");
    if (d != 0 && count > std::numeric_limits<std::uint64_t>::max() / 8 / d) throw Error(path + ": dims overflow");
    count *= d;
    a.dims.push_back(d);
  }
  in.seekg(0, std::ios::end);
  const auto end = static_cast<std::uint64_t>(in.tellg());
  const std::uint64_t header = 12 + 8ull * ndim;
  if (end < header + 8 * count) throw Error(path + ": truncated payload");
  if (end > header + 8 * count) throw Error(path + ": trailing bytes after payload");
  in.seekg(static_cast<std::streamoff>(header));
  a.data.resize(count);
  in.read(reinterpret_cast<char*>(a.data.data()), static_cast<std::streamsize>(count * 8));
  if (!in) throw Error(path + ": truncated payload");
  return a;
}

void write_array(const std::string& path, const Matrix& m) {
  Array a;
  a.dims = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
  a.data.assign(m.data(), m.data() + m.size());
  write_array(path, a);
}

void write_array(const std::string& path, const Vector& v) {
  Array a;
  a.dims = {static_cast<std::uint64_t>(v.size())};
  a.data.assign(v.data(), v.data() + v.size());
  write_array(path, a);
}

Matrix read_matrix(const std::string& path) {
  const Array a = read_array(path);
  if (a.dims.size() != 2) throw DimensionError(path + ": expected a 2-d array");
  Matrix m(static_cast<Index>(a.dims[0]), static_cast<Index>(a.dims[1]));
  if (!a.data.empty()) std::memcpy(m.data(), a.data.data(), a.data.size() * sizeof(double));
  return m;
}

Vector read_vector(const std::string& path) {
  const Array a = read_array(path);
  if (a.dims.size() != 1) throw DimensionError(path + ": expected a 1-d array");
  return Eigen::Map<const Vector>(a.data.data(), static_cast<Index>(a.data.size()));
}

void write_coefficients(const std::string& path, const CoefficientMatrix& H) {
  Matrix coo(H.h.nonZeros(), 3);
  Index k = 0;
  for (Index r = 0; r < H.h.outerSize(); ++r)
    for (SparseMatrix::InnerIterator it(H.h, r); it; ++it, ++k) {
      coo(k, 0) = static_cast<double>(r);
      coo(k, 1) = static_cast<double>(it.col());
      coo(k, 2) = it.value();
    }
  write_array(path, coo);
}

CoefficientMatrix read_coefficients(const std::string& path, Index N, Index n) {
  const Matrix coo = read_matrix(path);
  require_dims(coo.cols() == 3, path + ": expected an nnz x 3 coordinate array");
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(coo.rows()));
  Index max_row_nnz = 0;
  std::vector<Index> row_nnz(static_cast<std::size_t>(N), 0);
  for (Index k = 0; k < coo.rows(); ++k) {
    const auto r = static_cast<Index>(coo(k, 0));
    const auto c = static_cast<Index>(coo(k, 1));
    if (r < 0 || r >= N || c < 0 || c >= n) throw DimensionError(path + ": coordinate out of range");
    trip.emplace_back(r, c, coo(k, 2));
    max_row_nnz = std::max(max_row_nnz, ++row_nnz[r]);
  }
  CoefficientMatrix H;
  H.h.resize(N, n);
  H.h.setFromTriplets(trip.begin(), trip.end());
  H.h.makeCompressed();
  H.s = static_cast<int>(max_row_nnz);
  return H;
}

}  // namespace saelab
