#include "dream/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "dream/binary_io.hpp"

namespace dream {

namespace {

template <typename Scalar>
constexpr DType dtype_of() {
  return std::is_same_v<Scalar, float> ? DType::f32 : DType::f64;
}

std::size_t element_size(DType d) {
  switch (d) {
    case DType::f32: return 4;
    case DType::f64:
    case DType::u64: return 8;
    case DType::bytes: return 1;
  }
  throw CheckpointError("unknown dtype");
}

}  // namespace

void RecordSet::put(const std::string& name, Record r) {
  if (records_.count(name) == 0) order_.push_back(name);
  records_[name] = std::move(r);
}

template <typename Scalar>
void RecordSet::put_matrix(const std::string& name, const Matrix<Scalar>& m) {
  Record r;
  r.dtype = dtype_of<Scalar>();
  r.extents = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
  std::ostringstream out;
  for (Index i = 0; i < m.size(); ++i) io::write_le<Scalar>(out, m.data()[i]);
  const std::string s = out.str();
  r.payload.assign(s.begin(), s.end());
  put(name, std::move(r));
}

void RecordSet::put_u64(const std::string& name, std::uint64_t v) {
  Record r;
  r.dtype = DType::u64;
  std::ostringstream out;
  io::write_le<std::uint64_t>(out, v);
  const std::string s = out.str();
  r.payload.assign(s.begin(), s.end());
  put(name, std::move(r));
}

void RecordSet::put_f64(const std::string& name, double v) {
  Matrix<double> m(1, 1);
  m(0, 0) = v;
  put_matrix<double>(name, m);
}

void RecordSet::put_string(const std::string& name, const std::string& s) {
  Record r;
  r.dtype = DType::bytes;
  r.extents = {s.size()};
  r.payload.assign(s.begin(), s.end());
  put(name, std::move(r));
}

const Record& RecordSet::get(const std::string& name, DType dtype) const {
  auto it = records_.find(name);
  if (it == records_.end()) throw CheckpointError("checkpoint has no record '" + name + "'");
  if (it->second.dtype != dtype) throw CheckpointShapeMismatch("record '" + name + "' has a different dtype");
  return it->second;
}

template <typename Scalar>
Matrix<Scalar> RecordSet::matrix(const std::string& name) const {
  const Record& r = get(name, dtype_of<Scalar>());
  if (r.extents.size() != 2) throw CheckpointShapeMismatch("record '" + name + "' is not rank 2");
  Matrix<Scalar> m(static_cast<Index>(r.extents[0]), static_cast<Index>(r.extents[1]));
  std::istringstream in(std::string(r.payload.begin(), r.payload.end()));
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = io::read_le<Scalar>(in);
  return m;
}

template <typename Scalar>
Matrix<Scalar> RecordSet::matrix(const std::string& name, Index rows, Index cols) const {
  Matrix<Scalar> m = matrix<Scalar>(name);
  if (m.rows() != rows || m.cols() != cols) {
    throw CheckpointShapeMismatch("record '" + name + "' has shape " + std::to_string(m.rows()) + "x" +
                                  std::to_string(m.cols()) + ", expected " + std::to_string(rows) + "x" +
                                  std::to_string(cols));
  }
  return m;
}

std::uint64_t RecordSet::u64(const std::string& name) const {
  const Record& r = get(name, DType::u64);
  std::istringstream in(std::string(r.payload.begin(), r.payload.end()));
  return io::read_le<std::uint64_t>(in);
}

double RecordSet::f64(const std::string& name) const { return matrix<double>(name, 1, 1)(0, 0); }

std::string RecordSet::string(const std::string& name) const {
  const Record& r = get(name, DType::bytes);
  return std::string(r.payload.begin(), r.payload.end());
}

void RecordSet::save(const std::filesystem::path& path) const {
  // Write to a sibling temporary and rename, so readers never see a partial file.
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out.write("DRMC", 4);
    io::write_le<std::uint32_t>(out, kCheckpointVersion);
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(order_.size()));
    for (const auto& name : order_) {
      const Record& r = records_.at(name);
      io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
      io::write_bytes(out, name);
      io::write_le<std::uint8_t>(out, static_cast<std::uint8_t>(r.dtype));
      io::write_le<std::uint8_t>(out, static_cast<std::uint8_t>(r.extents.size()));
      for (auto e : r.extents) io::write_le<std::uint64_t>(out, e);
      io::write_le<std::uint64_t>(out, r.payload.size());
      out.write(r.payload.data(), static_cast<std::streamsize>(r.payload.size()));
    }
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

RecordSet RecordSet::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  RecordSet set;
  try {
    if (io::read_bytes(in, 4) != "DRMC") throw CheckpointError("not a checkpoint: " + path.string());
    const auto version = io::read_le<std::uint32_t>(in);
    if (version != kCheckpointVersion) {
      throw CheckpointVersionError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                                   std::to_string(kCheckpointVersion) + ")");
    }
    const auto count = io::read_le<std::uint32_t>(in);
    for (std::uint32_t i = 0; i < count; ++i) {
      const auto name_len = io::read_le<std::uint32_t>(in);
      const std::string name = io::read_bytes(in, name_len);
      Record r;
      r.dtype = static_cast<DType>(io::read_le<std::uint8_t>(in));
      const auto rank = io::read_le<std::uint8_t>(in);
      std::uint64_t elements = 1;
      for (int k = 0; k < rank; ++k) {
        r.extents.push_back(io::read_le<std::uint64_t>(in));
        elements *= r.extents.back();
      }
      const auto bytes = io::read_le<std::uint64_t>(in);
      if (rank > 0 && bytes != elements * element_size(r.dtype)) {
        throw CheckpointShapeMismatch("record '" + name + "' payload does not match its extents");
      }
      const std::string payload = io::read_bytes(in, bytes);
      r.payload.assign(payload.begin(), payload.end());
      set.put(name, std::move(r));
    }
  } catch (const io::TruncatedInput&) {
    throw CheckpointTruncated("checkpoint is truncated: " + path.string());
  }
  return set;
}

template void RecordSet::put_matrix<float>(const std::string&, const Matrix<float>&);
template void RecordSet::put_matrix<double>(const std::string&, const Matrix<double>&);
template Matrix<float> RecordSet::matrix<float>(const std::string&) const;
template Matrix<double> RecordSet::matrix<double>(const std::string&) const;
template Matrix<float> RecordSet::matrix<float>(const std::string&, Index, Index) const;
template Matrix<double> RecordSet::matrix<double>(const std::string&, Index, Index) const;

}  // namespace dream
