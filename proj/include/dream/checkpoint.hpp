#pragma once

// Checkpoint container: "DRMC", u32 version, u32 record count, then records of
// {u32 name length, name, u8 dtype, u8 rank, u64 extents[rank], payload}.
// All integers and floats are little-endian.

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "dream/tensor.hpp"

namespace dream {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class CheckpointVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointTruncated : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointShapeMismatch : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

enum class DType : std::uint8_t { f32 = 1, f64 = 2, u64 = 3, bytes = 4 };

struct Record {
  DType dtype = DType::bytes;
  std::vector<std::uint64_t> extents;
  std::vector<char> payload;  // raw little-endian values
};

class RecordSet {
 public:
  template <typename Scalar>
  void put_matrix(const std::string& name, const Matrix<Scalar>& m);
  void put_u64(const std::string& name, std::uint64_t v);
  void put_f64(const std::string& name, double v);
  void put_string(const std::string& name, const std::string& s);

  /// Reads a matrix record, converting nothing: the stored dtype must match Scalar.
  template <typename Scalar>
  Matrix<Scalar> matrix(const std::string& name) const;
  /// As matrix(), but also checks the stored extents.
  template <typename Scalar>
  Matrix<Scalar> matrix(const std::string& name, Index rows, Index cols) const;
  std::uint64_t u64(const std::string& name) const;
  double f64(const std::string& name) const;
  std::string string(const std::string& name) const;

  bool contains(const std::string& name) const { return records_.count(name) != 0; }
  const std::vector<std::string>& names() const { return order_; }

  void save(const std::filesystem::path& path) const;
  static RecordSet load(const std::filesystem::path& path);

 private:
  const Record& get(const std::string& name, DType dtype) const;
  void put(const std::string& name, Record r);

  std::map<std::string, Record> records_;
  std::vector<std::string> order_;
};

extern template void RecordSet::put_matrix<float>(const std::string&, const Matrix<float>&);
extern template void RecordSet::put_matrix<double>(const std::string&, const Matrix<double>&);
extern template Matrix<float> RecordSet::matrix<float>(const std::string&) const;
extern template Matrix<double> RecordSet::matrix<double>(const std::string&) const;
extern template Matrix<float> RecordSet::matrix<float>(const std::string&, Index, Index) const;
extern template Matrix<double> RecordSet::matrix<double>(const std::string&, Index, Index) const;

}  // namespace dream
