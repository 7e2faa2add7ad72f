#include "asw/matrix.hpp"

#include <string>

#include "asw/error.hpp"

namespace asw {

void Matrix::append_row(std::span<const double> values) {
  if (rows_ == 0 && cols_ == 0) {
    cols_ = values.size();
  }
  if (values.size() != cols_) {
    throw Error(Errc::shape_error, "row width " + std::to_string(values.size()) +
                                       " does not match " + std::to_string(cols_));
  }
  data_.insert(data_.end(), values.begin(), values.end());
  ++rows_;
}

void Matrix::append_rows(const Matrix& other) {
  if (other.rows_ == 0) {
    return;
  }
  if (rows_ == 0 && cols_ == 0) {
    cols_ = other.cols_;
  }
  if (other.cols_ != cols_) {
    throw Error(Errc::shape_error, "column mismatch when concatenating matrices");
  }
  data_.insert(data_.end(), other.data_.begin(), other.data_.end());
  rows_ += other.rows_;
}

}  // namespace asw
