#pragma once

#include <cstdint>
#include <initializer_list>
#include <vector>

#include "vinil/common.hpp"

namespace vinil {

inline int64_t numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

/// Dense row-major tensor of doubles. `node` is a handle into the active
/// Tape when the tensor participates in a differentiable computation,
/// -1 otherwise. Scalars use an empty shape (rank 0, one element).
struct Tensor {
  std::vector<int> shape;
  std::vector<double> values;
  int node = -1;

  Tensor() = default;

  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    validate_shape();
    values.assign(static_cast<size_t>(numel(shape)), 0.0);
  }

  Tensor(std::vector<int> s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
    validate_shape();
    check(static_cast<int64_t>(values.size()) == numel(shape), "Tensor: ", values.size(),
          " values do not fill shape ", shape_str(shape));
  }

  static Tensor scalar(double v) { return Tensor({}, {v}); }

  static Tensor full(std::vector<int> s, double v) {
    Tensor t(std::move(s));
    for (auto& x : t.values) x = v;
    return t;
  }

  int64_t size() const { return static_cast<int64_t>(values.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }

  double& operator[](size_t i) { return values[i]; }
  double operator[](size_t i) const { return values[i]; }

  // 2-D access, row-major.
  double& at(int r, int c) { return values[static_cast<size_t>(r) * shape[1] + c]; }
  double at(int r, int c) const { return values[static_cast<size_t>(r) * shape[1] + c]; }

 private:
  void validate_shape() const {
    for (int d : shape) check(d > 0, "Tensor: nonpositive dimension in shape ", shape_str(shape));
  }
};

inline bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

inline bool is_scalar(const Tensor& t) { return t.values.size() == 1 && t.shape.empty(); }

}  // namespace vinil
