#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <stdexcept>

namespace rpk {

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dense NCHW tensor over a contiguous Eigen array. Rank-4 covers every shape
// this kit needs; lower-rank data uses size-1 leading dims.
template <typename Scalar>
struct Tensor {
  using Storage = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  std::array<int, 4> dims{0, 0, 0, 0};  // n, c, h, w
  Storage v;

  Tensor() = default;
  Tensor(int n, int c, int h, int w) { resize(n, c, h, w); }

  void resize(int n, int c, int h, int w) {
    dims = {n, c, h, w};
    v.setZero(static_cast<Eigen::Index>(n) * c * h * w);
  }

  static Tensor zeros(int n, int c, int h, int w) { return Tensor(n, c, h, w); }

  static Tensor full(int n, int c, int h, int w, Scalar value) {
    Tensor t(n, c, h, w);
    t.v.setConstant(value);
    return t;
  }

  static Tensor scalar(Scalar value) { return full(1, 1, 1, 1, value); }

  int n() const { return dims[0]; }
  int c() const { return dims[1]; }
  int h() const { return dims[2]; }
  int w() const { return dims[3]; }
  Eigen::Index size() const { return v.size(); }

  Scalar* data() { return v.data(); }
  const Scalar* data() const { return v.data(); }

  Scalar& at(int n_, int c_, int y, int x) {
    return v[((static_cast<Eigen::Index>(n_) * dims[1] + c_) * dims[2] + y) * dims[3] + x];
  }
  Scalar at(int n_, int c_, int y, int x) const {
    return v[((static_cast<Eigen::Index>(n_) * dims[1] + c_) * dims[2] + y) * dims[3] + x];
  }

  // Pointer to the start of channel c_ of sample n_.
  Scalar* plane(int n_, int c_) {
    return data() + (static_cast<Eigen::Index>(n_) * dims[1] + c_) * dims[2] * dims[3];
  }
  const Scalar* plane(int n_, int c_) const {
    return data() + (static_cast<Eigen::Index>(n_) * dims[1] + c_) * dims[2] * dims[3];
  }

  bool same_shape(const Tensor& o) const { return dims == o.dims; }

  template <typename Other>
  Tensor<Other> cast() const {
    Tensor<Other> t(dims[0], dims[1], dims[2], dims[3]);
    t.v = v.template cast<Other>();
    return t;
  }
};

template <typename Scalar>
void require_same_shape(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* what) {
  if (!a.same_shape(b)) throw ShapeError(std::string("shape mismatch in ") + what);
}

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace rpk
