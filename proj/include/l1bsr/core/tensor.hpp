#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "l1bsr/core/errors.hpp"
#include "l1bsr/core/image.hpp"

namespace l1bsr {

struct Shape {
  int n = 0, c = 0, h = 0, w = 0;

  std::size_t numel() const { return static_cast<std::size_t>(n) * c * h * w; }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  friend bool operator==(const Shape&, const Shape&) = default;

  std::string str() const {
    std::ostringstream os;
    os << "[" << n << "," << c << "," << h << "," << w << "]";
    return os.str();
  }
};

/// Dense NCHW tensor. Batched images, conv weights ([out,in,k,k]) and
/// biases ([1,out,1,1]) all use this one layout.
template <class T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape s, T fill = T{}) : shape_(s), data_(s.numel(), fill) {}
  Tensor(int n, int c, int h, int w, T fill = T{}) : Tensor(Shape{n, c, h, w}, fill) {}

  const Shape& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(int n, int c, int y, int x) { return data_[offset(n, c, y, x)]; }
  const T& at(int n, int c, int y, int x) const { return data_[offset(n, c, y, x)]; }

  T* plane(int n, int c) { return data_.data() + offset(n, c, 0, 0); }
  const T* plane(int n, int c) const { return data_.data() + offset(n, c, 0, 0); }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  std::size_t offset(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    std::transform(data_.begin(), data_.end(), out.storage().begin(),
                   [](T v) { return static_cast<U>(v); });
    return out;
  }

  /// Sample n as a planar image.
  Image<T> image(int n) const {
    Image<T> out(shape_.c, shape_.h, shape_.w);
    std::copy_n(plane(n, 0), out.size(), out.data().begin());
    return out;
  }

  static Tensor from_images(const std::vector<Image<T>>& images) {
    require(!images.empty(), "from_images: empty batch");
    const auto& f = images.front();
    Tensor out(static_cast<int>(images.size()), f.channels(), f.height(), f.width());
    for (std::size_t i = 0; i < images.size(); ++i) {
      require(images[i].same_shape(f), "from_images: inconsistent shapes");
      std::copy(images[i].data().begin(), images[i].data().end(),
                out.plane(static_cast<int>(i), 0));
    }
    return out;
  }

  static Tensor from_image(const Image<T>& image) { return from_images({image}); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

}  // namespace l1bsr
