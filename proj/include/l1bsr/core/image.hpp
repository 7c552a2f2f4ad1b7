#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "l1bsr/core/errors.hpp"

namespace l1bsr {

/// Spectral band order of every 4-band raster.
enum class Band : int { b = 0, g = 1, r = 2, n = 3 };

inline constexpr int kNumBands = 4;
inline constexpr std::array<char, kNumBands> kBandNames = {'b', 'g', 'r', 'n'};

inline int band_index(char name) {
  for (int i = 0; i < kNumBands; ++i)
    if (kBandNames[i] == name) return i;
  throw DataError(std::string("unknown band '") + name + "'");
}

/// Planar raster: channels x height x width, row-major planes.
template <class T>
class Image {
 public:
  using value_type = T;

  Image() = default;
  Image(int channels, int height, int width, T fill = T{})
      : channels_(channels), height_(height), width_(width),
        data_(static_cast<std::size_t>(channels) * height * width, fill) {
    require(channels >= 0 && height >= 0 && width >= 0, "negative image dimension");
  }

  int channels() const { return channels_; }
  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t plane_size() const { return static_cast<std::size_t>(height_) * width_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(int c, int y, int x) { return data_[index(c, y, x)]; }
  const T& operator()(int c, int y, int x) const { return data_[index(c, y, x)]; }

  std::span<T> plane(int c) { return {data_.data() + c * plane_size(), plane_size()}; }
  std::span<const T> plane(int c) const { return {data_.data() + c * plane_size(), plane_size()}; }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  bool same_shape(const Image& o) const {
    return channels_ == o.channels_ && height_ == o.height_ && width_ == o.width_;
  }
  bool same_grid(const Image& o) const { return height_ == o.height_ && width_ == o.width_; }

  Image channel(int c) const {
    require(c >= 0 && c < channels_, "channel index out of range");
    Image out(1, height_, width_);
    std::copy(plane(c).begin(), plane(c).end(), out.data_.begin());
    return out;
  }

  void set_channel(int c, const Image& src) {
    require(src.channels_ == 1 && same_grid(src), "set_channel: shape mismatch");
    std::copy(src.data_.begin(), src.data_.end(), plane(c).begin());
  }

  Image crop(int y0, int x0, int h, int w) const {
    require(y0 >= 0 && x0 >= 0 && y0 + h <= height_ && x0 + w <= width_,
            "crop window outside image");
    Image out(channels_, h, w);
    for (int c = 0; c < channels_; ++c)
      for (int y = 0; y < h; ++y)
        std::copy_n(&(*this)(c, y0 + y, x0), w, &out(c, y, 0));
    return out;
  }

  template <class U>
  Image<U> cast() const {
    Image<U> out(channels_, height_, width_);
    std::transform(data_.begin(), data_.end(), out.data().begin(),
                   [](T v) { return static_cast<U>(v); });
    return out;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  friend bool operator==(const Image& a, const Image& b) {
    return a.same_shape(b) && a.data_ == b.data_;
  }

 private:
  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * height_ + y) * width_ + x;
  }

  int channels_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<T> data_;
};

template <class T>
Image<T> stack_channels(const std::vector<Image<T>>& planes) {
  require(!planes.empty(), "stack_channels: nothing to stack");
  Image<T> out(static_cast<int>(planes.size()), planes[0].height(), planes[0].width());
  for (std::size_t i = 0; i < planes.size(); ++i) out.set_channel(static_cast<int>(i), planes[i]);
  return out;
}

/// Dense displacement field; channel 0 = dx, channel 1 = dy, in pixels of
/// the field's own grid.
template <class T>
class FlowField : public Image<T> {
 public:
  FlowField() = default;
  FlowField(int height, int width, T dx = T{}, T dy = T{}) : Image<T>(2, height, width) {
    std::fill(this->plane(0).begin(), this->plane(0).end(), dx);
    std::fill(this->plane(1).begin(), this->plane(1).end(), dy);
  }
  explicit FlowField(Image<T> uv) : Image<T>(std::move(uv)) {
    require(this->channels() == 2, "flow field must have exactly 2 planes");
  }

  T& dx(int y, int x) { return (*this)(0, y, x); }
  T& dy(int y, int x) { return (*this)(1, y, x); }
  const T& dx(int y, int x) const { return (*this)(0, y, x); }
  const T& dy(int y, int x) const { return (*this)(1, y, x); }
};

using MultiBandImage = Image<float>;
using BandImage = Image<float>;

inline void check_multiband(const MultiBandImage& im) {
  require(im.channels() == kNumBands, "multi-band image must have 4 bands");
}

}  // namespace l1bsr
