#include "ccl/kernels.hpp"

#include <algorithm>

#include "kernel_instantiate.hpp"

namespace ccl::kernels::serial {

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> in, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> out) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  for (std::size_t n = 0; n < g.batch; ++n) {
    const T* x = in.data() + n * g.in_sample();
    T* y = out.data() + n * g.out_sample();
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        T* yo = y + (oy * ow + ox) * g.out_c;
        for (std::size_t co = 0; co < g.out_c; ++co) yo[co] = bias[co];
        for (std::size_t ky = 0; ky < g.kernel; ++ky) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
          for (std::size_t kx = 0; kx < g.kernel; ++kx) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
            const T* xi = x + (static_cast<std::size_t>(iy) * g.in_w + static_cast<std::size_t>(ix)) * g.in_c;
            const T* wk = weight.data() + (ky * g.kernel + kx) * g.in_c * g.out_c;
            for (std::size_t ci = 0; ci < g.in_c; ++ci) {
              const T v = xi[ci];
              const T* wr = wk + ci * g.out_c;
              for (std::size_t co = 0; co < g.out_c; ++co) yo[co] += v * wr[co];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> dout, std::span<const T> weight,
                           std::span<T> din) {
  std::fill(din.begin(), din.end(), T{0});
  const std::size_t oh = g.out_h(), ow = g.out_w();
  for (std::size_t n = 0; n < g.batch; ++n) {
    const T* dy = dout.data() + n * g.out_sample();
    T* dx = din.data() + n * g.in_sample();
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const T* dyo = dy + (oy * ow + ox) * g.out_c;
        for (std::size_t ky = 0; ky < g.kernel; ++ky) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
          for (std::size_t kx = 0; kx < g.kernel; ++kx) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
            T* dxi = dx + (static_cast<std::size_t>(iy) * g.in_w + static_cast<std::size_t>(ix)) * g.in_c;
            const T* wk = weight.data() + (ky * g.kernel + kx) * g.in_c * g.out_c;
            for (std::size_t ci = 0; ci < g.in_c; ++ci) {
              const T* wr = wk + ci * g.out_c;
              T s = 0;
              for (std::size_t co = 0; co < g.out_c; ++co) s += dyo[co] * wr[co];
              dxi[ci] += s;
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_params(const ConvGeometry& g, std::span<const T> in, std::span<const T> dout,
                            std::span<T> dweight, std::span<T> dbias) {
  std::fill(dweight.begin(), dweight.end(), T{0});
  std::fill(dbias.begin(), dbias.end(), T{0});
  const std::size_t oh = g.out_h(), ow = g.out_w();
  for (std::size_t n = 0; n < g.batch; ++n) {
    const T* x = in.data() + n * g.in_sample();
    const T* dy = dout.data() + n * g.out_sample();
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const T* dyo = dy + (oy * ow + ox) * g.out_c;
        for (std::size_t co = 0; co < g.out_c; ++co) dbias[co] += dyo[co];
        for (std::size_t ky = 0; ky < g.kernel; ++ky) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
          for (std::size_t kx = 0; kx < g.kernel; ++kx) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
            const T* xi = x + (static_cast<std::size_t>(iy) * g.in_w + static_cast<std::size_t>(ix)) * g.in_c;
            T* dwk = dweight.data() + (ky * g.kernel + kx) * g.in_c * g.out_c;
            for (std::size_t ci = 0; ci < g.in_c; ++ci) {
              const T v = xi[ci];
              T* dwr = dwk + ci * g.out_c;
              for (std::size_t co = 0; co < g.out_c; ++co) dwr[co] += v * dyo[co];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void dense_forward(const DenseGeometry& g, std::span<const T> in, std::span<const T> weight,
                   std::span<const T> bias, std::span<T> out) {
  for (std::size_t n = 0; n < g.batch; ++n) {
    const T* x = in.data() + n * g.in;
    T* y = out.data() + n * g.out;
    for (std::size_t j = 0; j < g.out; ++j) y[j] = bias[j];
    for (std::size_t i = 0; i < g.in; ++i) {
      const T v = x[i];
      const T* wr = weight.data() + i * g.out;
      for (std::size_t j = 0; j < g.out; ++j) y[j] += v * wr[j];
    }
  }
}

template <typename T>
void dense_backward_input(const DenseGeometry& g, std::span<const T> dout, std::span<const T> weight,
                          std::span<T> din) {
  for (std::size_t n = 0; n < g.batch; ++n) {
    const T* dy = dout.data() + n * g.out;
    T* dx = din.data() + n * g.in;
    for (std::size_t i = 0; i < g.in; ++i) {
      const T* wr = weight.data() + i * g.out;
      T s = 0;
      for (std::size_t j = 0; j < g.out; ++j) s += dy[j] * wr[j];
      dx[i] = s;
    }
  }
}

template <typename T>
void dense_backward_params(const DenseGeometry& g, std::span<const T> in, std::span<const T> dout,
                           std::span<T> dweight, std::span<T> dbias) {
  std::fill(dweight.begin(), dweight.end(), T{0});
  std::fill(dbias.begin(), dbias.end(), T{0});
  for (std::size_t n = 0; n < g.batch; ++n) {
    const T* x = in.data() + n * g.in;
    const T* dy = dout.data() + n * g.out;
    for (std::size_t j = 0; j < g.out; ++j) dbias[j] += dy[j];
    for (std::size_t i = 0; i < g.in; ++i) {
      const T v = x[i];
      T* dwr = dweight.data() + i * g.out;
      for (std::size_t j = 0; j < g.out; ++j) dwr[j] += v * dy[j];
    }
  }
}

template <typename T>
void relu_forward(std::span<const T> in, std::span<T> out) {
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > T{0} ? in[i] : T{0};
}

template <typename T>
void relu_backward(std::span<const T> in, std::span<const T> dout, std::span<T> din) {
  for (std::size_t i = 0; i < in.size(); ++i) din[i] = in[i] > T{0} ? dout[i] : T{0};
}

template <typename T>
void avgpool2_forward(const PoolGeometry& g, std::span<const T> in, std::span<T> out) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), c = g.channels;
  for (std::size_t n = 0; n < g.batch; ++n) {
    const T* x = in.data() + n * g.in_h * g.in_w * c;
    T* y = out.data() + n * oh * ow * c;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const T* a = x + ((2 * oy) * g.in_w + 2 * ox) * c;
        const T* b = a + c;
        const T* d = a + g.in_w * c;
        const T* e = d + c;
        T* yo = y + (oy * ow + ox) * c;
        for (std::size_t ch = 0; ch < c; ++ch) yo[ch] = T(0.25) * (a[ch] + b[ch] + d[ch] + e[ch]);
      }
    }
  }
}

template <typename T>
void avgpool2_backward(const PoolGeometry& g, std::span<const T> dout, std::span<T> din) {
  std::fill(din.begin(), din.end(), T{0});
  const std::size_t oh = g.out_h(), ow = g.out_w(), c = g.channels;
  for (std::size_t n = 0; n < g.batch; ++n) {
    const T* dy = dout.data() + n * oh * ow * c;
    T* dx = din.data() + n * g.in_h * g.in_w * c;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const T* dyo = dy + (oy * ow + ox) * c;
        T* a = dx + ((2 * oy) * g.in_w + 2 * ox) * c;
        T* b = a + c;
        T* d = a + g.in_w * c;
        T* e = d + c;
        for (std::size_t ch = 0; ch < c; ++ch) {
          const T v = T(0.25) * dyo[ch];
          a[ch] = v;
          b[ch] = v;
          d[ch] = v;
          e[ch] = v;
        }
      }
    }
  }
}

template <typename T>
void global_avgpool_forward(std::size_t batch, std::size_t spatial, std::size_t channels,
                            std::span<const T> in, std::span<T> out) {
  const T scale = T(1) / static_cast<T>(spatial);
  for (std::size_t n = 0; n < batch; ++n) {
    const T* x = in.data() + n * spatial * channels;
    T* y = out.data() + n * channels;
    for (std::size_t ch = 0; ch < channels; ++ch) y[ch] = 0;
    for (std::size_t s = 0; s < spatial; ++s) {
      for (std::size_t ch = 0; ch < channels; ++ch) y[ch] += x[s * channels + ch];
    }
    for (std::size_t ch = 0; ch < channels; ++ch) y[ch] *= scale;
  }
}

template <typename T>
void global_avgpool_backward(std::size_t batch, std::size_t spatial, std::size_t channels,
                             std::span<const T> dout, std::span<T> din) {
  const T scale = T(1) / static_cast<T>(spatial);
  for (std::size_t n = 0; n < batch; ++n) {
    const T* dy = dout.data() + n * channels;
    T* dx = din.data() + n * spatial * channels;
    for (std::size_t s = 0; s < spatial; ++s) {
      for (std::size_t ch = 0; ch < channels; ++ch) dx[s * channels + ch] = dy[ch] * scale;
    }
  }
}

CCL_INSTANTIATE(float)
CCL_INSTANTIATE(double)

}  // namespace ccl::kernels::serial
