#include "ccl/kernels.hpp"

#include <algorithm>
#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "kernel_instantiate.hpp"

namespace ccl::kernels {

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_threads(int n) {
#ifdef _OPENMP
  omp_set_num_threads(std::max(1, n));
#else
  (void)n;
#endif
}

}  // namespace ccl::kernels

namespace ccl::kernels::omp {

namespace {

// Signed loop index for OpenMP worksharing.
using idx_t = std::int64_t;

inline bool inside(std::ptrdiff_t v, std::size_t extent) {
  return v >= 0 && v < static_cast<std::ptrdiff_t>(extent);
}

}  // namespace

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> in, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> out) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  const idx_t rows = static_cast<idx_t>(g.batch * oh);
#pragma omp parallel for schedule(static)
  for (idx_t r = 0; r < rows; ++r) {
    const std::size_t n = static_cast<std::size_t>(r) / oh;
    const std::size_t oy = static_cast<std::size_t>(r) % oh;
    const T* x = in.data() + n * g.in_sample();
    T* yrow = out.data() + n * g.out_sample() + oy * ow * g.out_c;
    for (std::size_t ox = 0; ox < ow; ++ox) {
      T* yo = yrow + ox * g.out_c;
      for (std::size_t co = 0; co < g.out_c; ++co) yo[co] = bias[co];
      for (std::size_t ky = 0; ky < g.kernel; ++ky) {
        const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
        if (!inside(iy, g.in_h)) continue;
        for (std::size_t kx = 0; kx < g.kernel; ++kx) {
          const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
          if (!inside(ix, g.in_w)) continue;
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

// Input gradients of distinct samples never alias, so samples are split
// across threads.
template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> dout, std::span<const T> weight,
                           std::span<T> din) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  const idx_t batch = static_cast<idx_t>(g.batch);
#pragma omp parallel for schedule(static)
  for (idx_t ni = 0; ni < batch; ++ni) {
    const std::size_t n = static_cast<std::size_t>(ni);
    const T* dy = dout.data() + n * g.out_sample();
    T* dx = din.data() + n * g.in_sample();
    std::fill(dx, dx + g.in_sample(), T{0});
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const T* dyo = dy + (oy * ow + ox) * g.out_c;
        for (std::size_t ky = 0; ky < g.kernel; ++ky) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          if (!inside(iy, g.in_h)) continue;
          for (std::size_t kx = 0; kx < g.kernel; ++kx) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            if (!inside(ix, g.in_w)) continue;
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

// Each weight row (ky, kx, ci) is owned by one thread and accumulated over
// (sample, oy, ox) in the same order as the serial kernel, so results are
// bit-identical to it for any thread count.
template <typename T>
void conv2d_backward_params(const ConvGeometry& g, std::span<const T> in, std::span<const T> dout,
                            std::span<T> dweight, std::span<T> dbias) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  const idx_t rows = static_cast<idx_t>(g.kernel * g.kernel * g.in_c);
#pragma omp parallel
  {
#pragma omp for schedule(static)
    for (idx_t r = 0; r < rows; ++r) {
      const std::size_t row = static_cast<std::size_t>(r);
      const std::size_t ci = row % g.in_c;
      const std::size_t kx = (row / g.in_c) % g.kernel;
      const std::size_t ky = row / (g.in_c * g.kernel);
      T* dwr = dweight.data() + row * g.out_c;
      std::fill(dwr, dwr + g.out_c, T{0});
      for (std::size_t n = 0; n < g.batch; ++n) {
        const T* x = in.data() + n * g.in_sample();
        const T* dy = dout.data() + n * g.out_sample();
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          if (!inside(iy, g.in_h)) continue;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            if (!inside(ix, g.in_w)) continue;
            const T v = x[(static_cast<std::size_t>(iy) * g.in_w + static_cast<std::size_t>(ix)) * g.in_c + ci];
            const T* dyo = dy + (oy * ow + ox) * g.out_c;
            for (std::size_t co = 0; co < g.out_c; ++co) dwr[co] += v * dyo[co];
          }
        }
      }
    }
#pragma omp single
    {
      std::fill(dbias.begin(), dbias.end(), T{0});
      for (std::size_t n = 0; n < g.batch; ++n) {
        const T* dy = dout.data() + n * g.out_sample();
        for (std::size_t p = 0; p < oh * ow; ++p) {
          for (std::size_t co = 0; co < g.out_c; ++co) dbias[co] += dy[p * g.out_c + co];
        }
      }
    }
  }
}

template <typename T>
void dense_forward(const DenseGeometry& g, std::span<const T> in, std::span<const T> weight,
                   std::span<const T> bias, std::span<T> out) {
  const idx_t batch = static_cast<idx_t>(g.batch);
#pragma omp parallel for schedule(static)
  for (idx_t ni = 0; ni < batch; ++ni) {
    const std::size_t n = static_cast<std::size_t>(ni);
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
  const idx_t batch = static_cast<idx_t>(g.batch);
#pragma omp parallel for schedule(static)
  for (idx_t ni = 0; ni < batch; ++ni) {
    const std::size_t n = static_cast<std::size_t>(ni);
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
  const idx_t rows = static_cast<idx_t>(g.in);
#pragma omp parallel
  {
#pragma omp for schedule(static)
    for (idx_t r = 0; r < rows; ++r) {
      const std::size_t i = static_cast<std::size_t>(r);
      T* dwr = dweight.data() + i * g.out;
      std::fill(dwr, dwr + g.out, T{0});
      for (std::size_t n = 0; n < g.batch; ++n) {
        const T v = in[n * g.in + i];
        const T* dy = dout.data() + n * g.out;
        for (std::size_t j = 0; j < g.out; ++j) dwr[j] += v * dy[j];
      }
    }
#pragma omp single
    {
      std::fill(dbias.begin(), dbias.end(), T{0});
      for (std::size_t n = 0; n < g.batch; ++n) {
        for (std::size_t j = 0; j < g.out; ++j) dbias[j] += dout[n * g.out + j];
      }
    }
  }
}

template <typename T>
void relu_forward(std::span<const T> in, std::span<T> out) {
  const idx_t count = static_cast<idx_t>(in.size());
#pragma omp parallel for schedule(static)
  for (idx_t i = 0; i < count; ++i) out[i] = in[i] > T{0} ? in[i] : T{0};
}

template <typename T>
void relu_backward(std::span<const T> in, std::span<const T> dout, std::span<T> din) {
  const idx_t count = static_cast<idx_t>(in.size());
#pragma omp parallel for schedule(static)
  for (idx_t i = 0; i < count; ++i) din[i] = in[i] > T{0} ? dout[i] : T{0};
}

template <typename T>
void avgpool2_forward(const PoolGeometry& g, std::span<const T> in, std::span<T> out) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), c = g.channels;
  const idx_t rows = static_cast<idx_t>(g.batch * oh);
#pragma omp parallel for schedule(static)
  for (idx_t r = 0; r < rows; ++r) {
    const std::size_t n = static_cast<std::size_t>(r) / oh;
    const std::size_t oy = static_cast<std::size_t>(r) % oh;
    const T* x = in.data() + n * g.in_h * g.in_w * c;
    T* y = out.data() + n * oh * ow * c;
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

template <typename T>
void avgpool2_backward(const PoolGeometry& g, std::span<const T> dout, std::span<T> din) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), c = g.channels;
  const idx_t batch = static_cast<idx_t>(g.batch);
#pragma omp parallel for schedule(static)
  for (idx_t ni = 0; ni < batch; ++ni) {
    const std::size_t n = static_cast<std::size_t>(ni);
    const T* dy = dout.data() + n * oh * ow * c;
    T* dx = din.data() + n * g.in_h * g.in_w * c;
    std::fill(dx, dx + g.in_h * g.in_w * c, T{0});
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
  const idx_t nb = static_cast<idx_t>(batch);
#pragma omp parallel for schedule(static)
  for (idx_t ni = 0; ni < nb; ++ni) {
    const std::size_t n = static_cast<std::size_t>(ni);
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
  const idx_t nb = static_cast<idx_t>(batch);
#pragma omp parallel for schedule(static)
  for (idx_t ni = 0; ni < nb; ++ni) {
    const std::size_t n = static_cast<std::size_t>(ni);
    const T* dy = dout.data() + n * channels;
    T* dx = din.data() + n * spatial * channels;
    for (std::size_t s = 0; s < spatial; ++s) {
      for (std::size_t ch = 0; ch < channels; ++ch) dx[s * channels + ch] = dy[ch] * scale;
    }
  }
}

CCL_INSTANTIATE(float)
CCL_INSTANTIATE(double)

}  // namespace ccl::kernels::omp
