#pragma once

#include <cstddef>
#include <span>

// Compute kernels for the layer kinds of the network. Two implementations
// share each signature: `serial` is the straightforward reference kept for
// testing and benchmarking, `omp` parallelises across the batch with OpenMP.
// The omp kernels reduce per-sample partial sums in sample order, so their
// results do not depend on the thread count.
//
// All image tensors are NHWC. Convolution weights are [kh][kw][cin][cout],
// dense weights are [in][out]. Backward kernels overwrite their outputs.

namespace ccl::kernels {

struct ConvGeometry {
  std::size_t batch = 0;
  std::size_t in_h = 0, in_w = 0, in_c = 0;
  std::size_t out_c = 0;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;

  std::size_t out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; }
  std::size_t out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
  std::size_t in_sample() const { return in_h * in_w * in_c; }
  std::size_t out_sample() const { return out_h() * out_w() * out_c; }
  std::size_t weight_size() const { return kernel * kernel * in_c * out_c; }
};

struct DenseGeometry {
  std::size_t batch = 0;
  std::size_t in = 0;
  std::size_t out = 0;
};

// 2x2 average pooling with stride 2; odd trailing rows/columns are dropped.
struct PoolGeometry {
  std::size_t batch = 0;
  std::size_t in_h = 0, in_w = 0, channels = 0;

  std::size_t out_h() const { return in_h / 2; }
  std::size_t out_w() const { return in_w / 2; }
};

#define CCL_KERNEL_DECLS                                                                          \
  template <typename T>                                                                           \
  void conv2d_forward(const ConvGeometry& g, std::span<const T> in, std::span<const T> weight,     \
                      std::span<const T> bias, std::span<T> out);                                 \
  template <typename T>                                                                           \
  void conv2d_backward_input(const ConvGeometry& g, std::span<const T> dout,                       \
                             std::span<const T> weight, std::span<T> din);                         \
  template <typename T>                                                                           \
  void conv2d_backward_params(const ConvGeometry& g, std::span<const T> in, std::span<const T> dout, \
                              std::span<T> dweight, std::span<T> dbias);                           \
  template <typename T>                                                                           \
  void dense_forward(const DenseGeometry& g, std::span<const T> in, std::span<const T> weight,     \
                     std::span<const T> bias, std::span<T> out);                                  \
  template <typename T>                                                                           \
  void dense_backward_input(const DenseGeometry& g, std::span<const T> dout,                       \
                            std::span<const T> weight, std::span<T> din);                          \
  template <typename T>                                                                           \
  void dense_backward_params(const DenseGeometry& g, std::span<const T> in, std::span<const T> dout, \
                             std::span<T> dweight, std::span<T> dbias);                            \
  template <typename T>                                                                           \
  void relu_forward(std::span<const T> in, std::span<T> out);                                      \
  template <typename T>                                                                           \
  void relu_backward(std::span<const T> in, std::span<const T> dout, std::span<T> din);            \
  template <typename T>                                                                           \
  void avgpool2_forward(const PoolGeometry& g, std::span<const T> in, std::span<T> out);           \
  template <typename T>                                                                           \
  void avgpool2_backward(const PoolGeometry& g, std::span<const T> dout, std::span<T> din);         \
  template <typename T>                                                                           \
  void global_avgpool_forward(std::size_t batch, std::size_t spatial, std::size_t channels,        \
                              std::span<const T> in, std::span<T> out);                            \
  template <typename T>                                                                           \
  void global_avgpool_backward(std::size_t batch, std::size_t spatial, std::size_t channels,       \
                               std::span<const T> dout, std::span<T> din);

namespace serial {
CCL_KERNEL_DECLS
}  // namespace serial

namespace omp {
CCL_KERNEL_DECLS
}  // namespace omp

#undef CCL_KERNEL_DECLS

/// Number of worker threads the omp kernels will use (1 without OpenMP).
int max_threads();
void set_threads(int n);

}  // namespace ccl::kernels
