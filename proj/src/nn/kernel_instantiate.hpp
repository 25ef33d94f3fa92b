#pragma once

// Explicit instantiation list shared by the serial and omp kernel files.
#define CCL_INSTANTIATE(T)                                                                              \
  template void conv2d_forward<T>(const ConvGeometry&, std::span<const T>, std::span<const T>,          \
                                  std::span<const T>, std::span<T>);                                    \
  template void conv2d_backward_input<T>(const ConvGeometry&, std::span<const T>, std::span<const T>,   \
                                         std::span<T>);                                                 \
  template void conv2d_backward_params<T>(const ConvGeometry&, std::span<const T>, std::span<const T>,  \
                                          std::span<T>, std::span<T>);                                  \
  template void dense_forward<T>(const DenseGeometry&, std::span<const T>, std::span<const T>,          \
                                 std::span<const T>, std::span<T>);                                     \
  template void dense_backward_input<T>(const DenseGeometry&, std::span<const T>, std::span<const T>,   \
                                        std::span<T>);                                                  \
  template void dense_backward_params<T>(const DenseGeometry&, std::span<const T>, std::span<const T>,  \
                                         std::span<T>, std::span<T>);                                   \
  template void relu_forward<T>(std::span<const T>, std::span<T>);                                      \
  template void relu_backward<T>(std::span<const T>, std::span<const T>, std::span<T>);                 \
  template void avgpool2_forward<T>(const PoolGeometry&, std::span<const T>, std::span<T>);             \
  template void avgpool2_backward<T>(const PoolGeometry&, std::span<const T>, std::span<T>);            \
  template void global_avgpool_forward<T>(std::size_t, std::size_t, std::size_t, std::span<const T>,    \
                                          std::span<T>);                                                \
  template void global_avgpool_backward<T>(std::size_t, std::size_t, std::size_t, std::span<const T>,   \
                                           std::span<T>);

