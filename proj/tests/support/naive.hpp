#pragma once

#include "matchinggan/tensor.hpp"

namespace oracle {

// Direct seven-loop convolution with zero padding.
template <class T>
mgan::Tensor<T> naive_conv2d(const mgan::Tensor<T>& x, const mgan::Tensor<T>& w, const mgan::Tensor<T>* b,
                             int stride, int pad) {
  const int n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int cout = w.dim(0), k = w.dim(2);
  const int oh = (h + 2 * pad - k) / stride + 1, ow = (wd + 2 * pad - k) / stride + 1;
  mgan::Tensor<T> y({n, cout, oh, ow});
  for (int i = 0; i < n; ++i)
    for (int o = 0; o < cout; ++o)
      for (int r = 0; r < oh; ++r)
        for (int c = 0; c < ow; ++c) {
          double acc = b ? static_cast<double>((*b)[o]) : 0.0;
          for (int ci = 0; ci < cin; ++ci)
            for (int u = 0; u < k; ++u)
              for (int v = 0; v < k; ++v) {
                const int yy = r * stride - pad + u, xx = c * stride - pad + v;
                if (yy < 0 || yy >= h || xx < 0 || xx >= wd) continue;
                acc += static_cast<double>(x.at(i, ci, yy, xx)) * w.at(o, ci, u, v);
              }
          y.at(i, o, r, c) = static_cast<T>(acc);
        }
  return y;
}

}  // namespace oracle
