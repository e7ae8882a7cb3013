// Copyright 2026 The drgrade Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <Eigen/Core>

namespace drgrade::detail {

/// Row-major C = alpha * op(A) * op(B) + beta * C, single-threaded.
template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* a,
          const T* b, T beta, T* c) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const Mat> am(a, trans_a ? k : m, trans_a ? m : k);
  Eigen::Map<const Mat> bm(b, trans_b ? n : k, trans_b ? k : n);
  Eigen::Map<Mat> cm(c, m, n);
  auto product = [&](const auto& lhs) {
    if (beta == T(0)) {
      if (trans_b) cm.noalias() = alpha * lhs * bm.transpose();
      else cm.noalias() = alpha * lhs * bm;
    } else {
      if (beta != T(1)) cm *= beta;
      if (trans_b) cm.noalias() += alpha * lhs * bm.transpose();
      else cm.noalias() += alpha * lhs * bm;
    }
  };
  if (trans_a) product(am.transpose());
  else product(am);
}

}  // namespace drgrade::detail
