/*
 * Copyright 2026 The probens Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "probens/matrix.hpp"

#include <cmath>
#include <string>

namespace probens {

Matrix to_double(const MatrixF& m) {
  std::vector<double> data(m.values().begin(), m.values().end());
  return Matrix(m.rows(), m.cols(), std::move(data));
}

std::size_t argmax(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < row.size(); ++c) {
    if (row[c] > row[best]) best = c;
  }
  return best;
}

std::vector<std::size_t> argmax_rows(const Matrix& m) {
  std::vector<std::size_t> out(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) out[i] = argmax(m.row(i));
  return out;
}

void require_row_stochastic(const Matrix& m, double tol, const char* what) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double sum = 0.0;
    for (double v : m.row(i)) {
      if (!std::isfinite(v) || v < 0.0) {
        throw ValidationError(std::string(what) + ": row " + std::to_string(i) +
                              " has a negative or non-finite entry");
      }
      sum += v;
    }
    if (std::abs(sum - 1.0) > tol) {
      throw ValidationError(std::string(what) + ": row " + std::to_string(i) +
                            " sums to " + std::to_string(sum));
    }
  }
}

}  // namespace probens
