/*
 * Copyright (c) 2026, The dfov Authors.
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

#pragma once

#include <cmath>
#include <limits>

#include <Eigen/Core>

#include "dfov/errors.hpp"

namespace dfov {

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Temperature-scaled softmax, p_i = exp(z_i / tau) / sum_j exp(z_j / tau).
/// The maximum logit is subtracted first so large logits cannot overflow.
template <typename Derived>
VectorX<typename Derived::Scalar> soften_scores(const Eigen::MatrixBase<Derived>& logits,
                                                typename Derived::Scalar tau) {
  using Scalar = typename Derived::Scalar;
  if (!(tau > Scalar(0))) throw ValidationError("temperature must be positive");
  if (logits.size() == 0) throw ValidationError("logit vector is empty");
  if (!logits.allFinite()) throw ValidationError("logits must be finite");
  const Scalar peak = logits.maxCoeff();
  VectorX<Scalar> p = ((logits.array() - peak) / tau).exp().matrix();
  p /= p.sum();
  return p;
}

/// Shannon entropy in nats with 0 ln 0 = 0.
template <typename Derived>
typename Derived::Scalar entropy(const Eigen::MatrixBase<Derived>& probs) {
  using Scalar = typename Derived::Scalar;
  if (probs.size() == 0) throw ValidationError("probability vector is empty");
  if ((probs.array() < Scalar(0)).any() || (probs.array() > Scalar(1)).any())
    throw ValidationError("probabilities must lie in [0, 1]");
  if (std::abs(probs.sum() - Scalar(1)) > Scalar(1e-6))
    throw ValidationError("probabilities must sum to 1");
  Scalar h(0);
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    const Scalar p = probs[i];
    if (p > Scalar(0)) h -= p * std::log(p);
  }
  return h;
}

template <typename Derived>
Eigen::Index argmax(const Eigen::MatrixBase<Derived>& v) {
  Eigen::Index best = 0;
  v.maxCoeff(&best);
  return best;
}

}  // namespace dfov
