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

#include <cstdint>
#include <string>

#include "dfov/dataset.hpp"

namespace dfov::synth {

struct SceneOptions {
  int width = 320;
  int height = 180;
  int frames = 120;
  double fps = 30.0;
  int objects = 3;
  OddTag odd = OddTag::Urban;
  /// Fraction of the mid frame imaged by the long camera (centered).
  double long_scale = 0.5;
  std::uint64_t seed = 42;
};

/// Dual-camera sequence of textured road scenes with signs and lights drawn
/// as flat rectangles. Every object stays inside the long camera's view.
io::LoadedSequence generate_sequence(const std::string& seq_id, const SceneOptions& options,
                                     const ClassVocabulary& vocabulary = ClassVocabulary::standard());

}  // namespace dfov::synth
