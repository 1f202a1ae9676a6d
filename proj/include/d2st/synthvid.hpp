// Copyright 2026 The d2st Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <string>
#include <vector>

#include "d2st/matching.hpp"
#include "d2st/rng.hpp"

namespace d2st {

enum class Family { kSpatial, kTemporal };
enum class ShapeId { kDisk, kSquare, kBar };
enum class MotionId { kLeft, kRight, kUp, kDown, kStatic, kReorderA, kReorderB };

const char* family_name(Family f);
const char* shape_name(ShapeId s);
const char* motion_name(MotionId m);

// Spatial family: the shape follows a simple translation (or stays put), so
// classes differ in appearance and position coverage.
//
// Temporal family: the shape visits the 8 cells of a fixed ring; the motion
// id selects the visit order (left/right/up/down are constant ring steps
// +1/-1/+3/-3, reorder-A/B are fixed scrambles) and each video draws a random
// starting phase. Every temporal class therefore shares one unordered frame
// multiset and differs only in frame order.
struct SynthClassSpec {
  Family family = Family::kSpatial;
  ShapeId shape = ShapeId::kDisk;
  MotionId motion = MotionId::kStatic;
  Real noise_sigma = Real(0);
};

struct SynthGeometry {
  Index frames = 8;
  Index image_h = 32;
  Index image_w = 32;
};

VideoSample render_video(const SynthClassSpec& spec, SeededRng& rng,
                         const SynthGeometry& geom = SynthGeometry{});

// Frame positions a temporal-family video visits, as ring indices; exposed
// for the shared-multiset and ordering tests.
std::vector<Index> temporal_visit_order(MotionId motion, Index phase, Index frames);

std::vector<SynthClassSpec> spatial_class_pool(Real noise_sigma);
std::vector<SynthClassSpec> temporal_class_pool(Real noise_sigma);

Episode sample_episode(const std::vector<SynthClassSpec>& class_pool, Index way, Index shot,
                       Index queries_per_class, SeededRng& rng,
                       const SynthGeometry& geom = SynthGeometry{});

// Deterministic episodic stream over a class pool. episode_at(i) depends only
// on (base_seed, i).
class SynthEpisodeSource : public EpisodeSource {
 public:
  SynthEpisodeSource(std::vector<SynthClassSpec> pool, Index way, Index shot,
                     Index queries_per_class, std::uint64_t base_seed,
                     SynthGeometry geom = SynthGeometry{});

  Episode next() override;
  Episode episode_at(std::uint64_t index) override;

 private:
  std::vector<SynthClassSpec> pool_;
  Index way_, shot_, queries_;
  std::uint64_t base_seed_;
  SynthGeometry geom_;
  std::uint64_t next_index_ = 0;
};

// Raw tensor files plus a manifest listing specs, seeds and labels.
void export_episode(const Episode& episode, const std::vector<SynthClassSpec>& pool,
                    const std::string& directory);

}  // namespace d2st
