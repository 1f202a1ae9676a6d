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

#include "d2st/synthvid.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "d2st/io.hpp"

namespace d2st {

const char* family_name(Family f) { return f == Family::kSpatial ? "spatial" : "temporal"; }

const char* shape_name(ShapeId s) {
  switch (s) {
    case ShapeId::kDisk:
      return "disk";
    case ShapeId::kSquare:
      return "square";
    case ShapeId::kBar:
      return "bar";
  }
  return "?";
}

const char* motion_name(MotionId m) {
  switch (m) {
    case MotionId::kLeft:
      return "left";
    case MotionId::kRight:
      return "right";
    case MotionId::kUp:
      return "up";
    case MotionId::kDown:
      return "down";
    case MotionId::kStatic:
      return "static";
    case MotionId::kReorderA:
      return "reorder-A";
    case MotionId::kReorderB:
      return "reorder-B";
  }
  return "?";
}

namespace {

constexpr Index kRingCells = 8;
// Fixed scrambles for the reorder classes (bijections of 0..7 with
// non-constant ring steps).
constexpr Index kScrambleA[kRingCells] = {0, 3, 1, 4, 2, 6, 5, 7};
constexpr Index kScrambleB[kRingCells] = {0, 5, 2, 7, 1, 3, 6, 4};

void draw_shape(Tensor& frames, Index frame, ShapeId shape, Real cx, Real cy, Index h, Index w) {
  const Real r = Real(3.6);
  const Real color[3] = {Real(0.95), Real(0.75), Real(0.30)};
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      const Real dx = static_cast<Real>(x) - cx;
      const Real dy = static_cast<Real>(y) - cy;
      bool inside = false;
      switch (shape) {
        case ShapeId::kDisk:
          inside = dx * dx + dy * dy <= r * r;
          break;
        case ShapeId::kSquare:
          inside = std::abs(dx) <= r * Real(0.9) && std::abs(dy) <= r * Real(0.9);
          break;
        case ShapeId::kBar:
          inside = std::abs(dx) <= Real(1.6) && std::abs(dy) <= r * Real(1.5);
          break;
      }
      if (inside) {
        Real* px = frames.data() + ((frame * h + y) * w + x) * 3;
        px[0] = color[0];
        px[1] = color[1];
        px[2] = color[2];
      }
    }
}

Index constant_step(MotionId m) {
  switch (m) {
    case MotionId::kLeft:
      return 1;
    case MotionId::kRight:
      return kRingCells - 1;  // -1 mod 8
    case MotionId::kUp:
      return 3;
    case MotionId::kDown:
      return kRingCells - 3;  // -3 mod 8
    default:
      return -1;
  }
}

}  // namespace

std::vector<Index> temporal_visit_order(MotionId motion, Index phase, Index frames) {
  std::vector<Index> order(static_cast<size_t>(frames));
  for (Index k = 0; k < frames; ++k) {
    Index slot;
    if (motion == MotionId::kReorderA)
      slot = kScrambleA[k % kRingCells];
    else if (motion == MotionId::kReorderB)
      slot = kScrambleB[k % kRingCells];
    else {
      const Index step = constant_step(motion);
      if (step < 0) throw ConfigError("motion 'static' has no temporal-family visit order");
      slot = (step * k) % kRingCells;
    }
    order[static_cast<size_t>(k)] = (slot + phase) % kRingCells;
  }
  return order;
}

VideoSample render_video(const SynthClassSpec& spec, SeededRng& rng, const SynthGeometry& geom) {
  if (spec.noise_sigma < Real(0)) throw ConfigError("noise_sigma must be non-negative");
  if (geom.frames < 1 || geom.image_h < 8 || geom.image_w < 8)
    throw ConfigError("synth geometry too small");

  VideoSample sample;
  sample.seed = rng.seed_state();
  sample.frames = Tensor({geom.frames, geom.image_h, geom.image_w, 3});
  sample.frames.fill(Real(0.08));  // dark background

  const Real cx0 = static_cast<Real>(geom.image_w) / 2 - Real(0.5);
  const Real cy0 = static_cast<Real>(geom.image_h) / 2 - Real(0.5);

  if (spec.family == Family::kSpatial) {
    // Linear sweep (or static) across the image.
    const Real span = static_cast<Real>(std::min(geom.image_h, geom.image_w)) - Real(12);
    const Real step = geom.frames > 1 ? span / static_cast<Real>(geom.frames - 1) : Real(0);
    for (Index k = 0; k < geom.frames; ++k) {
      Real cx = cx0, cy = cy0;
      const Real offset = static_cast<Real>(k) * step - span / 2;
      switch (spec.motion) {
        case MotionId::kStatic:
          break;
        case MotionId::kLeft:
          cx = cx0 - offset;
          break;
        case MotionId::kRight:
          cx = cx0 + offset;
          break;
        case MotionId::kUp:
          cy = cy0 - offset;
          break;
        case MotionId::kDown:
          cy = cy0 + offset;
          break;
        default:
          throw ConfigError("reorder motions belong to the temporal family");
      }
      draw_shape(sample.frames, k, spec.shape, cx, cy, geom.image_h, geom.image_w);
    }
  } else {
    // Ring traversal; the class is the visit order, the phase is random.
    const Index phase = static_cast<Index>(rng.below(kRingCells));
    const std::vector<Index> order = temporal_visit_order(spec.motion, phase, geom.frames);
    const Real radius = static_cast<Real>(std::min(geom.image_h, geom.image_w)) / 2 - Real(6);
    for (Index k = 0; k < geom.frames; ++k) {
      const Real angle =
          Real(2) * Real(3.14159265358979323846) * static_cast<Real>(order[static_cast<size_t>(k)]) /
          static_cast<Real>(kRingCells);
      const Real cx = cx0 + radius * std::cos(angle);
      const Real cy = cy0 + radius * std::sin(angle);
      draw_shape(sample.frames, k, spec.shape, cx, cy, geom.image_h, geom.image_w);
    }
  }

  if (spec.noise_sigma > Real(0)) {
    for (Index i = 0; i < sample.frames.size(); ++i) {
      const Real v = sample.frames[i] + spec.noise_sigma * static_cast<Real>(rng.normal());
      sample.frames[i] = std::min(Real(1), std::max(Real(0), v));
    }
  }
  return sample;
}

std::vector<SynthClassSpec> spatial_class_pool(Real noise_sigma) {
  std::vector<SynthClassSpec> pool;
  for (ShapeId shape : {ShapeId::kDisk, ShapeId::kSquare, ShapeId::kBar})
    for (MotionId motion : {MotionId::kStatic, MotionId::kLeft, MotionId::kUp})
      pool.push_back({Family::kSpatial, shape, motion, noise_sigma});
  return pool;
}

std::vector<SynthClassSpec> temporal_class_pool(Real noise_sigma) {
  std::vector<SynthClassSpec> pool;
  for (MotionId motion : {MotionId::kLeft, MotionId::kRight, MotionId::kUp, MotionId::kDown,
                          MotionId::kReorderA, MotionId::kReorderB})
    pool.push_back({Family::kTemporal, ShapeId::kDisk, motion, noise_sigma});
  return pool;
}

Episode sample_episode(const std::vector<SynthClassSpec>& class_pool, Index way, Index shot,
                       Index queries_per_class, SeededRng& rng, const SynthGeometry& geom) {
  if (way < 1 || shot < 1 || queries_per_class < 1)
    throw ConfigError("sample_episode: way, shot, queries_per_class must be positive");
  if (static_cast<Index>(class_pool.size()) < way)
    throw ConfigError("sample_episode: class pool of " + std::to_string(class_pool.size()) +
                      " cannot supply " + std::to_string(way) + " distinct classes");

  // Seeded partial Fisher-Yates for the class draw.
  std::vector<Index> ids(class_pool.size());
  for (size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<Index>(i);
  for (Index i = 0; i < way; ++i) {
    const Index j = i + static_cast<Index>(rng.below(static_cast<std::uint64_t>(ids.size()) - i));
    std::swap(ids[static_cast<size_t>(i)], ids[static_cast<size_t>(j)]);
  }

  Episode ep;
  ep.way = way;
  ep.shot = shot;
  ep.queries_per_class = queries_per_class;
  for (Index c = 0; c < way; ++c) {
    const SynthClassSpec& spec = class_pool[static_cast<size_t>(ids[static_cast<size_t>(c)])];
    for (Index k = 0; k < shot + queries_per_class; ++k) {
      SeededRng vid_rng = rng.fork(static_cast<std::uint64_t>(c) * 1000003ull +
                                   static_cast<std::uint64_t>(k) + 17ull);
      VideoSample v = render_video(spec, vid_rng, geom);
      v.label = c;
      if (k < shot)
        ep.support.push_back(std::move(v));
      else
        ep.query.push_back(std::move(v));
    }
  }
  ep.validate();
  return ep;
}

SynthEpisodeSource::SynthEpisodeSource(std::vector<SynthClassSpec> pool, Index way, Index shot,
                                       Index queries_per_class, std::uint64_t base_seed,
                                       SynthGeometry geom)
    : pool_(std::move(pool)), way_(way), shot_(shot), queries_(queries_per_class),
      base_seed_(base_seed), geom_(geom) {}

Episode SynthEpisodeSource::next() { return episode_at(next_index_++); }

Episode SynthEpisodeSource::episode_at(std::uint64_t index) {
  SeededRng rng = SeededRng(base_seed_).fork(index + 0x5eedull);
  return sample_episode(pool_, way_, shot_, queries_, rng, geom_);
}

void export_episode(const Episode& episode, const std::vector<SynthClassSpec>& pool,
                    const std::string& directory) {
  std::filesystem::create_directories(directory);
  std::ofstream manifest(directory + "/manifest.csv");
  if (!manifest) throw ConfigError("cannot write manifest in '" + directory + "'");
  manifest << "file,role,label,seed,frames,height,width\n";
  auto dump = [&](const Video& v, const std::string& role, Index i) {
    const std::string name = role + "_" + std::to_string(i) + ".bin";
    TensorArchive arc;
    arc.metadata_json = "{\"role\":\"" + role + "\",\"label\":" + std::to_string(v.label) + "}";
    arc.tensors.emplace_back("frames", v.frames);
    save_archive(arc, directory + "/" + name);
    manifest << name << "," << role << "," << v.label << "," << v.seed << "," << v.frames.dim(0)
             << "," << v.frames.dim(1) << "," << v.frames.dim(2) << "\n";
  };
  for (size_t i = 0; i < episode.support.size(); ++i)
    dump(episode.support[i], "support", static_cast<Index>(i));
  for (size_t i = 0; i < episode.query.size(); ++i) dump(episode.query[i], "query", static_cast<Index>(i));

  std::ofstream specs(directory + "/classes.csv");
  specs << "family,shape,motion,noise_sigma\n";
  for (const auto& s : pool)
    specs << family_name(s.family) << "," << shape_name(s.shape) << "," << motion_name(s.motion)
          << "," << static_cast<double>(s.noise_sigma) << "\n";
}

}  // namespace d2st
