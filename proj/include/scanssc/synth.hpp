#pragma once

#include <cstdint>
#include <string>

#include "scanssc/voxel.hpp"

namespace scanssc {

// Deterministic synthetic scenes over the default class table.
//   corridor: ground plane, side walls, and a line of box cars receding
//             in depth.
//   blocks:   random axis-aligned boxes of random classes.
//   random:   i.i.d. labels over [0, P).
LabeledGrid synth_scene(const std::string& preset, const std::array<int64_t, 3>& dims,
                        uint64_t seed, const ClassTable& table);

}  // namespace scanssc
