#include "scanssc/synth.hpp"

#include <algorithm>
#include <stdexcept>

#include "scanssc/rng.hpp"

namespace scanssc {

namespace {

// default-table class indices used by the presets
constexpr uint16_t kRoad = 1;
constexpr uint16_t kBuilding = 5;
constexpr uint16_t kCar = 6;

void fill_box(LabeledGrid& g, std::array<int64_t, 3> lo, std::array<int64_t, 3> hi,
              uint16_t label) {
  for (int i = 0; i < 3; ++i) {
    lo[static_cast<size_t>(i)] = std::max<int64_t>(lo[static_cast<size_t>(i)], 0);
    hi[static_cast<size_t>(i)] = std::min(hi[static_cast<size_t>(i)], g.dims[static_cast<size_t>(i)]);
  }
  for (int64_t x = lo[0]; x < hi[0]; ++x)
    for (int64_t y = lo[1]; y < hi[1]; ++y)
      for (int64_t z = lo[2]; z < hi[2]; ++z) g.at(x, y, z) = label;
}

LabeledGrid corridor(const std::array<int64_t, 3>& dims, Rng& rng, const ClassTable& table) {
  LabeledGrid g = LabeledGrid::filled(dims, 0);
  const int64_t X = dims[0], Y = dims[1], Z = dims[2];
  const auto road = static_cast<uint16_t>(std::min<int64_t>(kRoad, static_cast<int64_t>(table.count()) - 1));
  const auto wall = static_cast<uint16_t>(std::min<int64_t>(kBuilding, static_cast<int64_t>(table.count()) - 1));
  const auto car = static_cast<uint16_t>(std::min<int64_t>(kCar, static_cast<int64_t>(table.count()) - 1));

  fill_box(g, {0, 0, 0}, {X, Y, 1}, road);  // ground plane
  const int64_t wall_h = std::max<int64_t>(1, Z / 2);
  fill_box(g, {0, 0, 0}, {X, 1, wall_h}, wall);
  fill_box(g, {0, Y - 1, 0}, {X, Y, wall_h}, wall);

  // box cars receding in depth along the corridor center
  const int64_t car_len = std::max<int64_t>(2, X / 8);
  const int64_t car_wid = std::max<int64_t>(1, Y / 6);
  const int64_t car_hgt = std::max<int64_t>(1, Z / 3);
  const int64_t yc = Y / 2;
  for (int64_t x0 = car_len; x0 + car_len <= X; x0 += 2 * car_len + rng.range(0, 1)) {
    const int64_t jitter = rng.range(-1, 1);
    fill_box(g, {x0, yc - car_wid / 2 + jitter, 1},
             {x0 + car_len, yc + (car_wid + 1) / 2 + jitter, 1 + car_hgt}, car);
  }
  return g;
}

LabeledGrid blocks(const std::array<int64_t, 3>& dims, Rng& rng, const ClassTable& table) {
  LabeledGrid g = LabeledGrid::filled(dims, 0);
  const int64_t count = 3 + rng.range(0, 4);
  for (int64_t b = 0; b < count; ++b) {
    std::array<int64_t, 3> lo{}, hi{};
    for (int i = 0; i < 3; ++i) {
      const auto u = static_cast<size_t>(i);
      const int64_t ext = std::max<int64_t>(1, rng.range(1, std::max<int64_t>(1, dims[u] / 2)));
      lo[u] = rng.range(0, std::max<int64_t>(0, dims[u] - ext));
      hi[u] = lo[u] + ext;
    }
    fill_box(g, lo, hi, static_cast<uint16_t>(rng.range(1, static_cast<int64_t>(table.count()) - 1)));
  }
  return g;
}

LabeledGrid random_labels(const std::array<int64_t, 3>& dims, Rng& rng, const ClassTable& table) {
  LabeledGrid g = LabeledGrid::filled(dims, 0);
  for (auto& l : g.labels) l = static_cast<uint16_t>(rng.below(static_cast<int64_t>(table.count())));
  return g;
}

}  // namespace

LabeledGrid synth_scene(const std::string& preset, const std::array<int64_t, 3>& dims,
                        uint64_t seed, const ClassTable& table) {
  for (int64_t e : dims)
    if (e < 1) throw std::invalid_argument("scene dims must be positive");
  Rng rng(seed);
  if (preset == "corridor") return corridor(dims, rng, table);
  if (preset == "blocks") return blocks(dims, rng, table);
  if (preset == "random") return random_labels(dims, rng, table);
  throw std::invalid_argument("unknown preset '" + preset + "' (corridor|blocks|random)");
}

}  // namespace scanssc
