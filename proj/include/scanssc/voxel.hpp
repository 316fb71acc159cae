#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "scanssc/autodiff.hpp"

namespace scanssc {

enum class Axis { depth = 0, width = 1, height = 2 };

const char* axis_name(Axis a);
std::optional<Axis> axis_from_name(const std::string& name);

// Canonical near-to-far orientation of one axis (front-to-back for depth,
// center-to-side for width, high-to-low in scene terms for height), with
// an optional flip for ablations.
struct AxisDirection {
  Axis axis = Axis::depth;
  bool flipped = false;
};

// Semantic class table. Index 0 is the empty class; the ignore label is a
// sentinel outside [0, P) that is excluded from every loss and metric.
struct ClassTable {
  std::vector<std::string> names;
  uint16_t ignore_label = 255;
  std::optional<std::vector<double>> frequency_weights;

  size_t count() const { return names.size(); }
  void validate() const;

  // Empty + the 19 SemanticKITTI classes (P = 20).
  static ClassTable semantic_kitti();
  // Empty + numbered classes, P >= 2.
  static ClassTable generic(size_t class_count);
};

// Target and proposal grid extents. Target extents must be integer
// multiples of the proposal extents.
struct GridDims {
  std::array<int64_t, 3> target{256, 256, 32};
  std::array<int64_t, 3> proposal{128, 128, 16};
  int64_t channels = 8;

  void validate() const;
  std::array<int64_t, 3> upsample_factors() const;
  int64_t target_voxels() const { return target[0] * target[1] * target[2]; }
  int64_t proposal_voxels() const { return proposal[0] * proposal[1] * proposal[2]; }
};

// Dense grid of class labels, x-major / z-fastest storage.
struct LabeledGrid {
  std::array<int64_t, 3> dims{0, 0, 0};
  std::vector<uint16_t> labels;

  static LabeledGrid filled(std::array<int64_t, 3> dims, uint16_t label);
  int64_t voxels() const { return dims[0] * dims[1] * dims[2]; }
  int64_t index(int64_t x, int64_t y, int64_t z) const { return (x * dims[1] + y) * dims[2] + z; }
  uint16_t at(int64_t x, int64_t y, int64_t z) const {
    return labels[static_cast<size_t>(index(x, y, z))];
  }
  uint16_t& at(int64_t x, int64_t y, int64_t z) {
    return labels[static_cast<size_t>(index(x, y, z))];
  }
  void validate(const ClassTable& table) const;
};

// Dense per-voxel class logits, class-fastest storage.
struct LogitGrid {
  std::array<int64_t, 3> dims{0, 0, 0};
  int64_t classes = 0;
  std::vector<double> logits;

  static LogitGrid zeros(std::array<int64_t, 3> dims, int64_t classes);
  int64_t index(int64_t x, int64_t y, int64_t z, int64_t p) const {
    return ((x * dims[1] + y) * dims[2] + z) * classes + p;
  }
  double at(int64_t x, int64_t y, int64_t z, int64_t p) const {
    return logits[static_cast<size_t>(index(x, y, z, p))];
  }
  ad::Tensor to_tensor() const;
  static LogitGrid from_tensor(const ad::Tensor& t);
};

// Dense per-voxel feature channels over the proposal grid.
struct FeatureVolume {
  std::array<int64_t, 3> dims{0, 0, 0};
  int64_t channels = 0;
  std::vector<double> values;

  static FeatureVolume zeros(std::array<int64_t, 3> dims, int64_t channels);
  ad::Tensor to_tensor() const;
  static FeatureVolume from_tensor(const ad::Tensor& t);
};

// Argmax over the class axis; every voxel gets a label in [0, P).
LabeledGrid argmax_labels(const LogitGrid& g);

// Reorders a [X,Y,Z,C] tensor into the per-axis sequence-batch layout
// [B, L, C]: the scanned axis becomes the sequence, the remaining two
// spatial axes (in original order) form the batch. For the depth axis,
// element (x,y,z,c) lands at batch y*Z + z, sequence x, channel c.
ad::Tensor flatten_for_axis(const ad::Tensor& volume, Axis axis);
// Exact inverse of flatten_for_axis for the given spatial dims.
ad::Tensor unflatten_for_axis(const ad::Tensor& flat, Axis axis, const std::array<int64_t, 3>& dims);

// Trilinear upsampling by integer factors per axis (cell-centred samples).
FeatureVolume upsample_trilinear(const FeatureVolume& f, const std::array<int64_t, 3>& factors);
LogitGrid upsample_trilinear(const LogitGrid& g, const std::array<int64_t, 3>& factors);

}  // namespace scanssc
