#include "scanssc/voxel.hpp"

#include <stdexcept>

namespace scanssc {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

}  // namespace

const char* axis_name(Axis a) {
  switch (a) {
    case Axis::depth:
      return "dep";
    case Axis::width:
      return "wid";
    case Axis::height:
      return "hgt";
  }
  return "?";
}

std::optional<Axis> axis_from_name(const std::string& name) {
  if (name == "dep" || name == "depth") return Axis::depth;
  if (name == "wid" || name == "width") return Axis::width;
  if (name == "hgt" || name == "height") return Axis::height;
  return std::nullopt;
}

void ClassTable::validate() const {
  if (names.size() < 2) fail("class table needs at least 2 classes (empty + one semantic)");
  if (ignore_label < names.size()) fail("ignore label collides with a class index");
  for (size_t i = 0; i < names.size(); ++i)
    for (size_t j = i + 1; j < names.size(); ++j)
      if (names[i] == names[j]) fail("duplicate class name: " + names[i]);
  if (frequency_weights) {
    if (frequency_weights->size() != names.size())
      fail("frequency weights must cover every class");
    for (double w : *frequency_weights)
      if (!(w > 0.0)) fail("frequency weights must be positive");
  }
}

ClassTable ClassTable::semantic_kitti() {
  ClassTable t;
  t.names = {"empty",      "road",         "sidewalk", "parking",  "other-ground",
             "building",   "car",          "truck",    "bicycle",  "motorcycle",
             "other-vehicle", "vegetation", "trunk",    "terrain",  "person",
             "bicyclist",  "motorcyclist", "fence",    "pole",     "traffic-sign"};
  return t;
}

ClassTable ClassTable::generic(size_t class_count) {
  if (class_count < 2) fail("class table needs at least 2 classes");
  ClassTable t;
  t.names.reserve(class_count);
  t.names.emplace_back("empty");
  for (size_t i = 1; i < class_count; ++i) t.names.push_back("class" + std::to_string(i));
  return t;
}

void GridDims::validate() const {
  for (int i = 0; i < 3; ++i) {
    if (proposal[static_cast<size_t>(i)] < 1 || target[static_cast<size_t>(i)] < 1)
      fail("grid extents must be positive");
    if (target[static_cast<size_t>(i)] % proposal[static_cast<size_t>(i)] != 0)
      fail("target extent " + std::to_string(target[static_cast<size_t>(i)]) +
           " is not an integer multiple of proposal extent " +
           std::to_string(proposal[static_cast<size_t>(i)]));
  }
  if (channels < 1) fail("channel count must be positive");
}

std::array<int64_t, 3> GridDims::upsample_factors() const {
  return {target[0] / proposal[0], target[1] / proposal[1], target[2] / proposal[2]};
}

LabeledGrid LabeledGrid::filled(std::array<int64_t, 3> dims, uint16_t label) {
  LabeledGrid g;
  g.dims = dims;
  g.labels.assign(static_cast<size_t>(g.voxels()), label);
  return g;
}

void LabeledGrid::validate(const ClassTable& table) const {
  if (static_cast<int64_t>(labels.size()) != voxels())
    fail("label payload does not match grid dims");
  for (uint16_t l : labels)
    if (l >= table.count() && l != table.ignore_label)
      fail("label " + std::to_string(l) + " outside [0," + std::to_string(table.count()) +
           ") and not the ignore label");
}

LogitGrid LogitGrid::zeros(std::array<int64_t, 3> dims, int64_t classes) {
  LogitGrid g;
  g.dims = dims;
  g.classes = classes;
  g.logits.assign(static_cast<size_t>(dims[0] * dims[1] * dims[2] * classes), 0.0);
  return g;
}

ad::Tensor LogitGrid::to_tensor() const {
  return ad::Tensor::constant({dims[0], dims[1], dims[2], classes}, logits);
}

LogitGrid LogitGrid::from_tensor(const ad::Tensor& t) {
  if (t.rank() != 4) fail("logit tensor must be rank 4");
  LogitGrid g;
  g.dims = {t.dim(0), t.dim(1), t.dim(2)};
  g.classes = t.dim(3);
  g.logits = t.data();
  return g;
}

FeatureVolume FeatureVolume::zeros(std::array<int64_t, 3> dims, int64_t channels) {
  FeatureVolume f;
  f.dims = dims;
  f.channels = channels;
  f.values.assign(static_cast<size_t>(dims[0] * dims[1] * dims[2] * channels), 0.0);
  return f;
}

ad::Tensor FeatureVolume::to_tensor() const {
  return ad::Tensor::constant({dims[0], dims[1], dims[2], channels}, values);
}

FeatureVolume FeatureVolume::from_tensor(const ad::Tensor& t) {
  if (t.rank() != 4) fail("feature tensor must be rank 4");
  FeatureVolume f;
  f.dims = {t.dim(0), t.dim(1), t.dim(2)};
  f.channels = t.dim(3);
  f.values = t.data();
  return f;
}

LabeledGrid argmax_labels(const LogitGrid& g) {
  LabeledGrid out;
  out.dims = g.dims;
  out.labels.resize(static_cast<size_t>(out.voxels()));
  for (int64_t v = 0; v < out.voxels(); ++v) {
    const double* p = g.logits.data() + v * g.classes;
    int64_t best = 0;
    for (int64_t c = 1; c < g.classes; ++c)
      if (p[c] > p[best]) best = c;
    out.labels[static_cast<size_t>(v)] = static_cast<uint16_t>(best);
  }
  return out;
}

ad::Tensor flatten_for_axis(const ad::Tensor& volume, Axis axis) {
  if (volume.rank() != 4)
    fail("flatten_for_axis: expected [X,Y,Z,C], got " + ad::shape_str(volume.shape()));
  const int64_t x = volume.dim(0), y = volume.dim(1), z = volume.dim(2), c = volume.dim(3);
  switch (axis) {
    case Axis::depth:
      return ad::reshape(ad::permute(volume, {1, 2, 0, 3}), {y * z, x, c});
    case Axis::width:
      return ad::reshape(ad::permute(volume, {0, 2, 1, 3}), {x * z, y, c});
    case Axis::height:
      return ad::reshape(volume, {x * y, z, c});
  }
  fail("flatten_for_axis: bad axis");
}

ad::Tensor unflatten_for_axis(const ad::Tensor& flat, Axis axis,
                              const std::array<int64_t, 3>& dims) {
  if (flat.rank() != 3)
    fail("unflatten_for_axis: expected [B,L,C], got " + ad::shape_str(flat.shape()));
  const int64_t x = dims[0], y = dims[1], z = dims[2];
  const int64_t c = flat.dim(2);
  switch (axis) {
    case Axis::depth:
      if (flat.dim(0) != y * z || flat.dim(1) != x) break;
      return ad::permute(ad::reshape(flat, {y, z, x, c}), {2, 0, 1, 3});
    case Axis::width:
      if (flat.dim(0) != x * z || flat.dim(1) != y) break;
      return ad::permute(ad::reshape(flat, {x, z, y, c}), {0, 2, 1, 3});
    case Axis::height:
      if (flat.dim(0) != x * y || flat.dim(1) != z) break;
      return ad::reshape(flat, {x, y, z, c});
  }
  fail("unflatten_for_axis: flat shape " + ad::shape_str(flat.shape()) +
       " does not match volume dims");
}

namespace {

ad::Tensor upsample_tensor(const ad::Tensor& t, const std::array<int64_t, 3>& factors) {
  for (int64_t f : factors)
    if (f < 1) fail("upsample factors must be positive integers");
  return ad::resize_trilinear(
      t, {t.dim(0) * factors[0], t.dim(1) * factors[1], t.dim(2) * factors[2]});
}

}  // namespace

FeatureVolume upsample_trilinear(const FeatureVolume& f, const std::array<int64_t, 3>& factors) {
  return FeatureVolume::from_tensor(upsample_tensor(f.to_tensor(), factors));
}

LogitGrid upsample_trilinear(const LogitGrid& g, const std::array<int64_t, 3>& factors) {
  return LogitGrid::from_tensor(upsample_tensor(g.to_tensor(), factors));
}

}  // namespace scanssc
