#include "scanssc/objective.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace scanssc::loss {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

void check_pair(const Tensor& logits, const LabeledGrid& gt, const ClassTable& table) {
  if (logits.rank() != 4) fail("expected [X,Y,Z,P] logits, got " + ad::shape_str(logits.shape()));
  if (logits.dim(0) != gt.dims[0] || logits.dim(1) != gt.dims[1] || logits.dim(2) != gt.dims[2])
    fail("logit dims " + ad::shape_str(logits.shape()) + " do not match the label grid");
  if (logits.dim(3) != static_cast<int64_t>(table.count()))
    fail("logit class extent does not match the class table");
  gt.validate(table);
}

// Masked sum of a [X,Y,Z] tensor against a constant 0/1 (or weighted) mask.
Tensor masked_sum(const Tensor& field, std::vector<double> mask) {
  const Tensor m = ad::Tensor::constant(field.shape(), std::move(mask));
  return ad::sum_all(ad::mul(field, m));
}

}  // namespace

std::string LossReport::to_json() const {
  nlohmann::json j;
  j["ce"] = ce;
  j["scal_geo"] = scal_geo;
  j["scal_sem"] = scal_sem;
  j["depth"] = depth;
  j["scan_dep"] = scan_dep;
  j["scan_wid"] = scan_wid;
  j["scan_hgt"] = scan_hgt;
  j["total"] = total;
  return j.dump();
}

Tensor ce_loss(const Tensor& logits, const LabeledGrid& gt, const ClassTable& table,
               const std::optional<std::vector<double>>& class_weights, bool* no_valid_voxels) {
  check_pair(logits, gt, table);
  const int64_t classes = logits.dim(3);
  if (class_weights && static_cast<int64_t>(class_weights->size()) != classes)
    fail("ce_loss: class weight vector does not cover every class");

  int64_t valid = 0;
  for (uint16_t l : gt.labels)
    if (l != table.ignore_label) ++valid;
  if (no_valid_voxels) *no_valid_voxels = valid == 0;
  if (valid == 0) return Tensor::scalar(0.0);

  // pick out -w_y * lsm[y] per voxel with a constant selector, then sum
  std::vector<double> sel(static_cast<size_t>(gt.voxels() * classes), 0.0);
  const double inv = 1.0 / static_cast<double>(valid);
  for (int64_t v = 0; v < gt.voxels(); ++v) {
    const uint16_t l = gt.labels[static_cast<size_t>(v)];
    if (l == table.ignore_label) continue;
    const double w = class_weights ? (*class_weights)[l] : 1.0;
    sel[static_cast<size_t>(v * classes + l)] = -w * inv;
  }
  const Tensor selector = ad::Tensor::constant(logits.shape(), std::move(sel));
  return ad::sum_all(ad::mul(ad::log_softmax(logits, 3), selector));
}

ScalLosses scal_losses(const Tensor& logits, const LabeledGrid& gt, const ClassTable& table) {
  check_pair(logits, gt, table);
  const int64_t classes = logits.dim(3);
  const int64_t voxels = gt.voxels();

  const Tensor probs = ad::softmax(logits, 3);

  auto indicator = [&](auto&& pred) {
    std::vector<double> m(static_cast<size_t>(voxels), 0.0);
    for (int64_t v = 0; v < voxels; ++v)
      if (pred(gt.labels[static_cast<size_t>(v)])) m[static_cast<size_t>(v)] = 1.0;
    return m;
  };
  auto count_of = [&](const std::vector<double>& m) {
    int64_t n = 0;
    for (double x : m)
      if (x != 0.0) ++n;
    return n;
  };

  const uint16_t ignore = table.ignore_label;
  const std::vector<double> valid = indicator([&](uint16_t l) { return l != ignore; });
  const int64_t n_valid = count_of(valid);

  // Each included ratio enters as -log(numerator/denominator).
  auto ratio_term = [](const Tensor& numer, const Tensor& denom) {
    return ad::sub(ad::log(denom), ad::log(numer));
  };

  // ---- geometric: occupied/empty reduction ----
  Tensor geo = Tensor::scalar(0.0);
  {
    const Tensor p_empty = ad::narrow(probs, 3, 0, 1);
    const Tensor p_occ = ad::add_scalar(ad::neg(p_empty), 1.0);
    const std::vector<double> t_occ =
        indicator([&](uint16_t l) { return l != ignore && l != 0; });
    const std::vector<double> t_empty = indicator([&](uint16_t l) { return l == 0; });
    const int64_t n_pos = count_of(t_occ);
    const int64_t n_neg = count_of(t_empty);

    std::vector<Tensor> terms;
    if (n_pos > 0) {
      const Tensor inter = masked_sum(p_occ, t_occ);
      terms.push_back(ratio_term(inter, masked_sum(p_occ, valid)));          // precision
      terms.push_back(ratio_term(inter, Tensor::scalar(static_cast<double>(n_pos))));  // recall
    }
    if (n_neg > 0)
      terms.push_back(ratio_term(masked_sum(p_empty, t_empty),
                                 Tensor::scalar(static_cast<double>(n_neg))));  // specificity
    for (const Tensor& t : terms) geo = ad::add(geo, t);
  }

  // ---- semantic: per semantic class present in the ground truth ----
  Tensor sem = Tensor::scalar(0.0);
  {
    int64_t counted = 0;
    Tensor acc = Tensor::scalar(0.0);
    for (int64_t c = 1; c < classes; ++c) {
      const std::vector<double> t_c =
          indicator([&](uint16_t l) { return l == static_cast<uint16_t>(c); });
      const int64_t n_c = count_of(t_c);
      if (n_c == 0) continue;  // class absent from the ground truth
      ++counted;
      const Tensor p_c = ad::narrow(probs, 3, c, 1);
      const Tensor inter = masked_sum(p_c, t_c);
      acc = ad::add(acc, ratio_term(inter, masked_sum(p_c, valid)));
      acc = ad::add(acc, ratio_term(inter, Tensor::scalar(static_cast<double>(n_c))));
      const std::vector<double> t_not_c =
          indicator([&](uint16_t l) { return l != ignore && l != static_cast<uint16_t>(c); });
      const int64_t n_not_c = n_valid - n_c;
      if (n_not_c > 0) {
        const Tensor p_not_c = ad::add_scalar(ad::neg(p_c), 1.0);
        acc = ad::add(acc, ratio_term(masked_sum(p_not_c, t_not_c),
                                      Tensor::scalar(static_cast<double>(n_not_c))));
      }
    }
    if (counted > 0) sem = ad::scale(acc, 1.0 / static_cast<double>(counted));
  }

  return {geo, sem};
}

TotalLossResult total_loss(const Tensor& logits, const LabeledGrid& gt, const ClassTable& table,
                           const ScanLossConfig& scan_config, const LossWeights& weights,
                           double depth_term,
                           const std::optional<std::vector<double>>& ce_class_weights) {
  if (weights.lambda_d < 0.0 || weights.lambda_scan < 0.0)
    fail("loss weights must be nonnegative");

  const Tensor ce = ce_loss(logits, gt, table, ce_class_weights);
  const ScalLosses scal = scal_losses(logits, gt, table);
  const ScanLossTerms scan = scan_loss_total(logits, gt, table, scan_config);

  Tensor total = ad::add(ce, ad::add(scal.geo, scal.sem));
  total = ad::add_scalar(total, weights.lambda_d * depth_term);
  total = ad::add(total, ad::scale(scan.total, weights.lambda_scan));

  TotalLossResult out;
  out.total = total;
  out.report.ce = ce.value();
  out.report.scal_geo = scal.geo.value();
  out.report.scal_sem = scal.sem.value();
  out.report.depth = depth_term;
  out.report.scan_dep = scan.by_axis[0];
  out.report.scan_wid = scan.by_axis[1];
  out.report.scan_hgt = scan.by_axis[2];
  out.report.total = total.value();
  return out;
}

}  // namespace scanssc::loss
