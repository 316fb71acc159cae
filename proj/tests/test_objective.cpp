#include <doctest.h>

#include <cmath>

#include "scanssc/objective.hpp"
#include "scanssc/rng.hpp"
#include "test_helpers.hpp"

using namespace scanssc;
using ad::Tape;
using ad::Tensor;
using scanssc::testing::rand_labels;
using scanssc::testing::rand_tensor;

namespace {

// scalar-by-scalar cross entropy reference
double ref_ce(const Tensor& logits, const LabeledGrid& g, const ClassTable& table,
              const std::vector<double>* weights) {
  const int64_t P = logits.dim(3);
  double total = 0.0;
  int64_t valid = 0;
  for (int64_t v = 0; v < g.voxels(); ++v) {
    const uint16_t l = g.labels[static_cast<size_t>(v)];
    if (l == table.ignore_label) continue;
    ++valid;
    double mx = logits.data()[static_cast<size_t>(v * P)];
    for (int64_t c = 1; c < P; ++c)
      mx = std::max(mx, logits.data()[static_cast<size_t>(v * P + c)]);
    double lse = 0.0;
    for (int64_t c = 0; c < P; ++c)
      lse += std::exp(logits.data()[static_cast<size_t>(v * P + c)] - mx);
    const double lsm = logits.data()[static_cast<size_t>(v * P + l)] - (mx + std::log(lse));
    total += -(weights ? (*weights)[l] : 1.0) * lsm;
  }
  return valid > 0 ? total / static_cast<double>(valid) : 0.0;
}

// independent affinity-loss reference, written scalar by scalar
std::pair<double, double> ref_scal(const Tensor& logits, const LabeledGrid& g,
                                   const ClassTable& table) {
  const int64_t P = logits.dim(3);
  const int64_t n = g.voxels();
  std::vector<double> probs(static_cast<size_t>(n * P));
  for (int64_t v = 0; v < n; ++v) {
    double mx = logits.data()[static_cast<size_t>(v * P)];
    for (int64_t c = 1; c < P; ++c)
      mx = std::max(mx, logits.data()[static_cast<size_t>(v * P + c)]);
    double lse = 0.0;
    for (int64_t c = 0; c < P; ++c)
      lse += std::exp(logits.data()[static_cast<size_t>(v * P + c)] - mx);
    for (int64_t c = 0; c < P; ++c)
      probs[static_cast<size_t>(v * P + c)] =
          std::exp(logits.data()[static_cast<size_t>(v * P + c)] - mx) / lse;
  }
  auto valid = [&](int64_t v) { return g.labels[static_cast<size_t>(v)] != table.ignore_label; };

  // geometric on the occupancy reduction
  double geo = 0.0;
  {
    double inter = 0.0, pred_mass = 0.0, spec_num = 0.0;
    int64_t n_pos = 0, n_neg = 0;
    for (int64_t v = 0; v < n; ++v) {
      if (!valid(v)) continue;
      const double p_occ = 1.0 - probs[static_cast<size_t>(v * P)];
      const bool occ = g.labels[static_cast<size_t>(v)] != 0;
      pred_mass += p_occ;
      if (occ) {
        inter += p_occ;
        ++n_pos;
      } else {
        spec_num += probs[static_cast<size_t>(v * P)];
        ++n_neg;
      }
    }
    if (n_pos > 0) {
      geo += -std::log(inter / pred_mass);
      geo += -std::log(inter / static_cast<double>(n_pos));
    }
    if (n_neg > 0) geo += -std::log(spec_num / static_cast<double>(n_neg));
  }

  // semantic, averaged over semantic classes present in the ground truth
  double sem = 0.0;
  {
    int64_t counted = 0;
    double acc = 0.0;
    for (int64_t c = 1; c < P; ++c) {
      int64_t n_c = 0, n_not_c = 0;
      double inter = 0.0, mass = 0.0, spec_num = 0.0;
      for (int64_t v = 0; v < n; ++v) {
        if (!valid(v)) continue;
        const double p = probs[static_cast<size_t>(v * P + c)];
        mass += p;
        if (g.labels[static_cast<size_t>(v)] == c) {
          inter += p;
          ++n_c;
        } else {
          spec_num += 1.0 - p;
          ++n_not_c;
        }
      }
      if (n_c == 0) continue;
      ++counted;
      acc += -std::log(inter / mass);
      acc += -std::log(inter / static_cast<double>(n_c));
      if (n_not_c > 0) acc += -std::log(spec_num / static_cast<double>(n_not_c));
    }
    if (counted > 0) sem = acc / static_cast<double>(counted);
  }
  return {geo, sem};
}

}  // namespace

TEST_CASE("ce_loss worked examples") {
  const ClassTable table = ClassTable::generic(4);
  LabeledGrid g = LabeledGrid::filled({2, 1, 1}, 1);
  g.at(1, 0, 0) = 3;

  // strongly peaked at the true classes -> ~0
  std::vector<double> peaked(8, 0.0);
  peaked[1] = 60.0;
  peaked[4 + 3] = 60.0;
  CHECK(loss::ce_loss(Tensor::constant({2, 1, 1, 4}, peaked), g, table).value() < 1e-9);

  // uniform logits -> log P
  CHECK(loss::ce_loss(Tensor::zeros({2, 1, 1, 4}), g, table).value() ==
        doctest::Approx(std::log(4.0)));
}

TEST_CASE("ce_loss matches the scalar reference, with and without weights") {
  Rng rng(51);
  const ClassTable table = ClassTable::generic(5);
  for (int trial = 0; trial < 20; ++trial) {
    const std::array<int64_t, 3> d{3, 3, 2};
    const LabeledGrid g = rand_labels(d, 5, trial % 3 == 0 ? 0.3 : 0.0, rng);
    const Tensor logits = rand_tensor({3, 3, 2, 5}, rng);
    CHECK(loss::ce_loss(logits, g, table).value() ==
          doctest::Approx(ref_ce(logits, g, table, nullptr)).epsilon(1e-10));

    std::vector<double> w(5);
    for (double& x : w) x = rng.uniform(0.2, 3.0);
    CHECK(loss::ce_loss(logits, g, table, w).value() ==
          doctest::Approx(ref_ce(logits, g, table, &w)).epsilon(1e-10));
  }
}

TEST_CASE("ce_loss with no valid voxels is zero with a diagnostic") {
  const ClassTable table = ClassTable::generic(3);
  const LabeledGrid g = LabeledGrid::filled({2, 2, 1}, table.ignore_label);
  bool warn = false;
  CHECK(loss::ce_loss(Tensor::zeros({2, 2, 1, 3}), g, table, std::nullopt, &warn).value() == 0.0);
  CHECK(warn);
}

TEST_CASE("scal losses vanish for perfect one-hot predictions") {
  Rng rng(52);
  const ClassTable table = ClassTable::generic(4);
  const LabeledGrid g = rand_labels({3, 3, 2}, 4, 0.0, rng);
  LogitGrid lg = LogitGrid::zeros({3, 3, 2}, 4);
  for (int64_t v = 0; v < g.voxels(); ++v)
    lg.logits[static_cast<size_t>(v * 4 + g.labels[static_cast<size_t>(v)])] = 80.0;
  const auto scal = loss::scal_losses(lg.to_tensor(), g, table);
  CHECK(scal.geo.value() < 1e-6);
  CHECK(scal.sem.value() < 1e-6);
}

TEST_CASE("geo loss vanishes for empty-only scenes with empty-peaked predictions") {
  const ClassTable table = ClassTable::generic(4);
  const LabeledGrid g = LabeledGrid::filled({2, 2, 2}, 0);
  LogitGrid lg = LogitGrid::zeros({2, 2, 2}, 4);
  for (int64_t v = 0; v < g.voxels(); ++v) lg.logits[static_cast<size_t>(v * 4)] = 80.0;
  const auto scal = loss::scal_losses(lg.to_tensor(), g, table);
  CHECK(scal.geo.value() < 1e-6);
}

TEST_CASE("scal losses match the independent reference") {
  Rng rng(53);
  const ClassTable table = ClassTable::generic(4);
  for (int trial = 0; trial < 20; ++trial) {
    const LabeledGrid g = rand_labels({2, 2, 2}, 4, trial % 4 == 0 ? 0.25 : 0.0, rng);
    const Tensor logits = rand_tensor({2, 2, 2, 4}, rng);
    const auto [geo, sem] = ref_scal(logits, g, table);
    const auto scal = loss::scal_losses(logits, g, table);
    CHECK(scal.geo.value() == doctest::Approx(geo).epsilon(1e-8));
    CHECK(scal.sem.value() == doctest::Approx(sem).epsilon(1e-8));
  }
}

TEST_CASE("total loss report invariant holds") {
  Rng rng(54);
  const ClassTable table = ClassTable::generic(5);
  for (int trial = 0; trial < 10; ++trial) {
    const LabeledGrid g = rand_labels({3, 4, 2}, 5, 0.1, rng);
    const Tensor logits = rand_tensor({3, 4, 2, 5}, rng);
    const loss::LossWeights w{rng.uniform(0, 0.01), rng.uniform(0, 2)};
    const double depth_term = rng.uniform(0, 5);
    const auto res = loss::total_loss(logits, g, table, {}, w, depth_term);
    const auto& r = res.report;
    const double sum = r.ce + r.scal_geo + r.scal_sem + w.lambda_d * r.depth +
                       w.lambda_scan * (r.scan_dep + r.scan_wid + r.scan_hgt);
    CHECK(std::abs(r.total - sum) < 1e-12);
    CHECK(r.depth == depth_term);
  }
}

TEST_CASE("lambda_scan = 0 reduces the objective to the baseline terms") {
  Rng rng(55);
  const ClassTable table = ClassTable::generic(4);
  const LabeledGrid g = rand_labels({2, 3, 2}, 4, 0.0, rng);
  const Tensor logits = rand_tensor({2, 3, 2, 4}, rng);
  loss::LossWeights w;
  w.lambda_scan = 0.0;
  const auto res = loss::total_loss(logits, g, table, {}, w);
  CHECK(res.report.total ==
        doctest::Approx(res.report.ce + res.report.scal_geo + res.report.scal_sem).epsilon(1e-12));
}

TEST_CASE("all-zero inputs give a well-defined report") {
  const ClassTable table = ClassTable::generic(3);
  const LabeledGrid g = LabeledGrid::filled({2, 2, 2}, table.ignore_label);
  const auto res = loss::total_loss(Tensor::zeros({2, 2, 2, 3}), g, table);
  CHECK(res.report.ce == 0.0);
  CHECK(res.report.total == 0.0);
}

TEST_CASE("total loss gradient passes grad_check at the loose tolerance") {
  Rng rng(56);
  const ClassTable table = ClassTable::generic(5);
  const LabeledGrid g = rand_labels({3, 4, 2}, 5, 0.1, rng);
  const Tensor logits = rand_tensor({3, 4, 2, 5}, rng);
  const auto rep = ad::grad_check(
      [&](Tape&, const std::vector<Tensor>& p) {
        return loss::total_loss(p[0], g, table).total;
      },
      {logits});
  CHECK(rep.max_rel_error < 1e-3);
}

TEST_CASE("moving logit mass toward the true class never increases ce_loss") {
  Rng rng(57);
  const ClassTable table = ClassTable::generic(4);
  const LabeledGrid g = rand_labels({3, 3, 2}, 4, 0.0, rng);
  Tensor logits = rand_tensor({3, 3, 2, 4}, rng);
  double prev = loss::ce_loss(logits, g, table).value();
  for (int step = 0; step < 5; ++step) {
    std::vector<double> v = logits.data();
    for (int64_t vox = 0; vox < g.voxels(); ++vox)
      v[static_cast<size_t>(vox * 4 + g.labels[static_cast<size_t>(vox)])] += 0.25;
    logits = Tensor::constant(logits.shape(), std::move(v));
    const double cur = loss::ce_loss(logits, g, table).value();
    CHECK(cur <= prev + 1e-12);
    prev = cur;
  }
}

TEST_CASE("loss report serializes with the fixed key set") {
  loss::LossReport r;
  r.ce = 1.5;
  r.total = 2.5;
  const std::string j = r.to_json();
  for (const char* key : {"\"ce\"", "\"scal_geo\"", "\"scal_sem\"", "\"depth\"", "\"scan_dep\"",
                          "\"scan_wid\"", "\"scan_hgt\"", "\"total\""})
    CHECK(j.find(key) != std::string::npos);
}
