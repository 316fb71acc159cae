#pragma once

// Straight-line reference implementation of the scan module forward pass,
// written with plain loops over std::vector<double>. Kept deliberately
// independent of the library's tensor/tape machinery so it can serve as a
// dual-implementation oracle.

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "scanssc/scan_module.hpp"

namespace scanssc::testing::ref {

using Vec = std::vector<double>;

inline Vec layer_norm(const Vec& x, int64_t rows, int64_t c, const Vec& gamma, const Vec& beta,
                      double eps) {
  Vec out(x.size());
  for (int64_t r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (int64_t i = 0; i < c; ++i) mu += x[static_cast<size_t>(r * c + i)];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (int64_t i = 0; i < c; ++i) {
      const double d = x[static_cast<size_t>(r * c + i)] - mu;
      var += d * d;
    }
    var /= static_cast<double>(c);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (int64_t i = 0; i < c; ++i)
      out[static_cast<size_t>(r * c + i)] =
          gamma[static_cast<size_t>(i)] * (x[static_cast<size_t>(r * c + i)] - mu) * inv +
          beta[static_cast<size_t>(i)];
  }
  return out;
}

inline Vec linear(const Vec& x, int64_t rows, int64_t in, const Vec& w, int64_t out_c,
                  const Vec& b) {
  Vec out(static_cast<size_t>(rows * out_c), 0.0);
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t o = 0; o < out_c; ++o) {
      double acc = b.empty() ? 0.0 : b[static_cast<size_t>(o)];
      for (int64_t i = 0; i < in; ++i)
        acc += x[static_cast<size_t>(r * in + i)] * w[static_cast<size_t>(i * out_c + o)];
      out[static_cast<size_t>(r * out_c + o)] = acc;
    }
  return out;
}

// single-head masked self-attention + FFN block on [B,L,C]
inline Vec scan_block(const Vec& f, int64_t B, int64_t L, int64_t C,
                      const masks::AttentionMask& mask, const model::ScanBlockParams& p,
                      double eps) {
  const Vec x = layer_norm(f, B * L, C, p.norm1_gamma.data(), p.norm1_beta.data(), eps);
  const Vec q = linear(x, B * L, C, p.wq.data(), C, p.bq.data());
  const Vec k = linear(x, B * L, C, p.wk.data(), C, p.bk.data());
  const Vec v = linear(x, B * L, C, p.wv.data(), C, p.bv.data());

  Vec att(static_cast<size_t>(B * L * C), 0.0);
  const double scale = 1.0 / std::sqrt(static_cast<double>(C));
  for (int64_t b = 0; b < B; ++b)
    for (int64_t i = 0; i < L; ++i) {
      std::vector<double> row(static_cast<size_t>(L), 0.0);
      double mx = -1e300;
      for (int64_t j = 0; j < L; ++j) {
        if (mask.is_blocked(i, j)) continue;
        double s = 0.0;
        for (int64_t c = 0; c < C; ++c)
          s += q[static_cast<size_t>((b * L + i) * C + c)] *
               k[static_cast<size_t>((b * L + j) * C + c)];
        row[static_cast<size_t>(j)] = s * scale;
        mx = std::max(mx, row[static_cast<size_t>(j)]);
      }
      double denom = 0.0;
      for (int64_t j = 0; j < L; ++j) {
        if (mask.is_blocked(i, j)) continue;
        row[static_cast<size_t>(j)] = std::exp(row[static_cast<size_t>(j)] - mx);
        denom += row[static_cast<size_t>(j)];
      }
      for (int64_t j = 0; j < L; ++j) {
        if (mask.is_blocked(i, j)) continue;
        const double w = row[static_cast<size_t>(j)] / denom;
        for (int64_t c = 0; c < C; ++c)
          att[static_cast<size_t>((b * L + i) * C + c)] +=
              w * v[static_cast<size_t>((b * L + j) * C + c)];
      }
    }

  const Vec proj = linear(att, B * L, C, p.wo.data(), C, p.bo.data());
  Vec f_bar(f.size());
  for (size_t i = 0; i < f.size(); ++i) f_bar[i] = f[i] + proj[i];

  const Vec y = layer_norm(f_bar, B * L, C, p.norm2_gamma.data(), p.norm2_beta.data(), eps);
  const int64_t cff = p.ffn_w1.dim(1);
  Vec h = linear(y, B * L, C, p.ffn_w1.data(), cff, p.ffn_b1.data());
  for (double& x2 : h) x2 = std::max(0.0, x2);
  const Vec h2 = linear(h, B * L, cff, p.ffn_w2.data(), C, p.ffn_b2.data());
  Vec out(f.size());
  for (size_t i = 0; i < f.size(); ++i) out[i] = f_bar[i] + h2[i];
  return out;
}

inline int64_t reflect(int64_t i, int64_t n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
  }
  return i;
}

inline Vec conv3d(const Vec& x, std::array<int64_t, 3> d, int64_t cin, const Vec& w, int64_t cout,
                  const Vec& b, bool reflect_pad) {
  Vec out(static_cast<size_t>(d[0] * d[1] * d[2] * cout), 0.0);
  for (int64_t ox = 0; ox < d[0]; ++ox)
    for (int64_t oy = 0; oy < d[1]; ++oy)
      for (int64_t oz = 0; oz < d[2]; ++oz)
        for (int64_t o = 0; o < cout; ++o) {
          double acc = b[static_cast<size_t>(o)];
          for (int64_t kx = 0; kx < 3; ++kx)
            for (int64_t ky = 0; ky < 3; ++ky)
              for (int64_t kz = 0; kz < 3; ++kz) {
                int64_t px = ox + kx - 1, py = oy + ky - 1, pz = oz + kz - 1;
                if (reflect_pad) {
                  px = reflect(px, d[0]);
                  py = reflect(py, d[1]);
                  pz = reflect(pz, d[2]);
                } else if (px < 0 || px >= d[0] || py < 0 || py >= d[1] || pz < 0 || pz >= d[2]) {
                  continue;
                }
                for (int64_t ci = 0; ci < cin; ++ci)
                  acc += x[static_cast<size_t>(((px * d[1] + py) * d[2] + pz) * cin + ci)] *
                         w[static_cast<size_t>(((o * cin + ci) * 3 + kx) * 9 + ky * 3 + kz)];
              }
          out[static_cast<size_t>(((ox * d[1] + oy) * d[2] + oz) * cout + o)] = acc;
        }
  return out;
}

inline Vec residual_unit(const Vec& f, std::array<int64_t, 3> d, int64_t c,
                         const model::ResidualUnitParams& u, bool reflect_pad) {
  Vec h = conv3d(f, d, c, u.conv1_w.data(), c, u.conv1_b.data(), reflect_pad);
  for (double& x : h) x = std::max(0.0, x);
  h = conv3d(h, d, c, u.conv2_w.data(), c, u.conv2_b.data(), reflect_pad);
  for (size_t i = 0; i < h.size(); ++i) h[i] += f[i];
  return h;
}

inline Vec avgpool_half(const Vec& x, std::array<int64_t, 3> d, int64_t c,
                        std::array<int64_t, 3>& od) {
  od = {(d[0] + 1) / 2, (d[1] + 1) / 2, (d[2] + 1) / 2};
  Vec out(static_cast<size_t>(od[0] * od[1] * od[2] * c), 0.0);
  auto lo = [](int64_t i, int64_t n, int64_t o) { return i * n / o; };
  for (int64_t ix = 0; ix < od[0]; ++ix)
    for (int64_t iy = 0; iy < od[1]; ++iy)
      for (int64_t iz = 0; iz < od[2]; ++iz) {
        const int64_t x0 = lo(ix, d[0], od[0]), x1 = lo(ix + 1, d[0], od[0]);
        const int64_t y0 = lo(iy, d[1], od[1]), y1 = lo(iy + 1, d[1], od[1]);
        const int64_t z0 = lo(iz, d[2], od[2]), z1 = lo(iz + 1, d[2], od[2]);
        const double inv = 1.0 / static_cast<double>((x1 - x0) * (y1 - y0) * (z1 - z0));
        for (int64_t ci = 0; ci < c; ++ci) {
          double acc = 0.0;
          for (int64_t px = x0; px < x1; ++px)
            for (int64_t py = y0; py < y1; ++py)
              for (int64_t pz = z0; pz < z1; ++pz)
                acc += x[static_cast<size_t>(((px * d[1] + py) * d[2] + pz) * c + ci)];
          out[static_cast<size_t>(((ix * od[1] + iy) * od[2] + iz) * c + ci)] = acc * inv;
        }
      }
  return out;
}

inline Vec resize_trilinear(const Vec& x, std::array<int64_t, 3> d, int64_t c,
                            std::array<int64_t, 3> od) {
  Vec out(static_cast<size_t>(od[0] * od[1] * od[2] * c), 0.0);
  auto sample = [&](int64_t i, int64_t in, int64_t on, int64_t& lo, int64_t& hi, double& w1) {
    double src = (static_cast<double>(i) + 0.5) * static_cast<double>(in) /
                     static_cast<double>(on) - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    lo = static_cast<int64_t>(std::floor(src));
    hi = std::min(lo + 1, in - 1);
    w1 = src - static_cast<double>(lo);
  };
  for (int64_t ix = 0; ix < od[0]; ++ix)
    for (int64_t iy = 0; iy < od[1]; ++iy)
      for (int64_t iz = 0; iz < od[2]; ++iz) {
        int64_t x0, x1, y0, y1, z0, z1;
        double wx, wy, wz;
        sample(ix, d[0], od[0], x0, x1, wx);
        sample(iy, d[1], od[1], y0, y1, wy);
        sample(iz, d[2], od[2], z0, z1, wz);
        for (int64_t ci = 0; ci < c; ++ci) {
          double acc = 0.0;
          for (int cx = 0; cx < 2; ++cx)
            for (int cy = 0; cy < 2; ++cy)
              for (int cz = 0; cz < 2; ++cz) {
                const double w = (cx ? wx : 1 - wx) * (cy ? wy : 1 - wy) * (cz ? wz : 1 - wz);
                const int64_t px = cx ? x1 : x0, py = cy ? y1 : y0, pz = cz ? z1 : z0;
                acc += w * x[static_cast<size_t>(((px * d[1] + py) * d[2] + pz) * c + ci)];
              }
          out[static_cast<size_t>(((ix * od[1] + iy) * od[2] + iz) * c + ci)] = acc;
        }
      }
  return out;
}

inline Vec spatial_mix(const Vec& f, std::array<int64_t, 3> d, int64_t c,
                       const model::MixerParams& p) {
  const bool refl = p.padding == ad::PaddingMode::reflect;
  Vec h = f;
  for (const auto& u : p.units) h = residual_unit(h, d, c, u, refl);
  if (!p.pyramid) return h;
  std::array<int64_t, 3> od{};
  Vec low = avgpool_half(h, d, c, od);
  low = residual_unit(low, od, c, p.half_unit, refl);
  const Vec up = resize_trilinear(low, od, c, d);
  for (size_t i = 0; i < h.size(); ++i) h[i] += up[i];
  return h;
}

// flatten/unflatten with explicit index arithmetic
inline Vec flatten(const Vec& vol, std::array<int64_t, 3> d, int64_t c, Axis axis) {
  const int64_t X = d[0], Y = d[1], Z = d[2];
  Vec out(vol.size());
  for (int64_t x = 0; x < X; ++x)
    for (int64_t y = 0; y < Y; ++y)
      for (int64_t z = 0; z < Z; ++z)
        for (int64_t ch = 0; ch < c; ++ch) {
          const double v = vol[static_cast<size_t>(((x * Y + y) * Z + z) * c + ch)];
          int64_t batch, seq, L;
          switch (axis) {
            case Axis::depth:
              batch = y * Z + z;
              seq = x;
              L = X;
              break;
            case Axis::width:
              batch = x * Z + z;
              seq = y;
              L = Y;
              break;
            default:
              batch = x * Y + y;
              seq = z;
              L = Z;
              break;
          }
          out[static_cast<size_t>((batch * L + seq) * c + ch)] = v;
        }
  return out;
}

inline Vec unflatten(const Vec& flat, std::array<int64_t, 3> d, int64_t c, Axis axis) {
  const int64_t X = d[0], Y = d[1], Z = d[2];
  Vec out(flat.size());
  for (int64_t x = 0; x < X; ++x)
    for (int64_t y = 0; y < Y; ++y)
      for (int64_t z = 0; z < Z; ++z)
        for (int64_t ch = 0; ch < c; ++ch) {
          int64_t batch, seq, L;
          switch (axis) {
            case Axis::depth:
              batch = y * Z + z;
              seq = x;
              L = X;
              break;
            case Axis::width:
              batch = x * Z + z;
              seq = y;
              L = Y;
              break;
            default:
              batch = x * Y + y;
              seq = z;
              L = Z;
              break;
          }
          out[static_cast<size_t>(((x * Y + y) * Z + z) * c + ch)] =
              flat[static_cast<size_t>((batch * L + seq) * c + ch)];
        }
  return out;
}

inline Vec fuse(const Vec& fd, const Vec& fw, const Vec& fh, std::array<int64_t, 3> d, int64_t c,
                const model::FusionParams& p) {
  const int64_t voxels = d[0] * d[1] * d[2];
  Vec out(fd.size(), 0.0);
  for (int64_t v = 0; v < voxels; ++v) {
    // concat channels, project to 3, softmax
    double logits[3];
    for (int i = 0; i < 3; ++i) logits[i] = p.b.data()[static_cast<size_t>(i)];
    for (int64_t ch = 0; ch < c; ++ch) {
      const double vd = fd[static_cast<size_t>(v * c + ch)];
      const double vw = fw[static_cast<size_t>(v * c + ch)];
      const double vh = fh[static_cast<size_t>(v * c + ch)];
      for (int i = 0; i < 3; ++i) {
        logits[i] += vd * p.w.data()[static_cast<size_t>(ch * 3 + i)];
        logits[i] += vw * p.w.data()[static_cast<size_t>((c + ch) * 3 + i)];
        logits[i] += vh * p.w.data()[static_cast<size_t>((2 * c + ch) * 3 + i)];
      }
    }
    const double mx = std::max({logits[0], logits[1], logits[2]});
    double denom = 0.0;
    double w[3];
    for (int i = 0; i < 3; ++i) {
      w[i] = std::exp(logits[i] - mx);
      denom += w[i];
    }
    for (int i = 0; i < 3; ++i) w[i] /= denom;
    for (int64_t ch = 0; ch < c; ++ch)
      out[static_cast<size_t>(v * c + ch)] = w[0] * fd[static_cast<size_t>(v * c + ch)] +
                                             w[1] * fw[static_cast<size_t>(v * c + ch)] +
                                             w[2] * fh[static_cast<size_t>(v * c + ch)];
  }
  return out;
}

inline Vec scan_module_forward(const Vec& f, std::array<int64_t, 3> d, int64_t c,
                               const model::ScanMasks& masks, const model::ScanModuleParams& p) {
  std::array<Vec, 3> branch;
  for (int a = 0; a < 3; ++a) {
    const auto ua = static_cast<size_t>(a);
    if (!p.config.branch_enabled[ua]) {
      branch[ua] = f;
      continue;
    }
    const Axis axis = static_cast<Axis>(a);
    const int64_t L = d[ua];
    const int64_t B = d[0] * d[1] * d[2] / L;
    Vec seq = flatten(f, d, c, axis);
    seq = scan_block(seq, B, L, c, masks.by_axis[ua], p.blocks[ua],
                     p.config.layer_norm_epsilon);
    Vec vol = unflatten(seq, d, c, axis);
    branch[ua] = spatial_mix(vol, d, c, p.mixers[ua]);
  }
  return fuse(branch[0], branch[1], branch[2], d, c, p.fusion);
}

}  // namespace scanssc::testing::ref
