// Copyright Contributors to the Forma Project
// SPDX-License-Identifier: Apache-2.0

#include "forma/reconstruct/recon.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>

#include "forma/gradcore/rng.hpp"

namespace forma::reconstruct {

using gradcore::Tensor;

namespace {

constexpr float kBoxLo = -1.2f;  // render volume, pads the [-1,1]^3 field domain
constexpr float kBoxHi = 1.2f;
constexpr float kNearClip = 0.05f;

// Ray/box overlap along o + t*d; entry floored at the near clip.
bool slab_intersect(const float* o, const float* d, float* t0, float* t1) {
  float lo = kNearClip, hi = 1e30f;
  for (int a = 0; a < 3; ++a) {
    if (std::fabs(d[a]) < 1e-9f) {
      if (o[a] < kBoxLo || o[a] > kBoxHi) return false;
      continue;
    }
    float ta = (kBoxLo - o[a]) / d[a];
    float tb = (kBoxHi - o[a]) / d[a];
    if (ta > tb) std::swap(ta, tb);
    lo = std::max(lo, ta);
    hi = std::min(hi, tb);
  }
  if (hi <= lo) return false;
  *t0 = lo;
  *t1 = hi;
  return true;
}

float gelu_prime(float x) {
  constexpr float kInvSqrt2 = 0.70710678118654752440f;
  constexpr float kInvSqrt2Pi = 0.39894228040143267794f;
  const float cdf = 0.5f * (1.0f + std::erf(x * kInvSqrt2));
  const float pdf = kInvSqrt2Pi * std::exp(-0.5f * x * x);
  return cdf + x * pdf;
}

// Bilinear plane value and in-plane derivatives for one (a, b) coordinate
// pair, mirroring the plane_sample footprint (clamped coordinates have zero
// derivative).
void plane_value_grad(const float* planes, int plane, int P, int C, float a, float b,
                      float* value, float* da, float* db) {
  const float s = 0.5f * float(P - 1);
  const bool ca = a < -1.0f || a > 1.0f;
  const bool cb = b < -1.0f || b > 1.0f;
  float u = std::clamp((a + 1.0f) * s, 0.0f, float(P - 1));
  float v = std::clamp((b + 1.0f) * s, 0.0f, float(P - 1));
  const int x0 = std::min(int(u), P - 2);
  const int y0 = std::min(int(v), P - 2);
  const float fx = u - float(x0);
  const float fy = v - float(y0);
  const float* f00 = planes + size_t(plane * P * P + y0 * P + x0) * C;
  const float* f10 = f00 + C;
  const float* f01 = f00 + size_t(P) * C;
  const float* f11 = f01 + C;
  for (int c = 0; c < C; ++c) {
    value[c] += (1 - fx) * (1 - fy) * f00[c] + fx * (1 - fy) * f10[c] + (1 - fx) * fy * f01[c] +
                fx * fy * f11[c];
    da[c] = ca ? 0.0f : s * ((1 - fy) * (f10[c] - f00[c]) + fy * (f11[c] - f01[c]));
    db[c] = cb ? 0.0f : s * ((1 - fx) * (f01[c] - f00[c]) + fx * (f11[c] - f10[c]));
  }
}

Tensor head2(const gradcore::Linear& l1, const gradcore::Linear& l2, const Tensor& feats) {
  return l2(gelu(l1(feats)));
}

}  // namespace

// ----------------------------------------------------------------------------
// model
// ----------------------------------------------------------------------------

ReconModel::ReconModel(const ReconConfig& cfg) : cfg_(cfg) {
  if (cfg.plane_res < 2 || cfg.plane_patch < 1 || cfg.plane_res % cfg.plane_patch != 0)
    throw std::invalid_argument("ReconModel: plane_res must be a multiple of plane_patch");
  if (cfg.image_res < 1 || cfg.image_patch < 1 || cfg.image_res % cfg.image_patch != 0)
    throw std::invalid_argument("ReconModel: image_res must be a multiple of image_patch");
  if (cfg.dim < 1 || cfg.blocks < 1 || cfg.plane_channels < 1 || cfg.head_hidden < 1)
    throw std::invalid_argument("ReconModel: dims must be positive");
  if (!(cfg.beta_init > 0.0f)) throw std::invalid_argument("ReconModel: beta_init must be > 0");
  beta_ = cfg.beta_init;

  gradcore::Rng rng(cfg.seed);
  const int tpv = (cfg.plane_res / cfg.plane_patch) * (cfg.plane_res / cfg.plane_patch);
  const int ipv = (cfg.image_res / cfg.image_patch) * (cfg.image_res / cfg.image_patch);
  tokens_ = params_.create("tokens", {3 * tpv, cfg.dim}, rng, 0.02f);
  img_pos_ = params_.create("img_pos", {ipv, cfg.dim}, rng, 0.02f);
  img_embed_ = gradcore::Linear(params_, "img_embed", cfg.image_patch * cfg.image_patch * 6,
                                cfg.dim, rng);
  pose_embed_ = gradcore::Linear(params_, "pose_embed", 12, cfg.dim, rng);
  for (int i = 0; i < cfg.blocks; ++i)
    blocks_.emplace_back(params_, "block" + std::to_string(i), cfg.dim, cfg.dim * 2, true, rng);
  out_proj_ = gradcore::Linear(params_, "out_proj", cfg.dim,
                               cfg.plane_patch * cfg.plane_patch * cfg.plane_channels, rng);
  const int C = cfg.plane_channels, H = cfg.head_hidden;
  sdf1_ = gradcore::Linear(params_, "sdf1", C, H, rng);
  sdf2_ = gradcore::Linear(params_, "sdf2", H, 1, rng);
  alb1_ = gradcore::Linear(params_, "alb1", C, H, rng);
  alb2_ = gradcore::Linear(params_, "alb2", H, 3, rng);
  mat1_ = gradcore::Linear(params_, "mat1", C, H, rng);
  mat2_ = gradcore::Linear(params_, "mat2", H, 2, rng);
  sdf2_.b.values()[0] = 0.25f;  // start as an empty field (positive = outside)
}

void ReconModel::set_beta(float b) {
  if (!(b > 0.0f)) throw std::invalid_argument("set_beta: beta must be > 0");
  beta_ = b;
}

TriplaneField ReconModel::encode(const std::vector<ReconView>& inputs) const {
  if (inputs.empty()) throw std::invalid_argument("encode: zero input views");
  const int R = cfg_.image_res;
  const int V = int(inputs.size());
  for (const auto& view : inputs) {
    if (view.img.res != R) throw std::invalid_argument("encode: view resolution mismatch");
    if (int(view.img.rgb.size()) != R * R * 3 || int(view.img.normal.size()) != R * R * 3)
      throw std::invalid_argument("encode: view missing rgb/normal channels");
  }

  std::vector<float> rows(size_t(V) * R * R * 6);
  for (int v = 0; v < V; ++v) {
    const auto& img = inputs[size_t(v)].img;
    for (int px = 0; px < R * R; ++px) {
      float* o = rows.data() + (size_t(v) * R * R + size_t(px)) * 6;
      for (int c = 0; c < 3; ++c) {
        o[c] = img.rgb[size_t(px) * 3 + size_t(c)];
        o[3 + c] = img.normal[size_t(px) * 3 + size_t(c)];
      }
    }
  }
  Tensor patches = gradcore::patchify(Tensor::from({V * R * R, 6}, std::move(rows)), V, R,
                                      cfg_.image_patch);
  Tensor ctx = img_embed_(patches);

  std::vector<float> pf(size_t(V) * 12);
  for (int v = 0; v < V; ++v) {
    const auto f = camgeom::pose_features(inputs[size_t(v)].pose);
    std::copy(f.begin(), f.end(), pf.begin() + size_t(v) * 12);
  }
  const int tpv_img = (R / cfg_.image_patch) * (R / cfg_.image_patch);
  Tensor pose_tok = gradcore::repeat_interleave_rows(pose_embed_(Tensor::from({V, 12}, std::move(pf))),
                                                     tpv_img);
  // Patch-position embedding, tiled across views; without it the context is
  // an unordered bag of patches and geometry cannot localize.
  std::vector<int> tile(size_t(V) * size_t(tpv_img));
  for (int v = 0; v < V; ++v)
    for (int p = 0; p < tpv_img; ++p) tile[size_t(v) * size_t(tpv_img) + size_t(p)] = p;
  ctx = gradcore::add(ctx, gradcore::add(pose_tok, gradcore::gather_rows(img_pos_, tile)));

  Tensor x = tokens_;
  for (const auto& blk : blocks_) x = blk(x, &ctx);
  x = gradcore::layer_norm_rows(x);
  Tensor planes = gradcore::unpatchify(out_proj_(x), 3, cfg_.plane_res, cfg_.plane_patch);

  TriplaneField field;
  field.planes = planes;
  field.P = cfg_.plane_res;
  field.C = cfg_.plane_channels;
  field.sdf1 = sdf1_;
  field.sdf2 = sdf2_;
  field.alb1 = alb1_;
  field.alb2 = alb2_;
  field.mat1 = mat1_;
  field.mat2 = mat2_;
  field.beta = beta_;
  return field;
}

// ----------------------------------------------------------------------------
// field queries
// ----------------------------------------------------------------------------

FieldSample query_field(const TriplaneField& field, const std::array<float, 3>& p) {
  gradcore::NoGradGuard ng;
  int clamped = 0;
  Tensor feats = gradcore::plane_sample(field.planes, {p[0], p[1], p[2]}, field.P, &clamped);
  FieldSample out;
  out.sdf = head2(field.sdf1, field.sdf2, feats).item();
  const Tensor alb = gradcore::sigmoid(head2(field.alb1, field.alb2, feats));
  const Tensor mat = gradcore::sigmoid(head2(field.mat1, field.mat2, feats));
  for (int c = 0; c < 3; ++c) out.albedo[size_t(c)] = alb.values()[size_t(c)];
  out.roughness = mat.values()[0];
  out.metallic = mat.values()[1];
  out.clamped = clamped > 0;
  return out;
}

std::vector<std::array<float, 3>> field_sdf_gradient(
    const TriplaneField& field, const std::vector<std::array<float, 3>>& points) {
  const int P = field.P, C = field.C;
  const int H = field.sdf1.b.dim(0);
  const float* planes = field.planes.data();
  const float* w1 = field.sdf1.w.data();  // [C, H]
  const float* b1 = field.sdf1.b.data();
  const float* w2 = field.sdf2.w.data();  // [H, 1]

  const size_t nc = static_cast<size_t>(C);
  std::vector<float> feat(nc), da(nc), db(nc);
  std::vector<float> gx(nc), gy(nc), gz(nc), dsdf(nc);
  std::vector<float> pre(static_cast<size_t>(H));
  std::vector<std::array<float, 3>> out(points.size());

  for (size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    std::fill(feat.begin(), feat.end(), 0.0f);
    plane_value_grad(planes, 0, P, C, p[0], p[1], feat.data(), da.data(), db.data());
    for (int c = 0; c < C; ++c) gx[size_t(c)] = da[size_t(c)], gy[size_t(c)] = db[size_t(c)];
    plane_value_grad(planes, 1, P, C, p[0], p[2], feat.data(), da.data(), db.data());
    for (int c = 0; c < C; ++c) gx[size_t(c)] += da[size_t(c)], gz[size_t(c)] = db[size_t(c)];
    plane_value_grad(planes, 2, P, C, p[1], p[2], feat.data(), da.data(), db.data());
    for (int c = 0; c < C; ++c) gy[size_t(c)] += da[size_t(c)], gz[size_t(c)] += db[size_t(c)];

    for (int h = 0; h < H; ++h) {
      float acc = b1[h];
      for (int c = 0; c < C; ++c) acc += feat[size_t(c)] * w1[size_t(c) * H + h];
      pre[size_t(h)] = acc;
    }
    for (int c = 0; c < C; ++c) {
      float acc = 0.0f;
      for (int h = 0; h < H; ++h)
        acc += w1[size_t(c) * H + h] * gelu_prime(pre[size_t(h)]) * w2[h];
      dsdf[size_t(c)] = acc;
    }
    float g[3] = {0, 0, 0};
    for (int c = 0; c < C; ++c) {
      g[0] += dsdf[size_t(c)] * gx[size_t(c)];
      g[1] += dsdf[size_t(c)] * gy[size_t(c)];
      g[2] += dsdf[size_t(c)] * gz[size_t(c)];
    }
    out[i] = {g[0], g[1], g[2]};
  }
  return out;
}

FieldQuery field_query(const TriplaneField& field) {
  FieldQuery q;
  q.beta = field.beta;
  q.sdf = [field](const std::vector<float>& pts) {
    return head2(field.sdf1, field.sdf2, gradcore::plane_sample(field.planes, pts, field.P));
  };
  q.albedo = [field](const std::vector<float>& pts) {
    return gradcore::sigmoid(
        head2(field.alb1, field.alb2, gradcore::plane_sample(field.planes, pts, field.P)));
  };
  q.material = [field](const std::vector<float>& pts) {
    return gradcore::sigmoid(
        head2(field.mat1, field.mat2, gradcore::plane_sample(field.planes, pts, field.P)));
  };
  return q;
}

FieldQuery sphere_query(float radius, const std::array<float, 3>& albedo, float roughness,
                        float metallic, float beta) {
  FieldQuery q;
  q.beta = beta;
  q.sdf = [radius](const std::vector<float>& pts) {
    const int n = int(pts.size() / 3);
    std::vector<float> s(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      const float* p = pts.data() + size_t(i) * 3;
      s[size_t(i)] = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]) - radius;
    }
    return Tensor::from({n, 1}, std::move(s));
  };
  q.albedo = [albedo](const std::vector<float>& pts) {
    const int n = int(pts.size() / 3);
    std::vector<float> a(size_t(n) * 3);
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < 3; ++c) a[size_t(i) * 3 + size_t(c)] = albedo[size_t(c)];
    return Tensor::from({n, 3}, std::move(a));
  };
  q.material = [roughness, metallic](const std::vector<float>& pts) {
    const int n = int(pts.size() / 3);
    std::vector<float> m(size_t(n) * 2);
    for (int i = 0; i < n; ++i) {
      m[size_t(i) * 2] = roughness;
      m[size_t(i) * 2 + 1] = metallic;
    }
    return Tensor::from({n, 2}, std::move(m));
  };
  return q;
}

// ----------------------------------------------------------------------------
// volume rendering
// ----------------------------------------------------------------------------

PredStack volume_render(const FieldQuery& field, const camgeom::CameraPose& pose, int resolution,
                        const RenderOptions& opt, const std::vector<int>* pixels,
                        const std::vector<float>* normal_rows) {
  if (!(field.beta > 0.0f)) throw std::invalid_argument("volume_render: beta must be > 0");
  if (opt.n_samples < 16) throw std::invalid_argument("volume_render: n_samples must be >= 16");
  if (resolution < 1) throw std::invalid_argument("volume_render: resolution must be positive");

  const camgeom::RayField rays = camgeom::generate_rays(pose, resolution);
  PredStack out;
  out.res = resolution;
  if (pixels) {
    out.pixels = *pixels;
    for (int px : out.pixels)
      if (px < 0 || px >= resolution * resolution)
        throw std::invalid_argument("volume_render: pixel index out of range");
  } else {
    out.pixels.resize(size_t(resolution) * resolution);
    for (size_t i = 0; i < out.pixels.size(); ++i) out.pixels[i] = int(i);
  }
  const int R = int(out.pixels.size());
  if (normal_rows && int(normal_rows->size()) != R)
    throw std::invalid_argument("volume_render: normal_rows size mismatch");

  const int S = opt.n_samples;
  std::vector<int> hit_pos(size_t(R), -1);
  std::vector<float> t0s, t1s;
  t0s.reserve(size_t(R));
  t1s.reserve(size_t(R));
  int H = 0;
  for (int r = 0; r < R; ++r) {
    const float* o = rays.origins.data() + size_t(out.pixels[size_t(r)]) * 3;
    const float* d = rays.directions.data() + size_t(out.pixels[size_t(r)]) * 3;
    float t0 = 0, t1 = 0;
    if (!slab_intersect(o, d, &t0, &t1)) continue;
    hit_pos[size_t(r)] = H++;
    t0s.push_back(t0);
    t1s.push_back(t1);
  }

  if (H == 0) {
    out.mask = Tensor::zeros({R, 1});
    out.depth = Tensor::zeros({R, 1});
    out.albedo = Tensor::zeros({R, 3});
    out.material = Tensor::zeros({R, 2});
    out.normal_cam = Tensor::zeros({R, 3});
    return out;
  }

  gradcore::Rng rng(opt.seed);
  std::vector<float> points(size_t(H) * S * 3);
  std::vector<float> deltas(size_t(H) * S);
  std::vector<float> tvals(size_t(H) * S);
  {
    int h = 0;
    for (int r = 0; r < R; ++r) {
      if (hit_pos[size_t(r)] < 0) continue;
      const float* o = rays.origins.data() + size_t(out.pixels[size_t(r)]) * 3;
      const float* d = rays.directions.data() + size_t(out.pixels[size_t(r)]) * 3;
      const float t0 = t0s[size_t(h)], span = t1s[size_t(h)] - t0s[size_t(h)];
      const float delta = span / float(S);
      for (int j = 0; j < S; ++j) {
        const float u = opt.jitter ? rng.uniform() : 0.5f;
        const float t = t0 + (float(j) + u) * delta;
        const size_t row = size_t(h) * S + size_t(j);
        tvals[row] = t;
        deltas[row] = delta;
        for (int a = 0; a < 3; ++a) points[row * 3 + size_t(a)] = o[a] + t * d[a];
      }
      ++h;
    }
  }

  Tensor sigma = gradcore::laplace_density(field.sdf(points), field.beta);
  Tensor w = gradcore::composite_weights(sigma, deltas, S);
  Tensor mask_h = gradcore::segment_sum(w, S);
  Tensor depth_h = gradcore::segment_sum(gradcore::mul(w, Tensor::from({H * S, 1}, tvals)), S);
  Tensor albedo_h = gradcore::segment_sum(gradcore::mul_colvec(field.albedo(points), w), S);
  Tensor material_h = gradcore::segment_sum(gradcore::mul_colvec(field.material(points), w), S);

  // Scatter hit rows back into the full batch through a zero pad row.
  std::vector<int> scatter(static_cast<size_t>(R));
  for (int r = 0; r < R; ++r)
    scatter[size_t(r)] = hit_pos[size_t(r)] >= 0 ? hit_pos[size_t(r)] : H;
  auto pad_gather = [&](const Tensor& t, int width) {
    return gradcore::gather_rows(gradcore::concat_rows({t, Tensor::zeros({1, width})}), scatter);
  };
  out.mask = pad_gather(mask_h, 1);
  out.depth = pad_gather(depth_h, 1);
  out.albedo = pad_gather(albedo_h, 3);
  out.material = pad_gather(material_h, 2);

  // Normals: central differences of the sdf at the expected surface point of
  // selected rays only; the point itself is a stop-gradient.
  std::vector<int> sel;
  for (int r = 0; r < R; ++r) {
    const int hp = hit_pos[size_t(r)];
    if (hp < 0) continue;
    if (normal_rows ? ((*normal_rows)[size_t(r)] > 0.0f)
                    : (mask_h.values()[size_t(hp)] > opt.mask_floor))
      sel.push_back(r);
  }
  const int Rn = int(sel.size());
  if (Rn == 0) {
    out.normal_cam = Tensor::zeros({R, 3});
    return out;
  }

  const float h_eps = opt.normal_eps;
  std::vector<float> npts(size_t(Rn) * 6 * 3);
  for (int i = 0; i < Rn; ++i) {
    const int r = sel[size_t(i)];
    const int hp = hit_pos[size_t(r)];
    const float* o = rays.origins.data() + size_t(out.pixels[size_t(r)]) * 3;
    const float* d = rays.directions.data() + size_t(out.pixels[size_t(r)]) * 3;
    const float m = std::max(mask_h.values()[size_t(hp)], 1e-6f);
    const float tbar = std::clamp(depth_h.values()[size_t(hp)] / m, t0s[size_t(hp)], t1s[size_t(hp)]);
    float xs[3];
    for (int a = 0; a < 3; ++a) xs[a] = o[a] + tbar * d[a];
    for (int k = 0; k < 6; ++k) {
      float* q = npts.data() + (size_t(i) * 6 + size_t(k)) * 3;
      for (int a = 0; a < 3; ++a) q[a] = xs[a];
      q[k / 2] += (k % 2 == 0) ? h_eps : -h_eps;
    }
  }
  Tensor s6 = field.sdf(npts);
  std::vector<int> ip(static_cast<size_t>(Rn)), im(static_cast<size_t>(Rn));
  std::vector<Tensor> comps;
  for (int axis = 0; axis < 3; ++axis) {
    for (int i = 0; i < Rn; ++i) {
      ip[size_t(i)] = i * 6 + axis * 2;
      im[size_t(i)] = i * 6 + axis * 2 + 1;
    }
    comps.push_back(gradcore::mul_scalar(
        gradcore::sub(gradcore::gather_rows(s6, ip), gradcore::gather_rows(s6, im)),
        0.5f / h_eps));
  }
  Tensor n_world = gradcore::transpose(gradcore::reshape(gradcore::concat_rows(comps), {3, Rn}));
  const auto& rot = pose.rotation;
  Tensor rot_t = Tensor::from({3, 3}, {rot[0], rot[3], rot[6], rot[1], rot[4], rot[7], rot[2],
                                       rot[5], rot[8]});
  Tensor n_cam = gradcore::matmul(n_world, rot_t);

  std::vector<int> nscatter(size_t(R), Rn);
  for (int i = 0; i < Rn; ++i) nscatter[size_t(sel[size_t(i)])] = i;
  out.normal_cam =
      gradcore::gather_rows(gradcore::concat_rows({n_cam, Tensor::zeros({1, 3})}), nscatter);
  return out;
}

// ----------------------------------------------------------------------------
// loss
// ----------------------------------------------------------------------------

LossBreakdown recon_loss(const PredStack& pred, const render::ChannelImage& target,
                         const LossWeights& weights) {
  if (pred.res != target.res) throw std::invalid_argument("recon_loss: resolution mismatch");
  const int R = int(pred.pixels.size());
  if (pred.mask.dim(0) != R || pred.normal_cam.dim(0) != R)
    throw std::invalid_argument("recon_loss: prediction row mismatch");
  const size_t n = size_t(target.res) * size_t(target.res);
  if (target.mask.size() != n || target.edge.size() != n)
    throw std::invalid_argument("recon_loss: target channels incomplete");

  const size_t nr = static_cast<size_t>(R);
  std::vector<float> t_mask(nr), w_all(nr), w_int(nr), w_nrm(nr);
  std::vector<float> t_depth(nr), t_alb(nr * 3), t_mat(nr * 2), t_nrm(nr * 3);
  const float* pn = pred.normal_cam.data();
  for (int r = 0; r < R; ++r) {
    const size_t px = size_t(pred.pixels[size_t(r)]);
    const bool edge = target.edge[px] != 0;
    const float tm = target.mask[px];
    t_mask[size_t(r)] = tm;
    w_all[size_t(r)] = edge ? 0.0f : 1.0f;
    const bool interior = !edge && tm > 0.5f;
    w_int[size_t(r)] = interior ? 1.0f : 0.0f;
    t_depth[size_t(r)] = target.depth[px];
    for (int c = 0; c < 3; ++c) t_alb[size_t(r) * 3 + size_t(c)] = target.albedo[px * 3 + size_t(c)];
    t_mat[size_t(r) * 2] = target.roughness[px];
    t_mat[size_t(r) * 2 + 1] = target.metallic[px];
    float tn[3] = {target.normal[px * 3], target.normal[px * 3 + 1], target.normal[px * 3 + 2]};
    const float tl = std::sqrt(tn[0] * tn[0] + tn[1] * tn[1] + tn[2] * tn[2]);
    const float* g = pn + size_t(r) * 3;
    const bool has_pred = g[0] != 0.0f || g[1] != 0.0f || g[2] != 0.0f;
    if (interior && tl > 1e-6f && has_pred) {
      w_nrm[size_t(r)] = 1.0f;
      for (int c = 0; c < 3; ++c) t_nrm[size_t(r) * 3 + size_t(c)] = tn[c] / tl;
    }
  }

  LossBreakdown lb;
  Tensor mask_l = gradcore::bce_weighted(pred.mask, t_mask, w_all);
  Tensor depth_l = gradcore::l1_weighted(pred.depth, t_depth, w_int);
  Tensor albedo_l = gradcore::l1_weighted(pred.albedo, t_alb, w_int);
  Tensor material_l = gradcore::l1_weighted(pred.material, t_mat, w_int);
  Tensor normal_l = gradcore::one_minus_cos_rows(pred.normal_cam, t_nrm, w_nrm);
  lb.mask = mask_l.item();
  lb.depth = depth_l.item();
  lb.albedo = albedo_l.item();
  lb.material = material_l.item();
  lb.normal = normal_l.item();
  lb.total = gradcore::add(
      gradcore::add(gradcore::add(gradcore::mul_scalar(mask_l, weights.mask),
                                  gradcore::mul_scalar(depth_l, weights.depth)),
                    gradcore::add(gradcore::mul_scalar(albedo_l, weights.albedo),
                                  gradcore::mul_scalar(material_l, weights.material))),
      gradcore::mul_scalar(normal_l, weights.normal));
  return lb;
}

}  // namespace forma::reconstruct
