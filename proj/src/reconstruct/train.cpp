// Copyright Contributors to the Forma Project
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "forma/gradcore/optim.hpp"
#include "forma/promptgen/prompt.hpp"
#include "forma/reconstruct/recon.hpp"

namespace fs = std::filesystem;

namespace forma::reconstruct {

namespace {

using gradcore::Tensor;

// Row-wise Euclidean norm of a [n,3] tensor -> [n,1].
Tensor row_norm3(const Tensor& v) {
  Tensor s = gradcore::matmul(gradcore::square(v), Tensor::full({3, 1}, 1.0f));
  return gradcore::sqrt_(gradcore::add_scalar(s, 1e-12f));
}

// Mean (|grad sdf| - 1)^2 at random points in the field's box, using the same
// six-tap stencil the renderer uses for normals. Without this the SDF drifts
// away from unit slope and the annealed beta loses its world-space meaning.
Tensor eikonal_term(const FieldQuery& fq, gradcore::Rng& rng, int n_pts, float h) {
  std::vector<float> taps(size_t(n_pts) * 18);
  for (int i = 0; i < n_pts; ++i) {
    float p[3];
    for (float& c : p) c = rng.uniform(-1.1f, 1.1f);
    for (int k = 0; k < 6; ++k) {
      float* q = taps.data() + (size_t(i) * 6 + size_t(k)) * 3;
      for (int a = 0; a < 3; ++a) q[a] = p[a];
      q[k / 2] += (k % 2 == 0) ? h : -h;
    }
  }
  Tensor s6 = fq.sdf(taps);
  std::vector<int> ip(static_cast<size_t>(n_pts)), im(static_cast<size_t>(n_pts));
  std::vector<Tensor> comps;
  for (int axis = 0; axis < 3; ++axis) {
    for (int i = 0; i < n_pts; ++i) {
      ip[size_t(i)] = i * 6 + axis * 2;
      im[size_t(i)] = i * 6 + axis * 2 + 1;
    }
    comps.push_back(gradcore::mul_scalar(
        gradcore::sub(gradcore::gather_rows(s6, ip), gradcore::gather_rows(s6, im)), 0.5f / h));
  }
  Tensor g = gradcore::transpose(gradcore::reshape(gradcore::concat_rows(comps), {3, n_pts}));
  const std::vector<float> ones_b(static_cast<size_t>(n_pts), 1.0f);
  return gradcore::mse_weighted(row_norm3(g), ones_b, ones_b);
}

// Same penalty on the surface gradients the renderer already produced; the
// camera rotation preserves their length. Rows without a computed normal are
// exact zeros and get weight 0.
Tensor eikonal_surface(const PredStack& pred) {
  const size_t n = pred.pixels.size();
  std::vector<float> w(n, 0.0f), ones_b(n, 1.0f);
  const float* g = pred.normal_cam.data();
  bool any = false;
  for (size_t r = 0; r < n; ++r) {
    if (g[r * 3] != 0.0f || g[r * 3 + 1] != 0.0f || g[r * 3 + 2] != 0.0f) {
      w[r] = 1.0f;
      any = true;
    }
  }
  if (!any) return Tensor::scalar(0.0f);
  return gradcore::mse_weighted(row_norm3(pred.normal_cam), ones_b, w);
}

}  // namespace

ReconModel train_recon(const std::vector<ReconAsset>& dataset, const ReconConfig& cfg,
                       const TrainReconOptions& opt) {
  if (dataset.empty()) throw std::invalid_argument("train_recon: empty dataset");
  for (const auto& asset : dataset)
    if (asset.views.empty()) throw std::invalid_argument("train_recon: asset without views");
  if (opt.steps < 1 || opt.rays_per_step < 1)
    throw std::invalid_argument("train_recon: steps and rays_per_step must be positive");

  const int res = dataset[0].views[0].img.res;
  ReconConfig c2 = cfg;
  c2.image_res = res;
  ReconModel model(c2);
  gradcore::Adam adam(opt.lr);
  gradcore::Rng rng(opt.seed);

  // Anneal beta down to half a pixel's world footprint at the camera radius,
  // aligning SDF uncertainty with what one rendered pixel can resolve.
  const float h_pix =
      2.0f * opt.radius * std::tan(camgeom::deg2rad(opt.fov_y_deg) * 0.5f) / float(res);
  const float b0 = opt.beta_start;
  const float b1 = opt.beta_end > 0.0f ? opt.beta_end : 0.5f * h_pix;
  if (!(b0 > 0.0f) || !(b1 > 0.0f))
    throw std::invalid_argument("train_recon: beta schedule must stay positive");

  std::vector<std::vector<ReconView>> inputs(dataset.size());
  std::vector<std::vector<std::vector<int>>> interior(dataset.size());
  for (size_t a = 0; a < dataset.size(); ++a) {
    const auto& views = dataset[a].views;
    const size_t n_in = std::min(size_t(std::max(opt.n_input_views, 1)), views.size());
    inputs[a].assign(views.begin(), views.begin() + long(n_in));
    interior[a].resize(views.size());
    for (size_t v = 0; v < views.size(); ++v) {
      const auto& img = views[v].img;
      for (int px = 0; px < res * res; ++px)
        if (img.mask[size_t(px)] > 0.5f && img.edge[size_t(px)] == 0)
          interior[a][v].push_back(px);
    }
  }

  std::ofstream csv;
  if (!opt.csv_path.empty()) {
    csv.open(opt.csv_path, std::ios::trunc);
    if (!csv) throw std::runtime_error("train_recon: cannot write " + opt.csv_path);
    csv << "step,total,mask,depth,albedo,material,normal,beta\n";
  }

  for (int s = 0; s < opt.steps; ++s) {
    const double frac = opt.steps > 1 ? double(s) / double(opt.steps - 1) : 0.0;
    model.set_beta(float(double(b0) * std::pow(double(b1) / double(b0), frac)));
    float lr_s = opt.lr;
    if (opt.lr_end > 0.0f)
      lr_s = opt.lr_end + (opt.lr - opt.lr_end) * 0.5f * (1.0f + std::cos(float(frac) * camgeom::kPi));
    const int warmup = std::min(opt.lr_warmup, opt.steps / 10);
    if (warmup > 0 && s < warmup) lr_s *= float(s + 1) / float(warmup);
    adam.lr = lr_s;

    const size_t ai = size_t(rng.uniform_int(int(dataset.size())));
    const auto& views = dataset[ai].views;
    const size_t vi = size_t(rng.uniform_int(int(views.size())));
    const ReconView& tv = views[vi];

    // Half the ray batch from the silhouette interior, half uniform.
    std::vector<int> pix(static_cast<size_t>(opt.rays_per_step));
    const auto& ipx = interior[ai][vi];
    for (int i = 0; i < opt.rays_per_step; ++i) {
      if (2 * i < opt.rays_per_step && !ipx.empty())
        pix[size_t(i)] = ipx[size_t(rng.uniform_int(int(ipx.size())))];
      else
        pix[size_t(i)] = rng.uniform_int(res * res);
    }
    std::vector<float> nrm_w(pix.size());
    for (size_t i = 0; i < pix.size(); ++i) {
      const size_t px = size_t(pix[i]);
      nrm_w[i] = (tv.img.mask[px] > 0.5f && tv.img.edge[px] == 0) ? 1.0f : 0.0f;
    }

    RenderOptions ropt;
    ropt.n_samples = opt.n_samples;
    ropt.jitter = true;
    ropt.seed = rng.next_u64();

    TriplaneField field = model.encode(inputs[ai]);
    const FieldQuery fq = field_query(field);
    PredStack pred = volume_render(fq, tv.pose, res, ropt, &pix, &nrm_w);
    LossBreakdown lb = recon_loss(pred, tv.img);
    gradcore::Tensor total = lb.total;
    if (opt.eikonal_weight > 0.0f && opt.eikonal_points > 0) {
      gradcore::Tensor eik =
          gradcore::add(eikonal_term(fq, rng, opt.eikonal_points, ropt.normal_eps),
                        eikonal_surface(pred));
      total = gradcore::add(total, gradcore::mul_scalar(eik, opt.eikonal_weight));
    }
    gradcore::backward(total);
    if (opt.grad_clip > 0.0f) gradcore::clip_grad_norm(model.params(), opt.grad_clip);
    adam.step(model.params());
    gradcore::ema_update(model.params(), opt.ema_decay);
    model.params().zero_grads();
    model.params().step_count = s + 1;

    if (csv.is_open())
      csv << s << ',' << total.item() << ',' << lb.mask << ',' << lb.depth << ',' << lb.albedo
          << ',' << lb.material << ',' << lb.normal << ',' << model.beta() << '\n';
  }
  return model;
}

ReconAsset load_recon_asset(const std::string& asset_dir) {
  ReconAsset asset;
  {
    std::ifstream meta(fs::path(asset_dir) / "asset.json", std::ios::binary);
    if (!meta) throw std::runtime_error("load_recon_asset: missing asset.json in " + asset_dir);
    std::string line;
    std::getline(meta, line);
    const promptgen::AssetRecord rec = promptgen::parse_manifest_line(line);
    asset.prompt = rec.prompt;
    asset.seed = rec.seed;
  }
  for (int k = 0;; ++k) {
    char name[16];
    std::snprintf(name, sizeof name, "view_%02d", k);
    const std::string stem = (fs::path(asset_dir) / name).string();
    if (!fs::exists(stem + "_pose.txt")) break;
    ReconView view;
    view.pose = render::load_channel_pose(stem);
    view.img = render::load_channels(stem);
    asset.views.push_back(std::move(view));
  }
  if (asset.views.empty())
    throw std::runtime_error("load_recon_asset: no view stacks in " + asset_dir);
  return asset;
}

std::vector<ReconAsset> load_recon_dataset(const std::string& dataset_dir) {
  std::vector<std::string> dirs;
  for (const auto& entry : fs::directory_iterator(dataset_dir))
    if (entry.is_directory() && entry.path().filename().string().rfind("asset_", 0) == 0)
      dirs.push_back(entry.path().string());
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty())
    throw std::runtime_error("load_recon_dataset: no asset_* directories in " + dataset_dir);
  std::vector<ReconAsset> out;
  out.reserve(dirs.size());
  for (const auto& dir : dirs) out.push_back(load_recon_asset(dir));
  return out;
}

render::ChannelImage render_stack(const TriplaneField& field, const camgeom::CameraPose& pose,
                                  int resolution, const RenderOptions& opt) {
  gradcore::NoGradGuard ng;
  RenderOptions o2 = opt;
  o2.jitter = false;
  const FieldQuery fq = field_query(field);

  render::ChannelImage img;
  img.res = resolution;
  const size_t n = size_t(resolution) * size_t(resolution);
  img.rgb.assign(n * 3, 0.0f);
  img.albedo.assign(n * 3, 0.0f);
  img.normal.assign(n * 3, 0.0f);
  img.depth.assign(n, 0.0f);
  img.mask.assign(n, 0.0f);
  img.roughness.assign(n, 0.0f);
  img.metallic.assign(n, 0.0f);
  img.edge.assign(n, 0);

  constexpr int kChunk = 2048;
  std::vector<int> pix;
  for (int start = 0; start < int(n); start += kChunk) {
    const int stop = std::min(start + kChunk, int(n));
    pix.clear();
    for (int p = start; p < stop; ++p) pix.push_back(p);
    const PredStack pred = volume_render(fq, pose, resolution, o2, &pix, nullptr);
    for (size_t r = 0; r < pix.size(); ++r) {
      const size_t px = size_t(pix[r]);
      const float m = std::clamp(pred.mask.values()[r], 0.0f, 1.0f);
      img.mask[px] = m;
      if (m <= 0.5f) continue;
      img.depth[px] = pred.depth.values()[r] / std::max(m, 1e-6f);
      for (int c = 0; c < 3; ++c) {
        const float a = std::clamp(pred.albedo.values()[r * 3 + size_t(c)], 0.0f, 1.0f);
        img.albedo[px * 3 + size_t(c)] = a;
        img.rgb[px * 3 + size_t(c)] = a;
      }
      img.roughness[px] = std::clamp(pred.material.values()[r * 2], 0.0f, 1.0f);
      img.metallic[px] = std::clamp(pred.material.values()[r * 2 + 1], 0.0f, 1.0f);
      const float* g = pred.normal_cam.data() + r * 3;
      const float gl = std::sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2]);
      if (gl > 1e-8f)
        for (int c = 0; c < 3; ++c) img.normal[px * 3 + size_t(c)] = g[size_t(c)] / gl;
    }
  }
  return img;
}

}  // namespace forma::reconstruct
