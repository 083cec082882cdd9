// Copyright Contributors to the Forma Project
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "forma/gradcore/optim.hpp"
#include "forma/mvdiff/mvdiff.hpp"
#include "forma/promptgen/prompt.hpp"

namespace forma::mvdiff {

namespace {

using gradcore::Tensor;

// Per-asset tensors shared by both training loops.
struct AssetData {
  std::vector<std::vector<float>> rgb;     // per view, [R*R*C] in [-1,1]
  std::vector<std::vector<float>> normal;  // per view, [R*R*C] (camera frame)
  std::vector<std::array<float, 12>> pose;
  std::vector<std::vector<float>> weight;  // per view, [R*R] mask/bg weights
  std::vector<float> prompt;
};

std::vector<AssetData> prepare(const std::vector<reconstruct::ReconAsset>& dataset, int res,
                               float bg_weight) {
  std::vector<AssetData> out;
  out.reserve(dataset.size());
  for (const auto& asset : dataset) {
    if (asset.views.empty()) throw std::invalid_argument("train_mvdiff: asset without views");
    AssetData ad;
    ad.prompt = promptgen::encode_prompt(promptgen::parse_prompt(asset.prompt));
    for (const auto& view : asset.views) {
      const auto& img = view.img;
      if (img.res != res) throw std::invalid_argument("train_mvdiff: view resolution mismatch");
      const size_t n = size_t(res) * size_t(res);
      std::vector<float> rgb(n * 3), nrm(n * 3), w(n);
      for (size_t px = 0; px < n; ++px) {
        for (int c = 0; c < 3; ++c) {
          rgb[px * 3 + size_t(c)] = img.rgb[px * 3 + size_t(c)] * 2.0f - 1.0f;
          nrm[px * 3 + size_t(c)] = img.normal[px * 3 + size_t(c)];
        }
        w[px] = img.mask[px] > 0.5f ? 1.0f : bg_weight;
      }
      ad.rgb.push_back(std::move(rgb));
      ad.normal.push_back(std::move(nrm));
      ad.weight.push_back(std::move(w));
      ad.pose.push_back(camgeom::pose_features(view.pose));
    }
    out.push_back(std::move(ad));
  }
  return out;
}

// Draw V view indices without replacement (partial Fisher-Yates).
std::vector<int> draw_views(gradcore::Rng& rng, int n_views, int want) {
  std::vector<int> idx(static_cast<size_t>(n_views));
  std::iota(idx.begin(), idx.end(), 0);
  const int take = std::min(want, n_views);
  for (int i = 0; i < take; ++i)
    std::swap(idx[size_t(i)], idx[size_t(i + rng.uniform_int(n_views - i))]);
  idx.resize(size_t(take));
  return idx;
}

struct StepBatch {
  MVBatch batch;
  std::vector<float> x0;       // clean target rows
  std::vector<float> row_w;    // per-pixel-row weights
  std::vector<float> control;  // clean rgb rows (controlnet path)
};

StepBatch make_step(const AssetData& ad, const std::vector<int>& views, int res, int timestep,
                    float alpha_bar, bool normal_channel, gradcore::Rng& rng) {
  const size_t n = size_t(res) * size_t(res);
  const int V = int(views.size());
  StepBatch sb;
  sb.batch.V = V;
  sb.batch.timestep = timestep;
  sb.batch.prompt = ad.prompt;
  sb.x0.reserve(size_t(V) * n * 3);
  sb.row_w.reserve(size_t(V) * n);
  sb.batch.pose_feats.reserve(size_t(V) * 12);
  for (int vi : views) {
    const auto& clean = normal_channel ? ad.normal[size_t(vi)] : ad.rgb[size_t(vi)];
    sb.x0.insert(sb.x0.end(), clean.begin(), clean.end());
    sb.row_w.insert(sb.row_w.end(), ad.weight[size_t(vi)].begin(), ad.weight[size_t(vi)].end());
    sb.batch.pose_feats.insert(sb.batch.pose_feats.end(), ad.pose[size_t(vi)].begin(),
                               ad.pose[size_t(vi)].end());
    if (normal_channel)
      sb.control.insert(sb.control.end(), ad.rgb[size_t(vi)].begin(), ad.rgb[size_t(vi)].end());
  }
  const float sa = std::sqrt(alpha_bar), sn = std::sqrt(1.0f - alpha_bar);
  sb.batch.views.resize(sb.x0.size());
  for (size_t i = 0; i < sb.x0.size(); ++i)
    sb.batch.views[i] = sa * sb.x0[i] + sn * rng.gauss();
  return sb;
}

float scheduled_lr(float lr, float lr_end, int lr_warmup, int step, int steps) {
  const double frac = steps > 1 ? double(step) / double(steps - 1) : 0.0;
  float lr_s = lr;
  if (lr_end > 0.0f)
    lr_s = lr_end + (lr - lr_end) * 0.5f * (1.0f + std::cos(float(frac) * camgeom::kPi));
  const int warmup = std::min(lr_warmup, steps / 10);
  if (warmup > 0 && step < warmup) lr_s *= float(step + 1) / float(warmup);
  return lr_s;
}

}  // namespace

MVModel train_mvdiff(const std::vector<reconstruct::ReconAsset>& dataset, const MVConfig& cfg,
                     const TrainMVOptions& opt) {
  if (dataset.empty()) throw std::invalid_argument("train_mvdiff: empty dataset");
  if (opt.view_sampling.empty())
    throw std::invalid_argument("train_mvdiff: empty view sampling distribution");
  float wsum = 0.0f;
  for (const auto& [v, w] : opt.view_sampling) {
    if (v < 1 || w < 0.0f) throw std::invalid_argument("train_mvdiff: bad view sampling entry");
    wsum += w;
  }
  if (!(wsum > 0.0f)) throw std::invalid_argument("train_mvdiff: view sampling weights sum to 0");

  MVConfig c2 = cfg;
  c2.image_res = dataset[0].views.at(0).img.res;
  MVModel model(c2);
  if (opt.steps <= 0) return model;

  const std::vector<AssetData> data = prepare(dataset, c2.image_res, opt.bg_weight);
  gradcore::Adam adam(opt.lr);
  gradcore::Rng rng(opt.seed);

  std::ofstream csv;
  if (!opt.csv_path.empty()) {
    csv.open(opt.csv_path, std::ios::trunc);
    if (!csv) throw std::runtime_error("train_mvdiff: cannot write " + opt.csv_path);
    csv << "step,loss,views,timestep\n";
  }

  for (int s = 0; s < opt.steps; ++s) {
    adam.lr = scheduled_lr(opt.lr, opt.lr_end, opt.lr_warmup, s, opt.steps);

    float pick = rng.uniform() * wsum;
    int want = opt.view_sampling.back().first;
    for (const auto& [v, w] : opt.view_sampling) {
      pick -= w;
      if (pick <= 0.0f) {
        want = v;
        break;
      }
    }
    const size_t ai = size_t(rng.uniform_int(int(data.size())));
    const AssetData& ad = data[ai];
    const std::vector<int> views = draw_views(rng, int(ad.rgb.size()), want);
    const int k = rng.uniform_int(c2.T);
    StepBatch sb = make_step(ad, views, c2.image_res, k, model.schedule().alpha_bar[size_t(k)],
                             opt.normal_channel, rng);

    Tensor pred = model.denoise(sb.batch);
    Tensor loss = gradcore::mse_weighted(pred, sb.x0, sb.row_w);
    gradcore::backward(loss);
    if (opt.grad_clip > 0.0f) gradcore::clip_grad_norm(model.params(), opt.grad_clip);
    adam.step(model.params());
    gradcore::ema_update(model.params(), opt.ema_decay);
    model.params().zero_grads();
    model.params().step_count = s + 1;

    if (csv.is_open())
      csv << s << ',' << loss.item() << ',' << views.size() << ',' << k << '\n';
  }
  model.set_trained(true);
  return model;
}

void train_normal_controlnet(MVModel& base, const std::vector<reconstruct::ReconAsset>& dataset,
                             const TrainControlOptions& opt) {
  if (!base.trained())
    throw std::invalid_argument("train_normal_controlnet: base model is not trained");
  if (dataset.empty()) throw std::invalid_argument("train_normal_controlnet: empty dataset");
  if (!base.has_control()) base.add_control_branch();

  const MVConfig& cfg = base.config();
  const std::vector<AssetData> data = prepare(dataset, cfg.image_res, opt.bg_weight);
  base.params().set_requires_grad(false);
  // Train the branch against the same base weights sampling will use.
  gradcore::EmaScope base_ema(base.params());
  gradcore::Adam adam(opt.lr);
  gradcore::Rng rng(opt.seed);

  std::ofstream csv;
  if (!opt.csv_path.empty()) {
    csv.open(opt.csv_path, std::ios::trunc);
    if (!csv) throw std::runtime_error("train_normal_controlnet: cannot write " + opt.csv_path);
    csv << "step,loss,views,timestep\n";
  }

  for (int s = 0; s < opt.steps; ++s) {
    adam.lr = scheduled_lr(opt.lr, opt.lr_end, opt.lr_warmup, s, opt.steps);
    const size_t ai = size_t(rng.uniform_int(int(data.size())));
    const AssetData& ad = data[ai];
    const std::vector<int> views = draw_views(rng, int(ad.rgb.size()), opt.views);
    const int k = rng.uniform_int(cfg.T);
    StepBatch sb = make_step(ad, views, cfg.image_res, k, base.schedule().alpha_bar[size_t(k)],
                             /*normal_channel=*/true, rng);

    Tensor pred = base.denoise(sb.batch, &sb.control);
    Tensor loss = gradcore::mse_weighted(pred, sb.x0, sb.row_w);
    gradcore::backward(loss);
    if (opt.grad_clip > 0.0f) gradcore::clip_grad_norm(base.control_params(), opt.grad_clip);
    adam.step(base.control_params());
    gradcore::ema_update(base.control_params(), opt.ema_decay);
    base.control_params().zero_grads();
    base.params().zero_grads();
    base.control_params().step_count = s + 1;

    if (csv.is_open())
      csv << s << ',' << loss.item() << ',' << views.size() << ',' << k << '\n';
  }
  base.params().set_requires_grad(true);
}

}  // namespace forma::mvdiff
