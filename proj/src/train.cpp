#include "flux/train.hpp"

#include <chrono>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "flux/rng.hpp"

namespace flux {

std::atomic<bool> stop_requested{false};

void TrainConfig::validate() const {
  if (steps < 0 || batch_size < 1)
    throw std::invalid_argument("train: invalid steps/batch size");
  if (!(k3 <= k2 && k2 <= k1))
    throw std::invalid_argument("train: counts must satisfy k3 <= k2 <= k1");
  if (k1 > k_teacher)
    throw std::invalid_argument("train: k1 must not exceed the teacher count");
  if (lambda_sd < 0)
    throw std::invalid_argument("train: lambda must be >= 0");
  if (groups < 1 || (norm_p != 1 && norm_p != 2))
    throw std::invalid_argument("train: invalid groups or norm order");
  if (warmup_frac < 0 || warmup_frac > 1)
    throw std::invalid_argument("train: warmup fraction out of [0,1]");
}

AdamW::AdamW(std::vector<Tensord> params, const TrainConfig& cfg)
    : params_(std::move(params)),
      beta1_(cfg.beta1),
      beta2_(cfg.beta2),
      eps_(cfg.adam_eps),
      wd_(cfg.weight_decay) {
  for (auto& p : params_) {
    m_.push_back(Eigen::VectorXd::Zero(p.size()));
    v_.push_back(Eigen::VectorXd::Zero(p.size()));
  }
}

void AdamW::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    const auto& g = p.grad();
    if (g.size() != p.size())
      throw std::runtime_error("AdamW: parameter has no gradient");
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
    const bool decay = p.rank() >= 2 && wd_ > 0;
    for (Index j = 0; j < p.size(); ++j) {
      double mhat = m_[i][j] / bc1;
      double vhat = v_[i][j] / bc2;
      double upd = mhat / (std::sqrt(vhat) + eps_);
      if (decay) upd += wd_ * p.value()[j];
      p.value()[j] -= lr * upd;
    }
  }
}

double cosine_lr(int step, int total_steps, double lr_max, double warmup_frac) {
  if (total_steps <= 0) return lr_max;
  const double warm = warmup_frac * total_steps;
  if (warm > 0 && step < warm) return lr_max * (step + 1) / warm;
  const double prog = (step - warm) / std::max(1.0, total_steps - warm);
  return 0.5 * lr_max * (1.0 + std::cos(3.14159265358979323846 * prog));
}

Tensord align_loss(const Tensord& student_feats, const Tensord& teacher_feats,
                   const Tensord& w_proj, const Tensord& b_proj, double beta) {
  if (student_feats.dim(0) == 0)
    throw std::invalid_argument("align_loss: no aligned rows");
  if (student_feats.dim(0) != teacher_feats.dim(0))
    throw std::invalid_argument("align_loss: row mismatch " +
                                shape_str(student_feats.shape()) + " vs " +
                                shape_str(teacher_feats.shape()));
  Tensord s = l2_normalize(add_rowvec(matmul(student_feats, w_proj), b_proj));
  Tensord t = l2_normalize(teacher_feats);
  return smooth_l1(s, t, beta);
}

namespace {

// nested group-dynamic masks for the distinct counts (largest first)
std::vector<SelectionMask> nested_masks(const DynamicScores& scores,
                                        const TokenPool& pool,
                                        const std::vector<Index>& counts,
                                        int groups) {
  std::vector<SelectionMask> out;
  for (Index k : counts) {
    if (k % groups != 0)
      throw std::invalid_argument(
          "train: token count " + std::to_string(k) +
          " not divisible by group count (masks would not nest)");
    out.push_back(select_group_dynamic(scores, pool.coords, pool.grid, k, groups));
  }
  return out;
}

std::vector<Index> distinct_counts(const TrainConfig& tc, std::vector<int>& mult) {
  std::vector<Index> counts;
  for (Index k : {tc.k1, tc.k2, tc.k3}) {
    bool found = false;
    for (std::size_t i = 0; i < counts.size(); ++i)
      if (counts[i] == k) {
        mult[i]++;
        found = true;
      }
    if (!found) {
      counts.push_back(k);
      mult[counts.size() - 1] = 1;
    }
  }
  return counts;
}

}  // namespace

PtStepOut flux_pt_step(const std::vector<const VideoSample*>& batch,
                       FluxViTParams& student, const FluxViTConfig& s_cfg,
                       const FluxViTParams& teacher, const FluxViTConfig& t_cfg,
                       const SamplerConfig& sampler, const TrainConfig& tc,
                       std::uint64_t step_seed) {
  Tensord total = Tensord::scalar(0.0);
  int n = 0;
  for (std::size_t bi = 0; bi < batch.size(); ++bi) {
    const VideoSample& vs = *batch[bi];
    SamplingGrid grid = sample_grid(derive_seed(step_seed, "grid") + bi, sampler);
    TokenPool pool = patchify(vs, grid, sampler);
    if (pool.grid.pool() < tc.k_teacher)
      throw std::invalid_argument("flux_pt_step: pool " +
                                  std::to_string(pool.grid.pool()) +
                                  " smaller than teacher count " +
                                  std::to_string(tc.k_teacher));

    // frozen teacher: group-dynamic selection, then forward without grad
    DynamicScores scores =
        pool_scores(teacher, t_cfg, pool, tc.norm_p, tc.raw_patch_scores);
    SelectionMask tmask = select_group_dynamic(scores, pool.coords, pool.grid,
                                               tc.k_teacher, tc.groups);
    Eigen::VectorXd cls_attn;
    Eigen::MatrixXd tfeat;
    {
      NoGradGuard ng;
      ForwardResult tr = forward(teacher, t_cfg, pool, tmask);
      cls_attn = tr.cls_attn;
      tfeat.resize(tr.token_features.dim(0), tr.token_features.dim(1));
      for (Index r = 0; r < tfeat.rows(); ++r)
        for (Index c = 0; c < tfeat.cols(); ++c)
          tfeat(r, c) = tr.token_features.value()[r * tfeat.cols() + c];
    }

    std::unordered_map<Index, std::size_t> pos_in_teacher;
    for (std::size_t i = 0; i < tmask.indices.size(); ++i)
      pos_in_teacher[tmask.indices[i]] = i;

    std::vector<int> mult(3, 0);
    std::vector<Index> counts = distinct_counts(tc, mult);
    Tensord sample_loss = Tensord::scalar(0.0);
    for (std::size_t ci = 0; ci < counts.size(); ++ci) {
      SelectionMask smask = student_mask(cls_attn, tmask, counts[ci]);
      ForwardResult sr = forward(student, s_cfg, pool, smask);
      // teacher rows at the student-visible positions
      const Index k = smask.k(), dt = tfeat.cols();
      typename Tensord::Vec trows(k * dt);
      for (Index r = 0; r < k; ++r) {
        std::size_t p = pos_in_teacher.at(smask.indices[static_cast<std::size_t>(r)]);
        for (Index c = 0; c < dt; ++c)
          trows[r * dt + c] = tfeat(static_cast<Index>(p), c);
      }
      Tensord tref = Tensord::from({k, dt}, std::move(trows));
      Tensord al = align_loss(sr.token_features, tref, student.w_proj,
                              student.b_proj, tc.sl1_beta);
      sample_loss = add(sample_loss, scale(al, static_cast<double>(mult[ci])));
    }
    total = add(total, scale(sample_loss, 1.0 / 3.0));  // mean over the 3 counts
    ++n;
  }
  PtStepOut out;
  out.loss = scale(total, 1.0 / std::max(1, n));
  return out;
}

FtStepOut flux_ft_step(const std::vector<const VideoSample*>& batch,
                       FluxViTParams& params, const FluxViTConfig& cfg,
                       const SamplerConfig& sampler, const TrainConfig& tc,
                       std::uint64_t step_seed) {
  Tensord total = Tensord::scalar(0.0);
  FtStepOut out;
  for (std::size_t bi = 0; bi < batch.size(); ++bi) {
    const VideoSample& vs = *batch[bi];
    SamplingGrid grid = sample_grid(derive_seed(step_seed, "grid") + bi, sampler);
    TokenPool pool = patchify(vs, grid, sampler);
    DynamicScores scores =
        pool_scores(params, cfg, pool, tc.norm_p, tc.raw_patch_scores);

    std::vector<int> mult(3, 0);
    std::vector<Index> counts = distinct_counts(tc, mult);
    auto masks = nested_masks(scores, pool, counts, tc.groups);

    std::vector<Index> label = {static_cast<Index>(vs.label)};
    std::vector<Tensord> pooled;
    Tensord sample_loss = Tensord::scalar(0.0);
    double ces[3] = {0, 0, 0};
    for (std::size_t ci = 0; ci < counts.size(); ++ci) {
      ForwardResult r = forward(params, cfg, pool, masks[ci]);
      pooled.push_back(r.pooled);
      Tensord ce = cross_entropy(r.logits, label);
      ces[ci] = ce.item();
      sample_loss = add(sample_loss, scale(ce, static_cast<double>(mult[ci])));
    }
    // larger-count features teach the next smaller count (stop-gradient)
    Tensord sd = Tensord::scalar(0.0);
    if (tc.lambda_sd > 0 && counts.size() > 1) {
      for (std::size_t ci = 1; ci < counts.size(); ++ci)
        sd = add(sd, smooth_l1(pooled[ci], pooled[ci - 1].detach(), tc.sl1_beta));
      sample_loss = add(sample_loss, scale(sd, tc.lambda_sd));
    }
    total = add(total, sample_loss);

    // expand per-distinct-count CE back to the (k1,k2,k3) slots
    double slot[3];
    for (int s = 0; s < 3; ++s) {
      Index k = s == 0 ? tc.k1 : (s == 1 ? tc.k2 : tc.k3);
      std::size_t idx = 0;
      for (std::size_t j = 0; j < counts.size(); ++j)
        if (counts[j] == k) idx = j;
      slot[s] = ces[idx];
    }
    out.ce_k1 += slot[0];
    out.ce_k2 += slot[1];
    out.ce_k3 += slot[2];
    out.sd += sd.item();
  }
  const double inv = 1.0 / std::max<std::size_t>(1, batch.size());
  out.loss = scale(total, inv);
  out.ce_k1 *= inv;
  out.ce_k2 *= inv;
  out.ce_k3 *= inv;
  out.sd *= inv;
  return out;
}

namespace {

SamplingGrid eval_grid(const SamplerConfig& sampler) {
  auto cand = candidates(sampler);
  SamplingGrid best = cand.front();
  for (const auto& g : cand)
    if (g.pool() > best.pool()) best = g;
  return best;
}

}  // namespace

double eval_accuracy(FluxViTParams& params, const FluxViTConfig& cfg,
                     const SamplerConfig& sampler, const TrainConfig& tc,
                     const std::vector<VideoSample>& data, Index k) {
  NoGradGuard ng;
  SamplingGrid grid = eval_grid(sampler);
  int correct = 0;
  for (const auto& vs : data) {
    TokenPool pool = patchify(vs, grid, sampler);
    DynamicScores scores =
        pool_scores(params, cfg, pool, tc.norm_p, tc.raw_patch_scores);
    SelectionMask mask =
        select_group_dynamic(scores, pool.coords, pool.grid, k, tc.groups);
    ForwardResult r = forward(params, cfg, pool, mask);
    Index best = 0;
    for (Index c = 1; c < cfg.num_classes; ++c)
      if (r.logits.value()[c] > r.logits.value()[best]) best = c;
    if (best == vs.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

TrainResult train(TrainMode mode, FluxViTParams& params,
                  const FluxViTConfig& cfg, const FluxViTParams* teacher,
                  const FluxViTConfig* teacher_cfg, const SamplerConfig& sampler,
                  const TrainConfig& tc, const std::vector<VideoSample>& data,
                  const std::vector<VideoSample>& eval_data) {
  tc.validate();
  if (mode == TrainMode::kPretrain && (!teacher || !teacher_cfg))
    throw std::invalid_argument("train: pretrain mode needs a teacher");
  params.set_requires_grad(true);
  AdamW opt(params.tensors(), tc);
  TrainResult res;
  double acc1 = 0, acc2 = 0, acc3 = 0;
  const auto t0 = std::chrono::steady_clock::now();

  for (int step = 0; step < tc.steps; ++step) {
    if (stop_requested.load()) break;
    std::vector<const VideoSample*> batch;
    for (int i = 0; i < tc.batch_size; ++i)
      batch.push_back(&data[(static_cast<std::size_t>(step) * tc.batch_size + i) %
                            data.size()]);
    std::uint64_t step_seed =
        derive_seed(tc.seed, "step") + static_cast<std::uint64_t>(step);

    MetricsRow row;
    row.step = step;
    params.zero_grad();
    Tensord loss;
    if (mode == TrainMode::kFinetune) {
      FtStepOut so = flux_ft_step(batch, params, cfg, sampler, tc, step_seed);
      loss = so.loss;
      row.ce_k1 = so.ce_k1;
      row.ce_k2 = so.ce_k2;
      row.ce_k3 = so.ce_k3;
      row.sd_loss = so.sd;
    } else {
      PtStepOut so = flux_pt_step(batch, params, cfg, *teacher, *teacher_cfg,
                                  sampler, tc, step_seed);
      loss = so.loss;
    }
    row.total_loss = loss.item();
    if (!std::isfinite(row.total_loss)) {
      res.aborted = true;  // params still hold the last good state
      res.log.push_back(row);
      return res;
    }
    loss.backward();
    for (auto& t : params.tensors())
      for (Index j = 0; j < t.size(); ++j)
        if (!std::isfinite(t.grad()[j])) {
          res.aborted = true;
          res.log.push_back(row);
          return res;
        }
    opt.step(cosine_lr(step, tc.steps, tc.lr, tc.warmup_frac));

    if (mode == TrainMode::kFinetune && tc.eval_every > 0 &&
        ((step + 1) % tc.eval_every == 0 || step + 1 == tc.steps)) {
      acc1 = eval_accuracy(params, cfg, sampler, tc, eval_data, tc.k1);
      acc2 = tc.k2 == tc.k1
                 ? acc1
                 : eval_accuracy(params, cfg, sampler, tc, eval_data, tc.k2);
      acc3 = tc.k3 == tc.k2
                 ? acc2
                 : eval_accuracy(params, cfg, sampler, tc, eval_data, tc.k3);
    }
    row.acc_k1 = acc1;
    row.acc_k2 = acc2;
    row.acc_k3 = acc3;
    row.wall_time =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    res.log.push_back(row);
  }
  return res;
}

std::string metrics_to_csv(const std::vector<MetricsRow>& log) {
  std::ostringstream os;
  os << "step,total_loss,ce_k1,ce_k2,ce_k3,sd_loss,acc_k1,acc_k2,acc_k3\n";
  os.precision(17);
  for (const auto& r : log)
    os << r.step << "," << r.total_loss << "," << r.ce_k1 << "," << r.ce_k2
       << "," << r.ce_k3 << "," << r.sd_loss << "," << r.acc_k1 << ","
       << r.acc_k2 << "," << r.acc_k3 << "\n";
  return os.str();
}

std::string metrics_to_jsonl(const std::vector<MetricsRow>& log,
                             std::uint64_t seed,
                             const std::string& config_hash) {
  std::ostringstream os;
  for (const auto& r : log) {
    nlohmann::json j;
    j["step"] = r.step;
    j["total_loss"] = r.total_loss;
    j["ce_k1"] = r.ce_k1;
    j["ce_k2"] = r.ce_k2;
    j["ce_k3"] = r.ce_k3;
    j["sd_loss"] = r.sd_loss;
    j["acc_k1"] = r.acc_k1;
    j["acc_k2"] = r.acc_k2;
    j["acc_k3"] = r.acc_k3;
    j["wall_time"] = r.wall_time;
    j["seed"] = seed;
    j["config_hash"] = config_hash;
    os << j.dump() << "\n";
  }
  return os.str();
}

}  // namespace flux
