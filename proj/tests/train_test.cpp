#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "flux/rng.hpp"
#include "flux/train.hpp"

using namespace flux;

namespace {

// small lattice over 8-frame 28px videos: pools 8 and 16
SamplerConfig tiny_sampler() {
  SamplerConfig c;
  c.f_min = 2;
  c.f_max = 4;
  c.t_step = 2;
  c.r_min = 28;
  c.r_max = 28;
  c.r_step = 28;
  c.pool_min = 8;
  c.pool_max = 16;
  c.patch_t = 1;
  c.patch_h = 14;
  c.patch_w = 14;
  return c;
}

FluxViTConfig tiny_model() {
  FluxViTConfig c;
  c.d_model = 16;
  c.heads = 2;
  c.depth = 1;
  c.mlp_ratio = 2;
  c.pe_t = 4;
  c.pe_h = 2;
  c.pe_w = 2;
  c.patch_t = 1;
  c.patch_h = 14;
  c.patch_w = 14;
  c.channels = 3;
  c.num_classes = 4;
  c.proj_dim = 16;
  return c;
}

GenSpec tiny_gen() {
  GenSpec g;
  g.frames = 8;
  g.height = 28;
  g.width = 28;
  g.sprite_size_min = 6;
  g.sprite_size_max = 10;
  return g;
}

TrainConfig tiny_train() {
  TrainConfig tc;
  tc.steps = 4;
  tc.batch_size = 2;
  tc.k1 = 8;
  tc.k2 = 8;
  tc.k3 = 4;
  tc.k_teacher = 8;
  tc.groups = 2;
  tc.eval_every = 0;
  return tc;
}

}  // namespace

TEST_CASE("config validation enforces count ordering") {
  TrainConfig tc = tiny_train();
  tc.k3 = 12;
  CHECK_THROWS_AS(tc.validate(), std::invalid_argument);
  tc = tiny_train();
  tc.k1 = 16;  // above the teacher count
  CHECK_THROWS_AS(tc.validate(), std::invalid_argument);
  tc = tiny_train();
  tc.lambda_sd = -1;
  CHECK_THROWS_AS(tc.validate(), std::invalid_argument);
}

TEST_CASE("cosine schedule warms up then decays to zero") {
  CHECK(cosine_lr(0, 100, 1.0, 0.1) == doctest::Approx(0.1));
  CHECK(cosine_lr(9, 100, 1.0, 0.1) == doctest::Approx(1.0));
  CHECK(cosine_lr(10, 100, 1.0, 0.1) == doctest::Approx(1.0));
  CHECK(cosine_lr(99, 100, 1.0, 0.1) < 0.01);
  double prev = 1.0;
  for (int s = 10; s < 100; ++s) {
    double lr = cosine_lr(s, 100, 1.0, 0.1);
    CHECK(lr <= prev + 1e-12);
    prev = lr;
  }
}

TEST_CASE("the optimizer descends a separable quadratic") {
  Tensord p = Tensord::from({2, 2}, std::vector<double>{4, -3, 2, -1}, true);
  TrainConfig tc;
  tc.weight_decay = 0.0;
  AdamW opt({p}, tc);
  for (int i = 0; i < 200; ++i) {
    p.zero_grad();
    Tensord loss = scale(sum(mul(p, p)), 0.5);
    loss.backward();
    opt.step(0.05);
  }
  CHECK(p.value().cwiseAbs().maxCoeff() < 0.05);
}

TEST_CASE("weight decay applies to matrices only") {
  Tensord w = Tensord::from({1, 1}, std::vector<double>{1.0}, true);
  Tensord b = Tensord::from({1}, std::vector<double>{1.0}, true);
  TrainConfig tc;
  tc.weight_decay = 0.5;
  AdamW opt({w, b}, tc);
  w.zero_grad();
  b.zero_grad();
  sum(add(reshape(w, {1}), b)).backward();
  opt.step(0.1);
  // both see the unit gradient update; only w gets the decay term
  CHECK(w.value()[0] == doctest::Approx(1.0 - 0.1 * (1.0 + 0.5 * 1.0)).epsilon(1e-6));
  CHECK(b.value()[0] == doctest::Approx(1.0 - 0.1 * 1.0).epsilon(1e-6));
}

TEST_CASE("align_loss matches the elementwise definition") {
  Rng rng(7);
  Tensord s = Tensord::zeros({5, 8});
  Tensord t = Tensord::zeros({5, 8});
  for (Index i = 0; i < s.size(); ++i) s.value()[i] = rng.normal();
  for (Index i = 0; i < t.size(); ++i) t.value()[i] = rng.normal();
  Tensord w = Tensord::zeros({8, 8});
  for (Index i = 0; i < 8; ++i) w.value()[i * 8 + i] = 1.0;
  Tensord b = Tensord::zeros({8});

  double got = align_loss(s, t, w, b, 1.0).item();

  double want = 0;
  for (Index r = 0; r < 5; ++r) {
    Eigen::VectorXd sr = s.value().segment(r * 8, 8);
    Eigen::VectorXd tr = t.value().segment(r * 8, 8);
    sr /= sr.norm();
    tr /= tr.norm();
    for (Index c = 0; c < 8; ++c) {
      double d = std::abs(sr[c] - tr[c]);
      want += d < 1.0 ? 0.5 * d * d : d - 0.5;
    }
  }
  want /= 40.0;
  CHECK(std::abs(got - want) < 1e-12);

  // identical inputs with the identity projection align perfectly
  CHECK(align_loss(s, s, w, b, 1.0).item() == 0.0);

  // simultaneous row permutation leaves the mean unchanged
  std::vector<Index> perm = {4, 2, 0, 1, 3};
  Tensord sp = gather_rows(s, perm), tp = gather_rows(t, perm);
  CHECK(align_loss(sp, tp, w, b, 1.0).item() == doctest::Approx(got).epsilon(1e-14));

  CHECK_THROWS_AS(align_loss(Tensord::zeros({0, 8}), Tensord::zeros({0, 8}), w,
                             b, 1.0),
                  std::invalid_argument);
}

TEST_CASE("a student cloned from its teacher aligns at zero loss") {
  FluxViTConfig cfg = tiny_model();
  FluxViTParams teacher = init_params(cfg, 3);
  FluxViTParams student = init_params(cfg, 3);  // same seed: identical weights
  // identity projection so projected student features equal teacher features
  student.w_proj.value().setZero();
  for (Index i = 0; i < cfg.d_model; ++i)
    student.w_proj.value()[i * cfg.d_model + i] = 1.0;
  student.b_proj.value().setZero();

  TrainConfig tc = tiny_train();
  tc.k1 = tc.k2 = tc.k3 = tc.k_teacher = 8;
  auto data = gen_dataset(11, tiny_gen(), 2);
  std::vector<const VideoSample*> batch = {&data[0], &data[1]};
  PtStepOut out = flux_pt_step(batch, student, cfg, teacher, cfg,
                               tiny_sampler(), tc, 55);
  CHECK(out.loss.item() == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("repeated counts reduce to the single-count alignment loss") {
  FluxViTConfig cfg = tiny_model();
  FluxViTParams teacher = init_params(cfg, 5);
  FluxViTParams student = init_params(cfg, 6);
  TrainConfig tc = tiny_train();
  tc.k1 = tc.k2 = tc.k3 = tc.k_teacher = 8;
  auto data = gen_dataset(12, tiny_gen(), 1);
  std::vector<const VideoSample*> batch = {&data[0]};

  double loss3 = flux_pt_step(batch, student, cfg, teacher, cfg, tiny_sampler(),
                              tc, 99)
                     .loss.item();

  // reference: one alignment at K with the same grid and masks
  SamplerConfig sampler = tiny_sampler();
  SamplingGrid grid = sample_grid(derive_seed(99, "grid") + 0, sampler);
  TokenPool pool = patchify(data[0], grid, sampler);
  DynamicScores sc = pool_scores(teacher, cfg, pool, tc.norm_p);
  SelectionMask tmask =
      select_group_dynamic(sc, pool.coords, pool.grid, 8, tc.groups);
  NoGradGuard ng;
  ForwardResult tr = forward(teacher, cfg, pool, tmask);
  SelectionMask smask = student_mask(tr.cls_attn, tmask, 8);
  ForwardResult sr = forward(student, cfg, pool, smask);
  double single = align_loss(sr.token_features, tr.token_features.detach(),
                             student.w_proj, student.b_proj, tc.sl1_beta)
                      .item();
  CHECK(loss3 == doctest::Approx(single).epsilon(1e-12));
}

TEST_CASE("teacher masks always carry exactly K tokens") {
  FluxViTConfig cfg = tiny_model();
  FluxViTParams teacher = init_params(cfg, 8);
  SamplerConfig sampler = tiny_sampler();
  TrainConfig tc = tiny_train();
  auto data = gen_dataset(21, tiny_gen(), 4);
  for (std::uint64_t s = 0; s < 50; ++s) {
    SamplingGrid grid = sample_grid(s, sampler);
    TokenPool pool = patchify(data[s % 4], grid, sampler);
    DynamicScores sc = pool_scores(teacher, cfg, pool, 2);
    CHECK(select_group_dynamic(sc, pool.coords, pool.grid, tc.k_teacher,
                               tc.groups)
              .k() == tc.k_teacher);
  }
}

TEST_CASE("equal counts with zero lambda give three times the CE") {
  FluxViTConfig cfg = tiny_model();
  FluxViTParams p = init_params(cfg, 9);
  TrainConfig tc = tiny_train();
  tc.k1 = tc.k2 = tc.k3 = 8;
  tc.lambda_sd = 0.0;
  auto data = gen_dataset(13, tiny_gen(), 1);
  std::vector<const VideoSample*> batch = {&data[0]};
  FtStepOut out = flux_ft_step(batch, p, cfg, tiny_sampler(), tc, 7);

  SamplerConfig sampler = tiny_sampler();
  SamplingGrid grid = sample_grid(derive_seed(7, "grid") + 0, sampler);
  TokenPool pool = patchify(data[0], grid, sampler);
  DynamicScores sc = pool_scores(p, cfg, pool, tc.norm_p);
  SelectionMask m = select_group_dynamic(sc, pool.coords, pool.grid, 8, tc.groups);
  NoGradGuard ng;
  ForwardResult r = forward(p, cfg, pool, m);
  std::vector<Index> label = {static_cast<Index>(data[0].label)};
  double ce = cross_entropy(r.logits, label).item();
  CHECK(out.loss.item() == doctest::Approx(3.0 * ce).epsilon(1e-12));
  CHECK(out.sd == 0.0);
  CHECK(out.ce_k1 == doctest::Approx(ce));
}

TEST_CASE("self-distillation targets carry no gradient") {
  FluxViTConfig cfg = tiny_model();
  TrainConfig tc = tiny_train();  // counts 8, 8, 4
  auto data = gen_dataset(14, tiny_gen(), 1);
  std::vector<const VideoSample*> batch = {&data[0]};
  SamplerConfig sampler = tiny_sampler();

  auto grads_with_lambda = [&](double lambda) {
    FluxViTParams p = init_params(cfg, 10);
    TrainConfig t = tc;
    t.lambda_sd = lambda;
    p.set_requires_grad(true);
    p.zero_grad();
    flux_ft_step(batch, p, cfg, sampler, t, 31).loss.backward();
    std::vector<Eigen::VectorXd> g;
    for (auto& t2 : p.tensors()) g.push_back(t2.grad());
    return g;
  };
  auto g1 = grads_with_lambda(1.0);
  auto g0 = grads_with_lambda(0.0);

  // reference gradient of the SL1 term alone: flows only through the
  // smaller-count forward because the larger-count side is detached
  FluxViTParams p = init_params(cfg, 10);
  p.set_requires_grad(true);
  p.zero_grad();
  SamplingGrid grid = sample_grid(derive_seed(31, "grid") + 0, sampler);
  TokenPool pool = patchify(data[0], grid, sampler);
  DynamicScores sc = pool_scores(p, cfg, pool, tc.norm_p);
  SelectionMask m8 = select_group_dynamic(sc, pool.coords, pool.grid, 8, tc.groups);
  SelectionMask m4 = select_group_dynamic(sc, pool.coords, pool.grid, 4, tc.groups);
  Tensord target;
  {
    NoGradGuard ng;
    target = forward(p, cfg, pool, m8).pooled.detach();
  }
  Tensord sd = smooth_l1(forward(p, cfg, pool, m4).pooled, target, tc.sl1_beta);
  sd.backward();

  auto ref = p.tensors();
  for (std::size_t i = 0; i < ref.size(); ++i) {
    if (g1[i].size() == 0 || g0[i].size() == 0) continue;
    Eigen::VectorXd diff = g1[i] - g0[i];
    Eigen::VectorXd want = ref[i].grad().size() ? ref[i].grad()
                                                : Eigen::VectorXd::Zero(diff.size());
    CHECK((diff - want).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("non-nested counts are rejected") {
  FluxViTConfig cfg = tiny_model();
  FluxViTParams p = init_params(cfg, 15);
  TrainConfig tc = tiny_train();
  tc.k3 = 3;  // not divisible by groups=2
  auto data = gen_dataset(16, tiny_gen(), 1);
  std::vector<const VideoSample*> batch = {&data[0]};
  CHECK_THROWS_AS(flux_ft_step(batch, p, cfg, tiny_sampler(), tc, 1),
                  std::invalid_argument);
}

TEST_CASE("pretraining reduces the alignment loss over 50 steps") {
  FluxViTConfig cfg = tiny_model();
  FluxViTParams teacher = init_params(cfg, 40);
  FluxViTParams student = init_params(cfg, 41);
  teacher.set_requires_grad(false);
  TrainConfig tc = tiny_train();
  tc.steps = 50;
  tc.lr = 2e-3;
  auto data = gen_dataset(42, tiny_gen(), 8);
  TrainResult res = train(TrainMode::kPretrain, student, cfg, &teacher, &cfg,
                          tiny_sampler(), tc, data, data);
  REQUIRE(res.log.size() == 50);
  CHECK_FALSE(res.aborted);
  CHECK(res.log.back().total_loss < res.log.front().total_loss);
  for (const auto& row : res.log) CHECK(std::isfinite(row.total_loss));
}

TEST_CASE("zero steps leave the parameters at initialization") {
  FluxViTConfig cfg = tiny_model();
  FluxViTParams p = init_params(cfg, 50);
  FluxViTParams fresh = init_params(cfg, 50);
  TrainConfig tc = tiny_train();
  tc.steps = 0;
  auto data = gen_dataset(51, tiny_gen(), 2);
  train(TrainMode::kFinetune, p, cfg, nullptr, nullptr, tiny_sampler(), tc,
        data, data);
  for (std::size_t i = 0; i < p.tensors().size(); ++i)
    CHECK(p.tensors()[i].value() == fresh.tensors()[i].value());
}

TEST_CASE("identical seeds give identical metrics logs") {
  FluxViTConfig cfg = tiny_model();
  TrainConfig tc = tiny_train();
  tc.steps = 6;
  tc.eval_every = 3;
  auto data = gen_dataset(60, tiny_gen(), 4);
  auto run = [&] {
    FluxViTParams p = init_params(cfg, 61);
    return metrics_to_csv(train(TrainMode::kFinetune, p, cfg, nullptr, nullptr,
                                tiny_sampler(), tc, data, data)
                              .log);
  };
  CHECK(run() == run());
}

TEST_CASE("metrics serialize with the documented columns") {
  MetricsRow r;
  r.step = 3;
  r.total_loss = 1.5;
  std::string csv = metrics_to_csv({r});
  CHECK(csv.find("step,total_loss,ce_k1,ce_k2,ce_k3,sd_loss,acc_k1,acc_k2,"
                 "acc_k3") == 0);
  std::string jl = metrics_to_jsonl({r}, 7, "abc");
  CHECK(jl.find("\"config_hash\":\"abc\"") != std::string::npos);
  CHECK(jl.find("\"seed\":7") != std::string::npos);
}
