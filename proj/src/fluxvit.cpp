#include "flux/fluxvit.hpp"

#include <cmath>
#include <stdexcept>

#include "flux/rng.hpp"

namespace flux {

void FluxViTConfig::validate() const {
  if (d_model < 1 || heads < 1 || d_model % heads != 0)
    throw std::invalid_argument("fluxvit: d_model must be divisible by heads");
  if (depth < 1 || mlp_ratio < 1)
    throw std::invalid_argument("fluxvit: invalid depth or mlp ratio");
  if (pe_t < 1 || pe_h < 1 || pe_w < 1)
    throw std::invalid_argument("fluxvit: invalid PE grid");
  if (dw_kernel < 1 || dw_kernel % 2 == 0)
    throw std::invalid_argument("fluxvit: DW kernel size must be odd");
  if (num_classes < 1 || proj_dim < 1)
    throw std::invalid_argument("fluxvit: invalid head dims");
}

namespace {

Tensord trunc_normal(std::vector<Index> shape, Rng& rng, double sigma) {
  auto t = Tensord::zeros(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t.value()[i] = rng.truncated_normal(sigma);
  return t;
}

Tensord ones(std::vector<Index> shape) {
  auto t = Tensord::zeros(std::move(shape));
  t.value().setOnes();
  return t;
}

// 1-D sine-cosine encoding written into channels [off, off+d_chunk)
void fill_sincos(Eigen::VectorXd& table, Index row_stride, Index row,
                 double pos, Index off, Index d_chunk) {
  for (Index i = 0; i * 2 + 1 < d_chunk; ++i) {
    double omega = std::pow(10000.0, -2.0 * static_cast<double>(i) /
                                         static_cast<double>(d_chunk));
    table[row * row_stride + off + 2 * i] = std::sin(pos * omega);
    table[row * row_stride + off + 2 * i + 1] = std::cos(pos * omega);
  }
}

}  // namespace

FluxViTParams init_params(const FluxViTConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(derive_seed(seed, "fluxvit-init"));
  const Index D = cfg.d_model, cp = cfg.c_patch(), hd = cfg.head_dim();
  const double sigma = 0.02;

  FluxViTParams p;
  p.pre_ln_g = ones({cp});
  p.pre_ln_b = Tensord::zeros({cp});
  p.w_embed = trunc_normal({cp, D}, rng, sigma);
  p.b_embed = Tensord::zeros({D});
  p.post_ln_g = ones({D});
  p.post_ln_b = Tensord::zeros({D});

  // 3-D sine-cosine table: channels split into near-equal even chunks for
  // the t/h/w axes, leftovers zero
  p.glpe_table = Tensord::zeros({cfg.pe_t, cfg.pe_h, cfg.pe_w, D});
  Index chunk = (D / 3) & ~Index(1);
  Index dt = chunk, dh = chunk, dw = (D - 2 * chunk) & ~Index(1);
  Index row = 0;
  for (Index t = 0; t < cfg.pe_t; ++t)
    for (Index h = 0; h < cfg.pe_h; ++h)
      for (Index w = 0; w < cfg.pe_w; ++w, ++row) {
        fill_sincos(p.glpe_table.value(), D, row, static_cast<double>(t), 0, dt);
        fill_sincos(p.glpe_table.value(), D, row, static_cast<double>(h), dt, dh);
        fill_sincos(p.glpe_table.value(), D, row, static_cast<double>(w), dt + dh, dw);
      }

  // identity kernel: 1 at the center, 0 elsewhere
  const Index k = cfg.dw_kernel;
  p.glpe_kernel = Tensord::zeros({k, k, k, D});
  const Index center = ((k / 2) * k + k / 2) * k + k / 2;
  for (Index c = 0; c < D; ++c) p.glpe_kernel.value()[center * D + c] = 1.0;

  p.cls = trunc_normal({1, D}, rng, sigma);
  p.cls_pos = trunc_normal({1, D}, rng, sigma);

  for (Index b = 0; b < cfg.depth; ++b) {
    BlockParams bp;
    bp.ln1_g = ones({D});
    bp.ln1_b = Tensord::zeros({D});
    bp.w_qkv = trunc_normal({D, 3 * D}, rng, sigma);
    bp.b_qkv = Tensord::zeros({3 * D});
    bp.w_o = trunc_normal({D, D}, rng, sigma);
    bp.b_o = Tensord::zeros({D});
    for (Index h = 0; h < cfg.heads; ++h)
      bp.w_lpe.push_back(Tensord::zeros({hd, hd}));
    bp.ln2_g = ones({D});
    bp.ln2_b = Tensord::zeros({D});
    bp.w_mlp1 = trunc_normal({D, cfg.mlp_ratio * D}, rng, sigma);
    bp.b_mlp1 = Tensord::zeros({cfg.mlp_ratio * D});
    bp.w_mlp2 = trunc_normal({cfg.mlp_ratio * D, D}, rng, sigma);
    bp.b_mlp2 = Tensord::zeros({D});
    p.blocks.push_back(std::move(bp));
  }

  p.final_ln_g = ones({D});
  p.final_ln_b = Tensord::zeros({D});
  p.w_head = Tensord::zeros({D, cfg.num_classes});
  p.b_head = Tensord::zeros({cfg.num_classes});
  p.w_proj = trunc_normal({D, cfg.proj_dim}, rng, sigma);
  p.b_proj = Tensord::zeros({cfg.proj_dim});
  return p;
}

std::vector<std::pair<std::string, Tensord>> FluxViTParams::named() {
  std::vector<std::pair<std::string, Tensord>> out = {
      {"pre_ln.g", pre_ln_g},   {"pre_ln.b", pre_ln_b},
      {"embed.w", w_embed},     {"embed.b", b_embed},
      {"post_ln.g", post_ln_g}, {"post_ln.b", post_ln_b},
      {"glpe.table", glpe_table}, {"glpe.kernel", glpe_kernel},
      {"cls", cls},             {"cls_pos", cls_pos}};
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    auto& b = blocks[i];
    std::string pre = "blocks." + std::to_string(i) + ".";
    out.emplace_back(pre + "ln1.g", b.ln1_g);
    out.emplace_back(pre + "ln1.b", b.ln1_b);
    out.emplace_back(pre + "qkv.w", b.w_qkv);
    out.emplace_back(pre + "qkv.b", b.b_qkv);
    out.emplace_back(pre + "out.w", b.w_o);
    out.emplace_back(pre + "out.b", b.b_o);
    for (std::size_t h = 0; h < b.w_lpe.size(); ++h)
      out.emplace_back(pre + "lpe." + std::to_string(h), b.w_lpe[h]);
    out.emplace_back(pre + "ln2.g", b.ln2_g);
    out.emplace_back(pre + "ln2.b", b.ln2_b);
    out.emplace_back(pre + "mlp1.w", b.w_mlp1);
    out.emplace_back(pre + "mlp1.b", b.b_mlp1);
    out.emplace_back(pre + "mlp2.w", b.w_mlp2);
    out.emplace_back(pre + "mlp2.b", b.b_mlp2);
  }
  out.emplace_back("final_ln.g", final_ln_g);
  out.emplace_back("final_ln.b", final_ln_b);
  out.emplace_back("head.w", w_head);
  out.emplace_back("head.b", b_head);
  out.emplace_back("proj.w", w_proj);
  out.emplace_back("proj.b", b_proj);
  return out;
}

std::vector<Tensord> FluxViTParams::tensors() {
  std::vector<Tensord> out;
  for (auto& [name, t] : named()) out.push_back(t);
  return out;
}

void FluxViTParams::set_requires_grad(bool b) {
  for (auto& t : tensors()) t.set_requires_grad(b);
}

void FluxViTParams::zero_grad() {
  for (auto& t : tensors()) t.zero_grad();
}

Tensord patch_embed_dpn(const Tensord& raw_patches, const FluxViTParams& p,
                        const FluxViTConfig& cfg) {
  Tensord x = raw_patches;
  if (cfg.use_pre_ln) x = layernorm(x, p.pre_ln_g, p.pre_ln_b);
  x = add_rowvec(matmul(x, p.w_embed), p.b_embed);
  return layernorm(x, p.post_ln_g, p.post_ln_b);
}

Tensord glpe(const SamplingGrid& grid, const SelectionMask& mask,
             const std::vector<std::array<int, 3>>& coords,
             const FluxViTParams& p, const FluxViTConfig& cfg) {
  if (grid.gt > cfg.pe_t || grid.gh > cfg.pe_h || grid.gw > cfg.pe_w)
    throw std::invalid_argument(
        "glpe: grid " + std::to_string(grid.gt) + "x" + std::to_string(grid.gh) +
        "x" + std::to_string(grid.gw) + " exceeds PE table " +
        std::to_string(cfg.pe_t) + "x" + std::to_string(cfg.pe_h) + "x" +
        std::to_string(cfg.pe_w));
  Tensord table = trilinear_resize(p.glpe_table, grid.gt, grid.gh, grid.gw);
  if (cfg.use_dw) table = dwconv3d(table, p.glpe_kernel);
  table = reshape(table, {grid.pool(), cfg.d_model});
  std::vector<Index> rows;
  rows.reserve(mask.indices.size());
  for (Index i : mask.indices) {
    const auto& [t, h, w] = coords[static_cast<std::size_t>(i)];
    rows.push_back((static_cast<Index>(t) * grid.gh + h) * grid.gw + w);
  }
  return gather_rows(table, rows);
}

Tensord attention_lpe(const Tensord& x, const BlockParams& bp,
                      const FluxViTConfig& cfg, Eigen::VectorXd* cls_attn_out) {
  const Index D = cfg.d_model, hd = cfg.head_dim();
  Tensord qkv = add_rowvec(matmul(x, bp.w_qkv), bp.b_qkv);
  std::vector<Tensord> heads;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(hd));
  if (cls_attn_out) cls_attn_out->setZero(x.dim(0) - 1);
  for (Index h = 0; h < cfg.heads; ++h) {
    Tensord q = slice_cols(qkv, h * hd, hd);
    Tensord k = slice_cols(qkv, D + h * hd, hd);
    Tensord v = slice_cols(qkv, 2 * D + h * hd, hd);
    Tensord attn = softmax(scale(matmul(q, transpose(k)), inv_sqrt_d));
    if (cls_attn_out) {
      // pre-bias CLS row over the non-CLS tokens, averaged over heads
      const Index n = x.dim(0);
      for (Index j = 1; j < n; ++j)
        (*cls_attn_out)[j - 1] +=
            attn.value()[j] / static_cast<double>(cfg.heads);
    }
    Tensord z = matmul(attn, v);
    if (cfg.use_lpe) z = add(z, matmul(v, bp.w_lpe[h]));
    heads.push_back(z);
  }
  Tensord z = cfg.heads == 1 ? heads[0] : concat_cols(heads);
  return add_rowvec(matmul(z, bp.w_o), bp.b_o);
}

ForwardResult forward(const FluxViTParams& p, const FluxViTConfig& cfg,
                      const TokenPool& pool, const SelectionMask& mask,
                      bool want_proj) {
  if (mask.indices.empty())
    throw std::invalid_argument("forward: empty selection mask");
  const Index K = mask.k();
  const Index cp = cfg.c_patch();
  if (pool.features.cols() != cp)
    throw std::invalid_argument("forward: pool C_patch " +
                                std::to_string(pool.features.cols()) +
                                " vs config " + std::to_string(cp));

  // gather the selected raw patches
  typename Tensord::Vec raw(K * cp);
  for (Index r = 0; r < K; ++r) {
    if (mask.indices[static_cast<std::size_t>(r)] >= pool.features.rows())
      throw std::invalid_argument("forward: mask index out of pool range");
    for (Index c = 0; c < cp; ++c)
      raw[r * cp + c] =
          pool.features(mask.indices[static_cast<std::size_t>(r)], c);
  }
  Tensord x = patch_embed_dpn(Tensord::from({K, cp}, std::move(raw)), p, cfg);
  x = add(x, glpe(pool.grid, mask, pool.coords, p, cfg));
  x = concat_rows(add(p.cls, p.cls_pos), x);

  ForwardResult res;
  for (Index b = 0; b < cfg.depth; ++b) {
    const BlockParams& bp = p.blocks[static_cast<std::size_t>(b)];
    bool last = (b == cfg.depth - 1);
    Tensord h = layernorm(x, bp.ln1_g, bp.ln1_b);
    x = add(x, attention_lpe(h, bp, cfg, last ? &res.cls_attn : nullptr));
    Tensord m = layernorm(x, bp.ln2_g, bp.ln2_b);
    m = add_rowvec(matmul(m, bp.w_mlp1), bp.b_mlp1);
    m = gelu(m);
    m = add_rowvec(matmul(m, bp.w_mlp2), bp.b_mlp2);
    x = add(x, m);
  }
  Tensord y = layernorm(x, p.final_ln_g, p.final_ln_b);
  std::vector<Index> tok(static_cast<std::size_t>(K));
  for (Index i = 0; i < K; ++i) tok[static_cast<std::size_t>(i)] = i + 1;
  res.token_features = gather_rows(y, tok);
  res.pooled = reshape(mean_axis(res.token_features, 0), {1, cfg.d_model});
  res.logits = add_rowvec(matmul(res.pooled, p.w_head), p.b_head);
  if (want_proj)
    res.proj = add_rowvec(matmul(res.token_features, p.w_proj), p.b_proj);
  return res;
}

Eigen::MatrixXd embed_pool(const FluxViTParams& p, const FluxViTConfig& cfg,
                           const TokenPool& pool) {
  NoGradGuard ng;
  const Index P = pool.features.rows(), cp = pool.features.cols();
  typename Tensord::Vec raw(P * cp);
  for (Index r = 0; r < P; ++r)
    for (Index c = 0; c < cp; ++c) raw[r * cp + c] = pool.features(r, c);
  Tensord emb = patch_embed_dpn(Tensord::from({P, cp}, std::move(raw)), p, cfg);
  Eigen::MatrixXd out(P, cfg.d_model);
  for (Index r = 0; r < P; ++r)
    for (Index c = 0; c < cfg.d_model; ++c)
      out(r, c) = emb.value()[r * cfg.d_model + c];
  return out;
}

DynamicScores pool_scores(const FluxViTParams& p, const FluxViTConfig& cfg,
                          const TokenPool& pool, int norm_p, bool raw_patch) {
  if (raw_patch)
    return dynamic_scores(pool.features, pool.coords, pool.grid, norm_p);
  return dynamic_scores(embed_pool(p, cfg, pool), pool.coords, pool.grid,
                        norm_p);
}

}  // namespace flux
