#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "flux/ops.hpp"
#include "flux/selector.hpp"

namespace flux {

struct FluxViTConfig {
  Index d_model = 64;
  Index heads = 4;
  Index depth = 4;
  Index mlp_ratio = 4;
  Index pe_t = 16, pe_h = 4, pe_w = 4;  // max positional grid
  Index patch_t = 1, patch_h = 14, patch_w = 14;
  Index channels = 3;
  Index dw_kernel = 3;
  Index num_classes = 4;
  Index proj_dim = 64;  // teacher-alignment projection dim
  bool use_lpe = true;  // value-projected attention bias
  bool use_dw = true;   // depthwise conv over the positional grid
  bool use_pre_ln = true;  // the LN before patch embedding

  Index head_dim() const { return d_model / heads; }
  Index c_patch() const { return patch_t * patch_h * patch_w * channels; }
  void validate() const;
};

struct BlockParams {
  Tensord ln1_g, ln1_b;
  Tensord w_qkv, b_qkv;  // D x 3D
  Tensord w_o, b_o;      // D x D
  std::vector<Tensord> w_lpe;  // per head, head_dim x head_dim
  Tensord ln2_g, ln2_b;
  Tensord w_mlp1, b_mlp1;  // D x rD
  Tensord w_mlp2, b_mlp2;  // rD x D
};

struct FluxViTParams {
  Tensord pre_ln_g, pre_ln_b;    // over C_patch
  Tensord w_embed, b_embed;      // C_patch x D
  Tensord post_ln_g, post_ln_b;  // over D
  Tensord glpe_table;            // (pe_t, pe_h, pe_w, D)
  Tensord glpe_kernel;           // (k, k, k, D), depthwise
  Tensord cls, cls_pos;          // 1 x D each
  std::vector<BlockParams> blocks;
  Tensord final_ln_g, final_ln_b;
  Tensord w_head, b_head;  // D x num_classes
  Tensord w_proj, b_proj;  // D x proj_dim

  std::vector<std::pair<std::string, Tensord>> named();
  std::vector<Tensord> tensors();
  void set_requires_grad(bool b);
  void zero_grad();
};

struct ForwardResult {
  Tensord token_features;   // K x D, after the final LN, non-CLS rows
  Tensord pooled;           // 1 x D, mean over non-CLS tokens
  Tensord logits;           // 1 x num_classes
  Tensord proj;             // K x proj_dim, for teacher alignment
  Eigen::VectorXd cls_attn; // K, final-block head-averaged pre-bias CLS row
};

// truncated-normal(0.02) linears, zero biases, sine-cosine GLPE table,
// identity DW kernel, zero W_lpe and classifier; deterministic per seed
FluxViTParams init_params(const FluxViTConfig& cfg, std::uint64_t seed);

// LN_post( LN_pre(raw) * W + b )
Tensord patch_embed_dpn(const Tensord& raw_patches, const FluxViTParams& p,
                        const FluxViTConfig& cfg);

// resize PE table to the grid, depthwise-convolve, gather at mask coords
Tensord glpe(const SamplingGrid& grid, const SelectionMask& mask,
             const std::vector<std::array<int, 3>>& coords,
             const FluxViTParams& p, const FluxViTConfig& cfg);

// one pre-norm attention sublayer input -> output (exposed for testing);
// cls_attn_out, when non-null, receives the head-averaged pre-bias CLS row
Tensord attention_lpe(const Tensord& x, const BlockParams& bp,
                      const FluxViTConfig& cfg,
                      Eigen::VectorXd* cls_attn_out = nullptr);

ForwardResult forward(const FluxViTParams& p, const FluxViTConfig& cfg,
                      const TokenPool& pool, const SelectionMask& mask,
                      bool want_proj = false);

// DPN embedding of the full pool (used for dynamic-score estimation)
Eigen::MatrixXd embed_pool(const FluxViTParams& p, const FluxViTConfig& cfg,
                           const TokenPool& pool);

// dynamic scores for selection; raw_patch = true scores the un-embedded
// patches instead (ablation switch)
DynamicScores pool_scores(const FluxViTParams& p, const FluxViTConfig& cfg,
                          const TokenPool& pool, int norm_p,
                          bool raw_patch = false);

}  // namespace flux
