#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>

#include "fmae/model.hpp"
#include "test_util.hpp"

using namespace fmae;

namespace {

MaskPlan mini_plan() { return MaskPlan{{0}, {{0}, {1}}}; }

}  // namespace

TEST_CASE("standard configuration produces the documented shapes") {
  ModelConfig cfg;  // paper-scale defaults
  Rng rng(1);
  const auto params = ModelParams<float>::init(cfg, rng);

  CHECK(cfg.enc_token_width() == 108);
  CHECK(cfg.dec_token_width() == 72);
  CHECK(cfg.patch_values() == 128);
  CHECK(params.encoder.size() == 6);
  CHECK(params.decoder.size() == 4);
  CHECK(params.encoder.front().heads == 3);
  CHECK(params.decoder.front().heads == 4);
  CHECK(params.recon_head.w.shape() == std::vector<std::size_t>{72, 128});
  CHECK(params.latent_proj.w.shape() == std::vector<std::size_t>{96, 64});
  CHECK(params.state_proj.w.shape() == std::vector<std::size_t>{48, 64});
}

TEST_CASE("parameter count depends on dimensions, not masking rates") {
  Rng rng(2);
  ModelConfig a = test::mini_config();
  ModelConfig b = a;
  b.p_patch = 0.25;
  b.p_channel = 0.0;
  const auto pa = ModelParams<float>::init(a, rng);
  const auto pb = ModelParams<float>::init(b, rng);
  CHECK(pa.parameter_count() == pb.parameter_count());
  CHECK(pa.parameter_count() > 0);
}

TEST_CASE("encode maps retained tokens to d-prime latents") {
  const ModelConfig cfg = test::mini_config();
  Rng rng(3);
  const auto params = ModelParams<double>::init(cfg, rng);
  const auto group = test::make_group(cfg);
  const MaskPlan plan = mini_plan();
  const auto seq =
      build_encoder_sequence(embed_patches(group, plan, params.embedding, cfg), plan, cfg);
  const auto encoded = encode(seq, params);
  CHECK(encoded.hidden.cols() == static_cast<std::size_t>(cfg.enc_token_width()));
  CHECK(encoded.content.cols() == static_cast<std::size_t>(cfg.enc_dim));
  CHECK(encoded.latent.rows() == seq.origin.size());
  CHECK(encoded.latent.cols() == static_cast<std::size_t>(cfg.dec_dim));
}

TEST_CASE("a single-token sequence encodes without error") {
  ModelConfig cfg = test::mini_config();
  cfg.group_size = 1;
  Rng rng(4);
  const auto params = ModelParams<double>::init(cfg, rng);
  SnippetGroup group{{test::make_snippet(cfg.snippet_len, cfg.channels, 0)}, "src0"};
  MaskPlan plan{{}, {{1}}};  // keep only patch 0
  const auto seq =
      build_encoder_sequence(embed_patches(group, plan, params.embedding, cfg), plan, cfg);
  REQUIRE(seq.origin.size() == 1);
  const auto encoded = encode(seq, params);
  CHECK(encoded.latent.rows() == 1);
  for (double v : encoded.latent.value()) CHECK(std::isfinite(v));
}

TEST_CASE("battery-state tokens distinguish distinct SoC trajectories") {
  const ModelConfig cfg = test::mini_config();
  Rng rng(5);
  const auto params = ModelParams<double>::init(cfg, rng);
  auto group = test::make_group(cfg);
  // same masked index for both snippets, different state content
  MaskPlan plan{{}, {{1}, {1}}};
  const auto tokens = battery_state_tokens(group, plan, params);
  REQUIRE(tokens.positions.size() == 2);
  CHECK(tokens.tokens.cols() == static_cast<std::size_t>(cfg.dec_dim));
  double max_delta = 0.0;
  for (int c = 0; c < cfg.dec_dim; ++c) {
    max_delta = std::max(max_delta,
                         std::abs(tokens.tokens.value()[static_cast<std::size_t>(c)] -
                                  tokens.tokens.value()[static_cast<std::size_t>(cfg.dec_dim + c)]));
  }
  CHECK(max_delta > 1e-6);
}

TEST_CASE("identical state channels yield identical state tokens") {
  const ModelConfig cfg = test::mini_config();
  Rng rng(6);
  const auto params = ModelParams<double>::init(cfg, rng);
  auto group = test::make_group(cfg);
  // copy snippet 0's state channels into snippet 1
  for (int t = 0; t < cfg.snippet_len; ++t) {
    for (int ch : cfg.state_channels) {
      group.snippets[1].at(t, ch) = group.snippets[0].at(t, ch);
    }
  }
  MaskPlan plan{{}, {{1}, {1}}};
  const auto tokens = battery_state_tokens(group, plan, params);
  for (int c = 0; c < cfg.dec_dim; ++c) {
    CHECK(tokens.tokens.value()[static_cast<std::size_t>(c)] ==
          tokens.tokens.value()[static_cast<std::size_t>(cfg.dec_dim + c)]);
  }
}

TEST_CASE("decoder input is assembled snippet-major with positions filled once") {
  const ModelConfig cfg = test::mini_config();
  Rng rng(7);
  const auto params = ModelParams<double>::init(cfg, rng);
  const auto group = test::make_group(cfg);
  const MaskPlan plan = mini_plan();
  const auto fwd = forward_pretrain(group, plan, params);
  CHECK(fwd.decoder_input.rows() == static_cast<std::size_t>(cfg.group_size * cfg.patches));
  CHECK(fwd.decoder_input.cols() == static_cast<std::size_t>(cfg.dec_token_width()));
  CHECK(fwd.reconstruction.rows() == static_cast<std::size_t>(cfg.group_size * cfg.patches));
  CHECK(fwd.reconstruction.cols() == static_cast<std::size_t>(cfg.patch_values()));
}

TEST_CASE("with no patch masking the decoder input is entirely encoder-derived") {
  const ModelConfig cfg = test::mini_config();
  Rng rng(8);
  const auto params = ModelParams<double>::init(cfg, rng);
  const auto group = test::make_group(cfg);
  MaskPlan plan{{0}, {{}, {}}};
  const auto grid = embed_patches(group, plan, params.embedding, cfg);
  const auto seq = build_encoder_sequence(grid, plan, cfg);
  const auto encoded = encode(seq, params);
  const auto state = battery_state_tokens(group, plan, params);
  CHECK(state.positions.empty());
  const auto dec_in = assemble_decoder_input(encoded, state, params);
  // rows equal the latent rows plus the positional tail
  for (std::size_t r = 0; r < dec_in.rows(); ++r) {
    for (int c = 0; c < cfg.dec_dim; ++c) {
      CHECK(dec_in.value()[r * dec_in.cols() + static_cast<std::size_t>(c)] ==
            encoded.latent.value()[r * static_cast<std::size_t>(cfg.dec_dim) + static_cast<std::size_t>(c)]);
    }
  }
}

TEST_CASE("conflicting origins trigger the internal consistency error") {
  const ModelConfig cfg = test::mini_config();
  Rng rng(9);
  const auto params = ModelParams<double>::init(cfg, rng);
  const auto group = test::make_group(cfg);
  const MaskPlan plan = mini_plan();
  const auto grid = embed_patches(group, plan, params.embedding, cfg);
  const auto seq = build_encoder_sequence(grid, plan, cfg);
  auto encoded = encode(seq, params);
  auto state = battery_state_tokens(group, plan, params);

  SUBCASE("double fill") {
    state.positions.back() = encoded.origin.front();
    CHECK_THROWS_AS((void)assemble_decoder_input(encoded, state, params), InternalError);
  }
  SUBCASE("hole") {
    state.positions.back() = state.positions.front();
    CHECK_THROWS_AS((void)assemble_decoder_input(encoded, state, params), InternalError);
  }
}

TEST_CASE("pretrain loss is zero for a perfect reconstruction and delta^2 for an offset") {
  const ModelConfig cfg = test::mini_config();
  const auto group = test::make_group(cfg);
  const MaskPlan plan = mini_plan();
  auto [target, mask] = pretrain_targets<double>(group, plan, cfg);

  CHECK(pretrain_loss(target, group, plan, cfg).item() == 0.0);

  // add delta on masked parts only
  std::vector<double> shifted = target.value();
  for (std::size_t i = 0; i < shifted.size(); ++i) {
    if (mask.value()[i] != 0.0) shifted[i] += 0.4;
  }
  const auto pred = Tensor<double>::constant(target.shape(), shifted);
  CHECK(pretrain_loss(pred, group, plan, cfg).item() == doctest::Approx(0.16).epsilon(1e-12));
}

TEST_CASE("pretrain loss equals brute-force enumeration over the union mask") {
  const ModelConfig cfg = test::mini_config();
  auto group = test::make_group(cfg);
  group.snippets[1].present[0] = 0;  // exercise the absent-channel exclusion
  for (int t = 0; t < cfg.snippet_len; ++t) group.snippets[1].at(t, 0) = 0.0;
  const MaskPlan plan{{0, 1}, {{0}, {1}}};

  Rng rng(10);
  std::vector<double> pred_data(static_cast<std::size_t>(cfg.group_size * cfg.patches) *
                                static_cast<std::size_t>(cfg.patch_values()));
  for (auto& v : pred_data) v = rng.normal();
  const auto pred = Tensor<double>::constant(
      {static_cast<std::size_t>(cfg.group_size * cfg.patches),
       static_cast<std::size_t>(cfg.patch_values())},
      pred_data);

  // independent enumeration straight from the definition
  const int l0 = cfg.patch_len();
  double acc = 0.0;
  int count = 0;
  for (int i = 0; i < cfg.group_size; ++i) {
    const auto& snip = group.snippets[static_cast<std::size_t>(i)];
    const auto& masked_patches = plan.patch_sets[static_cast<std::size_t>(i)];
    for (int j = 0; j < cfg.patches; ++j) {
      const bool patch_masked =
          std::find(masked_patches.begin(), masked_patches.end(), j) != masked_patches.end();
      for (int t = 0; t < l0; ++t) {
        for (int ch = 0; ch < cfg.channels; ++ch) {
          const bool channel_masked =
              std::find(plan.channel_set.begin(), plan.channel_set.end(), ch) !=
              plan.channel_set.end();
          const bool in_loss =
              patch_masked || (channel_masked && snip.has_channel(ch));
          if (!in_loss) continue;
          const std::size_t row = static_cast<std::size_t>(i) * cfg.patches + j;
          const std::size_t col = static_cast<std::size_t>(t) * cfg.channels + ch;
          const double p = pred.value()[row * static_cast<std::size_t>(cfg.patch_values()) + col];
          const double d = p - snip.at(j * l0 + t, ch);
          acc += d * d;
          ++count;
        }
      }
    }
  }
  CHECK(pretrain_loss(pred, group, plan, cfg).item() ==
        doctest::Approx(acc / count).epsilon(1e-12));
}

TEST_CASE("encoder latents are bit-identical under masked-channel perturbations") {
  const ModelConfig cfg = test::mini_config();
  Rng rng(11);
  const auto params = ModelParams<double>::init(cfg, rng);
  auto group = test::make_group(cfg);
  group.snippets[0].present[2] = 0;
  const MaskPlan plan{{1}, {{0}, {1}}};

  const auto latents = [&](const SnippetGroup& g) {
    const auto seq =
        build_encoder_sequence(embed_patches(g, plan, params.embedding, cfg), plan, cfg);
    return encode(seq, params).latent.value();
  };
  const auto base = latents(group);

  SnippetGroup tampered = group;
  for (int t = 0; t < cfg.snippet_len; ++t) {
    tampered.snippets[0].at(t, 1) += 5.0;  // masked channel
    tampered.snippets[0].at(t, 2) -= 3.0;  // absent channel
    tampered.snippets[1].at(t, 1) *= 2.0;  // masked channel
  }
  CHECK(latents(tampered) == base);

  // masked-patch data also never reaches the encoder
  SnippetGroup patch_tampered = group;
  const int l0 = cfg.patch_len();
  for (int t = 0; t < l0; ++t) {
    for (int ch = 0; ch < cfg.channels; ++ch) {
      patch_tampered.snippets[0].at(0 * l0 + t, ch) += 9.0;  // patch 0 is masked for snippet 0
    }
  }
  CHECK(latents(patch_tampered) == base);
}

TEST_CASE("masked-patch gradients flow only through the reconstruction targets") {
  const ModelConfig cfg = test::mini_config();
  Rng rng(12);
  const auto params = ModelParams<double>::init(cfg, rng);
  auto group = test::make_group(cfg);
  const MaskPlan plan = mini_plan();

  const auto base = forward_pretrain(group, plan, params);

  // perturb non-state channels inside a masked patch: the decoder cannot see
  // it, so the reconstruction stays bit-identical and only the target moves
  SnippetGroup tampered = group;
  const int l0 = cfg.patch_len();
  for (int t = 0; t < l0; ++t) tampered.snippets[0].at(0 * l0 + t, 0) += 1.5;
  const auto moved = forward_pretrain(tampered, plan, params);

  CHECK(moved.encoded.latent.value() == base.encoded.latent.value());
  CHECK(moved.reconstruction.value() == base.reconstruction.value());
  CHECK(moved.loss.item() != base.loss.item());
}

TEST_CASE("permuting snippets permutes the reconstruction grid identically") {
  const ModelConfig cfg = test::mini_config();
  Rng rng(13);
  const auto params = ModelParams<double>::init(cfg, rng);
  auto group = test::make_group(cfg);
  MaskPlan plan{{0}, {{0}, {1}}};

  const auto fwd = forward_pretrain(group, plan, params);

  SnippetGroup swapped = group;
  std::swap(swapped.snippets[0], swapped.snippets[1]);
  MaskPlan swapped_plan = plan;
  std::swap(swapped_plan.patch_sets[0], swapped_plan.patch_sets[1]);
  const auto fwd_swapped = forward_pretrain(swapped, swapped_plan, params);

  const std::size_t block = static_cast<std::size_t>(cfg.patches) *
                            static_cast<std::size_t>(cfg.patch_values());
  for (std::size_t k = 0; k < block; ++k) {
    CHECK(fwd_swapped.reconstruction.value()[k] ==
          doctest::Approx(fwd.reconstruction.value()[block + k]).epsilon(1e-9));
    CHECK(fwd_swapped.reconstruction.value()[block + k] ==
          doctest::Approx(fwd.reconstruction.value()[k]).epsilon(1e-9));
  }
}

TEST_CASE("gradient of mean encoder output matches finite differences") {
  const ModelConfig cfg = test::mini_config();
  Rng rng(14);
  auto params = ModelParams<double>::init(cfg, rng);
  const auto group = test::make_group(cfg);
  const MaskPlan plan = mini_plan();

  // check with respect to the patch-embedding weight
  const std::function<Tensor<double>(const Tensor<double>&)> f =
      [&](const Tensor<double>& w) {
        ModelParams<double> probe = params;
        probe.embedding.patch_embed.w = w;
        const auto seq = build_encoder_sequence(
            embed_patches(group, plan, probe.embedding, cfg), plan, cfg);
        return mean_all(encode(seq, probe).latent);
      };
  CHECK(check_gradients(f, params.embedding.patch_embed.w.clone_parameter()) < 1e-4);
}

TEST_CASE("end-to-end pretraining loss gradient matches finite differences") {
  const ModelConfig cfg = test::mini_config();
  Rng rng(15);
  ModelParams<double> params = ModelParams<double>::init(cfg, rng);
  const auto group = test::make_group(cfg);
  const MaskPlan plan = mini_plan();

  // spot-check three structurally different parameters end to end
  const auto check_param = [&](Tensor<double>& slot) {
    Tensor<double> original = slot;
    const std::function<Tensor<double>(const Tensor<double>&)> f =
        [&](const Tensor<double>& x) {
          slot = x;
          const auto loss = forward_pretrain(group, plan, params).loss;
          return loss;
        };
    const double err = check_gradients(f, original.clone_parameter());
    slot = original;
    return err;
  };

  CHECK(check_param(params.embedding.channel_tokens) < 1e-4);
  CHECK(check_param(params.state_proj.w) < 1e-4);
  CHECK(check_param(params.decoder[0].q.w) < 1e-4);
}

TEST_CASE("collapse probe: shared mask tokens collapse, battery states do not") {
  const ModelConfig cfg = test::mini_config();
  Rng rng(16);
  const auto params = ModelParams<double>::init(cfg, rng);
  const auto group = test::make_group(cfg);
  MaskPlan plan{{}, {{1}, {1}}};  // same masked index in both snippets

  Rng probe_rng(17);
  const auto vanilla =
      collapse_probe(group, plan, params, CollapseMode::kVanillaMaskToken, probe_rng);
  CHECK(vanilla.max_divergence < 1e-6);

  Rng probe_rng2(17);
  const auto battery =
      collapse_probe(group, plan, params, CollapseMode::kBatteryState, probe_rng2);
  CHECK(battery.max_divergence > 1e-3);
  CHECK(battery.divergence[0][1] == battery.max_divergence);
}

TEST_CASE("collapse probe requires a shared masked index") {
  const ModelConfig cfg = test::mini_config();
  Rng rng(18);
  const auto params = ModelParams<double>::init(cfg, rng);

  SUBCASE("single snippet") {
    ModelConfig solo = cfg;
    solo.group_size = 1;
    Rng solo_rng(19);
    const auto solo_params = ModelParams<double>::init(solo, solo_rng);
    SnippetGroup group{{test::make_snippet(cfg.snippet_len, cfg.channels, 0)}, "src0"};
    MaskPlan plan{{}, {{1}}};
    Rng probe_rng(20);
    CHECK_THROWS_AS((void)collapse_probe(group, plan, solo_params,
                                         CollapseMode::kVanillaMaskToken, probe_rng),
                    ContractError);
  }
  SUBCASE("disjoint masked indices") {
    const auto group = test::make_group(cfg);
    MaskPlan plan{{}, {{0}, {1}}};
    Rng probe_rng(21);
    CHECK_THROWS_AS(
        (void)collapse_probe(group, plan, params, CollapseMode::kVanillaMaskToken, probe_rng),
        ContractError);
  }
}
