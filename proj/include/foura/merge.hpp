#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "foura/adapter.hpp"
#include "foura/analysis.hpp"
#include "foura/errors.hpp"
#include "foura/matrix.hpp"
#include "foura/trainer.hpp"

namespace foura {

enum class MergeMode { OutputSum, EpsilonCompose };

struct MergeEntry {
  const AdapterLayer* layer = nullptr;
  double strength = 1.0;
};

struct MergeSpec {
  std::vector<MergeEntry> adapters;
  MergeMode mode = MergeMode::OutputSum;
  std::vector<double> weights;  // epsilon-compose weights, unused for output_sum
};

namespace detail {

// Static per-channel mask of an adapter for merged evaluation: frozen masks
// as captured, ungated layers count as all-ones. Input-dependent gates have
// no well-defined merged operator and must be frozen first.
inline std::vector<double> static_mask(const AdapterLayer& l) {
  if (!l.gate) return std::vector<double>(l.rank, 1.0);
  if (l.gate->mode != GateMode::Frozen) {
    throw InvalidGateState("merging requires frozen (or absent) gates; freeze_gate first");
  }
  return l.gate->frozen_mask;
}

}  // namespace detail

// base(z) + sum_n alpha_n * branch_n(z), with every branch taken at unit
// strength (the merge strengths replace the layers' folded alphas). All
// adapters must share the same frozen base weights.
inline Matrix merge_outputs(const MergeSpec& spec, const Matrix& z_in) {
  if (spec.mode != MergeMode::OutputSum) {
    throw InvalidInput("merge_outputs: spec mode must be output_sum");
  }
  if (spec.adapters.empty()) throw InvalidInput("merge_outputs: no adapters");
  const AdapterLayer& first = *spec.adapters.front().layer;
  validate_layer(first);
  for (const MergeEntry& e : spec.adapters) {
    validate_layer(*e.layer);
    if (!(e.layer->w0 == first.w0)) {
      throw IncompatibleAdapters("merge_outputs: adapters disagree on base weights");
    }
    if (e.layer->k1() != first.k1() || e.layer->k2() != first.k2()) {
      throw IncompatibleAdapters("merge_outputs: adapter shapes differ");
    }
  }
  if (z_in.cols() != first.k1()) {
    throw ShapeError("merge_outputs: input is " + z_in.shape_str() + ", adapters expect k1 = " +
                     std::to_string(first.k1()));
  }
  Matrix out = Matrix::matmul(z_in, first.w0);
  for (const MergeEntry& e : spec.adapters) {
    std::vector<double> scale = detail::static_mask(*e.layer);
    for (double& v : scale) v *= e.strength;
    out += detail::adapter_branch(*e.layer, z_in, scale);
  }
  return out;
}

struct ConceptDelta {
  Matrix eps_pos;
  Matrix eps_neg;
  double weight = 1.0;
};

// eps_hat = base_eps + sum_n w_n (eps_pos_n - eps_neg_n).
inline Matrix compose_epsilon(const Matrix& base_eps, std::span<const ConceptDelta> deltas) {
  Matrix out = base_eps;
  for (const ConceptDelta& d : deltas) {
    if (!d.eps_pos.same_shape(base_eps) || !d.eps_neg.same_shape(base_eps)) {
      throw ShapeError("compose_epsilon: delta shape mismatch");
    }
    for (std::size_t i = 0; i < out.size(); ++i) {
      out.data()[i] += d.weight * (d.eps_pos.data()[i] - d.eps_neg.data()[i]);
    }
  }
  return out;
}

// One concept slider: adapters over both toy-denoiser layers plus its
// composition weight.
struct ConceptSlider {
  std::vector<AdapterLayer> layers;
  double weight = 1.0;
};

// Composite-slider refinement: every denoising step composes the per-concept
// guidance in epsilon space, eps_hat = eps_base + sum_n w_n (eps_n - eps_base),
// with eps_base the shared base model's prediction.
inline Matrix run_composed_denoise(const std::vector<ConceptSlider>& sliders,
                                   std::uint64_t seed, std::size_t eval_batch,
                                   std::uint64_t target_id = 0) {
  if (sliders.empty()) throw InvalidInput("run_composed_denoise: no sliders");
  for (const ConceptSlider& s : sliders) {
    if (s.layers.size() != 2) {
      throw InvalidInput("run_composed_denoise: each slider adapts both denoiser layers");
    }
    for (std::size_t j = 0; j < 2; ++j) {
      validate_layer(s.layers[j]);
      if (!(s.layers[j].w0 == sliders.front().layers[j].w0)) {
        throw IncompatibleAdapters("run_composed_denoise: sliders disagree on base weights");
      }
    }
  }

  // base model: the shared frozen weights with silent adapters
  std::vector<AdapterLayer> base;
  for (const AdapterLayer& l : sliders.front().layers) {
    AdapterLayer plain;
    plain.w0 = l.w0;
    plain.a = Matrix(1, l.k1());
    plain.b = Matrix(l.k2(), 1);
    plain.rank = 1;
    plain.transform = TransformKind::None;
    base.push_back(std::move(plain));
  }

  const detail::DenoiseProblem problem = detail::make_denoise_problem(seed, target_id);
  Rng reval(substream(seed, detail::kStreamEval));
  Matrix x = detail::sample_clean(problem, reval, eval_batch);
  for (double& v : x.data()) v += reval.gaussian();

  for (std::size_t t = detail::kDenoiseSteps; t >= 1; --t) {
    const Matrix z = detail::concat_temb(x, t);
    const Matrix eps_base =
        adapter_forward(base[1], adapter_forward(base[0], z).first).first;
    std::vector<ConceptDelta> deltas;
    deltas.reserve(sliders.size());
    for (const ConceptSlider& s : sliders) {
      const Matrix eps_n =
          adapter_forward(s.layers[1], adapter_forward(s.layers[0], z).first).first;
      deltas.push_back({eps_n, eps_base, s.weight});
    }
    x -= detail::kDenoiseEta * compose_epsilon(eps_base, deltas);
  }
  return x;
}

// Normalized projection of one adapter's materialized update onto the other's
// top-r singular subspace. Lower scores predict cleaner training-free merges.
inline double merge_compatibility(const AdapterLayer& a1, const AdapterLayer& a2,
                                  std::size_t r) {
  validate_layer(a1);
  validate_layer(a2);
  if (a1.k1() != a2.k1() || a1.k2() != a2.k2()) {
    throw IncompatibleAdapters("merge_compatibility: adapter shapes differ");
  }
  const Matrix dw1 = materialize_delta_w(a1, detail::static_mask(a1));
  const Matrix dw2 = materialize_delta_w(a2, detail::static_mask(a2));
  return projection_norm(dw1, dw2, r, /*normalized=*/true);
}

}  // namespace foura
