#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lmcg/landmarks.hpp"
#include "lmcg/ops.hpp"

// Objective terms: unconditional + conditional adversarial, per-part
// local adversarial, cycle consistency, landmark consistency, and their
// weighted composition into the generator-side and per-discriminator
// totals.

namespace lmcg {

enum class LossSide { Generator, Discriminator };

/// Log form (binary cross-entropy on logits, non-saturating generator)
/// or least-squares, switchable for parity experiments.
enum class GanLossForm { BceLog, LeastSquares };

struct LossWeights {
  float lambda_g = 0.5f;
  float lambda_gc = 0.5f;
  float lambda_local = 0.3f;
  float lambda_lm = 100.f;
  float lambda_cyc = 10.f;
  float lambda_eyes = 1.f;
  float lambda_nose = 1.f;
  float lambda_mouth = 1.f;

  void validate() const {
    for (float v : {lambda_g, lambda_gc, lambda_local, lambda_lm, lambda_cyc,
                    lambda_eyes, lambda_nose, lambda_mouth})
      require(v >= 0.f, "loss weights must be non-negative");
  }
  float lambda_part(Part p) const {
    switch (p) {
      case Part::Eyes: return lambda_eyes;
      case Part::Nose: return lambda_nose;
      case Part::Mouth: return lambda_mouth;
    }
    return 0.f;
  }
};

namespace detail {
template <typename T>
Tensor<T> gan_term(const Tensor<T>& logits, T target, GanLossForm form) {
  if (form == GanLossForm::BceLog) return bce_with_logits_mean(logits, target);
  // Least-squares variant compares raw logits to the target directly.
  return mse_mean(logits, Tensor<T>::full(logits.shape(), target));
}
}  // namespace detail

/// Eq.-1-style adversarial loss. Discriminator side sums the BCE of the
/// real logits against 1 and the fake logits against 0; generator side
/// is the non-saturating BCE of the fake logits against 1.
template <typename T>
Tensor<T> adversarial_loss(const Tensor<T>& d_real_logits,
                           const Tensor<T>& d_fake_logits, LossSide side,
                           GanLossForm form = GanLossForm::BceLog) {
  require(d_fake_logits.defined() && d_fake_logits.numel() > 0,
          "adversarial_loss: empty fake logit batch rejected");
  if (side == LossSide::Generator)
    return detail::gan_term(d_fake_logits, T(1), form);
  require(d_real_logits.defined() && d_real_logits.numel() > 0,
          "adversarial_loss: empty real logit batch rejected");
  return add(detail::gan_term(d_real_logits, T(1), form),
             detail::gan_term(d_fake_logits, T(0), form));
}

/// Eq. 2: mean-L1 reconstruction error in both directions.
template <typename T>
Tensor<T> cycle_loss(const Tensor<T>& x, const Tensor<T>& x_reconstructed,
                     const Tensor<T>& y, const Tensor<T>& y_reconstructed) {
  return add(l1_mean(x_reconstructed, x), l1_mean(y_reconstructed, y));
}

/// Eq. 4 under the RMS convention: sqrt(mean((R(G(x,l)) - l)^2)), so the
/// value is resolution-independent. Gradients flow through the frozen
/// regressor into the generator.
template <typename T>
Tensor<T> landmark_consistency_loss(const Tensor<T>& regressor_output,
                                    const Tensor<T>& target_heatmaps) {
  require(regressor_output.defined() && target_heatmaps.defined() &&
              regressor_output.shape() == target_heatmaps.shape(),
          "landmark_consistency_loss: shape mismatch " +
              (regressor_output.defined() ? shape_str(regressor_output.shape())
                                          : std::string("<null>")) +
              " vs " +
              (target_heatmaps.defined() ? shape_str(target_heatmaps.shape())
                                         : std::string("<null>")));
  return sqrt_scalar(mse_mean(regressor_output, target_heatmaps));
}

/// Eq. 5. The discriminator sees three logit groups: real matched pairs
/// (target 1), generated fakes and unmatched real-image/stale-landmark
/// pairs (target 0), the two fake sources weighted 1/2 each to keep the
/// real:fake balance. With no unmatched group the form reduces to Eq. 1.
/// The generator side uses only the generated logits; passing unmatched
/// logits there is rejected.
template <typename T>
Tensor<T> conditional_adversarial_loss(const Tensor<T>& d_real_matched,
                                       const Tensor<T>& d_fake_generated,
                                       const Tensor<T>& d_fake_unmatched,
                                       LossSide side,
                                       GanLossForm form = GanLossForm::BceLog) {
  if (side == LossSide::Generator) {
    require(!d_fake_unmatched.defined(),
            "conditional_adversarial_loss: unmatched logits are a "
            "discriminator-side input, rejected on the generator side");
    require(d_fake_generated.defined() && d_fake_generated.numel() > 0,
            "conditional_adversarial_loss: empty generated logit batch");
    return detail::gan_term(d_fake_generated, T(1), form);
  }
  require(d_real_matched.defined() && d_real_matched.numel() > 0 &&
              d_fake_generated.defined() && d_fake_generated.numel() > 0,
          "conditional_adversarial_loss: empty logit batch rejected");
  Tensor<T> loss = detail::gan_term(d_real_matched, T(1), form);
  if (d_fake_unmatched.defined()) {
    require(d_fake_unmatched.numel() > 0,
            "conditional_adversarial_loss: empty unmatched logit batch");
    loss = add(loss, mul_scalar(detail::gan_term(d_fake_generated, T(0), form),
                                T(0.5)));
    loss = add(loss, mul_scalar(detail::gan_term(d_fake_unmatched, T(0), form),
                                T(0.5)));
  } else {
    loss = add(loss, detail::gan_term(d_fake_generated, T(0), form));
  }
  return loss;
}

template <typename T>
struct PartLogits {
  Tensor<T> real;  // unused on the generator side
  Tensor<T> fake;
};

template <typename T>
struct LocalLossResult {
  Tensor<T> total;
  std::array<Tensor<T>, 3> per_part;  // eyes, nose, mouth
};

/// Eq. 6: sum over {eyes, nose, mouth} of lambda_i times the per-part
/// adversarial loss. All three parts must be present.
template <typename T>
LocalLossResult<T> local_adversarial_loss(
    const std::map<Part, PartLogits<T>>& parts, const LossWeights& weights,
    LossSide side, GanLossForm form = GanLossForm::BceLog) {
  for (Part p : {Part::Eyes, Part::Nose, Part::Mouth})
    require(parts.count(p) == 1,
            std::string("local_adversarial_loss: missing part ") + part_tag(p));
  LocalLossResult<T> res;
  int idx = 0;
  for (Part p : {Part::Eyes, Part::Nose, Part::Mouth}) {
    const auto& pl = parts.at(p);
    Tensor<T> term = adversarial_loss(pl.real, pl.fake, side, form);
    Tensor<T> weighted = mul_scalar(term, T(weights.lambda_part(p)));
    res.per_part[std::size_t(idx++)] = weighted;
    res.total = res.total.defined() ? add(res.total, weighted) : weighted;
  }
  return res;
}

/// Named scalars of one iteration; total_generator reconstructs from the
/// parts within 1e-5 relative.
struct LossReport {
  std::vector<std::pair<std::string, float>> terms;
  float total_generator = 0.f;

  void put(const std::string& name, float v) { terms.emplace_back(name, v); }
  std::optional<float> find(const std::string& name) const {
    for (const auto& [k, v] : terms)
      if (k == name) return v;
    return std::nullopt;
  }
};

/// Unweighted scalar loss terms feeding the stage objective. Local terms
/// must be absent at stage 1. Direction suffix: _xy translates X->Y
/// (judged in domain Y) and _yx the reverse.
template <typename T>
struct GeneratorTerms {
  Tensor<T> adv_xy, adv_yx;            // unconditional, generator side
  Tensor<T> cond_xy, cond_yx;          // conditional, generator side
  Tensor<T> lm_xy, lm_yx;              // landmark consistency
  Tensor<T> cycle;                     // both directions combined
  std::optional<LocalLossResult<T>> local_xy, local_yx;  // stage 2 only
};

template <typename T>
struct TotalLosses {
  Tensor<T> generator_total;
  std::map<std::string, Tensor<T>> discriminator_totals;
  LossReport report;
};

/// Composes the stage objective:
///   lambda_g*(adv) + lambda_gc*(cond) + [stage2] lambda_local*(local)
///   + lambda_lm*(lm) + lambda_cyc*cycle.
/// Each discriminator's total passes through untouched; it minimizes its
/// own term only.
template <typename T>
TotalLosses<T> total_losses(const GeneratorTerms<T>& g,
                            const std::map<std::string, Tensor<T>>& disc_terms,
                            const LossWeights& w, int stage) {
  require(stage == 1 || stage == 2, "total_losses: stage must be 1 or 2");
  const bool has_local = g.local_xy.has_value() || g.local_yx.has_value();
  if (stage == 1)
    require(!has_local, "total_losses: local terms are not part of stage 1");

  TotalLosses<T> out;
  Tensor<T> total =
      mul_scalar(add(g.adv_xy, g.adv_yx), T(w.lambda_g));
  total = add(total, mul_scalar(add(g.cond_xy, g.cond_yx), T(w.lambda_gc)));
  if (stage == 2 && has_local) {
    require(g.local_xy.has_value() && g.local_yx.has_value(),
            "total_losses: stage 2 expects local terms for both directions");
    total = add(total, mul_scalar(add(g.local_xy->total, g.local_yx->total),
                                  T(w.lambda_local)));
  }
  total = add(total, mul_scalar(add(g.lm_xy, g.lm_yx), T(w.lambda_lm)));
  total = add(total, mul_scalar(g.cycle, T(w.lambda_cyc)));
  out.generator_total = total;

  auto& rep = out.report;
  rep.put("adv_Y", float(g.adv_xy.item()));
  rep.put("adv_X", float(g.adv_yx.item()));
  rep.put("adv_cond_Y", float(g.cond_xy.item()));
  rep.put("adv_cond_X", float(g.cond_yx.item()));
  rep.put("lm_consistency_XtoY", float(g.lm_xy.item()));
  rep.put("lm_consistency_YtoX", float(g.lm_yx.item()));
  rep.put("cycle", float(g.cycle.item()));
  if (stage == 2 && has_local) {
    static const char* part_names[3] = {"eyes", "nose", "mouth"};
    for (int i = 0; i < 3; ++i) {
      rep.put(std::string("local_") + part_names[i] + "_XtoY",
              float(g.local_xy->per_part[std::size_t(i)].item()));
      rep.put(std::string("local_") + part_names[i] + "_YtoX",
              float(g.local_yx->per_part[std::size_t(i)].item()));
    }
  }
  for (const auto& [name, t] : disc_terms) {
    out.discriminator_totals[name] = t;
    rep.put("disc_" + name, float(t.item()));
  }
  rep.total_generator = float(total.item());
  rep.put("generator_total", rep.total_generator);
  return out;
}

/// Recomputes the generator total from a report's parts; the report
/// invariant test checks it against total_generator.
inline float report_reconstruct_total(const LossReport& rep,
                                      const LossWeights& w, int stage) {
  auto get = [&](const std::string& k) { return rep.find(k).value_or(0.f); };
  float total = w.lambda_g * (get("adv_Y") + get("adv_X")) +
                w.lambda_gc * (get("adv_cond_Y") + get("adv_cond_X")) +
                w.lambda_lm * (get("lm_consistency_XtoY") +
                               get("lm_consistency_YtoX")) +
                w.lambda_cyc * get("cycle");
  if (stage == 2) {
    float local = 0.f;
    for (const char* part : {"eyes", "nose", "mouth"})
      for (const char* dir : {"_XtoY", "_YtoX"})
        local += rep.find(std::string("local_") + part + dir).value_or(0.f);
    total += w.lambda_local * local;
  }
  return total;
}

}  // namespace lmcg
