#pragma once

#include <span>
#include <string>
#include <vector>

#include "s4t/autodiff.hpp"
#include "s4t/pseudolabel.hpp"
#include "s4t/reliability.hpp"

namespace s4t {

inline constexpr double kLogEps = 1e-8;

// Every term is a sum over pixels divided by the total pixel count N·H·W.
struct LossBreakdown {
  double total = 0.0;
  double sst_reliable = 0.0;
  double sst_interp = 0.0;
  double sst_entmax = 0.0;
  double ie = 0.0;
  double alpha = 0.0;  // coefficients used to assemble `total`
  double beta = 0.0;
  std::size_t reliable_pixels = 0;
  std::size_t interp_pixels = 0;
  std::size_t entmax_pixels = 0;
  std::size_t ignored_pixels = 0;  // masked, or unreliable with interpolation disabled

  double reconstruct() const { return sst_reliable + alpha * (sst_interp + sst_entmax) + beta * ie; }
};

// Per-image pseudolabel information for the second view.
struct SstTargets {
  std::vector<LabelMap> view2;
  std::vector<ReliabilityMap> reliability;
  std::vector<InterpolationResult> interp;  // may be empty when interpolation is off
};

struct SstOptions {
  double alpha = 0.1;
  bool interpolation = true;  // off: unreliable pixels contribute nothing
};

// Selective self-training loss over probs2 (N×C×H×W, gradient-tracked).
// Reliable: λ_Ṽ·CE(p̃, Ṽ); unreliable with w_int > 0: α·λ_ŷ·w_int·CE(p̃, ŷ^int);
// unreliable with w_int = 0: α·Σ_c p̃_c log(p̃_c + ε).
Var l_sst(const Var& probs2, const SstTargets& targets, std::span<const double> lambda, const SstOptions& options,
          LossBreakdown* breakdown = nullptr);

// Mean over pixels of Σ_c p̃_c·log(max(q_c, 1e-6)).
Var l_ie(const Var& probs2, std::span<const double> q);

// l_sst + β·l_ie (β = 0 drops the regularizer from the graph).
Var l_s4t(const Var& probs2, const SstTargets& targets, std::span<const double> lambda, std::span<const double> q,
          const SstOptions& options, double beta, LossBreakdown* breakdown = nullptr);

enum class LossKind { s4t, entmin, ce_all };
const char* to_string(LossKind kind);
LossKind parse_loss_kind(const std::string& text);

// entmin: mean −Σ p log(p+ε); ce_all: mean CE against the own argmax.
Var baseline_loss(const Var& probs2, std::span<const LabelMap> view2, LossKind kind);

// Baseline plus β·l_ie, with a breakdown that books the baseline as the
// reliable term.
Var baseline_total(const Var& probs2, std::span<const LabelMap> view2, LossKind kind, std::span<const double> q,
                   double beta, LossBreakdown* breakdown = nullptr);

}  // namespace s4t
