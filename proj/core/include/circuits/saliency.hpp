#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "circuits/circuit.hpp"
#include "circuits/model.hpp"
#include "circuits/target.hpp"

namespace circuits {

enum class Criterion { actgrad, snip, force, magnitude, random };

const char* to_string(Criterion criterion);
Criterion criterion_from_string(const std::string& name);

/// Non-negative score per relevant kernel. Kernels outside the target's
/// relevant set are absent and read as 0.
struct SaliencyMap {
  Criterion criterion = Criterion::actgrad;
  FeatureTarget target;
  std::string model_digest;
  std::string image_digest;  // empty for image-independent criteria
  bool normalized = false;
  std::vector<std::size_t> kernels;  // flat indices, ascending
  std::vector<double> scores;        // parallel to kernels

  double score(std::size_t kernel) const;
  bool operator==(const SaliencyMap&) const = default;
};

/// Sum over images of mean_{h,w} |A_j[h,w] * df/dA_j[h,w]| for the
/// kernel-wise map A_j of every relevant kernel j. With `mask` the scores
/// are taken on the masked circuit. Throws ValidationError for an empty
/// image set or a target with no relevant kernels.
SaliencyMap score_actgrad(const ModelGraph& model, const FeatureTarget& target, std::span<const Tensor> images,
                          const CircuitMask* mask = nullptr);

/// Sum over images of mean over the kernel's weights of |w * df/dw|. Under
/// a mask the gradient is taken with respect to the effective weight, so
/// masked kernels still receive a score.
SaliencyMap score_snip(const ModelGraph& model, const FeatureTarget& target, std::span<const Tensor> images,
                       const CircuitMask* mask = nullptr);

/// Mean |w| per relevant kernel; image independent.
SaliencyMap score_magnitude(const ModelGraph& model, const FeatureTarget& target);

/// i.i.d. uniform (0, 1] scores from a seeded mt19937_64 stream, drawn in
/// ascending kernel order.
SaliencyMap score_random(const ModelGraph& model, const FeatureTarget& target, std::uint64_t seed);

/// k_t = round(exp(a ln kappa + (1 - a) ln m)), a = t / T, for t = 0..T.
std::vector<std::size_t> force_schedule_raw(std::size_t m, std::size_t kappa, std::size_t iterations);
/// The raw schedule with repeated counts dropped (strictly decreasing).
/// Throws ValidationError unless 1 <= kappa < m and iterations >= 1, or if
/// any count rounds to 0.
std::vector<std::size_t> force_schedule(std::size_t m, std::size_t kappa, std::size_t iterations);

struct ForceResult {
  SaliencyMap scores;  // the last SNIP scores computed
  CircuitMask mask;    // kept kappa kernels
  std::vector<std::size_t> schedule;
};

/// Iterative SNIP: score under the current mask, keep the top k_t, repeat
/// along force_schedule. Intermediate masks use bias mode masked.
ForceResult score_force(const ModelGraph& model, const FeatureTarget& target, std::span<const Tensor> images,
                        std::size_t kappa, std::size_t iterations = 10);

/// Per conv layer (s - min) / (max - min); a layer of equal scores maps to 1.
SaliencyMap minmax_normalize(const ModelGraph& model, const SaliencyMap& scores);

/// kappa = max(1, round(sparsity * m)). Throws ValidationError unless
/// sparsity is in (0, 1].
std::size_t kappa_for(double sparsity, std::size_t m);

/// Keeps the kappa highest-scoring relevant kernels; ties go to the lower
/// flat index. Throws ValidationError if kappa is 0 or exceeds m.
CircuitMask select_top_count(const ModelGraph& model, const SaliencyMap& scores, std::size_t kappa);
CircuitMask select_topk(const ModelGraph& model, const SaliencyMap& scores, double sparsity);

/// Text format: header lines then "layer out in score" with 17 significant
/// digits per relevant kernel.
std::string saliency_to_text(const ModelGraph& model, const SaliencyMap& scores);
SaliencyMap saliency_from_text(const ModelGraph& model, const std::string& text);
void save_saliency(const ModelGraph& model, const SaliencyMap& scores, const std::filesystem::path& path);
SaliencyMap load_saliency(const ModelGraph& model, const std::filesystem::path& path);

}  // namespace circuits
