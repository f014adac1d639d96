#include "circuits/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "circuits/connectivity.hpp"
#include "circuits/digest.hpp"
#include "circuits/error.hpp"
#include "circuits/evaluate.hpp"

namespace circuits {

namespace {

constexpr const char* kSaliencyMagic = "# circuits saliency v1";

const std::pair<Criterion, const char*> kCriterionNames[] = {
    {Criterion::actgrad, "actgrad"}, {Criterion::snip, "snip"},     {Criterion::force, "force"},
    {Criterion::magnitude, "magnitude"}, {Criterion::random, "random"},
};

SaliencyMap empty_map(const ModelGraph& model, const FeatureTarget& target, Criterion criterion) {
  SaliencyMap s;
  s.criterion = criterion;
  s.target = target;
  s.model_digest = model.digest();
  s.kernels = relevant_kernel_indices(model, target);
  s.scores.assign(s.kernels.size(), 0.0);
  return s;
}

enum class GradientScore { activation, weight };

// Runs one forward/backward pair per image and adds each image's kernel
// scores to `s` in image order.
void accumulate_gradient_scores(const ModelGraph& model, const FeatureTarget& target, std::span<const Tensor> images,
                                const CircuitMask* mask, GradientScore kind, SaliencyMap& s) {
  if (images.empty()) throw ValidationError("saliency needs at least one image");
  if (s.kernels.empty()) {
    throw ValidationError("target " + to_string(target) + " has no relevant kernels; no gradient reaches it");
  }
  const std::size_t layer = model.layer_index(target.layer);
  const auto positions = resolve_positions(model, target, images);
  GateSet gates;
  if (mask) gates = make_gates(model, *mask);

  std::vector<ModelGraph::KernelLocation> where;
  where.reserve(s.kernels.size());
  for (std::size_t k : s.kernels) where.push_back(model.locate_kernel(k));

  std::vector<double> image_scores(s.kernels.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    EvalContext ctx;
    const auto ids = record_forward(ctx, model, images[i], mask ? &gates : nullptr, layer);
    const Tensor& out = ctx.value(ids[layer]);
    ctx.backward(ids[layer], objective_seed(target, out, positions[i]));
    for (std::size_t j = 0; j < s.kernels.size(); ++j) {
      const auto& loc = where[j];
      if (kind == GradientScore::activation) {
        const Tensor a = ctx.kernel_activation(ids[loc.layer], loc.out, loc.in);
        const Tensor g = ctx.kernel_activation_gradient(ids[loc.layer], loc.out, loc.in);
        double sum = 0;
        for (std::size_t p = 0; p < a.size(); ++p) sum += std::abs(a[p] * g[p]);
        image_scores[j] = sum / static_cast<double>(a.size());
      } else {
        const Tensor& w = model.params(loc.layer).weights;
        const Tensor& gw = ctx.parameter_gradient(loc.layer).weights;
        const std::size_t kk = w.shape()[2] * w.shape()[3];
        const std::size_t base = (loc.out * w.shape()[1] + loc.in) * kk;
        double sum = 0;
        for (std::size_t p = 0; p < kk; ++p) sum += std::abs(w[base + p] * gw[base + p]);
        image_scores[j] = sum / static_cast<double>(kk);
      }
    }
    for (std::size_t j = 0; j < s.kernels.size(); ++j) s.scores[j] += image_scores[j];
  }
  s.image_digest = image_set_digest(images);
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

const char* to_string(Criterion criterion) {
  for (const auto& [c, name] : kCriterionNames) {
    if (c == criterion) return name;
  }
  return "unknown";
}

Criterion criterion_from_string(const std::string& name) {
  for (const auto& [c, n] : kCriterionNames) {
    if (name == n) return c;
  }
  throw ValidationError("unknown criterion '" + name + "' (expected actgrad, snip, force, magnitude or random)");
}

double SaliencyMap::score(std::size_t kernel) const {
  auto it = std::lower_bound(kernels.begin(), kernels.end(), kernel);
  if (it == kernels.end() || *it != kernel) return 0.0;
  return scores[static_cast<std::size_t>(it - kernels.begin())];
}

SaliencyMap score_actgrad(const ModelGraph& model, const FeatureTarget& target, std::span<const Tensor> images,
                          const CircuitMask* mask) {
  SaliencyMap s = empty_map(model, target, Criterion::actgrad);
  accumulate_gradient_scores(model, target, images, mask, GradientScore::activation, s);
  return s;
}

SaliencyMap score_snip(const ModelGraph& model, const FeatureTarget& target, std::span<const Tensor> images,
                       const CircuitMask* mask) {
  SaliencyMap s = empty_map(model, target, Criterion::snip);
  accumulate_gradient_scores(model, target, images, mask, GradientScore::weight, s);
  return s;
}

SaliencyMap score_magnitude(const ModelGraph& model, const FeatureTarget& target) {
  SaliencyMap s = empty_map(model, target, Criterion::magnitude);
  for (std::size_t j = 0; j < s.kernels.size(); ++j) {
    const auto loc = model.locate_kernel(s.kernels[j]);
    const Tensor& w = model.params(loc.layer).weights;
    const std::size_t kk = w.shape()[2] * w.shape()[3];
    const std::size_t base = (loc.out * w.shape()[1] + loc.in) * kk;
    double sum = 0;
    for (std::size_t p = 0; p < kk; ++p) sum += std::abs(w[base + p]);
    s.scores[j] = sum / static_cast<double>(kk);
  }
  return s;
}

SaliencyMap score_random(const ModelGraph& model, const FeatureTarget& target, std::uint64_t seed) {
  SaliencyMap s = empty_map(model, target, Criterion::random);
  std::mt19937_64 rng(seed);
  for (double& v : s.scores) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    v = 1.0 - u;
  }
  return s;
}

std::vector<std::size_t> force_schedule_raw(std::size_t m, std::size_t kappa, std::size_t iterations) {
  if (iterations == 0) throw ValidationError("FORCE needs at least one iteration");
  if (kappa == 0 || m == 0) throw ValidationError("FORCE needs kappa >= 1 and m >= 1");
  std::vector<std::size_t> out;
  const double lk = std::log(static_cast<double>(kappa));
  const double lm = std::log(static_cast<double>(m));
  for (std::size_t t = 0; t <= iterations; ++t) {
    const double a = static_cast<double>(t) / static_cast<double>(iterations);
    out.push_back(static_cast<std::size_t>(std::llround(std::exp(a * lk + (1.0 - a) * lm))));
  }
  return out;
}

std::vector<std::size_t> force_schedule(std::size_t m, std::size_t kappa, std::size_t iterations) {
  if (kappa >= m) {
    throw ValidationError("FORCE needs kappa < m (kappa " + std::to_string(kappa) + ", m " + std::to_string(m) + ")");
  }
  const auto raw = force_schedule_raw(m, kappa, iterations);
  std::vector<std::size_t> out;
  for (std::size_t k : raw) {
    if (k == 0) throw ValidationError("FORCE schedule reaches zero kept kernels before the last iteration");
    if (out.empty() || k < out.back()) out.push_back(k);
  }
  return out;
}

ForceResult score_force(const ModelGraph& model, const FeatureTarget& target, std::span<const Tensor> images,
                        std::size_t kappa, std::size_t iterations) {
  const std::size_t m = relevant_kernel_indices(model, target).size();
  ForceResult r;
  r.schedule = force_schedule(m, kappa, iterations);
  CircuitMask mask = keep_all(model, target);
  for (std::size_t t = 1; t < r.schedule.size(); ++t) {
    r.scores = score_snip(model, target, images, &mask);
    r.scores.criterion = Criterion::force;
    mask = select_top_count(model, r.scores, r.schedule[t]);
  }
  r.mask = std::move(mask);
  return r;
}

SaliencyMap minmax_normalize(const ModelGraph& model, const SaliencyMap& scores) {
  SaliencyMap out = scores;
  std::map<std::size_t, std::vector<std::size_t>> by_layer;
  for (std::size_t j = 0; j < scores.kernels.size(); ++j) by_layer[model.locate_kernel(scores.kernels[j]).layer].push_back(j);
  for (const auto& [layer, idx] : by_layer) {
    double lo = scores.scores[idx[0]], hi = lo;
    for (std::size_t j : idx) {
      lo = std::min(lo, scores.scores[j]);
      hi = std::max(hi, scores.scores[j]);
    }
    for (std::size_t j : idx) out.scores[j] = hi > lo ? (scores.scores[j] - lo) / (hi - lo) : 1.0;
  }
  out.normalized = true;
  return out;
}

std::size_t kappa_for(double sparsity, std::size_t m) {
  if (!(sparsity > 0.0 && sparsity <= 1.0)) {
    throw ValidationError("sparsity must lie in (0, 1], got " + format_double(sparsity));
  }
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(sparsity * static_cast<double>(m))));
}

CircuitMask select_top_count(const ModelGraph& model, const SaliencyMap& scores, std::size_t kappa) {
  const std::size_t m = scores.kernels.size();
  if (kappa == 0 || kappa > m) {
    throw ValidationError("cannot keep " + std::to_string(kappa) + " of " + std::to_string(m) + " relevant kernels");
  }
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores.scores[a] > scores.scores[b]; });
  std::vector<std::size_t> kept;
  for (std::size_t j = 0; j < kappa; ++j) kept.push_back(scores.kernels[order[j]]);
  CircuitMask mask = make_mask(model, scores.target, std::move(kept));
  mask.provenance = MaskProvenance{to_string(scores.criterion), scores.image_digest};
  return mask;
}

CircuitMask select_topk(const ModelGraph& model, const SaliencyMap& scores, double sparsity) {
  return select_top_count(model, scores, kappa_for(sparsity, scores.kernels.size()));
}

std::string saliency_to_text(const ModelGraph& model, const SaliencyMap& s) {
  std::ostringstream os;
  os << kSaliencyMagic << '\n';
  os << "model " << s.model_digest << '\n';
  os << "criterion " << to_string(s.criterion) << '\n';
  os << "target " << to_string(s.target) << '\n';
  os << "images " << (s.image_digest.empty() ? "-" : s.image_digest) << '\n';
  os << "normalized " << (s.normalized ? 1 : 0) << '\n';
  os << "count " << s.kernels.size() << '\n';
  for (std::size_t j = 0; j < s.kernels.size(); ++j) {
    const KernelId id = model.kernel_id(s.kernels[j]);
    os << id.layer << ' ' << id.out << ' ' << id.in << ' ' << format_double(s.scores[j]) << '\n';
  }
  return os.str();
}

SaliencyMap saliency_from_text(const ModelGraph& model, const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != kSaliencyMagic) {
    throw FormatError(std::string("saliency text must start with '") + kSaliencyMagic + "'");
  }
  std::map<std::string, std::string> header;
  for (const char* key : {"model", "criterion", "target", "images", "normalized", "count"}) {
    if (!std::getline(is, line)) throw FormatError(std::string("saliency text ends before '") + key + "'");
    const auto space = line.find(' ');
    if (space == std::string::npos || line.substr(0, space) != key) {
      throw FormatError(std::string("expected saliency header '") + key + "', got '" + line + "'");
    }
    header[key] = line.substr(space + 1);
  }
  SaliencyMap s;
  s.model_digest = header["model"];
  if (s.model_digest != model.digest()) {
    throw ValidationError("saliency map was computed for model " + s.model_digest.substr(0, 12) + ", not " +
                          model.digest().substr(0, 12));
  }
  s.criterion = criterion_from_string(header["criterion"]);
  s.target = parse_target(header["target"]);
  validate_target(model, s.target);
  s.image_digest = header["images"] == "-" ? "" : header["images"];
  s.normalized = header["normalized"] == "1";
  std::size_t count = 0;
  try {
    count = std::stoull(header["count"]);
  } catch (const std::logic_error&) {
    throw FormatError("malformed saliency count");
  }
  std::vector<std::pair<std::size_t, double>> records;
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(is, line)) throw TruncatedError("saliency text lists fewer records than its count");
    std::istringstream ls(line);
    KernelId id;
    std::string score;
    if (!(ls >> id.layer >> id.out >> id.in >> score)) throw FormatError("malformed saliency record '" + line + "'");
    double v = 0;
    try {
      v = std::stod(score);
    } catch (const std::logic_error&) {
      throw FormatError("malformed score in '" + line + "'");
    }
    if (!std::isfinite(v) || v < 0) throw FormatError("saliency scores must be finite and non-negative: '" + line + "'");
    records.emplace_back(model.kernel_index(id), v);
  }
  std::sort(records.begin(), records.end());
  const auto relevant = relevant_kernel_indices(model, s.target);
  if (records.size() != relevant.size()) {
    throw ValidationError("saliency map scores " + std::to_string(records.size()) + " kernels, target has " +
                          std::to_string(relevant.size()) + " relevant kernels");
  }
  for (std::size_t j = 0; j < records.size(); ++j) {
    if (records[j].first != relevant[j]) throw ValidationError("saliency map scores a kernel outside the relevant set");
    s.kernels.push_back(records[j].first);
    s.scores.push_back(records[j].second);
  }
  return s;
}

void save_saliency(const ModelGraph& model, const SaliencyMap& scores, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << saliency_to_text(model, scores);
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

SaliencyMap load_saliency(const ModelGraph& model, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open saliency file '" + path.string() + "'");
  return saliency_from_text(model, std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>()));
}

}  // namespace circuits
