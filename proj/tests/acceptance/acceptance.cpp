// Acceptance suite: one PASS/FAIL line per primary criterion.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "circuits/circuit.hpp"
#include "circuits/connectivity.hpp"
#include "circuits/diagram.hpp"
#include "circuits/evaluate.hpp"
#include "circuits/hdbscan.hpp"
#include "circuits/metrics.hpp"
#include "circuits/probes.hpp"
#include "circuits/receptive_field.hpp"
#include "circuits/saliency.hpp"
#include "circuits/trainer.hpp"
#include "reference.hpp"

using namespace circuits;
using namespace circuits::testkit;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

const ToyRun& toy(std::uint64_t seed, double lambda1) {
  static std::map<std::pair<std::uint64_t, double>, ToyRun> cache;
  auto it = cache.find({seed, lambda1});
  if (it == cache.end()) it = cache.emplace(std::pair{seed, lambda1}, train_toy(seed, lambda1)).first;
  return it->second;
}

// 1 -------------------------------------------------------------------------

Outcome gradient_check() {
  const auto t0 = Clock::now();
  constexpr double h = 1e-2;
  double worst = 0;
  std::size_t checked = 0, kinks = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const ModelGraph m = random_chain_model(1000 + seed, {.max_conv_layers = 4});
    const Tensor image = random_image(2000 + seed, m.input_shape());
    const std::size_t tl = m.conv_layers().back();
    const FeatureTarget target = FeatureTarget::sum_abs(m.layer(tl).name, 0);

    EvalContext ctx;
    const auto ids = record_forward(ctx, m, image);
    ctx.backward(ids[tl], objective_seed(target, ctx.value(ids[tl])));

    auto f = [&](const ModelGraph& mm, std::optional<Injection> inj) {
      return ref_objective(target, ref_forward(mm, image, nullptr, inj)[tl]);
    };
    const double f0 = f(m, std::nullopt);
    // Piecewise linear in each coordinate: central differences are exact
    // away from kinks, which show up as unequal one-sided slopes.
    auto compare = [&](double analytic, double up, double down) {
      const double fwd = (up - f0) / h, bwd = (f0 - down) / h;
      if (std::abs(fwd - bwd) > 1e-7 * std::max({1.0, std::abs(fwd), std::abs(bwd)})) {
        ++kinks;
        return;
      }
      ++checked;
      worst = std::max(worst, relative_error(analytic, (up - down) / (2 * h)));
    };

    for (std::size_t l : m.conv_layers()) {
      if (!ctx.has_parameter_gradient(l)) continue;
      const Tensor& gw = ctx.parameter_gradient(l).weights;
      ModelGraph mm = m;
      Tensor& w = mm.params(l).weights;
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double keep = w[i];
        w[i] = keep + h;
        const double up = f(mm, std::nullopt);
        w[i] = keep - h;
        const double down = f(mm, std::nullopt);
        w[i] = keep;
        compare(gw[i], up, down);
      }
      const Shape& s = m.output_shape(l);
      const std::size_t cin = m.params(l).weights.shape()[1];
      for (std::size_t co = 0; co < s[0]; ++co) {
        std::vector<Tensor> grads;
        for (std::size_t ci = 0; ci < cin; ++ci) grads.push_back(ctx.kernel_activation_gradient(ids[l], co, ci));
        for (std::size_t y = 0; y < s[1]; ++y) {
          for (std::size_t x = 0; x < s[2]; ++x) {
            const double up = f(m, Injection{l, co, y, x, h});
            const double down = f(m, Injection{l, co, y, x, -h});
            for (const Tensor& g : grads) compare(g.at(y, x), up, down);
          }
        }
      }
    }
  }
  const double secs = seconds_since(t0);
  const bool ok = worst < 1e-5 && secs < 120 && kinks * 20 < checked;
  return {ok, fmt("max rel err %.2e over %zu gradients (%zu kink points skipped), %.1f s", worst, checked, kinks, secs)};
}

// 2 -------------------------------------------------------------------------

Outcome keep_all_identity() {
  double worst = 0;
  bool exact = true;
  std::size_t runs = 0, constant = 0;
  auto check = [&](const ModelGraph& m, const FeatureTarget& t, std::span<const Tensor> images, BiasMode mode) {
    SweepOptions o;
    o.bias_mode = mode;
    o.metric = MetricKind::pearson_abs;
    const std::vector<double> sp{1.0};
    const PreservationReport r = sparsity_sweep(m, t, o, sp, images);
    const CircuitMask all = keep_all(m, t, mode);
    const auto plain = feature_values(m, t, images), masked = feature_values(m, t, images, &all);
    // Constant features score 0 by the zero-variance convention.
    if (std::all_of(plain.begin(), plain.end(), [&](double v) { return v == plain[0]; })) {
      ++constant;
      exact = exact && r.entries[0].metric == 0.0;
    } else {
      exact = exact && r.entries[0].metric == 1.0;
    }
    for (std::size_t i = 0; i < plain.size(); ++i) {
      worst = std::max(worst, std::abs(plain[i] - masked[i]));
      worst = std::max(worst, std::abs(plain[i] - r.entries[0].circuit_values[i]));
    }
    ++runs;
  };
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const ModelGraph m = random_chain_model(3000 + seed);
    const auto images = random_images(seed, m.input_shape(), 8);
    const std::string layer = m.layer(m.conv_layers().back()).name;
    for (BiasMode mode : {BiasMode::masked, BiasMode::pruned}) {
      check(m, FeatureTarget::sum_abs(layer, 0), images, mode);
      check(m, FeatureTarget::unit_at_max(layer, 1), images, mode);
    }
  }
  const ToyRun& run = toy(1, 0.0);
  const std::vector<Tensor> images(run.data.images.begin(), run.data.images.begin() + 40);
  for (std::size_t ch = 0; ch < 12; ++ch) check(run.model, FeatureTarget::sum_abs("conv4", ch), images, BiasMode::masked);
  return {worst < 1e-9 && exact,
          fmt("%zu targets (%zu constant), max |diff| %.1e, pearson_abs %s", runs, constant, worst,
              exact ? "exactly 1.0" : "not exactly 1.0")};
}

// 3 -------------------------------------------------------------------------

Outcome force_schedule_exact() {
  const auto k = force_schedule(1000, 10, 10);
  bool ok = k.size() == 11;
  std::string list;
  for (std::size_t t = 0; t < k.size(); ++t) {
    const auto want = static_cast<std::size_t>(std::llround(std::pow(10.0, 3.0 - 0.2 * static_cast<double>(t))));
    ok = ok && k[t] == want;
    list += (t > 0 ? "," : "") + std::to_string(k[t]);
  }
  ok = ok && k.size() > 5 && k[5] == 100;
  return {ok, "k_t = " + list};
}

// 4 -------------------------------------------------------------------------

Outcome criterion_ordering() {
  const auto t0 = Clock::now();
  const std::vector<Criterion> order{Criterion::actgrad, Criterion::snip, Criterion::force, Criterion::magnitude,
                                     Criterion::random};
  std::size_t good = 0;
  double min_acc = 1;
  std::string rows;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const ToyRun& run = toy(seed, 0.0);
    min_acc = std::min(min_acc, run.accuracy);
    const std::vector<Tensor> images(run.data.images.begin(), run.data.images.begin() + 40);
    std::map<Criterion, double> med;
    for (Criterion c : order) {
      std::vector<double> rs;
      for (std::size_t ch = 0; ch < 10; ++ch) {
        SweepOptions o;
        o.criterion = c;
        o.seed = seed * 100 + ch;
        o.metric = MetricKind::pearson_abs;
        const std::vector<double> sp{0.1};
        rs.push_back(sparsity_sweep(run.model, FeatureTarget::sum_abs("conv4", ch), o, sp, images).entries[0].metric);
      }
      med[c] = median(rs);
    }
    bool ok = run.accuracy >= 0.95;
    for (Criterion c : {Criterion::actgrad, Criterion::snip, Criterion::force}) {
      ok = ok && med[c] >= med[Criterion::random] + 0.2 && med[c] >= med[Criterion::magnitude];
    }
    good += ok;
    rows += fmt(" [%.2f %.2f %.2f %.2f %.2f]", med[Criterion::actgrad], med[Criterion::snip], med[Criterion::force],
                med[Criterion::magnitude], med[Criterion::random]);
  }
  const double secs = seconds_since(t0);
  return {good >= 9 && secs < 600,
          fmt("%zu/10 seeds ordered, min accuracy %.3f, %.0f s; medians actgrad/snip/force/magnitude/random:", good,
              min_acc, secs) +
              rows};
}

// 5 -------------------------------------------------------------------------

Outcome tiny_net_oracle() {
  std::size_t below = 0;
  bool exact = true;
  for (std::uint64_t trial = 1; trial <= 10; ++trial) {
    const ModelGraph m = tiny_net(trial);
    const FeatureTarget t = FeatureTarget::sum_abs("conv2", 0);
    const auto images = random_images(50 + trial, m.input_shape(), 8);
    const auto rel = relevant_kernel_indices(m, t);
    if (rel.size() != 16) return {false, "tiny net does not have 16 relevant kernels"};

    std::vector<std::vector<std::size_t>> subsets;
    for (std::size_t a = 0; a < 16; ++a)
      for (std::size_t b = a + 1; b < 16; ++b)
        for (std::size_t c = b + 1; c < 16; ++c)
          for (std::size_t d = c + 1; d < 16; ++d) subsets.push_back({rel[a], rel[b], rel[c], rel[d]});

    auto cumulative = [](const SaliencyMap& s, const std::vector<std::size_t>& kept) {
      double sum = 0;
      for (std::size_t k : kept) sum += s.score(k);
      return sum;
    };
    const std::vector<SaliencyMap> maps{score_actgrad(m, t, images), score_snip(m, t, images), score_magnitude(m, t),
                                        score_random(m, t, trial)};
    for (const SaliencyMap& s : maps) {
      double best = -1;
      for (const auto& sub : subsets) best = std::max(best, cumulative(s, sub));
      exact = exact && cumulative(s, select_top_count(m, s, 4).kept) == best;
    }

    const auto original = feature_values(m, t, images);
    std::vector<double> dfs;
    for (const auto& sub : subsets) {
      const CircuitMask mask = make_mask(m, t, sub);
      dfs.push_back(delta_f_norm(original, feature_values(m, t, images, &mask)));
    }
    const CircuitMask chosen = select_top_count(m, maps[0], 4);
    below += delta_f_norm(original, feature_values(m, t, images, &chosen)) < median(dfs);
  }
  return {exact && below >= 9, fmt("top-4 maximal over C(16,4) for every criterion: %s; actgrad below median in %zu/10",
                                   exact ? "yes" : "no", below)};
}

// 6 -------------------------------------------------------------------------

Outcome dead_end_removal() {
  std::size_t preserved = 0, idempotent = 0, bounded = 0, shrunk = 0;
  std::mt19937_64 rng(6);
  for (std::size_t i = 0; i < 100; ++i) {
    const ModelGraph m = random_chain_model(4000 + i);
    const std::size_t tl = m.conv_layers().back();
    const FeatureTarget t = FeatureTarget::sum_abs(m.layer(tl).name, rng() % m.output_shape(tl)[0]);
    const auto rel = relevant_kernel_indices(m, t);
    const double p = std::uniform_real_distribution<double>(0.2, 0.9)(rng);
    std::vector<std::size_t> kept;
    for (std::size_t k : rel)
      if (std::bernoulli_distribution(p)(rng)) kept.push_back(k);
    const CircuitMask mask = make_mask(m, t, kept, i % 2 ? BiasMode::pruned : BiasMode::masked);
    const CircuitMask clean = remove_dead_ends(m, mask);
    const Tensor batch = Tensor::stack(random_images(i, m.input_shape(), 4));
    const ActivationTrace a = forward_trace(m, batch, &mask), b = forward_trace(m, batch, &clean);
    bool same = true;
    const std::size_t plane = a.at(0, tl).size() / m.output_shape(tl)[0];
    for (std::size_t n = 0; n < 4; ++n) {
      for (std::size_t j = 0; j < plane; ++j) {
        same = same && a.at(n, tl)[t.channel * plane + j] == b.at(n, tl)[t.channel * plane + j];
      }
    }
    preserved += same;
    idempotent += remove_dead_ends(m, clean) == clean;
    bounded += effective_sparsity(m, mask) <= mask.sparsity;
    shrunk += clean.kept.size() < mask.kept.size();
  }
  return {preserved == 100 && idempotent == 100 && bounded == 100,
          fmt("function preserved %zu/100, idempotent %zu/100, effective <= nominal %zu/100 (%zu masks had dead ends)",
              preserved, idempotent, bounded, shrunk)};
}

// 7 -------------------------------------------------------------------------

Outcome disconnect_convention() {
  std::size_t masks = 0, detected = 0, zero = 0, controls = 0;
  for (std::uint64_t seed = 1; masks < 30; ++seed) {
    const ModelGraph m = random_chain_model(5000 + seed, {.max_conv_layers = 4});
    const auto convs = m.conv_layers();
    if (convs.size() < 2) continue;
    const FeatureTarget t = FeatureTarget::sum_abs(m.layer(convs.back()).name, 0);
    const auto rel = relevant_kernel_indices(m, t);
    const auto images = random_images(seed, m.input_shape(), 6);
    for (std::size_t cut : convs) {
      std::vector<std::size_t> kept;
      for (std::size_t k : rel)
        if (m.locate_kernel(k).layer != cut) kept.push_back(k);
      for (BiasMode mode : {BiasMode::masked, BiasMode::pruned}) {
        const std::vector<CircuitMask> ms{keep_all(m, t, mode), make_mask(m, t, kept, mode)};
        SweepOptions o;
        o.bias_mode = mode;
        o.metric = MetricKind::pearson_abs;
        const std::vector<double> sp{1.0, ms[1].sparsity};
        const PreservationReport r = evaluate_sweep(m, t, o, sp, ms, images);
        ++masks;
        detected += !check_connected(m, ms[1]) && !r.entries[1].connected;
        zero += r.entries[1].metric == 0.0;
        controls += check_connected(m, ms[0]) && r.entries[0].connected;
      }
    }
  }
  return {detected == masks && zero == masks && controls == masks,
          fmt("%zu layer-cut masks: detected %zu, |R| = 0 recorded %zu; keep-all controls connected %zu", masks,
              detected, zero, controls)};
}

// 8 -------------------------------------------------------------------------

Outcome bias_modes() {
  const auto sps = parse_sparsity_list("1:0.01:log9");
  double worst_hi = 0, worst_lo = 0;
  bool evaluable = true;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    for (double l1 : {0.0, 0.002}) {
      const ToyRun& run = toy(seed, l1);
      const std::vector<Tensor> images(run.data.images.begin(), run.data.images.begin() + 40);
      for (std::size_t ch = 0; ch < 12; ++ch) {
        SweepOptions a, b;
        a.bias_mode = BiasMode::masked;
        b.bias_mode = BiasMode::pruned;
        a.metric = b.metric = MetricKind::pearson_abs;
        const FeatureTarget t = FeatureTarget::sum_abs("conv4", ch);
        const auto ra = sparsity_sweep(run.model, t, a, sps, images);
        const auto rb = sparsity_sweep(run.model, t, b, sps, images);
        evaluable = evaluable && ra.entries.size() == sps.size() && rb.entries.size() == sps.size();
        for (std::size_t i = 0; i < std::min(ra.entries.size(), rb.entries.size()); ++i) {
          evaluable = evaluable && std::isfinite(ra.entries[i].metric) && std::isfinite(rb.entries[i].metric);
          const double d = std::abs(ra.entries[i].metric - rb.entries[i].metric);
          (sps[i] >= 0.1 - 1e-12 ? worst_hi : worst_lo) = std::max(sps[i] >= 0.1 - 1e-12 ? worst_hi : worst_lo, d);
        }
      }
    }
  }
  return {evaluable && worst_hi < 0.05,
          fmt("max |dR| %.4f at sparsity >= 0.1, %.4f below; both modes evaluable: %s", worst_hi, worst_lo,
              evaluable ? "yes" : "no")};
}

// 9 -------------------------------------------------------------------------

Outcome hdbscan_fidelity() {
  std::ifstream in(std::string(CIRCUITS_TEST_DATA_DIR) + "/hdbscan_reference.json");
  if (!in) return {false, "reference data missing"};
  const nlohmann::json ref = nlohmann::json::parse(in);
  bool ok = ref["datasets"].size() == 5;
  std::string rows;
  for (const auto& ds : ref["datasets"]) {
    const auto& rows_json = ds["points"];
    Tensor pts(Shape{rows_json.size(), rows_json[0].size()});
    for (std::size_t i = 0; i < rows_json.size(); ++i)
      for (std::size_t j = 0; j < rows_json[i].size(); ++j) pts.at(i, j) = rows_json[i][j].get<double>();
    const ClusterResult r = hdbscan(pts, 10);
    const double ari = adjusted_rand_index(r.labels, ds["labels"].get<std::vector<int>>());
    std::map<int, std::size_t> sizes;
    for (int l : r.labels)
      if (l >= 0) ++sizes[l];
    std::size_t smallest = r.labels.size();
    for (const auto& [l, n] : sizes) smallest = std::min(smallest, n);
    ok = ok && ari > 0.9 && smallest >= 10;
    rows += fmt(" %s=%.3f", ds["name"].get<std::string>().c_str(), ari);
  }
  return {ok, "ARI" + rows};
}

// 10 ------------------------------------------------------------------------

Outcome subcircuit_separability() {
  const ModelGraph m = planted_line_model(1);
  const auto A = line_images(11, true, 20), B = line_images(12, false, 20);
  const auto sps = parse_sparsity_list("1:0.04:log12");
  const FeatureTarget t = FeatureTarget::sum_abs("conv3", 0);
  const SubcircuitReport r = subcircuit_separation(m, t, A, B, sps);

  auto separated = [](const PreservationReport& own, const PreservationReport& other, double& at) {
    for (std::size_t i = 0; i < own.entries.size(); ++i) {
      if (own.entries[i].metric < 0.15 && other.entries[i].metric > 0.5) {
        at = own.entries[i].sparsity;
        return true;
      }
    }
    return false;
  };
  double sa = -1, sb = -1;
  const bool a_ok = separated(r.a_on_a, r.a_on_b, sa), b_ok = separated(r.b_on_b, r.b_on_a, sb);

  std::vector<Tensor> all = A;
  all.insert(all.end(), B.begin(), B.end());
  std::mt19937_64 rng(5);
  std::shuffle(all.begin(), all.end(), rng);
  const std::vector<Tensor> r1(all.begin(), all.begin() + 20), r2(all.begin() + 20, all.end());
  const SubcircuitReport c = subcircuit_separation(m, t, r1, r2, sps);
  double gap = 0;
  for (std::size_t i = 0; i < c.a_on_a.entries.size(); ++i) {
    gap = std::max(gap, std::abs(c.a_on_a.entries[i].metric - c.a_on_b.entries[i].metric));
    gap = std::max(gap, std::abs(c.b_on_b.entries[i].metric - c.b_on_a.entries[i].metric));
  }
  std::string iou;
  for (const LayerIou& l : r.iou) iou += fmt(" %s=%.3f", l.layer.c_str(), l.iou);
  return {a_ok && b_ok && gap < 0.1 && !r.iou.empty(),
          fmt("A separates at s=%.3f, B at s=%.3f; random split max own/other gap %.3f; IoU", sa, sb, gap) + iou};
}

// 11 ------------------------------------------------------------------------

Outcome regularizer() {
  double worst = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Tensor w = random_image(6000 + seed, Shape{4, 3, 3, 3});
    for (double& v : w.values())
      if (std::abs(v) < 0.05) v = v < 0 ? -0.05 : 0.05;
    const Tensor gg = reg_group_l12_gradient(w), gl = reg_l1_gradient(w);
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double keep = w[i], h = 1e-6;
      w[i] = keep + h;
      const double g_up = reg_group_l12(w), l_up = reg_l1(w);
      w[i] = keep - h;
      const double g_dn = reg_group_l12(w), l_dn = reg_l1(w);
      w[i] = keep;
      worst = std::max(worst, relative_error(gg[i], (g_up - g_dn) / (2 * h)));
      worst = std::max(worst, relative_error(gl[i], (l_up - l_dn) / (2 * h)));
    }
  }
  std::size_t wins = 0;
  std::string rows;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const std::size_t plain = count_small_kernels(toy(seed, 0.0).model);
    const std::size_t sparse = count_small_kernels(toy(seed, 0.002).model);
    wins += sparse > plain;
    rows += fmt(" seed %llu: %zu vs %zu;", static_cast<unsigned long long>(seed), sparse, plain);
  }
  return {worst < 1e-4 && wins == 3,
          fmt("max rel err %.2e; small kernels (lambda1 0.002 vs 0):", worst) + rows};
}

// 12 ------------------------------------------------------------------------

Outcome probe_generators() {
  // Stimuli inside the receptive field, and surface cells against single evaluations.
  ModelGraph m = ModelGraph::build({LayerSpec::input("input", 2, 24, 24), LayerSpec::conv("conv1", "input", 3, 7),
                                    LayerSpec::relu("relu1", "conv1"), LayerSpec::conv("conv2", "relu1", 2, 7)});
  m.initialize(12);
  const FeatureTarget t = FeatureTarget::unit("conv2", 1, {6, 6});
  const Rect rf = receptive_rect(m, 3, {6, 6});
  std::size_t stimuli = 0, inside = 0, cells = 0, exact = 0;
  const auto all = relevant_kernel_indices(m, t);
  std::vector<std::size_t> half;
  for (std::size_t i = 0; i < all.size(); i += 2) half.push_back(all[i]);
  const CircuitMask mask = make_mask(m, t, half);
  for (ProbeKind kind : {ProbeKind::arc, ProbeKind::corner}) {
    ProbeSpec spec;
    spec.kind = kind;
    spec.canvas_height = spec.canvas_width = 24;
    spec.radii = kind == ProbeKind::arc ? std::vector<double>{0, 1.5, 3, 4} : std::vector<double>{1, 2, 3};
    for (int a = 0; a < 360; a += 30) spec.rotations.push_back(a);
    for (const CircuitMask* mk : {static_cast<const CircuitMask*>(nullptr), &mask}) {
      ActivationSurface s;
      try {
        s = activation_surface(m, t, spec, mk);
      } catch (const std::exception& e) {
        return {false, std::string("surface rejected a stimulus: ") + e.what()};
      }
      ProbeSpec local = spec;
      local.channels = 2;
      local.center = Point{rf.left + rf.width / 2.0, rf.top + rf.height / 2.0};
      for (std::size_t i = 0; i < spec.radii.size(); ++i) {
        for (std::size_t j = 0; j < spec.rotations.size(); ++j) {
          const Tensor img = generate_probe(local, spec.radii[i], spec.rotations[j]);
          bool in = true;
          for (std::int64_t y = 0; y < 24; ++y)
            for (std::int64_t x = 0; x < 24; ++x) {
              const bool ink = img.at(0, y, x) != local.background;
              in = in && (!ink || (y >= rf.top && y < rf.top + rf.height && x >= rf.left && x < rf.left + rf.width));
            }
          ++stimuli;
          inside += in;
          const Tensor batch = Tensor::stack(std::vector<Tensor>{img});
          ++cells;
          exact += s.values[i][j] == forward_trace(m, batch, mk).at(0, 3).at(1, 6, 6);
        }
      }
    }
  }

  // Arc point reflection through the canvas center.
  std::size_t arcs = 0, reflected = 0;
  ProbeSpec arc;
  arc.kind = ProbeKind::arc;
  for (double r : {1.0, 2.5, 4.0, 6.0}) {
    for (double phi : {0.0, 17.0, 45.0, 90.0, 133.5, 200.0, 290.0}) {
      const Tensor a = generate_probe(arc, r, phi), b = generate_probe(arc, r, phi + 180);
      bool same = true;
      for (std::size_t i = 0; i < 16; ++i)
        for (std::size_t j = 0; j < 16; ++j) same = same && a.at(0, i, j) == b.at(0, 15 - i, 15 - j);
      ++arcs;
      reflected += same;
    }
  }

  // Corner turned by 90 degrees equals the corner with one edge moved, shifted.
  std::size_t corners = 0, shifted_ok = 0;
  ProbeSpec corner;
  corner.kind = ProbeKind::corner;
  corner.canvas_height = corner.canvas_width = 24;
  for (double r : {3.0, 4.0}) {
    for (double phi : {45.0, 135.0, 225.0, 315.0}) {
      const Point u = direction(phi - 45);
      const double sx = r * u.x, sy = r * u.y;
      auto edges = corner_segments(corner, r, phi);
      edges[0] = Segment{{edges[0].a.x - sx, edges[0].a.y - sy}, {edges[0].b.x - sx, edges[0].b.y - sy}};
      const Tensor moved = render_segments(corner, edges);
      const Tensor rotated = generate_probe(corner, r, phi + 90);
      const long dx = std::lround(sx), dy = std::lround(sy);
      bool same = true;
      for (long i = 0; i < 24; ++i)
        for (long j = 0; j < 24; ++j) {
          const long si = i - dy, sj = j - dx;
          const double want = (si < 0 || sj < 0 || si >= 24 || sj >= 24) ? 0.0 : rotated.at(0, si, sj);
          same = same && moved.at(0, i, j) == want;
        }
      ++corners;
      shifted_ok += same;
    }
  }
  return {inside == stimuli && exact == cells && reflected == arcs && shifted_ok == corners,
          fmt("inside RF %zu/%zu, arc reflection %zu/%zu, corner shift %zu/%zu, surface cells bit-exact %zu/%zu",
              inside, stimuli, reflected, arcs, shifted_ok, corners, exact, cells)};
}

// 13 ------------------------------------------------------------------------

nlohmann::json parse_with_pydot(const std::string& dot, std::size_t index) {
  const auto path = std::filesystem::temp_directory_path() / ("circuits_acceptance_" + std::to_string(index) + ".dot");
  std::ofstream(path) << dot;
  const std::string cmd = std::string(CIRCUITS_PYTHON) + " " + CIRCUITS_TEST_SCRIPTS_DIR + "/check_dot.py " +
                          path.string() + " 2>/dev/null";
  std::string out;
  if (FILE* p = popen(cmd.c_str(), "r")) {
    char buf[4096];
    std::size_t n;
    while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) out.append(buf, n);
    pclose(p);
  }
  std::filesystem::remove(path);
  const auto j = nlohmann::json::parse(out, nullptr, false);
  return j.is_discarded() ? nlohmann::json{{"ok", false}} : j;
}

Outcome diagram_export() {
  std::size_t circuits = 0, parsed = 0, counts = 0, endpoints = 0, spread = 0;
  for (std::uint64_t seed = 1; circuits < 20; ++seed) {
    const ModelGraph m = random_chain_model(7000 + seed);
    const FeatureTarget t = FeatureTarget::sum_abs(m.layer(m.conv_layers().back()).name, 0);
    const auto images = random_images(seed, m.input_shape(), 4);
    const SaliencyMap s = score_actgrad(m, t, images);
    const CircuitMask mask = select_topk(m, s, 0.3 + 0.05 * static_cast<double>(seed % 10));
    const CircuitMask clean = cleanup_for_diagram(m, mask);
    if (clean.kept.empty()) continue;
    ++circuits;
    const DiagramGraph g = build_diagram(m, mask, &s);
    const nlohmann::json j = parse_with_pydot(diagram_to_dot(g), seed);
    if (!j.value("ok", false)) continue;
    ++parsed;
    const auto& edges = j["edges"];
    counts += edges.size() == clean.kept.size();

    double lo = 1e300, hi = -1e300;
    for (const DiagramEdge& e : g.edges) {
      lo = std::min(lo, e.saliency);
      hi = std::max(hi, e.saliency);
    }
    bool ok = true;
    for (std::size_t i = 0; i < g.edges.size() && i < edges.size(); ++i) {
      const double w = edges[i]["penwidth"].get<double>();
      ok = ok && w >= kMinPenWidth && w <= kMaxPenWidth;
      if (g.edges[i].saliency == hi) ok = ok && w == 5.0;
      if (g.edges[i].saliency == lo && lo < hi) ok = ok && w == 0.5;
    }
    spread += lo < hi;
    endpoints += ok;
  }
  return {parsed == 20 && counts == 20 && endpoints == 20 && spread > 0,
          fmt("pydot parsed %zu/20, edges == cleaned kept %zu/20, pen-width endpoints exact %zu/20 (%zu with a "
              "saliency spread)",
              parsed, counts, endpoints, spread)};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient correctness", gradient_check},
      {"keep-all identity", keep_all_identity},
      {"FORCE schedule", force_schedule_exact},
      {"criterion ordering", criterion_ordering},
      {"tiny-net oracle", tiny_net_oracle},
      {"dead-end removal", dead_end_removal},
      {"disconnect convention", disconnect_convention},
      {"bias masked vs pruned", bias_modes},
      {"HDBSCAN fidelity", hdbscan_fidelity},
      {"subcircuit separability", subcircuit_separability},
      {"regularizer", regularizer},
      {"probe generators", probe_generators},
      {"diagram export", diagram_export},
  };
  std::size_t failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    const auto t0 = Clock::now();
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %2zu %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
