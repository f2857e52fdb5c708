// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>

#include "adabatch/checkpoint.hpp"
#include "adabatch/experiment.hpp"
#include "adabatch/layers.hpp"
#include "adabatch/parallel.hpp"
#include "support/oracles.hpp"

using namespace adabatch;
using oracle::random_tensor;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(3);
  s << v;
  return s.str();
}

LayerSpec conv(std::size_t out, std::size_t k1, std::size_t k2, std::size_t s1, std::size_t s2,
               Activation act, bool tied = false) {
  LayerSpec l{LayerKind::conv, out, k1, k2, s1, s2, act};
  l.tied_bias = tied;
  return l;
}
LayerSpec fc(std::size_t out, Activation act = Activation::identity) {
  return LayerSpec{LayerKind::fc, out, 1, 1, 1, 1, act};
}
LayerSpec bn(Activation act) { return LayerSpec{LayerKind::bn, 0, 1, 1, 1, 1, act}; }

// ---------------------------------------------------------------------------

Verdict gradient_fidelity() {
  parallel::ThreadScope serial(1);
  struct Config {
    SampleShape input;
    std::vector<LayerSpec> layers;
    std::size_t batch;
  };
  const auto I = Activation::identity, R = Activation::relu, S = Activation::sigmoid,
             T = Activation::tanh;
  const std::vector<Config> configs = {
      {{4, 1, 1}, {fc(3)}, 3},
      {{6, 1, 1}, {fc(5, T), fc(4)}, 4},
      {{6, 1, 1}, {fc(5, S), fc(3)}, 3},
      {{5, 1, 1}, {fc(7, R), fc(5, T), fc(3)}, 5},
      {{6, 1, 1}, {fc(5), bn(T), fc(3)}, 4},
      {{6, 1, 1}, {fc(4), bn(S), fc(4, T), bn(I), fc(2)}, 6},
      {{1, 5, 5}, {conv(2, 3, 3, 1, 1, T), fc(3)}, 2},
      {{2, 5, 5}, {conv(3, 3, 3, 1, 1, S), fc(3)}, 3},
      {{3, 6, 5}, {conv(2, 2, 3, 1, 1, T, true), fc(4)}, 2},
      {{1, 7, 7}, {conv(2, 3, 3, 2, 2, T), fc(3)}, 2},
      {{2, 7, 7}, {conv(3, 3, 3, 2, 2, I), fc(3)}, 3},
      {{3, 9, 7}, {conv(2, 3, 3, 2, 2, S, true), fc(3)}, 2},
      {{1, 7, 7}, {conv(2, 4, 4, 3, 3, T), fc(3)}, 2},
      {{2, 10, 7}, {conv(2, 4, 4, 3, 3, S), fc(4)}, 3},
      {{3, 8, 8}, {conv(3, 2, 2, 3, 3, I, true), fc(3)}, 2},
      {{2, 7, 8}, {conv(2, 3, 2, 2, 3, T), fc(3)}, 2},
      {{1, 7, 7}, {conv(2, 3, 3, 2, 2, I), bn(T), fc(3)}, 4},
      {{2, 7, 7}, {conv(3, 3, 3, 2, 2, I), bn(S), fc(3)}, 3},
      {{2, 10, 10}, {conv(2, 4, 4, 3, 3, I), bn(T), fc(3)}, 4},
      {{1, 9, 9}, {conv(3, 3, 3, 2, 2, R), conv(2, 3, 3, 1, 1, I), bn(T), fc(4)}, 3},
      {{2, 9, 9}, {conv(2, 3, 3, 1, 1, T), conv(2, 3, 3, 2, 2, I, true), bn(S), fc(3)}, 4},
      {{3, 8, 8}, {conv(4, 2, 2, 2, 2, I), bn(R), conv(2, 2, 2, 1, 1, T), fc(5)}, 3},
      {{1, 15, 15}, {conv(4, 3, 3, 2, 2, R), conv(4, 3, 3, 2, 2, I), bn(R), fc(10)}, 4},
      {{2, 6, 6}, {conv(2, 3, 3, 3, 3, T), fc(6), bn(T), fc(3)}, 5},
  };
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string failed;
  for (std::size_t k = 0; k < configs.size(); ++k) {
    const auto& c = configs[k];
    Rng rng(1000 + k);
    auto net = Network<double>::build(c.input, c.layers, rng);
    const Tensor x = random_tensor({c.input.features(), c.batch}, rng);
    std::vector<Label> y(c.batch);
    for (auto& l : y) l = static_cast<Label>(rng.below(net.num_classes()));
    const auto rep = gradcheck(net, x, y, 1e-6);
    for (const auto& e : rep.tensors) {
      worst = std::max(worst, e.max_rel_error);
      if (!e.pass && failed.empty()) failed = "config " + std::to_string(k) + " " + e.name;
    }
  }
  const double secs = seconds_since(t0);
  const bool ok = failed.empty() && secs < 60.0;
  return {ok, std::to_string(configs.size()) + " configurations at tol 1e-6, worst rel " + fmt(worst) +
                  ", " + fmt(secs) + " s (limit 60)" + (failed.empty() ? "" : "; mismatch in " + failed)};
}

Verdict strided_selection() {
  Tensor w({6, 4});
  for (std::size_t g = 0; g < 6; ++g)
    for (std::size_t h = 0; h < 4; ++h) w(g, h) = 10.0 * (g + 1) + (h + 1);
  const Tensor got = stride_rotate_select(w, 3, 2);
  const bool ok = got == Tensor::matrix(2, 2, {43, 41, 13, 11});
  std::ostringstream s;
  s << "6x4 symbolic kernel, strides 3, 2 gives [[w" << got(0, 0) << ",w" << got(0, 1) << "],[w"
    << got(1, 0) << ",w" << got(1, 1) << "]]";
  return {ok, s.str()};
}

Verdict convolution_semantics() {
  parallel::ThreadScope serial(1);
  Rng rng(77);
  int exact = 0;
  const int trials = 120;
  for (int t = 0; t < trials; ++t) {
    const std::size_t k1 = 1 + rng.below(5), k2 = 1 + rng.below(5);
    const std::size_t s1 = 1 + rng.below(3), s2 = 1 + rng.below(3);
    const std::size_t m = k1 + s1 * rng.below(5), n = k2 + s2 * rng.below(5);
    const std::size_t r = 1 + rng.below(3), cin = 1 + rng.below(3), cout = 1 + rng.below(3);
    const bool tied = rng.below(2) == 1;
    const ConvGeometry g(m, n, k1, k2, s1, s2);
    const Tensor w = random_tensor({cout, cin, k1, k2}, rng);
    const Tensor b = tied ? random_tensor({cout, 1, 1}, rng)
                          : random_tensor({cout, g.out_rows(), g.out_cols()}, rng);
    const Tensor a = random_tensor({r, cin, m, n}, rng);
    ConvLayer<double> layer(g, w, b, Activation::identity, tied);
    if (layer.forward(a) == oracle::conv_direct(a, w, b, s1, s2)) ++exact;
  }
  // A single tap at w(1,1) of a 2x3 kernel selects the last input of the
  // window under a true convolution and the first under cross-correlation.
  const Tensor a = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  const Tensor tap = Tensor::matrix(2, 3, {1, 0, 0, 0, 0, 0});
  const Tensor flipped = conv2d_single(ConvGeometry(2, 3, 2, 3, 1, 1), tap, a);
  const Tensor sq = conv2d_single(ConvGeometry(2, 2, 2, 2, 1, 1), Tensor::matrix(2, 2, {1, 0, 0, 0}),
                                  Tensor::matrix(2, 2, {1, 2, 3, 4}));
  const bool discriminator = flipped == Tensor::matrix(1, 1, {6}) && sq == Tensor::matrix(1, 1, {4});
  return {exact == trials && discriminator,
          std::to_string(exact) + "/" + std::to_string(trials) +
              " random shapes bit-exact against the direct loops; flip discriminator " +
              (discriminator ? "[[6]], [[4]]" : "wrong")};
}

double max_param_diff(Network<double>& a, Network<double>& b) {
  double m = 0.0;
  auto pa = a.params(), pb = b.params();
  for (std::size_t k = 0; k < pa.size(); ++k) m = std::max(m, max_abs_diff(*pa[k].tensor, *pb[k].tensor));
  return m;
}

Verdict accumulation_exactness() {
  parallel::ThreadScope serial(1);
  const auto data = synth_blobs(3, 49, 40, 1.0, 5, 2.0, SampleShape{1, 7, 7});
  const std::size_t r = 64;
  std::vector<std::size_t> idx(r);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const std::vector<LayerSpec> specs = {conv(2, 3, 3, 2, 2, Activation::tanh), fc(3)};
  auto build = [&] {
    Rng rng(3);
    return Network<double>::build(SampleShape{1, 7, 7}, specs, rng);
  };
  double worst = 0.0;
  for (const SgdConfig cfg : {SgdConfig{}, SgdConfig{0.9, 5e-4}}) {
    Network<double> ref = build();
    SgdState<double> ref_opt(cfg);
    for (int step = 0; step < 3; ++step) train_step(ref, data.train, idx, 0.1, r, ref_opt);
    for (std::size_t cap : {std::size_t{1}, r / 4, r / 2}) {
      Network<double> net = build();
      SgdState<double> opt(cfg);
      for (int step = 0; step < 3; ++step) train_step(net, data.train, idx, 0.1, cap, opt);
      worst = std::max(worst, max_param_diff(net, ref));
    }
  }

  Rng rng(9);
  const auto cbf = Network<double>::build(
      SampleShape{1, 7, 7}, {conv(2, 3, 3, 2, 2, Activation::identity), bn(Activation::tanh), fc(3)}, rng);
  EquivalenceOptions o;
  o.batch = 8;
  o.beta = 4;
  o.steps = 16;
  o.lr = 0.05;
  o.constructed = true;
  o.seed = 11;
  o.optimizer = SgdConfig{0.9, 0.0};
  double constructed = 0.0;
  for (const auto& row : equivalence_experiment(cbf, data.train, o)) constructed = std::max(constructed, row.max_abs);

  return {worst < 1e-12 && constructed < 1e-10,
          "caps {1, r/4, r/2} vs r=64 max diff " + fmt(worst) + " (< 1e-12); constructed equivalence " +
              fmt(constructed) + " (< 1e-10)"};
}

AdaBatchSchedule make(double lr, std::size_t r0, std::size_t interval, double d, std::size_t beta,
                      std::size_t epochs) {
  AdaBatchSchedule s;
  s.base_lr = lr;
  s.base_batch = r0;
  s.interval_epochs = interval;
  s.lr_decay = d;
  s.batch_multiplier = beta;
  s.total_epochs = epochs;
  return s;
}

Verdict schedule_arithmetic() {
  std::vector<std::string> bad;
  if (!effective_equivalent(make(0.1, 128, 20, 0.75, 2, 100), make(0.1, 128, 20, 0.375, 1, 100)))
    bad.push_back("adaptive vs fixed 0.375");
  const auto a = make(0.1, 8, 10, 0.2, 2, 30), b = make(0.1, 8, 10, 0.4, 4, 30),
             c = make(0.1, 8, 10, 0.8, 8, 30);
  if (!(effective_equivalent(a, b) && effective_equivalent(b, c) && effective_equivalent(a, c)))
    bad.push_back("fig7 trio");
  const std::size_t end8 = make(0.1, 8192, 30, 1.0, 8, 90).batch_size_at(89);
  const std::size_t end4 = make(0.1, 16384, 30, 1.0, 4, 90).batch_size_at(89);
  if (end8 != 524288 || end4 != 262144) bad.push_back("endpoints");

  auto w = make(0.1, 8192, 30, 0.75, 1, 90);
  w.warmup_epochs = 5;
  w.warmup_ref_batch = 256;
  const std::size_t iters = 7;
  const double target = 0.1 * 8192.0 / 256.0;
  const double last = w.lr_at(4, iters - 1, iters), after = w.lr_at(5, 0, iters);
  const double rel = std::max(std::abs(last - target), std::abs(after - target)) / target;
  if (!(rel <= 1e-12)) bad.push_back("warmup terminal");

  std::string detail = "equivalences, endpoints " + std::to_string(end8) + " and " + std::to_string(end4) +
                       ", warmup terminal rel " + fmt(rel);
  for (const auto& x : bad) detail += "; wrong: " + x;
  return {bad.empty(), detail};
}

Verdict flops_invariance() {
  Rng rng(1);
  const auto net = Network<double>::build(
      SampleShape{1, 7, 7}, {conv(2, 3, 3, 2, 2, Activation::identity), bn(Activation::tanh), fc(3)}, rng);
  std::size_t checked = 0;
  bool ok = true;
  for (std::size_t n : {std::size_t{256}, std::size_t{96}}) {
    const auto ref = epoch_flops(net, n, 1);
    for (std::size_t r = 1; r <= n; ++r) {
      if (n % r != 0) continue;
      ok = ok && epoch_flops(net, n, r) == ref;
      ++checked;
    }
  }
  return {ok, "conv-BN-FC epoch totals equal over " + std::to_string(checked) +
                  " divisors of N = 256 and 96"};
}

bool logs_equal(const std::vector<EpochLog>& a, const std::vector<EpochLog>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!a[i].same_except_wall(b[i])) return false;
  return true;
}

Verdict desk_training() {
  const auto t0 = Clock::now();
  const ReproPlan plan = repro_plan("fig1-desk");
  TrainOptions opts;
  opts.eval_threads = parallel::threads_from_env();
  std::vector<ArmResult> results;
  for (const auto& arm : plan.arms) {
    Experiment<double> exp(arm.config);
    results.push_back({arm.name, arm.config.schedule, exp.run(opts)});
  }
  const auto summary = summarize_repro(plan, results);
  std::cerr << summary.text;

  const ReproArm& again_arm = plan.arms.back();
  Experiment<double> again(again_arm.config);
  const bool deterministic = logs_equal(again.run(opts), results.back().logs);
  const double secs = seconds_since(t0);

  std::string detail;
  for (const auto& v : summary.verdicts)
    detail += std::string(v.pass ? "ok" : (v.gating ? "FAILED" : "note")) + " [" + v.label + "]; ";
  detail += std::string("rerun of ") + again_arm.name + (deterministic ? " identical" : " DIFFERS") + "; " +
            fmt(secs) + " s (limit 600)";
  return {summary.pass() && deterministic && secs < 600.0, detail};
}

RunConfig tiny_config() {
  RunConfig c;
  c.seed = 17;
  c.input = SampleShape{1, 5, 5};
  c.layers = {conv(2, 3, 3, 2, 2, Activation::identity), bn(Activation::tanh), fc(3)};
  c.dataset.classes = 3;
  c.dataset.per_class = 20;
  c.optimizer = SgdConfig{0.9, 5e-4};
  c.schedule = make(0.05, 4, 2, 0.75, 2, 5);
  return c;
}

Verdict persistence() {
  oracle::TempDir dir("acceptance");
  Experiment<double> full(tiny_config());
  const auto all = full.run();
  full.save(dir / "final.ckpt");

  const auto bytes = read_bytes(dir / "final.ckpt");
  const bool codec = encode_checkpoint(decode_checkpoint(bytes)) == bytes;
  Experiment<double> reloaded(tiny_config());
  reloaded.resume(dir / "final.ckpt");
  reloaded.save(dir / "again.ckpt");
  const bool bitwise = codec && read_bytes(dir / "again.ckpt") == bytes;

  Experiment<double> head(tiny_config());
  TrainOptions stop;
  stop.on_epoch = [&](const EpochLog& l) {
    if (l.epoch == 1) head.save(dir / "epoch_2.ckpt");
  };
  head.run(stop);
  Experiment<double> resumed(tiny_config());
  resumed.resume(dir / "epoch_2.ckpt");
  const auto tail = resumed.run();
  bool same = tail.size() + 2 == all.size();
  for (std::size_t i = 0; same && i < tail.size(); ++i) same = tail[i].same_except_wall(all[i + 2]);
  resumed.save(dir / "resumed.ckpt");
  same = same && read_bytes(dir / "resumed.ckpt") == bytes;

  return {bitwise && same, std::string("checkpoint round trip ") + (bitwise ? "bitwise" : "LOSSY") +
                               "; resume from epoch 2 " + (same ? "reproduces" : "DIVERGES FROM") +
                               " the uninterrupted logs and final state"};
}

}  // namespace

int main() {
  const std::pair<const char*, std::function<Verdict()>> criteria[] = {
      {"AC1 gradient fidelity", gradient_fidelity},
      {"AC2 strided kernel selection", strided_selection},
      {"AC3 convolution semantics", convolution_semantics},
      {"AC4 accumulation exactness", accumulation_exactness},
      {"AC5 schedule arithmetic", schedule_arithmetic},
      {"AC6 flops per epoch", flops_invariance},
      {"AC7 desk-scale training", desk_training},
      {"AC8 determinism and persistence", persistence},
  };
  int failures = 0;
  for (const auto& [name, check] : criteria) {
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    if (!v.pass) ++failures;
    std::cout << (v.pass ? "PASS " : "FAIL ") << name << ": " << v.detail << std::endl;
  }
  std::cout << (failures ? "ACCEPTANCE FAILED" : "ACCEPTANCE PASSED") << " (" << 8 - failures << "/8)\n";
  return failures ? 1 : 0;
}
