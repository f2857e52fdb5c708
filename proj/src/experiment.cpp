#include "adabatch/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "adabatch/checkpoint.hpp"
#include "adabatch/error.hpp"

namespace adabatch {

template <class T>
Experiment<T>::Experiment(RunConfig config) : config_(std::move(config)) {
  config_.validate();
  auto [train, test] = materialize_dataset(config_);
  train_ = std::move(train);
  test_ = std::move(test);
  Rng init(init_seed(config_));
  net_ = Network<T>::build(config_.input, config_.layers, init);
  opt_ = SgdState<T>(config_.optimizer);
  rng_ = Rng(shuffle_seed(config_));
}

template <class T>
Experiment<T>::Experiment(RunConfig config, Dataset train, Dataset test)
    : config_(std::move(config)), train_(std::move(train)), test_(std::move(test)) {
  config_.validate();
  Rng init(init_seed(config_));
  net_ = Network<T>::build(config_.input, config_.layers, init);
  opt_ = SgdState<T>(config_.optimizer);
  rng_ = Rng(shuffle_seed(config_));
}

template <class T>
std::vector<EpochLog> Experiment<T>::run(TrainOptions options) {
  options.start_epoch = next_epoch_;
  options.eval_batch = config_.eval_batch;
  auto user = std::move(options.on_epoch);
  options.on_epoch = [this, &user](const EpochLog& log) {
    next_epoch_ = log.epoch + 1;
    if (user) user(log);
  };
  return run_training(net_, train_, test_, config_.schedule, opt_, rng_, options);
}

template <class T>
void Experiment<T>::save(const std::filesystem::path& path) {
  save_checkpoint(path, net_, opt_, rng_, next_epoch_);
}

template <class T>
void Experiment<T>::resume(const std::filesystem::path& path) {
  const auto next = load_checkpoint(path, net_, opt_, rng_);
  if (next > config_.schedule.total_epochs) {
    throw FormatError("checkpoint epoch " + std::to_string(next) + " is beyond the schedule");
  }
  next_epoch_ = static_cast<std::size_t>(next);
}

template class Experiment<float>;
template class Experiment<double>;

// ---------------------------------------------------------------------------
// Bundled desk-scale plans

namespace {

RunConfig desk_base() {
  RunConfig c;
  c.seed = 20180206;
  c.output_dir = "runs/repro";
  c.eval_batch = 600;
  c.input = SampleShape{1, 15, 15};
  LayerSpec conv1{LayerKind::conv, 8, 3, 3, 2, 2, Activation::relu};
  LayerSpec conv2{LayerKind::conv, 16, 3, 3, 2, 2, Activation::identity};
  LayerSpec bn{LayerKind::bn, 0, 1, 1, 1, 1, Activation::relu};
  LayerSpec fc{LayerKind::fc, 10, 1, 1, 1, 1, Activation::identity};
  c.layers = {conv1, conv2, bn, fc};
  c.dataset.kind = "synth";
  c.dataset.classes = 10;
  c.dataset.per_class = 300;
  c.dataset.spread = 0.8;
  c.dataset.radius = 2.0;
  c.optimizer.momentum = 0.9;
  c.optimizer.weight_decay = 5e-4;
  c.schedule.base_lr = 0.01;
  c.schedule.total_epochs = 30;
  c.schedule.interval_epochs = 6;
  return c;
}

ReproArm arm(std::string name, RunConfig c, std::size_t r0, std::size_t beta, double d) {
  c.schedule.base_batch = r0;
  c.schedule.batch_multiplier = beta;
  c.schedule.lr_decay = d;
  c.output_dir += "/" + name;
  return {std::move(name), std::move(c)};
}

ReproPlan fig1(RunConfig base, std::string id) {
  ReproPlan p;
  p.id = std::move(id);
  p.description = "adaptive batch 16->256 (decay 0.75, x2 every 6 epochs) vs fixed 16 and fixed 256 "
                  "(decay 0.375)";
  p.arms.push_back(arm("fixed-small", base, 16, 1, 0.375));
  p.arms.push_back(arm("fixed-large", base, 256, 1, 0.375));
  p.arms.push_back(arm("adaptive", base, 16, 2, 0.75));
  return p;
}

ReproPlan fig3() {
  RunConfig base = desk_base();
  base.schedule.warmup_epochs = 5;
  base.schedule.warmup_ref_batch = 16;
  base.schedule.base_lr = 0.0125;
  ReproPlan p;
  p.id = "fig3-desk";
  p.description = "5-epoch warmup to 4x the base rate; adaptive 64->1024 (decay 0.5, x2 every 6 "
                  "epochs) vs fixed 64 and fixed 1024 (decay 0.25)";
  p.arms.push_back(arm("fixed-small", base, 64, 1, 0.25));
  p.arms.push_back(arm("fixed-large", base, 1024, 1, 0.25));
  p.arms.push_back(arm("adaptive", base, 64, 2, 0.5));
  return p;
}

ReproPlan fig7() {
  RunConfig base = desk_base();
  base.schedule.interval_epochs = 10;
  base.schedule.micro_batch_cap = 64;
  base.schedule.base_lr = 0.005;
  ReproPlan p;
  p.id = "fig7-desk";
  p.description = "batch 8 grown x2, x4, x8 every 10 epochs with learning-rate decay 0.2, 0.4, 0.8; "
                  "micro-batches of at most 64 accumulated per step";
  p.arms.push_back(arm("beta2", base, 8, 2, 0.2));
  p.arms.push_back(arm("beta4", base, 8, 4, 0.4));
  p.arms.push_back(arm("beta8", base, 8, 8, 0.8));
  return p;
}

ReproPlan fig1_cifar(const std::filesystem::path& dir) {
  RunConfig base = desk_base();
  base.input = SampleShape{3, 32, 32};
  base.layers[0].k1 = base.layers[0].k2 = 4;  // 32 -> 15 -> 7
  base.dataset.kind = "cifar10";
  for (int i = 1; i <= 5; ++i)
    base.dataset.train_files.push_back((dir / ("data_batch_" + std::to_string(i) + ".bin")).string());
  base.dataset.test_files.push_back((dir / "test_batch.bin").string());
  base.dataset.subset = 2000;
  base.dataset.test_subset = 1000;
  return fig1(base, "fig1-cifar");
}

bool logs_share_effective_lr(const std::vector<EpochLog>& a, const std::vector<EpochLog>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t e = 0; e < a.size(); ++e) {
    const double x = a[e].effective_lr, y = b[e].effective_lr;
    if (std::abs(x - y) > 1e-15 * std::max(std::abs(x), std::abs(y))) return false;
  }
  return true;
}

const ArmResult* find_arm(const std::vector<ArmResult>& results, const std::string& name) {
  for (const auto& r : results)
    if (r.name == name) return &r;
  return nullptr;
}

}  // namespace

std::vector<std::string> repro_ids() { return {"fig1-desk", "fig3-desk", "fig7-desk", "fig1-cifar"}; }

ReproPlan repro_plan(const std::string& id, const std::filesystem::path& data_dir) {
  if (id == "fig1-desk") return fig1(desk_base(), id);
  if (id == "fig3-desk") return fig3();
  if (id == "fig7-desk") return fig7();
  if (id == "fig1-cifar") {
    return fig1_cifar(data_dir.empty() ? std::filesystem::path("data/cifar-10-batches-bin") : data_dir);
  }
  std::string ids;
  for (const auto& k : repro_ids()) ids += (ids.empty() ? "" : ", ") + k;
  throw ConfigError("unknown figure id '" + id + "'; valid ids: " + ids);
}

double mean_epoch_seconds(const std::vector<EpochLog>& logs, std::size_t r) {
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& l : logs) {
    if (l.batch_size == r) {
      total += l.wall_seconds;
      ++n;
    }
  }
  return n ? total / static_cast<double>(n) : 0.0;
}

bool ReproSummary::pass() const {
  return std::all_of(verdicts.begin(), verdicts.end(),
                     [](const ReproVerdict& v) { return v.pass || !v.gating; });
}

ReproSummary summarize_repro(const ReproPlan& plan, const std::vector<ArmResult>& results) {
  ReproSummary s;
  std::ostringstream out;
  out << plan.id << ": " << plan.description << "\n";
  for (const auto& r : results) {
    out << "  " << r.name << ": final test error " << format_real(r.final_error()) << "%\n";
  }
  auto verdict = [&](std::string label, bool ok, bool gating) {
    out << "  " << (ok ? "PASS" : (gating ? "FAIL" : "NOTE")) << "  " << label << "\n";
    s.verdicts.push_back({std::move(label), ok, gating});
  };

  const auto* small = find_arm(results, "fixed-small");
  const auto* large = find_arm(results, "fixed-large");
  const auto* adaptive = find_arm(results, "adaptive");
  if (small && large && adaptive) {
    const double gap = adaptive->final_error() - small->final_error();
    verdict("adaptive vs fixed-small gap " + format_real(gap) + " pp (|gap| <= 2)",
            std::abs(gap) <= 2.0, plan.id != "fig3-desk");
    verdict("fixed-large error " + format_real(large->final_error()) + "% >= adaptive " +
                format_real(adaptive->final_error()) + "%",
            large->final_error() >= adaptive->final_error(), plan.id != "fig3-desk");
    verdict("adaptive and fixed-small share the effective learning-rate trajectory",
            effective_equivalent(adaptive->schedule, small->schedule) &&
                logs_share_effective_lr(adaptive->logs, small->logs),
            true);
    const std::size_t r_first = adaptive->logs.empty() ? 0 : adaptive->logs.front().batch_size;
    const std::size_t r_last = adaptive->logs.empty() ? 0 : adaptive->logs.back().batch_size;
    const double t_first = mean_epoch_seconds(adaptive->logs, r_first);
    const double t_last = mean_epoch_seconds(adaptive->logs, r_last);
    verdict("epoch wall time at r=" + std::to_string(r_last) + " " + format_real(t_last) +
                " s <= at r=" + std::to_string(r_first) + " " + format_real(t_first) + " s",
            t_last <= t_first, false);
  } else {
    for (std::size_t i = 0; i + 1 < results.size(); ++i) {
      for (std::size_t j = i + 1; j < results.size(); ++j) {
        verdict(results[i].name + " and " + results[j].name +
                    " share the effective learning-rate trajectory",
                effective_equivalent(results[i].schedule, results[j].schedule) &&
                    logs_share_effective_lr(results[i].logs, results[j].logs),
                true);
      }
    }
  }
  s.text = out.str();
  return s;
}

}  // namespace adabatch
