#include "adabatch/cli.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "adabatch/checkpoint.hpp"
#include "adabatch/error.hpp"
#include "adabatch/experiment.hpp"
#include "adabatch/parallel.hpp"

namespace adabatch::cli {

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  double tol = 1e-6;
  std::size_t beta = 2;
  std::size_t steps = 8;
  std::optional<double> lr;
  std::size_t batch = 4;
  std::string compare;
  bool constructed = false;
  bool deterministic_check = false;
  bool corrupt_backward = false;
  std::string resume;
  std::size_t checkpoint_every = 0;
  std::string figure;
  std::string data_dir;
};

RunConfig load(const Options& o) {
  if (o.config.empty()) throw ConfigError("--config is required");
  RunConfig c = load_config(o.config);
  if (o.seed) c.seed = *o.seed;
  if (!o.out.empty()) c.output_dir = o.out;
  return c;
}

fs::path output_dir(const RunConfig& c) {
  fs::path dir(c.output_dir);
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write " + path.string());
  f << text;
  if (!f) throw DataError("write failed: " + path.string());
}

std::string epoch_csv(const std::vector<EpochLog>& logs, bool wall) {
  std::ostringstream s;
  write_epoch_csv(s, logs, wall);
  return s.str();
}

// ---------------------------------------------------------------------------

template <class T>
std::vector<EpochLog> train_once(const RunConfig& c, const Options& o, std::ostream& err,
                                 const fs::path* save_dir) {
  Experiment<T> exp(c);
  if (!o.resume.empty()) {
    exp.resume(o.resume);
    err << "resumed from " << o.resume << " at epoch " << exp.next_epoch() << "\n";
  }
  TrainOptions opts;
  opts.eval_threads = parallel::threads_from_env();
  opts.on_epoch = [&](const EpochLog& log) {
    err << "epoch " << log.epoch << " r=" << log.batch_size << " lr=" << format_real(log.lr)
        << " loss=" << format_real(log.train_loss) << " test_error=" << format_real(log.test_error)
        << "%\n";
    if (save_dir && o.checkpoint_every > 0 && (log.epoch + 1) % o.checkpoint_every == 0) {
      exp.save(*save_dir / ("epoch_" + std::to_string(log.epoch + 1) + ".ckpt"));
    }
  };
  auto logs = exp.run(opts);
  if (save_dir) exp.save(*save_dir / "final.ckpt");
  return logs;
}

template <class T>
int cmd_train_typed(const RunConfig& c, const Options& o, std::ostream& out, std::ostream& err) {
  const fs::path dir = output_dir(c);
  const auto logs = train_once<T>(c, o, err, &dir);
  write_text(dir / "log.csv", epoch_csv(logs, true));
  {
    std::ostringstream s;
    write_schedule_csv(s, expand(c.schedule, planned_train_size(c)));
    write_text(dir / "schedule.csv", s.str());
  }
  write_text(dir / "config.json", serialize_config(c));
  if (!logs.empty()) out << "final test error: " << format_real(logs.back().test_error) << "%\n";

  if (o.deterministic_check) {
    const auto again = train_once<T>(c, o, err, nullptr);
    const bool same = epoch_csv(logs, false) == epoch_csv(again, false);
    out << "DETERMINISTIC: " << (same ? "yes" : "no") << "\n";
    return same ? kOk : kFailure;
  }
  return kOk;
}

int cmd_train(const Options& o, std::ostream& out, std::ostream& err) {
  const RunConfig c = load(o);
  return c.precision == "f32" ? cmd_train_typed<float>(c, o, out, err)
                              : cmd_train_typed<double>(c, o, out, err);
}

int cmd_schedule(const Options& o, std::ostream& out, std::ostream&) {
  const RunConfig c = load(o);
  write_schedule_csv(out, expand(c.schedule, planned_train_size(c)));
  if (!o.compare.empty()) {
    const RunConfig other = load_config(o.compare);
    const bool eq = effective_equivalent(c.schedule, other.schedule);
    out << (eq ? "EQUIVALENT" : "NOT EQUIVALENT") << "\n";
  }
  return kOk;
}

int cmd_gradcheck(const Options& o, std::ostream& out, std::ostream& err) {
  parallel::ThreadScope serial(1);
  const RunConfig c = load(o);
  Rng init(init_seed(c));
  auto net = Network<double>::build(c.input, c.layers, init);
  Rng data(data_seed(c));
  Tensor x({c.input.features(), o.batch});
  for (auto& v : x.data()) v = data.normal();
  std::vector<Label> labels(o.batch);
  for (auto& l : labels) l = static_cast<Label>(data.below(net.num_classes()));

  testing::set_corrupt_backward(o.corrupt_backward);
  const auto report = gradcheck(net, x, labels, o.tol);
  testing::set_corrupt_backward(false);

  out << "tensor,max_rel_error,max_abs_error,verdict\n";
  for (const auto& e : report.tensors) {
    out << e.name << ',' << format_real(e.max_rel_error) << ',' << format_real(e.max_abs_error)
        << ',' << (e.pass ? "PASS" : "FAIL") << "\n";
    if (!e.pass) err << "gradient mismatch in " << e.name << "\n";
  }
  out << "GRADCHECK " << (report.pass ? "PASS" : "FAIL") << " (tol " << format_real(o.tol) << ")\n";
  return report.pass ? kOk : kFailure;
}

int cmd_flops(const Options& o, std::ostream& out, std::ostream&) {
  const RunConfig c = load(o);
  const std::size_t n = planned_train_size(c);
  Rng init(init_seed(c));
  const auto net = Network<double>::build(c.input, c.layers, init);
  const auto rows = expand(c.schedule, n);
  std::vector<std::size_t> sizes;
  for (const auto& r : rows)
    if (sizes.empty() || sizes.back() != r.batch_size) sizes.push_back(r.batch_size);

  out << "batch_size,layer,forward,backward\n";
  for (std::size_t r : sizes)
    for (const auto& l : net.layer_flops(r))
      out << r << ',' << l.name << ',' << l.forward << ',' << l.backward << "\n";
  out << "\nbatch_size,iterations,epoch_forward,epoch_backward,divides_n\n";
  std::optional<EpochFlops> ref;
  bool invariant = true;
  for (std::size_t r : sizes) {
    const auto f = epoch_flops(net, n, r);
    const bool divides = n % r == 0;
    out << r << ',' << (n + r - 1) / r << ',' << f.forward << ',' << f.backward << ','
        << (divides ? 1 : 0) << "\n";
    if (!divides) continue;
    if (!ref) ref = f;
    invariant = invariant && f == *ref;
  }
  out << "EPOCH FLOPS INVARIANT: " << (invariant ? "yes" : "no") << "\n";
  return invariant ? kOk : kFailure;
}

int cmd_equiv(const Options& o, std::ostream& out, std::ostream& err) {
  parallel::ThreadScope serial(1);
  const RunConfig c = load(o);
  const auto [train, test] = materialize_dataset(c);
  Rng init(init_seed(c));
  const auto net = Network<double>::build(c.input, c.layers, init);
  EquivalenceOptions eo;
  eo.batch = c.schedule.base_batch;
  eo.beta = o.beta;
  eo.steps = o.constructed && o.steps % o.beta != 0 ? o.beta * o.steps : o.steps;
  eo.lr = o.lr ? *o.lr : c.schedule.base_lr;
  eo.constructed = o.constructed;
  eo.seed = shuffle_seed(c);
  eo.optimizer = c.optimizer;
  if (o.constructed && eo.optimizer.weight_decay != 0.0) {
    err << "constructed mode: weight decay set to 0 (it scales with the learning rate)\n";
    eo.optimizer.weight_decay = 0.0;
  }
  const auto rows = equivalence_experiment(net, train, eo);

  std::ostringstream csv;
  write_equivalence_csv(csv, rows);
  const fs::path dir = output_dir(c);
  write_text(dir / "equiv.csv", csv.str());
  out << csv.str();

  double worst = 0.0;
  for (const auto& r : rows) worst = std::max(worst, r.max_abs);
  if (!o.constructed) {
    err << "general mode: distances reported, no assertion\n";
    return kOk;
  }
  const bool ok = worst < 1e-10;
  out << (ok ? "PASS" : "FAIL") << ": constructed max distance " << format_real(worst)
      << (ok ? " < " : " >= ") << "1e-10\n";
  return ok ? kOk : kFailure;
}

int cmd_repro(const Options& o, std::ostream& out, std::ostream& err) {
  const ReproPlan plan = repro_plan(o.figure, o.data_dir);
  const fs::path dir = o.out.empty() ? fs::path("runs") / plan.id : fs::path(o.out);
  std::vector<ArmResult> results;
  for (const auto& a : plan.arms) {
    RunConfig c = a.config;
    if (o.seed) c.seed = *o.seed;
    c.output_dir = (dir / a.name).string();
    std::optional<Experiment<double>> exp;
    try {
      exp.emplace(c);
    } catch (const DataError& e) {
      if (c.dataset.kind != "synth") {
        throw DataError(std::string(e.what()) +
                        "\nthis figure needs the CIFAR-10 binary release: download "
                        "cifar-10-binary.tar.gz from https://www.cs.toronto.edu/~kriz/cifar.html, "
                        "extract it and pass --data-dir <dir>/cifar-10-batches-bin");
      }
      throw;
    }
    err << plan.id << ": arm " << a.name << "\n";
    TrainOptions opts;
    opts.eval_threads = parallel::threads_from_env();
    ArmResult res{a.name, c.schedule, exp->run(opts)};
    fs::create_directories(dir);
    write_text(dir / (a.name + ".csv"), epoch_csv(res.logs, true));
    results.push_back(std::move(res));
  }
  const auto summary = summarize_repro(plan, results);
  write_text(dir / "summary.txt", summary.text);
  out << summary.text;
  return summary.pass() ? kOk : kFailure;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Adaptive batch size training engine"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub, bool need_config) {
    auto* opt = sub->add_option("--config", o.config, "run configuration (JSON)");
    if (need_config) opt->required();
    sub->add_option("--out", o.out, "output directory (overrides the config)");
    sub->add_option("--seed", o.seed, "seed (overrides the config)");
  };

  auto* train = app.add_subcommand("train", "train a configured network");
  add_common(train, true);
  train->add_flag("--deterministic-check", o.deterministic_check,
                  "train twice and compare logs, ignoring wall time");
  train->add_option("--resume", o.resume, "continue from a checkpoint");
  train->add_option("--checkpoint-every", o.checkpoint_every, "write epoch_<k>.ckpt every k epochs");

  auto* schedule = app.add_subcommand("schedule", "print the expanded schedule");
  add_common(schedule, true);
  schedule->add_option("--compare", o.compare, "second config for the effective-rate verdict");

  auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient check");
  add_common(grad, true);
  grad->add_option("--tol", o.tol, "relative error tolerance")->capture_default_str();
  grad->add_option("--batch", o.batch, "samples in the random batch")->capture_default_str();
  grad->add_flag("--corrupt-backward", o.corrupt_backward)->group("");

  auto* flops = app.add_subcommand("flops", "flop accounting per iteration and epoch");
  add_common(flops, true);

  auto* equiv = app.add_subcommand("equiv", "small-batch steps vs accumulated large-batch steps");
  add_common(equiv, true);
  equiv->add_option("--beta", o.beta, "batch multiplier")->capture_default_str();
  equiv->add_option("--steps", o.steps, "small-batch steps")->capture_default_str();
  equiv->add_option("--lr", o.lr, "small-batch learning rate (default: schedule.base_lr)");
  equiv->add_flag("--constructed", o.constructed, "identical micro-batches; asserts < 1e-10");

  auto* repro = app.add_subcommand("repro", "run a bundled desk-scale figure analog");
  repro->add_option("figure", o.figure, "fig1-desk | fig3-desk | fig7-desk | fig1-cifar")->required();
  repro->add_option("--out", o.out, "output directory");
  repro->add_option("--seed", o.seed, "seed override");
  repro->add_option("--data-dir", o.data_dir, "CIFAR-10 binary directory for fig1-cifar");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigInvalid;
  }

  try {
    if (*train) return cmd_train(o, out, err);
    if (*schedule) return cmd_schedule(o, out, err);
    if (*grad) return cmd_gradcheck(o, out, err);
    if (*flops) return cmd_flops(o, out, err);
    if (*equiv) return cmd_equiv(o, out, err);
    if (*repro) return cmd_repro(o, out, err);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigInvalid;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const FormatError& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kNumericError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}

}  // namespace adabatch::cli
