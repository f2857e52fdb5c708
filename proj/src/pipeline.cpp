#include "adabatch/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <ostream>

#include "adabatch/error.hpp"
#include "adabatch/loss.hpp"
#include "adabatch/parallel.hpp"

namespace adabatch {

BatchPlan partition_epoch(std::size_t n, std::size_t r, Rng& rng, std::size_t epoch) {
  if (n == 0) throw DataError("cannot partition an empty dataset");
  if (r == 0 || r > n) {
    throw ConfigError("batch size " + std::to_string(r) + " must be in [1, " + std::to_string(n) +
                      "]");
  }
  const auto perm = rng.permutation(n);
  BatchPlan plan;
  plan.epoch = epoch;
  for (std::size_t start = 0; start < n; start += r) {
    const std::size_t stop = std::min(n, start + r);
    plan.slices.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(start),
                             perm.begin() + static_cast<std::ptrdiff_t>(stop));
  }
  return plan;
}

template <class T>
BasicTensor<T> gather_batch(const Dataset& data, std::span<const std::size_t> indices) {
  if (indices.empty()) throw DataError("gather_batch: empty selection");
  const std::size_t d = data.features.cols();
  BasicTensor<T> x({d, indices.size()});
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const std::size_t row = indices[b];
    if (row >= data.size()) throw DataError("gather_batch: index out of range");
    for (std::size_t k = 0; k < d; ++k) x(k, b) = static_cast<T>(data.features(row, k));
  }
  return x;
}

std::vector<Label> gather_labels(const Dataset& data, std::span<const std::size_t> indices) {
  std::vector<Label> out(indices.size());
  for (std::size_t b = 0; b < indices.size(); ++b) out[b] = data.labels.at(indices[b]);
  return out;
}

// ---------------------------------------------------------------------------

Standardizer Standardizer::fit(const Dataset& train) {
  Standardizer s;
  s.shape = train.shape;
  const std::size_t c = train.shape.channels;
  const std::size_t plane = train.shape.height * train.shape.width;
  s.mean.assign(c, 0.0);
  s.stddev.assign(c, 0.0);
  const double count = static_cast<double>(train.size() * plane);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double sum = 0.0;
    for (std::size_t i = 0; i < train.size(); ++i)
      for (std::size_t p = 0; p < plane; ++p) sum += train.features(i, ch * plane + p);
    const double mu = sum / count;
    double sq = 0.0;
    for (std::size_t i = 0; i < train.size(); ++i)
      for (std::size_t p = 0; p < plane; ++p) {
        const double dv = train.features(i, ch * plane + p) - mu;
        sq += dv * dv;
      }
    const double sd = std::sqrt(sq / count);
    s.mean[ch] = mu;
    s.stddev[ch] = sd > 0.0 ? sd : 1.0;
  }
  return s;
}

void Standardizer::apply(Dataset& data) const {
  if (!(data.shape == shape)) throw DataError("standardizer fitted on a different sample shape");
  const std::size_t plane = shape.height * shape.width;
  for (std::size_t i = 0; i < data.size(); ++i)
    for (std::size_t ch = 0; ch < shape.channels; ++ch)
      for (std::size_t p = 0; p < plane; ++p) {
        double& v = data.features(i, ch * plane + p);
        v = (v - mean[ch]) / stddev[ch];
      }
}

// ---------------------------------------------------------------------------

template <class T>
StepRecord train_step(Network<T>& net, const Dataset& data, std::span<const std::size_t> slice,
                      double lr, std::size_t micro_batch_cap, SgdState<T>& opt) {
  if (slice.empty()) throw DataError("train_step: empty batch");
  if (micro_batch_cap == 0) throw ConfigError("micro_batch_cap must be >= 1");
  StepRecord rec;
  rec.samples = slice.size();
  net.zero_grads();
  for (std::size_t start = 0; start < slice.size(); start += micro_batch_cap) {
    const auto part = slice.subspan(start, std::min(micro_batch_cap, slice.size() - start));
    const auto x = gather_batch<T>(data, part);
    const auto y = gather_labels(data, part);
    const auto logits = net.forward(x);
    const auto loss = softmax_cross_entropy(logits, y);
    net.backward(loss.grad);
    rec.loss_sum += loss.sum;
    rec.micro_batches += 1;
    rec.forward_flops += net.forward_flops(part.size());
    rec.backward_flops += net.backward_flops(part.size());
  }
  const auto slots = net.param_slots();
  opt.step(slots, lr, slice.size());
  return rec;
}

bool EpochLog::same_except_wall(const EpochLog& o) const {
  return epoch == o.epoch && batch_size == o.batch_size && micro_batch == o.micro_batch &&
         lr == o.lr && effective_lr == o.effective_lr && train_loss == o.train_loss &&
         train_loss_eq9 == o.train_loss_eq9 && test_error == o.test_error &&
         fwd_flops == o.fwd_flops && bwd_flops == o.bwd_flops;
}

template <class T>
double test_error_percent(const Network<T>& net, const Dataset& data, std::size_t eval_batch) {
  if (data.size() == 0) throw DataError("evaluation set is empty");
  if (eval_batch == 0) throw ConfigError("eval_batch must be >= 1");
  std::vector<std::size_t> idx(data.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::size_t wrong = 0;
  for (std::size_t start = 0; start < idx.size(); start += eval_batch) {
    const auto part = std::span<const std::size_t>(idx).subspan(
        start, std::min(eval_batch, idx.size() - start));
    const auto logits = net.infer(gather_batch<T>(data, part));
    for (std::size_t b = 0; b < part.size(); ++b) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < logits.rows(); ++k)
        if (logits(k, b) > logits(best, b)) best = k;
      if (best != data.labels[part[b]]) ++wrong;
    }
  }
  return 100.0 * static_cast<double>(wrong) / static_cast<double>(data.size());
}

template <class T>
std::vector<EpochLog> run_training(Network<T>& net, const Dataset& train, const Dataset& test,
                                   const AdaBatchSchedule& schedule, SgdState<T>& opt, Rng& rng,
                                   const TrainOptions& options) {
  schedule.validate();
  if (schedule.total_epochs == 0) throw ConfigError("schedule.total_epochs must be >= 1");
  if (net.num_classes() != train.num_classes) {
    throw ConfigError("network has " + std::to_string(net.num_classes()) +
                      " outputs but the dataset has " + std::to_string(train.num_classes) +
                      " classes");
  }
  if (train.features.cols() != net.input_shape().features()) {
    throw ConfigError("network expects " + std::to_string(net.input_shape().features()) +
                      " input features, dataset has " + std::to_string(train.features.cols()));
  }
  const std::size_t n = train.size();
  std::vector<EpochLog> logs;
  for (std::size_t e = options.start_epoch; e < schedule.total_epochs; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t r = schedule.batch_size_at(e, n);
    const BatchPlan plan = partition_epoch(n, r, rng, e);
    const std::size_t iters = plan.size();
    EpochLossAccumulator acc;
    EpochLog log;
    log.epoch = e;
    log.batch_size = r;
    log.micro_batch = std::min(r, schedule.micro_batch_cap);
    log.lr = schedule.lr_at(e, 0, iters);
    log.effective_lr = effective_lr(log.lr, r);
    for (std::size_t t = 0; t < iters; ++t) {
      const double lr = schedule.lr_at(e, t, iters);
      parallel::ThreadScope serial(1);
      const auto rec = train_step(net, train, std::span<const std::size_t>(plan.slices[t]), lr,
                                  schedule.micro_batch_cap, opt);
      if (!std::isfinite(rec.loss_sum)) {
        throw NumericError("non-finite training loss at epoch " + std::to_string(e) +
                           ", iteration " + std::to_string(t));
      }
      acc.add_batch(rec.loss_sum, rec.samples);
      log.fwd_flops += rec.forward_flops;
      log.bwd_flops += rec.backward_flops;
    }
    log.train_loss = acc.dataset_mean();
    log.train_loss_eq9 = acc.mean_of_batch_means();
    {
      parallel::ThreadScope scope(options.eval_threads > 0 ? options.eval_threads
                                                           : parallel::num_threads());
      log.test_error = test_error_percent(net, test, options.eval_batch);
    }
    log.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    logs.push_back(log);
    if (options.on_epoch) options.on_epoch(log);
  }
  return logs;
}

template <class T>
EpochFlops epoch_flops(const Network<T>& net, std::size_t n, std::size_t r) {
  if (r == 0 || r > n) throw ConfigError("epoch_flops: batch size must be in [1, N]");
  const std::uint64_t q = n / r, rem = n % r;
  EpochFlops f;
  f.forward = q * net.forward_flops(r) + (rem ? net.forward_flops(rem) : 0);
  f.backward = q * net.backward_flops(r) + (rem ? net.backward_flops(rem) : 0);
  return f;
}

// ---------------------------------------------------------------------------

namespace {

template <class T>
EquivalenceRow distance(Network<T>& a, Network<T>& b, std::size_t step) {
  EquivalenceRow row;
  row.step = step;
  auto pa = a.params();
  auto pb = b.params();
  double diff2 = 0.0, ref2 = 0.0;
  for (std::size_t k = 0; k < pa.size(); ++k) {
    const auto va = pa[k].tensor->data();
    const auto vb = pb[k].tensor->data();
    for (std::size_t i = 0; i < va.size(); ++i) {
      const double d = static_cast<double>(va[i]) - static_cast<double>(vb[i]);
      row.max_abs = std::max(row.max_abs, std::abs(d));
      diff2 += d * d;
      ref2 += static_cast<double>(vb[i]) * static_cast<double>(vb[i]);
    }
  }
  row.rel = ref2 > 0.0 ? std::sqrt(diff2 / ref2) : std::sqrt(diff2);
  return row;
}

template <class T>
void accumulate(Network<T>& net, const Dataset& data, std::span<const std::size_t> part) {
  const auto logits = net.forward(gather_batch<T>(data, part));
  const auto loss = softmax_cross_entropy(logits, gather_labels(data, part));
  if (!std::isfinite(loss.sum)) throw NumericError("non-finite loss in equivalence experiment");
  net.backward(loss.grad);
}

}  // namespace

template <class T>
std::vector<EquivalenceRow> equivalence_experiment(const Network<T>& initial, const Dataset& data,
                                                   const EquivalenceOptions& o) {
  if (o.batch == 0 || o.beta == 0 || o.steps == 0) {
    throw ConfigError("equivalence: batch, beta and steps must be >= 1");
  }
  if (o.steps % o.beta != 0) {
    throw ConfigError("equivalence: beta = " + std::to_string(o.beta) +
                      " does not divide steps = " + std::to_string(o.steps));
  }
  if (o.constructed && o.optimizer.weight_decay != 0.0) {
    // Decay enters the two paths as alpha*lambda*W and beta*alpha*lambda*W.
    throw ConfigError("equivalence: constructed mode requires optimizer.weight_decay = 0");
  }
  if (o.beta * o.batch > data.size()) {
    throw ConfigError("equivalence: beta * r exceeds the dataset size");
  }
  const std::size_t groups = o.steps / o.beta;
  const std::size_t r = o.batch, big = o.beta * o.batch;

  // Sample order shared by both paths: back-to-back seeded permutations.
  Rng rng(o.seed);
  const std::size_t needed = o.constructed ? groups * r : o.steps * r;
  std::vector<std::size_t> stream;
  while (stream.size() < needed) {
    const auto perm = rng.permutation(data.size());
    stream.insert(stream.end(), perm.begin(), perm.end());
  }
  stream.resize(needed);
  const std::span<const std::size_t> all(stream);

  Network<T> a = initial, b = initial;
  SgdState<T> opt_a(o.optimizer), opt_b(o.optimizer);
  std::vector<EquivalenceRow> rows;

  for (std::size_t j = 0; j < groups; ++j) {
    if (o.constructed) {
      const auto group = all.subspan(j * r, r);
      // Path A: beta identical micro-batches at the group's starting
      // weights, one step at rate alpha and batch r.
      a.zero_grads();
      for (std::size_t k = 0; k < o.beta; ++k) accumulate(a, data, group);
      opt_a.step(a.param_slots(), o.lr, r);
      // Path B: one batch of beta concatenated copies at rate beta alpha.
      std::vector<std::size_t> copies;
      for (std::size_t k = 0; k < o.beta; ++k) copies.insert(copies.end(), group.begin(), group.end());
      b.zero_grads();
      accumulate(b, data, std::span<const std::size_t>(copies));
      opt_b.step(b.param_slots(), static_cast<double>(o.beta) * o.lr, big);
    } else {
      for (std::size_t k = 0; k < o.beta; ++k) {
        const auto part = all.subspan((j * o.beta + k) * r, r);
        a.zero_grads();
        accumulate(a, data, part);
        opt_a.step(a.param_slots(), o.lr, r);
      }
      b.zero_grads();
      accumulate(b, data, all.subspan(j * big, big));
      opt_b.step(b.param_slots(), static_cast<double>(o.beta) * o.lr, big);
    }
    rows.push_back(distance(a, b, j + 1));
  }
  return rows;
}

// ---------------------------------------------------------------------------

namespace {

double summed_loss(Network<double>& net, const Tensor& x, std::span<const Label> labels) {
  return softmax_cross_entropy(net.forward(x), labels).sum;
}

GradcheckEntry compare(std::string name, std::span<const double> analytic,
                       std::span<const double> numeric, double tol, double floor) {
  GradcheckEntry e;
  e.name = std::move(name);
  double scale = floor;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    e.max_abs_error = std::max(e.max_abs_error, std::abs(analytic[i] - numeric[i]));
    scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
  }
  e.max_rel_error = e.max_abs_error / scale;
  e.pass = e.max_rel_error < tol;
  return e;
}

}  // namespace

GradcheckReport gradcheck(Network<double>& net, const Tensor& x, std::span<const Label> labels,
                          double tol, double h) {
  if (!(h > 0.0)) throw ConfigError("gradcheck: step h must be > 0");
  if (!(tol >= 0.0)) throw ConfigError("gradcheck: tol must be >= 0");
  if (x.rank() != 2 || x.cols() != labels.size()) {
    throw DimensionError("gradcheck: input " + shape_string(x.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  GradcheckReport report;
  report.tol = tol;

  net.zero_grads();
  const auto loss = softmax_cross_entropy(net.forward(x), labels);
  const Tensor input_grad = net.backward(loss.grad);
  const std::vector<Tensor> analytic = net.grads();

  // A tensor whose true gradient vanishes (a bias feeding batch norm) has
  // only rounding noise on both sides; measure it against a small fraction
  // of the largest gradient in the network instead of against itself.
  double largest = 0.0;
  for (const auto& g : analytic)
    for (double v : g.data()) largest = std::max(largest, std::abs(v));
  for (double v : input_grad.data()) largest = std::max(largest, std::abs(v));
  const double floor = std::max(1e-12, 1e-3 * largest);

  auto params = net.params();
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto values = params[k].tensor->data();
    std::vector<double> numeric(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = summed_loss(net, x, labels);
      values[i] = saved - h;
      const double down = summed_loss(net, x, labels);
      values[i] = saved;
      numeric[i] = (up - down) / (2.0 * h);
    }
    report.tensors.push_back(compare(params[k].name, analytic[k].data(), numeric, tol, floor));
  }

  Tensor xp = x;
  auto xv = xp.data();
  std::vector<double> numeric(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double saved = xv[i];
    xv[i] = saved + h;
    const double up = summed_loss(net, xp, labels);
    xv[i] = saved - h;
    const double down = summed_loss(net, xp, labels);
    xv[i] = saved;
    numeric[i] = (up - down) / (2.0 * h);
  }
  report.tensors.push_back(compare("input", input_grad.data(), numeric, tol, floor));

  report.pass = std::all_of(report.tensors.begin(), report.tensors.end(),
                            [](const GradcheckEntry& e) { return e.pass; });
  return report;
}

// ---------------------------------------------------------------------------

std::string format_real(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void write_epoch_csv(std::ostream& out, const std::vector<EpochLog>& logs, bool include_wall) {
  std::string header = kEpochCsvHeader;
  if (!include_wall) header.resize(header.rfind(','));
  out << header << '\n';
  for (const auto& l : logs) {
    out << l.epoch << ',' << l.batch_size << ',' << l.micro_batch << ',' << format_real(l.lr)
        << ',' << format_real(l.effective_lr) << ',' << format_real(l.train_loss) << ','
        << format_real(l.train_loss_eq9) << ',' << format_real(l.test_error) << ','
        << l.fwd_flops << ',' << l.bwd_flops;
    if (include_wall) out << ',' << format_real(l.wall_seconds);
    out << '\n';
  }
}

void write_schedule_csv(std::ostream& out, const std::vector<ScheduleRow>& rows) {
  out << "epoch,batch_size,lr,effective_lr,warmup_active,micro_batches_per_step,iterations\n";
  for (const auto& r : rows) {
    out << r.epoch << ',' << r.batch_size << ',' << format_real(r.lr) << ','
        << format_real(r.effective_lr) << ',' << (r.warmup_active ? 1 : 0) << ','
        << r.micro_batches_per_step << ',' << r.iterations << '\n';
  }
}

void write_equivalence_csv(std::ostream& out, const std::vector<EquivalenceRow>& rows) {
  out << "step,max_abs_dist,rel_dist\n";
  for (const auto& r : rows)
    out << r.step << ',' << format_real(r.max_abs) << ',' << format_real(r.rel) << '\n';
}

#define ADABATCH_INSTANTIATE(T)                                                                  \
  template BasicTensor<T> gather_batch<T>(const Dataset&, std::span<const std::size_t>);          \
  template StepRecord train_step<T>(Network<T>&, const Dataset&, std::span<const std::size_t>,    \
                                    double, std::size_t, SgdState<T>&);                           \
  template double test_error_percent<T>(const Network<T>&, const Dataset&, std::size_t);          \
  template std::vector<EpochLog> run_training<T>(Network<T>&, const Dataset&, const Dataset&,     \
                                                 const AdaBatchSchedule&, SgdState<T>&, Rng&,     \
                                                 const TrainOptions&);                            \
  template EpochFlops epoch_flops<T>(const Network<T>&, std::size_t, std::size_t);                \
  template std::vector<EquivalenceRow> equivalence_experiment<T>(const Network<T>&,               \
                                                                 const Dataset&,                  \
                                                                 const EquivalenceOptions&);

ADABATCH_INSTANTIATE(float)
ADABATCH_INSTANTIATE(double)
#undef ADABATCH_INSTANTIATE

}  // namespace adabatch
