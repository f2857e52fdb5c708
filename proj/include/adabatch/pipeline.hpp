#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "adabatch/ingest.hpp"
#include "adabatch/network.hpp"
#include "adabatch/optim.hpp"
#include "adabatch/rng.hpp"
#include "adabatch/schedule.hpp"

namespace adabatch {

// One epoch's shuffled partition: ceil(N / r) slices, all of size r except
// possibly a truncated last one.
struct BatchPlan {
  std::size_t epoch = 0;
  std::vector<std::vector<std::size_t>> slices;

  std::size_t size() const { return slices.size(); }
};

BatchPlan partition_epoch(std::size_t n, std::size_t r, Rng& rng, std::size_t epoch = 0);

// Features of the selected rows as a D x r batch (one sample per column).
template <class T>
BasicTensor<T> gather_batch(const Dataset& data, std::span<const std::size_t> indices);
std::vector<Label> gather_labels(const Dataset& data, std::span<const std::size_t> indices);

// Per-channel standardization fitted on one split and applied to others.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> stddev;
  SampleShape shape;

  static Standardizer fit(const Dataset& train);
  void apply(Dataset& data) const;
};

struct StepRecord {
  double loss_sum = 0.0;
  std::size_t samples = 0;
  std::size_t micro_batches = 0;
  std::uint64_t forward_flops = 0;
  std::uint64_t backward_flops = 0;
};

// Forward/backward over ceil(|slice| / cap) micro-batches at fixed weights,
// summing raw gradients, then exactly one optimizer step with r = |slice|.
// The result is independent of the cap for batch-column-independent
// networks (FC, conv). BN layers normalize over each micro-batch instead.
template <class T>
StepRecord train_step(Network<T>& net, const Dataset& data, std::span<const std::size_t> slice,
                      double lr, std::size_t micro_batch_cap, SgdState<T>& opt);

struct EpochLog {
  std::size_t epoch = 0;
  std::size_t batch_size = 0;
  std::size_t micro_batch = 0;
  double lr = 0.0;  // first iteration of the epoch
  double effective_lr = 0.0;
  double train_loss = 0.0;      // mean over samples
  double train_loss_eq9 = 0.0;  // mean of per-batch means
  double test_error = 0.0;      // percent
  std::uint64_t fwd_flops = 0;
  std::uint64_t bwd_flops = 0;
  double wall_seconds = 0.0;

  bool same_except_wall(const EpochLog& o) const;
};

struct TrainOptions {
  std::size_t eval_batch = 256;
  int eval_threads = 1;
  std::size_t start_epoch = 0;
  // Called after every epoch, e.g. to checkpoint.
  std::function<void(const EpochLog&)> on_epoch;
};

template <class T>
double test_error_percent(const Network<T>& net, const Dataset& data, std::size_t eval_batch);

// Throws NumericError on a non-finite loss, naming epoch and iteration.
template <class T>
std::vector<EpochLog> run_training(Network<T>& net, const Dataset& train, const Dataset& test,
                                   const AdaBatchSchedule& schedule, SgdState<T>& opt, Rng& rng,
                                   const TrainOptions& options = {});

struct EpochFlops {
  std::uint64_t forward = 0;
  std::uint64_t backward = 0;
  bool operator==(const EpochFlops&) const = default;
};

// Sum over one epoch's batches, the truncated batch counted at its size.
template <class T>
EpochFlops epoch_flops(const Network<T>& net, std::size_t n, std::size_t r);

struct EquivalenceOptions {
  std::size_t batch = 1;
  std::size_t beta = 1;
  double lr = 0.01;
  std::size_t steps = 1;  // small-batch steps; beta must divide it
  bool constructed = false;
  std::uint64_t seed = 0;
  SgdConfig optimizer;
};

struct EquivalenceRow {
  std::size_t step = 0;  // big-batch step count so far
  double max_abs = 0.0;
  double rel = 0.0;
};

// General mode: path A takes `steps` updates at batch r and rate alpha, path
// B takes steps / beta updates at batch beta r and rate beta alpha over the
// same sample order; rows report the parameter distance after every B step.
// Constructed mode: each group uses beta identical micro-batches, evaluated
// at the group's starting weights (rate alpha) versus one step on their
// concatenation (rate beta alpha); the distance is rounding only. Requires
// weight_decay = 0.
template <class T>
std::vector<EquivalenceRow> equivalence_experiment(const Network<T>& initial, const Dataset& data,
                                                   const EquivalenceOptions& options);

struct GradcheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  bool pass = false;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> tensors;
  double tol = 0.0;
  bool pass = false;
};

// Central differences of the batch-summed cross-entropy against backward,
// for every parameter tensor and the input. Per-tensor error is normwise:
// max|analytic - numeric| / max(max|analytic|, max|numeric|, 1e-3 G), G the
// largest analytic gradient entry in the network. Passes iff every tensor is
// below tol.
GradcheckReport gradcheck(Network<double>& net, const Tensor& x, std::span<const Label> labels,
                          double tol, double h = 1e-5);

// Shortest round-trip decimal.
std::string format_real(double v);

void write_epoch_csv(std::ostream& out, const std::vector<EpochLog>& logs,
                     bool include_wall = true);
void write_schedule_csv(std::ostream& out, const std::vector<ScheduleRow>& rows);
void write_equivalence_csv(std::ostream& out, const std::vector<EquivalenceRow>& rows);

inline constexpr const char* kEpochCsvHeader =
    "epoch,batch_size,micro_batch,lr,effective_lr,train_loss,train_loss_eq9,test_error,"
    "fwd_flops,bwd_flops,wall_seconds";

}  // namespace adabatch
