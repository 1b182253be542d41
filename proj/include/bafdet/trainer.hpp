#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "bafdet/checkpoint.hpp"
#include "bafdet/model.hpp"
#include "bafdet/synth.hpp"

namespace bafdet {

struct TrainConfig {
  double lr = 0.001;
  double momentum = 0.9;
  double weight_decay = 0.0001;
  std::vector<long> decay_steps = {800, 1500};  // divide lr by decay_factor here
  double decay_factor = 10.0;
  long max_iterations = 2000;
  std::uint64_t seed = 0;
  long log_interval = 50;
  long checkpoint_interval = 500;
  std::string checkpoint_dir;  // empty disables periodic checkpoints
};

/// Piecewise-constant schedule: lr / factor^(number of decay steps passed).
double lr_at(const TrainConfig& cfg, long iteration);

struct TrainSample {
  std::string id;  // image path stem, used as the evaluation image id
  Tensor image;
  std::vector<GroundTruth> gts;
};

struct Dataset {
  std::vector<TrainSample> samples;
  static Dataset load(const std::string& manifest_file);
};

struct TrainLogEntry {
  long iteration = 0;
  double lr = 0, loss = 0, rpn_cls = 0, rpn_reg = 0, roi_cls = 0, roi_reg = 0;
};

/// Momentum SGD over all detector parameters, one image per step.
/// Sample order is a per-epoch permutation derived statelessly from the seed,
/// so resuming from a checkpoint continues the exact same trajectory.
class Trainer {
 public:
  Trainer(BafDetector& model, TrainConfig cfg);

  /// Runs from the current iteration to cfg.max_iterations. Throws
  /// std::runtime_error with diagnostics if the loss becomes non-finite.
  std::vector<TrainLogEntry> run(const Dataset& data, std::ostream* log = nullptr);

  long iteration() const { return iteration_; }
  Checkpoint make_checkpoint() const;
  void restore(const Checkpoint& ckpt);

 private:
  std::size_t sample_index(std::size_t n, long iteration) const;

  BafDetector& model_;
  TrainConfig cfg_;
  long iteration_ = 0;
  std::vector<NamedParam> params_;
  std::vector<std::vector<double>> velocity_;
};

}  // namespace bafdet
