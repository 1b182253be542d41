#include "bafdet/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "bafdet/image_io.hpp"
#include "bafdet/voc.hpp"

namespace bafdet {

double lr_at(const TrainConfig& cfg, long iteration) {
  double lr = cfg.lr;
  for (long step : cfg.decay_steps)
    if (iteration >= step) lr /= cfg.decay_factor;
  return lr;
}

Dataset Dataset::load(const std::string& manifest_file) {
  const DatasetManifest manifest = read_manifest(manifest_file);
  Dataset out;
  out.samples.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) {
    TrainSample s;
    s.id = std::filesystem::path(e.image_path).stem().string();
    s.image = image_to_tensor(read_pgm(e.image_path));
    s.gts = read_voc_file(e.xml_path).ground_truth();
    out.samples.push_back(std::move(s));
  }
  if (out.samples.empty())
    throw std::runtime_error("dataset is empty: " + manifest_file);
  return out;
}

Trainer::Trainer(BafDetector& model, TrainConfig cfg)
    : model_(model), cfg_(std::move(cfg)) {
  params_ = model_.parameters();
  velocity_.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i)
    velocity_[i].assign(params_[i].tensor.data().size(), 0.0);
}

std::size_t Trainer::sample_index(std::size_t n, long iteration) const {
  const long epoch = iteration / static_cast<long>(n);
  const std::size_t pos = static_cast<std::size_t>(iteration % static_cast<long>(n));
  // Fisher-Yates permutation of this epoch, derived only from (seed, epoch)
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(mix_seed(cfg_.seed, 0xe90cULL ^ static_cast<std::uint64_t>(epoch)));
  for (std::size_t i = n - 1; i > 0; --i) {
    const std::size_t j =
        static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i)));
    std::swap(perm[i], perm[j]);
  }
  return perm[pos];
}

std::vector<TrainLogEntry> Trainer::run(const Dataset& data, std::ostream* log) {
  std::vector<TrainLogEntry> entries;
  const std::size_t n = data.samples.size();
  while (iteration_ < cfg_.max_iterations) {
    const TrainSample& sample = data.samples[sample_index(n, iteration_)];
    for (auto& p : params_) p.tensor.zero_grad();

    const std::uint64_t step_seed =
        mix_seed(cfg_.seed, 0x57e9ULL ^ static_cast<std::uint64_t>(iteration_));
    const TrainStepLosses losses =
        model_.training_loss(sample.image, sample.gts, step_seed);
    const double loss_value = losses.total.data()[0];
    if (!std::isfinite(loss_value)) {
      std::ostringstream diag;
      diag << "training diverged at iteration " << iteration_ << " on sample '"
           << sample.id << "': loss=" << loss_value << " (rpn_cls=" << losses.rpn_cls
           << " rpn_reg=" << losses.rpn_reg << " roi_cls=" << losses.roi_cls
           << " roi_reg=" << losses.roi_reg << ")";
      throw std::runtime_error(diag.str());
    }
    backward(losses.total);

    const double lr = lr_at(cfg_, iteration_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& w = params_[i].tensor.data();
      const auto& g = params_[i].tensor.grad();
      auto& v = velocity_[i];
      for (std::size_t k = 0; k < w.size(); ++k) {
        v[k] = cfg_.momentum * v[k] + g[k] + cfg_.weight_decay * w[k];
        w[k] -= lr * v[k];
      }
    }
    ++iteration_;

    if (iteration_ % cfg_.log_interval == 0 || iteration_ == cfg_.max_iterations) {
      TrainLogEntry e;
      e.iteration = iteration_;
      e.lr = lr;
      e.loss = loss_value;
      e.rpn_cls = losses.rpn_cls;
      e.rpn_reg = losses.rpn_reg;
      e.roi_cls = losses.roi_cls;
      e.roi_reg = losses.roi_reg;
      entries.push_back(e);
      if (log)
        *log << "iter " << std::setw(5) << e.iteration << "  lr " << std::setprecision(6)
             << e.lr << "  loss " << std::setprecision(5) << e.loss << "  (rpn "
             << e.rpn_cls << " + " << e.rpn_reg << ", roi " << e.roi_cls << " + "
             << e.roi_reg << ")\n"
             << std::flush;
    }
    if (!cfg_.checkpoint_dir.empty() &&
        (iteration_ % cfg_.checkpoint_interval == 0 ||
         iteration_ == cfg_.max_iterations)) {
      std::filesystem::create_directories(cfg_.checkpoint_dir);
      save_checkpoint(cfg_.checkpoint_dir + "/ckpt_" + std::to_string(iteration_) +
                          ".bin",
                      make_checkpoint());
    }
  }
  return entries;
}

Checkpoint Trainer::make_checkpoint() const {
  Checkpoint ckpt;
  ckpt.meta["iteration"] = std::to_string(iteration_);
  ckpt.meta["seed"] = std::to_string(cfg_.seed);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& p = params_[i];
    ckpt.tensors.emplace(p.name, Tensor(p.tensor.shape(), p.tensor.data()));
    ckpt.tensors.emplace("opt/" + p.name, Tensor(p.tensor.shape(), velocity_[i]));
  }
  return ckpt;
}

void Trainer::restore(const Checkpoint& ckpt) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    const auto it = ckpt.tensors.find(p.name);
    if (it == ckpt.tensors.end())
      throw std::runtime_error("checkpoint missing parameter " + p.name);
    if (it->second.shape() != p.tensor.shape())
      throw std::runtime_error("checkpoint shape mismatch for " + p.name);
    p.tensor.data() = it->second.data();
    const auto vit = ckpt.tensors.find("opt/" + p.name);
    velocity_[i] = vit != ckpt.tensors.end()
                       ? vit->second.data()
                       : std::vector<double>(p.tensor.data().size(), 0.0);
  }
  iteration_ = ckpt.meta_long("iteration", 0);
}

}  // namespace bafdet
