#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hnas/controller.hpp"
#include "hnas/cost.hpp"
#include "hnas/network.hpp"

namespace hnas {

// Images in [0, 1], stored [n x c x h x w], plus a fixed train/validation split.
struct Dataset {
  std::size_t channels = 1;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t num_classes = 0;
  std::vector<double> images;
  std::vector<std::size_t> labels;
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::string provenance;

  std::size_t size() const { return labels.size(); }
  std::size_t image_size() const { return channels * height * width; }
  // Images of `indices` as [b x channels x resolution x resolution]:
  // nearest-neighbour resampling, gray replicated or colour averaged.
  Tensor batch(const std::vector<std::size_t>& indices, std::size_t channels, std::size_t resolution) const;
};

// Deterministic shuffled split; at least one sample lands on each side when
// the dataset has two or more.
void split_dataset(Dataset& data, std::uint64_t seed, double validation_fraction);

enum class DatasetFormat {
  idx,                // big-endian IDX: ubyte images (n,h,w) or (n,h,w,c) and ubyte labels
  labeled_directory,  // <root>/<class>/<file>.pgm|.ppm, classes in sorted name order
};

struct LoadOptions {
  std::uint64_t seed = 0;
  double validation_fraction = 0.2;
  std::string labels_path;                 // idx only; default swaps "images" for "labels" in the path
  std::optional<std::size_t> num_classes;  // labels at or above this are rejected
};

Dataset load_dataset(const std::string& path, DatasetFormat format, const LoadOptions& options = {});
DatasetFormat parse_dataset_format(std::string_view name);

// Gray images whose class is (layout + texture) mod classes: the layout is
// the orientation of a bright blob pair at a random position, the texture is
// the orientation of a faint stripe pattern with random phase. Neither cue is
// linearly readable from raw pixels.
Dataset synth_task(std::uint64_t seed, std::size_t n_samples, std::size_t grid, std::size_t num_classes,
                   double validation_fraction = 0.25);

struct ProxyConfig {
  std::size_t epochs = 5;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double weight_decay = 0.05;
  std::uint64_t seed = 0;
  std::size_t resolution = 32;
  bool track_train_loss = false;
  NetworkOptions network;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // mean mini-batch loss over the epoch
  // Inference-mode loss over the training split once the epoch ends; only
  // filled when ProxyConfig::track_train_loss is set.
  std::optional<double> end_train_loss;
  double validation_accuracy = 0.0;
};

struct ProxyResult {
  double accuracy = 0.0;
  bool failed = false;
  std::string failure;
  double initial_loss = 0.0;  // training-set loss of the untrained network
  std::vector<EpochMetrics> epochs;
};

// AdamW with a cosine-decayed learning rate and cross-entropy loss. A
// non-finite loss ends training with `failed` set instead of throwing.
ProxyResult train_proxy(const NetworkPlan& plan, const Dataset& data, const ProxyConfig& config);

double evaluate_accuracy(Network& net, const Dataset& data, const std::vector<std::size_t>& indices,
                         std::size_t resolution);
double evaluate_loss(Network& net, const Dataset& data, const std::vector<std::size_t>& indices,
                     std::size_t resolution);

// Search-time evaluator: accuracy from proxy training on the desk-scale
// skeleton, MACs of the same genome on the full-size skeleton.
struct ProxyEvaluator {
  Dataset data;
  ProxyConfig proxy;
  BaseSkeleton proxy_skeleton = BaseSkeleton::proxy();
  BaseSkeleton cost_skeleton = BaseSkeleton::reference();
  CostOptions cost;

  Evaluation operator()(const Genome& genome, std::uint64_t seed) const;
};

}  // namespace hnas
